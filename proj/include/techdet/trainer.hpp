#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "techdet/dataset_synth.hpp"
#include "techdet/fcn_model.hpp"

namespace techdet {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  // Mean per-segment frame accuracy on the validation set; absent without one.
  std::optional<double> val_accuracy;

  bool operator==(const EpochStats&) const = default;
};

struct TrainOptions {
  unsigned threads = 1;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  FcnParameters params;  // from the best epoch
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;

  void apply(std::vector<double>& values, std::span<const double> gradient,
             double learning_rate);
};

// Unnormalized log-mel features with their frame labels.
struct RawExample {
  MelSpectrogram features;
  FrameLabelSeq labels;
};

// Loads every segment of a dataset manifest as a 128 x 200 spectrogram.
std::vector<RawExample> load_examples(const DatasetManifest& manifest,
                                      const MelFilterbank& filterbank);

// Normalization stats come from `train_set`. The validation set picks the
// returned epoch (highest accuracy, earliest on ties); without one the
// lowest training loss wins. Throws NumericalError on a non-finite loss.
TrainResult train(const FcnConfig& config, const TechniqueVocabulary& vocabulary,
                  std::span<const RawExample> train_set,
                  std::span<const RawExample> val_set,
                  const TrainOptions& options = {});

// Manifest-level entry point; `validation` may be null.
TrainResult train(const FcnConfig& config, const DatasetManifest& training,
                  const DatasetManifest* validation,
                  const TrainOptions& options = {});

// Mean per-segment frame accuracy of argmax predictions.
double mean_frame_accuracy(const FcnParameters& params,
                           std::span<const Example> examples);

}  // namespace techdet
