#include "techdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "techdet/detector.hpp"
#include "techdet/error.hpp"
#include "techdet/evaluator.hpp"

namespace techdet {
namespace {

std::vector<Example> normalized(std::span<const RawExample> raw,
                                const NormalizationStats& stats) {
  std::vector<Example> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back({normalize(r.features, stats), r.labels});
  return out;
}

// Shuffling draws from its own stream so that changing the init scheme
// never perturbs batch order.
std::mt19937_64 shuffle_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), 0x5EEDu};
  return std::mt19937_64(seq);
}

}  // namespace

void AdamState::apply(std::vector<double>& values, std::span<const double> gradient,
                      double learning_rate) {
  if (gradient.size() != values.size())
    throw InputError("gradient size does not match parameter count");
  if (m.empty()) {
    m.assign(values.size(), 0.0);
    v.assign(values.size(), 0.0);
  }
  ++step;
  const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = gradient[i];
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + kEpsilon);
  }
}

std::vector<RawExample> load_examples(const DatasetManifest& manifest,
                                      const MelFilterbank& filterbank) {
  std::vector<RawExample> examples;
  examples.reserve(manifest.segments.size());
  for (const auto& segment : manifest.segments) {
    const AudioClip clip = read_wav(manifest.resolve(segment.audio));
    if (clip.size() != kSegmentSamples)
      throw InputError(segment.audio + ": training segments must last 10 s");
    FrameLabelSeq labels = read_frame_labels(manifest.resolve(segment.labels));
    if (labels.size() != kSegmentFrames)
      throw InputError(segment.labels + ": expected 200 frame labels");
    examples.push_back({mel_spectrogram(clip, filterbank), std::move(labels)});
  }
  return examples;
}

double mean_frame_accuracy(const FcnParameters& params,
                           std::span<const Example> examples) {
  if (examples.empty()) throw InputError("accuracy over zero examples");
  double sum = 0.0;
  for (const auto& e : examples)
    sum += frame_accuracy(argmax_labels(forward(params, e.features)), e.labels);
  return sum / static_cast<double>(examples.size());
}

TrainResult train(const FcnConfig& config, const TechniqueVocabulary& vocabulary,
                  std::span<const RawExample> train_set,
                  std::span<const RawExample> val_set, const TrainOptions& options) {
  config.validate();
  if (vocabulary.size() != config.n_classes)
    throw ConfigError("config has n_classes = " + std::to_string(config.n_classes) +
                      " but the vocabulary has " + std::to_string(vocabulary.size()) +
                      " labels");
  if (train_set.empty()) throw InputError("training set is empty");

  std::vector<MelSpectrogram> features;
  features.reserve(train_set.size());
  for (const auto& r : train_set) features.push_back(r.features);
  const NormalizationStats stats = compute_normalization_stats(features);
  features.clear();
  const std::vector<Example> train_examples = normalized(train_set, stats);
  const std::vector<Example> val_examples = normalized(val_set, stats);

  FcnParameters params = init_params(config, config.seed);
  params.vocabulary = vocabulary;
  params.stats = stats;

  TrainResult result;
  result.params = params;
  AdamState adam;
  auto rng = shuffle_rng(config.seed);
  std::vector<std::size_t> order(train_examples.size());
  double best_score = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const Example*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_examples[order[i]]);
      const GradientResult g = gradients(params, batch, options.threads);
      if (!std::isfinite(g.loss))
        throw NumericalError("non-finite training loss at epoch " +
                             std::to_string(epoch) + ", batch starting at " +
                             std::to_string(begin) +
                             "; try a lower learning rate");
      loss_sum += g.loss * static_cast<double>(batch.size());
      adam.apply(params.values, g.gradient, config.learning_rate);
    }
    EpochStats stats_row{epoch, loss_sum / static_cast<double>(order.size()),
                         std::nullopt};
    double score = -stats_row.train_loss;
    if (!val_examples.empty()) {
      stats_row.val_accuracy = mean_frame_accuracy(params, val_examples);
      score = *stats_row.val_accuracy;
    }
    result.history.push_back(stats_row);
    if (options.on_epoch) options.on_epoch(stats_row);
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

TrainResult train(const FcnConfig& config, const DatasetManifest& training,
                  const DatasetManifest* validation, const TrainOptions& options) {
  if (validation != nullptr && !(validation->vocabulary == training.vocabulary))
    throw InputError("training and validation vocabularies differ");
  const auto& fb = default_filterbank();
  const auto train_set = load_examples(training, fb);
  const auto val_set =
      validation != nullptr ? load_examples(*validation, fb) : std::vector<RawExample>{};
  return train(config, training.vocabulary, train_set, val_set, options);
}

}  // namespace techdet
