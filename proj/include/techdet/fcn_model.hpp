#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "techdet/annotation.hpp"
#include "techdet/features.hpp"

namespace techdet {

// Reference frame classifier:
//   1 x mels x frames
//   3 x [conv3x3 pad 1 -> ReLU -> maxpool 2x2]
//   conv3x3 pad 1 -> ReLU -> max over the remaining mel rows
//   transposed conv along time (kernel, stride) back to `n_frames`
//   1x1 conv to n_classes -> softmax per frame
struct FcnConfig {
  std::size_t n_classes = 4;
  std::array<std::size_t, 4> widths{16, 32, 64, 64};
  std::size_t n_mels = kNumMels;
  std::size_t n_frames = 200;
  std::size_t upsample_kernel = 8;
  std::size_t upsample_stride = 8;
  double learning_rate = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  // Throws ConfigError, including when the upsampler does not map
  // n_frames / 8 pooled steps back to exactly n_frames.
  void validate() const;

  std::size_t pooled_mels() const { return n_mels / 8; }
  std::size_t pooled_frames() const { return n_frames / 8; }
  std::size_t upsampled_frames() const {
    return (pooled_frames() - 1) * upsample_stride + upsample_kernel;
  }

  nlohmann::json to_json() const;
  static FcnConfig from_json(const nlohmann::json& j);

  bool operator==(const FcnConfig&) const = default;
};

// Final-upsampler (kernel, stride) pairs published for the 4-, 7- and
// 11-class experiments. None of them reaches 200 frames from 25 pooled steps
// with this stack, so validate() rejects them; they are kept for
// experiments that change the pooling.
std::optional<std::pair<std::size_t, std::size_t>> published_upsampler(
    std::size_t n_classes);

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 0;  // 0 for biases
  bool is_bias() const { return fan_in == 0; }
};

// Tensors in serialization order: conv{1..4}.{weight,bias},
// upsample.{weight,bias}, head.{weight,bias}. Conv weights are
// [out][in][3][3], the upsampler is [in][out][kernel], the head [k][in].
std::vector<TensorSpec> parameter_layout(const FcnConfig& config);

struct FcnParameters {
  FcnConfig config;
  TechniqueVocabulary vocabulary;  // may be empty for bare models
  NormalizationStats stats;        // empty until training computes them
  std::vector<double> values;      // flat, in parameter_layout order

  std::span<double> tensor(const TensorSpec& spec) {
    return std::span<double>(values).subspan(spec.offset, spec.size);
  }
  std::span<const double> tensor(const TensorSpec& spec) const {
    return std::span<const double>(values).subspan(spec.offset, spec.size);
  }
  bool operator==(const FcnParameters&) const = default;
};

// Weights uniform in [-sqrt(6 / fan_in), sqrt(6 / fan_in)), biases zero.
FcnParameters init_params(const FcnConfig& config, std::uint64_t seed);

struct FramePrediction {
  Matrix probs;  // k x n_frames, columns sum to 1

  std::size_t n_classes() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t n_frames() const { return static_cast<std::size_t>(probs.cols()); }
};

// `input` must already be normalized and shaped n_mels x n_frames.
FramePrediction forward(const FcnParameters& params, const MelSpectrogram& input);

// Mean over frames of -log(max(p_true, 1e-12)).
double loss(const FramePrediction& pred, std::span<const int> labels);

struct Example {
  MelSpectrogram features;  // normalized
  FrameLabelSeq labels;
};

struct GradientResult {
  std::vector<double> gradient;  // same layout as FcnParameters::values
  double loss = 0.0;             // mean batch loss
};

// Exact gradient of the mean batch loss. Per-example gradients run on up to
// `threads` workers and are reduced in batch order, so the result does not
// depend on the thread count.
GradientResult gradients(const FcnParameters& params,
                         std::span<const Example* const> batch,
                         unsigned threads = 1);
GradientResult gradients(const FcnParameters& params,
                         std::span<const Example> batch, unsigned threads = 1);

}  // namespace techdet
