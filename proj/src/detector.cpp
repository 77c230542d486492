#include "techdet/detector.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "techdet/dataset_synth.hpp"
#include "techdet/error.hpp"

namespace techdet {

WindowPlan plan_windows_for_frames(std::size_t total_frames,
                                   std::size_t window_frames,
                                   std::size_t hop_frames) {
  if (total_frames == 0) throw InputError("cannot plan windows over zero frames");
  if (window_frames == 0 || hop_frames == 0)
    throw InputError("window and hop must be positive");
  WindowPlan plan;
  plan.window_frames = window_frames;
  plan.total_frames = total_frames;
  plan.window_len = window_frames * kFrameSeconds;
  plan.hop = hop_frames * kFrameSeconds;
  std::size_t start = 0;
  plan.start_frames.push_back(0);
  while (start + hop_frames + window_frames <= total_frames) {
    start += hop_frames;
    plan.start_frames.push_back(start);
  }
  if (start + window_frames < total_frames)
    plan.start_frames.push_back(total_frames - window_frames);
  for (const auto f : plan.start_frames) plan.starts.push_back(f * kFrameSeconds);
  return plan;
}

WindowPlan plan_windows(double duration, double window, double hop) {
  if (!(duration > 0.0) || !std::isfinite(duration))
    throw InputError("duration must be positive");
  const auto frames = [](double seconds) {
    return static_cast<std::size_t>(std::llround(seconds / kFrameSeconds));
  };
  // ceil on the frame grid, tolerant of decimal round-off (23.0 / 0.05).
  const auto total = static_cast<std::size_t>(
      std::ceil(duration / kFrameSeconds - 1e-9));
  return plan_windows_for_frames(std::max<std::size_t>(total, 1), frames(window),
                                 frames(hop));
}

const MelFilterbank& default_filterbank() {
  static const MelFilterbank fb = mel_filterbank();
  return fb;
}

FramePrediction detect_fixed(const FcnParameters& params, const AudioClip& clip) {
  if (clip.size() != kSegmentSamples)
    throw InputError("fixed-length detection needs exactly 441000 samples, got " +
                     std::to_string(clip.size()));
  if (params.config.n_mels != kNumMels || params.config.n_frames != kSegmentFrames)
    throw ConfigError("detection needs a model over 128 x 200 inputs");
  const MelSpectrogram mel = mel_spectrogram(clip, default_filterbank());
  // Untrained models carry no stats and see raw log-mel values.
  if (params.stats.mean.empty()) return forward(params, mel);
  return forward(params, normalize(mel, params.stats));
}

AudioClip window_audio(const AudioClip& clip, std::size_t start_frame) {
  std::vector<float> samples(kSegmentSamples, 0.0f);
  const std::size_t begin = start_frame * kFrameSamples;
  const auto src = clip.samples();
  for (std::size_t i = 0; i < kSegmentSamples && begin + i < src.size(); ++i)
    samples[i] = src[begin + i];
  return AudioClip(std::move(samples), clip.sample_rate());
}

FramePrediction average_windows(const WindowPlan& plan,
                                std::span<const FramePrediction> window_preds) {
  if (window_preds.size() != plan.start_frames.size())
    throw InputError("one prediction per planned window is required");
  const auto k = static_cast<Eigen::Index>(window_preds.front().n_classes());
  Matrix sum = Matrix::Zero(k, static_cast<Eigen::Index>(plan.total_frames));
  std::vector<double> count(plan.total_frames, 0.0);
  for (std::size_t w = 0; w < window_preds.size(); ++w) {
    const Matrix& p = window_preds[w].probs;
    if (p.rows() != k) throw InputError("window predictions disagree on k");
    for (Eigen::Index f = 0; f < p.cols(); ++f) {
      const std::size_t global = plan.start_frames[w] + static_cast<std::size_t>(f);
      if (global >= plan.total_frames) break;
      sum.col(static_cast<Eigen::Index>(global)) += p.col(f);
      count[global] += 1.0;
    }
  }
  for (std::size_t f = 0; f < plan.total_frames; ++f) {
    if (count[f] == 0.0) throw InputError("frame not covered by any window");
    sum.col(static_cast<Eigen::Index>(f)) /= count[f];
  }
  return {std::move(sum)};
}

FramePrediction detect_variable(const FcnParameters& params, const AudioClip& clip) {
  if (clip.empty()) throw InputError("detection on an empty clip");
  const WindowPlan plan = plan_windows_for_frames(frame_count(clip.size()));
  std::vector<FramePrediction> preds;
  preds.reserve(plan.start_frames.size());
  for (const auto start : plan.start_frames)
    preds.push_back(detect_fixed(params, window_audio(clip, start)));
  return average_windows(plan, preds);
}

FrameLabelSeq argmax_labels(const FramePrediction& pred) {
  FrameLabelSeq labels(pred.n_frames());
  for (Eigen::Index f = 0; f < pred.probs.cols(); ++f) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < pred.probs.rows(); ++c)
      if (pred.probs(c, f) > pred.probs(best, f)) best = c;
    labels[static_cast<std::size_t>(f)] = static_cast<int>(best);
  }
  return labels;
}

EventAnnotation decode_events(const FramePrediction& pred,
                              const TechniqueVocabulary& vocabulary,
                              double frame_len) {
  if (vocabulary.size() != pred.n_classes())
    throw InputError("vocabulary has " + std::to_string(vocabulary.size()) +
                     " labels, prediction has " + std::to_string(pred.n_classes()) +
                     " classes");
  const FrameLabelSeq labels = argmax_labels(pred);
  EventAnnotation annotation;
  std::size_t run_start = 0;
  for (std::size_t i = 1; i <= labels.size(); ++i) {
    if (i < labels.size() && labels[i] == labels[run_start]) continue;
    annotation.events.push_back({static_cast<double>(run_start) * frame_len,
                                 static_cast<double>(i) * frame_len,
                                 labels[run_start]});
    run_start = i;
  }
  return annotation;
}

void write_prediction_dump(const std::filesystem::path& path,
                           const FramePrediction& pred) {
  std::string out = "PRED";
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(pred.n_classes()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(pred.n_frames()));
  for (Eigen::Index r = 0; r < pred.probs.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.probs.cols(); ++c)
      detail::put_le<float>(out, static_cast<float>(pred.probs(r, c)));
  detail::write_file(path, out);
}

FramePrediction read_prediction_dump(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader reader(bytes, path.string());
  if (reader.take(4) != "PRED")
    throw FormatError(path.string() + ": bad magic, expected PRED");
  const auto k = reader.get<std::uint32_t>();
  const auto n = reader.get<std::uint32_t>();
  FramePrediction pred{Matrix(k, n)};
  for (std::uint32_t r = 0; r < k; ++r)
    for (std::uint32_t c = 0; c < n; ++c) pred.probs(r, c) = reader.get<float>();
  return pred;
}

}  // namespace techdet
