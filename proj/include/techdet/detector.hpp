#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "techdet/annotation.hpp"
#include "techdet/audio_io.hpp"
#include "techdet/fcn_model.hpp"

namespace techdet {

inline constexpr double kWindowSeconds = 10.0;
inline constexpr double kHopSeconds = 2.0;

// Sliding windows over a recording, on the 0.05 s frame grid.
struct WindowPlan {
  double window_len = kWindowSeconds;
  double hop = kHopSeconds;
  std::vector<double> starts;             // seconds
  std::vector<std::size_t> start_frames;  // starts / 0.05
  std::size_t window_frames = 0;
  std::size_t total_frames = 0;           // ceil(duration / 0.05)
};

// Starts at 0 and advances by `hop` while the window fits. If the last
// regular window stops short of the end, one more window is aligned to the
// last frame. Recordings shorter than a window get one window at 0.
WindowPlan plan_windows(double duration, double window = kWindowSeconds,
                        double hop = kHopSeconds);
WindowPlan plan_windows_for_frames(std::size_t total_frames,
                                   std::size_t window_frames = 200,
                                   std::size_t hop_frames = 40);

// Shared 128 x 1025 filterbank for detection.
const MelFilterbank& default_filterbank();

// Mel features -> normalization -> forward for an exactly 10 s clip.
FramePrediction detect_fixed(const FcnParameters& params, const AudioClip& clip);

// The audio for one window: samples from start_frame * 2205, zero-padded
// past the end of the clip to exactly 10 s.
AudioClip window_audio(const AudioClip& clip, std::size_t start_frame);

// Per-frame arithmetic mean of the predictions of all covering windows,
// summed in window order and divided by the count. Frames past
// plan.total_frames are dropped.
FramePrediction average_windows(const WindowPlan& plan,
                                std::span<const FramePrediction> window_preds);

// Runs every window of plan_windows(clip) through detect_fixed and averages.
FramePrediction detect_variable(const FcnParameters& params, const AudioClip& clip);

// Argmax per frame, lowest class index on ties.
FrameLabelSeq argmax_labels(const FramePrediction& pred);

// Merges runs of equal argmax labels into events on the 0.05 s grid. The
// vocabulary must have one entry per prediction row.
EventAnnotation decode_events(const FramePrediction& pred,
                              const TechniqueVocabulary& vocabulary,
                              double frame_len = 0.05);

// "PRED" dump: magic, u32 k, u32 n_frames, float32 probabilities row-major.
void write_prediction_dump(const std::filesystem::path& path,
                           const FramePrediction& pred);
FramePrediction read_prediction_dump(const std::filesystem::path& path);

}  // namespace techdet
