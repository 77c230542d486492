#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "techdet/audio_io.hpp"

namespace techdet {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kFftSize = 2048;
inline constexpr std::size_t kHopSamples = 2205;
inline constexpr std::size_t kNumBins = kFftSize / 2 + 1;
inline constexpr std::size_t kNumMels = 128;
inline constexpr double kLogEpsilon = 1e-10;
inline constexpr double kStdFloor = 1e-6;

// HTK mel scale, 2595 * log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// ceil(num_samples / hop): one column per 0.05 s label frame.
std::size_t frame_count(std::size_t num_samples);

// Centered STFT power: frame t is the 2048-point periodic-Hann-windowed
// slice centered on sample t * 2205 of the signal reflection-padded by 1024
// on both sides. Returns kNumBins x frame_count(clip.size()).
Matrix power_spectrogram(const AudioClip& clip);

struct MelFilterbank {
  Matrix weights;  // n_mels x (fft_size / 2 + 1)
  double fmin = 0.0;
  double fmax = 0.0;
};

// Triangular filters with unit peaks whose edges and centers are n_mels + 2
// points equally spaced on the mel scale between fmin and fmax.
MelFilterbank mel_filterbank(std::size_t n_mels = kNumMels,
                             std::size_t fft_size = kFftSize,
                             int sample_rate = kSampleRate, double fmin = 0.0,
                             double fmax = kSampleRate / 2.0);

struct MelSpectrogram {
  Matrix values;  // n_mels x n_frames, natural-log energies

  std::size_t n_mels() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_frames() const { return static_cast<std::size_t>(values.cols()); }
};

// log(filterbank * power + 1e-10).
MelSpectrogram mel_spectrogram(const AudioClip& clip,
                               const MelFilterbank& filterbank);

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool operator==(const NormalizationStats&) const = default;
};

// Per-bin mean and population standard deviation over every frame of every
// spectrogram.
NormalizationStats compute_normalization_stats(
    std::span<const MelSpectrogram> spectrograms);

// Mean 0 / std 1 per bin; standard deviations below 1e-6 are floored.
MelSpectrogram normalize(const MelSpectrogram& mel,
                         const NormalizationStats& stats);

// "MELF" dump: magic, u32 version, u32 n_mels, u32 n_frames, then
// little-endian float32 values in row-major order.
void write_feature_dump(const std::filesystem::path& path,
                        const MelSpectrogram& mel);
MelSpectrogram read_feature_dump(const std::filesystem::path& path);

}  // namespace techdet
