#include "techdet/features.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "binary_io.hpp"
#include "techdet/error.hpp"

namespace techdet {
namespace {

constexpr std::uint32_t kFeatureDumpVersion = 1;

// fftw planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(
            fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(),
                                 FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  const fftw_complex* output() const { return out_.get(); }
  void execute() { fftw_execute(plan_); }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

// Mirror index into [0, n) with repeated reflection (no edge repeat).
std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * static_cast<long long>(n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long long>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::size_t frame_count(std::size_t num_samples) {
  return (num_samples + kHopSamples - 1) / kHopSamples;
}

Matrix power_spectrogram(const AudioClip& clip) {
  if (clip.empty()) throw InputError("power_spectrogram of an empty clip");
  const auto samples = clip.samples();
  const std::size_t n_frames = frame_count(samples.size());
  constexpr long long kPad = kFftSize / 2;

  std::vector<double> window(kFftSize);
  for (std::size_t n = 0; n < kFftSize; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kFftSize);

  RealFft fft(kFftSize);
  Matrix power(kNumBins, n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const long long origin = static_cast<long long>(t * kHopSamples) - kPad;
    double* in = fft.input();
    for (std::size_t n = 0; n < kFftSize; ++n)
      in[n] = window[n] *
              samples[reflect_index(origin + static_cast<long long>(n),
                                    samples.size())];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (std::size_t k = 0; k < kNumBins; ++k)
      power(k, t) = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  return power;
}

MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t fft_size,
                             int sample_rate, double fmin, double fmax) {
  if (n_mels == 0 || fft_size < 2 || sample_rate <= 0)
    throw InputError("invalid mel filterbank dimensions");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw InputError("invalid mel frequency range: need 0 <= fmin < fmax <= sr/2");
  const std::size_t n_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  MelFilterbank fb{Matrix::Zero(n_mels, n_bins), fmin, fmax};
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (f > left && f <= center)
        w = (f - left) / (center - left);
      else if (f > center && f < right)
        w = (right - f) / (right - center);
      fb.weights(m, k) = w;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip,
                               const MelFilterbank& filterbank) {
  if (static_cast<std::size_t>(filterbank.weights.cols()) != kNumBins)
    throw InputError("filterbank width does not match the FFT size");
  const Matrix power = power_spectrogram(clip);
  Matrix mel = filterbank.weights * power;
  mel = (mel.array() + kLogEpsilon).log().matrix();
  return {std::move(mel)};
}

NormalizationStats compute_normalization_stats(
    std::span<const MelSpectrogram> spectrograms) {
  if (spectrograms.empty())
    throw InputError("normalization stats need at least one spectrogram");
  const std::size_t n_mels = spectrograms.front().n_mels();
  std::vector<double> sum(n_mels, 0.0);
  double count = 0.0;
  for (const auto& mel : spectrograms) {
    if (mel.n_mels() != n_mels)
      throw InputError("spectrograms disagree on the number of mel bins");
    for (std::size_t b = 0; b < n_mels; ++b) sum[b] += mel.values.row(b).sum();
    count += static_cast<double>(mel.n_frames());
  }
  if (count == 0.0) throw InputError("normalization stats over zero frames");
  NormalizationStats stats{std::vector<double>(n_mels),
                           std::vector<double>(n_mels, 0.0)};
  for (std::size_t b = 0; b < n_mels; ++b) stats.mean[b] = sum[b] / count;
  for (const auto& mel : spectrograms)
    for (std::size_t b = 0; b < n_mels; ++b)
      stats.stddev[b] +=
          (mel.values.row(b).array() - stats.mean[b]).square().sum();
  for (auto& s : stats.stddev) s = std::sqrt(s / count);
  return stats;
}

MelSpectrogram normalize(const MelSpectrogram& mel,
                         const NormalizationStats& stats) {
  if (stats.mean.size() != mel.n_mels() || stats.stddev.size() != mel.n_mels())
    throw InputError("normalization stats have " +
                     std::to_string(stats.mean.size()) + " bins, spectrogram has " +
                     std::to_string(mel.n_mels()));
  MelSpectrogram out{mel.values};
  for (std::size_t b = 0; b < mel.n_mels(); ++b) {
    const double scale = std::max(stats.stddev[b], kStdFloor);
    out.values.row(b) = (out.values.row(b).array() - stats.mean[b]) / scale;
  }
  return out;
}

void write_feature_dump(const std::filesystem::path& path,
                        const MelSpectrogram& mel) {
  std::string out = "MELF";
  detail::put_le<std::uint32_t>(out, kFeatureDumpVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.n_mels()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.n_frames()));
  for (Eigen::Index r = 0; r < mel.values.rows(); ++r)
    for (Eigen::Index c = 0; c < mel.values.cols(); ++c)
      detail::put_le<float>(out, static_cast<float>(mel.values(r, c)));
  detail::write_file(path, out);
}

MelSpectrogram read_feature_dump(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader reader(bytes, path.string());
  if (reader.take(4) != "MELF")
    throw FormatError(path.string() + ": bad magic, expected MELF");
  if (reader.get<std::uint32_t>() != kFeatureDumpVersion)
    throw FormatError(path.string() + ": unsupported feature dump version");
  const auto rows = reader.get<std::uint32_t>();
  const auto cols = reader.get<std::uint32_t>();
  MelSpectrogram mel{Matrix(rows, cols)};
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      mel.values(r, c) = reader.get<float>();
  return mel;
}

}  // namespace techdet
