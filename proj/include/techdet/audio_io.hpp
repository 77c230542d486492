#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace techdet {

inline constexpr int kSampleRate = 44100;

// Mono audio with samples in [-1, 1]. Immutable once constructed.
class AudioClip {
 public:
  AudioClip() = default;
  // Throws InputError on non-finite or out-of-range samples, or a
  // non-positive sample rate.
  explicit AudioClip(std::vector<float> samples, int sample_rate = kSampleRate);

  std::span<const float> samples() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  double duration() const {
    return static_cast<double>(samples_.size()) / sample_rate_;
  }

 private:
  std::vector<float> samples_;
  int sample_rate_ = kSampleRate;
};

// Reads a RIFF/WAVE file (16-bit PCM or 32-bit IEEE float, mono or stereo)
// and returns the channel mean. Integer samples are scaled by 1/32768; float
// samples are clamped to [-1, 1]. Only 44.1 kHz files are accepted.
AudioClip read_wav(const std::filesystem::path& path);

// Writes `clip` as 16-bit PCM mono, saturating at full scale.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// The int16 code write_wav stores for one amplitude.
std::int16_t to_pcm16(float amplitude);

}  // namespace techdet
