#include "techdet/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "techdet/error.hpp"

namespace techdet {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8)
    out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

struct WavFormat {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

AudioClip::AudioClip(std::vector<float> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0)
    throw InputError("sample rate must be positive, got " +
                     std::to_string(sample_rate_));
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const float v = samples_[i];
    if (!std::isfinite(v) || v < -1.0f || v > 1.0f)
      throw InputError("sample " + std::to_string(i) +
                       " outside [-1, 1] or non-finite");
  }
}

std::int16_t to_pcm16(float amplitude) {
  const long code = std::lround(static_cast<double>(amplitude) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(code, -32768L, 32767L));
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  WavFormat fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || size > available) throw fail("malformed fmt chunk");
      const unsigned char* f = bytes.data() + body;
      fmt.tag = get_u16(f);
      fmt.channels = get_u16(f + 2);
      fmt.sample_rate = get_u32(f + 4);
      fmt.bits = get_u16(f + 14);
      if (fmt.tag == kFormatExtensible) {
        if (size < 40) throw fail("malformed extensible fmt chunk");
        fmt.tag = get_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave the data size unset on streamed output.
      data_size = std::min(size, available);
      break;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");

  const bool pcm16 = fmt.tag == kFormatPcm && fmt.bits == 16;
  const bool float32 = fmt.tag == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !float32)
    throw fail("unsupported encoding (format " + std::to_string(fmt.tag) +
               ", " + std::to_string(fmt.bits) + " bits)");
  if (fmt.channels != 1 && fmt.channels != 2)
    throw fail("unsupported channel count " + std::to_string(fmt.channels));
  if (fmt.sample_rate != static_cast<std::uint32_t>(kSampleRate))
    throw fail("unsupported sample rate " + std::to_string(fmt.sample_rate) +
               " Hz (expected 44100)");

  const std::size_t sample_bytes = fmt.bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt.channels;
  const std::size_t n_frames = data_size / frame_bytes;
  std::vector<float> samples(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * sample_bytes;
      if (pcm16) {
        sum += static_cast<std::int16_t>(get_u16(p)) / 32768.0;
      } else {
        const float v = std::bit_cast<float>(get_u32(p));
        if (!std::isfinite(v)) throw fail("non-finite float sample");
        sum += std::clamp(v, -1.0f, 1.0f);
      }
    }
    samples[i] = static_cast<float>(sum / fmt.channels);
  }
  return AudioClip(std::move(samples), kSampleRate);
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto samples = clip.samples();
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate()) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (const float v : samples) {
    if (!(v >= -1.0f && v <= 1.0f))
      throw InputError("sample out of range while writing " + path.string());
    put_u16(out, static_cast<std::uint16_t>(to_pcm16(v)));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw InputError("cannot open for writing: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw InputError("write failed: " + path.string());
}

}  // namespace techdet
