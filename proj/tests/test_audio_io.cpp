#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "techdet/audio_io.hpp"
#include "techdet/error.hpp"
#include "test_support.hpp"

using namespace techdet;
using techdet::testing::TempDir;

namespace {

// Hand-built WAV writer, independent of write_wav.
void write_raw_wav(const std::filesystem::path& path, std::uint16_t format,
                   std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                   const std::string& payload) {
  std::string h;
  const auto u16 = [&](std::uint16_t v) {
    h.push_back(static_cast<char>(v & 0xFF));
    h.push_back(static_cast<char>(v >> 8));
  };
  const auto u32 = [&](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) h.push_back(static_cast<char>((v >> s) & 0xFF));
  };
  h += "RIFF";
  u32(static_cast<std::uint32_t>(36 + 8 + 4 + payload.size()));
  h += "WAVE";
  // An unrelated chunk before fmt, with an odd size to exercise padding.
  h += "LIST";
  u32(3);
  h += "abc";
  h.push_back('\0');
  h += "fmt ";
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  h += "data";
  u32(static_cast<std::uint32_t>(payload.size()));
  h += payload;
  std::ofstream(path, std::ios::binary).write(h.data(), static_cast<std::streamsize>(h.size()));
}

std::string pcm16(std::initializer_list<std::int16_t> values) {
  std::string out;
  for (auto v : values) {
    const auto u = static_cast<std::uint16_t>(v);
    out.push_back(static_cast<char>(u & 0xFF));
    out.push_back(static_cast<char>(u >> 8));
  }
  return out;
}

}  // namespace

TEST_CASE("one second of 16-bit silence reads as 44100 zeros") {
  TempDir dir;
  write_raw_wav(dir / "s.wav", 1, 1, 44100, 16, std::string(2 * 44100, '\0'));
  const AudioClip clip = read_wav(dir / "s.wav");
  CHECK(clip.size() == 44100);
  CHECK(clip.sample_rate() == 44100);
  for (float v : clip.samples()) CHECK(v == 0.0f);
}

TEST_CASE("stereo is averaged to mono") {
  TempDir dir;
  // (+0.5, -0.5) constant pairs.
  write_raw_wav(dir / "st.wav", 1, 2, 44100, 16, pcm16({16384, -16384, 16384, -16384}));
  const AudioClip clip = read_wav(dir / "st.wav");
  REQUIRE(clip.size() == 2);
  CHECK(clip.samples()[0] == 0.0f);
  CHECK(clip.samples()[1] == 0.0f);

  write_raw_wav(dir / "st2.wav", 1, 2, 44100, 16, pcm16({16384, 0}));
  CHECK(read_wav(dir / "st2.wav").samples()[0] == 0.25f);
}

TEST_CASE("int16 extremes scale by 1/32768") {
  TempDir dir;
  write_raw_wav(dir / "x.wav", 1, 1, 44100, 16, pcm16({-32768, 32767, 1}));
  const AudioClip clip = read_wav(dir / "x.wav");
  CHECK(clip.samples()[0] == -1.0f);
  CHECK(clip.samples()[1] == static_cast<float>(32767.0 / 32768.0));
  CHECK(clip.samples()[2] == static_cast<float>(1.0 / 32768.0));
}

TEST_CASE("32-bit float input is accepted and clamped") {
  TempDir dir;
  std::string payload;
  for (float v : {0.25f, -2.0f, 1.5f}) {
    char b[4];
    std::memcpy(b, &v, 4);
    payload.append(b, 4);
  }
  write_raw_wav(dir / "f.wav", 3, 1, 44100, 32, payload);
  const AudioClip clip = read_wav(dir / "f.wav");
  CHECK(clip.samples()[0] == 0.25f);
  CHECK(clip.samples()[1] == -1.0f);
  CHECK(clip.samples()[2] == 1.0f);
}

TEST_CASE("read_wav rejects malformed and unsupported files") {
  TempDir dir;
  std::ofstream(dir / "junk.wav") << "definitely not audio";
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), FormatError);
  write_raw_wav(dir / "rate.wav", 1, 1, 48000, 16, pcm16({0}));
  CHECK_THROWS_AS(read_wav(dir / "rate.wav"), FormatError);
  write_raw_wav(dir / "b24.wav", 1, 1, 44100, 24, std::string(3, '\0'));
  CHECK_THROWS_AS(read_wav(dir / "b24.wav"), FormatError);
  write_raw_wav(dir / "ch3.wav", 1, 3, 44100, 16, pcm16({0, 0, 0}));
  CHECK_THROWS_AS(read_wav(dir / "ch3.wav"), FormatError);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), InputError);
}

TEST_CASE("write_wav stores 16-bit PCM with saturation") {
  CHECK(to_pcm16(1.0f) == 32767);
  CHECK(to_pcm16(-1.0f) == -32768);
  CHECK(to_pcm16(0.0f) == 0);
  // Clamp oracle: every representable code maps back to itself.
  for (int code = -32768; code <= 32767; code += 97)
    CHECK(to_pcm16(static_cast<float>(code / 32768.0)) == code);

  TempDir dir;
  write_wav(dir / "z.wav", AudioClip(std::vector<float>(2205, 0.0f)));
  CHECK(std::filesystem::file_size(dir / "z.wav") == 44 + 2 * 2205);
  const AudioClip back = read_wav(dir / "z.wav");
  CHECK(back.size() == 2205);
}

TEST_CASE("write/read round trip stays within one quantization step") {
  TempDir dir;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_real_distribution<float> amp(-1.0f, 1.0f);
    std::vector<float> s(1000 + 997 * trial);
    for (auto& v : s) v = amp(rng);
    s[0] = 1.0f;
    s[1] = -1.0f;
    const AudioClip clip(s);
    write_wav(dir / "r.wav", clip);
    const AudioClip back = read_wav(dir / "r.wav");
    REQUIRE(back.size() == clip.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(std::abs(back.samples()[i] - s[i]) <= 1.0 / 32768.0 + 1e-9);
  }
}

TEST_CASE("AudioClip rejects out-of-range samples") {
  CHECK_THROWS_AS(AudioClip(std::vector<float>{1.5f}), InputError);
  CHECK_THROWS_AS(AudioClip(std::vector<float>{std::nanf("")}), InputError);
  CHECK_THROWS_AS(AudioClip(std::vector<float>{0.0f}, 0), InputError);
}
