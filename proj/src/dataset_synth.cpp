#include "techdet/dataset_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "techdet/error.hpp"

namespace techdet {
namespace {

constexpr double kMinClipSeconds = 0.1;
constexpr double kMaxClipSeconds = 10.0;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::size_t seconds_to_samples(double seconds, int sample_rate) {
  if (!(seconds >= 0.0)) throw InputError("negative duration");
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

// Appends `tail` to `acc`, overlapping the last `overlap` samples of `acc`
// with the head of `tail`. Fade-in weight of overlap sample i is
// (i + 0.5) / overlap and fade-out is its complement.
void append_crossfaded(std::vector<float>& acc, std::span<const float> tail,
                       std::size_t overlap) {
  const std::size_t start = acc.size() - overlap;
  for (std::size_t i = 0; i < overlap; ++i) {
    const double fade_in = (static_cast<double>(i) + 0.5) / overlap;
    const double fade_out = 1.0 - fade_in;
    const double mixed = acc[start + i] * fade_out + tail[i] * fade_in;
    acc[start + i] = static_cast<float>(std::clamp(mixed, -1.0, 1.0));
  }
  acc.insert(acc.end(), tail.begin() + static_cast<std::ptrdiff_t>(overlap),
             tail.end());
}

std::string segment_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "segment_%05zu", index);
  return buf;
}

}  // namespace

ClipLibrary load_clip_library(const std::filesystem::path& manifest,
                              const TechniqueVocabulary& vocabulary) {
  std::ifstream in(manifest);
  if (!in) throw InputError("cannot open clip manifest: " + manifest.string());
  ClipLibrary library;
  library.vocabulary = vocabulary;
  const auto base = manifest.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw FormatError(manifest.string() + ":" + std::to_string(line_no) +
                        ": expected 'path,label'");
    const std::string path = trim(line.substr(0, comma));
    const std::string label = trim(line.substr(comma + 1));
    if (line_no == 1 && path == "path" && label == "label") continue;
    const int index = static_cast<int>(vocabulary.index_of(label));
    const std::filesystem::path clip_path =
        std::filesystem::path(path).is_absolute() ? std::filesystem::path(path)
                                                  : base / path;
    AudioClip clip = read_wav(clip_path);
    const double seconds = clip.duration();
    if (seconds < kMinClipSeconds || seconds > kMaxClipSeconds)
      throw InputError(clip_path.string() + ": clip lasts " +
                       std::to_string(seconds) +
                       " s, outside [0.1 s, 10 s]");
    library.entries.push_back({std::move(clip), index, path});
  }
  if (library.entries.empty())
    throw InputError("clip library is empty: " + manifest.string());
  return library;
}

AudioClip crossfade_concat(const AudioClip& a, const AudioClip& b,
                           double overlap) {
  if (a.sample_rate() != b.sample_rate())
    throw InputError("crossfade of clips with different sample rates");
  const std::size_t n = seconds_to_samples(overlap, a.sample_rate());
  if (n > 0 && (n >= a.size() || n >= b.size()))
    throw InputError("crossfade overlap exceeds clip length");
  std::vector<float> out(a.samples().begin(), a.samples().end());
  out.reserve(a.size() + b.size() - n);
  append_crossfaded(out, b.samples(), n);
  return AudioClip(std::move(out), a.sample_rate());
}

std::vector<std::size_t> draw_clip_sequence(const ClipLibrary& library,
                                            std::mt19937_64& rng,
                                            const SynthesisOptions& options) {
  if (library.entries.empty()) throw InputError("clip library is empty");
  const std::size_t target = seconds_to_samples(options.duration, kSampleRate);
  const std::size_t overlap = seconds_to_samples(options.crossfade, kSampleRate);
  if (target == 0) throw InputError("segment duration must be positive");
  std::uniform_int_distribution<std::size_t> pick(0, library.entries.size() - 1);
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  while (total < target) {
    const std::size_t id = pick(rng);
    const std::size_t len = library.entries[id].clip.size();
    if (ids.empty()) {
      total = len;
    } else {
      if (len <= overlap)
        throw InputError("clip " + library.entries[id].source_id +
                         " is shorter than the crossfade");
      total += len - overlap;
    }
    ids.push_back(id);
  }
  return ids;
}

Segment render_segment(const ClipLibrary& library,
                       std::span<const std::size_t> clip_ids,
                       const SynthesisOptions& options) {
  if (clip_ids.empty()) throw InputError("empty clip sequence");
  const std::size_t target = seconds_to_samples(options.duration, kSampleRate);
  const std::size_t overlap = seconds_to_samples(options.crossfade, kSampleRate);
  constexpr double kHalfSampleRate = 2.0 * kSampleRate;

  Segment segment;
  segment.clip_ids.assign(clip_ids.begin(), clip_ids.end());
  std::vector<float> audio;
  audio.reserve(target + library.entries[clip_ids[0]].clip.size());
  // Boundary positions on a half-sample grid: the midpoint of an overlap
  // starting at sample s is 2s + overlap half-samples.
  std::vector<std::size_t> boundaries{0};
  for (std::size_t i = 0; i < clip_ids.size(); ++i) {
    const ClipEntry& entry = library.entries.at(clip_ids[i]);
    if (i == 0) {
      audio.assign(entry.clip.samples().begin(), entry.clip.samples().end());
      continue;
    }
    if (entry.clip.size() <= overlap || audio.size() <= overlap)
      throw InputError("clip " + entry.source_id +
                       " is shorter than the crossfade");
    const std::size_t start = audio.size() - overlap;
    boundaries.push_back(2 * start + overlap);
    append_crossfaded(audio, entry.clip.samples(), overlap);
  }
  if (audio.size() < target)
    throw InputError("clip sequence too short for the segment duration");
  audio.resize(target);

  for (std::size_t i = 0; i < clip_ids.size(); ++i) {
    const std::size_t begin = boundaries[i];
    if (begin >= 2 * target) break;
    const double onset = begin / kHalfSampleRate;
    const double offset = i + 1 < clip_ids.size() && boundaries[i + 1] < 2 * target
                              ? boundaries[i + 1] / kHalfSampleRate
                              : options.duration;
    segment.annotation.events.push_back(
        {onset, offset, library.entries[clip_ids[i]].label});
    if (offset == options.duration) break;
  }
  segment.audio = AudioClip(std::move(audio), kSampleRate);
  return segment;
}

Segment synthesize_segment(const ClipLibrary& library, std::mt19937_64& rng,
                           const SynthesisOptions& options) {
  const auto ids = draw_clip_sequence(library, rng, options);
  return render_segment(library, ids, options);
}

FrameLabelSeq events_to_frame_labels(const EventAnnotation& annotation,
                                     double frame_len, std::size_t n_frames,
                                     int sample_rate) {
  annotation.validate();
  const auto half_samples = [&](double seconds) {
    return std::llround(seconds * 2.0 * sample_rate);
  };
  const long long frame = std::llround(frame_len * sample_rate);
  if (frame <= 0) throw InputError("frame length must be positive");
  const auto& events = annotation.events;
  if (n_frames > 0 && (events.empty() || half_samples(events.front().onset) != 0))
    throw InputError("annotation does not start at 0");
  for (std::size_t i = 1; i < events.size(); ++i)
    if (half_samples(events[i].onset) != half_samples(events[i - 1].offset))
      throw InputError("gap or overlap between events " + std::to_string(i - 1) +
                       " and " + std::to_string(i));

  FrameLabelSeq labels(n_frames);
  std::size_t e = 0;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const long long center = static_cast<long long>(2 * i + 1) * frame;
    while (e < events.size() && center >= half_samples(events[e].offset)) ++e;
    if (e == events.size())
      throw InputError("annotation ends before frame " + std::to_string(i));
    labels[i] = events[e].label;
  }
  return labels;
}

std::mt19937_64 segment_rng(std::uint64_t seed, std::size_t segment,
                            int attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(segment),
                    static_cast<std::uint32_t>(attempt)};
  return std::mt19937_64(seq);
}

DatasetManifest build_dataset(const ClipLibrary& library,
                              std::size_t n_segments, std::uint64_t seed,
                              const std::filesystem::path& out_dir,
                              const SynthesisOptions& options) {
  if (n_segments == 0) throw InputError("n_segments must be at least 1");
  if (library.entries.empty()) throw InputError("clip library is empty");
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.vocabulary = library.vocabulary;
  manifest.base_dir = out_dir;
  for (const auto& entry : library.entries)
    manifest.sources.push_back(entry.source_id);

  const std::size_t n_frames = static_cast<std::size_t>(
      std::ceil(seconds_to_samples(options.duration, kSampleRate) /
                static_cast<double>(kFrameSamples)));
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t i = 0; i < n_segments; ++i) {
    std::vector<std::size_t> ids;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kDedupRetries)
        throw InputError("retry budget exhausted at segment " +
                         std::to_string(i) +
                         ": clip library too small for the requested count");
      auto rng = segment_rng(seed, i, attempt);
      ids = draw_clip_sequence(library, rng, options);
      if (seen.insert(ids).second) break;
    }
    const Segment segment = render_segment(library, ids, options);
    const std::string stem = segment_stem(i);
    SegmentRecord record{stem + ".wav", stem + ".jsonl", stem + ".labels.csv",
                         ids};
    write_wav(out_dir / record.audio, segment.audio);
    write_annotation(out_dir / record.annotation, segment.annotation,
                     library.vocabulary);
    write_frame_labels(out_dir / record.labels,
                       events_to_frame_labels(segment.annotation, kFrameSeconds,
                                              n_frames));
    manifest.segments.push_back(std::move(record));
  }
  write_dataset_manifest(out_dir / kManifestFileName, manifest);
  return manifest;
}

void write_dataset_manifest(const std::filesystem::path& path,
                            const DatasetManifest& manifest) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : manifest.segments)
    segments.push_back({{"audio", s.audio},
                        {"annotation", s.annotation},
                        {"labels", s.labels},
                        {"clips", s.clip_ids}});
  const nlohmann::json j = {{"format", "techdet-dataset"},
                            {"version", 1},
                            {"seed", manifest.seed},
                            {"vocabulary", manifest.vocabulary.to_json()},
                            {"sources", manifest.sources},
                            {"segments", segments}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw InputError("write failed: " + path.string());
}

DatasetManifest read_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset manifest: " + path.string());
  DatasetManifest manifest;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "techdet-dataset")
      throw FormatError(path.string() + ": not a dataset manifest");
    manifest.seed = j.at("seed").get<std::uint64_t>();
    manifest.vocabulary = TechniqueVocabulary::from_json(j.at("vocabulary"));
    manifest.sources = j.value("sources", std::vector<std::string>{});
    for (const auto& s : j.at("segments"))
      manifest.segments.push_back(
          {s.at("audio").get<std::string>(),
           s.at("annotation").get<std::string>(),
           s.at("labels").get<std::string>(),
           s.value("clips", std::vector<std::size_t>{})});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  manifest.base_dir = path.parent_path();
  return manifest;
}

}  // namespace techdet
