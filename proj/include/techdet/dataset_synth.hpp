#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "techdet/annotation.hpp"
#include "techdet/audio_io.hpp"

namespace techdet {

inline constexpr double kSegmentSeconds = 10.0;
inline constexpr double kCrossfadeSeconds = 0.05;
inline constexpr double kFrameSeconds = 0.05;
inline constexpr std::size_t kFrameSamples = 2205;
inline constexpr std::size_t kSegmentSamples = 441000;
inline constexpr std::size_t kSegmentFrames = 200;
inline constexpr int kDedupRetries = 100;

struct ClipEntry {
  AudioClip clip;
  int label = 0;
  std::string source_id;
};

struct ClipLibrary {
  std::vector<ClipEntry> entries;
  TechniqueVocabulary vocabulary;
};

// Reads a `path,label` CSV (optional header row). Relative paths resolve
// against the manifest's directory. Clips must last between 0.1 s and 10 s.
ClipLibrary load_clip_library(const std::filesystem::path& manifest,
                              const TechniqueVocabulary& vocabulary);

// Joins two clips with linear fade ramps over `overlap` seconds. The ramps
// sum to exactly 1 at every overlapped sample.
AudioClip crossfade_concat(const AudioClip& a, const AudioClip& b,
                           double overlap);

struct SynthesisOptions {
  double duration = kSegmentSeconds;
  double crossfade = kCrossfadeSeconds;
};

struct Segment {
  AudioClip audio;
  EventAnnotation annotation;
  std::vector<std::size_t> clip_ids;
};

// Draws clips uniformly with replacement until they fill `duration`. Only
// the clip-id sequence is drawn; rendering is deterministic given the ids.
std::vector<std::size_t> draw_clip_sequence(const ClipLibrary& library,
                                            std::mt19937_64& rng,
                                            const SynthesisOptions& options = {});

// Crossfades the clips in order and trims to exactly duration * sr samples.
// Event boundaries sit at crossfade midpoints; the last offset is the
// segment duration.
Segment render_segment(const ClipLibrary& library,
                       std::span<const std::size_t> clip_ids,
                       const SynthesisOptions& options = {});

Segment synthesize_segment(const ClipLibrary& library, std::mt19937_64& rng,
                           const SynthesisOptions& options = {});

// Frame i takes the label of the half-open event [onset, offset) holding its
// center (i + 0.5) * frame_len. Times compare on a half-sample grid so that
// boundaries produced by render_segment resolve exactly.
FrameLabelSeq events_to_frame_labels(const EventAnnotation& annotation,
                                     double frame_len, std::size_t n_frames,
                                     int sample_rate = kSampleRate);

struct SegmentRecord {
  std::string audio;       // paths relative to the manifest directory
  std::string annotation;
  std::string labels;
  std::vector<std::size_t> clip_ids;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  TechniqueVocabulary vocabulary;
  std::vector<std::string> sources;
  std::vector<SegmentRecord> segments;
  std::filesystem::path base_dir;  // not serialized

  std::filesystem::path resolve(const std::string& relative) const {
    return base_dir / relative;
  }
};

inline constexpr const char* kManifestFileName = "manifest.json";

// Writes n_segments segments (WAV + JSONL events + frame-label CSV) and
// manifest.json into out_dir. Segment i draws from an RNG stream seeded by
// (seed, i, attempt); clip-id sequences repeating an earlier segment are
// redrawn up to kDedupRetries times, after which InputError is thrown.
DatasetManifest build_dataset(const ClipLibrary& library,
                              std::size_t n_segments, std::uint64_t seed,
                              const std::filesystem::path& out_dir,
                              const SynthesisOptions& options = {});

void write_dataset_manifest(const std::filesystem::path& path,
                            const DatasetManifest& manifest);
DatasetManifest read_dataset_manifest(const std::filesystem::path& path);

// Deterministic per-segment generator used by build_dataset.
std::mt19937_64 segment_rng(std::uint64_t seed, std::size_t segment,
                            int attempt);

}  // namespace techdet
