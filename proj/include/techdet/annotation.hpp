#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace techdet {

// Ordered class labels, one of which is the catch-all "other" class.
class TechniqueVocabulary {
 public:
  TechniqueVocabulary() = default;
  // Throws ConfigError unless labels are unique, non-empty, at least two,
  // and other_index is in range.
  TechniqueVocabulary(std::vector<std::string> labels, std::size_t other_index);

  // One label per line; blank lines and lines starting with '#' are skipped.
  // The catch-all class is the line reading "other", or the last label.
  static TechniqueVocabulary from_file(const std::filesystem::path& path);
  static TechniqueVocabulary from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::size_t size() const { return labels_.size(); }
  std::size_t other_index() const { return other_index_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t index) const { return labels_.at(index); }
  std::optional<std::size_t> find(std::string_view name) const;
  // Throws InputError for names outside the vocabulary.
  std::size_t index_of(std::string_view name) const;

  bool operator==(const TechniqueVocabulary&) const = default;

 private:
  std::vector<std::string> labels_;
  std::size_t other_index_ = 0;
};

struct Event {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
  int label = 0;

  bool operator==(const Event&) const = default;
};

// Monophonic event list: sorted, non-overlapping, positive-length events.
struct EventAnnotation {
  std::vector<Event> events;

  // Throws InputError if an invariant is violated.
  void validate() const;
  bool operator==(const EventAnnotation&) const = default;
};

// One class index per label frame.
using FrameLabelSeq = std::vector<int>;

// JSON Lines, one {"onset", "offset", "label"} object per event.
void write_annotation(const std::filesystem::path& path,
                      const EventAnnotation& annotation,
                      const TechniqueVocabulary& vocabulary);
EventAnnotation read_annotation(const std::filesystem::path& path,
                                const TechniqueVocabulary& vocabulary);

// CSV, one integer class index per line.
void write_frame_labels(const std::filesystem::path& path,
                        const FrameLabelSeq& labels);
FrameLabelSeq read_frame_labels(const std::filesystem::path& path);

}  // namespace techdet
