#include "techdet/annotation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "techdet/error.hpp"

namespace techdet {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

TechniqueVocabulary::TechniqueVocabulary(std::vector<std::string> labels,
                                         std::size_t other_index)
    : labels_(std::move(labels)), other_index_(other_index) {
  if (labels_.size() < 2)
    throw ConfigError("vocabulary needs at least two classes");
  std::set<std::string> seen;
  for (const auto& label : labels_) {
    if (label.empty()) throw ConfigError("vocabulary label is empty");
    if (!seen.insert(label).second)
      throw ConfigError("duplicate vocabulary label: " + label);
  }
  if (other_index_ >= labels_.size())
    throw ConfigError("other_index out of range");
}

TechniqueVocabulary TechniqueVocabulary::from_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    const std::string label = trim(line);
    if (label.empty() || label.front() == '#') continue;
    labels.push_back(label);
  }
  if (labels.empty())
    throw InputError("vocabulary file is empty: " + path.string());
  const auto other = std::find(labels.begin(), labels.end(), "other");
  const std::size_t other_index =
      other != labels.end() ? static_cast<std::size_t>(other - labels.begin())
                            : labels.size() - 1;
  return TechniqueVocabulary(std::move(labels), other_index);
}

TechniqueVocabulary TechniqueVocabulary::from_json(const nlohmann::json& j) {
  try {
    return TechniqueVocabulary(j.at("labels").get<std::vector<std::string>>(),
                               j.at("other_index").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad vocabulary JSON: ") + e.what());
  }
}

nlohmann::json TechniqueVocabulary::to_json() const {
  return {{"labels", labels_}, {"other_index", other_index_}};
}

std::optional<std::size_t> TechniqueVocabulary::find(
    std::string_view name) const {
  const auto it = std::find(labels_.begin(), labels_.end(), name);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t TechniqueVocabulary::index_of(std::string_view name) const {
  if (auto index = find(name)) return *index;
  throw InputError("unknown label: " + std::string(name));
}

void EventAnnotation::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (!std::isfinite(e.onset) || !std::isfinite(e.offset) || e.onset < 0.0 ||
        e.onset >= e.offset)
      throw InputError("event " + std::to_string(i) +
                       " needs 0 <= onset < offset");
    if (e.label < 0)
      throw InputError("event " + std::to_string(i) + " has negative label");
    if (i > 0 && e.onset < events[i - 1].offset)
      throw InputError("event " + std::to_string(i) +
                       " overlaps or precedes its predecessor");
  }
}

void write_annotation(const std::filesystem::path& path,
                      const EventAnnotation& annotation,
                      const TechniqueVocabulary& vocabulary) {
  annotation.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  for (const Event& e : annotation.events) {
    const nlohmann::json line = {
        {"onset", e.onset},
        {"offset", e.offset},
        {"label", vocabulary.label(static_cast<std::size_t>(e.label))}};
    out << line.dump() << '\n';
  }
  if (!out) throw InputError("write failed: " + path.string());
}

EventAnnotation read_annotation(const std::filesystem::path& path,
                                const TechniqueVocabulary& vocabulary) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open annotation: " + path.string());
  EventAnnotation annotation;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      annotation.events.push_back(
          {j.at("onset").get<double>(), j.at("offset").get<double>(),
           static_cast<int>(
               vocabulary.index_of(j.at("label").get<std::string>()))});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  annotation.validate();
  return annotation;
}

void write_frame_labels(const std::filesystem::path& path,
                        const FrameLabelSeq& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  for (const int label : labels) out << label << '\n';
  if (!out) throw InputError("write failed: " + path.string());
}

FrameLabelSeq read_frame_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open frame labels: " + path.string());
  FrameLabelSeq labels;
  std::string line;
  while (std::getline(in, line)) {
    const std::string field = trim(line);
    if (field.empty()) continue;
    int value = 0;
    const auto [end, ec] =
        std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || end != field.data() + field.size() || value < 0)
      throw FormatError(path.string() + ": bad frame label '" + field + "'");
    labels.push_back(value);
  }
  return labels;
}

}  // namespace techdet
