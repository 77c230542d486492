#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "techdet/annotation.hpp"
#include "techdet/dataset_synth.hpp"
#include "techdet/fcn_model.hpp"

namespace techdet {

// (1/n) * #{i : predicted[i] == truth[i]}.
double frame_accuracy(std::span<const int> predicted, std::span<const int> truth);

struct EvalReport {
  std::size_t n_classes = 0;
  std::vector<double> segment_accuracy;
  double average_accuracy = 0.0;  // unweighted mean over segments
  // confusion[truth][predicted], frame counts.
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<double> precision;  // 0 where a class is never predicted
  std::vector<double> recall;     // 0 where a class never occurs
  std::uint64_t total_frames = 0;

  // trace(confusion) / total_frames.
  double pooled_accuracy() const;
};

// Accumulates per-segment scores into a report.
class ReportBuilder {
 public:
  explicit ReportBuilder(std::size_t n_classes);
  void add_segment(std::span<const int> predicted, std::span<const int> truth);
  EvalReport finish() const;

 private:
  std::size_t n_classes_;
  std::vector<double> accuracies_;
  std::vector<std::vector<std::uint64_t>> confusion_;
};

// Detects every manifest segment (fixed-length path for 10 s segments,
// sliding windows otherwise), takes the argmax and scores it against the
// stored frame labels.
EvalReport evaluate_dataset(const FcnParameters& params,
                            const DatasetManifest& manifest);

// Scores the manifest's reference labels against themselves, a pipeline
// sanity check that needs no model.
EvalReport evaluate_reference(const DatasetManifest& manifest);

nlohmann::json report_to_json(const EvalReport& report,
                              const TechniqueVocabulary& vocabulary);
void write_confusion_csv(const std::filesystem::path& path, const EvalReport& report,
                         const TechniqueVocabulary& vocabulary);

struct EventRollStyle {
  double px_per_second = 100.0;
  double lane_height = 24.0;
  double margin_left = 120.0;
  double margin_top = 30.0;
};

// Standalone SVG with one lane per class. Each lane draws reference events
// in its upper half and predicted events in its lower half; event bars are
// the only <rect> elements and their x/width are in lane coordinates
// (seconds * px_per_second).
std::string event_roll_svg(const EventAnnotation& reference,
                           const EventAnnotation& predicted, double duration,
                           const TechniqueVocabulary& vocabulary,
                           const EventRollStyle& style = {});
void render_event_roll(const EventAnnotation& reference,
                       const EventAnnotation& predicted, double duration,
                       const TechniqueVocabulary& vocabulary,
                       const std::filesystem::path& out,
                       const EventRollStyle& style = {});

}  // namespace techdet
