#include "techdet/evaluator.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "techdet/detector.hpp"
#include "techdet/error.hpp"

namespace techdet {
namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                "#bcbd22", "#17becf", "#393b79", "#637939"};

std::string num(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

double frame_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    throw InputError("frame_accuracy: " + std::to_string(predicted.size()) +
                     " predictions vs " + std::to_string(truth.size()) + " labels");
  if (truth.empty()) throw InputError("frame_accuracy over zero frames");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double EvalReport::pooled_accuracy() const {
  std::uint64_t diagonal = 0;
  for (std::size_t c = 0; c < confusion.size(); ++c) diagonal += confusion[c][c];
  return total_frames == 0 ? 0.0
                           : static_cast<double>(diagonal) /
                                 static_cast<double>(total_frames);
}

ReportBuilder::ReportBuilder(std::size_t n_classes)
    : n_classes_(n_classes),
      confusion_(n_classes, std::vector<std::uint64_t>(n_classes, 0)) {}

void ReportBuilder::add_segment(std::span<const int> predicted,
                                std::span<const int> truth) {
  const double accuracy = frame_accuracy(predicted, truth);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (truth[i] < 0 || predicted[i] < 0 || t >= n_classes_ || p >= n_classes_)
      throw InputError("class index out of range in evaluation");
    ++confusion_[t][p];
  }
  accuracies_.push_back(accuracy);
}

EvalReport ReportBuilder::finish() const {
  if (accuracies_.empty()) throw InputError("evaluation over zero segments");
  EvalReport report;
  report.n_classes = n_classes_;
  report.segment_accuracy = accuracies_;
  double sum = 0.0;
  for (const double a : accuracies_) sum += a;
  report.average_accuracy = sum / static_cast<double>(accuracies_.size());
  report.confusion = confusion_;
  report.precision.assign(n_classes_, 0.0);
  report.recall.assign(n_classes_, 0.0);
  for (std::size_t c = 0; c < n_classes_; ++c) {
    std::uint64_t row = 0, column = 0;
    for (std::size_t o = 0; o < n_classes_; ++o) {
      row += confusion_[c][o];
      column += confusion_[o][c];
    }
    report.total_frames += row;
    if (column > 0)
      report.precision[c] = static_cast<double>(confusion_[c][c]) / column;
    if (row > 0) report.recall[c] = static_cast<double>(confusion_[c][c]) / row;
  }
  return report;
}

EvalReport evaluate_dataset(const FcnParameters& params,
                            const DatasetManifest& manifest) {
  if (manifest.segments.empty()) throw InputError("evaluation manifest is empty");
  if (params.vocabulary.size() != 0 && !(params.vocabulary == manifest.vocabulary))
    throw InputError("model vocabulary differs from the dataset vocabulary");
  ReportBuilder builder(params.config.n_classes);
  for (const auto& segment : manifest.segments) {
    const AudioClip clip = read_wav(manifest.resolve(segment.audio));
    const FrameLabelSeq truth = read_frame_labels(manifest.resolve(segment.labels));
    const FramePrediction pred = clip.size() == kSegmentSamples
                                     ? detect_fixed(params, clip)
                                     : detect_variable(params, clip);
    builder.add_segment(argmax_labels(pred), truth);
  }
  return builder.finish();
}

EvalReport evaluate_reference(const DatasetManifest& manifest) {
  if (manifest.segments.empty()) throw InputError("evaluation manifest is empty");
  ReportBuilder builder(manifest.vocabulary.size());
  for (const auto& segment : manifest.segments) {
    const FrameLabelSeq truth = read_frame_labels(manifest.resolve(segment.labels));
    builder.add_segment(truth, truth);
  }
  return builder.finish();
}

nlohmann::json report_to_json(const EvalReport& report,
                              const TechniqueVocabulary& vocabulary) {
  return {{"n_classes", report.n_classes},
          {"labels", vocabulary.labels()},
          {"average_accuracy", report.average_accuracy},
          {"pooled_accuracy", report.pooled_accuracy()},
          {"total_frames", report.total_frames},
          {"segment_accuracy", report.segment_accuracy},
          {"confusion", report.confusion},
          {"precision", report.precision},
          {"recall", report.recall}};
}

void write_confusion_csv(const std::filesystem::path& path, const EvalReport& report,
                         const TechniqueVocabulary& vocabulary) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << "truth\\predicted";
  for (const auto& label : vocabulary.labels()) out << ',' << label;
  out << '\n';
  for (std::size_t t = 0; t < report.confusion.size(); ++t) {
    out << vocabulary.label(t);
    for (const auto count : report.confusion[t]) out << ',' << count;
    out << '\n';
  }
  if (!out) throw InputError("write failed: " + path.string());
}

std::string event_roll_svg(const EventAnnotation& reference,
                           const EventAnnotation& predicted, double duration,
                           const TechniqueVocabulary& vocabulary,
                           const EventRollStyle& style) {
  reference.validate();
  predicted.validate();
  if (!(duration > 0.0)) throw InputError("event roll duration must be positive");
  const std::size_t k = vocabulary.size();
  for (const auto* annotation : {&reference, &predicted})
    for (const Event& e : annotation->events)
      if (e.label < 0 || static_cast<std::size_t>(e.label) >= k)
        throw InputError("event label " + std::to_string(e.label) +
                         " outside the vocabulary");
  const double plot_width = duration * style.px_per_second;
  const double lanes_height = static_cast<double>(k) * style.lane_height;
  const double width = style.margin_left + plot_width + 20.0;
  const double height = style.margin_top + lanes_height + 40.0 + 18.0 * 2;
  const double half = style.lane_height / 2.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width)
      << "\" height=\"" << num(height) << "\" font-family=\"sans-serif\" "
      << "font-size=\"11\">\n";

  // Time axis along the top edge of the lanes.
  svg << "<g class=\"axis\" transform=\"translate(" << num(style.margin_left) << ","
      << num(style.margin_top) << ")\">\n";
  const double tick = duration > 60.0 ? 10.0 : duration > 20.0 ? 5.0 : 1.0;
  for (double t = 0.0; t <= duration + 1e-9; t += tick) {
    const double x = t * style.px_per_second;
    svg << "<line x1=\"" << num(x) << "\" y1=\"-4\" x2=\"" << num(x) << "\" y2=\""
        << num(lanes_height) << "\" stroke=\"#ddd\"/>"
        << "<text x=\"" << num(x) << "\" y=\"-8\" text-anchor=\"middle\">"
        << num(t) << "</text>\n";
  }
  svg << "</g>\n";

  const auto draw = [&](const EventAnnotation& annotation, std::size_t lane,
                        double y, const char* kind) {
    for (const Event& e : annotation.events) {
      if (static_cast<std::size_t>(e.label) != lane) continue;
      svg << "<rect class=\"" << kind << "\" x=\""
          << num(e.onset * style.px_per_second) << "\" y=\"" << num(y)
          << "\" width=\"" << num((e.offset - e.onset) * style.px_per_second)
          << "\" height=\"" << num(half - 2.0) << "\" fill=\""
          << kPalette[lane % std::size(kPalette)] << "\""
          << (kind[0] == 'p' ? " fill-opacity=\"0.55\"" : "") << "/>\n";
    }
  };
  for (std::size_t lane = 0; lane < k; ++lane) {
    const double y = style.margin_top + lane * style.lane_height;
    svg << "<text x=\"" << num(style.margin_left - 8.0) << "\" y=\""
        << num(y + half + 4.0) << "\" text-anchor=\"end\">"
        << xml_escape(vocabulary.label(lane)) << "</text>\n";
    svg << "<g class=\"lane\" data-label=\"" << xml_escape(vocabulary.label(lane))
        << "\" transform=\"translate(" << num(style.margin_left) << "," << num(y)
        << ")\">\n";
    svg << "<line x1=\"0\" y1=\"" << num(style.lane_height) << "\" x2=\""
        << num(plot_width) << "\" y2=\"" << num(style.lane_height)
        << "\" stroke=\"#999\"/>\n";
    draw(reference, lane, 1.0, "reference");
    draw(predicted, lane, half + 1.0, "predicted");
    svg << "</g>\n";
  }

  // Legend: lane halves, then class colors.
  const double legend_y = style.margin_top + lanes_height + 24.0;
  svg << "<g class=\"legend\" transform=\"translate(" << num(style.margin_left) << ","
      << num(legend_y) << ")\">\n"
      << "<text x=\"0\" y=\"0\">upper half: reference, lower half: predicted</text>\n";
  double x = 0.0;
  for (std::size_t lane = 0; lane < k; ++lane) {
    svg << "<circle cx=\"" << num(x + 5.0) << "\" cy=\"14\" r=\"5\" fill=\""
        << kPalette[lane % std::size(kPalette)] << "\"/><text x=\"" << num(x + 14.0)
        << "\" y=\"18\">" << xml_escape(vocabulary.label(lane)) << "</text>\n";
    x += 24.0 + 7.0 * static_cast<double>(vocabulary.label(lane).size());
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

void render_event_roll(const EventAnnotation& reference,
                       const EventAnnotation& predicted, double duration,
                       const TechniqueVocabulary& vocabulary,
                       const std::filesystem::path& out,
                       const EventRollStyle& style) {
  const std::string svg =
      event_roll_svg(reference, predicted, duration, vocabulary, style);
  std::ofstream file(out, std::ios::trunc);
  if (!file) throw InputError("cannot open for writing: " + out.string());
  file << svg;
  if (!file) throw InputError("write failed: " + out.string());
}

}  // namespace techdet
