#include "techdet/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "techdet/checkpoint.hpp"
#include "techdet/dataset_synth.hpp"
#include "techdet/detector.hpp"
#include "techdet/error.hpp"
#include "techdet/evaluator.hpp"
#include "techdet/trainer.hpp"

namespace techdet {
namespace {

namespace fs = std::filesystem;

const char* const kSubcommands[] = {"synth", "train", "detect", "eval", "viz"};

struct SharedOptions {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  unsigned threads = 1;
};

void add_shared(CLI::App* sub, SharedOptions& shared, const std::string& out_help) {
  sub->add_option("--seed", shared.seed, "Seed for every random draw");
  sub->add_option("--out", shared.out, out_help)->required();
  sub->add_option("--config", shared.config,
                  "key=value file; command-line flags take precedence");
  sub->add_option("--threads", shared.threads, "Worker threads")
      ->check(CLI::PositiveNumber);
}

// Inserts the subcommand's --config file contents right after the
// subcommand name so that explicit flags, parsed later, win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) {
    return std::find(std::begin(kSubcommands), std::end(kSubcommands), a) !=
           std::end(kSubcommands);
  });
  if (sub == args.end()) return args;
  std::string path;
  for (auto it = sub + 1; it != args.end(); ++it) {
    if (*it == "--config" && it + 1 != args.end()) path = *(it + 1);
    if (it->rfind("--config=", 0) == 0) path = it->substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> expanded(args.begin(), sub + 1);
  const auto injected = config_file_args(path);
  expanded.insert(expanded.end(), injected.begin(), injected.end());
  expanded.insert(expanded.end(), sub + 1, args.end());
  return expanded;
}

void write_run_log(const fs::path& path, const std::vector<std::string>& args,
                   const CLI::App& sub) {
  std::ofstream log(path, std::ios::trunc);
  if (!log) throw InputError("cannot open run log: " + path.string());
  log << "# techdet";
  for (const auto& a : args) log << ' ' << a;
  log << "\n[" << sub.get_name() << "]\n" << sub.config_to_str(true, false);
}

fs::path sibling(const std::string& file, const std::string& suffix) {
  return fs::path(file + suffix);
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      widths.push_back(static_cast<std::size_t>(std::stoul(field)));
    } catch (const std::exception&) {
      throw ConfigError("bad --widths entry '" + field + "'");
    }
  }
  if (widths.size() != 4) throw ConfigError("--widths needs four comma-separated values");
  return widths;
}

EventAnnotation clamp_to_duration(EventAnnotation annotation, double duration) {
  auto& events = annotation.events;
  while (!events.empty() && events.back().onset >= duration) events.pop_back();
  if (!events.empty()) events.back().offset = std::min(events.back().offset, duration);
  return annotation;
}

}  // namespace

std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  std::vector<std::string> args;
  std::string line;
  std::size_t line_no = 0;
  const auto trim = [](std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string{};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") continue;
    args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Playing-technique detection toolkit: synthesize, train, detect, evaluate"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);

  // synth
  SharedOptions synth_shared;
  std::string clips, vocab_file;
  std::size_t n_segments = 10;
  SynthesisOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "Generate labeled 10 s segments");
  synth->add_option("--clips", clips, "CSV of path,label rows")->required();
  synth->add_option("--vocabulary", vocab_file, "Label file, one per line")->required();
  synth->add_option("-n,--n", n_segments, "Number of segments")->check(CLI::PositiveNumber);
  synth->add_option("--duration", synth_opts.duration, "Segment length in seconds");
  synth->add_option("--crossfade", synth_opts.crossfade, "Crossfade in seconds");
  add_shared(synth, synth_shared, "Output directory");

  // train
  SharedOptions train_shared;
  std::string data_manifest, val_manifest, widths_text = "16,32,64,64";
  std::size_t k_flag = 0;
  FcnConfig train_cfg;
  auto* train_cmd = app.add_subcommand("train", "Train the frame classifier");
  train_cmd->add_option("--data", data_manifest, "Training dataset manifest")->required();
  train_cmd->add_option("--val", val_manifest, "Validation dataset manifest");
  train_cmd->add_option("--k", k_flag, "Class count (0: take from the vocabulary)");
  train_cmd->add_option("--widths", widths_text, "Conv channel widths, comma-separated");
  train_cmd->add_option("--upsample-kernel", train_cfg.upsample_kernel);
  train_cmd->add_option("--upsample-stride", train_cfg.upsample_stride);
  train_cmd->add_option("--lr", train_cfg.learning_rate, "Adam learning rate");
  train_cmd->add_option("--epochs", train_cfg.epochs);
  train_cmd->add_option("--batch-size", train_cfg.batch_size);
  add_shared(train_cmd, train_shared, "Checkpoint path");

  // detect
  SharedOptions detect_shared;
  std::string checkpoint_path, wav_path, posterior_path;
  auto* detect = app.add_subcommand("detect", "Detect techniques in a recording");
  detect->add_option("--checkpoint", checkpoint_path)->required();
  detect->add_option("--wav", wav_path, "Input recording")->required();
  detect->add_option("--dump-posteriors", posterior_path, "PRED dump of frame posteriors");
  add_shared(detect, detect_shared, "Output JSON Lines events");

  // eval
  SharedOptions eval_shared;
  std::string eval_checkpoint, eval_manifest, confusion_path, viz_dir;
  bool oracle = false;
  std::size_t viz_count = 0;
  auto* eval = app.add_subcommand("eval", "Frame accuracy over a dataset");
  eval->add_option("--checkpoint", eval_checkpoint);
  eval->add_option("--manifest", eval_manifest, "Test dataset manifest")->required();
  eval->add_flag("--oracle", oracle, "Score the reference labels against themselves");
  eval->add_option("--confusion", confusion_path, "Confusion CSV (default: <out>.csv)");
  eval->add_option("--viz-dir", viz_dir, "Directory for per-segment event rolls");
  eval->add_option("--viz-count", viz_count, "Number of segments to visualize");
  add_shared(eval, eval_shared, "Report JSON");

  // viz
  SharedOptions viz_shared;
  std::string reference_path, predicted_path, viz_vocab;
  double viz_duration = 0.0;
  EventRollStyle style;
  auto* viz = app.add_subcommand("viz", "Render an event roll SVG");
  viz->add_option("--reference", reference_path)->required();
  viz->add_option("--predicted", predicted_path);
  viz->add_option("--vocabulary", viz_vocab)->required();
  viz->add_option("--duration", viz_duration, "Seconds (0: last event offset)");
  viz->add_option("--px-per-second", style.px_per_second);
  add_shared(viz, viz_shared, "Output SVG");

  try {
    std::vector<std::string> expanded = expand_config(args);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInputError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  try {
    if (synth->parsed()) {
      const auto vocabulary = TechniqueVocabulary::from_file(vocab_file);
      const auto library = load_clip_library(clips, vocabulary);
      const fs::path dir = synth_shared.out;
      fs::create_directories(dir);
      write_run_log(dir / "run.log", args, *synth);
      const auto manifest =
          build_dataset(library, n_segments, synth_shared.seed, dir, synth_opts);
      out << "wrote " << manifest.segments.size() << " segments to "
          << (dir / kManifestFileName).string() << '\n';
    } else if (train_cmd->parsed()) {
      const auto training = read_dataset_manifest(data_manifest);
      const auto widths = parse_widths(widths_text);
      std::copy(widths.begin(), widths.end(), train_cfg.widths.begin());
      train_cfg.n_classes = k_flag != 0 ? k_flag : training.vocabulary.size();
      train_cfg.seed = train_shared.seed;
      train_cfg.validate();
      if (train_cfg.n_classes != training.vocabulary.size())
        throw ConfigError("--k " + std::to_string(train_cfg.n_classes) +
                          " does not match the vocabulary size " +
                          std::to_string(training.vocabulary.size()));
      write_run_log(sibling(train_shared.out, ".run.log"), args, *train_cmd);
      std::optional<DatasetManifest> validation;
      if (!val_manifest.empty()) validation = read_dataset_manifest(val_manifest);
      std::ofstream history(sibling(train_shared.out, ".history.csv"), std::ios::trunc);
      history << "epoch,train_loss,val_accuracy\n" << std::setprecision(17);
      TrainOptions options;
      options.threads = train_shared.threads;
      options.on_epoch = [&](const EpochStats& s) {
        out << "epoch " << s.epoch << " loss " << s.train_loss;
        history << s.epoch << ',' << s.train_loss << ',';
        if (s.val_accuracy) {
          out << " val_accuracy " << *s.val_accuracy;
          history << *s.val_accuracy;
        }
        out << '\n';
        history << '\n';
      };
      const auto result = train(train_cfg, training,
                                validation ? &*validation : nullptr, options);
      save_checkpoint(result.params, train_shared.out);
      out << "best epoch " << result.best_epoch << ", checkpoint "
          << train_shared.out << '\n';
    } else if (detect->parsed()) {
      const auto params = load_checkpoint(checkpoint_path);
      if (params.vocabulary.size() == 0)
        throw InputError(checkpoint_path + ": checkpoint carries no vocabulary");
      const AudioClip clip = read_wav(wav_path);
      const FramePrediction pred = detect_variable(params, clip);
      const auto events =
          clamp_to_duration(decode_events(pred, params.vocabulary), clip.duration());
      write_annotation(detect_shared.out, events, params.vocabulary);
      if (!posterior_path.empty()) write_prediction_dump(posterior_path, pred);
      out << pred.n_frames() << " frames, " << events.events.size() << " events -> "
          << detect_shared.out << '\n';
    } else if (eval->parsed()) {
      const auto manifest = read_dataset_manifest(eval_manifest);
      if (!oracle && eval_checkpoint.empty())
        throw InputError("eval needs --checkpoint or --oracle");
      std::optional<FcnParameters> params;
      if (!oracle) params = load_checkpoint(eval_checkpoint);
      const EvalReport report =
          oracle ? evaluate_reference(manifest) : evaluate_dataset(*params, manifest);
      {
        std::ofstream json(eval_shared.out, std::ios::trunc);
        if (!json) throw InputError("cannot open for writing: " + eval_shared.out);
        json << report_to_json(report, manifest.vocabulary).dump(2) << '\n';
      }
      write_confusion_csv(confusion_path.empty() ? sibling(eval_shared.out, ".csv")
                                                 : fs::path(confusion_path),
                          report, manifest.vocabulary);
      if (!viz_dir.empty() && viz_count > 0) {
        fs::create_directories(viz_dir);
        for (std::size_t i = 0; i < std::min(viz_count, manifest.segments.size()); ++i) {
          const auto& seg = manifest.segments[i];
          const auto reference =
              read_annotation(manifest.resolve(seg.annotation), manifest.vocabulary);
          const AudioClip clip = read_wav(manifest.resolve(seg.audio));
          EventAnnotation predicted = reference;
          if (params)
            predicted = clamp_to_duration(
                decode_events(detect_variable(*params, clip), manifest.vocabulary),
                clip.duration());
          render_event_roll(reference, predicted, clip.duration(), manifest.vocabulary,
                            fs::path(viz_dir) / (fs::path(seg.audio).stem().string() + ".svg"));
        }
      }
      out << "average accuracy " << report.average_accuracy << " over "
          << report.segment_accuracy.size() << " segments\n";
    } else if (viz->parsed()) {
      const auto vocabulary = TechniqueVocabulary::from_file(viz_vocab);
      const auto reference = read_annotation(reference_path, vocabulary);
      const auto predicted = predicted_path.empty()
                                 ? EventAnnotation{}
                                 : read_annotation(predicted_path, vocabulary);
      double duration = viz_duration;
      for (const auto* a : {&reference, &predicted})
        if (!a->events.empty()) duration = std::max(duration, a->events.back().offset);
      if (viz_duration > 0.0) duration = viz_duration;
      render_event_roll(reference, predicted, duration, vocabulary, viz_shared.out, style);
      out << "wrote " << viz_shared.out << '\n';
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitInternalError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  }
  return kExitOk;
}

}  // namespace techdet
