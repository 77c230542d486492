#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "techdet/checkpoint.hpp"
#include "techdet/detector.hpp"
#include "techdet/error.hpp"
#include "techdet/evaluator.hpp"
#include "techdet/trainer.hpp"

namespace py = pybind11;
using namespace techdet;

namespace {

AudioClip to_clip(const py::array_t<float, py::array::c_style | py::array::forcecast>& samples) {
  if (samples.ndim() != 1) throw InputError("expected a 1-D sample array");
  return AudioClip(std::vector<float>(samples.data(), samples.data() + samples.size()));
}

py::array_t<float> to_array(const AudioClip& clip) {
  py::array_t<float> out(static_cast<py::ssize_t>(clip.size()));
  std::copy(clip.samples().begin(), clip.samples().end(), out.mutable_data());
  return out;
}

py::list events_to_py(const EventAnnotation& ann, const TechniqueVocabulary& vocab) {
  py::list out;
  for (const auto& e : ann.events)
    out.append(py::make_tuple(e.onset, e.offset, vocab.label(static_cast<std::size_t>(e.label))));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Frame-level playing-technique detection";

  static py::exception<InputError> input_error(m, "InputError", PyExc_ValueError);
  static py::exception<NumericalError> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InputError& e) {
      py::set_error(input_error, e.what());
    } catch (const NumericalError& e) {
      py::set_error(numerical_error, e.what());
    }
  });

  m.attr("SAMPLE_RATE") = kSampleRate;

  m.def("read_wav", [](const std::filesystem::path& p) { return to_array(read_wav(p)); },
        py::arg("path"), "Mono float32 samples of a 44.1 kHz WAV file.");
  m.def("write_wav", [](const std::filesystem::path& p, py::array_t<float, py::array::c_style | py::array::forcecast> s) {
          write_wav(p, to_clip(s));
        }, py::arg("path"), py::arg("samples"));

  m.def("mel_spectrogram", [](py::array_t<float, py::array::c_style | py::array::forcecast> s) {
          return Matrix(mel_spectrogram(to_clip(s), default_filterbank()).values);
        }, py::arg("samples"), "128 x frames log-mel matrix.");

  m.def("frame_accuracy", [](const std::vector<int>& predicted, const std::vector<int>& truth) {
          return frame_accuracy(predicted, truth);
        }, py::arg("predicted"), py::arg("truth"));

  m.def("plan_windows", [](double duration) { return plan_windows(duration).starts; },
        py::arg("duration"), "Window start times in seconds.");

  py::class_<FcnParameters>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_static("init", [](const std::vector<std::string>& labels, std::uint64_t seed) {
          FcnConfig cfg;
          cfg.n_classes = labels.size();
          FcnParameters p = init_params(cfg, seed);
          p.vocabulary = TechniqueVocabulary(labels, labels.size() - 1);
          return p;
        }, py::arg("labels"), py::arg("seed") = 0,
        "Untrained reference model; the last label is the catch-all class.")
      .def("save", [](const FcnParameters& p, const std::filesystem::path& path) {
          save_checkpoint(p, path);
        }, py::arg("path"))
      .def_property_readonly("labels", [](const FcnParameters& p) { return p.vocabulary.labels(); })
      .def_property_readonly("n_params", [](const FcnParameters& p) { return p.values.size(); })
      .def_property_readonly("config", [](const FcnParameters& p) {
          return py::module_::import("json").attr("loads")(p.config.to_json().dump());
        })
      .def("forward", [](const FcnParameters& p, const Matrix& features) {
          return forward(p, MelSpectrogram{features}).probs;
        }, py::arg("features"), "Posteriors for already-normalized features.")
      .def("posteriors", [](const FcnParameters& p, py::array_t<float, py::array::c_style | py::array::forcecast> s) {
          const AudioClip clip = to_clip(s);
          py::gil_scoped_release release;
          return detect_variable(p, clip).probs;
        }, py::arg("samples"), "k x frames posteriors over a recording of any length.")
      .def("detect", [](const FcnParameters& p, py::array_t<float, py::array::c_style | py::array::forcecast> s) {
          const AudioClip clip = to_clip(s);
          const auto pred = detect_variable(p, clip);
          auto ann = decode_events(pred, p.vocabulary);
          while (!ann.events.empty() && ann.events.back().onset >= clip.duration()) ann.events.pop_back();
          if (!ann.events.empty())
            ann.events.back().offset = std::min(ann.events.back().offset, clip.duration());
          return events_to_py(ann, p.vocabulary);
        }, py::arg("samples"), "(onset, offset, label) events.");

  m.def("synthesize", [](const std::filesystem::path& clips, const std::filesystem::path& vocabulary,
                         std::size_t n, std::uint64_t seed, const std::filesystem::path& out) {
          const auto library = load_clip_library(clips, TechniqueVocabulary::from_file(vocabulary));
          build_dataset(library, n, seed, out);
          return out / kManifestFileName;
        }, py::arg("clips"), py::arg("vocabulary"), py::arg("n"), py::arg("seed"), py::arg("out"),
        "Builds a dataset directory and returns its manifest path.");

  m.def("train", [](const std::filesystem::path& data, std::size_t epochs, std::uint64_t seed,
                    double lr, std::size_t batch_size, std::optional<std::filesystem::path> val) {
          const auto training = read_dataset_manifest(data);
          std::optional<DatasetManifest> validation;
          if (val) validation = read_dataset_manifest(*val);
          FcnConfig cfg;
          cfg.n_classes = training.vocabulary.size();
          cfg.epochs = epochs;
          cfg.seed = seed;
          cfg.learning_rate = lr;
          cfg.batch_size = batch_size;
          py::gil_scoped_release release;
          auto result = train(cfg, training, validation ? &*validation : nullptr);
          std::vector<double> losses;
          for (const auto& h : result.history) losses.push_back(h.train_loss);
          return std::make_pair(std::move(result.params), losses);
        }, py::arg("data"), py::arg("epochs") = 30, py::arg("seed") = 0, py::arg("lr") = 1e-3,
        py::arg("batch_size") = 8, py::arg("val") = std::nullopt,
        "Returns (model, per-epoch training loss).");

  m.def("evaluate", [](const FcnParameters& p, const std::filesystem::path& manifest) {
          const auto ds = read_dataset_manifest(manifest);
          const auto report = evaluate_dataset(p, ds);
          return py::module_::import("json").attr("loads")(report_to_json(report, ds.vocabulary).dump());
        }, py::arg("model"), py::arg("manifest"));
}
