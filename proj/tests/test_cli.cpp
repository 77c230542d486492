#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "techdet/checkpoint.hpp"
#include "techdet/cli.hpp"
#include "techdet/dataset_synth.hpp"
#include "test_support.hpp"

using namespace techdet;
using techdet::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// A toy library plus a 4-segment dataset shared by most cases.
struct Fixture {
  TempDir dir;
  techdet::testing::ToyLibraryFiles lib;
  Fixture() {
    lib = techdet::testing::write_toy_library(dir / "lib", 4, 5);
    const Run r = run({"synth", "--clips", lib.clips_csv.string(), "--vocabulary",
                       lib.vocabulary.string(), "-n", "4", "--seed", "3", "--out",
                       (dir / "data").string()});
    REQUIRE(r.code == 0);
  }
  std::string manifest() const { return (dir / "data" / "manifest.json").string(); }
  std::string train_small(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--data", manifest(), "--widths", "4,4,4,4",
                                  "--epochs", "2", "--batch-size", "2", "--out",
                                  (dir / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const Run r = run(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    return (dir / name).string();
  }
};

}  // namespace

TEST_CASE("usage and exit codes") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"synth", "--help"}).code == 0);
  const Run missing = run({"synth", "--out", "x"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--clips") != std::string::npos);
}

TEST_CASE("synth writes a reproducible dataset") {
  Fixture f;
  const auto m = read_dataset_manifest(f.manifest());
  CHECK(m.segments.size() == 4);
  CHECK(std::filesystem::exists(f.dir / "data" / "run.log"));

  const Run again = run({"synth", "--clips", f.lib.clips_csv.string(), "--vocabulary",
                         f.lib.vocabulary.string(), "-n", "4", "--seed", "3", "--out",
                         (f.dir / "again").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(f.manifest()) == slurp(f.dir / "again" / "manifest.json"));
  CHECK(slurp(f.dir / "data" / "segment_00002.wav") == slurp(f.dir / "again" / "segment_00002.wav"));
}

TEST_CASE("synth reports a missing clip by path") {
  TempDir dir;
  const auto lib = techdet::testing::write_toy_library(dir / "lib", 1, 1);
  std::ofstream(lib.clips_csv, std::ios::app) << "ghost_clip.wav,tone\n";
  const Run r = run({"synth", "--clips", lib.clips_csv.string(), "--vocabulary",
                     lib.vocabulary.string(), "--out", (dir / "d").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("ghost_clip.wav") != std::string::npos);
}

TEST_CASE("train, detect, eval and viz") {
  Fixture f;
  const std::string ckpt = f.train_small("m.ckpt");
  CHECK(count_lines(ckpt + ".history.csv") == 3);
  CHECK(std::filesystem::exists(ckpt + ".run.log"));
  const auto params = load_checkpoint(ckpt);
  CHECK(params.vocabulary == techdet::testing::toy_vocabulary());
  CHECK(params.config.widths == std::array<std::size_t, 4>{4, 4, 4, 4});

  SUBCASE("training output is deterministic") {
    const std::string again = f.train_small("m2.ckpt");
    CHECK(slurp(ckpt) == slurp(again));
    CHECK(slurp(ckpt + ".history.csv") == slurp(again + ".history.csv"));
  }

  SUBCASE("zero learning rate stores the initialization") {
    const std::string frozen = f.train_small("frozen.ckpt", {"--lr", "0", "--seed", "9"});
    FcnConfig cfg = load_checkpoint(frozen).config;
    CHECK(load_checkpoint(frozen).values == init_params(cfg, 9).values);
  }

  SUBCASE("detect covers the whole recording") {
    const auto seg = read_dataset_manifest(f.manifest()).segments[0];
    const std::string wav = (f.dir / "data" / seg.audio).string();
    const std::string events = (f.dir / "events.jsonl").string();
    const Run r = run({"detect", "--checkpoint", ckpt, "--wav", wav, "--out", events,
                       "--dump-posteriors", (f.dir / "p.pred").string()});
    REQUIRE(r.code == 0);
    const auto ann = read_annotation(events, techdet::testing::toy_vocabulary());
    REQUIRE_FALSE(ann.events.empty());
    CHECK(ann.events.front().onset == 0.0);
    CHECK(ann.events.back().offset == doctest::Approx(10.0));
    CHECK(std::filesystem::file_size(f.dir / "p.pred") == 12 + 4 * 4 * 200);

    // 12.3 s recording: events stop at the clip end.
    write_wav(f.dir / "long.wav", techdet::testing::sine_clip(12.3, 440.0));
    REQUIRE(run({"detect", "--checkpoint", ckpt, "--wav", (f.dir / "long.wav").string(),
                 "--out", events}).code == 0);
    const auto long_ann = read_annotation(events, techdet::testing::toy_vocabulary());
    CHECK(long_ann.events.back().offset == doctest::Approx(12.3));
  }

  SUBCASE("corrupt checkpoint is an input error") {
    std::ofstream(f.dir / "bad.ckpt") << "not a model";
    const Run r = run({"detect", "--checkpoint", (f.dir / "bad.ckpt").string(), "--wav",
                       (f.dir / "data" / "segment_00000.wav").string(), "--out",
                       (f.dir / "e.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("bad.ckpt") != std::string::npos);
  }

  SUBCASE("eval with a model and with the oracle") {
    const std::string report = (f.dir / "report.json").string();
    const Run r = run({"eval", "--checkpoint", ckpt, "--manifest", f.manifest(), "--out",
                       report, "--viz-dir", (f.dir / "viz").string(), "--viz-count", "2"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("segment_accuracy").size() == 4);
    CHECK(count_lines(report + ".csv") == 5);
    CHECK(std::distance(std::filesystem::directory_iterator(f.dir / "viz"),
                        std::filesystem::directory_iterator{}) == 2);

    REQUIRE(run({"eval", "--oracle", "--manifest", f.manifest(), "--out", report}).code == 0);
    CHECK(nlohmann::json::parse(slurp(report)).at("average_accuracy") == 1.0);
  }

  SUBCASE("viz draws one rect per event") {
    const auto seg = read_dataset_manifest(f.manifest()).segments[1];
    const std::string ref = (f.dir / "data" / seg.annotation).string();
    const std::string svg = (f.dir / "roll.svg").string();
    REQUIRE(run({"viz", "--reference", ref, "--predicted", ref, "--vocabulary",
                 f.lib.vocabulary.string(), "--out", svg}).code == 0);
    const std::string text = slurp(svg);
    const std::regex rect("<rect ");
    const auto n_rects = std::distance(
        std::sregex_iterator(text.begin(), text.end(), rect), std::sregex_iterator());
    CHECK(static_cast<std::size_t>(n_rects) ==
          2 * read_annotation(ref, techdet::testing::toy_vocabulary()).events.size());
  }
}

TEST_CASE("train rejects a class count that disagrees with the vocabulary") {
  Fixture f;
  const Run r = run({"train", "--data", f.manifest(), "--k", "5", "--epochs", "1", "--out",
                     (f.dir / "k.ckpt").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("vocabulary") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(f.dir / "k.ckpt"));
  CHECK(run({"train", "--data", f.manifest(), "--widths", "4,4", "--out",
             (f.dir / "w.ckpt").string()}).code == 1);
}

TEST_CASE("config files feed options, explicit flags win") {
  Fixture f;
  std::ofstream(f.dir / "train.cfg") << "# small run\nepochs = 3\nwidths=4,4,4,4\nbatch_size=2\nlr=0.01\n";
  const std::string ckpt = (f.dir / "c.ckpt").string();
  const Run r = run({"train", "--data", f.manifest(), "--config", (f.dir / "train.cfg").string(),
                     "--epochs", "1", "--out", ckpt});
  REQUIRE(r.code == 0);
  CHECK(count_lines(ckpt + ".history.csv") == 2);
  const auto cfg = load_checkpoint(ckpt).config;
  CHECK(cfg.widths[0] == 4);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.learning_rate == 0.01);
  CHECK(slurp(ckpt + ".run.log").find("epochs=1") != std::string::npos);

  std::ofstream(f.dir / "bad.cfg") << "epochs\n";
  CHECK(run({"train", "--data", f.manifest(), "--config", (f.dir / "bad.cfg").string(),
             "--out", ckpt}).code == 1);
  CHECK(run({"train", "--data", f.manifest(), "--config", (f.dir / "absent.cfg").string(),
             "--out", ckpt}).code == 1);
}
