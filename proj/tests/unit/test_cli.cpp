#include "cli.hpp"
#include "msnn/checkpoint.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using msnn::cli::RunConfig;
using msnn::cli::UsageError;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return msnn::cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msnn_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

// Small two-class band-power set: 6 channels, 128 samples at 64 Hz.
fs::path small_dataset(const std::string& name) {
  const fs::path dir = scratch(name);
  const int rc = run_cli({"synth", "bandpower", "--out", dir.string(), "--trials", "24", "--channels", "6",
                          "--samples", "128", "--fs", "64", "--seed", "3"});
  REQUIRE(rc == 0);
  return dir / "data.epch";
}

struct EnvSeed {
  explicit EnvSeed(const char* v) { setenv("MSNN_SEED", v, 1); }
  ~EnvSeed() { unsetenv("MSNN_SEED"); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("size lists") {
  CHECK(msnn::cli::parse_size_list("100, 60,20") == std::vector<std::size_t>{100, 60, 20});
  CHECK_THROWS_AS(msnn::cli::parse_size_list(""), UsageError);
  CHECK_THROWS_AS(msnn::cli::parse_size_list("1,,2"), UsageError);
  CHECK_THROWS_AS(msnn::cli::parse_size_list("1,-2"), UsageError);
}

TEST_CASE("settings by key") {
  RunConfig c;
  c.set("train.lr0", "0.005");
  CHECK(c.train.lr0 == 0.005);
  c.set("model.kernel_sizes", "20,10,5");
  CHECK(c.model.T == std::vector<std::size_t>{20, 10, 5});
  CHECK(c.kernels_explicit);
  c.set("train.schedule", "exponential");
  CHECK(c.train.schedule == msnn::LrSchedule::Exponential);
  c.set("preproc.bandpass", "yes");
  CHECK(c.preproc.bandpass);
  CHECK_THROWS_AS(c.set("train.nonsense", "1"), UsageError);
  CHECK_THROWS_AS(c.set("train.max_epochs", "ten"), UsageError);
  CHECK_THROWS_AS(c.set("train.max_epochs", "-1"), UsageError);
  CHECK_THROWS_AS(c.set("preproc.normalize", "maybe"), UsageError);
  CHECK_THROWS_AS(c.set("model.preset", "alpha"), UsageError);
}

TEST_CASE("config text round trip") {
  RunConfig a;
  a.set("train.lr0", "0.1");
  a.set("detect.threshold", "0.65");
  a.set("synth.records", "4");
  a.set("run.seed", "99");
  RunConfig b;
  msnn::cli::apply_config_text(b, a.to_text());
  CHECK(b.entries() == a.entries());
  CHECK(b.to_text() == a.to_text());
  CHECK(a.to_text().find("[train]\n") != std::string::npos);

  RunConfig c;
  msnn::cli::apply_config_text(c, "# comment\n[train]\nlr0 = 0.2  # trailing\n\n[detect]\nthreshold=0.5\n");
  CHECK(c.train.lr0 == 0.2);
  CHECK(c.detection.threshold == 0.5);
  CHECK_THROWS_AS(msnn::cli::apply_config_text(c, "lr0 = 0.2\n"), UsageError);
  CHECK_THROWS_AS(msnn::cli::apply_config_text(c, "[train\nlr0 = 0.2\n"), UsageError);
  CHECK_THROWS_AS(msnn::cli::apply_config_text(c, "[train]\nlr0\n"), UsageError);
}

TEST_CASE("presets and seed resolution") {
  RunConfig c;
  c.set("model.preset", "ssvep");
  c.resolve(nullptr);
  CHECK(c.model.T == msnn::kSsvepKernels);

  RunConfig conflict;
  conflict.set("model.preset", "mi");
  conflict.set("model.kernel_sizes", "10,5");
  CHECK_THROWS_AS(conflict.resolve(nullptr), UsageError);

  RunConfig env;
  env.resolve("17");
  CHECK(env.seed == 17);
  RunConfig explicit_seed;
  explicit_seed.set("run.seed", "5");
  explicit_seed.resolve("17");
  CHECK(explicit_seed.seed == 5);
  RunConfig bad;
  CHECK_THROWS_AS(bad.resolve("abc"), UsageError);
}

TEST_CASE("exit codes for bad invocations") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"synth", "bandpower"}) == 2);
  CHECK(run_cli({"synth", "noise", "--out", scratch("kind").string()}) == 2);
  const fs::path unknown = scratch("unknown");
  CHECK(run_cli({"synth", "bandpower", "--out", unknown.string(), "--synth.bogus", "1"}) == 2);
  CHECK_FALSE(fs::exists(unknown));
  CHECK(run_cli({"eval", "--out", scratch("nomode").string()}) == 2);
  CHECK(run_cli({"eval", "--out", scratch("missing").string(), "--checkpoint", "/nonexistent.ckpt", "--data",
                 "/nonexistent.epch"}) == 1);
}

TEST_CASE("synth writes data, truth and a manifest") {
  const fs::path dir = scratch("synth");
  REQUIRE(run_cli({"synth", "ssvep", "--out", dir.string(), "--trials", "8", "--snr", "2", "--seed", "4",
                   "--synth.harmonics=3"}) == 0);
  CHECK(fs::exists(dir / "data.epch"));
  CHECK(fs::exists(dir / "data.truth.json"));
  CHECK(slurp(dir / "config.txt").find("harmonics = 3") != std::string::npos);
  const auto m = manifest(dir);
  CHECK(m["command"] == "synth ssvep");
  CHECK(m["seed"] == 4);
  bool listed = false;
  for (const auto& o : m["outputs"]) listed = listed || o["name"] == "data.epch";
  CHECK(listed);
  const auto data = msnn::read_epochs(dir / "data.epch");
  CHECK(data.size() == 8);
  CHECK(data.n_classes == 4);

  // reusing a populated directory is refused
  CHECK(run_cli({"synth", "ssvep", "--out", dir.string(), "--trials", "8"}) == 1);
}

TEST_CASE("identical seeds give identical bytes") {
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  REQUIRE(run_cli({"synth", "bandpower", "--out", a.string(), "--trials", "6", "--seed", "8"}) == 0);
  {
    EnvSeed env("8");
    REQUIRE(run_cli({"synth", "bandpower", "--out", b.string(), "--trials", "6"}) == 0);
  }
  REQUIRE(run_cli({"synth", "bandpower", "--out", c.string(), "--trials", "6", "--seed", "9"}) == 0);
  CHECK(slurp(a / "data.epch") == slurp(b / "data.epch"));
  CHECK(slurp(a / "data.epch") != slurp(c / "data.epch"));
}

TEST_CASE("preset conflict leaves no outputs") {
  const fs::path data = small_dataset("conflict_data");
  const fs::path out = scratch("conflict");
  CHECK(run_cli({"train", "--data", data.string(), "--out", out.string(), "--preset", "mi", "--kernel-sizes",
                 "8,4"}) == 2);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("invalid model settings are reported as usage errors") {
  const fs::path data = small_dataset("invalid_data");
  const fs::path out = scratch("invalid");
  CHECK(run_cli({"train", "--data", data.string(), "--out", out.string(), "--kernel-sizes", "8,4", "--maps",
                 "2,4"}) == 2);
}

TEST_CASE("train, evaluate and analyze a small model") {
  const fs::path data = small_dataset("pipeline_data");
  const fs::path cfg = scratch("pipeline.cfg");
  std::ofstream(cfg) << "[model]\nkernel_sizes = 8,4\nmaps = 2,4,4\nf_s = 16\n[train]\nmax_epochs = 2\npatience = 2\n";
  const fs::path tr = scratch("pipeline_train");
  REQUIRE(run_cli({"train", "--data", data.string(), "--out", tr.string(), "--config", cfg.string(), "--seed", "1"}) ==
          0);
  for (const char* f : {"model.ckpt", "train_report.json", "train_curve.csv", "config.txt", "manifest.json"}) {
    CHECK(fs::exists(tr / f));
  }
  CHECK(manifest(tr)["config_file"] == cfg.string());
  const auto model = msnn::load(tr / "model.ckpt");
  CHECK(model.config.T == std::vector<std::size_t>{8, 4});
  CHECK(model.norm.has_value());

  const fs::path ev = scratch("pipeline_eval");
  REQUIRE(run_cli({"eval", "--out", ev.string(), "--checkpoint", (tr / "model.ckpt").string(), "--data",
                   data.string()}) == 0);
  const auto result = nlohmann::json::parse(slurp(ev / "eval.json"));
  CHECK(result["accuracy"].get<double>() >= 0.0);
  CHECK(fs::exists(ev / "confusion.csv"));
  CHECK(fs::exists(ev / "predictions.csv"));

  const fs::path pat = scratch("pipeline_patterns");
  REQUIRE(run_cli({"analyze", "patterns", "--out", pat.string(), "--checkpoint", (tr / "model.ckpt").string(),
                   "--data", data.string(), "--branch", "2"}) == 0);
  CHECK(fs::exists(pat / "patterns_branch2.csv"));
  CHECK_FALSE(fs::exists(pat / "patterns_branch1.csv"));

  const fs::path psd = scratch("pipeline_psd");
  REQUIRE(run_cli({"analyze", "psd", "--out", psd.string(), "--data", data.string(), "--channel", "2"}) == 0);
  CHECK(slurp(psd / "psd.csv").rfind("freq,power\n", 0) == 0);

  CHECK(run_cli({"analyze", "saliency", "--out", scratch("pipeline_bad").string(), "--data", data.string()}) == 2);
  fs::remove(cfg);
}

TEST_CASE("k-fold evaluation from the command line") {
  const fs::path data = small_dataset("kfold_data");
  const fs::path out = scratch("kfold");
  REQUIRE(run_cli({"eval", "--out", out.string(), "--kfold", "2", "--data", data.string(), "--kernel-sizes", "8,4",
                   "--maps", "2,4,4", "--model.f_s", "16", "--epochs", "2", "--patience", "1", "--seed", "2"}) == 0);
  const auto k = nlohmann::json::parse(slurp(out / "kfold.json"));
  CHECK(k["folds"].size() == 2);
  CHECK(fs::exists(out / "folds.csv"));
  CHECK(manifest(out)["overrides"].size() >= 5);
}

}  // TEST_SUITE
