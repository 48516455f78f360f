#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "lsprox/cli.hpp"

namespace {

namespace fs = std::filesystem;
using lsprox::cli::run_cli;

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("lsprox_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  REQUIRE(os.good());
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> read_metrics(const fs::path& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

}  // namespace

TEST_CASE("cli synth -> rpca -> eval pipeline") {
  const auto dir = temp_dir("pipeline");
  write_file(dir / "synth.cfg",
             "synth.frames=32\n"
             "synth.noise=0.0\n"
             "synth.seed=3\n");
  REQUIRE(run_cli({"synth", "--config", (dir / "synth.cfg").string(),
                   "--out", (dir / "scene").string()}) == 0);
  CHECK(fs::exists(dir / "scene" / "frames" / "frame_0000.pgm"));
  CHECK(fs::exists(dir / "scene" / "truth" / "mask_0031.pgm"));

  write_file(dir / "rpca.cfg",
             "data.dir=" + (dir / "scene" / "frames").string() + "\n" +
             "rpca.lambda_star=2.0\n"
             "rpca.lambda_1=0.05\n"
             "rpca.max_iter=6000\n");
  REQUIRE(run_cli({"rpca", "--config", (dir / "rpca.cfg").string(),
                   "--out", (dir / "rp").string()}) == 0);
  CHECK(fs::exists(dir / "rp" / "S" / "frame_0000.pgm"));
  CHECK(fs::exists(dir / "rp" / "S" / "frame_0000.pgm.scale.txt"));
  CHECK(fs::exists(dir / "rp" / "L" / "frame_0000.pgm"));
  CHECK(slurp(dir / "rp" / "summary.txt").find("converged\ttrue") != std::string::npos);

  write_file(dir / "eval.cfg",
             "eval.pred_dir=" + (dir / "rp" / "masks").string() + "\n" +
             "eval.truth_dir=" + (dir / "scene" / "truth").string() + "\n");
  REQUIRE(run_cli({"eval", "--config", (dir / "eval.cfg").string(),
                   "--out", (dir / "ev").string()}) == 0);
  const auto metrics = read_metrics(dir / "ev" / "metrics.txt");
  REQUIRE(metrics.count("f1") == 1);
  CHECK(std::stod(metrics.at("f1")) >= 0.9);
  fs::remove_all(dir);
}

TEST_CASE("cli train / infer determinism and shape errors") {
  const auto dir = temp_dir("train");
  write_file(dir / "synth.cfg",
             "synth.height=16\nsynth.width=16\nsynth.frames=6\n"
             "synth.object_size=4\nsynth.seed=5\n");
  REQUIRE(run_cli({"synth", "--config", (dir / "synth.cfg").string(),
                   "--out", (dir / "scene").string()}) == 0);

  const std::string train_cfg =
      "data.dir=" + (dir / "scene" / "frames").string() + "\n" +
      "unet.depth=1\nunet.base_channels=2\nunet.seed=9\n"
      "train.lambda_1=0.05\n"
      "train.phase1.epochs=3\ntrain.phase1.lr=3e-4\n"
      "train.phase2.iters=2\ntrain.phase2.lr=3e-8\n";
  write_file(dir / "train.cfg", train_cfg);
  REQUIRE(run_cli({"train", "--config", (dir / "train.cfg").string(),
                   "--out", (dir / "run1").string()}) == 0);
  REQUIRE(run_cli({"train", "--config", (dir / "train.cfg").string(),
                   "--out", (dir / "run2").string()}) == 0);

  SECTION("training runs are byte-identical for identical seeds") {
    CHECK(same_bytes(dir / "run1" / "checkpoint.bin", dir / "run2" / "checkpoint.bin"));
    CHECK(same_bytes(dir / "run1" / "phase1_loss.tsv", dir / "run2" / "phase1_loss.tsv"));
    CHECK(same_bytes(dir / "run1" / "phase2_loss.tsv", dir / "run2" / "phase2_loss.tsv"));
  }

  SECTION("a different seed changes the checkpoint") {
    REQUIRE(run_cli({"train", "--config", (dir / "train.cfg").string(),
                     "--seed", "10", "--out", (dir / "run3").string()}) == 0);
    CHECK_FALSE(same_bytes(dir / "run1" / "checkpoint.bin", dir / "run3" / "checkpoint.bin"));
  }

  SECTION("infer produces outputs and detects, and rejects wrong frame sizes") {
    write_file(dir / "infer.cfg",
               "data.dir=" + (dir / "scene" / "frames").string() + "\n" +
               "infer.checkpoint=" + (dir / "run1" / "checkpoint.bin").string() + "\n");
    REQUIRE(run_cli({"infer", "--config", (dir / "infer.cfg").string(),
                     "--out", (dir / "inf").string()}) == 0);
    CHECK(fs::exists(dir / "inf" / "S" / "frame_0000.pgm"));
    CHECK(fs::exists(dir / "inf" / "masks" / "mask_0005.pgm"));

    // frames whose extent is not divisible by 2^depth must be rejected
    write_file(dir / "synth_odd.cfg",
               "synth.height=15\nsynth.width=16\nsynth.frames=2\n"
               "synth.object_size=4\nsynth.seed=5\n");
    REQUIRE(run_cli({"synth", "--config", (dir / "synth_odd.cfg").string(),
                     "--out", (dir / "scene_odd").string()}) == 0);
    write_file(dir / "infer_odd.cfg",
               "data.dir=" + (dir / "scene_odd" / "frames").string() + "\n" +
               "infer.checkpoint=" + (dir / "run1" / "checkpoint.bin").string() + "\n");
    CHECK(run_cli({"infer", "--config", (dir / "infer_odd.cfg").string(),
                   "--out", (dir / "inf_odd").string()}) != 0);
  }

  fs::remove_all(dir);
}

TEST_CASE("cli error handling") {
  const auto dir = temp_dir("errors");

  SECTION("unknown config keys fail") {
    write_file(dir / "bad.cfg", "synth.frames=4\nsynth.oops=1\n");
    CHECK(run_cli({"synth", "--config", (dir / "bad.cfg").string(),
                   "--out", (dir / "x").string()}) != 0);
  }

  SECTION("missing required keys fail") {
    write_file(dir / "empty.cfg", "# nothing\n");
    CHECK(run_cli({"rpca", "--config", (dir / "empty.cfg").string(),
                   "--out", (dir / "x").string()}) != 0);
    CHECK(run_cli({"eval", "--config", (dir / "empty.cfg").string(),
                   "--out", (dir / "x").string()}) != 0);
  }

  SECTION("missing config file fails at parse") {
    CHECK(run_cli({"synth", "--config", (dir / "nope.cfg").string()}) != 0);
  }

  SECTION("mask count mismatch fails eval") {
    write_file(dir / "s1.cfg", "synth.frames=3\nsynth.noise=0.0\n");
    write_file(dir / "s2.cfg", "synth.frames=4\nsynth.noise=0.0\n");
    REQUIRE(run_cli({"synth", "--config", (dir / "s1.cfg").string(),
                     "--out", (dir / "a").string()}) == 0);
    REQUIRE(run_cli({"synth", "--config", (dir / "s2.cfg").string(),
                     "--out", (dir / "b").string()}) == 0);
    write_file(dir / "e.cfg",
               "eval.pred_dir=" + (dir / "a" / "truth").string() + "\n" +
               "eval.truth_dir=" + (dir / "b" / "truth").string() + "\n");
    CHECK(run_cli({"eval", "--config", (dir / "e.cfg").string(),
                   "--out", (dir / "ev").string()}) != 0);
  }

  fs::remove_all(dir);
}

TEST_CASE("cli rpca frame windows") {
  const auto dir = temp_dir("window");
  write_file(dir / "synth.cfg",
             "synth.frames=20\nsynth.noise=0.0\nsynth.seed=3\n");
  REQUIRE(run_cli({"synth", "--config", (dir / "synth.cfg").string(),
                   "--out", (dir / "scene").string()}) == 0);

  // centered window, clamped at the boundary
  write_file(dir / "rpca.cfg",
             "data.dir=" + (dir / "scene" / "frames").string() + "\n" +
             "rpca.frame=2\nrpca.window=8\nrpca.max_iter=500\n"
             "rpca.lambda_star=2.0\nrpca.lambda_1=0.05\n");
  REQUIRE(run_cli({"rpca", "--config", (dir / "rpca.cfg").string(),
                   "--out", (dir / "rp").string()}) == 0);
  // frames 0..7: window of 8 around frame 2 clamps to the start
  CHECK(fs::exists(dir / "rp" / "S" / "frame_0000.pgm"));
  CHECK(fs::exists(dir / "rp" / "S" / "frame_0007.pgm"));
  CHECK_FALSE(fs::exists(dir / "rp" / "S" / "frame_0008.pgm"));

  SECTION("window and explicit range cannot be combined") {
    write_file(dir / "conflict.cfg",
               "data.dir=" + (dir / "scene" / "frames").string() + "\n" +
               "data.start=1\nrpca.frame=5\n");
    CHECK(run_cli({"rpca", "--config", (dir / "conflict.cfg").string(),
                   "--out", (dir / "x").string()}) != 0);
  }

  fs::remove_all(dir);
}
