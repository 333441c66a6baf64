#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "energy_attack/energy_attack.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() {
    struct Scratch {
      fs::path path = fs::temp_directory_path() / ("energy_attack_cli_" + std::to_string(::getpid()));
      Scratch() { fs::create_directories(path); }
      ~Scratch() {
        std::error_code ec;
        fs::remove_all(path, ec);
      }
    };
    static const Scratch s;
    return s.path;
  }

  static int run(const std::string& args) {
    const std::string cmd = std::string("\"") + EA_CLI_PATH + "\" " + args + " > \"" + (dir() / "last.log").string() +
                            "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string log() { return ea::read_file(dir() / "last.log"); }
  static std::string p(const std::string& name) { return "\"" + (dir() / name).string() + "\""; }

  // Small trained synth MLP shared by the attack tests.
  static void ensure_model() {
    static bool done = false;
    if (done) return;
    ASSERT_EQ(run("train --dataset synth --synth-size 200 --epochs 2 --seed 1 --out " + p("synth.eam")), 0) << log();
    done = true;
  }
};

}  // namespace

TEST_F(Cli, TrainSynthReportsAccuracy) {
  ASSERT_EQ(run("train --dataset synth --synth-size 300 --epochs 3 --seed 4 --out " + p("a.eam")), 0) << log();
  const ea::Model m = ea::load_model(dir() / "a.eam");
  EXPECT_GE(m.train_accuracy(), 0.99);
  EXPECT_NE(log().find("train accuracy"), std::string::npos);
}

TEST_F(Cli, TrainIsReproducible) {
  ASSERT_EQ(run("train --dataset synth --synth-size 100 --epochs 1 --seed 9 --out " + p("r1.eam")), 0);
  ASSERT_EQ(run("train --dataset synth --synth-size 100 --epochs 1 --seed 9 --out " + p("r2.eam")), 0);
  EXPECT_EQ(ea::read_file(dir() / "r1.eam"), ea::read_file(dir() / "r2.eam"));
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("train --out " + p("x.eam")), 2);
  EXPECT_NE(log().find("--dataset"), std::string::npos);
  EXPECT_EQ(run("train --dataset " + p("does-not-exist.idx") + " --labels x --out " + p("x.eam")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --dataset synth --strategy greedy --out " + p("x.eam")), 2);
  ensure_model();
  EXPECT_EQ(run("attack --dataset synth --model " + p("synth.eam") + " --baseline square --out " + p("x.jsonl")), 2)
      << "epsilon has no default";
}

TEST_F(Cli, IoAndFormatErrors) {
  ensure_model();
  EXPECT_EQ(run("attack --dataset synth --eps 0.1 --model " + p("missing.eam") + " --baseline square --out " +
                p("x.jsonl")),
            3);
  ea::write_file(dir() / "junk.eam", "not a model at all");
  EXPECT_EQ(run("attack --dataset synth --eps 0.1 --model " + p("junk.eam") + " --baseline square --out " +
                p("x.jsonl")),
            4);
}

TEST_F(Cli, ExtractAndAttackPipeline) {
  ensure_model();
  const std::string common = " --dataset synth --synth-size 200 --model " + p("synth.eam") + " --seed 3";
  ASSERT_EQ(run("extract" + common + " --limit 20 --eps 0.3 --iters 5 --out " + p("synth.eab")), 0) << log();
  const ea::EnergyBasis b = ea::load_basis(dir() / "synth.eab");
  EXPECT_EQ(b.size(), 25u);
  EXPECT_EQ(b.tag(), "synth");
  ASSERT_EQ(run("extract" + common + " --limit 20 --eps 0.3 --iters 5 --out " + p("synth2.eab")), 0);
  EXPECT_EQ(ea::read_file(dir() / "synth.eab"), ea::read_file(dir() / "synth2.eab"));
  ASSERT_EQ(run("extract" + common + " --limit 20 --eps 0.3 --iters 5 --stride 5 --out " + p("strided.eab")), 0);
  EXPECT_NE(ea::load_basis(dir() / "strided.eab").energies(), b.energies());

  ASSERT_EQ(run("attack" + common + " --limit 10 --eps 1.0 --basis " + p("synth.eab") + " --out " + p("e.jsonl")), 0)
      << log();
  const auto summary = nlohmann::json::parse(ea::read_file(dir() / "e.jsonl.summary.json"));
  EXPECT_EQ(summary["asr"], 100.0);
  EXPECT_EQ(summary["basis_tag"], "synth");
  std::istringstream lines(ea::read_file(dir() / "e.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"image_id", "seed", "success", "queries", "final_margin", "epsilon", "strategy", "basis_tag"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++n;
  }
  EXPECT_EQ(n, summary["n_images"].get<std::size_t>());

  for (const char* strat : {"--strategy prob", "--strategy batch --tau 1"}) {
    ASSERT_EQ(run("attack" + common + " --limit 6 --eps 0.3 --max-queries 500 " + strat + " --basis " +
                  p("synth.eab") + " --out " + p("s.jsonl")),
              0)
        << log();
  }
}

TEST_F(Cli, UnattackableModelGivesZeroAsr) {
  // Constant logits favoring class 0; synth label 0 images are always "correct".
  std::vector<ea::Layer> layers;
  layers.emplace_back(ea::Flatten{});
  layers.emplace_back(ea::Dense{784, 2, std::vector<double>(1568, 0.0), {10.0, 0.0}});
  ea::save_model(ea::Model({1, 28, 28}, 2, std::move(layers)), dir() / "const.eam");
  ASSERT_EQ(run("attack --dataset synth --synth-size 20 --eps 0.3 --max-queries 30 --baseline square --model " +
                p("const.eam") + " --out " + p("c.jsonl")),
            0)
      << log();
  const auto summary = nlohmann::json::parse(ea::read_file(dir() / "c.jsonl.summary.json"));
  EXPECT_EQ(summary["asr"], 0.0);
  EXPECT_FALSE(summary.contains("avg_queries"));
  EXPECT_EQ(summary["n_images"], 10);
}

TEST_F(Cli, ConfigFileFlagsWin) {
  ea::write_file(dir() / "run.cfg", "dataset=synth\nsynth-size=100\nepochs=1\nseed=5\n");
  ASSERT_EQ(run("train --config " + p("run.cfg") + " --out " + p("cfg1.eam")), 0) << log();
  ASSERT_EQ(run("train --dataset synth --synth-size 100 --epochs 1 --seed 5 --out " + p("cfg2.eam")), 0);
  EXPECT_EQ(ea::read_file(dir() / "cfg1.eam"), ea::read_file(dir() / "cfg2.eam"));
  ASSERT_EQ(run("train --config " + p("run.cfg") + " --seed 6 --out " + p("cfg3.eam")), 0);
  EXPECT_NE(ea::read_file(dir() / "cfg1.eam"), ea::read_file(dir() / "cfg3.eam"));
}

TEST_F(Cli, AnalyzeWritesHeatmapAndCsv) {
  ensure_model();
  const std::string common = " --dataset synth --synth-size 200 --model " + p("synth.eam") + " --limit 10 --eps 0.3 --iters 3";
  ASSERT_EQ(run("extract" + common + " --out " + p("an1.eab")), 0) << log();
  ASSERT_EQ(run("analyze --basis " + p("an1.eab") + " --basis " + p("an1.eab") + " --with-random --out " + p("heat")), 0)
      << log();
  const ea::GrayImage g = ea::parse_pgm(ea::read_file(dir() / "heat.pgm"));
  EXPECT_EQ(g.width, 27u);
  EXPECT_EQ(g.height, 27u);
  EXPECT_EQ(g.pixels[0], 255);
  EXPECT_EQ(g.pixels[9], 255);  // same basis twice: identity in the off-diagonal block
  EXPECT_NE(ea::read_file(dir() / "heat.csv").find("RND#0"), std::string::npos);

  ASSERT_EQ(run("extract" + common + " --patch-size 3 --out " + p("an3.eab")), 0);
  EXPECT_EQ(run("analyze --basis " + p("an1.eab") + " --basis " + p("an3.eab") + " --out " + p("bad")), 2);
  EXPECT_NE(log().find("dimension"), std::string::npos);
}
