#include "adarelu/checkpoint.hpp"
#include "adarelu/commands.hpp"
#include "adarelu/image_io.hpp"
#include "adarelu/run_config.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace adarelu;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adarelu_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kTinyConfig =
    "# tiny run\n"
    "image_size = 16\n"
    "base_channels = 4\n"
    "translator_blocks = 2\n"
    "mapping_hidden = 16\n"
    "activation = sa_adarelu\n"
    "iterations = 5\n"
    "batch_size = 4\n"
    "seed = 9\n"
    "log_every = 1\n"
    "checkpoint_every = 2\n";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADARELU_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small dataset shared by the tests in this file.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("data");
    std::ostringstream log;
    cmd_gen_data(11, 32, d.string(), 16, log);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(RunConfig, DumpReloadsToIdenticalConfig) {
  const RunConfig def;
  EXPECT_EQ(RunConfig::parse(def.dump()), def);
  RunConfig c = RunConfig::parse(kTinyConfig);
  EXPECT_EQ(c.train.arch.image_size, 16);
  EXPECT_EQ(c.train.arch.activation, ActivationKind::sa_adarelu);
  c.train.adam.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.eval.mode = GuidanceMode::reference;
  c.data_dir = "some/dir";
  const RunConfig back = RunConfig::parse(c.dump());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.train.adam.lr, c.train.adam.lr);
  for (const auto& key : RunConfig::keys()) EXPECT_NE(c.dump().find(key + "="), std::string::npos) << key;
}

TEST(RunConfig, RejectsUnknownDuplicateAndBadValues) {
  EXPECT_THROW(RunConfig::parse("image_size = 16\nlearning_rate = 1\n"), std::invalid_argument);
  try {
    RunConfig::parse("bogus_key = 1\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
  }
  EXPECT_THROW(RunConfig::parse("seed = 1\nseed = 2\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("image_size = big\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("activation = swish\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::parse("image_size 16\n"), std::invalid_argument);
  EXPECT_THROW(RunConfig::load("/nonexistent/config.txt"), std::runtime_error);
}

TEST(CmdTrain, RerunsAreByteIdentical) {
  const fs::path root = scratch_dir("train");
  write_text(root / "cfg.txt", kTinyConfig);
  std::ostringstream log;
  ASSERT_EQ(cmd_train((root / "cfg.txt").string(), dataset().string(), (root / "a").string(), log), 0);
  ASSERT_EQ(cmd_train((root / "cfg.txt").string(), dataset().string(), (root / "b").string(), log), 0);
  for (const char* f : {"losses.csv", "final.adrl", "checkpoint_000002.adrl", "checkpoint_000004.adrl"}) {
    ASSERT_TRUE(fs::exists(root / "a" / f)) << f;
    EXPECT_EQ(read_bytes(root / "a" / f), read_bytes(root / "b" / f)) << f;
  }
  const std::string csv = read_bytes(root / "a" / "losses.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(RunConfig::load((root / "a" / "config.txt").string()).train.iterations, 5);
  fs::remove_all(root);
}

TEST(CmdTrain, MissingInputsAreNamedErrors) {
  const fs::path root = scratch_dir("missing");
  std::ostringstream log;
  try {
    cmd_train((root / "nope.txt").string(), dataset().string(), root.string(), log);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("missing config"), std::string::npos);
  }
  write_text(root / "cfg.txt", kTinyConfig);
  EXPECT_THROW(cmd_train((root / "cfg.txt").string(), (root / "no_data").string(), root.string(), log),
               std::runtime_error);
  write_text(root / "bad.txt", "frobnicate = 1\n");
  EXPECT_THROW(cmd_train((root / "bad.txt").string(), dataset().string(), root.string(), log), std::invalid_argument);
  EXPECT_THROW(cmd_eval((root / "none.adrl").string(), dataset().string(), GuidanceMode::latent,
                        (root / "m.csv").string(), 0, log),
               std::runtime_error);
  fs::remove_all(root);
}

TEST(CmdGradcheck, AllOpsPass) {
  std::ostringstream log;
  EXPECT_EQ(cmd_gradcheck("all", 2, log), 0);
  EXPECT_NE(log.str().find("gradcheck passed"), std::string::npos);
  EXPECT_EQ(cmd_gradcheck("adain,linear", 1, log), 0);
  EXPECT_THROW(cmd_gradcheck("adain,not_an_op", 1, log), std::invalid_argument);
}

TEST(CmdTranslate, ForcedUnitSlopeIsTheIdentityRectifier) {
  const fs::path root = scratch_dir("translate");
  ArchConfig arch;
  arch.image_size = 16;
  arch.base_channels = 4;
  arch.translator_blocks = 2;
  arch.mapping_hidden = 16;
  arch.activation = ActivationKind::adarelu;
  const auto model = TranslationModel<float>::initialize(arch, 3);
  save_checkpoint(model_checkpoint(model), (root / "m.adrl").string());
  const auto samples = generate_dataset(2, 32, 16);
  save_png(samples[0].image, (root / "src.png").string());

  TranslateOptions opt;
  opt.checkpoint = (root / "m.adrl").string();
  opt.source = (root / "src.png").string();
  opt.style = "latent:5";
  opt.out = (root / "forced.png").string();
  opt.domain = 1;
  opt.count = 3;
  opt.force_slope = 1.0;
  std::ostringstream log;
  ASSERT_EQ(cmd_translate(opt, log), 0);
  const auto grid = load_png(opt.out);
  EXPECT_EQ(grid.shape(), (Shape{1, 3, 16, 64}));

  // Same translation with the slope maps rewritten by hand: every slope is exactly 1 and
  // every rectifier passes its input through unchanged.
  auto forced = model;
  for (int b = 0; b < 2; ++b) {
    forced.params().at("gen.trans." + std::to_string(b) + ".act.affine.weight").array() = 0.0f;
    forced.params().at("gen.trans." + std::to_string(b) + ".act.affine.bias").array() = 1.0f;
  }
  std::mt19937_64 rng(mix_seed(5));
  std::vector<Tensor<float>> w;
  for (int k = 0; k < 3; ++k) w.push_back(forced.map_latent(randn<float>({1, arch.latent_dim, 1, 1}, rng), 1));
  const Tensor<float> src = load_png(opt.source);
  TranslatorTrace<float> trace;
  const auto out = forced.translate(stack(std::vector<Tensor<float>>(3, src)), stack(w), &trace);
  for (const auto& s : trace.slopes) EXPECT_TRUE((s.array() == 1.0f).all());
  for (const auto& x : trace.rectifier_inputs) {
    const auto y = rectify(x, Tensor<float>::constant({x.shape().n, x.shape().c, 1, 1}, 1.0f));
    EXPECT_TRUE((y.array() == x.array()).all());
  }
  std::vector<Tensor<float>> cells{src};
  for (Index k = 0; k < 3; ++k) cells.push_back(slice_sample(out, k));
  save_png(tile_grid(stack(cells), 4), (root / "manual.png").string());
  EXPECT_EQ(read_bytes(root / "manual.png"), read_bytes(opt.out));

  opt.style = "bogus";
  EXPECT_THROW(cmd_translate(opt, log), std::invalid_argument);
  fs::remove_all(root);
}

TEST(CmdEval, ConstantOutputCheckpointScoresZero) {
  const fs::path root = scratch_dir("eval");
  ArchConfig arch;
  arch.image_size = 16;
  arch.base_channels = 4;
  arch.translator_blocks = 2;
  arch.mapping_hidden = 16;
  arch.activation = ActivationKind::adarelu;
  auto model = TranslationModel<float>::initialize(arch, 4);
  model.params().at("gen.to_rgb.weight").array() = 0.0f;
  save_checkpoint(model_checkpoint(model), (root / "c.adrl").string());
  std::ostringstream log;
  ASSERT_EQ(cmd_eval((root / "c.adrl").string(), dataset().string(), GuidanceMode::latent,
                     (root / "metrics.csv").string(), 0, log),
            0);
  EXPECT_NE(log.str().find("diversity=0.000000 controllability=0.000000"), std::string::npos) << log.str();
  std::istringstream csv(read_bytes(root / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  int checked = 0;
  while (std::getline(csv, line)) {
    if (line.rfind("diversity,", 0) == 0 || line.rfind("controllability,", 0) == 0) {
      EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 8);
  EXPECT_TRUE(fs::exists(root / "metrics_latent_d0_to_d1.png"));
  fs::remove_all(root);
}

TEST(CmdAnalyzeStats, WritesOneRowPerTranslatorChannel) {
  const fs::path root = scratch_dir("stats");
  ArchConfig arch;
  arch.image_size = 16;
  arch.base_channels = 4;
  arch.translator_blocks = 2;
  arch.mapping_hidden = 16;
  arch.activation = ActivationKind::sa_adarelu;
  save_checkpoint(model_checkpoint(TranslationModel<float>::initialize(arch, 6)), (root / "s.adrl").string());
  std::ostringstream log;
  ASSERT_EQ(cmd_analyze_stats((root / "s.adrl").string(), dataset().string(), (root / "s.csv").string(), 1, log), 0);
  const std::string csv = read_bytes(root / "s.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * arch.translator_channels());
  fs::remove_all(root);
}

TEST(Executable, ExitCodes) {
  const fs::path root = scratch_dir("exe");
  EXPECT_EQ(run_cli("gradcheck --ops adain --seeds 2"), 0);
  EXPECT_EQ(run_cli("gradcheck --ops no_such_op"), 2);
  EXPECT_EQ(run_cli("train --config " + (root / "absent.txt").string()), 2);
  write_text(root / "bad.txt", "not_a_key = 3\n");
  EXPECT_EQ(run_cli("dump-config --config " + (root / "bad.txt").string()), 2);
  EXPECT_EQ(run_cli("dump-config --out " + (root / "d.txt").string()), 0);
  EXPECT_EQ(RunConfig::load((root / "d.txt").string()), RunConfig{});
  EXPECT_NE(run_cli("eval --checkpoint x"), 0);
  EXPECT_NE(run_cli(""), 0);
  fs::remove_all(root);
}
