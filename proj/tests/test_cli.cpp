#include <cstdlib>
#include <fstream>

#include "support.hpp"

#include "../tools/commands.hpp"
#include "stackdenoise/io/manifest.hpp"
#include "stackdenoise/io/npy.hpp"
#include "stackdenoise/nnet/checkpoint.hpp"
#include "stackdenoise/nnet/unet.hpp"

using namespace stackdenoise;
using namespace stackdenoise::cli;
namespace fs = std::filesystem;

namespace {

/// Every regular file under `dir` with its bytes, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  return out;
}

/// Small phantom set with two noisy copies: 4 stacks of 4 planes, 16x16.
fs::path noisy_dataset(const fs::path& root, double retain = 0.10) {
  PhantomOptions ph;
  ph.out = root / "clean";
  ph.stacks = 4;
  ph.planes = 4;
  ph.height = 16;
  ph.width = 16;
  ph.seed = 3;
  cmd_phantom(ph);
  NoiseOptions no;
  no.manifest = ph.out / "manifest.json";
  no.out = root / "noisy";
  no.retain = retain;
  no.seed = 5;
  cmd_noise(no);
  return no.out / "manifest.json";
}

RunConfig small_run(const fs::path& manifest, const fs::path& out) {
  RunConfig rc;
  rc.manifest = manifest;
  rc.variant = "microscopy";
  rc.width_scale = 0.25;
  rc.epochs = 2;
  rc.batch_size = 4;
  rc.seed = 11;
  rc.out_dir = out;
  return rc;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(STACKDENOISE_TOOL) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("noise is deterministic and full retention is lossless") {
  const auto root = test_support::scratch_dir("cli_noise");
  noisy_dataset(root / "a");
  noisy_dataset(root / "b");
  const auto a = snapshot(root / "a" / "noisy"), b = snapshot(root / "b" / "noisy");
  CHECK(a.size() == 4 * 4 * 2 * 4 + 2);
  CHECK(a == b);

  const auto summary = nlohmann::json::parse(io::read_file(root / "a" / "noisy" / "summary.json"));
  CHECK(summary["stacks"].size() == 4);
  CHECK(summary["stacks"][0]["copies"][1]["retained_fraction"].size() == 4);

  const auto lossless = noisy_dataset(root / "full", 1.0);
  for (const auto& m : io::load_manifest(lossless)) {
    const auto clean = io::load_stack(m);
    const auto noisy = io::load_planes(m.id, m.copies[0].noisy, m.height, m.width);
    for (std::size_t p = 0; p < clean.size(); ++p)
      for (std::size_t i = 0; i < clean[p].size(); ++i) CHECK(std::abs(noisy[p][i] - clean[p][i]) < 1e-10);
  }

  NoiseOptions bad;
  bad.manifest = root / "a" / "clean" / "manifest.json";
  bad.out = root / "bad";
  bad.retain = 0.0;
  REQUIRE_ERROR_KIND(cmd_noise(bad), ErrorKind::invalid_argument);
}

TEST_CASE("denoise with a zero-weight model returns the source planes") {
  const auto root = test_support::scratch_dir("cli_zero");
  const auto manifest = noisy_dataset(root);
  auto net = nn::build_microscopy_unet<float>(3, 0.25);
  net.zero_params();
  nn::save_params(net, root / "zero.npz",
                  {{"sampler", {{"mode", "copy_supervised"}, {"neighbors_per_side", 1}}}});

  DenoiseOptions dn;
  dn.model = root / "zero.npz";
  dn.manifest = manifest;
  dn.out = root / "out";
  dn.post_process = true;
  cmd_denoise(dn);

  const auto sources = io::load_manifest(manifest);
  const auto preds = io::load_manifest(dn.out / "pred" / "manifest.json");
  REQUIRE(preds.size() == sources.size());
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto noisy = io::load_planes(sources[s].id, sources[s].copies[0].noisy, 16, 16);
    const auto pred = io::load_stack(preds[s]);
    for (std::size_t p = 0; p < pred.size(); ++p)
      for (std::size_t i = 0; i < pred[p].size(); ++i) CHECK(std::abs(pred[p][i] - noisy[p][i]) < 1e-6);
  }
  CHECK(fs::exists(dn.out / "post" / "manifest.json"));

  SECTION("a model whose input width disagrees with its sampler is refused") {
    nn::save_params(net, root / "mismatch.npz",
                    {{"sampler", {{"mode", "self_supervised"}, {"neighbors_per_side", 1}}}});
    dn.model = root / "mismatch.npz";
    REQUIRE_ERROR_KIND(cmd_denoise(dn), ErrorKind::shape_mismatch);
  }
}

TEST_CASE("evaluate against the ground truth itself") {
  const auto root = test_support::scratch_dir("cli_eval");
  noisy_dataset(root);
  EvaluateOptions ev;
  ev.pred = root / "clean" / "manifest.json";
  ev.gt = ev.pred;
  ev.out = root / "report.csv";
  cmd_evaluate(ev);
  const auto csv = io::read_file(ev.out);
  CHECK(csv.rfind("id,plane,psnr_db,ssim,nrmse\n", 0) == 0);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(line.find(",inf,1,0") != std::string::npos);
  }
  CHECK(rows == 16);
  const auto agg = nlohmann::json::parse(io::read_file(root / "report.json"));
  CHECK(agg.contains("before"));
  CHECK(!agg.contains("after"));
}

TEST_CASE("baselines") {
  const auto root = test_support::scratch_dir("cli_baseline");
  const auto manifest = noisy_dataset(root);
  BaselineOptions bl;
  bl.manifest = manifest;
  bl.out = root / "direct";
  cmd_baseline(bl);
  bl.mode = "combine";
  bl.out = root / "combine";
  cmd_baseline(bl);

  EvaluateOptions ev;
  ev.gt = root / "clean" / "manifest.json";
  ev.pred = root / "direct" / "manifest.json";
  ev.out = root / "direct.csv";
  ev.pred_post = root / "combine" / "manifest.json";
  cmd_evaluate(ev);
  const auto agg = nlohmann::json::parse(io::read_file(root / "direct.json"));
  CHECK(agg["after"]["psnr_db"]["mean"].get<double>() > agg["before"]["psnr_db"]["mean"].get<double>());
  CHECK(fs::exists(root / "direct_post.csv"));

  SECTION("combine needs a second copy") {
    NoiseOptions no;
    no.manifest = root / "clean" / "manifest.json";
    no.out = root / "one_copy";
    no.copies = 1;
    cmd_noise(no);
    bl.manifest = no.out / "manifest.json";
    bl.out = root / "combine1";
    REQUIRE_ERROR_KIND(cmd_baseline(bl), ErrorKind::invalid_argument);
  }
  SECTION("unknown mode and split") {
    bl.mode = "median";
    REQUIRE_ERROR_KIND(cmd_baseline(bl), ErrorKind::invalid_argument);
    bl.mode = "direct";
    bl.split = "holdout";
    REQUIRE_ERROR_KIND(cmd_baseline(bl), ErrorKind::format);
  }
}

TEST_CASE("training twice with one seed gives identical artifacts") {
  const auto root = test_support::scratch_dir("cli_train");
  const auto manifest = noisy_dataset(root);
  cmd_train(small_run(manifest, root / "a"));
  cmd_train(small_run(manifest, root / "b"));
  CHECK(io::read_file(root / "a" / "history.json") == io::read_file(root / "b" / "history.json"));
  CHECK(io::read_file(root / "a" / "model.npz") == io::read_file(root / "b" / "model.npz"));

  auto rc = small_run(manifest, root / "c");
  rc.seed = 12;
  cmd_train(rc);
  CHECK(io::read_file(root / "a" / "model.npz") != io::read_file(root / "c" / "model.npz"));

  SECTION("copy mode trains on the second copy") {
    rc.sampler_mode = "copy_supervised";
    rc.out_dir = root / "copy";
    cmd_train(rc);
    CHECK(nn::load_network<float>(root / "copy" / "model.npz").n_in() == 3);
  }
  SECTION("n_in must agree with the sampler") {
    rc.n_in = 3;
    REQUIRE_ERROR_KIND(cmd_train(rc), ErrorKind::invalid_argument);
  }
  SECTION("weight decay is fixed") {
    rc.weight_decay = 1e-4;
    REQUIRE_ERROR_KIND(cmd_train(rc), ErrorKind::invalid_argument);
  }
}

TEST_CASE("run config parsing") {
  const auto j = nlohmann::json::parse(R"({
    "data": {"manifest": "data/manifest.json", "dataset_kind": "mri"},
    "noise": {"retain_fraction": 0.1, "seed": 2},
    "sampler": {"neighbors_per_side": 2, "mode": "self_supervised"},
    "train": {"epochs": 3, "batch_size": 2, "lr0": 0.001, "seed": 9, "augment": "mri_translate"},
    "model": {"variant": "mri", "n_in": 4, "width_scale": 0.5},
    "out_dir": "/abs/out"
  })");
  const auto rc = parse_run_config(j, "/base");
  CHECK(rc.manifest == fs::path("/base/data/manifest.json"));
  CHECK(rc.out_dir == fs::path("/abs/out"));
  CHECK(rc.neighbors_per_side == 2);
  CHECK(rc.n_in == std::optional<std::size_t>(4));
  CHECK(rc.epochs == 3);
  CHECK(rc.width_scale == 0.5);

  auto extra = j;
  extra["train"]["momentum"] = 0.9;
  REQUIRE_ERROR_KIND(parse_run_config(extra, "/base"), ErrorKind::format);
  auto wrong_type = j;
  wrong_type["train"]["epochs"] = "many";
  REQUIRE_ERROR_KIND(parse_run_config(wrong_type, "/base"), ErrorKind::format);
}

TEST_CASE("the executable reports errors through its exit code") {
  const auto root = test_support::scratch_dir("cli_exe");
  CHECK(run_tool("--help") == 0);
  CHECK(run_tool("train --help") == 0);
  CHECK(run_tool("noise --manifest x --out y --bogus 1") != 0);
  CHECK(run_tool("") != 0);
  CHECK(run_tool("noise --manifest " + (root / "missing.json").string() + " --out " + (root / "o").string()) == 2);
  CHECK(run_tool("phantom --out " + (root / "ph").string() + " --stacks 3 --planes 2 --height 16 --width 16") == 0);
  CHECK(fs::exists(root / "ph" / "manifest.json"));
}

TEST_CASE("worker count honors the environment") {
  ::setenv("STACKDENOISE_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  ::setenv("STACKDENOISE_THREADS", "0", 1);
  CHECK(worker_count() >= 1);
  ::setenv("STACKDENOISE_THREADS", "lots", 1);
  REQUIRE_ERROR_KIND(worker_count(), ErrorKind::invalid_argument);
  ::unsetenv("STACKDENOISE_THREADS");
}
