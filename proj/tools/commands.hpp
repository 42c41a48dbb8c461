#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace stackdenoise::cli {

namespace fs = std::filesystem;

struct PhantomOptions {
  fs::path out;
  std::size_t stacks = 8;
  std::size_t planes = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  double drift = 0.75;
  double smoothness = 3.0;
  std::uint64_t seed = 0;
  /// Apply the MRI intensity scaling to [-0.5, 0.5] per plane.
  bool scale = true;
};

struct NoiseOptions {
  fs::path manifest;
  fs::path out;
  double retain = 0.10;
  std::uint64_t seed = 0;
  std::size_t copies = 2;
};

/// Values read from the JSON config; every field may be overridden by a flag.
struct RunConfig {
  fs::path manifest;
  std::string dataset_kind = "synthetic";
  double retain = 0.10;
  std::uint64_t noise_seed = 0;
  std::size_t neighbors_per_side = 1;
  std::string sampler_mode = "self_supervised";
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr0 = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string augment = "none";
  std::size_t max_shift = 64;
  std::size_t crop = 256;
  std::string variant = "mri";
  std::optional<std::size_t> n_in;
  double width_scale = 1.0;
  fs::path out_dir;
};

RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base);
RunConfig load_run_config(const fs::path& path);

struct DenoiseOptions {
  fs::path model;
  fs::path manifest;
  fs::path out;
  bool post_process = false;
  /// "all" or one of train/val/test.
  std::string split = "all";
};

struct EvaluateOptions {
  fs::path pred;
  fs::path gt;
  std::string protocol = "mri";
  fs::path out;
  std::optional<fs::path> pred_post;
};

struct BaselineOptions {
  fs::path manifest;
  std::string mode = "direct";
  fs::path out;
  std::string split = "all";
};

struct NeighborSsimOptions {
  fs::path manifest;
  fs::path out;
  std::size_t distant = 8;
};

void cmd_phantom(const PhantomOptions& o);
void cmd_noise(const NoiseOptions& o);
void cmd_train(const RunConfig& cfg);
void cmd_denoise(const DenoiseOptions& o);
void cmd_evaluate(const EvaluateOptions& o);
void cmd_baseline(const BaselineOptions& o);
void cmd_neighbor_ssim(const NeighborSsimOptions& o);

/// Worker count from STACKDENOISE_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

}  // namespace stackdenoise::cli
