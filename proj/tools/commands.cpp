#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "stackdenoise/data/phantom.hpp"
#include "stackdenoise/data/preprocess.hpp"
#include "stackdenoise/error.hpp"
#include "stackdenoise/inference.hpp"
#include "stackdenoise/io/manifest.hpp"
#include "stackdenoise/io/npy.hpp"
#include "stackdenoise/kspace.hpp"
#include "stackdenoise/metrics.hpp"
#include "stackdenoise/nnet/checkpoint.hpp"
#include "stackdenoise/nnet/unet.hpp"
#include "stackdenoise/random.hpp"
#include "stackdenoise/stack.hpp"
#include "stackdenoise/trainer.hpp"

namespace stackdenoise::cli {

using nlohmann::json;

namespace {

std::string plane_name(std::size_t p, const std::string& what) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "plane%04zu_%s.npy", p, what.c_str());
  return buf;
}

bool in_split(const io::StackManifest& m, const std::string& split) {
  return split == "all" || io::to_string(m.split) == split;
}

void check_split_name(const std::string& split) {
  if (split != "all") io::parse_split(split);
}

/// The noisy planes of a stack: copy `c` when the manifest carries noisy
/// copies, else the plane files themselves (natively noisy data).
ImageStack load_noisy(const io::StackManifest& m, std::size_t c = 0) {
  if (m.copies.empty()) {
    require(c == 0, ErrorKind::invalid_argument, "stack '" + m.id + "' has no noisy copies");
    return io::load_stack(m);
  }
  require(c < m.copies.size(), ErrorKind::invalid_argument,
          "stack '" + m.id + "' has " + std::to_string(m.copies.size()) + " noisy copies, copy " + std::to_string(c) +
              " was requested");
  return io::load_planes(m.id, m.copies[c].noisy, m.height, m.width);
}

kspace::NoiseRealization load_realization(const io::StackManifest& m, std::size_t c, std::size_t p) {
  require(c < m.copies.size() && !m.copies[c].mask.empty() && !m.copies[c].raw_re.empty() &&
              !m.copies[c].raw_im.empty(),
          ErrorKind::unsupported,
          "stack '" + m.id + "' copy " + std::to_string(c) + " has no stored spectrum (run the noise command)");
  const auto& cf = m.copies[c];
  kspace::NoiseRealization r;
  r.noisy_image = io::read_plane(cf.noisy[p]);
  const Plane mask = io::read_plane(cf.mask[p]);
  const Plane re = io::read_plane(cf.raw_re[p]);
  const Plane im = io::read_plane(cf.raw_im[p]);
  require_same_shape(mask, re, "stored spectrum");
  require_same_shape(mask, im, "stored spectrum");
  r.mask = kspace::Mask(mask.height(), mask.width());
  r.raw_spectrum = kspace::Spectrum(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    r.mask[i] = mask[i] != 0.0 ? 1 : 0;
    r.raw_spectrum[i] = {re[i], im[i]};
  }
  r.lambda_used = m.lambda.value_or(0.0);
  return r;
}

/// Writes predicted planes and returns a manifest entry describing them.
io::StackManifest write_prediction(const io::StackManifest& src, const std::vector<Plane>& planes,
                                   const fs::path& dir) {
  io::StackManifest out;
  out.id = src.id;
  out.modality = src.modality;
  out.split = src.split;
  out.height = src.height;
  out.width = src.width;
  out.planes = planes.size();
  for (std::size_t p = 0; p < planes.size(); ++p) {
    const auto path = dir / src.id / plane_name(p, "pred");
    io::write_plane(path, planes[p]);
    out.plane_files.push_back(path);
  }
  return out;
}

json sampler_json(const SamplerConfig& s) {
  return {{"mode", to_string(s.mode)}, {"neighbors_per_side", s.neighbors_per_side}};
}

SamplerConfig sampler_from_json(const json& j) {
  SamplerConfig s;
  s.mode = parse_sampler_mode(j.at("mode").get<std::string>());
  s.neighbors_per_side = j.at("neighbors_per_side").get<std::size_t>();
  s.validate();
  return s;
}

template <typename T>
T get_or(const json& j, const char* key, const T& fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& section) {
  require(j.is_object(), ErrorKind::format, "config section '" + section + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    require(allowed.count(k) > 0, ErrorKind::format, "unknown config key '" + section + "." + k + "'");
}

}  // namespace

std::size_t worker_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("STACKDENOISE_THREADS")) {
    try {
      n = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_argument, std::string("STACKDENOISE_THREADS is not a number: '") + env + "'");
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// ---- phantom ---------------------------------------------------------------

void cmd_phantom(const PhantomOptions& o) {
  require(o.stacks >= 3, ErrorKind::invalid_argument, "need at least 3 phantom stacks to form splits");
  std::vector<std::string> ids;
  for (std::size_t s = 0; s < o.stacks; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom%03zu", s);
    ids.emplace_back(buf);
  }
  const auto splits = io::make_splits(ids, io::DatasetKind::synthetic);
  std::vector<io::StackManifest> manifest;
  for (std::size_t s = 0; s < o.stacks; ++s) {
    data::PhantomSpec spec;
    spec.planes = o.planes;
    spec.height = o.height;
    spec.width = o.width;
    spec.drift = o.drift;
    spec.smoothness = o.smoothness;
    spec.seed = derive_seed(o.seed, {s});
    spec.id = ids[s];
    ImageStack stack = data::generate_phantom_stack(spec);
    if (o.scale) stack = data::preprocess_mri(stack);

    io::StackManifest m;
    m.id = ids[s];
    m.modality = io::Modality::mri;
    m.split = splits[s];
    m.height = o.height;
    m.width = o.width;
    m.planes = o.planes;
    for (std::size_t p = 0; p < stack.size(); ++p) {
      const auto path = o.out / m.id / plane_name(p, "clean");
      io::write_plane(path, stack[p]);
      m.plane_files.push_back(path);
    }
    manifest.push_back(std::move(m));
  }
  io::save_manifest(o.out / "manifest.json", manifest);
}

// ---- noise -----------------------------------------------------------------

void cmd_noise(const NoiseOptions& o) {
  require(o.retain > 0.0 && o.retain <= 1.0, ErrorKind::invalid_argument,
          "retain fraction must lie in (0, 1], got " + std::to_string(o.retain));
  require(o.copies >= 1, ErrorKind::invalid_argument, "need at least one noisy copy");
  auto stacks = io::load_manifest(o.manifest);
  json summary{{"retain_target", o.retain}, {"seed", o.seed}, {"stacks", json::array()}};
  double total = 0.0;
  std::size_t count = 0;
  for (auto& m : stacks) {
    const ImageStack clean = io::load_stack(m);
    const double lambda = kspace::calibrate_lambda(m.height, m.width, o.retain);
    m.lambda = lambda;
    m.copies.clear();
    json sj{{"id", m.id}, {"lambda", lambda}, {"copies", json::array()}};
    for (std::size_t c = 0; c < o.copies; ++c) {
      io::CopyFiles cf;
      const fs::path dir = o.out / m.id / ("copy" + std::to_string(c));
      json fractions = json::array();
      double copy_sum = 0.0;
      for (std::size_t p = 0; p < clean.size(); ++p) {
        kspace::NoiseSpec spec;
        spec.retain_fraction = o.retain;
        spec.lambda = lambda;
        spec.seed = derive_seed(o.seed, {nn::fnv1a(m.id), p, c});
        const auto r = kspace::corrupt(clean[p], spec);
        Plane mask(m.height, m.width), re(m.height, m.width), im(m.height, m.width);
        for (std::size_t i = 0; i < mask.size(); ++i) {
          mask[i] = r.mask[i];
          re[i] = r.raw_spectrum[i].real();
          im[i] = r.raw_spectrum[i].imag();
        }
        cf.noisy.push_back(dir / plane_name(p, "noisy"));
        cf.mask.push_back(dir / plane_name(p, "mask"));
        cf.raw_re.push_back(dir / plane_name(p, "raw_re"));
        cf.raw_im.push_back(dir / plane_name(p, "raw_im"));
        io::write_plane(cf.noisy.back(), r.noisy_image);
        io::write_plane(cf.mask.back(), mask, io::DType::f4);
        io::write_plane(cf.raw_re.back(), re);
        io::write_plane(cf.raw_im.back(), im);
        const double f = r.retained_fraction();
        fractions.push_back(f);
        copy_sum += f;
        total += f;
        ++count;
      }
      sj["copies"].push_back({{"copy", c},
                              {"mean_retained_fraction", copy_sum / static_cast<double>(clean.size())},
                              {"retained_fraction", fractions}});
      m.copies.push_back(std::move(cf));
    }
    summary["stacks"].push_back(std::move(sj));
  }
  summary["mean_retained_fraction"] = count ? total / static_cast<double>(count) : 0.0;
  io::save_manifest(o.out / "manifest.json", stacks);
  io::write_file_atomic(o.out / "summary.json", summary.dump(2) + "\n");
}

// ---- train -----------------------------------------------------------------

RunConfig parse_run_config(const json& j, const fs::path& base) {
  RunConfig c;
  auto resolve = [&base](const std::string& p) {
    fs::path path = p;
    return path.is_absolute() ? path : base / path;
  };
  try {
    reject_unknown(j, {"data", "noise", "sampler", "train", "model", "out_dir"}, "config");
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"manifest", "dataset_kind"}, "data");
      if (d.contains("manifest")) c.manifest = resolve(d["manifest"].get<std::string>());
      c.dataset_kind = get_or<std::string>(d, "dataset_kind", c.dataset_kind);
    }
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      reject_unknown(n, {"retain_fraction", "seed"}, "noise");
      c.retain = get_or(n, "retain_fraction", c.retain);
      c.noise_seed = get_or(n, "seed", c.noise_seed);
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      reject_unknown(s, {"neighbors_per_side", "mode"}, "sampler");
      c.neighbors_per_side = get_or(s, "neighbors_per_side", c.neighbors_per_side);
      c.sampler_mode = get_or<std::string>(s, "mode", c.sampler_mode);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      reject_unknown(t, {"epochs", "batch_size", "lr0", "weight_decay", "seed", "augment", "max_shift", "crop"},
                     "train");
      c.epochs = get_or(t, "epochs", c.epochs);
      c.batch_size = get_or(t, "batch_size", c.batch_size);
      c.lr0 = get_or(t, "lr0", c.lr0);
      c.weight_decay = get_or(t, "weight_decay", c.weight_decay);
      c.seed = get_or(t, "seed", c.seed);
      c.augment = get_or<std::string>(t, "augment", c.augment);
      c.max_shift = get_or(t, "max_shift", c.max_shift);
      c.crop = get_or(t, "crop", c.crop);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      reject_unknown(m, {"variant", "n_in", "width_scale"}, "model");
      c.variant = get_or<std::string>(m, "variant", c.variant);
      if (m.contains("n_in")) c.n_in = m["n_in"].get<std::size_t>();
      c.width_scale = get_or(m, "width_scale", c.width_scale);
    }
    if (j.contains("out_dir")) c.out_dir = resolve(j["out_dir"].get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("bad run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path());
}

void cmd_train(const RunConfig& rc) {
  require(!rc.manifest.empty(), ErrorKind::invalid_argument, "no manifest given (data.manifest or --manifest)");
  require(!rc.out_dir.empty(), ErrorKind::invalid_argument, "no output directory given (out_dir or --out)");
  require(rc.weight_decay == 0.0, ErrorKind::invalid_argument, "weight_decay is fixed at 0");

  training::TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.lr0 = rc.lr0;
  tc.seed = rc.seed;
  tc.augment = training::parse_augment(rc.augment);
  tc.max_shift = rc.max_shift;
  tc.crop = rc.crop;
  tc.sampler.neighbors_per_side = rc.neighbors_per_side;
  tc.sampler.mode = parse_sampler_mode(rc.sampler_mode);
  tc.dataset_kind = io::parse_dataset_kind(rc.dataset_kind);
  tc.validate();

  const std::size_t n_in = rc.n_in.value_or(tc.sampler.input_width());
  require(n_in == tc.sampler.input_width(), ErrorKind::invalid_argument,
          "model.n_in = " + std::to_string(n_in) + " does not match the sampler, which produces " +
              std::to_string(tc.sampler.input_width()) + " planes");

  const auto stacks = io::load_manifest(rc.manifest);
  std::vector<StackPair> train_set, val_set;
  for (const auto& m : stacks) {
    if (m.split == io::Split::test) continue;
    ImageStack input = load_noisy(m, 0);
    ImageStack target = tc.sampler.mode == SamplerMode::copy_supervised ? load_noisy(m, 1) : input;
    (m.split == io::Split::train ? train_set : val_set).push_back({std::move(input), std::move(target)});
  }
  require(!train_set.empty(), ErrorKind::invalid_argument, "manifest has no training stacks");

  auto net = nn::build_unet<float>(nn::parse_variant(rc.variant), n_in, rc.width_scale);
  net.init_he(derive_seed(rc.seed, {0}));
  const auto result = training::train<float>(train_set, val_set, net, tc, [](const training::HistoryRow& r) {
    std::cerr << "epoch " << r.epoch << "  train_mse " << r.train_mse << "  val_mse " << r.val_mse << "  lr " << r.lr
              << "\n";
  });

  json extra{{"sampler", sampler_json(tc.sampler)}, {"best_epoch", result.best_epoch}, {"seed", rc.seed}};
  fs::create_directories(rc.out_dir);
  nn::save_params(net, rc.out_dir / "model.npz", extra);
  io::write_file_atomic(rc.out_dir / "history.json", training::history_json(result.history).dump(2) + "\n");
}

// ---- denoise ---------------------------------------------------------------

void cmd_denoise(const DenoiseOptions& o) {
  check_split_name(o.split);
  nn::CheckpointMeta meta;
  const auto net = nn::load_network<float>(o.model, &meta);
  require(meta.extra.contains("sampler"), ErrorKind::format, o.model.string() + ": checkpoint has no sampler record");
  SamplerConfig sampler;
  try {
    sampler = sampler_from_json(meta.extra["sampler"]);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, o.model.string() + ": bad sampler record: " + e.what());
  }
  require(net.n_in() == sampler.input_width(), ErrorKind::shape_mismatch,
          "model n_in " + std::to_string(net.n_in()) + " does not match its sampler width " +
              std::to_string(sampler.input_width()));

  const auto stacks = io::load_manifest(o.manifest);
  const std::size_t workers = worker_count();
  std::vector<io::StackManifest> pred_manifest, post_manifest;
  for (const auto& m : stacks) {
    if (!in_split(m, o.split)) continue;
    const ImageStack noisy = load_noisy(m, 0);
    const auto pred = denoise_stack(net, noisy, sampler, workers);
    pred_manifest.push_back(write_prediction(m, pred, o.out / "pred"));
    if (o.post_process) {
      std::vector<Plane> post;
      for (std::size_t p = 0; p < pred.size(); ++p)
        post.push_back(kspace::data_consistency(pred[p], load_realization(m, 0, p)));
      post_manifest.push_back(write_prediction(m, post, o.out / "post"));
    }
  }
  require(!pred_manifest.empty(), ErrorKind::invalid_argument, "no stacks in split '" + o.split + "'");
  io::save_manifest(o.out / "pred" / "manifest.json", pred_manifest);
  if (o.post_process) io::save_manifest(o.out / "post" / "manifest.json", post_manifest);
}

// ---- evaluate --------------------------------------------------------------

namespace {

metrics::MetricReport evaluate_manifests(const fs::path& pred_path, const fs::path& gt_path,
                                         const metrics::MetricConfig& cfg) {
  const auto preds = io::load_manifest(pred_path);
  const auto gts = io::load_manifest(gt_path);
  std::vector<ImageStack> gt_stacks, pred_stacks;
  for (const auto& p : preds) {
    const auto it = std::find_if(gts.begin(), gts.end(), [&](const auto& g) { return g.id == p.id; });
    require(it != gts.end(), ErrorKind::invalid_argument, "no ground truth for stack '" + p.id + "'");
    gt_stacks.push_back(io::load_stack(*it));
    pred_stacks.push_back(io::load_stack(p));
    require(gt_stacks.back().size() == pred_stacks.back().size(), ErrorKind::shape_mismatch,
            "stack '" + p.id + "': prediction and ground truth differ in plane count");
  }
  require(!pred_stacks.empty(), ErrorKind::invalid_argument, pred_path.string() + ": no stacks to evaluate");
  std::vector<metrics::StackPairRef> refs;
  for (std::size_t i = 0; i < gt_stacks.size(); ++i) refs.push_back({&gt_stacks[i], &pred_stacks[i]});
  return metrics::evaluate_stacks(refs, cfg);
}

}  // namespace

void cmd_evaluate(const EvaluateOptions& o) {
  metrics::MetricConfig cfg;
  cfg.protocol = metrics::parse_protocol(o.protocol);
  const auto report = evaluate_manifests(o.pred, o.gt, cfg);
  io::write_file_atomic(o.out, metrics::report_csv(report));
  json agg{{"protocol", o.protocol}, {"before", metrics::report_json(report)}};
  if (o.pred_post) {
    const auto post = evaluate_manifests(*o.pred_post, o.gt, cfg);
    auto post_csv = o.out;
    post_csv.replace_filename(o.out.stem().string() + "_post" + o.out.extension().string());
    io::write_file_atomic(post_csv, metrics::report_csv(post));
    agg["after"] = metrics::report_json(post);
  }
  auto json_path = o.out;
  json_path.replace_extension(".json");
  io::write_file_atomic(json_path, agg.dump(2) + "\n");
}

// ---- baseline --------------------------------------------------------------

void cmd_baseline(const BaselineOptions& o) {
  check_split_name(o.split);
  require(o.mode == "direct" || o.mode == "combine", ErrorKind::invalid_argument,
          "baseline mode must be direct or combine, got '" + o.mode + "'");
  const auto stacks = io::load_manifest(o.manifest);
  std::vector<io::StackManifest> out;
  for (const auto& m : stacks) {
    if (!in_split(m, o.split)) continue;
    std::vector<Plane> planes;
    if (o.mode == "direct") {
      const auto noisy = load_noisy(m, 0);
      planes.assign(noisy.planes().begin(), noisy.planes().end());
    } else {
      require(m.copies.size() >= 2, ErrorKind::invalid_argument,
              "stack '" + m.id + "' has no second noisy copy; combine mode needs two");
      for (std::size_t p = 0; p < m.planes; ++p)
        planes.push_back(kspace::combine_copies(load_realization(m, 0, p), load_realization(m, 1, p)));
    }
    out.push_back(write_prediction(m, planes, o.out));
  }
  require(!out.empty(), ErrorKind::invalid_argument, "no stacks in split '" + o.split + "'");
  io::save_manifest(o.out / "manifest.json", out);
}

// ---- neighbor-ssim ---------------------------------------------------------

void cmd_neighbor_ssim(const NeighborSsimOptions& o) {
  const auto stacks = io::load_manifest(o.manifest);
  SimilarityConfig cfg;
  cfg.distant_offsets = {o.distant};
  std::ostringstream csv;
  csv << "id,plane_i,plane_j,distance,ssim,residual_mean,residual_std\n";
  csv.precision(17);
  double adjacent = 0.0, distant = 0.0;
  std::size_t n_adj = 0, n_dist = 0;
  for (const auto& m : stacks) {
    const auto stack = io::load_stack(m);
    for (const auto& r : neighbor_similarity_report(stack, cfg)) {
      const auto d = r.plane_j - r.plane_i;
      csv << m.id << ',' << r.plane_i << ',' << r.plane_j << ',' << d << ',' << r.ssim << ',' << r.residual_mean
          << ',' << r.residual_std << '\n';
      if (d == 1) {
        adjacent += r.ssim;
        ++n_adj;
      } else {
        distant += r.ssim;
        ++n_dist;
      }
    }
  }
  io::write_file_atomic(o.out, csv.str());
  json summary{{"adjacent_mean_ssim", n_adj ? json(adjacent / static_cast<double>(n_adj)) : json(nullptr)},
               {"distance", o.distant},
               {"distant_mean_ssim", n_dist ? json(distant / static_cast<double>(n_dist)) : json(nullptr)}};
  auto json_path = o.out;
  json_path.replace_extension(".json");
  io::write_file_atomic(json_path, summary.dump(2) + "\n");
}

}  // namespace stackdenoise::cli
