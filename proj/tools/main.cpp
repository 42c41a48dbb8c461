#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "stackdenoise/error.hpp"

using namespace stackdenoise::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multiplane stack denoising: noise synthesis, training, inference and evaluation"};
  app.require_subcommand(1);

  PhantomOptions ph;
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic clean stacks and a manifest");
  phantom->add_option("--out", ph.out, "Output directory")->required();
  phantom->add_option("--stacks", ph.stacks, "Number of stacks")->capture_default_str();
  phantom->add_option("--planes", ph.planes, "Planes per stack")->capture_default_str();
  phantom->add_option("--height", ph.height, "Plane height")->capture_default_str();
  phantom->add_option("--width", ph.width, "Plane width")->capture_default_str();
  phantom->add_option("--drift", ph.drift, "Field distance between consecutive planes")->capture_default_str();
  phantom->add_option("--smoothness", ph.smoothness, "Texture correlation length in pixels")->capture_default_str();
  phantom->add_option("--seed", ph.seed, "Random seed")->capture_default_str();
  phantom->add_flag("!--no-scale", ph.scale, "Keep raw intensities instead of scaling each plane to [-0.5, 0.5]");

  NoiseOptions no;
  auto* noise = app.add_subcommand("noise", "Write k-space undersampled noisy copies of every plane");
  noise->add_option("--manifest", no.manifest, "Clean dataset manifest")->required();
  noise->add_option("--out", no.out, "Output directory")->required();
  noise->add_option("--retain", no.retain, "Expected fraction of retained frequencies")->capture_default_str();
  noise->add_option("--seed", no.seed, "Random seed")->capture_default_str();
  noise->add_option("--copies", no.copies, "Independent noisy copies per plane")->capture_default_str();

  std::string config_path;
  RunConfig over;
  auto* train = app.add_subcommand("train", "Train a denoising network");
  train->add_option("--config", config_path, "JSON run configuration")->required();
  auto* o_manifest = train->add_option("--manifest", over.manifest, "Override data.manifest");
  auto* o_kind = train->add_option("--dataset-kind", over.dataset_kind, "Override data.dataset_kind");
  auto* o_out = train->add_option("--out", over.out_dir, "Override out_dir");
  auto* o_epochs = train->add_option("--epochs", over.epochs, "Override train.epochs");
  auto* o_batch = train->add_option("--batch-size", over.batch_size, "Override train.batch_size");
  auto* o_lr = train->add_option("--lr", over.lr0, "Override train.lr0");
  auto* o_seed = train->add_option("--seed", over.seed, "Override train.seed");
  auto* o_aug = train->add_option("--augment", over.augment, "Override train.augment (none|mri_translate|microscopy)");
  auto* o_shift = train->add_option("--max-shift", over.max_shift, "Override train.max_shift");
  auto* o_crop = train->add_option("--crop", over.crop, "Override train.crop");
  auto* o_mode = train->add_option("--mode", over.sampler_mode, "Override sampler.mode (copy_supervised|self_supervised)");
  auto* o_k = train->add_option("--neighbors", over.neighbors_per_side, "Override sampler.neighbors_per_side");
  auto* o_variant = train->add_option("--variant", over.variant, "Override model.variant (mri|microscopy)");
  auto* o_width = train->add_option("--width-scale", over.width_scale, "Override model.width_scale");
  std::size_t n_in_flag = 0;
  auto* o_nin = train->add_option("--n-in", n_in_flag, "Override model.n_in");

  DenoiseOptions dn;
  auto* denoise = app.add_subcommand("denoise", "Apply a trained model to noisy stacks");
  denoise->add_option("--model", dn.model, "Checkpoint written by train")->required();
  denoise->add_option("--manifest", dn.manifest, "Noisy dataset manifest")->required();
  denoise->add_option("--out", dn.out, "Output directory")->required();
  denoise->add_flag("--post-process", dn.post_process, "Also write spectrally data-consistent predictions");
  denoise->add_option("--split", dn.split, "Stacks to process: all|train|val|test")->capture_default_str();

  EvaluateOptions ev;
  std::string pred_post;
  auto* evaluate = app.add_subcommand("evaluate", "Compute PSNR/SSIM/NRMSE reports");
  evaluate->add_option("--pred", ev.pred, "Prediction manifest")->required();
  evaluate->add_option("--gt", ev.gt, "Ground-truth manifest")->required();
  evaluate->add_option("--protocol", ev.protocol, "mri|microscopy|raw")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Report CSV path (JSON aggregate written alongside)")->required();
  auto* o_post = evaluate->add_option("--pred-post", pred_post, "Post-processed prediction manifest");

  BaselineOptions bl;
  auto* baseline = app.add_subcommand("baseline", "No-network reconstructions");
  baseline->add_option("--manifest", bl.manifest, "Noisy dataset manifest")->required();
  baseline->add_option("--mode", bl.mode, "direct|combine")->capture_default_str();
  baseline->add_option("--out", bl.out, "Output directory")->required();
  baseline->add_option("--split", bl.split, "Stacks to process: all|train|val|test")->capture_default_str();

  NeighborSsimOptions ns;
  auto* nssim = app.add_subcommand("neighbor-ssim", "Similarity of neighboring and distant planes");
  nssim->add_option("--manifest", ns.manifest, "Dataset manifest")->required();
  nssim->add_option("--out", ns.out, "Report CSV path (JSON summary written alongside)")->required();
  nssim->add_option("--distant", ns.distant, "Plane distance of the distant pairs")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) cmd_phantom(ph);
    if (*noise) cmd_noise(no);
    if (*train) {
      RunConfig rc = load_run_config(config_path);
      if (*o_manifest) rc.manifest = over.manifest;
      if (*o_kind) rc.dataset_kind = over.dataset_kind;
      if (*o_out) rc.out_dir = over.out_dir;
      if (*o_epochs) rc.epochs = over.epochs;
      if (*o_batch) rc.batch_size = over.batch_size;
      if (*o_lr) rc.lr0 = over.lr0;
      if (*o_seed) rc.seed = over.seed;
      if (*o_aug) rc.augment = over.augment;
      if (*o_shift) rc.max_shift = over.max_shift;
      if (*o_crop) rc.crop = over.crop;
      if (*o_mode) rc.sampler_mode = over.sampler_mode;
      if (*o_k) rc.neighbors_per_side = over.neighbors_per_side;
      if (*o_variant) rc.variant = over.variant;
      if (*o_width) rc.width_scale = over.width_scale;
      if (*o_nin) rc.n_in = n_in_flag;
      cmd_train(rc);
    }
    if (*denoise) cmd_denoise(dn);
    if (*evaluate) {
      if (*o_post) ev.pred_post = pred_post;
      cmd_evaluate(ev);
    }
    if (*baseline) cmd_baseline(bl);
    if (*nssim) cmd_neighbor_ssim(ns);
  } catch (const stackdenoise::Error& e) {
    std::cerr << "stackdenoise: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stackdenoise: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
