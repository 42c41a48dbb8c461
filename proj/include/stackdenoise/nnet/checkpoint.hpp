#pragma once

// Parameter files: an NPZ archive with "layer<id>.weight.npy" (out, in, 3, 3)
// and "layer<id>.bias.npy" float32 members plus a "meta.json" header.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "stackdenoise/error.hpp"
#include "stackdenoise/io/npz.hpp"
#include "stackdenoise/nnet/network.hpp"
#include "stackdenoise/nnet/unet.hpp"

namespace stackdenoise::nn {

inline constexpr const char* meta_member = "meta.json";

struct CheckpointMeta {
  Variant variant = Variant::mri;
  std::size_t n_in = 1;
  double width_scale = 1.0;
  std::uint64_t graph_hash = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <typename T>
io::Archive encode_params(const Network<T>& net, const nlohmann::json& extra = nlohmann::json::object()) {
  io::Archive ar;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::conv3x3) continue;
    const auto& p = net.params()[i];
    const std::string base = "layer" + std::to_string(layers[i].id);
    io::NdArray w{{layers[i].out_channels, layers[i].in_channels, 3, 3}, {p.weight.begin(), p.weight.end()},
                  io::DType::f4};
    io::NdArray b{{layers[i].out_channels}, {p.bias.begin(), p.bias.end()}, io::DType::f4};
    ar[base + ".weight.npy"] = io::encode_npy(w);
    ar[base + ".bias.npy"] = io::encode_npy(b);
  }
  nlohmann::json meta{{"variant", to_string(net.variant())},
                      {"n_in", net.n_in()},
                      {"width_scale", net.width_scale()},
                      {"graph_hash", std::to_string(net.graph_hash())}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  ar[meta_member] = meta.dump(2);
  return ar;
}

template <typename T>
void save_params(const Network<T>& net, const std::filesystem::path& path,
                 const nlohmann::json& extra = nlohmann::json::object()) {
  io::write_archive(path, encode_params(net, extra));
}

inline CheckpointMeta parse_meta(const io::Archive& ar, const std::string& what) {
  const auto it = ar.find(meta_member);
  require(it != ar.end(), ErrorKind::format, what + ": missing " + meta_member);
  CheckpointMeta m;
  try {
    auto j = nlohmann::json::parse(it->second);
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.n_in = j.at("n_in").get<std::size_t>();
    m.width_scale = j.at("width_scale").get<double>();
    m.graph_hash = std::stoull(j.at("graph_hash").get<std::string>());
    for (const char* k : {"variant", "n_in", "width_scale", "graph_hash"}) j.erase(k);
    m.extra = std::move(j);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, what + ": bad checkpoint header: " + e.what());
  } catch (const std::logic_error&) {
    fail(ErrorKind::format, what + ": bad graph_hash field");
  }
  return m;
}

inline CheckpointMeta read_meta(const std::filesystem::path& path) {
  return parse_meta(io::read_archive(path), path.string());
}

/// Loads parameters into `net`; the stored topology must match exactly.
template <typename T>
CheckpointMeta decode_params(Network<T>& net, const io::Archive& ar, const std::string& what) {
  const auto meta = parse_meta(ar, what);
  require(meta.variant == net.variant() && meta.n_in == net.n_in() && meta.graph_hash == net.graph_hash(),
          ErrorKind::hash_mismatch,
          what + ": checkpoint is for a " + to_string(meta.variant) + " net with n_in=" + std::to_string(meta.n_in) +
              " (graph hash " + std::to_string(meta.graph_hash) + "), target is " + to_string(net.variant()) +
              " with n_in=" + std::to_string(net.n_in()) + " (graph hash " + std::to_string(net.graph_hash()) + ")");
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::conv3x3) continue;
    auto& p = net.params()[i];
    const std::string base = "layer" + std::to_string(layers[i].id);
    for (auto [suffix, dst] : {std::pair{".weight.npy", &p.weight}, std::pair{".bias.npy", &p.bias}}) {
      const auto it = ar.find(base + suffix);
      require(it != ar.end(), ErrorKind::format, what + ": missing member " + base + suffix);
      const auto arr = io::decode_npy(it->second, what + ":" + base + suffix);
      require(arr.data.size() == dst->size(), ErrorKind::shape_mismatch,
              what + ": " + base + suffix + " holds " + std::to_string(arr.data.size()) + " values, expected " +
                  std::to_string(dst->size()));
      for (std::size_t k = 0; k < dst->size(); ++k) (*dst)[k] = static_cast<T>(arr.data[k]);
    }
  }
  return meta;
}

template <typename T>
CheckpointMeta load_params(Network<T>& net, const std::filesystem::path& path) {
  return decode_params(net, io::read_archive(path), path.string());
}

/// Rebuilds the network described by a checkpoint header and loads it.
template <typename T = float>
Network<T> load_network(const std::filesystem::path& path, CheckpointMeta* meta_out = nullptr) {
  const auto ar = io::read_archive(path);
  const auto meta = parse_meta(ar, path.string());
  auto net = build_unet<T>(meta.variant, meta.n_in, meta.width_scale);
  decode_params(net, ar, path.string());
  if (meta_out) *meta_out = meta;
  return net;
}

}  // namespace stackdenoise::nn
