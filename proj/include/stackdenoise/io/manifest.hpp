#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/io/npy.hpp"
#include "stackdenoise/io/tiff.hpp"

namespace stackdenoise::io {

enum class Modality { mri, fluor_low, fluor_high, brightfield };
enum class Split { train, val, test };
enum class DatasetKind { mri, microscopy, synthetic };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::mri: return "mri";
    case Modality::fluor_low: return "fluor_low";
    case Modality::fluor_high: return "fluor_high";
    case Modality::brightfield: return "brightfield";
  }
  return "?";
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::mri: return "mri";
    case DatasetKind::microscopy: return "microscopy";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  for (auto m : {Modality::mri, Modality::fluor_low, Modality::fluor_high, Modality::brightfield})
    if (to_string(m) == s) return m;
  fail(ErrorKind::format, "unknown modality '" + s + "'");
}

inline Split parse_split(const std::string& s) {
  for (auto v : {Split::train, Split::val, Split::test})
    if (to_string(v) == s) return v;
  fail(ErrorKind::format, "unknown split '" + s + "'");
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  for (auto v : {DatasetKind::mri, DatasetKind::microscopy, DatasetKind::synthetic})
    if (to_string(v) == s) return v;
  fail(ErrorKind::invalid_argument, "unknown dataset kind '" + s + "'");
}

/// Files of one noisy realization of a stack, one entry per plane. The mask
/// and raw-spectrum lists are empty for natively noisy data.
struct CopyFiles {
  std::vector<std::filesystem::path> noisy;
  std::vector<std::filesystem::path> mask;
  std::vector<std::filesystem::path> raw_re;
  std::vector<std::filesystem::path> raw_im;
};

struct StackManifest {
  std::string id;
  Modality modality = Modality::mri;
  std::vector<std::filesystem::path> plane_files;
  Split split = Split::train;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t planes = 0;
  /// Optional noisy copies (written by the noise command).
  std::vector<CopyFiles> copies;
  std::optional<double> lambda;
};

namespace detail {

inline std::vector<std::filesystem::path> resolve(const nlohmann::json& list, const std::filesystem::path& base) {
  std::vector<std::filesystem::path> out;
  for (const auto& v : list) {
    std::filesystem::path p = v.get<std::string>();
    out.push_back(p.is_absolute() ? p : base / p);
  }
  return out;
}

inline nlohmann::json relativize(const std::vector<std::filesystem::path>& paths, const std::filesystem::path& base) {
  auto out = nlohmann::json::array();
  for (const auto& p : paths) out.push_back(std::filesystem::relative(p, base).generic_string());
  return out;
}

}  // namespace detail

/// Parses a dataset manifest: `{"stacks": [...]}`, a bare array, or a single
/// stack object. Relative paths resolve against the manifest's directory.
inline std::vector<StackManifest> load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  nlohmann::json list = doc.is_array() ? doc : (doc.contains("stacks") ? doc["stacks"] : nlohmann::json::array({doc}));

  std::vector<StackManifest> out;
  try {
    for (const auto& j : list) {
      StackManifest m;
      m.id = j.at("id").get<std::string>();
      m.modality = parse_modality(j.at("modality").get<std::string>());
      m.plane_files = detail::resolve(j.at("plane_files"), base);
      m.split = parse_split(j.at("split").get<std::string>());
      m.height = j.at("H").get<std::size_t>();
      m.width = j.at("W").get<std::size_t>();
      m.planes = j.at("P").get<std::size_t>();
      if (j.contains("lambda")) m.lambda = j["lambda"].get<double>();
      if (j.contains("copies")) {
        for (const auto& c : j["copies"]) {
          CopyFiles cf;
          cf.noisy = detail::resolve(c.at("noisy"), base);
          if (c.contains("mask")) cf.mask = detail::resolve(c["mask"], base);
          if (c.contains("raw_re")) cf.raw_re = detail::resolve(c["raw_re"], base);
          if (c.contains("raw_im")) cf.raw_im = detail::resolve(c["raw_im"], base);
          m.copies.push_back(std::move(cf));
        }
      }
      require(m.plane_files.size() == m.planes, ErrorKind::format,
              path.string() + ": stack '" + m.id + "' lists " + std::to_string(m.plane_files.size()) +
                  " plane files but P = " + std::to_string(m.planes));
      for (const auto& c : m.copies) {
        require(c.noisy.size() == m.planes, ErrorKind::format,
                path.string() + ": stack '" + m.id + "' has a copy with the wrong plane count");
        for (const auto* list2 : {&c.mask, &c.raw_re, &c.raw_im})
          require(list2->empty() || list2->size() == m.planes, ErrorKind::format,
                  path.string() + ": stack '" + m.id + "' has a copy with incomplete spectrum files");
      }
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return out;
}

inline nlohmann::json manifest_json(const std::vector<StackManifest>& stacks, const std::filesystem::path& base) {
  auto list = nlohmann::json::array();
  for (const auto& m : stacks) {
    nlohmann::json j{{"id", m.id},
                     {"modality", to_string(m.modality)},
                     {"plane_files", detail::relativize(m.plane_files, base)},
                     {"split", to_string(m.split)},
                     {"H", m.height},
                     {"W", m.width},
                     {"P", m.planes}};
    if (m.lambda) j["lambda"] = *m.lambda;
    if (!m.copies.empty()) {
      auto copies = nlohmann::json::array();
      for (const auto& c : m.copies) {
        nlohmann::json cj{{"noisy", detail::relativize(c.noisy, base)}};
        if (!c.mask.empty()) cj["mask"] = detail::relativize(c.mask, base);
        if (!c.raw_re.empty()) cj["raw_re"] = detail::relativize(c.raw_re, base);
        if (!c.raw_im.empty()) cj["raw_im"] = detail::relativize(c.raw_im, base);
        copies.push_back(std::move(cj));
      }
      j["copies"] = std::move(copies);
    }
    list.push_back(std::move(j));
  }
  return nlohmann::json{{"stacks", list}};
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<StackManifest>& stacks) {
  const auto base = std::filesystem::absolute(path).parent_path();
  write_file_atomic(path, manifest_json(stacks, base).dump(2) + "\n");
}

/// Reads one 2D plane from an .npy or a .tif/.tiff file.
inline Plane read_any_plane(const std::filesystem::path& path, std::optional<DType>* dtype = nullptr) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".tif" || ext == ".tiff") return read_tiff_gray(path);
  const auto arr = read_array(path);
  if (dtype) *dtype = arr.dtype;
  return to_plane(arr, path.string());
}

inline ImageStack load_planes(const std::string& id, const std::vector<std::filesystem::path>& files,
                              std::size_t height, std::size_t width) {
  std::vector<Plane> planes;
  std::optional<DType> first_dtype;
  for (const auto& f : files) {
    require(std::filesystem::exists(f), ErrorKind::io, "stack '" + id + "': missing plane file '" + f.string() + "'");
    std::optional<DType> dt;
    planes.push_back(read_any_plane(f, &dt));
    if (!first_dtype) first_dtype = dt;
    require(dt == first_dtype, ErrorKind::format, "stack '" + id + "': plane files mix dtypes");
    require(planes.back().height() == height && planes.back().width() == width, ErrorKind::shape_mismatch,
            "stack '" + id + "': '" + f.string() + "' is not " + std::to_string(height) + "x" + std::to_string(width));
  }
  return ImageStack(id, std::move(planes));
}

inline ImageStack load_stack(const StackManifest& m) { return load_planes(m.id, m.plane_files, m.height, m.width); }

/// Subject-level split assignment, aligned with `ids`. Entries sharing an id
/// are one subject and always land in the same split.
///  - mri / synthetic: ordered subjects split 48:2:10 (train/val/test), with
///    at least one validation and one test subject when there are three or more.
///  - microscopy: subjects are wells x `fields_per_well` fields in order; the
///    last well's first third of fields is validation, the rest of it test,
///    every other well is training.
inline std::vector<Split> make_splits(const std::vector<std::string>& ids, DatasetKind kind,
                                      std::size_t fields_per_well = 9) {
  std::vector<std::string> subjects;
  std::map<std::string, std::size_t> index;
  for (const auto& id : ids) {
    if (!index.count(id)) {
      index[id] = subjects.size();
      subjects.push_back(id);
    }
  }
  const std::size_t n = subjects.size();
  std::vector<Split> per_subject(n, Split::train);

  if (kind == DatasetKind::microscopy) {
    require(fields_per_well >= 2 && n % fields_per_well == 0 && n / fields_per_well >= 2, ErrorKind::invalid_argument,
            "microscopy splits need at least two whole wells of " + std::to_string(fields_per_well) +
                " fields, got " + std::to_string(n) + " stacks");
    const std::size_t last_well = n - fields_per_well;
    const std::size_t n_val = std::max<std::size_t>(1, fields_per_well / 3);
    for (std::size_t i = last_well; i < n; ++i) per_subject[i] = i - last_well < n_val ? Split::val : Split::test;
  } else {
    require(n >= 3, ErrorKind::invalid_argument, "need at least 3 subjects to split, got " + std::to_string(n));
    auto share = [n](double num) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * num / 60.0)));
    };
    const std::size_t n_test = share(10.0);
    const std::size_t n_val = share(2.0);
    require(n_test + n_val < n, ErrorKind::invalid_argument, "too few subjects for a training split");
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) per_subject[i] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }

  std::vector<Split> out;
  std::map<std::string, Split> seen;
  for (const auto& id : ids) {
    const Split s = per_subject[index[id]];
    const auto [it, inserted] = seen.emplace(id, s);
    require(inserted || it->second == s, ErrorKind::state, "split overlap detected for subject '" + id + "'");
    out.push_back(s);
  }
  return out;
}

}  // namespace stackdenoise::io
