#include <cstring>
#include <set>

#include "support.hpp"
#include "tiff_fixtures.hpp"

#include "stackdenoise/data/phantom.hpp"
#include "stackdenoise/data/preprocess.hpp"
#include "stackdenoise/io/manifest.hpp"
#include "stackdenoise/io/npy.hpp"
#include "stackdenoise/io/npz.hpp"
#include "stackdenoise/io/tiff.hpp"
#include "stackdenoise/metrics.hpp"

using namespace stackdenoise;
using namespace stackdenoise::io;

namespace {

std::vector<std::uint64_t> bit_patterns(const NdArray& a) {
  std::vector<std::uint64_t> out;
  for (double v : a.data) {
    if (a.dtype == DType::f4) {
      const float f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      out.push_back(u);
    } else {
      std::uint64_t u;
      std::memcpy(&u, &v, 8);
      out.push_back(u);
    }
  }
  return out;
}

NdArray random_array(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dims(1, 3), extent(1, 9);
  NdArray a;
  a.dtype = rng() % 2 ? DType::f4 : DType::f8;
  const std::size_t nd = dims(rng);
  for (std::size_t d = 0; d < nd; ++d) a.shape.push_back(extent(rng));
  std::normal_distribution<double> g(0.0, 100.0);
  for (std::size_t i = 0; i < a.count(); ++i) {
    const double v = g(rng);
    a.data.push_back(a.dtype == DType::f4 ? static_cast<double>(static_cast<float>(v)) : v);
  }
  return a;
}

}  // namespace

TEST_CASE("NPY layout of a 3x4 float32 array") {
  const NdArray a{{3, 4}, std::vector<double>(12, 0.0), DType::f4};
  const auto bytes = encode_npy(a);
  CHECK(bytes.size() == 128 + 48);
  CHECK(bytes.substr(0, 6) == "\x93NUMPY");
  CHECK(bytes[6] == 1);
  CHECK(bytes[7] == 0);
  const std::size_t header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK((10 + header_len) % 64 == 0);
  CHECK(bytes[10 + header_len - 1] == '\n');
  const auto header = bytes.substr(10, header_len);
  CHECK(header.find("'descr': '<f4'") != std::string::npos);
  CHECK(header.find("'fortran_order': False") != std::string::npos);
  CHECK(header.find("'shape': (3, 4)") != std::string::npos);
}

TEST_CASE("NPY round trips 50 random arrays bit for bit") {
  std::mt19937_64 rng(21);
  const auto dir = test_support::scratch_dir("npy");
  for (int k = 0; k < 50; ++k) {
    const auto a = random_array(rng);
    const auto path = dir / ("a" + std::to_string(k) + ".npy");
    write_array(path, a);
    const auto b = read_array(path);
    CHECK(b.shape == a.shape);
    CHECK(b.dtype == a.dtype);
    CHECK(bit_patterns(b) == bit_patterns(a));
  }
}

TEST_CASE("NPY 1-d shape and scalar-like shapes") {
  const NdArray a{{5}, {1, 2, 3, 4, 5}, DType::f8};
  const auto bytes = encode_npy(a);
  CHECK(bytes.find("'shape': (5,)") != std::string::npos);
  CHECK(decode_npy(bytes).data == a.data);
}

TEST_CASE("NPY decoding rejects malformed input") {
  const NdArray a{{2, 3}, {1, 2, 3, 4, 5, 6}, DType::f8};
  const auto good = encode_npy(a);
  REQUIRE_ERROR_KIND(decode_npy(good.substr(0, good.size() - 1)), ErrorKind::truncated);
  REQUIRE_ERROR_KIND(decode_npy(good.substr(0, 5)), ErrorKind::truncated);
  REQUIRE_ERROR_KIND(decode_npy(good + "x"), ErrorKind::format);

  auto bad_magic = good;
  bad_magic[1] = 'X';
  REQUIRE_ERROR_KIND(decode_npy(bad_magic), ErrorKind::format);

  auto replace = [&](const std::string& from, const std::string& to) {
    auto s = good;
    const auto at = s.find(from);
    REQUIRE(at != std::string::npos);
    s.replace(at, from.size(), to);
    return s;
  };
  REQUIRE_ERROR_KIND(decode_npy(replace("False", "True ")), ErrorKind::unsupported);
  REQUIRE_ERROR_KIND(decode_npy(replace("'<f8'", "'<i8'")), ErrorKind::unsupported);
  REQUIRE_ERROR_KIND(decode_npy(replace("'descr'", "'dexcr'")), ErrorKind::format);

  auto v3 = good;
  v3[6] = 3;
  REQUIRE_ERROR_KIND(decode_npy(v3), ErrorKind::unsupported);
  REQUIRE_ERROR_KIND(read_array("/nonexistent/x.npy"), ErrorKind::io);
  REQUIRE_ERROR_KIND(to_plane(NdArray{{6}, {1, 2, 3, 4, 5, 6}, DType::f8}), ErrorKind::shape_mismatch);
}

TEST_CASE("NPY writes are atomic and leave no temporary behind") {
  const auto dir = test_support::scratch_dir("npy_atomic");
  write_plane(dir / "p.npy", Plane(2, 2, 1.5));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  CHECK(read_plane(dir / "p.npy") == Plane(2, 2, 1.5));
}

TEST_CASE("NPZ archives") {
  Archive ar{{"a.npy", encode_npy(NdArray{{2}, {1, 2}, DType::f4})}, {"meta.json", "{}"}};
  const auto bytes = encode_archive(ar);
  CHECK(bytes.substr(0, 4) == std::string("PK\x03\x04", 4));
  CHECK(decode_archive(bytes) == ar);
  CHECK(encode_archive(decode_archive(bytes)) == bytes);
  REQUIRE_ERROR_KIND(decode_archive(bytes.substr(0, bytes.size() - 3)), ErrorKind::truncated);
  auto flipped = bytes;
  flipped[40] = static_cast<char>(flipped[40] ^ 1);  // inside the first member's data
  REQUIRE_ERROR_KIND(decode_archive(flipped), ErrorKind::format);
}

TEST_CASE("TIFF fixtures in both byte orders") {
  const auto le = tiff_fixture::gray16(2, 2, false);
  const auto be = tiff_fixture::gray16(2, 2, true);
  const auto a = decode_tiff_gray(le);
  const auto b = decode_tiff_gray(be);
  CHECK(a(0, 0) == 0.0);
  CHECK(a(0, 1) == 1.0);
  CHECK(a(1, 0) == 2.0);
  CHECK(a(1, 1) == 3.0);
  CHECK(a == b);

  const auto wide = decode_tiff_gray(tiff_fixture::gray16(5, 3, true));
  CHECK((wide.height() == 3 && wide.width() == 5));
  CHECK(wide(2, 4) == 14.0);

  const auto dir = test_support::scratch_dir("tiff");
  write_file_atomic(dir / "x.tif", le);
  CHECK(read_tiff_gray(dir / "x.tif") == a);
}

TEST_CASE("TIFF guards") {
  REQUIRE_ERROR_KIND(decode_tiff_gray(tiff_fixture::gray16(2, 2, false, 5)), ErrorKind::unsupported);
  try {
    decode_tiff_gray(tiff_fixture::gray16(2, 2, false, 5));
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("259") != std::string::npos);
  }
  const auto le = tiff_fixture::gray16(2, 2, false);
  REQUIRE_ERROR_KIND(decode_tiff_gray(le.substr(0, le.size() - 1)), ErrorKind::truncated);
  REQUIRE_ERROR_KIND(decode_tiff_gray(std::string("XX*\0\x08\0\0\0", 8)), ErrorKind::format);
}

TEST_CASE("MRI preprocessing") {
  Plane p(1, 3);
  p[0] = 0.0;
  p[1] = 500.0;
  p[2] = 1000.0;
  const auto s = data::scale_to_unit_range(p);
  CHECK(s[0] == -0.5);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 0.5);
  REQUIRE_ERROR_KIND(data::scale_to_unit_range(Plane(2, 2, 3.0)), ErrorKind::degenerate);

  std::vector<Plane> planes;
  std::mt19937_64 rng(3);
  for (int k = 0; k < 150; ++k) {
    auto q = test_support::random_plane(4, 4, rng, 0.0, 100.0);
    q[0] = k;  // keeps the original index recoverable after scaling
    q[1] = -1.0;
    q[2] = 200.0;
    planes.push_back(q);
  }
  const auto out = data::preprocess_mri(ImageStack("subject", planes));
  REQUIRE(out.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    const double original = (out[i][0] + 0.5) * 201.0 - 1.0;
    CHECK(original == Catch::Approx(double(i + 25)).margin(1e-9));
    const auto [lo, hi] = std::minmax_element(out[i].values().begin(), out[i].values().end());
    CHECK(*lo == -0.5);
    CHECK(*hi == 0.5);
  }
  CHECK(data::preprocess_mri(ImageStack("short", {planes[0], planes[1]})).size() == 2);
}

TEST_CASE("microscopy preprocessing") {
  SECTION("median background") {
    const std::vector<ImageStack> stacks{ImageStack("a", {Plane(1, 1, 1.0), Plane(1, 1, 100.0)}),
                                         ImageStack("b", {Plane(1, 1, 2.0)})};
    CHECK(data::median_background(stacks)[0] == 2.0);
  }
  SECTION("identical images leave nothing to normalize") {
    std::mt19937_64 rng(1);
    const auto p = test_support::random_plane(8, 8, rng);
    const std::vector<ImageStack> stacks{ImageStack("a", {p, p}), ImageStack("b", {p})};
    REQUIRE_ERROR_KIND(data::preprocess_microscopy(stacks), ErrorKind::degenerate);
  }
  SECTION("an injected fixed pattern is removed") {
    std::mt19937_64 rng(2);
    const auto pattern = test_support::random_plane(64, 64, rng, -1.0, 1.0);
    std::vector<ImageStack> stacks;
    for (std::uint64_t s = 0; s < 9; ++s) {
      data::PhantomSpec spec;
      spec.planes = 3;
      spec.height = 64;
      spec.width = 64;
      spec.seed = 40 + s;
      auto clean = data::generate_phantom_stack(spec);
      std::vector<Plane> planes;
      for (const auto& q : clean.planes()) {
        Plane with = q;
        for (std::size_t i = 0; i < with.size(); ++i) with[i] += pattern[i];
        planes.push_back(with);
      }
      stacks.emplace_back("s" + std::to_string(s), planes);
    }
    const auto out = data::preprocess_microscopy(stacks);
    double worst = 0.0;
    for (const auto& s : out.stacks)
      for (const auto& q : s.planes()) {
        double mq = 0, mp = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
          mq += q[i] / double(q.size());
          mp += pattern[i] / double(q.size());
        }
        double sqp = 0, sqq = 0, spp = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
          sqp += (q[i] - mq) * (pattern[i] - mp);
          sqq += (q[i] - mq) * (q[i] - mq);
          spp += (pattern[i] - mp) * (pattern[i] - mp);
        }
        worst = std::max(worst, std::abs(sqp / std::sqrt(sqq * spp)));
      }
    CHECK(worst < 0.05);
    const auto norm = out.stacks[0][0];
    CHECK(metrics::percentile(norm.values(), 3.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(metrics::percentile(norm.values(), 99.8) == Catch::Approx(1.0));
  }
}

TEST_CASE("splits follow the subject-level ratios") {
  auto ids = [](std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("subject" + std::to_string(i));
    return v;
  };
  auto count = [](const std::vector<Split>& s, Split which) { return std::count(s.begin(), s.end(), which); };

  const auto mri = make_splits(ids(60), DatasetKind::mri);
  CHECK(count(mri, Split::train) == 48);
  CHECK(count(mri, Split::val) == 2);
  CHECK(count(mri, Split::test) == 10);

  const auto micro = make_splits(ids(27), DatasetKind::microscopy);
  CHECK(count(micro, Split::train) == 18);
  CHECK(count(micro, Split::val) == 3);
  CHECK(count(micro, Split::test) == 6);
  for (std::size_t i = 18; i < 21; ++i) CHECK(micro[i] == Split::val);

  const auto small = make_splits(ids(8), DatasetKind::synthetic);
  CHECK(count(small, Split::train) == 6);
  CHECK(count(small, Split::val) == 1);
  CHECK(count(small, Split::test) == 1);

  SECTION("repeated ids are one subject") {
    auto v = ids(60);
    v.insert(v.begin() + 5, "subject59");
    const auto s = make_splits(v, DatasetKind::mri);
    CHECK(s[5] == s.back());
    std::set<std::string> train, test;
    for (std::size_t i = 0; i < v.size(); ++i) (s[i] == Split::train ? train : test).insert(v[i]);
    for (const auto& id : train) CHECK(!test.count(id));
  }
  REQUIRE_ERROR_KIND(make_splits(ids(2), DatasetKind::mri), ErrorKind::invalid_argument);
  REQUIRE_ERROR_KIND(make_splits(ids(10), DatasetKind::microscopy), ErrorKind::invalid_argument);
}

TEST_CASE("manifest round trip and stack loading") {
  const auto dir = test_support::scratch_dir("manifest");
  std::vector<StackManifest> stacks;
  for (int s = 0; s < 2; ++s) {
    StackManifest m;
    m.id = "st" + std::to_string(s);
    m.split = s == 0 ? Split::train : Split::test;
    m.height = 3;
    m.width = 4;
    m.planes = 2;
    for (int p = 0; p < 2; ++p) {
      const auto path = dir / m.id / ("p" + std::to_string(p) + ".npy");
      write_plane(path, Plane(3, 4, s * 10.0 + p), DType::f4);
      m.plane_files.push_back(path);
    }
    m.lambda = 0.25;
    stacks.push_back(m);
  }
  save_manifest(dir / "manifest.json", stacks);
  const auto text = read_file(dir / "manifest.json");
  CHECK(text.find(dir.string()) == std::string::npos);  // paths are stored relative

  const auto loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1].split == Split::test);
  CHECK(loaded[0].lambda == 0.25);
  const auto st = load_stack(loaded[1]);
  CHECK(st.id() == "st1");
  CHECK(st[1](2, 3) == 11.0);

  SECTION("plane count must match P") {
    auto doc = nlohmann::json::parse(text);
    doc["stacks"][0]["P"] = 3;
    write_file_atomic(dir / "bad.json", doc.dump());
    REQUIRE_ERROR_KIND(load_manifest(dir / "bad.json"), ErrorKind::format);
  }
  SECTION("shape mismatch and missing files") {
    auto m = loaded[0];
    m.width = 5;
    REQUIRE_ERROR_KIND(load_stack(m), ErrorKind::shape_mismatch);
    m = loaded[0];
    m.plane_files[1] = dir / "missing.npy";
    REQUIRE_ERROR_KIND(load_stack(m), ErrorKind::io);
  }
  SECTION("mixed dtypes") {
    auto m = loaded[0];
    write_plane(dir / "f8.npy", Plane(3, 4, 0.0), DType::f8);
    m.plane_files[1] = dir / "f8.npy";
    REQUIRE_ERROR_KIND(load_stack(m), ErrorKind::format);
  }
  SECTION("unknown enum values") {
    write_file_atomic(dir / "enum.json",
                      R"({"stacks":[{"id":"x","modality":"ct","plane_files":[],"split":"train","H":1,"W":1,"P":0}]})");
    REQUIRE_ERROR_KIND(load_manifest(dir / "enum.json"), ErrorKind::format);
  }
}

TEST_CASE("phantom generation") {
  data::PhantomSpec spec;
  spec.seed = 4;
  const auto a = data::generate_phantom_stack(spec);
  const auto b = data::generate_phantom_stack(spec);
  REQUIRE(a.size() == 16);
  CHECK((a.height() == 64 && a.width() == 64));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  spec.seed = 5;
  CHECK(data::generate_phantom_stack(spec)[0] != a[0]);

  SECTION("zero drift gives identical planes") {
    spec.drift = 0.0;
    const auto s = data::generate_phantom_stack(spec);
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] == s[0]);
  }
  SECTION("default stacks: adjacent SSIM in range and above distant SSIM") {
    double adjacent = 0.0, distant = 0.0;
    std::size_t na = 0, nd = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      data::PhantomSpec d;
      d.seed = seed;
      const auto s = data::preprocess_mri(data::generate_phantom_stack(d));
      for (std::size_t i = 0; i + 1 < s.size(); ++i, ++na) adjacent += metrics::ssim(s[i], s[i + 1]);
      for (std::size_t i = 0; i + 8 < s.size(); ++i, ++nd) distant += metrics::ssim(s[i], s[i + 8]);
    }
    adjacent /= double(na);
    distant /= double(nd);
    CHECK(adjacent >= 0.8);
    CHECK(adjacent <= 0.95);
    CHECK(distant < adjacent);
  }
  SECTION("invalid specs") {
    spec.smoothness = 0.0;
    REQUIRE_ERROR_KIND(data::generate_phantom_stack(spec), ErrorKind::invalid_argument);
  }
}
