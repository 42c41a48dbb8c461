#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <catch_amalgamated.hpp>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"

// Asserts that `expr` throws stackdenoise::Error of the given kind.
#define REQUIRE_ERROR_KIND(expr, error_kind)                                   \
  do {                                                                         \
    bool thrown_ = false;                                                      \
    try {                                                                      \
      (void)(expr);                                                            \
    } catch (const stackdenoise::Error& e_) {                                  \
      thrown_ = true;                                                          \
      INFO(e_.what());                                                         \
      CHECK(e_.kind() == (error_kind));                                        \
    }                                                                          \
    CHECK(thrown_);                                                            \
  } while (0)

namespace test_support {

inline stackdenoise::Plane random_plane(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -0.5,
                                        double hi = 0.5) {
  std::uniform_real_distribution<double> dist(lo, hi);
  stackdenoise::Plane p(h, w);
  for (auto& v : p.values()) v = dist(rng);
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stackdenoise_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_support
