#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"

#include "lrsflow/rng.hpp"
#include "lrsflow/spline.hpp"
#include "lrsflow/tensor.hpp"

namespace testutil {

// Central difference with per-coordinate step scaled to the value magnitude.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h0 = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = h0 * std::max(1.0, std::fabs(x[i]));
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double dn = f(x);
    x[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

// abs error for small magnitudes, relative beyond `floor`.
inline double rel_err(double got, double want, double floor = 1.0) {
  return std::fabs(got - want) / std::max({std::fabs(got), std::fabs(want), floor});
}

inline std::vector<double> random_raw(int num_bins, std::uint64_t seed, double spread = 1.0) {
  lrsflow::Rng rng(seed);
  std::vector<double> raw(std::size_t(4 * num_bins - 1));
  for (auto& v : raw) v = spread * rng.normal();
  return raw;
}

// Self-cleaning scratch directory for tests that write files.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "lrsflow_test") {
    lrsflow::Rng rng(
        std::uint64_t(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rng.next_u64() >> 40));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

}  // namespace testutil
