#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrsflow/rng.hpp"
#include "lrsflow/tensor.hpp"

namespace lrsflow::data {

struct Standardization {
  std::vector<double> mean, stddev;  // aligned with kept_columns
  std::vector<int> kept_columns;     // source columns that survived (non-constant)
  int source_columns = 0;
};

struct Dataset {
  Tensor rows;  // [n, dim]
  std::optional<Standardization> stats;  // set when rows were standardized
  std::string provenance;

  std::int64_t n() const { return rows.shape()[0]; }
  int dim() const { return int(rows.shape()[1]); }
  std::span<const double> row(std::int64_t i) const {
    return rows.span().subspan(std::size_t(i * rows.shape()[1]), std::size_t(rows.shape()[1]));
  }
};

// Concentric circles scaled by `scale`, blurred with isotropic Gaussian noise.
Dataset gen_rings(std::int64_t n, std::uint64_t seed, double noise_sigma = 0.08,
                  std::vector<double> radii = {0.25, 0.5, 0.75, 1.0},
                  double scale = 3.0);

// Uniform mass on the even cells of a 4x4 board over [-4, 4]^2.
Dataset gen_checkerboard(std::int64_t n, std::uint64_t seed);

// Two interleaved half-circles, centered and scaled to roughly [-2, 2].
Dataset gen_two_moons(std::int64_t n, std::uint64_t seed, double noise_sigma = 0.08);

// Standard normal in `dim` dimensions; handy as a known-answer target.
Dataset gen_gaussian(std::int64_t n, std::uint64_t seed, int dim = 2);

Dataset generate(const std::string& name, std::int64_t n, std::uint64_t seed);

struct GrayImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, row 0 at the top
};

GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& img);

// Treats darkness (255 - pixel) as unnormalized density on [0,1]^2, samples
// pixels categorically and jitters within them; the image y axis is flipped
// so up in the image is +y. All-white images have no mass to sample.
Dataset image_density(const std::string& pgm_path, std::int64_t n, std::uint64_t seed);

struct CsvOptions {
  bool has_header = false;
  bool auto_header = true;  // sniff: non-numeric first line means header
  char delimiter = ',';
  double validation_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  bool standardize = true;
  bool drop_constant_columns = true;
};

struct CsvSplits {
  Dataset train, val, test;
  Standardization stats;  // fitted on train, applied to all splits
};

// Rows are shuffled with the seed before splitting; standardization uses
// train-split statistics only. Malformed cells raise DataError naming the
// row and column.
CsvSplits load_csv(const std::string& path, const CsvOptions& opts);

// Applies existing statistics (e.g. from a checkpoint) to raw rows.
Tensor standardize_with(const Tensor& raw, const Standardization& stats);

// FNV-1a over the shape and raw bytes; pins data identity in run manifests.
std::uint64_t dataset_hash(const Dataset& d);

}  // namespace lrsflow::data
