#include "lrsflow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lrsflow/errors.hpp"

namespace lrsflow::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Dataset gen_rings(std::int64_t n, std::uint64_t seed, double noise_sigma,
                  std::vector<double> radii, double scale) {
  if (n < 0) throw DataError("negative sample count");
  if (radii.empty()) throw DataError("rings: need at least one radius");
  Rng rng(Rng::derive(seed, 10));
  Dataset d;
  d.rows = Tensor({n, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    const double r = scale * radii[std::size_t(rng.below(radii.size()))];
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    d.rows[2 * i] = r * std::cos(angle) + noise_sigma * rng.normal();
    d.rows[2 * i + 1] = r * std::sin(angle) + noise_sigma * rng.normal();
  }
  d.provenance = "generator:rings";
  return d;
}

Dataset gen_checkerboard(std::int64_t n, std::uint64_t seed) {
  if (n < 0) throw DataError("negative sample count");
  // Even cells of a 4x4 board over [-4,4]^2; each cell is a 2x2 square.
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if ((i + j) % 2 == 0) cells.emplace_back(i, j);
    }
  }
  Rng rng(Rng::derive(seed, 11));
  Dataset d;
  d.rows = Tensor({n, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [ci, cj] = cells[std::size_t(rng.below(cells.size()))];
    d.rows[2 * i] = -4.0 + 2.0 * ci + 2.0 * rng.uniform();
    d.rows[2 * i + 1] = -4.0 + 2.0 * cj + 2.0 * rng.uniform();
  }
  d.provenance = "generator:checkerboard";
  return d;
}

Dataset gen_two_moons(std::int64_t n, std::uint64_t seed, double noise_sigma) {
  if (n < 0) throw DataError("negative sample count");
  Rng rng(Rng::derive(seed, 12));
  Dataset d;
  d.rows = Tensor({n, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    const bool second = rng.uniform() < 0.5;
    const double t = rng.uniform(0.0, kPi);
    double x = second ? 1.0 - std::cos(t) : std::cos(t);
    double y = second ? 0.5 - std::sin(t) : std::sin(t);
    x += noise_sigma * rng.normal();
    y += noise_sigma * rng.normal();
    // Center on the exact mixture mean, then spread out a bit.
    d.rows[2 * i] = 2.0 * (x - 0.5);
    d.rows[2 * i + 1] = 2.0 * (y - 0.25);
  }
  d.provenance = "generator:two_moons";
  return d;
}

Dataset gen_gaussian(std::int64_t n, std::uint64_t seed, int dim) {
  if (n < 0) throw DataError("negative sample count");
  if (dim < 1) throw DataError("gaussian: dim must be >= 1");
  Rng rng(Rng::derive(seed, 13));
  Dataset d;
  d.rows = Tensor({n, dim});
  for (std::int64_t i = 0; i < d.rows.size(); ++i) d.rows[i] = rng.normal();
  d.provenance = "generator:gaussian";
  return d;
}

Dataset generate(const std::string& name, std::int64_t n, std::uint64_t seed) {
  if (name == "rings") return gen_rings(n, seed);
  if (name == "checkerboard") return gen_checkerboard(n, seed);
  if (name == "two_moons") return gen_two_moons(n, seed);
  if (name == "gaussian") return gen_gaussian(n, seed);
  throw DataError("unknown generator: " + name);
}

namespace {

// Reads the next header token, skipping whitespace and # comments.
std::string next_pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(c));
  }
  return tok;
}

int parse_pgm_int(const std::string& tok, const char* what, int min = 1) {
  int v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || v < min) {
    throw DataError(std::string("pgm: bad ") + what + " '" + tok + "'");
  }
  return v;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  const std::string magic = next_pgm_token(in);
  if (magic != "P2" && magic != "P5") {
    throw DataError("pgm: unsupported magic '" + magic + "' in " + path);
  }
  GrayImage img;
  img.width = parse_pgm_int(next_pgm_token(in), "width");
  img.height = parse_pgm_int(next_pgm_token(in), "height");
  const int maxval = parse_pgm_int(next_pgm_token(in), "maxval");
  if (maxval > 255) throw DataError("pgm: 16-bit samples unsupported (maxval " +
                                    std::to_string(maxval) + ")");
  const std::int64_t count = std::int64_t(img.width) * img.height;
  if (count > 100'000'000) throw DataError("pgm: image too large");
  img.pixels.resize(std::size_t(count));
  if (magic == "P5") {
    // Header ends after exactly one whitespace character.
    in.read(reinterpret_cast<char*>(img.pixels.data()), count);
    if (in.gcount() != count) throw DataError("pgm: truncated pixel data in " + path);
  } else {
    for (std::int64_t i = 0; i < count; ++i) {
      const std::string tok = next_pgm_token(in);
      if (tok.empty()) throw DataError("pgm: truncated pixel data in " + path);
      const int v = parse_pgm_int(tok, "pixel", 0);
      if (v > maxval) throw DataError("pgm: pixel exceeds maxval in " + path);
      img.pixels[std::size_t(i)] = std::uint8_t(v);
    }
  }
  // Normalize to a 255 scale so density weights are comparable.
  if (maxval != 255) {
    for (auto& p : img.pixels) p = std::uint8_t(int(p) * 255 / maxval);
  }
  return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            std::int64_t(img.pixels.size()));
}

Dataset image_density(const std::string& pgm_path, std::int64_t n, std::uint64_t seed) {
  const GrayImage img = read_pgm(pgm_path);
  std::vector<double> cum(img.pixels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    total += 255.0 - double(img.pixels[i]);  // darkness carries the mass
    cum[i] = total;
  }
  if (total <= 0.0) throw DataError("image has no mass (all pixels white): " + pgm_path);

  Rng rng(Rng::derive(seed, 14));
  Dataset d;
  d.rows = Tensor({n, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const auto idx = std::size_t(std::min<std::ptrdiff_t>(it - cum.begin(),
                                                          std::ptrdiff_t(cum.size()) - 1));
    const std::int64_t r = std::int64_t(idx) / img.width;
    const std::int64_t c = std::int64_t(idx) % img.width;
    // Jitter within the pixel; flip rows so image-up is +y.
    d.rows[2 * i] = (double(c) + rng.uniform()) / img.width;
    d.rows[2 * i + 1] = (double(img.height - 1 - r) + rng.uniform()) / img.height;
  }
  d.provenance = "image:" + pgm_path;
  return d;
}

namespace {

double parse_cell(const std::string& cell, std::int64_t row, std::size_t col) {
  std::size_t a = 0, b = cell.size();
  while (a < b && std::isspace(static_cast<unsigned char>(cell[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(cell[b - 1]))) --b;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(cell.data() + a, cell.data() + b, v);
  if (ec != std::errc() || p != cell.data() + b || a == b) {
    throw DataError("csv: row " + std::to_string(row) + ", column " +
                    std::to_string(col + 1) + ": cannot parse '" + cell + "'");
  }
  return v;
}

bool line_is_numeric(const std::string& line, char delim) {
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, delim)) {
    std::size_t a = 0, b = cell.size();
    while (a < b && std::isspace(static_cast<unsigned char>(cell[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(cell[b - 1]))) --b;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(cell.data() + a, cell.data() + b, v);
    if (ec != std::errc() || p != cell.data() + b || a == b) return false;
  }
  return true;
}

}  // namespace

CsvSplits load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open csv: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  std::int64_t lineno = 0;
  std::size_t ncols = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (opts.has_header || (opts.auto_header && !line_is_numeric(line, opts.delimiter))) {
        continue;
      }
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, opts.delimiter)) {
      row.push_back(parse_cell(cell, lineno, row.size()));
    }
    if (ncols == 0) {
      ncols = row.size();
    } else if (row.size() != ncols) {
      throw DataError("csv: row " + std::to_string(lineno) + " has " +
                      std::to_string(row.size()) + " columns, expected " +
                      std::to_string(ncols));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || ncols == 0) throw DataError("csv: no data rows in " + path);

  Rng rng(Rng::derive(opts.seed, 5));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  const auto n = std::int64_t(rows.size());
  const auto n_test = std::int64_t(double(n) * opts.test_fraction);
  const auto n_val = std::int64_t(double(n) * opts.validation_fraction);
  const auto n_train = n - n_test - n_val;
  if (n_train < 2) {
    throw DataError("csv: " + std::to_string(n) + " rows leave " +
                    std::to_string(n_train) + " for training after splits");
  }

  auto take = [&](std::int64_t lo, std::int64_t hi) {
    Tensor t({hi - lo, std::int64_t(ncols)});
    for (std::int64_t i = lo; i < hi; ++i) {
      const auto& src = rows[order[std::size_t(i)]];
      for (std::size_t j = 0; j < ncols; ++j) {
        t[(i - lo) * std::int64_t(ncols) + std::int64_t(j)] = src[j];
      }
    }
    return t;
  };
  Tensor train_raw = take(0, n_train);
  Tensor val_raw = take(n_train, n_train + n_val);
  Tensor test_raw = take(n_train + n_val, n);

  Standardization st;
  st.source_columns = int(ncols);
  std::vector<double> mean(ncols, 0.0), sd(ncols, 0.0);
  for (std::int64_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < ncols; ++j) mean[j] += train_raw[i * std::int64_t(ncols) + std::int64_t(j)];
  }
  for (auto& m : mean) m /= double(n_train);
  for (std::int64_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < ncols; ++j) {
      const double dv = train_raw[i * std::int64_t(ncols) + std::int64_t(j)] - mean[j];
      sd[j] += dv * dv;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / double(n_train));

  for (std::size_t j = 0; j < ncols; ++j) {
    if (opts.drop_constant_columns && sd[j] < 1e-12) continue;
    st.kept_columns.push_back(int(j));
    st.mean.push_back(mean[j]);
    st.stddev.push_back(sd[j] < 1e-12 ? 1.0 : sd[j]);
  }
  if (st.kept_columns.empty()) throw DataError("csv: every column is constant in " + path);

  CsvSplits out;
  out.stats = st;
  auto finish = [&](Tensor&& raw, const char* tag) {
    Dataset d;
    d.rows = opts.standardize ? standardize_with(raw, st) : std::move(raw);
    d.stats = st;
    d.provenance = "csv:" + path + ":" + tag;
    return d;
  };
  out.train = finish(std::move(train_raw), "train");
  out.val = finish(std::move(val_raw), "val");
  out.test = finish(std::move(test_raw), "test");
  return out;
}

Tensor standardize_with(const Tensor& raw, const Standardization& stats) {
  const std::int64_t cols = raw.shape()[1];
  const auto kept = std::int64_t(stats.kept_columns.size());
  const bool select = cols == stats.source_columns;
  if (!select && cols != kept) {
    throw DataError("standardize: input has " + std::to_string(cols) +
                    " columns; statistics expect " + std::to_string(stats.source_columns) +
                    " raw or " + std::to_string(kept) + " selected");
  }
  const std::int64_t n = raw.shape()[0];
  Tensor out({n, kept});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < kept; ++j) {
      const std::int64_t src = select ? stats.kept_columns[std::size_t(j)] : j;
      out[i * kept + j] = (raw[i * cols + src] - stats.mean[std::size_t(j)]) /
                          stats.stddev[std::size_t(j)];
    }
  }
  return out;
}

std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  const std::int64_t shape[2] = {d.rows.shape()[0], d.rows.shape()[1]};
  mix(shape, sizeof shape);
  mix(d.rows.data(), std::size_t(d.rows.size()) * sizeof(double));
  return h;
}

}  // namespace lrsflow::data
