#include "lrsflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "lrsflow/errors.hpp"

using namespace lrsflow;

TEST_CASE("noiseless rings land exactly on the scaled radii") {
  const auto d = data::gen_rings(4000, 3, /*noise_sigma=*/0.0);
  REQUIRE(d.dim() == 2);
  const std::vector<double> radii = {0.75, 1.5, 2.25, 3.0};
  std::vector<int> counts(4, 0);
  for (std::int64_t i = 0; i < d.n(); ++i) {
    const auto row = d.row(i);
    const double r = std::hypot(row[0], row[1]);
    const auto it = std::min_element(radii.begin(), radii.end(), [&](double a, double b) {
      return std::fabs(a - r) < std::fabs(b - r);
    });
    CHECK(std::fabs(*it - r) < 1e-12);
    ++counts[std::size_t(it - radii.begin())];
  }
  for (int c : counts) CHECK(c > 4000 / 8);  // every ring carries mass
  CHECK(d.provenance == "generator:rings");
}

TEST_CASE("noisy rings stay in bands and avoid the gaps") {
  const auto d = data::gen_rings(20000, 4, 0.08);
  std::int64_t in_gap = 0;
  for (std::int64_t i = 0; i < d.n(); ++i) {
    const auto row = d.row(i);
    const double r = std::hypot(row[0], row[1]);
    // Midpoints between rings are 0.375 away from each; sigma is 0.08.
    if (std::fabs(r - 1.125) < 0.1 || std::fabs(r - 1.875) < 0.1 || std::fabs(r - 2.625) < 0.1) {
      ++in_gap;
    }
  }
  CHECK(in_gap < d.n() / 100);
}

TEST_CASE("checkerboard mass sits on the even cells only") {
  const auto d = data::gen_checkerboard(20000, 5);
  std::set<std::pair<int, int>> seen;
  for (std::int64_t i = 0; i < d.n(); ++i) {
    const auto row = d.row(i);
    REQUIRE(row[0] >= -4.0);
    REQUIRE(row[0] < 4.0);
    const int ci = int(std::floor((row[0] + 4.0) / 2.0));
    const int cj = int(std::floor((row[1] + 4.0) / 2.0));
    CHECK((ci + cj) % 2 == 0);
    seen.emplace(ci, cj);
  }
  CHECK(seen.size() == 8);  // all eight even cells populated
}

TEST_CASE("two moons and checkerboard are centered") {
  for (const char* name : {"two_moons", "checkerboard"}) {
    const auto d = data::generate(name, 20000, 6);
    double mx = 0.0, my = 0.0;
    for (std::int64_t i = 0; i < d.n(); ++i) {
      mx += d.row(i)[0];
      my += d.row(i)[1];
    }
    mx /= double(d.n());
    my /= double(d.n());
    CHECK(std::fabs(mx) < 0.08);
    CHECK(std::fabs(my) < 0.08);
  }
}

TEST_CASE("gaussian generator has unit moments") {
  const auto d = data::gen_gaussian(40000, 7, 3);
  REQUIRE(d.dim() == 3);
  for (int j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::int64_t i = 0; i < d.n(); ++i) m += d.row(i)[std::size_t(j)];
    m /= double(d.n());
    for (std::int64_t i = 0; i < d.n(); ++i) {
      const double dv = d.row(i)[std::size_t(j)] - m;
      v += dv * dv;
    }
    v /= double(d.n());
    CHECK(std::fabs(m) < 5.0 / std::sqrt(double(d.n())));
    CHECK(std::fabs(v - 1.0) < 0.05);
  }
}

TEST_CASE("generators are keyed by seed") {
  for (const char* name : {"rings", "checkerboard", "two_moons", "gaussian"}) {
    const auto a = data::generate(name, 64, 1);
    const auto b = data::generate(name, 64, 1);
    const auto c = data::generate(name, 64, 2);
    REQUIRE(a.n() == 64);
    bool same_seed_equal = true, other_seed_equal = true;
    for (std::int64_t i = 0; i < a.rows.size(); ++i) {
      same_seed_equal = same_seed_equal && a.rows[i] == b.rows[i];
      other_seed_equal = other_seed_equal && a.rows[i] == c.rows[i];
    }
    CHECK(same_seed_equal);
    CHECK(!other_seed_equal);
  }
  CHECK_THROWS_WITH_AS(data::generate("spiral", 10, 0), doctest::Contains("spiral"),
                       DataError);
}

TEST_CASE("pgm files round trip through write and read") {
  testutil::TempDir tmp;
  data::GrayImage img;
  img.width = 3;
  img.height = 2;
  img.pixels = {0, 10, 255, 128, 90, 7};
  const auto path = tmp.file("img.pgm");
  data::write_pgm(path, img);
  const auto back = data::read_pgm(path);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  REQUIRE(back.pixels.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("ascii pgm parses with comments and rescaled maxval") {
  testutil::TempDir tmp;
  const auto path = tmp.file("ascii.pgm");
  testutil::write_file(path, "P2\n# a comment\n2 2\n15\n0 15\n# mid\n5 10\n");
  const auto img = data::read_pgm(path);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.pixels[0] == 0);
  CHECK(img.pixels[1] == 255);  // maxval 15 rescaled to 255
  CHECK(img.pixels[2] == 85);
  CHECK(img.pixels[3] == 170);
}

TEST_CASE("malformed pgm inputs are rejected") {
  testutil::TempDir tmp;
  const auto color = tmp.file("color.ppm");
  testutil::write_file(color, "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(data::read_pgm(color), DataError);

  const auto truncated = tmp.file("short.pgm");
  testutil::write_file(truncated, "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(data::read_pgm(truncated), DataError);

  const auto wide = tmp.file("wide.pgm");
  testutil::write_file(wide, "P2\n1 1\n65535\n1000\n");
  CHECK_THROWS_AS(data::read_pgm(wide), DataError);

  CHECK_THROWS_AS(data::read_pgm(tmp.file("missing.pgm")), DataError);
}

TEST_CASE("a uniform image samples the unit square uniformly") {
  testutil::TempDir tmp;
  data::GrayImage img;
  img.width = 8;
  img.height = 8;
  img.pixels.assign(64, 0);  // all black: constant density
  const auto path = tmp.file("black.pgm");
  data::write_pgm(path, img);

  const auto d = data::image_density(path, 20000, 9);
  // Chi-square against uniform on a 10x10 grid; 99 dof, alpha 0.01 -> 134.64.
  std::vector<double> counts(100, 0.0);
  for (std::int64_t i = 0; i < d.n(); ++i) {
    const auto row = d.row(i);
    REQUIRE(row[0] >= 0.0);
    REQUIRE(row[0] < 1.0);
    REQUIRE(row[1] >= 0.0);
    REQUIRE(row[1] < 1.0);
    const int cx = std::min(9, int(row[0] * 10.0));
    const int cy = std::min(9, int(row[1] * 10.0));
    counts[std::size_t(cy * 10 + cx)] += 1.0;
  }
  const double expect = 200.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 134.64);
}

TEST_CASE("image mass follows darkness and the vertical axis points up") {
  testutil::TempDir tmp;
  data::GrayImage img;
  img.width = 4;
  img.height = 4;
  img.pixels.assign(16, 255);  // white carries no mass
  img.pixels[3] = 0;           // top-right pixel only
  const auto path = tmp.file("dot.pgm");
  data::write_pgm(path, img);

  const auto d = data::image_density(path, 500, 10);
  for (std::int64_t i = 0; i < d.n(); ++i) {
    const auto row = d.row(i);
    CHECK(row[0] >= 0.75);  // column 3 of 4
    CHECK(row[1] >= 0.75);  // image row 0 maps to the top band
  }

  const auto again = data::image_density(path, 500, 10);
  for (std::int64_t i = 0; i < d.rows.size(); ++i) CHECK(d.rows[i] == again.rows[i]);

  data::GrayImage blank;
  blank.width = 2;
  blank.height = 2;
  blank.pixels.assign(4, 255);
  const auto empty = tmp.file("white.pgm");
  data::write_pgm(empty, blank);
  CHECK_THROWS_WITH_AS(data::image_density(empty, 10, 0), doctest::Contains("no mass"),
                       DataError);
}

namespace {

// Fixture with two far-apart clusters so standardization is easy to audit.
const char* kCsvFixture =
    "0,7\n"
    "1,8\n"
    "2,9\n"
    "3,10\n"
    "100,107\n"
    "101,108\n";

}  // namespace

TEST_CASE("csv splits are disjoint, exhaustive, and standardized on train stats") {
  testutil::TempDir tmp;
  const auto path = tmp.file("points.csv");
  testutil::write_file(path, kCsvFixture);

  data::CsvOptions opts;
  opts.validation_fraction = 1.0 / 3.0;
  opts.test_fraction = 0.0;
  opts.seed = 3;
  const auto splits = data::load_csv(path, opts);
  REQUIRE(splits.train.n() == 4);
  REQUIRE(splits.val.n() == 2);
  REQUIRE(splits.test.n() == 0);
  REQUIRE(splits.train.dim() == 2);

  // Train columns have zero mean and unit (population) spread.
  for (int j = 0; j < 2; ++j) {
    double m = 0.0, v = 0.0;
    for (std::int64_t i = 0; i < 4; ++i) m += splits.train.row(i)[std::size_t(j)];
    m /= 4.0;
    for (std::int64_t i = 0; i < 4; ++i) {
      const double dv = splits.train.row(i)[std::size_t(j)] - m;
      v += dv * dv;
    }
    CHECK(std::fabs(m) < 1e-12);
    CHECK(std::fabs(std::sqrt(v / 4.0) - 1.0) < 1e-12);
  }

  // Undoing the transform recovers each fixture row exactly once.
  const auto& st = splits.stats;
  REQUIRE(st.kept_columns.size() == 2);
  std::multiset<double> recovered;
  auto collect = [&](const data::Dataset& d) {
    for (std::int64_t i = 0; i < d.n(); ++i) {
      const double x = d.row(i)[0] * st.stddev[0] + st.mean[0];
      const double y = d.row(i)[1] * st.stddev[1] + st.mean[1];
      CHECK(std::fabs(y - x - 7.0) < 1e-9);
      recovered.insert(std::round(x));
    }
  };
  collect(splits.train);
  collect(splits.val);
  const std::multiset<double> want = {0, 1, 2, 3, 100, 101};
  CHECK(recovered == want);
}

TEST_CASE("csv errors name the offending row and column") {
  testutil::TempDir tmp;
  const auto bad = tmp.file("bad.csv");
  testutil::write_file(bad, "1,2\n3,4\n5,abc\n7,8\n9,10\n11,12\n13,14\n15,16\n17,18\n19,20\n");
  data::CsvOptions opts;
  try {
    data::load_csv(bad, opts);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
    CHECK(msg.find("abc") != std::string::npos);
  }

  const auto ragged = tmp.file("ragged.csv");
  testutil::write_file(ragged, "1,2\n3,4,5\n");
  CHECK_THROWS_WITH_AS(data::load_csv(ragged, opts), doctest::Contains("expected"),
                       DataError);

  const auto empty = tmp.file("empty.csv");
  testutil::write_file(empty, "");
  CHECK_THROWS_AS(data::load_csv(empty, opts), DataError);

  CHECK_THROWS_AS(data::load_csv(tmp.file("nope.csv"), opts), DataError);

  // Too few rows to leave a training split.
  const auto tiny = tmp.file("tiny.csv");
  testutil::write_file(tiny, "1,2\n");
  CHECK_THROWS_AS(data::load_csv(tiny, opts), DataError);
}

TEST_CASE("csv header handling sniffs text and honors the explicit flag") {
  testutil::TempDir tmp;
  data::CsvOptions opts;
  opts.validation_fraction = 0.0;
  opts.test_fraction = 0.0;
  opts.standardize = false;

  const auto with_header = tmp.file("head.csv");
  testutil::write_file(with_header, "x,y\n1,2\n3,4\n");
  CHECK(data::load_csv(with_header, opts).train.n() == 2);

  const auto numeric = tmp.file("plain.csv");
  testutil::write_file(numeric, "1,2\n3,4\n5,6\n");
  CHECK(data::load_csv(numeric, opts).train.n() == 3);  // sniffer keeps numeric line

  auto forced = opts;
  forced.has_header = true;
  CHECK(data::load_csv(numeric, forced).train.n() == 2);  // first row dropped on demand

  auto strict = opts;
  strict.auto_header = false;
  CHECK_THROWS_AS(data::load_csv(with_header, strict), DataError);  // "x" fails to parse
}

TEST_CASE("csv shuffling and splits are keyed by seed") {
  testutil::TempDir tmp;
  const auto path = tmp.file("rows.csv");
  std::string body;
  for (int i = 0; i < 50; ++i) body += std::to_string(i) + "," + std::to_string(2 * i) + "\n";
  testutil::write_file(path, body);
  data::CsvOptions opts;
  opts.seed = 7;
  const auto a = data::load_csv(path, opts);
  const auto b = data::load_csv(path, opts);
  auto other = opts;
  other.seed = 8;
  const auto c = data::load_csv(path, other);
  REQUIRE(a.train.n() == b.train.n());
  bool ab_equal = true, ac_equal = true;
  for (std::int64_t i = 0; i < a.train.rows.size(); ++i) {
    ab_equal = ab_equal && a.train.rows[i] == b.train.rows[i];
    ac_equal = ac_equal && a.train.rows[i] == c.train.rows[i];
  }
  CHECK(ab_equal);
  CHECK(!ac_equal);
  CHECK(a.train.n() + a.val.n() + a.test.n() == 50);
  CHECK(a.val.n() == 5);
  CHECK(a.test.n() == 5);
}

TEST_CASE("constant columns are dropped and recorded in the statistics") {
  testutil::TempDir tmp;
  const auto path = tmp.file("const.csv");
  testutil::write_file(path, "1,5,2\n2,5,4\n3,5,6\n4,5,8\n5,5,10\n6,5,12\n7,5,14\n8,5,16\n9,5,18\n10,5,20\n");
  data::CsvOptions opts;
  opts.seed = 1;
  const auto splits = data::load_csv(path, opts);
  CHECK(splits.train.dim() == 2);
  CHECK(splits.stats.source_columns == 3);
  REQUIRE(splits.stats.kept_columns.size() == 2);
  CHECK(splits.stats.kept_columns[0] == 0);
  CHECK(splits.stats.kept_columns[1] == 2);

  auto keep = opts;
  keep.drop_constant_columns = false;
  const auto all = data::load_csv(path, keep);
  CHECK(all.train.dim() == 3);
  CHECK(all.stats.stddev[1] == 1.0);  // zero spread pinned to 1 to avoid division blowups
}

TEST_CASE("standardize_with selects source columns or accepts selected input") {
  data::Standardization st;
  st.source_columns = 3;
  st.kept_columns = {0, 2};
  st.mean = {1.0, 2.0};
  st.stddev = {2.0, 4.0};

  Tensor raw({1, 3}, {3.0, 99.0, 10.0});
  const auto z = data::standardize_with(raw, st);
  REQUIRE(z.shape()[1] == 2);
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(2.0).epsilon(1e-15));

  Tensor selected({1, 2}, {3.0, 10.0});
  const auto z2 = data::standardize_with(selected, st);
  CHECK(z2[0] == z[0]);
  CHECK(z2[1] == z[1]);

  Tensor wrong({1, 4});
  CHECK_THROWS_AS(data::standardize_with(wrong, st), DataError);
}

TEST_CASE("dataset hashes react to values and to shape") {
  auto d = data::gen_gaussian(8, 1, 2);
  const auto h0 = data::dataset_hash(d);
  CHECK(h0 == data::dataset_hash(d));

  auto flipped = d;
  flipped.rows[5] = flipped.rows[5] + 1e-12;
  CHECK(data::dataset_hash(flipped) != h0);

  data::Dataset reshaped;
  reshaped.rows = Tensor({4, 4}, std::vector<double>(d.rows.span().begin(), d.rows.span().end()));
  CHECK(data::dataset_hash(reshaped) != h0);
}
