#include "lrsflow/conditioner.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "lrsflow/rng.hpp"

using namespace lrsflow;

namespace {

Tensor random_batch(std::int64_t rows, std::int64_t cols, std::uint64_t seed) {
  Tensor t({rows, cols});
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

Tensor run_resnet(const cond::ResNet& net, const ad::ParamStore& store, const Tensor& x) {
  const auto leaves = store.make_leaves();
  return net.apply(leaves, ad::leaf(x), false, nullptr)->value;
}

Tensor run_made(const cond::Made& net, const ad::ParamStore& store, const Tensor& x) {
  const auto leaves = store.make_leaves();
  return net.apply(leaves, ad::leaf(x), false, nullptr)->value;
}

}  // namespace

TEST_CASE("dropout masks scale kept entries and are seed-deterministic") {
  Rng a(7), b(7);
  const Tensor m1 = cond::dropout_mask(20, 30, 0.4, a);
  const Tensor m2 = cond::dropout_mask(20, 30, 0.4, b);
  REQUIRE(m1.size() == 600);
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < m1.size(); ++i) {
    CHECK(m1[i] == m2[i]);
    const bool is_zero = m1[i] == 0.0;
    const bool is_scaled = std::fabs(m1[i] - 1.0 / 0.6) < 1e-12;
    CHECK((is_zero || is_scaled));
    kept += is_zero ? 0 : 1;
  }
  CHECK(kept > 600 * 0.45);  // ~60% kept, generous band
  CHECK(kept < 600 * 0.75);
}

TEST_CASE("resnet output layer starts at zero") {
  ad::ParamStore store;
  Rng init(11);
  cond::ResNetConfig cfg{3, 16, 2, 5, 0.0};
  cond::ResNet net(cfg, store, "c0", init);
  const Tensor out = run_resnet(net, store, random_batch(4, 3, 2));
  REQUIRE(out.shape() == std::vector<std::int64_t>{4, 5});
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("resnet reacts to inputs once the output layer is nonzero") {
  ad::ParamStore store;
  Rng init(12);
  cond::ResNetConfig cfg{2, 8, 1, 3, 0.0};
  cond::ResNet net(cfg, store, "c0", init);
  const int w_out = store.index_of("c0.w_out");
  REQUIRE(w_out >= 0);
  Rng fill(5);
  for (auto& v : store.value(std::size_t(w_out)).span()) v = fill.normal();

  const Tensor x1 = random_batch(3, 2, 21);
  Tensor x2 = x1;
  x2.at(1, 0) += 0.25;
  const Tensor o1 = run_resnet(net, store, x1);
  const Tensor o2 = run_resnet(net, store, x2);
  // Only the perturbed row moves.
  for (std::int64_t c = 0; c < 3; ++c) {
    CHECK(o1.at(0, c) == o2.at(0, c));
    CHECK(o1.at(2, c) == o2.at(2, c));
    CHECK(o1.at(1, c) != o2.at(1, c));
  }
}

TEST_CASE("resnet init is deterministic in the seed") {
  cond::ResNetConfig cfg{2, 8, 2, 4, 0.0};
  ad::ParamStore s1, s2, s3;
  Rng r1(9), r2(9), r3(10);
  cond::ResNet(cfg, s1, "c", r1);
  cond::ResNet(cfg, s2, "c", r2);
  cond::ResNet(cfg, s3, "c", r3);
  REQUIRE(s1.size() == s2.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    const auto& a = s1.value(i);
    const auto& b = s2.value(i);
    REQUIRE(a.same_shape(b));
    for (std::int64_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    for (std::int64_t j = 0; j < a.size(); ++j) {
      if (a[j] != s3.value(i)[j]) any_diff = true;
    }
  }
  CHECK(any_diff);  // a different seed actually changes the hidden weights
}

TEST_CASE("training-mode dropout is deterministic per rng state and off at p=0") {
  ad::ParamStore store;
  Rng init(31);
  cond::ResNetConfig cfg{2, 8, 1, 3, 0.5};
  cond::ResNet net(cfg, store, "c0", init);
  const int w_out = store.index_of("c0.w_out");
  Rng fill(6);
  for (auto& v : store.value(std::size_t(w_out)).span()) v = fill.normal();

  const Tensor x = random_batch(4, 2, 77);
  const auto leaves = store.make_leaves();
  Rng d1(42), d2(42), d3(43);
  const Tensor a = net.apply(leaves, ad::leaf(x), true, &d1)->value;
  const Tensor b = net.apply(leaves, ad::leaf(x), true, &d2)->value;
  const Tensor c = net.apply(leaves, ad::leaf(x), true, &d3)->value;
  bool c_differs = false;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    if (a[i] != c[i]) c_differs = true;
  }
  CHECK(c_differs);

  // Inference ignores the dropout rng entirely.
  Rng d4(999);
  const Tensor e = net.apply(leaves, ad::leaf(x), false, &d4)->value;
  const Tensor f = net.apply(leaves, ad::leaf(x), false, nullptr)->value;
  for (std::int64_t i = 0; i < e.size(); ++i) CHECK(e[i] == f[i]);
}

TEST_CASE("made output block for dimension i ignores inputs at i and later") {
  cond::MadeConfig cfg{3, {16, 16}, 2, 0.0};
  ad::ParamStore store;
  Rng init(13);
  cond::Made net(cfg, store, "m0", init);
  // Randomize every parameter so masked paths would show if they existed.
  Rng fill(14);
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (auto& v : store.value(i).span()) v = 0.5 * fill.normal();
  }

  const Tensor x = random_batch(1, 3, 50);
  const Tensor base = run_made(net, store, x);
  REQUIRE(base.shape() == std::vector<std::int64_t>{1, 6});

  for (int j = 0; j < 3; ++j) {
    Tensor bumped = x;
    bumped.at(0, j) += 0.37;
    const Tensor out = run_made(net, store, bumped);
    for (int block = 0; block < 3; ++block) {
      for (int r = 0; r < 2; ++r) {
        const double delta = std::fabs(out.at(0, block * 2 + r) - base.at(0, block * 2 + r));
        if (block <= j) {
          CHECK(delta == 0.0);  // autoregressive property, exactly
        }
      }
    }
  }

  // Later blocks must genuinely depend on earlier inputs.
  Tensor bumped = x;
  bumped.at(0, 0) += 0.37;
  const Tensor out = run_made(net, store, bumped);
  bool moved = false;
  for (int c = 2; c < 6; ++c) moved |= out.at(0, c) != base.at(0, c);
  CHECK(moved);
}

TEST_CASE("made block 0 is bias-only and zero at init") {
  cond::MadeConfig cfg{2, {8}, 3, 0.0};
  ad::ParamStore store;
  Rng init(15);
  cond::Made net(cfg, store, "m0", init);
  const Tensor out = run_made(net, store, random_batch(5, 2, 60));
  // Zero-initialized output layer: every parameter block starts at zero.
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);

  Rng fill(16);
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (auto& v : store.value(i).span()) v = 0.5 * fill.normal();
  }
  const Tensor a = run_made(net, store, random_batch(1, 2, 61));
  const Tensor b = run_made(net, store, random_batch(1, 2, 62));
  for (int r = 0; r < 3; ++r) {
    CHECK(a.at(0, r) == b.at(0, r));  // block 0 is input-independent
  }
}

TEST_CASE("made rejects one-dimensional data") {
  cond::MadeConfig cfg{1, {8}, 2, 0.0};
  ad::ParamStore store;
  Rng init(17);
  CHECK_THROWS(cond::Made(cfg, store, "m0", init));
}

TEST_CASE("made hidden masks connect only compatible degrees") {
  cond::MadeConfig cfg{4, {12, 12}, 1, 0.0};
  ad::ParamStore store;
  Rng init(18);
  cond::Made net(cfg, store, "m0", init);
  REQUIRE(net.num_layers() == 3);
  // First hidden mask: unit only where hidden degree >= input index + 1.
  const Tensor& m = net.mask(0);
  REQUIRE(m.shape()[0] == 4);
  for (std::int64_t i = 0; i < m.size(); ++i) {
    CHECK((m[i] == 0.0 || m[i] == 1.0));
  }
  // Input 3 (last dimension) may feed nothing that reaches any output: the
  // output block for dim j only sees degrees < j <= 3, and the final mask
  // forbids degree-4 paths. Verified behaviorally in the block test above;
  // here check it has strictly fewer connections than input 0.
  std::int64_t conn0 = 0, conn3 = 0;
  const std::int64_t width = m.shape()[1];
  for (std::int64_t c = 0; c < width; ++c) {
    conn0 += m.at(0, c) > 0 ? 1 : 0;
    conn3 += m.at(3, c) > 0 ? 1 : 0;
  }
  CHECK(conn0 >= conn3);
  CHECK(conn0 > 0);
}

TEST_CASE("made sequential-inversion masks reuse one dropout draw") {
  cond::MadeConfig cfg{3, {8}, 2, 0.5};
  ad::ParamStore store;
  Rng init(19);
  cond::Made net(cfg, store, "m0", init);
  Rng fill(20);
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (auto& v : store.value(i).span()) v = 0.5 * fill.normal();
  }

  Rng draw(91);
  const auto masks = net.draw_masks(4, draw);
  REQUIRE(masks.size() == 1);  // one per hidden layer

  const Tensor x = random_batch(4, 3, 70);
  const auto leaves = store.make_leaves();
  const Tensor a = net.apply(leaves, ad::leaf(x), true, nullptr, &masks)->value;
  const Tensor b = net.apply(leaves, ad::leaf(x), true, nullptr, &masks)->value;
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
