#include <doctest.h>

#include "support.hpp"
#include "vgqe/fusion.hpp"
#include "vgqe/grad_check.hpp"

using namespace vgqe;
using testing::gaussian;

namespace {

std::vector<std::size_t> sizes(const std::vector<ChunkRange>& parts) {
  std::vector<std::size_t> out;
  for (const auto& p : parts) out.push_back(p.size());
  return out;
}

/// Dense evaluation of the block-term fusion for one row.
std::vector<double> dense_block(const BlockFusionParams& p, std::span<const double> x, std::span<const double> y) {
  const auto& c = p.config;
  auto px = testing::dense_matmul(x, p.proj_x.data(), 1, c.x_dim, c.proj_dim);
  auto py = testing::dense_matmul(y, p.proj_y.data(), 1, c.y_dim, c.proj_dim);
  if (c.use_bias) {
    for (std::size_t i = 0; i < c.proj_dim; ++i) {
      px[i] += p.proj_x_bias[i];
      py[i] += p.proj_y_bias[i];
    }
  }
  std::vector<double> z(c.proj_out_dim, 0.0);
  for (std::size_t ch = 0; ch < c.chunks; ++ch) {
    const auto in = p.in_chunks[ch], out = p.out_chunks[ch];
    for (std::size_t r = 0; r < c.rank; ++r) {
      const auto& a = p.factor_x[ch][r];
      const auto& b = p.factor_y[ch][r];
      for (std::size_t j = 0; j < out.size(); ++j) {
        double u = 0.0, v = 0.0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          u += px[in.begin + i] * a.at(i, j);
          v += py[in.begin + i] * b.at(i, j);
        }
        z[out.begin + j] += u * v;
      }
    }
  }
  if (c.use_output_nonlinearity) {
    double n = 0.0;
    for (double v : z) n += v * v;
    n = std::sqrt(n + 1e-12);
    for (auto& v : z) v /= n;
  }
  auto o = testing::dense_matmul(z, p.proj_out.data(), 1, c.proj_out_dim, c.out_dim);
  if (c.use_bias)
    for (std::size_t i = 0; i < c.out_dim; ++i) o[i] += p.proj_out_bias[i];
  return o;
}

}  // namespace

TEST_CASE("partition examples") {
  CHECK(sizes(partition(10, 3)) == std::vector<std::size_t>{4, 3, 3});
  auto big = partition(1000, 15);
  const auto big_sizes = sizes(big);
  CHECK(std::count(big_sizes.begin(), big_sizes.end(), 67u) == 10);
  CHECK(std::count(big_sizes.begin(), big_sizes.end(), 66u) == 5);
  std::size_t at = 0;
  for (const auto& r : big) {
    CHECK(r.begin == at);
    at = r.end;
  }
  CHECK(at == 1000);
  CHECK_THROWS(partition(3, 4));
  CHECK_THROWS(partition(3, 0));
}

TEST_CASE("block_params_init validation and determinism") {
  CHECK_THROWS(block_params_init(BlockFusionConfig{3, 3, 4, 4, 2, 5, 1, false, false}, 0));
  CHECK_THROWS(block_params_init(BlockFusionConfig{3, 3, 4, 4, 2, 2, 0, false, false}, 0));
  CHECK_THROWS(block_params_init(BlockFusionConfig{0, 3, 4, 4, 2, 2, 1, false, false}, 0));
  const BlockFusionConfig cfg{5, 4, 10, 9, 3, 3, 2, true, false};
  auto a = block_params_init(cfg, 42), b = block_params_init(cfg, 42), c = block_params_init(cfg, 43);
  ParamList la, lb, lc;
  a.collect(la, "f");
  b.collect(lb, "f");
  c.collect(lc, "f");
  REQUIRE(la.size() == lb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(*la[i].tensor == *lb[i].tensor);
    any_diff = any_diff || !(*la[i].tensor == *lc[i].tensor);
  }
  CHECK(any_diff);
  CHECK(sizes(a.in_chunks) == std::vector<std::size_t>{4, 3, 3});
  CHECK(sizes(a.out_chunks) == std::vector<std::size_t>{3, 3, 3});
}

TEST_CASE("block_fuse examples") {
  auto rng = make_rng(1, {0xf});
  auto p = block_params_init(BlockFusionConfig{4, 3, 8, 8, 5, 2, 2, false, false}, 7);
  ad::Tape tape;
  auto y = tape.constant(gaussian({3}, rng));
  auto zero = block_fuse(tape.constant(Tensor({4})), y, p).value();
  for (double v : zero.data()) CHECK(v == 0.0);

  auto x = gaussian({4}, rng);
  auto f1 = block_fuse(tape.constant(x), y, p).value();
  auto f2 = block_fuse(ad::scale(tape.constant(x), 2.0), y, p).value();
  for (std::size_t i = 0; i < f1.size(); ++i) CHECK(std::abs(f2[i] - 2.0 * f1[i]) < 1e-9);
  CHECK(f1.shape() == Shape{5});

  CHECK_THROWS_AS(block_fuse(tape.constant(Tensor({3})), y, p), ShapeError);
  CHECK_THROWS_AS(block_fuse(tape.constant(Tensor({2, 4})), tape.constant(Tensor({3, 3})), p), ShapeError);
}

TEST_CASE("single chunk, single rank matches a hand computation") {
  auto p = block_params_init(BlockFusionConfig{3, 3, 3, 3, 3, 1, 1, false, false}, 0);
  const Tensor ident = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  p.proj_x = ident;
  p.proj_y = ident;
  p.factor_x[0][0] = Tensor::matrix({{1, 2, 0}, {0, 1, 0}, {1, 0, 1}});   // A
  p.factor_y[0][0] = Tensor::matrix({{2, 0, 0}, {0, 1, 1}, {0, 0, 3}});   // B
  p.proj_out = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {1, 1, 1}});
  ad::Tape tape;
  auto out = block_fuse(tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::vector({1, -1, 2})), p).value();
  // xA = [4, 4, 3], yB = [2, -1, 5], product = [8, -4, 15], times proj_out = [23, 11, 15]
  CHECK(out == Tensor::vector({23, 11, 15}));
}

TEST_CASE("block_fuse matches the dense oracle with every flag combination") {
  for (int flags = 0; flags < 4; ++flags) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto rng = make_rng(seed, {0x10, static_cast<std::uint64_t>(flags)});
      auto p = block_params_init(BlockFusionConfig{6, 5, 11, 10, 4, 3, 2, (flags & 1) != 0, (flags & 2) != 0}, rng());
      for (auto* b : {&p.proj_x_bias, &p.proj_y_bias, &p.proj_out_bias})
        if (b->size() > 1) *b = gaussian(b->shape(), rng);
      auto x = gaussian({2, 6}, rng), y = gaussian({2, 5}, rng);
      ad::Tape tape;
      auto got = block_fuse(tape.constant(x), tape.constant(y), p).value();
      for (std::size_t r = 0; r < 2; ++r) {
        auto expect = dense_block(p, x.data().subspan(r * 6, 6), y.data().subspan(r * 5, 5));
        double scale = 1.0;
        for (double v : expect) scale = std::max(scale, std::abs(v));
        CHECK(testing::max_abs_diff(got.data().subspan(r * 4, 4), expect) < 1e-12 * scale);
      }
    }
  }
}

TEST_CASE("bilinearity with flags off") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, {0x11});
    auto p = block_params_init(BlockFusionConfig{7, 6, 12, 9, 5, 4, 3, false, false}, rng());
    auto x1 = gaussian({3, 7}, rng), x2 = gaussian({3, 7}, rng);
    auto y1 = gaussian({3, 6}, rng), y2 = gaussian({3, 6}, rng);
    ad::Tape t;
    auto f = [&](const Tensor& x, const Tensor& y) { return block_fuse(t.constant(x), t.constant(y), p).value(); };
    auto sum = [](const Tensor& a, const Tensor& b) {
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      return out;
    };
    auto fx = f(sum(x1, x2), y1), a = f(x1, y1), b = f(x2, y1);
    auto fy = f(x1, sum(y1, y2)), c = f(x1, y2);
    for (std::size_t i = 0; i < fx.size(); ++i) {
      CHECK(std::abs(fx[i] - a[i] - b[i]) < 1e-9);
      CHECK(std::abs(fy[i] - a[i] - c[i]) < 1e-9);
    }
  }
}

TEST_CASE("zeroing one chunk's factors changes only that chunk's slice") {
  auto rng = make_rng(5, {0x12});
  auto p = block_params_init(BlockFusionConfig{5, 5, 10, 10, 10, 3, 2, false, false}, 3);
  p.proj_out = Tensor({10, 10});
  for (std::size_t i = 0; i < 10; ++i) p.proj_out.at(i, i) = 1.0;
  auto x = gaussian({5}, rng), y = gaussian({5}, rng);
  ad::Tape tape;
  auto before = block_fuse(tape.constant(x), tape.constant(y), p).value();
  for (auto& t : p.factor_x[1]) t = Tensor(t.shape());
  for (auto& t : p.factor_y[1]) t = Tensor(t.shape());
  auto after = block_fuse(tape.constant(x), tape.constant(y), p).value();
  const auto slice = p.out_chunks[1];
  for (std::size_t i = 0; i < 10; ++i) {
    if (i >= slice.begin && i < slice.end) {
      CHECK(after[i] == 0.0);
      CHECK(before[i] != 0.0);
    } else {
      CHECK(after[i] == before[i]);
    }
  }
}

TEST_CASE("block_fuse gradients w.r.t. inputs and parameters") {
  for (bool flags : {false, true}) {
    auto rng = make_rng(flags ? 2 : 1, {0x13});
    auto p = block_params_init(BlockFusionConfig{4, 3, 7, 6, 3, 2, 2, flags, flags}, rng());
    auto x = gaussian({2, 4}, rng), y = gaussian({2, 3}, rng), w = gaussian({2, 3}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    ParamList list;
    p.collect(list, "f");
    std::vector<Tensor*> ts{&x, &y};
    for (auto& np : list) ts.push_back(np.tensor);
    auto report = grad_check_params(
        [&](ad::Tape& t) {
          return ad::sum_all(ad::mul(block_fuse(t.parameter(x), t.parameter(y), p), t.constant(w)));
        },
        ts);
    CHECK(report.max_rel_error < 1e-4);
    CHECK(report.coordinates > 0);
  }
}
