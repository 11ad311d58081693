#include <doctest.h>

#include "support.hpp"
#include "vgqe/encoder.hpp"
#include "vgqe/grad_check.hpp"

using namespace vgqe;
using testing::gaussian;

namespace {

using Vec = std::vector<double>;

Vec row_times(const Vec& x, const Tensor& w) { return testing::dense_matmul(x, w.data(), 1, x.size(), w.dim(1)); }

/// Hand-written GRU step on plain vectors.
Vec gru_oracle(const Vec& x, const Vec& h, const GruParams& p) {
  const auto xz = row_times(x, p.w_z), hz = row_times(h, p.u_z);
  const auto xr = row_times(x, p.w_r), hr = row_times(h, p.u_r);
  Vec z(p.hidden), r(p.hidden), rh(p.hidden);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    z[j] = testing::sigmoid(xz[j] + hz[j] + p.b_z[j]);
    r[j] = testing::sigmoid(xr[j] + hr[j] + p.b_r[j]);
    rh[j] = r[j] * h[j];
  }
  const auto xh = row_times(x, p.w_h), hh = row_times(rh, p.u_h);
  Vec out(p.hidden);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    const double cand = std::tanh(xh[j] + hh[j] + p.b_h[j]);
    out[j] = (1.0 - z[j]) * h[j] + z[j] * cand;
  }
  return out;
}

Vec table_row(const EmbeddingTable& t, std::size_t id) {
  auto d = t.table.data().subspan(id * t.dim(), t.dim());
  return {d.begin(), d.end()};
}

Vec encode_oracle(const std::vector<std::size_t>& ids, const EmbeddingTable& t, const GruParams& f,
                  const GruParams& b) {
  Vec hf(f.hidden, 0.0), hb(b.hidden, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) hf = gru_oracle(table_row(t, ids[i]), hf, f);
  for (std::size_t i = ids.size(); i-- > 0;) hb = gru_oracle(table_row(t, ids[i]), hb, b);
  hf.insert(hf.end(), hb.begin(), hb.end());
  return hf;
}

void randomize_biases(GruParams& p, std::mt19937_64& rng) {
  for (auto* b : {&p.b_z, &p.b_r, &p.b_h}) *b = gaussian(b->shape(), rng, 0.5);
}

GruParams zero_gru(std::size_t in, std::size_t hidden) {
  auto p = gru_params_init(in, hidden, 0);
  for (auto* t : {&p.w_z, &p.u_z, &p.b_z, &p.w_r, &p.u_r, &p.b_r, &p.w_h, &p.u_h, &p.b_h}) *t = Tensor(t->shape());
  return p;
}

}  // namespace

TEST_CASE("embedding lookup") {
  auto table = make_embedding_table(6, 4, 3);
  CHECK(table.frozen);
  CHECK_FALSE(table.table.requires_grad());
  ad::Tape tape;
  auto e = embed(tape, QuestionTokens{{2, 0, 2}, 0}, table).value();
  REQUIRE(e.shape() == Shape{3, 4});
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(e.at(0, j) == table.table.at(2, j));
    CHECK(e.at(1, j) == table.table.at(0, j));
    CHECK(e.at(2, j) == e.at(0, j));
  }
  CHECK_THROWS_AS(embed(tape, QuestionTokens{{6}, 0}, table), std::out_of_range);
  CHECK_THROWS(embed(tape, QuestionTokens{{}, 0}, table));

  auto again = make_embedding_table(6, 4, 3);
  CHECK(again.table == table.table);
}

TEST_CASE("GRU with zero weights halves the state") {
  auto p = zero_gru(3, 2);
  ad::Tape tape;
  auto h = gru_cell(tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::vector({0.8, -0.8})), p).value();
  CHECK(h[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(h[1] == doctest::Approx(-0.4).epsilon(1e-15));
  auto z = gru_cell(tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor({2})), p).value();
  CHECK(z == Tensor({2}));
}

TEST_CASE("GRU step matches the oracle over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, {0x20});
    auto p = gru_params_init(5, 4, rng());
    randomize_biases(p, rng);
    auto x = gaussian({3, 5}, rng), h = gaussian({3, 4}, rng);
    ad::Tape tape;
    auto got = gru_cell(tape.constant(x), tape.constant(h), p).value();
    for (std::size_t r = 0; r < 3; ++r) {
      Vec xr(x.data().begin() + r * 5, x.data().begin() + r * 5 + 5);
      Vec hr(h.data().begin() + r * 4, h.data().begin() + r * 4 + 4);
      CHECK(testing::max_abs_diff(got.data().subspan(r * 4, 4), gru_oracle(xr, hr, p)) < 1e-12);
    }
  }
}

TEST_CASE("GRU shape errors") {
  auto p = gru_params_init(3, 2, 0);
  ad::Tape tape;
  CHECK_THROWS_AS(gru_cell(tape.constant(Tensor({4})), tape.constant(Tensor({2})), p), ShapeError);
  CHECK_THROWS_AS(gru_cell(tape.constant(Tensor({3})), tape.constant(Tensor({3})), p), ShapeError);
  CHECK_THROWS_AS(gru_cell(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 2})), p), ShapeError);
  CHECK_THROWS_AS(gru_cell(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2})), p), ShapeError);
  CHECK_THROWS(gru_params_init(0, 2, 0));
}

TEST_CASE("bidirectional encoding unrolls like the oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, {0x21});
    auto table = make_embedding_table(9, 5, rng());
    auto f = gru_params_init(5, 3, rng()), b = gru_params_init(5, 3, rng());
    randomize_biases(f, rng);
    randomize_biases(b, rng);
    for (std::size_t len : {1u, 3u, 6u}) {
      std::vector<std::size_t> ids(len);
      for (auto& id : ids) id = rng() % 9;
      ad::Tape tape;
      auto got = encode_question_baseline(tape, QuestionTokens{ids, 0}, table, f, b).value();
      REQUIRE(got.shape() == Shape{6});
      CHECK(testing::max_abs_diff(got.data(), encode_oracle(ids, table, f, b)) < 1e-12);
    }
  }
}

TEST_CASE("a single token gives one step in each direction") {
  auto table = make_embedding_table(4, 3, 1);
  auto f = gru_params_init(3, 2, 2), b = gru_params_init(3, 2, 3);
  ad::Tape tape;
  auto got = encode_question_baseline(tape, QuestionTokens{{1}, 0}, table, f, b).value();
  auto hf = gru_oracle(table_row(table, 1), Vec(2, 0.0), f);
  auto hb = gru_oracle(table_row(table, 1), Vec(2, 0.0), b);
  CHECK(testing::max_abs_diff(got.data().subspan(0, 2), hf) < 1e-15);
  CHECK(testing::max_abs_diff(got.data().subspan(2, 2), hb) < 1e-15);
}

TEST_CASE("reversing the question and swapping directions swaps the halves") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, {0x23});
    auto table = make_embedding_table(7, 4, rng());
    auto f = gru_params_init(4, 3, rng()), b = gru_params_init(4, 3, rng());
    std::vector<std::size_t> ids(2 + rng() % 5);
    for (auto& id : ids) id = rng() % 7;
    std::vector<std::size_t> rev(ids.rbegin(), ids.rend());
    ad::Tape tape;
    auto a = encode_question_baseline(tape, QuestionTokens{ids, 0}, table, f, b).value();
    auto c = encode_question_baseline(tape, QuestionTokens{rev, 0}, table, b, f).value();
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a[j] == c[j + 3]);
      CHECK(a[j + 3] == c[j]);
    }
  }
}

TEST_CASE("padding in a batch leaves every row equal to its solo encoding") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, {0x24});
    auto table = make_embedding_table(8, 4, rng());
    auto f = gru_params_init(4, 3, rng()), b = gru_params_init(4, 3, rng());
    randomize_biases(f, rng);
    randomize_biases(b, rng);
    QuestionBatch batch;
    for (int i = 0; i < 5; ++i) {
      std::vector<std::size_t> ids(1 + rng() % 6);
      for (auto& id : ids) id = rng() % 8;
      batch.tokens.push_back(ids);
    }
    ad::Tape tape;
    auto enc = encode_questions_baseline(tape, batch, table, bind(tape, f), bind(tape, b)).value();
    REQUIRE(enc.shape() == Shape{5, 6});
    for (std::size_t i = 0; i < 5; ++i) {
      ad::Tape solo;
      auto one = encode_question_baseline(solo, QuestionTokens{batch.tokens[i], 0}, table, f, b).value();
      CHECK(testing::max_abs_diff(enc.data().subspan(i * 6, 6), one.data()) == 0.0);
    }
  }
}

TEST_CASE("encoder errors") {
  auto table = make_embedding_table(4, 3, 0);
  auto f = gru_params_init(3, 2, 0), b = gru_params_init(3, 2, 1), wide = gru_params_init(3, 4, 1);
  ad::Tape tape;
  CHECK_THROWS(encode_question_baseline(tape, QuestionTokens{{}, 0}, table, f, b));
  CHECK_THROWS_AS(encode_question_baseline(tape, QuestionTokens{{4}, 0}, table, f, b), std::out_of_range);
  CHECK_THROWS(encode_questions_baseline(tape, QuestionBatch{}, table, bind(tape, f), bind(tape, b)));
  CHECK_THROWS(encode_questions_baseline(tape, QuestionBatch{{{1}, {}}}, table, bind(tape, f), bind(tape, b)));
  CHECK_THROWS_AS(encode_question_baseline(tape, QuestionTokens{{1}, 0}, table, f, wide), ShapeError);
}

TEST_CASE("encoder gradients, frozen and trainable embeddings") {
  auto rng = make_rng(9, {0x25});
  auto table = make_embedding_table(5, 3, 2);
  auto f = gru_params_init(3, 2, 3), b = gru_params_init(3, 2, 4);
  randomize_biases(f, rng);
  randomize_biases(b, rng);
  QuestionBatch batch{{{1, 2, 3}, {4}, {0, 4}}};
  auto w = gaussian({3, 4}, rng);
  auto fn = [&](ad::Tape& t) {
    return ad::sum_all(ad::mul(encode_questions_baseline(t, batch, table, bind(t, f), bind(t, b)), t.constant(w)));
  };
  ParamList list;
  f.collect(list, "f");
  b.collect(list, "b");
  std::vector<Tensor*> ts;
  for (auto& np : list) ts.push_back(np.tensor);
  CHECK(grad_check_params(fn, ts).max_rel_error < 1e-4);

  table.set_frozen(false);
  Tensor* tab[] = {&table.table};
  auto report = grad_check_params(fn, tab);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.coordinates == 15);
}
