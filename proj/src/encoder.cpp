#include "vgqe/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace vgqe {

EmbeddingTable make_embedding_table(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
  auto rng = make_rng(seed, {0xe3b});
  std::normal_distribution<double> gauss(0.0, 1.0);
  EmbeddingTable t;
  t.table = Tensor({vocab, dim});
  for (auto& v : t.table.data()) v = gauss(rng);
  t.set_frozen(true);
  return t;
}

namespace {

void check_token(std::size_t id, const EmbeddingTable& table) {
  if (id >= table.vocab()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(table.vocab()));
  }
}

ad::Var lookup(ad::Tape& tape, std::span<const std::size_t> ids, EmbeddingTable& table, const ad::Var* table_var) {
  for (auto id : ids) check_token(id, table);
  if (!table.frozen) {
    const ad::Var tv = table_var ? *table_var : tape.parameter(table.table);
    return ad::gather_rows(tv, ids);
  }
  const std::size_t d = table.dim();
  Tensor rows({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.table.data().data() + ids[i] * d, d, rows.data().data() + i * d);
  return tape.constant(std::move(rows));
}

}  // namespace

ad::Var embed(ad::Tape& tape, const QuestionTokens& tokens, EmbeddingTable& table) {
  if (tokens.ids.empty()) throw std::invalid_argument("embed: empty question");
  return lookup(tape, tokens.ids, table, nullptr);
}

GruParams gru_params_init(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0) throw std::invalid_argument("gru: dimensions must be positive");
  auto rng = make_rng(seed, {0x96});
  GruParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  // Fan-in of the hidden size for every matrix, as in common GRU initializers.
  p.w_z = uniform_init(input_dim, hidden, rng);
  p.u_z = uniform_init(hidden, hidden, rng);
  p.w_r = uniform_init(input_dim, hidden, rng);
  p.u_r = uniform_init(hidden, hidden, rng);
  p.w_h = uniform_init(input_dim, hidden, rng);
  p.u_h = uniform_init(hidden, hidden, rng);
  p.b_z = zero_bias(hidden);
  p.b_r = zero_bias(hidden);
  p.b_h = zero_bias(hidden);
  return p;
}

void GruParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".w_z", &w_z});
  out.push_back({prefix + ".u_z", &u_z});
  out.push_back({prefix + ".b_z", &b_z});
  out.push_back({prefix + ".w_r", &w_r});
  out.push_back({prefix + ".u_r", &u_r});
  out.push_back({prefix + ".b_r", &b_r});
  out.push_back({prefix + ".w_h", &w_h});
  out.push_back({prefix + ".u_h", &u_h});
  out.push_back({prefix + ".b_h", &b_h});
}

GruVars bind(ad::Tape& tape, GruParams& p) {
  return GruVars{p.input_dim,
                 p.hidden,
                 tape.parameter(p.w_z),
                 tape.parameter(p.u_z),
                 tape.parameter(p.b_z),
                 tape.parameter(p.w_r),
                 tape.parameter(p.u_r),
                 tape.parameter(p.b_r),
                 tape.parameter(p.w_h),
                 tape.parameter(p.u_h),
                 tape.parameter(p.b_h)};
}

ad::Var gru_cell(const ad::Var& x_in, const ad::Var& h_in, const GruVars& p) {
  const bool single = x_in.shape().size() == 1;
  if (x_in.shape().size() != h_in.shape().size()) {
    throw ShapeError("gru_cell: input " + shape_string(x_in.shape()) + " and state " + shape_string(h_in.shape()) +
                     " differ in rank");
  }
  ad::Var x = single ? ad::reshape(x_in, {1, x_in.shape()[0]}) : x_in;
  ad::Var h = single ? ad::reshape(h_in, {1, h_in.shape()[0]}) : h_in;
  if (x.shape().size() != 2 || x.shape()[1] != p.input_dim || h.shape()[1] != p.hidden ||
      x.shape()[0] != h.shape()[0]) {
    throw ShapeError("gru_cell: expected [n x " + std::to_string(p.input_dim) + "] and [n x " +
                     std::to_string(p.hidden) + "], got " + shape_string(x.shape()) + " and " +
                     shape_string(h.shape()));
  }
  using namespace ad;
  auto z = sigmoid(add(add(matmul(x, p.w_z), matmul(h, p.u_z)), p.b_z));
  auto r = sigmoid(add(add(matmul(x, p.w_r), matmul(h, p.u_r)), p.b_r));
  auto cand = ad::tanh(add(add(matmul(x, p.w_h), matmul(mul(r, h), p.u_h)), p.b_h));
  auto out = add(h, mul(z, sub(cand, h)));
  return single ? reshape(out, {p.hidden}) : out;
}

ad::Var gru_cell(const ad::Var& x, const ad::Var& h_prev, GruParams& params) {
  return gru_cell(x, h_prev, bind(x.tape(), params));
}

std::size_t QuestionBatch::max_len() const {
  std::size_t m = 0;
  for (const auto& t : tokens) m = std::max(m, t.size());
  return m;
}

std::vector<std::size_t> QuestionBatch::lengths() const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.size());
  return out;
}

ad::Var embed_step(ad::Tape& tape, const QuestionBatch& batch, std::size_t t, EmbeddingTable& table,
                   const ad::Var& table_var) {
  std::vector<std::size_t> ids(batch.size(), 0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (t < batch.tokens[i].size()) ids[i] = batch.tokens[i][t];
  return lookup(tape, ids, table, table_var.valid() ? &table_var : nullptr);
}

namespace {

// keep = 1 rows take the new state, keep = 0 rows hold the old one; both exactly.
ad::Var masked_update(ad::Tape& tape, const ad::Var& h_new, const ad::Var& h_prev,
                      std::span<const std::size_t> lengths, std::size_t t, std::size_t hidden) {
  bool all = true;
  for (auto len : lengths) all = all && t < len;
  if (all) return h_new;
  Tensor keep({lengths.size(), hidden}), hold({lengths.size(), hidden});
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double k = t < lengths[i] ? 1.0 : 0.0;
    for (std::size_t j = 0; j < hidden; ++j) {
      keep.at(i, j) = k;
      hold.at(i, j) = 1.0 - k;
    }
  }
  return ad::add(ad::mul(h_new, tape.constant(std::move(keep))), ad::mul(h_prev, tape.constant(std::move(hold))));
}

}  // namespace

ad::Var run_bidirectional(ad::Tape& tape, std::span<const std::size_t> lengths, std::size_t hidden,
                          const StepFn& step) {
  if (lengths.empty()) throw std::invalid_argument("encode: empty batch");
  std::size_t max_len = 0;
  for (auto len : lengths) {
    if (len == 0) throw std::invalid_argument("encode: empty question");
    max_len = std::max(max_len, len);
  }
  const std::size_t n = lengths.size();
  auto fwd = tape.constant(Tensor({n, hidden}));
  for (std::size_t t = 0; t < max_len; ++t)
    fwd = masked_update(tape, step(t, fwd, Direction::forward), fwd, lengths, t, hidden);
  auto bwd = tape.constant(Tensor({n, hidden}));
  for (std::size_t t = max_len; t-- > 0;)
    bwd = masked_update(tape, step(t, bwd, Direction::backward), bwd, lengths, t, hidden);
  const ad::Var both[] = {fwd, bwd};
  return ad::concat_cols(both);
}

ad::Var encode_questions_baseline(ad::Tape& tape, const QuestionBatch& batch, EmbeddingTable& table,
                                  const GruVars& forward, const GruVars& backward) {
  if (forward.hidden != backward.hidden) throw ShapeError("encode: direction hidden sizes differ");
  const ad::Var table_var = table.frozen ? ad::Var{} : tape.parameter(table.table);
  // Embeddings are shared by both directions; look each step up once.
  std::vector<ad::Var> steps;
  for (std::size_t t = 0; t < batch.max_len(); ++t) steps.push_back(embed_step(tape, batch, t, table, table_var));
  const auto lengths = batch.lengths();
  return run_bidirectional(tape, lengths, forward.hidden,
                           [&](std::size_t t, const ad::Var& h, Direction dir) {
                             return gru_cell(steps[t], h, dir == Direction::forward ? forward : backward);
                           });
}

ad::Var encode_question_baseline(ad::Tape& tape, const QuestionTokens& tokens, EmbeddingTable& table,
                                 GruParams& forward, GruParams& backward) {
  if (tokens.ids.empty()) throw std::invalid_argument("encode: empty question");
  QuestionBatch batch{{tokens.ids}};
  auto enc = encode_questions_baseline(tape, batch, table, bind(tape, forward), bind(tape, backward));
  return ad::reshape(enc, {2 * forward.hidden});
}

}  // namespace vgqe
