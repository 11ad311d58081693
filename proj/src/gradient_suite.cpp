#include "vgqe/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <random>
#include <stdexcept>

#include "vgqe/encoder.hpp"
#include "vgqe/fusion.hpp"
#include "vgqe/grounded_encoder.hpp"
#include "vgqe/model.hpp"

namespace vgqe {

namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng, bool trainable = true) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : t.data()) v = g(rng);
  t.set_requires_grad(trainable);
  return t;
}

/// Scalarizes y with fixed random weights so every output coordinate matters.
ad::Var project(const ad::Var& y, std::uint64_t seed) {
  auto rng = make_rng(seed, {0x9e});
  auto w = gaussian(y.shape(), rng, false);
  return ad::sum_all(ad::mul(y, y.tape().constant(std::move(w))));
}

GradCheckReport merge(GradCheckReport a, const GradCheckReport& b) {
  a.coordinates += b.coordinates;
  if (b.max_rel_error > a.max_rel_error) {
    a.max_rel_error = b.max_rel_error;
    a.worst = b.worst;
  }
  return a;
}

GradCheckReport check_unary(const std::string& name, const ScalarFn& f, const Tensor& x, double eps) {
  GradCheckReport r;
  r.max_rel_error = grad_check(f, x, eps);
  r.coordinates = x.size();
  r.worst = name;
  return r;
}

GradCheckReport tensor_ops(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0x7e});
  const auto m = gaussian({3, 4}, rng, false);
  const auto cube = gaussian({2, 3, 4}, rng, false);
  const auto other = gaussian({4, 5}, rng, false);
  const auto batch_other = gaussian({2, 4, 2}, rng, false);
  const auto row = gaussian({4}, rng, false);
  const std::size_t targets[] = {1, 3, 0};
  const std::size_t rows[] = {2, 0, 2, 1};

  using F = std::function<ad::Var(ad::Tape&, const ad::Var&)>;
  const std::vector<std::pair<std::string, F>> ops = {
      {"add", [&](ad::Tape& t, const ad::Var& x) { return project(ad::add(x, t.constant(row)), seed); }},
      {"sub", [&](ad::Tape& t, const ad::Var& x) { return project(ad::sub(t.constant(m), x), seed); }},
      {"mul", [&](ad::Tape&, const ad::Var& x) { return project(ad::mul(x, x), seed); }},
      {"scale", [&](ad::Tape&, const ad::Var& x) { return project(ad::add(ad::scale(x, -1.5), 0.25), seed); }},
      {"sigmoid", [&](ad::Tape&, const ad::Var& x) { return project(ad::sigmoid(x), seed); }},
      {"tanh", [&](ad::Tape&, const ad::Var& x) { return project(ad::tanh(x), seed); }},
      {"relu", [&](ad::Tape&, const ad::Var& x) { return project(ad::relu(x), seed); }},
      {"matmul", [&](ad::Tape& t, const ad::Var& x) { return project(ad::matmul(x, t.constant(other)), seed); }},
      {"softmax", [&](ad::Tape&, const ad::Var& x) { return project(ad::softmax(x), seed); }},
      {"l2_normalize", [&](ad::Tape&, const ad::Var& x) { return project(ad::l2_normalize(x), seed); }},
      {"cross_entropy", [&](ad::Tape&, const ad::Var& x) { return ad::cross_entropy(x, targets); }},
      {"reduce_sum", [&](ad::Tape&, const ad::Var& x) { return project(ad::reduce(ad::Reduce::sum, x, 0), seed); }},
      {"reduce_mean", [&](ad::Tape&, const ad::Var& x) { return project(ad::reduce(ad::Reduce::mean, x, 1), seed); }},
      {"reduce_max", [&](ad::Tape&, const ad::Var& x) { return project(ad::reduce(ad::Reduce::max, x, 1), seed); }},
      {"slice_concat",
       [&](ad::Tape&, const ad::Var& x) {
         const ad::Var parts[] = {ad::slice_cols(x, 2, 4), ad::slice_cols(x, 0, 3)};
         return project(ad::concat_cols(parts), seed);
       }},
      {"repeat_rows", [&](ad::Tape&, const ad::Var& x) { return project(ad::repeat_rows(x, 3), seed); }},
      {"gather_rows", [&](ad::Tape&, const ad::Var& x) { return project(ad::gather_rows(x, rows), seed); }},
      {"reshape", [&](ad::Tape&, const ad::Var& x) { return project(ad::tanh(ad::reshape(x, {2, 6})), seed); }},
  };
  GradCheckReport total;
  for (const auto& [name, f] : ops) total = merge(total, check_unary(name, f, m, eps));
  total = merge(total, check_unary(
                           "bmm",
                           [&](ad::Tape& t, const ad::Var& x) { return project(ad::bmm(x, t.constant(batch_other)), seed); },
                           cube, eps));
  total = merge(total, check_unary(
                           "reduce_max_3d",
                           [&](ad::Tape&, const ad::Var& x) { return project(ad::reduce(ad::Reduce::max, x, 1), seed); },
                           cube, eps));
  return total;
}

BlockFusionConfig small_fusion(std::size_t x, std::size_t y, std::size_t out, bool bias, bool nonlinear) {
  return BlockFusionConfig{x, y, 10, 9, out, 3, 2, bias, nonlinear};
}

GradCheckReport block_fuse_check(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0xb1});
  GradCheckReport total;
  for (bool flags : {false, true}) {
    auto p = block_params_init(small_fusion(5, 4, 6, flags, flags), rng());
    auto x = gaussian({3, 5}, rng);
    auto y = gaussian({3, 4}, rng);
    ParamList list;
    p.collect(list, "f");
    std::vector<Tensor*> ts{&x, &y};
    for (auto& np : list) ts.push_back(np.tensor);
    total = merge(total, grad_check_params(
                             [&](ad::Tape& t) { return project(block_fuse(t.parameter(x), t.parameter(y), p), seed); },
                             ts, eps));
  }
  return total;
}

GradCheckReport gru_check(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0x60});
  auto p = gru_params_init(5, 4, rng());
  for (auto* b : {&p.b_z, &p.b_r, &p.b_h}) *b = gaussian(b->shape(), rng);
  auto x = gaussian({3, 5}, rng);
  auto h = gaussian({3, 4}, rng);
  ParamList list;
  p.collect(list, "gru");
  std::vector<Tensor*> ts{&x, &h};
  for (auto& np : list) ts.push_back(np.tensor);
  return grad_check_params([&](ad::Tape& t) { return project(gru_cell(t.parameter(x), t.parameter(h), p), seed); },
                           ts, eps);
}

VgwConfig small_vgw() {
  VgwConfig c;
  c.visual_dim = 6;
  c.word_dim = 5;
  c.fine_dim = 4;
  c.grounded_dim = 7;
  c.fusion = BlockFusionConfig{0, 0, 8, 8, 0, 2, 2, true, false};
  return c;
}

GradCheckReport vgw_attention_check(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0xa7});
  auto p = vgw_params_init(small_vgw(), rng());
  const std::size_t n = 2, k = 3;
  auto labels = gaussian({n * k, 5}, rng);
  auto visual = gaussian({n * k, 6}, rng);
  auto word = gaussian({n, 5}, rng);
  std::vector<Tensor*> ts{&labels, &visual, &word, &p.attention_vec, &p.attention_proj};
  return grad_check_params(
      [&](ad::Tape& t) {
        auto v = bind(t, p);
        auto out = vgw_attention(t.parameter(labels), t.parameter(visual), t.parameter(word), k, v);
        return ad::add(project(out.visual, seed), project(out.alpha, seed + 1));
      },
      ts, eps);
}

GradCheckReport vgw_fuse_check(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0xf5});
  auto p = vgw_params_init(small_vgw(), rng());
  for (auto* b : {&p.refine_b1, &p.refine_b2}) *b = gaussian(b->shape(), rng);
  auto visual = gaussian({2, 6}, rng);
  auto word = gaussian({2, 5}, rng);
  std::vector<Tensor*> ts{&visual, &word, &p.refine_w1, &p.refine_b1, &p.refine_w2, &p.refine_b2};
  ParamList list;
  p.fusion.collect(list, "fusion");
  for (auto& np : list) ts.push_back(np.tensor);
  return grad_check_params(
      [&](ad::Tape& t) { return project(vgw_fuse(t.parameter(visual), t.parameter(word), bind(t, p)), seed); }, ts,
      eps);
}

GradCheckReport vgqe_cell_check(std::uint64_t seed, double eps) {
  auto rng = make_rng(seed, {0xce});
  GradCheckReport total;
  for (bool share : {true, false}) {
    VgqeConfig c;
    c.vgw = small_vgw();
    c.hidden = 4;
    c.share_vgw = share;
    auto p = vgqe_params_init(c, rng());
    const std::size_t n = 2, k = 3;
    auto labels = gaussian({n * k, 5}, rng);
    auto visual = gaussian({n * k, 6}, rng);
    auto word = gaussian({n, 5}, rng);
    auto h = gaussian({n, 4}, rng);
    ParamList list;
    p.collect(list, "q");
    std::vector<Tensor*> ts{&labels, &visual, &word, &h};
    for (auto& np : list) ts.push_back(np.tensor);
    const Direction dir = share ? Direction::forward : Direction::backward;
    total = merge(total, grad_check_params(
                             [&](ad::Tape& t) {
                               SceneVars sv{t.parameter(visual), t.parameter(labels), n, k};
                               auto out = vgqe_cell_step(sv, t.parameter(word), t.parameter(h), bind(t, p), dir);
                               return ad::add(project(out.state, seed), project(out.alpha, seed + 1));
                             },
                             ts, eps));
  }
  return total;
}

GradCheckReport model_check(Variant variant, std::uint64_t seed, double eps) {
  // A = 8 answers, k = 3 objects, T = 4 tokens, default hidden sizes.
  auto rng = make_rng(seed, {0x40, static_cast<std::uint64_t>(variant)});
  ModelConfig c;
  c.variant = variant;
  c.answers = 8;
  c.seed = rng();
  auto params = model_init(c, make_embedding_table(10, c.word_dim, rng()));
  const std::size_t n = 2, k = 3;
  SceneBatch scenes;
  scenes.scenes = n;
  scenes.objects = k;
  scenes.visual = gaussian({n * k, c.visual_dim}, rng, false);
  scenes.labels = gaussian({n * k, c.word_dim}, rng, false);
  QuestionBatch questions;
  questions.tokens = {{1, 4, 2, 7}, {3, 9, 5}};
  const std::size_t targets[] = {2, 6};
  // nudge the zero-initialised biases off zero so they are checked at a generic point
  for (auto& np : params.parameters()) {
    if (np.tensor->requires_grad() && np.tensor->rank() == 1) {
      for (auto& v : np.tensor->data()) v = 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
  }
  std::vector<Tensor*> ts;
  for (auto& np : params.parameters())
    if (np.tensor->requires_grad()) ts.push_back(np.tensor);
  std::size_t total = 0;
  for (auto* t : ts) total += t->size();
  const std::size_t stride = std::max<std::size_t>(1, total / 4000);
  return grad_check_params(
      [&](ad::Tape& t) {
        auto res = forward(t, params, scenes, questions);
        return ad::cross_entropy(res.logits, targets);
      },
      ts, eps, stride);
}

}  // namespace

std::vector<std::string> gradient_suite_modules() {
  return {"tensor_ops", "block_fuse", "gru_cell", "vgw_attention", "vgw_fuse", "vgqe_cell_step",
          "model_baseline", "model_vgqe"};
}

std::vector<SuiteResult> run_gradient_suite(const std::string& module, std::uint64_t seed, double eps) {
  const auto names = gradient_suite_modules();
  if (!module.empty() && std::find(names.begin(), names.end(), module) == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown gradient-check module '" + module + "' (known: " + known + ")");
  }
  const std::vector<std::function<GradCheckReport()>> checks = {
      [&] { return tensor_ops(seed, eps); },
      [&] { return block_fuse_check(seed, eps); },
      [&] { return gru_check(seed, eps); },
      [&] { return vgw_attention_check(seed, eps); },
      [&] { return vgw_fuse_check(seed, eps); },
      [&] { return vgqe_cell_check(seed, eps); },
      [&] { return model_check(Variant::baseline, seed, eps); },
      [&] { return model_check(Variant::vgqe, seed, eps); },
  };
  std::vector<SuiteResult> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!module.empty() && names[i] != module) continue;
    const auto start = std::chrono::steady_clock::now();
    SuiteResult r;
    r.module = names[i];
    r.report = checks[i]();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace vgqe
