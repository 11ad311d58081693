#include "vgqe/grounded_encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace vgqe {

void SceneFeatures::validate() const {
  if (visual.rank() != 2 || labels.rank() != 2) {
    throw ShapeError("scene features must be matrices, got " + shape_string(visual.shape()) + " and " +
                     shape_string(labels.shape()));
  }
  if (visual.dim(0) != labels.dim(0)) {
    throw ShapeError("scene has " + std::to_string(visual.dim(0)) + " visual rows but " +
                     std::to_string(labels.dim(0)) + " label rows");
  }
  if (!visual.all_finite() || !labels.all_finite()) throw std::invalid_argument("scene features contain NaN/Inf");
}

SceneBatch stack_scenes(std::span<const SceneFeatures* const> scenes) {
  if (scenes.empty()) throw std::invalid_argument("stack_scenes: no scenes");
  const auto& first = *scenes[0];
  first.validate();
  const std::size_t k = first.objects(), dv = first.visual.dim(1), dw = first.labels.dim(1);
  SceneBatch out;
  out.scenes = scenes.size();
  out.objects = k;
  out.visual = Tensor({scenes.size() * k, dv});
  out.labels = Tensor({scenes.size() * k, dw});
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sc = *scenes[s];
    if (s) sc.validate();
    if (sc.visual.shape() != first.visual.shape() || sc.labels.shape() != first.labels.shape()) {
      throw ShapeError("stack_scenes: scene " + std::to_string(s) + " has shape " + shape_string(sc.visual.shape()) +
                       ", expected " + shape_string(first.visual.shape()));
    }
    std::copy(sc.visual.data().begin(), sc.visual.data().end(), out.visual.data().begin() + s * k * dv);
    std::copy(sc.labels.data().begin(), sc.labels.data().end(), out.labels.data().begin() + s * k * dw);
  }
  return out;
}

SceneBatch stack_scenes(const SceneFeatures& scene) {
  const SceneFeatures* one[] = {&scene};
  return stack_scenes(one);
}

namespace {

BlockFusionConfig fusion_for(const VgwConfig& c) {
  BlockFusionConfig f = c.fusion;
  f.x_dim = c.visual_dim;
  f.y_dim = c.fine_dim;
  f.out_dim = c.grounded_dim;
  return f;
}

}  // namespace

VgwParams vgw_params_init(const VgwConfig& config, std::uint64_t seed) {
  if (config.visual_dim == 0 || config.word_dim == 0 || config.fine_dim == 0 || config.grounded_dim == 0) {
    throw std::invalid_argument("vgw: dimensions must be positive");
  }
  auto rng = make_rng(seed, {0x76});
  VgwParams p;
  p.config = config;
  p.config.fusion = fusion_for(config);
  p.attention_vec = uniform_init(config.word_dim, 1, rng);
  p.attention_proj = uniform_init(config.word_dim, config.word_dim, rng);
  p.refine_w1 = uniform_init(config.word_dim, config.fine_dim, rng);
  p.refine_b1 = zero_bias(config.fine_dim);
  p.refine_w2 = uniform_init(config.fine_dim, config.fine_dim, rng);
  p.refine_b2 = zero_bias(config.fine_dim);
  p.fusion = block_params_init(p.config.fusion, rng());
  return p;
}

void VgwParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".attention_vec", &attention_vec});
  out.push_back({prefix + ".attention_proj", &attention_proj});
  out.push_back({prefix + ".refine_w1", &refine_w1});
  out.push_back({prefix + ".refine_b1", &refine_b1});
  out.push_back({prefix + ".refine_w2", &refine_w2});
  out.push_back({prefix + ".refine_b2", &refine_b2});
  fusion.collect(out, prefix + ".fusion");
}

VgwVars bind(ad::Tape& tape, VgwParams& p) {
  return VgwVars{tape.parameter(p.attention_vec), tape.parameter(p.attention_proj), tape.parameter(p.refine_w1),
                 tape.parameter(p.refine_b1),     tape.parameter(p.refine_w2),      tape.parameter(p.refine_b2),
                 bind(tape, p.fusion)};
}

AttentionOutput vgw_attention(const ad::Var& labels, const ad::Var& visual, const ad::Var& word, std::size_t objects,
                              const VgwVars& p) {
  using namespace ad;
  const auto& ls = labels.shape();
  const auto& vs = visual.shape();
  const auto& ws = word.shape();
  if (objects == 0) throw std::invalid_argument("vgw_attention: scene has no objects");
  if (ls.size() != 2 || vs.size() != 2 || ws.size() != 2) throw ShapeError("vgw_attention: expects matrices");
  const std::size_t n = ws[0];
  if (ls[0] != n * objects || vs[0] != n * objects || ls[1] != ws[1]) {
    throw ShapeError("vgw_attention: labels " + shape_string(ls) + ", visual " + shape_string(vs) + " and word " +
                     shape_string(ws) + " are inconsistent with k=" + std::to_string(objects));
  }
  if (ls[1] != p.attention_proj.shape()[0]) {
    throw ShapeError("vgw_attention: word dim " + std::to_string(ls[1]) + " does not match parameters");
  }
  auto grounded = mul(labels, repeat_rows(word, objects));         // L * (1 q_t)
  auto scores = matmul(matmul(grounded, p.attention_proj), p.attention_vec);  // [n*k x 1]
  auto alpha = softmax(reshape(scores, {n, objects}));
  auto f = bmm(reshape(alpha, {n, 1, objects}), reshape(visual, {n, objects, vs[1]}));
  return {alpha, reshape(f, {n, vs[1]})};
}

ad::Var vgw_fuse(const ad::Var& visual, const ad::Var& word, const VgwVars& p) {
  using namespace ad;
  if (word.shape().size() != 2 || word.shape()[1] != p.refine_w1.shape()[0]) {
    throw ShapeError("vgw_fuse: word shape " + shape_string(word.shape()) + " does not match refinement input");
  }
  auto hidden = relu(add(matmul(word, p.refine_w1), p.refine_b1));
  auto refined = add(matmul(hidden, p.refine_w2), p.refine_b2);
  return block_fuse(visual, refined, p.fusion);
}

VgqeParams vgqe_params_init(const VgqeConfig& config, std::uint64_t seed) {
  auto rng = make_rng(seed, {0x5e});
  VgqeParams p;
  p.config = config;
  p.vgw = vgw_params_init(config.vgw, rng());
  if (!config.share_vgw) p.vgw_backward = vgw_params_init(config.vgw, rng());
  p.config.vgw = p.vgw.config;
  p.rnn_forward = gru_params_init(config.vgw.grounded_dim, config.hidden, rng());
  p.rnn_backward = gru_params_init(config.vgw.grounded_dim, config.hidden, rng());
  return p;
}

void VgqeParams::collect(ParamList& out, const std::string& prefix) {
  vgw.collect(out, prefix + ".vgw");
  if (!config.share_vgw) vgw_backward.collect(out, prefix + ".vgw_backward");
  rnn_forward.collect(out, prefix + ".rnn_forward");
  rnn_backward.collect(out, prefix + ".rnn_backward");
}

VgqeVars bind(ad::Tape& tape, VgqeParams& p) {
  VgqeVars v;
  v.vgw_forward = bind(tape, p.vgw);
  v.vgw_backward = p.config.share_vgw ? v.vgw_forward : bind(tape, p.vgw_backward);
  v.rnn_forward = bind(tape, p.rnn_forward);
  v.rnn_backward = bind(tape, p.rnn_backward);
  return v;
}

SceneVars bind(ad::Tape& tape, const SceneBatch& scenes) {
  return SceneVars{tape.constant(scenes.visual), tape.constant(scenes.labels), scenes.scenes, scenes.objects};
}

CellOutput vgqe_cell_step(const SceneVars& scene, const ad::Var& word, const ad::Var& h_prev, const VgqeVars& p,
                          Direction dir) {
  const auto& vgw = dir == Direction::forward ? p.vgw_forward : p.vgw_backward;
  const auto& rnn = dir == Direction::forward ? p.rnn_forward : p.rnn_backward;
  auto att = vgw_attention(scene.labels, scene.visual, word, scene.objects, vgw);
  auto g = vgw_fuse(att.visual, word, vgw);
  return {gru_cell(g, h_prev, rnn), att.alpha};
}

GroundedEncoding encode_questions_vgqe(ad::Tape& tape, const SceneVars& scene, const QuestionBatch& batch,
                                       EmbeddingTable& table, const VgqeVars& p) {
  if (batch.size() != scene.scenes) {
    throw ShapeError("encode: " + std::to_string(batch.size()) + " questions for " + std::to_string(scene.scenes) +
                     " scenes");
  }
  const ad::Var table_var = table.frozen ? ad::Var{} : tape.parameter(table.table);
  std::vector<ad::Var> steps;
  for (std::size_t t = 0; t < batch.max_len(); ++t) steps.push_back(embed_step(tape, batch, t, table, table_var));

  GroundedEncoding out;
  out.alpha_forward.resize(steps.size());
  out.alpha_backward.resize(steps.size());
  const auto lengths = batch.lengths();
  out.encoding = run_bidirectional(tape, lengths, p.rnn_forward.hidden,
                                   [&](std::size_t t, const ad::Var& h, Direction dir) {
                                     auto cell = vgqe_cell_step(scene, steps[t], h, p, dir);
                                     (dir == Direction::forward ? out.alpha_forward : out.alpha_backward)[t] =
                                         cell.alpha;
                                     return cell.state;
                                   });
  return out;
}

AttentionTrace extract_trace(const GroundedEncoding& enc, std::size_t example, std::size_t length) {
  AttentionTrace trace;
  auto rows = [&](const std::vector<ad::Var>& alphas, std::vector<std::vector<double>>& dst) {
    for (std::size_t t = 0; t < length && t < alphas.size(); ++t) {
      const auto& a = alphas[t].value();
      const std::size_t k = a.dim(1);
      dst.emplace_back(a.data().begin() + example * k, a.data().begin() + (example + 1) * k);
    }
  };
  rows(enc.alpha_forward, trace.forward);
  rows(enc.alpha_backward, trace.backward);
  return trace;
}

SingleGroundedEncoding encode_question_vgqe(ad::Tape& tape, const SceneFeatures& scene, const QuestionTokens& tokens,
                                            EmbeddingTable& table, VgqeParams& params) {
  if (tokens.ids.empty()) throw std::invalid_argument("encode: empty question");
  auto sv = bind(tape, stack_scenes(scene));
  QuestionBatch batch{{tokens.ids}};
  auto enc = encode_questions_vgqe(tape, sv, batch, table, bind(tape, params));
  SingleGroundedEncoding out;
  out.encoding = ad::reshape(enc.encoding, {2 * params.config.hidden});
  out.trace = extract_trace(enc, 0, tokens.ids.size());
  return out;
}

}  // namespace vgqe
