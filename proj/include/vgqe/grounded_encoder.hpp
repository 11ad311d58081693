#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vgqe/autodiff.hpp"
#include "vgqe/encoder.hpp"
#include "vgqe/fusion.hpp"
#include "vgqe/params.hpp"

namespace vgqe {

/// Object-level image features: visual rows V [k x d_v] and label embeddings L [k x d_w].
struct SceneFeatures {
  Tensor visual;
  Tensor labels;

  std::size_t objects() const { return visual.dim(0); }
  /// Throws unless V and L are matrices with the same positive row count and finite entries.
  void validate() const;
};

/// n scenes with the same object count stacked row-wise: visual [n*k x d_v], labels [n*k x d_w].
struct SceneBatch {
  Tensor visual;
  Tensor labels;
  std::size_t scenes = 0;
  std::size_t objects = 0;
};

SceneBatch stack_scenes(std::span<const SceneFeatures* const> scenes);
SceneBatch stack_scenes(const SceneFeatures& scene);

struct VgwConfig {
  std::size_t visual_dim = 32;  // d_v
  std::size_t word_dim = 16;    // d_w
  std::size_t fine_dim = 16;    // d, width of the word refinement network
  std::size_t grounded_dim = 32;  // output of the fusion, the RNN input size
  BlockFusionConfig fusion;     // x/y/out dims are filled in from the fields above
};

/// Learned pieces of the grounded-word stage. `attention_proj` is applied on the
/// right of row vectors, so it holds the transpose of the scoring matrix.
struct VgwParams {
  VgwConfig config;
  Tensor attention_vec;   // w_a, [d_w x 1]
  Tensor attention_proj;  // [d_w x d_w]
  Tensor refine_w1, refine_b1;  // d_w -> d
  Tensor refine_w2, refine_b2;  // d -> d
  BlockFusionParams fusion;     // (d_v, d) -> grounded_dim

  void collect(ParamList& out, const std::string& prefix);
};

VgwParams vgw_params_init(const VgwConfig& config, std::uint64_t seed);

struct VgwVars {
  ad::Var attention_vec, attention_proj, refine_w1, refine_b1, refine_w2, refine_b2;
  BlockFusionVars fusion;
};

VgwVars bind(ad::Tape& tape, VgwParams& params);

struct AttentionOutput {
  ad::Var alpha;    // [n x k], rows sum to 1
  ad::Var visual;   // f_t, [n x d_v]
};

/// Word-conditioned attention over objects. Relevance comes from the labels only,
/// the attended value from the visual rows only.
/// labels [n*k x d_w], visual [n*k x d_v], word [n x d_w].
AttentionOutput vgw_attention(const ad::Var& labels, const ad::Var& visual, const ad::Var& word, std::size_t objects,
                              const VgwVars& p);

/// g_t = block_fuse(f_t, refine(q_t)). visual [n x d_v], word [n x d_w] -> [n x grounded_dim].
ad::Var vgw_fuse(const ad::Var& visual, const ad::Var& word, const VgwVars& p);

struct VgqeConfig {
  VgwConfig vgw;
  std::size_t hidden = 32;  // per-direction H
  bool share_vgw = true;    // one grounding stage for both reading directions
};

struct VgqeParams {
  VgqeConfig config;
  VgwParams vgw;
  VgwParams vgw_backward;  // used only when !config.share_vgw
  GruParams rnn_forward;
  GruParams rnn_backward;

  VgwParams& vgw_for(Direction dir) { return dir == Direction::backward && !config.share_vgw ? vgw_backward : vgw; }
  void collect(ParamList& out, const std::string& prefix);
};

VgqeParams vgqe_params_init(const VgqeConfig& config, std::uint64_t seed);

struct VgqeVars {
  VgwVars vgw_forward;
  VgwVars vgw_backward;
  GruVars rnn_forward;
  GruVars rnn_backward;
};

VgqeVars bind(ad::Tape& tape, VgqeParams& params);

/// Scene tensors placed on a tape once per forward pass.
struct SceneVars {
  ad::Var visual;
  ad::Var labels;
  std::size_t scenes = 0;
  std::size_t objects = 0;
};

SceneVars bind(ad::Tape& tape, const SceneBatch& scenes);

struct CellOutput {
  ad::Var state;  // h_t, [n x H]
  ad::Var alpha;  // [n x k]
};

/// h_t = GRU(vgw_fuse(attention(L, q_t).f_t, q_t), h_{t-1}) for one direction.
CellOutput vgqe_cell_step(const SceneVars& scene, const ad::Var& word, const ad::Var& h_prev, const VgqeVars& p,
                          Direction dir);

struct GroundedEncoding {
  ad::Var encoding;                  // [n x 2H]
  std::vector<ad::Var> alpha_forward;   // indexed by token position, each [n x k]
  std::vector<ad::Var> alpha_backward;
};

GroundedEncoding encode_questions_vgqe(ad::Tape& tape, const SceneVars& scene, const QuestionBatch& batch,
                                       EmbeddingTable& table, const VgqeVars& p);

/// Per-step attention weights of one example: steps[t][i] is the weight of object i
/// at token t. Only the example's real (unpadded) positions are included.
struct AttentionTrace {
  std::vector<std::vector<double>> forward;
  std::vector<std::vector<double>> backward;
};

AttentionTrace extract_trace(const GroundedEncoding& enc, std::size_t example, std::size_t length);

/// Single-question form: encoding [2H] plus the trace.
struct SingleGroundedEncoding {
  ad::Var encoding;
  AttentionTrace trace;
};

SingleGroundedEncoding encode_question_vgqe(ad::Tape& tape, const SceneFeatures& scene, const QuestionTokens& tokens,
                                            EmbeddingTable& table, VgqeParams& params);

}  // namespace vgqe
