#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vgqe/autodiff.hpp"
#include "vgqe/params.hpp"

namespace vgqe {

struct EmbeddingTable {
  Tensor table;  // [vocab x d_w]
  bool frozen = true;

  std::size_t vocab() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }
  void set_frozen(bool f) {
    frozen = f;
    table.set_requires_grad(!f);
  }
};

/// Unit-variance Gaussian rows, frozen. Stands in for pre-trained word vectors.
EmbeddingTable make_embedding_table(std::size_t vocab, std::size_t dim, std::uint64_t seed);

struct QuestionTokens {
  std::vector<std::size_t> ids;
  std::size_t type_id = 0;
  std::size_t length() const { return ids.size(); }
};

/// Token rows of `table`, in order: [T x d_w].
ad::Var embed(ad::Tape& tape, const QuestionTokens& tokens, EmbeddingTable& table);

/// Standard GRU with h = (1 - z) * h_prev + z * candidate.
struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  Tensor w_z, u_z, b_z;  // update gate
  Tensor w_r, u_r, b_r;  // reset gate
  Tensor w_h, u_h, b_h;  // candidate

  void collect(ParamList& out, const std::string& prefix);
};

GruParams gru_params_init(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

struct GruVars {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  ad::Var w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
};

GruVars bind(ad::Tape& tape, GruParams& params);

/// One recurrence step. x is [n x input_dim] (or a vector), h_prev [n x H] (or a vector).
ad::Var gru_cell(const ad::Var& x, const ad::Var& h_prev, const GruVars& p);
ad::Var gru_cell(const ad::Var& x, const ad::Var& h_prev, GruParams& params);

enum class Direction { forward, backward };

/// A padded batch of questions. Rows shorter than max_len are padded with id 0
/// and masked so that padding never touches the recurrent state.
struct QuestionBatch {
  std::vector<std::vector<std::size_t>> tokens;

  std::size_t size() const { return tokens.size(); }
  std::size_t max_len() const;
  std::vector<std::size_t> lengths() const;
};

/// Embeddings of step t across the batch: [n x d_w]. Padded rows use id 0.
ad::Var embed_step(ad::Tape& tape, const QuestionBatch& batch, std::size_t t, EmbeddingTable& table,
                   const ad::Var& table_var);

/// Produces the next hidden state [n x H] from the previous one at position t.
using StepFn = std::function<ad::Var(std::size_t t, const ad::Var& h_prev, Direction dir)>;

/// Runs `step` left-to-right and right-to-left from zero states and returns the
/// concatenated final states [n x 2H].
ad::Var run_bidirectional(ad::Tape& tape, std::span<const std::size_t> lengths, std::size_t hidden,
                          const StepFn& step);

/// Language-only question encoding for a batch: [n x 2H].
ad::Var encode_questions_baseline(ad::Tape& tape, const QuestionBatch& batch, EmbeddingTable& table,
                                  const GruVars& forward, const GruVars& backward);

/// Single-question form: [2H].
ad::Var encode_question_baseline(ad::Tape& tape, const QuestionTokens& tokens, EmbeddingTable& table,
                                 GruParams& forward, GruParams& backward);

}  // namespace vgqe
