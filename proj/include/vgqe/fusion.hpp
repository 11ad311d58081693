#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vgqe/autodiff.hpp"
#include "vgqe/params.hpp"

namespace vgqe {

struct ChunkRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const ChunkRange&, const ChunkRange&) = default;
};

/// Near-equal partition of [0, total) into `parts` ordered ranges; the first
/// total % parts ranges are one element longer.
std::vector<ChunkRange> partition(std::size_t total, std::size_t parts);

struct BlockFusionConfig {
  std::size_t x_dim = 0;
  std::size_t y_dim = 0;
  std::size_t proj_dim = 32;      // P
  std::size_t proj_out_dim = 32;  // P_out
  std::size_t out_dim = 0;        // o
  std::size_t chunks = 4;         // C
  std::size_t rank = 3;           // R
  bool use_bias = false;
  bool use_output_nonlinearity = false;

  friend bool operator==(const BlockFusionConfig&, const BlockFusionConfig&) = default;
};

/// Block-term bilinear fusion: both inputs are projected to P, split into C
/// chunks, each chunk pair is fused by a rank-R sum of factor products, and the
/// concatenated chunk outputs (size P_out) are projected to o.
struct BlockFusionParams {
  BlockFusionConfig config;
  Tensor proj_x;        // [x_dim x P]
  Tensor proj_y;        // [y_dim x P]
  Tensor proj_x_bias;   // [P], only with use_bias
  Tensor proj_y_bias;   // [P], only with use_bias
  std::vector<ChunkRange> in_chunks;   // partition of [0, P)
  std::vector<ChunkRange> out_chunks;  // partition of [0, P_out)
  std::vector<std::vector<Tensor>> factor_x;  // [c][r]: in_chunks[c] x out_chunks[c]
  std::vector<std::vector<Tensor>> factor_y;
  Tensor proj_out;       // [P_out x o]
  Tensor proj_out_bias;  // [o], only with use_bias

  void collect(ParamList& out, const std::string& prefix);
};

BlockFusionParams block_params_init(const BlockFusionConfig& config, std::uint64_t seed);

/// Parameters of one BlockFusionParams bound onto a tape for a forward pass.
struct BlockFusionVars {
  const BlockFusionParams* params = nullptr;
  ad::Var proj_x, proj_y, proj_x_bias, proj_y_bias, proj_out, proj_out_bias;
  std::vector<std::vector<ad::Var>> factor_x, factor_y;
};

BlockFusionVars bind(ad::Tape& tape, BlockFusionParams& params);

/// Row-wise fusion of x [n x x_dim] with y [n x y_dim] -> [n x o]. Rank-1 inputs
/// are treated as single rows and produce a rank-1 output.
ad::Var block_fuse(const ad::Var& x, const ad::Var& y, const BlockFusionVars& p);
ad::Var block_fuse(const ad::Var& x, const ad::Var& y, BlockFusionParams& params);

}  // namespace vgqe
