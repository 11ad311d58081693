#include "vgqe/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace vgqe {

std::vector<ChunkRange> partition(std::size_t total, std::size_t parts) {
  if (parts == 0) throw std::invalid_argument("partition: need at least one chunk");
  if (parts > total) {
    throw std::invalid_argument("partition: " + std::to_string(parts) + " chunks exceed dimension " +
                                std::to_string(total));
  }
  std::vector<ChunkRange> out;
  const std::size_t base = total / parts, extra = total % parts;
  std::size_t at = 0;
  for (std::size_t c = 0; c < parts; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

BlockFusionParams block_params_init(const BlockFusionConfig& config, std::uint64_t seed) {
  if (config.x_dim == 0 || config.y_dim == 0 || config.out_dim == 0) {
    throw std::invalid_argument("block fusion: input and output dimensions must be positive");
  }
  if (config.rank == 0) throw std::invalid_argument("block fusion: rank must be >= 1");
  if (config.chunks > config.proj_dim || config.chunks > config.proj_out_dim) {
    throw std::invalid_argument("block fusion: " + std::to_string(config.chunks) + " chunks exceed projection size " +
                                std::to_string(std::min(config.proj_dim, config.proj_out_dim)));
  }
  BlockFusionParams p;
  p.config = config;
  p.in_chunks = partition(config.proj_dim, config.chunks);
  p.out_chunks = partition(config.proj_out_dim, config.chunks);

  auto rng = make_rng(seed, {0xb10c});
  p.proj_x = uniform_init(config.x_dim, config.proj_dim, rng);
  p.proj_y = uniform_init(config.y_dim, config.proj_dim, rng);
  p.factor_x.resize(config.chunks);
  p.factor_y.resize(config.chunks);
  for (std::size_t c = 0; c < config.chunks; ++c) {
    for (std::size_t r = 0; r < config.rank; ++r) {
      p.factor_x[c].push_back(uniform_init(p.in_chunks[c].size(), p.out_chunks[c].size(), rng));
      p.factor_y[c].push_back(uniform_init(p.in_chunks[c].size(), p.out_chunks[c].size(), rng));
    }
  }
  p.proj_out = uniform_init(config.proj_out_dim, config.out_dim, rng);
  if (config.use_bias) {
    p.proj_x_bias = zero_bias(config.proj_dim);
    p.proj_y_bias = zero_bias(config.proj_dim);
    p.proj_out_bias = zero_bias(config.out_dim);
  }
  return p;
}

void BlockFusionParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".proj_x", &proj_x});
  out.push_back({prefix + ".proj_y", &proj_y});
  if (config.use_bias) {
    out.push_back({prefix + ".proj_x_bias", &proj_x_bias});
    out.push_back({prefix + ".proj_y_bias", &proj_y_bias});
  }
  for (std::size_t c = 0; c < factor_x.size(); ++c) {
    for (std::size_t r = 0; r < factor_x[c].size(); ++r) {
      const auto tag = "." + std::to_string(c) + "." + std::to_string(r);
      out.push_back({prefix + ".factor_x" + tag, &factor_x[c][r]});
      out.push_back({prefix + ".factor_y" + tag, &factor_y[c][r]});
    }
  }
  out.push_back({prefix + ".proj_out", &proj_out});
  if (config.use_bias) out.push_back({prefix + ".proj_out_bias", &proj_out_bias});
}

BlockFusionVars bind(ad::Tape& tape, BlockFusionParams& params) {
  BlockFusionVars v;
  v.params = &params;
  v.proj_x = tape.parameter(params.proj_x);
  v.proj_y = tape.parameter(params.proj_y);
  v.proj_out = tape.parameter(params.proj_out);
  if (params.config.use_bias) {
    v.proj_x_bias = tape.parameter(params.proj_x_bias);
    v.proj_y_bias = tape.parameter(params.proj_y_bias);
    v.proj_out_bias = tape.parameter(params.proj_out_bias);
  }
  v.factor_x.resize(params.factor_x.size());
  v.factor_y.resize(params.factor_y.size());
  for (std::size_t c = 0; c < params.factor_x.size(); ++c) {
    for (std::size_t r = 0; r < params.factor_x[c].size(); ++r) {
      v.factor_x[c].push_back(tape.parameter(params.factor_x[c][r]));
      v.factor_y[c].push_back(tape.parameter(params.factor_y[c][r]));
    }
  }
  return v;
}

ad::Var block_fuse(const ad::Var& x_in, const ad::Var& y_in, const BlockFusionVars& p) {
  const auto& cfg = p.params->config;
  const bool single = x_in.shape().size() == 1;
  if (x_in.shape().size() != y_in.shape().size() || x_in.shape().size() < 1 || x_in.shape().size() > 2) {
    throw ShapeError("block_fuse: inputs must both be vectors or both matrices, got " + shape_string(x_in.shape()) +
                     " and " + shape_string(y_in.shape()));
  }
  ad::Var x = single ? ad::reshape(x_in, {1, x_in.shape()[0]}) : x_in;
  ad::Var y = single ? ad::reshape(y_in, {1, y_in.shape()[0]}) : y_in;
  if (x.shape()[1] != cfg.x_dim || y.shape()[1] != cfg.y_dim || x.shape()[0] != y.shape()[0]) {
    throw ShapeError("block_fuse: expected [n x " + std::to_string(cfg.x_dim) + "] and [n x " +
                     std::to_string(cfg.y_dim) + "], got " + shape_string(x.shape()) + " and " +
                     shape_string(y.shape()));
  }

  auto px = ad::matmul(x, p.proj_x);
  auto py = ad::matmul(y, p.proj_y);
  if (cfg.use_bias) {
    px = ad::add(px, p.proj_x_bias);
    py = ad::add(py, p.proj_y_bias);
  }

  const auto& chunks = p.params->in_chunks;
  std::vector<ad::Var> parts;
  parts.reserve(chunks.size());
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    auto xc = ad::slice_cols(px, chunks[c].begin, chunks[c].end);
    auto yc = ad::slice_cols(py, chunks[c].begin, chunks[c].end);
    ad::Var acc;
    for (std::size_t r = 0; r < p.factor_x[c].size(); ++r) {
      auto term = ad::mul(ad::matmul(xc, p.factor_x[c][r]), ad::matmul(yc, p.factor_y[c][r]));
      acc = r == 0 ? term : ad::add(acc, term);
    }
    parts.push_back(acc);
  }
  auto z = parts.size() == 1 ? parts[0] : ad::concat_cols(parts);
  if (cfg.use_output_nonlinearity) z = ad::l2_normalize(z);
  auto out = ad::matmul(z, p.proj_out);
  if (cfg.use_bias) out = ad::add(out, p.proj_out_bias);
  return single ? ad::reshape(out, {cfg.out_dim}) : out;
}

ad::Var block_fuse(const ad::Var& x, const ad::Var& y, BlockFusionParams& params) {
  return block_fuse(x, y, bind(x.tape(), params));
}

}  // namespace vgqe
