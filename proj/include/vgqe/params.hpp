#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "vgqe/tensor.hpp"

namespace vgqe {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

/// Independent generator for one (seed, stream...) coordinate. Streams let every
/// consumer draw from its own sequence so results never depend on call order.
std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

/// Weight matrix [fan_in x fan_out] drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
/// Trainable zero vector (biases).
Tensor zero_bias(std::size_t n);

/// Exact learnable scalar count; frozen tensors are excluded.
std::size_t count_trainable(const ParamList& params);

}  // namespace vgqe
