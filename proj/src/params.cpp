#include "vgqe/params.hpp"

#include <cmath>
#include <vector>

namespace vgqe {

std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto s : stream) push(s);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = dist(rng);
  w.set_requires_grad(true);
  return w;
}

Tensor zero_bias(std::size_t n) {
  Tensor b({n});
  b.set_requires_grad(true);
  return b;
}

std::size_t count_trainable(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.tensor->requires_grad()) n += p.tensor->size();
  return n;
}

}  // namespace vgqe
