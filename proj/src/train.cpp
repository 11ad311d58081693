#include "vgqe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vgqe {

double cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return mx + std::log(z) - logits[target];
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) throw std::out_of_range("cross_entropy_grad: target out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> g(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) z += g[i] = std::exp(logits[i] - mx);
  for (auto& x : g) x /= z;
  g[target] -= 1.0;
  return g;
}

namespace {

void adamw_update(std::span<Tensor* const> params, std::span<const std::span<const double>> grads, AdamWState& state) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter and gradient counts differ");
  if (state.m.empty() && state.t == 0) {
    for (auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size() || state.m[i].shape() != params[i]->shape()) {
      throw ShapeError("adamw_step: shape mismatch at parameter " + std::to_string(i) + " " +
                       shape_string(params[i]->shape()));
    }
  }
  const auto& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i];
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= c.lr * c.weight_decay * p[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      p[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
}

}  // namespace

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter and gradient counts differ");
  std::vector<std::span<const double>> gs;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw ShapeError("adamw_step: parameter " + std::to_string(i) + " has shape " +
                       shape_string(params[i]->shape()) + " but its gradient " + shape_string(grads[i].shape()));
    }
    gs.push_back(grads[i].data());
  }
  adamw_update(params, gs, state);
}

void adamw_step(std::span<Tensor* const> params, AdamWState& state) {
  std::vector<std::span<const double>> gs;
  for (auto* p : params) gs.push_back(p->grad());
  adamw_update(params, gs, state);
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (auto g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto g : grads)
      for (auto& x : g) x *= s;
  }
  return norm;
}

double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
  std::vector<std::span<double>> gs;
  for (auto* p : params) gs.push_back(p->grad());
  return clip_grad_norm(gs, max_norm);
}

double lr_at_epoch(std::size_t epoch, const ScheduleConfig& s) {
  if (epoch < 1) throw std::invalid_argument("lr_at_epoch: epochs start at 1");
  if (s.decay_step == 0 || s.warm_end_epoch == 0) throw std::invalid_argument("lr_at_epoch: steps must be positive");
  const auto warm = [&](std::size_t e) { return s.base_lr * (1.0 + s.warm_factor * static_cast<double>(e - 1)); };
  if (epoch <= s.warm_end_epoch) return warm(epoch);
  const std::size_t after = epoch - s.warm_end_epoch;
  const std::size_t drops = (after + s.decay_step - 1) / s.decay_step;
  return warm(s.warm_end_epoch) * std::pow(s.decay_factor, static_cast<double>(drops));
}

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"base_lr", c.base_lr},
       {"warm_factor", c.warm_factor},
       {"warm_end_epoch", c.warm_end_epoch},
       {"decay_factor", c.decay_factor},
       {"decay_step", c.decay_step}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  c.base_lr = j.value("base_lr", c.base_lr);
  c.warm_factor = j.value("warm_factor", c.warm_factor);
  c.warm_end_epoch = j.value("warm_end_epoch", c.warm_end_epoch);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.decay_step = j.value("decay_step", c.decay_step);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"schedule", c.schedule},
       {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleConfig>();
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
}

std::vector<EpochLog> train(ModelParams& params, const DatasetSplit& split, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  if (split.examples.empty()) throw std::invalid_argument("train: empty split");
  if (config.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  params.config.validate();

  auto named = params.parameters();
  std::vector<Tensor*> trainable;
  for (const auto& np : named)
    if (np.tensor->requires_grad()) trainable.push_back(np.tensor);
  AdamWState opt;
  opt.config.weight_decay = config.weight_decay;

  std::vector<std::size_t> order(split.examples.size());
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    opt.config.lr = lr_at_epoch(epoch, config.schedule);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(config.seed, {0x5af, epoch});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0, at = 0; at < order.size(); ++b, at += config.batch_size) {
      const std::size_t end = std::min(order.size(), at + config.batch_size);
      const auto batch = make_batch(split, std::span(order).subspan(at, end - at));
      params.zero_grad();
      ad::Tape tape;
      ForwardOptions opts{true, make_rng(config.seed, {0xd0d, epoch, b})()};
      auto res = forward(tape, params, batch.scenes, batch.questions, opts);
      auto loss = ad::cross_entropy(res.logits, batch.answers);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite loss " << lv << " at epoch " << epoch << ", batch " << b;
        throw TrainingError(msg.str());
      }
      tape.backward(loss);

      const auto& logits = res.logits.value();
      const std::size_t classes = logits.dim(1);
      for (std::size_t r = 0; r < batch.answers.size(); ++r) {
        if (predict(logits.data().subspan(r * classes, classes)) == batch.answers[r]) ++correct;
      }
      loss_sum += lv * static_cast<double>(end - at);

      clip_grad_norm(trainable, config.clip_norm);
      adamw_step(trainable, opt);
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = opt.config.lr;
    row.loss = loss_sum / static_cast<double>(order.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return log;
}

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out.precision(17);
  out << "epoch,lr,loss,accuracy,seconds\n";
  for (const auto& r : log) out << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.accuracy << ',' << r.seconds << '\n';
}

}  // namespace vgqe
