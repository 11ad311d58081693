#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "vgqe/dataset.hpp"
#include "vgqe/model.hpp"

namespace vgqe {

/// -log softmax(logits)[target] with log-sum-exp stability.
double cross_entropy(std::span<const double> logits, std::size_t target);
/// softmax(logits) - onehot(target).
std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t target);

struct AdamWConfig {
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-5;
};

struct AdamWState {
  AdamWConfig config;
  std::size_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One decoupled-weight-decay Adam step. Moments are created on the first call
/// and must keep matching the parameter shapes afterwards.
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state);
/// Same step using each parameter's own gradient buffer.
void adamw_step(std::span<Tensor* const> params, AdamWState& state);

/// Scales all gradients in place when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm = 0.25);
double clip_grad_norm(std::span<Tensor* const> params, double max_norm = 0.25);

struct ScheduleConfig {
  double base_lr = 3.5e-4;
  double warm_factor = 0.25;
  std::size_t warm_end_epoch = 11;
  double decay_factor = 0.25;
  std::size_t decay_step = 2;
};

double lr_at_epoch(std::size_t epoch, const ScheduleConfig& schedule);

struct TrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 128;
  ScheduleConfig schedule;
  double weight_decay = 2e-5;
  double clip_norm = 0.25;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;      // mean over examples
  double accuracy = 0.0;  // train accuracy of the predictions made while training
  double seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochLog&)>;

std::vector<EpochLog> train(ModelParams& params, const DatasetSplit& split, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace vgqe
