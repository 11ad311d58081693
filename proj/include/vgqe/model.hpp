#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgqe/autodiff.hpp"
#include "vgqe/encoder.hpp"
#include "vgqe/fusion.hpp"
#include "vgqe/grounded_encoder.hpp"
#include "vgqe/params.hpp"

namespace vgqe {

enum class Variant { baseline, vgqe };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::baseline;
  std::size_t visual_dim = 32;    // d_v
  std::size_t word_dim = 16;      // d_w
  std::size_t vocab = 0;
  std::size_t hidden = 32;        // per-direction H; question encoding is 2H
  std::size_t fine_dim = 16;      // d
  std::size_t grounded_dim = 32;  // grounded word size fed to the RNN (2d)
  std::size_t pooled_dim = 32;    // o of the object fusion
  std::size_t answers = 0;        // A
  BlockFusionConfig vgw_fusion{0, 0, 32, 32, 0, 4, 3, true, false};
  BlockFusionConfig object_fusion{0, 0, 32, 32, 0, 4, 3, true, false};
  bool share_vgw = true;
  bool activate_fused_objects = false;  // relu on fused object features before pooling
  double dropout = 0.2;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless A >= 2, dropout in [0, 1) and dims are positive.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const BlockFusionConfig& c);
void from_json(const nlohmann::json& j, BlockFusionConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct AnswerVocab {
  std::vector<std::string> answers;

  std::size_t size() const { return answers.size(); }
  std::size_t id(const std::string& answer) const;
};

struct ModelParams {
  ModelConfig config;
  EmbeddingTable embeddings;
  GruParams rnn_forward;   // baseline question encoder
  GruParams rnn_backward;
  VgqeParams grounded;     // vgqe question encoder
  BlockFusionParams object_fusion;  // (d_v, 2H) -> o
  Tensor classifier_w1, classifier_b1;  // o -> 2o
  Tensor classifier_w2, classifier_b2;  // 2o -> A

  /// Every tensor with a stable name, frozen embeddings included.
  ParamList parameters();
  void zero_grad();
};

ModelParams model_init(const ModelConfig& config, EmbeddingTable embeddings);

/// Learnable scalar count; frozen tensors are not learnable.
std::size_t count_parameters(ModelParams& params);

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
  ad::Var logits;    // [n x A]
  ad::Var question;  // [n x 2H]
  GroundedEncoding grounding;  // populated for the vgqe variant
};

/// question -> per-object fusion -> max-pool over objects -> two-layer classifier.
ForwardResult forward(ad::Tape& tape, ModelParams& params, const SceneBatch& scenes, const QuestionBatch& questions,
                      const ForwardOptions& options = {});

/// Single example: logits [A].
ad::Var forward(ad::Tape& tape, ModelParams& params, const SceneFeatures& scene, const QuestionTokens& tokens,
                const ForwardOptions& options = {});

/// Argmax with ties going to the smaller id.
std::size_t predict(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Checkpoints: `<stem>.bin` holds every array back to back as little-endian
// float64; `<stem>.json` is the manifest {model config, arrays: [{name, shape,
// dtype, offset}]}. Paths passed here name the manifest.

void save_checkpoint(const std::filesystem::path& manifest, ModelParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelParams load_checkpoint(const std::filesystem::path& manifest);
/// Loads arrays into already-constructed parameters, validating every shape.
void load_checkpoint_into(const std::filesystem::path& manifest, ModelParams& params);

}  // namespace vgqe
