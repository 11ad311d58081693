#include "vgqe/model.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace vgqe {

using nlohmann::json;

std::string variant_name(Variant v) { return v == Variant::baseline ? "baseline" : "vgqe"; }

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "vgqe") return Variant::vgqe;
  throw std::invalid_argument("unknown model variant '" + name + "' (expected baseline or vgqe)");
}

void ModelConfig::validate() const {
  if (answers < 2) throw std::invalid_argument("model needs at least 2 answers, got " + std::to_string(answers));
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
  for (auto d : {visual_dim, word_dim, vocab, hidden, fine_dim, grounded_dim, pooled_dim}) {
    if (d == 0) throw std::invalid_argument("model dimensions must be positive");
  }
}

void to_json(json& j, const BlockFusionConfig& c) {
  j = json{{"x_dim", c.x_dim},           {"y_dim", c.y_dim}, {"proj_dim", c.proj_dim},
           {"proj_out_dim", c.proj_out_dim}, {"out_dim", c.out_dim}, {"chunks", c.chunks},
           {"rank", c.rank},             {"use_bias", c.use_bias},
           {"use_output_nonlinearity", c.use_output_nonlinearity}};
}

void from_json(const json& j, BlockFusionConfig& c) {
  c.x_dim = j.value("x_dim", c.x_dim);
  c.y_dim = j.value("y_dim", c.y_dim);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  c.proj_out_dim = j.value("proj_out_dim", c.proj_out_dim);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.chunks = j.value("chunks", c.chunks);
  c.rank = j.value("rank", c.rank);
  c.use_bias = j.value("use_bias", c.use_bias);
  c.use_output_nonlinearity = j.value("use_output_nonlinearity", c.use_output_nonlinearity);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"variant", variant_name(c.variant)},
           {"visual_dim", c.visual_dim},
           {"word_dim", c.word_dim},
           {"vocab", c.vocab},
           {"hidden", c.hidden},
           {"fine_dim", c.fine_dim},
           {"grounded_dim", c.grounded_dim},
           {"pooled_dim", c.pooled_dim},
           {"answers", c.answers},
           {"vgw_fusion", c.vgw_fusion},
           {"object_fusion", c.object_fusion},
           {"share_vgw", c.share_vgw},
           {"activate_fused_objects", c.activate_fused_objects},
           {"dropout", c.dropout},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  c.visual_dim = j.value("visual_dim", c.visual_dim);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.vocab = j.value("vocab", c.vocab);
  c.hidden = j.value("hidden", c.hidden);
  c.fine_dim = j.value("fine_dim", c.fine_dim);
  c.grounded_dim = j.value("grounded_dim", c.grounded_dim);
  c.pooled_dim = j.value("pooled_dim", c.pooled_dim);
  c.answers = j.value("answers", c.answers);
  if (j.contains("vgw_fusion")) from_json(j.at("vgw_fusion"), c.vgw_fusion);
  if (j.contains("object_fusion")) from_json(j.at("object_fusion"), c.object_fusion);
  c.share_vgw = j.value("share_vgw", c.share_vgw);
  c.activate_fused_objects = j.value("activate_fused_objects", c.activate_fused_objects);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
}

std::size_t AnswerVocab::id(const std::string& answer) const {
  auto it = std::find(answers.begin(), answers.end(), answer);
  if (it == answers.end()) throw std::out_of_range("unknown answer '" + answer + "'");
  return static_cast<std::size_t>(it - answers.begin());
}

ModelParams model_init(const ModelConfig& config_in, EmbeddingTable embeddings) {
  ModelConfig config = config_in;
  config.vocab = embeddings.vocab();
  if (embeddings.dim() != config.word_dim) {
    throw ShapeError("embedding dimension " + std::to_string(embeddings.dim()) + " does not match word_dim " +
                     std::to_string(config.word_dim));
  }
  config.validate();
  config.object_fusion.x_dim = config.visual_dim;
  config.object_fusion.y_dim = 2 * config.hidden;
  config.object_fusion.out_dim = config.pooled_dim;
  config.vgw_fusion.x_dim = config.visual_dim;
  config.vgw_fusion.y_dim = config.fine_dim;
  config.vgw_fusion.out_dim = config.grounded_dim;

  auto rng = make_rng(config.seed, {0x30de1});
  ModelParams p;
  p.config = config;
  p.embeddings = std::move(embeddings);
  const auto encoder_seed = rng();
  if (config.variant == Variant::baseline) {
    auto erng = make_rng(encoder_seed, {1});
    p.rnn_forward = gru_params_init(config.word_dim, config.hidden, erng());
    p.rnn_backward = gru_params_init(config.word_dim, config.hidden, erng());
  } else {
    VgqeConfig vc;
    vc.vgw = VgwConfig{config.visual_dim, config.word_dim, config.fine_dim, config.grounded_dim, config.vgw_fusion};
    vc.hidden = config.hidden;
    vc.share_vgw = config.share_vgw;
    p.grounded = vgqe_params_init(vc, encoder_seed);
  }
  p.object_fusion = block_params_init(config.object_fusion, rng());
  p.classifier_w1 = uniform_init(config.pooled_dim, 2 * config.pooled_dim, rng);
  p.classifier_b1 = zero_bias(2 * config.pooled_dim);
  p.classifier_w2 = uniform_init(2 * config.pooled_dim, config.answers, rng);
  p.classifier_b2 = zero_bias(config.answers);
  return p;
}

ParamList ModelParams::parameters() {
  ParamList out;
  out.push_back({"embeddings", &embeddings.table});
  if (config.variant == Variant::baseline) {
    rnn_forward.collect(out, "question.rnn_forward");
    rnn_backward.collect(out, "question.rnn_backward");
  } else {
    grounded.collect(out, "question");
  }
  object_fusion.collect(out, "object_fusion");
  out.push_back({"classifier.w1", &classifier_w1});
  out.push_back({"classifier.b1", &classifier_b1});
  out.push_back({"classifier.w2", &classifier_w2});
  out.push_back({"classifier.b2", &classifier_b2});
  return out;
}

void ModelParams::zero_grad() {
  for (auto& p : parameters())
    if (p.tensor->requires_grad()) p.tensor->zero_grad();
}

std::size_t count_parameters(ModelParams& params) { return count_trainable(params.parameters()); }

namespace {

ad::Var dropout(ad::Tape& tape, const ad::Var& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x.shape());
  const double scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = keep(rng) ? scale : 0.0;
  return ad::mul(x, tape.constant(std::move(mask)));
}

}  // namespace

ForwardResult forward(ad::Tape& tape, ModelParams& params, const SceneBatch& scenes, const QuestionBatch& questions,
                      const ForwardOptions& options) {
  const auto& cfg = params.config;
  const std::size_t n = questions.size(), k = scenes.objects;
  if (n == 0 || n != scenes.scenes) {
    throw ShapeError("forward: " + std::to_string(n) + " questions for " + std::to_string(scenes.scenes) + " scenes");
  }
  if (scenes.visual.dim(1) != cfg.visual_dim || scenes.labels.dim(1) != cfg.word_dim) {
    throw ShapeError("forward: scene features " + shape_string(scenes.visual.shape()) + "/" +
                     shape_string(scenes.labels.shape()) + " do not match the model dimensions");
  }
  ForwardResult out;
  auto sv = bind(tape, scenes);
  if (cfg.variant == Variant::baseline) {
    out.question = encode_questions_baseline(tape, questions, params.embeddings, bind(tape, params.rnn_forward),
                                             bind(tape, params.rnn_backward));
  } else {
    out.grounding = encode_questions_vgqe(tape, sv, questions, params.embeddings, bind(tape, params.grounded));
    out.question = out.grounding.encoding;
  }

  auto fused = block_fuse(sv.visual, ad::repeat_rows(out.question, k), bind(tape, params.object_fusion));
  if (cfg.activate_fused_objects) fused = ad::relu(fused);
  auto pooled = ad::reduce(ad::Reduce::max, ad::reshape(fused, {n, k, cfg.pooled_dim}), 1);

  const bool drop = options.training && cfg.dropout > 0.0;
  auto rng = make_rng(options.dropout_seed, {0xd0});
  if (drop) pooled = dropout(tape, pooled, cfg.dropout, rng);
  auto hidden = ad::relu(ad::add(ad::matmul(pooled, tape.parameter(params.classifier_w1)),
                                 tape.parameter(params.classifier_b1)));
  if (drop) hidden = dropout(tape, hidden, cfg.dropout, rng);
  out.logits =
      ad::add(ad::matmul(hidden, tape.parameter(params.classifier_w2)), tape.parameter(params.classifier_b2));
  return out;
}

ad::Var forward(ad::Tape& tape, ModelParams& params, const SceneFeatures& scene, const QuestionTokens& tokens,
                const ForwardOptions& options) {
  QuestionBatch batch{{tokens.ids}};
  if (tokens.ids.empty()) throw std::invalid_argument("forward: empty question");
  auto res = forward(tape, params, stack_scenes(scene), batch, options);
  return ad::reshape(res.logits, {params.config.answers});
}

std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

namespace {

std::filesystem::path data_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest, ModelParams& params, const json& extra) {
  const auto bin = data_path_for(manifest);
  std::ofstream data(bin, std::ios::binary | std::ios::trunc);
  if (!data) throw std::runtime_error("cannot write checkpoint data " + bin.string());
  json arrays = json::array();
  std::size_t offset = 0;
  for (const auto& p : params.parameters()) {
    const auto values = p.tensor->data();
    data.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    arrays.push_back({{"name", p.name},
                      {"shape", p.tensor->shape()},
                      {"dtype", "float64"},
                      {"offset", offset},
                      {"trainable", p.tensor->requires_grad()}});
    offset += values.size_bytes();
  }
  if (!data) throw std::runtime_error("failed writing " + bin.string());
  json doc{{"format", "vgqe-checkpoint-1"},
           {"data_file", bin.filename().string()},
           {"bytes", offset},
           {"model", params.config},
           {"arrays", arrays}};
  for (const auto& [key, value] : extra.items()) doc[key] = value;
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest " + manifest.string());
  out << doc.dump(2) << '\n';
}

namespace {

json read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open checkpoint " + manifest.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

void load_checkpoint_into(const std::filesystem::path& manifest, ModelParams& params) {
  const json doc = read_manifest(manifest);
  const auto bin = manifest.parent_path() / doc.at("data_file").get<std::string>();
  std::ifstream data(bin, std::ios::binary);
  if (!data) throw std::runtime_error("cannot open checkpoint data " + bin.string());
  auto expected = params.parameters();
  const auto& arrays = doc.at("arrays");
  if (arrays.size() != expected.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model expects " +
                             std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& entry = arrays[i];
    const auto name = entry.at("name").get<std::string>();
    auto& target = *expected[i].tensor;
    if (name != expected[i].name) {
      throw std::runtime_error("checkpoint array " + std::to_string(i) + " is '" + name + "', expected '" +
                               expected[i].name + "'");
    }
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != target.shape()) {
      throw ShapeError("checkpoint array '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                       shape_string(target.shape()));
    }
    if (entry.at("dtype").get<std::string>() != "float64") {
      throw std::runtime_error("checkpoint array '" + name + "' has unsupported dtype");
    }
    data.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
    auto values = target.data();
    data.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!data) throw std::runtime_error("checkpoint data truncated while reading '" + name + "'");
  }
}

ModelParams load_checkpoint(const std::filesystem::path& manifest) {
  const json doc = read_manifest(manifest);
  ModelConfig config = doc.at("model").get<ModelConfig>();
  // Shapes come from the config; values are overwritten from the data file.
  EmbeddingTable table;
  table.table = Tensor({config.vocab, config.word_dim});
  table.set_frozen(true);
  for (const auto& entry : doc.at("arrays")) {
    if (entry.at("name") == "embeddings") table.set_frozen(!entry.value("trainable", false));
  }
  ModelParams params = model_init(config, std::move(table));
  load_checkpoint_into(manifest, params);
  return params;
}

}  // namespace vgqe
