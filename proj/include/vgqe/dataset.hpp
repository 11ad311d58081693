#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgqe/encoder.hpp"
#include "vgqe/grounded_encoder.hpp"

namespace vgqe {

enum class Template { color, exists, count };

std::string template_name(Template t);
Template parse_template(const std::string& name);

struct DatasetConfig {
  std::size_t shapes = 4;    // S
  std::size_t colors = 5;    // K
  std::size_t objects = 6;   // k
  std::size_t visual_dim = 32;
  std::size_t word_dim = 16;
  double visual_noise = 0.05;  // sigma_v
  double label_noise = 0.05;   // sigma_l
  std::size_t n_train = 20000;
  std::size_t n_test = 4000;
  double rho_train = 0.8;
  double rho_test = 0.8;
  std::vector<Template> templates = {Template::color, Template::exists, Template::count};
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct SyntheticObject {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::vector<double> visual;  // v, d_v
  std::vector<double> label;   // l, d_w

  friend bool operator==(const SyntheticObject&, const SyntheticObject&) = default;
};

struct VqaExample {
  std::size_t id = 0;
  std::size_t type = 0;
  std::vector<std::size_t> tokens;
  std::size_t answer = 0;
  std::vector<SyntheticObject> objects;

  friend bool operator==(const VqaExample&, const VqaExample&) = default;
};

struct DatasetSplit {
  std::string name;
  std::vector<VqaExample> examples;

  std::size_t size() const { return examples.size(); }
  friend bool operator==(const DatasetSplit& a, const DatasetSplit& b) { return a.examples == b.examples; }
};

/// Question type = template x target shape.
struct QuestionType {
  std::size_t id = 0;
  Template tmpl = Template::color;
  std::size_t shape = 0;
  std::string name;
  std::vector<std::size_t> candidates;  // answer ids this type can produce
};

/// Per-type answer priors. Types whose rho does not exceed 1/|candidates| are unbiased.
struct TypeBias {
  bool biased = false;
  std::size_t train_majority = 0;
  std::size_t test_majority = 0;
  double rho_train = 0.0;
  double rho_test = 0.0;
};

struct Vocabularies {
  std::vector<std::string> words;
  std::vector<std::string> answers;
  std::vector<std::string> shapes;
  std::vector<std::string> colors;

  std::size_t word_id(const std::string& w) const;
};

struct Dataset {
  DatasetConfig config;
  Vocabularies vocab;
  std::vector<QuestionType> types;
  std::vector<TypeBias> bias;
  EmbeddingTable word_vectors;  // frozen [words x d_w]; label embeddings reuse the shape words
  Tensor visual_basis;          // [S*K x d_v], row shape*K + color
  DatasetSplit train;
  DatasetSplit test;      // inverted priors
  DatasetSplit test_iid;  // train priors

  const DatasetSplit& split(const std::string& name) const;
};

/// Everything derives from config.seed; each example draws from its own
/// (seed, split, index) stream.
Dataset generate_dataset(const DatasetConfig& config);

/// Answer distribution of one split: train/test_iid use the train priors, test the inverted ones.
std::vector<double> answer_probabilities(const Dataset& data, std::size_t type, bool inverted);

/// Empirical normalized histogram over all answers for one question type.
std::vector<double> answer_distribution(const DatasetSplit& split, std::size_t type, std::size_t answer_count);

SceneFeatures scene_features(const VqaExample& example);

/// Row-stacked inputs for a set of examples that share the object count.
struct ExampleBatch {
  SceneBatch scenes;
  QuestionBatch questions;
  std::vector<std::size_t> answers;
  std::vector<std::size_t> types;
};

ExampleBatch make_batch(const DatasetSplit& split, std::span<const std::size_t> indices);

void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path, const std::string& name = "");

/// Writes train.jsonl, test.jsonl, test_iid.jsonl and manifest.json into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
/// Reads a directory written by save_dataset.
Dataset load_dataset(const std::filesystem::path& dir);
nlohmann::json dataset_manifest(const Dataset& data);

}  // namespace vgqe
