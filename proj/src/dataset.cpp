#include "vgqe/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

#include "vgqe/params.hpp"

namespace vgqe {

using nlohmann::json;

std::string template_name(Template t) {
  switch (t) {
    case Template::color: return "color";
    case Template::exists: return "exists";
    case Template::count: return "count";
  }
  return "color";
}

Template parse_template(const std::string& name) {
  if (name == "color") return Template::color;
  if (name == "exists") return Template::exists;
  if (name == "count") return Template::count;
  throw std::invalid_argument("unknown question template '" + name + "'");
}

void to_json(json& j, const DatasetConfig& c) {
  std::vector<std::string> templates;
  for (auto t : c.templates) templates.push_back(template_name(t));
  j = json{{"shapes", c.shapes},         {"colors", c.colors},       {"objects", c.objects},
           {"visual_dim", c.visual_dim}, {"word_dim", c.word_dim},   {"visual_noise", c.visual_noise},
           {"label_noise", c.label_noise}, {"n_train", c.n_train},   {"n_test", c.n_test},
           {"rho_train", c.rho_train},   {"rho_test", c.rho_test},   {"templates", templates},
           {"seed", c.seed}};
}

void from_json(const json& j, DatasetConfig& c) {
  c.shapes = j.value("shapes", c.shapes);
  c.colors = j.value("colors", c.colors);
  c.objects = j.value("objects", c.objects);
  c.visual_dim = j.value("visual_dim", c.visual_dim);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.visual_noise = j.value("visual_noise", c.visual_noise);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.rho_train = j.value("rho_train", c.rho_train);
  c.rho_test = j.value("rho_test", c.rho_test);
  if (j.contains("templates")) {
    c.templates.clear();
    for (const auto& t : j.at("templates")) c.templates.push_back(parse_template(t.get<std::string>()));
  }
  c.seed = j.value("seed", c.seed);
}

std::size_t Vocabularies::word_id(const std::string& w) const {
  auto it = std::find(words.begin(), words.end(), w);
  if (it == words.end()) throw std::out_of_range("unknown word '" + w + "'");
  return static_cast<std::size_t>(it - words.begin());
}

const DatasetSplit& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  if (name == "test_iid") return test_iid;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, test or test_iid)");
}

namespace {

constexpr std::size_t kMaxCount = 3;

const char* const kShapeNames[] = {"cube", "sphere", "cylinder", "cone", "torus", "prism"};
const char* const kColorNames[] = {"red", "green", "blue", "yellow", "purple", "orange", "gray", "cyan"};

std::string indexed_name(const char* const* names, std::size_t count, std::size_t i, const char* fallback) {
  return i < count ? names[i] : fallback + std::to_string(i);
}

Vocabularies build_vocab(const DatasetConfig& c) {
  Vocabularies v;
  for (std::size_t s = 0; s < c.shapes; ++s) v.shapes.push_back(indexed_name(kShapeNames, 6, s, "shape"));
  for (std::size_t k = 0; k < c.colors; ++k) v.colors.push_back(indexed_name(kColorNames, 8, k, "color"));
  v.words = {"what", "color", "is", "the", "there", "a", "how", "many"};
  v.words.insert(v.words.end(), v.shapes.begin(), v.shapes.end());
  v.answers = v.colors;
  v.answers.insert(v.answers.end(), {"yes", "no"});
  for (std::size_t n = 0; n <= kMaxCount; ++n) v.answers.push_back(std::to_string(n));
  return v;
}

std::vector<QuestionType> build_types(const DatasetConfig& c, const Vocabularies& v) {
  std::vector<QuestionType> types;
  const std::size_t yes = c.colors, no = c.colors + 1, zero = c.colors + 2;
  for (auto tmpl : c.templates) {
    for (std::size_t s = 0; s < c.shapes; ++s) {
      QuestionType t;
      t.id = types.size();
      t.tmpl = tmpl;
      t.shape = s;
      switch (tmpl) {
        case Template::color:
          t.name = "what color is the " + v.shapes[s];
          for (std::size_t k = 0; k < c.colors; ++k) t.candidates.push_back(k);
          break;
        case Template::exists:
          t.name = "is there a " + v.shapes[s];
          t.candidates = {yes, no};
          break;
        case Template::count:
          t.name = "how many " + v.shapes[s];
          for (std::size_t n = 0; n <= kMaxCount; ++n) t.candidates.push_back(zero + n);
          break;
      }
      types.push_back(std::move(t));
    }
  }
  return types;
}

std::vector<std::size_t> question_tokens(const QuestionType& t, const Vocabularies& v) {
  std::vector<std::string> words;
  const auto& shape = v.shapes[t.shape];
  switch (t.tmpl) {
    case Template::color: words = {"what", "color", "is", "the", shape}; break;
    case Template::exists: words = {"is", "there", "a", shape}; break;
    case Template::count: words = {"how", "many", shape}; break;
  }
  std::vector<std::size_t> ids;
  for (const auto& w : words) ids.push_back(v.word_id(w));
  return ids;
}

void check_consistency(const DatasetConfig& c, const std::vector<QuestionType>& types) {
  if (c.shapes < 2 || c.colors < 2) throw std::invalid_argument("dataset needs at least 2 shapes and 2 colors");
  if (c.n_train == 0 || c.n_test == 0) throw std::invalid_argument("dataset splits must be non-empty");
  if (c.objects == 0) throw std::invalid_argument("scenes need at least one object");
  if (c.templates.empty()) throw std::invalid_argument("dataset needs at least one question template");
  for (double rho : {c.rho_train, c.rho_test}) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("prior skew must lie in (0, 1]");
  }
  for (const auto& t : types) {
    if (t.tmpl == Template::count && c.objects < kMaxCount) {
      throw std::invalid_argument("question type '" + t.name + "' needs answers up to " + std::to_string(kMaxCount) +
                                  " but scenes hold only " + std::to_string(c.objects) + " objects");
    }
  }
}

std::vector<TypeBias> build_bias(const DatasetConfig& c, const std::vector<QuestionType>& types) {
  auto rng = make_rng(c.seed, {0xb1a5});
  std::vector<TypeBias> out;
  for (const auto& t : types) {
    TypeBias b;
    const auto n = t.candidates.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t major = pick(rng);
    std::uniform_int_distribution<std::size_t> pick_other(0, n - 2);
    std::size_t other = pick_other(rng);
    if (other >= major) ++other;
    b.train_majority = t.candidates[major];
    b.test_majority = t.candidates[other];
    b.rho_train = c.rho_train;
    b.rho_test = std::max(c.rho_test, 1.0 / static_cast<double>(n));
    b.biased = c.rho_train > 1.0 / static_cast<double>(n);
    out.push_back(b);
  }
  return out;
}

std::vector<double> type_probabilities(const QuestionType& t, const TypeBias& b, bool inverted) {
  const auto n = t.candidates.size();
  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  if (!b.biased) return p;
  const double rho = inverted ? b.rho_test : b.rho_train;
  const std::size_t major = inverted ? b.test_majority : b.train_majority;
  for (std::size_t i = 0; i < n; ++i)
    p[i] = t.candidates[i] == major ? rho : (1.0 - rho) / static_cast<double>(n - 1);
  return p;
}

struct SceneRecipe {
  std::size_t target_shape;
  std::vector<std::pair<std::size_t, std::size_t>> objects;  // (shape, color)
};

VqaExample make_example(const Dataset& d, std::size_t split_id, std::size_t index, bool inverted) {
  const auto& c = d.config;
  auto rng = make_rng(c.seed, {0xe4a, split_id, index});
  std::uniform_int_distribution<std::size_t> pick_type(0, d.types.size() - 1);
  const auto& type = d.types[pick_type(rng)];
  const auto probs = type_probabilities(type, d.bias[type.id], inverted);
  std::discrete_distribution<std::size_t> pick_answer(probs.begin(), probs.end());
  const std::size_t answer = type.candidates[pick_answer(rng)];

  std::uniform_int_distribution<std::size_t> pick_color(0, c.colors - 1);
  std::uniform_int_distribution<std::size_t> pick_other_shape(0, c.shapes - 2);
  std::vector<std::pair<std::size_t, std::size_t>> objs;
  std::size_t targets = 0;
  switch (type.tmpl) {
    case Template::color:
      objs.emplace_back(type.shape, answer);
      targets = 1;
      break;
    case Template::exists:
      if (answer == c.colors) {  // yes
        std::uniform_int_distribution<std::size_t> pick_n(1, std::min<std::size_t>(2, c.objects));
        targets = pick_n(rng);
      }
      break;
    case Template::count: targets = answer - (c.colors + 2); break;
  }
  if (targets > c.objects) throw std::logic_error("scene cannot hold the requested objects for '" + type.name + "'");
  if (type.tmpl != Template::color)
    for (std::size_t i = 0; i < targets; ++i) objs.emplace_back(type.shape, pick_color(rng));
  while (objs.size() < c.objects) {
    std::size_t s = pick_other_shape(rng);
    if (s >= type.shape) ++s;
    objs.emplace_back(s, pick_color(rng));
  }
  std::shuffle(objs.begin(), objs.end(), rng);

  VqaExample ex;
  ex.id = index;
  ex.type = type.id;
  ex.tokens = question_tokens(type, d.vocab);
  ex.answer = answer;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const auto& [shape, color] : objs) {
    SyntheticObject o;
    o.shape = shape;
    o.color = color;
    const std::size_t row = shape * c.colors + color;
    o.visual.resize(c.visual_dim);
    for (std::size_t j = 0; j < c.visual_dim; ++j)
      o.visual[j] = d.visual_basis.at(row, j) + c.visual_noise * noise(rng);
    const std::size_t word = d.vocab.word_id(d.vocab.shapes[shape]);
    o.label.resize(c.word_dim);
    for (std::size_t j = 0; j < c.word_dim; ++j)
      o.label[j] = d.word_vectors.table.at(word, j) + c.label_noise * noise(rng);
    ex.objects.push_back(std::move(o));
  }
  return ex;
}

DatasetSplit make_split(const Dataset& d, const std::string& name, std::size_t split_id, std::size_t count,
                        bool inverted) {
  DatasetSplit s;
  s.name = name;
  s.examples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) s.examples.push_back(make_example(d, split_id, i, inverted));
  return s;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
  Dataset d;
  d.config = config;
  d.vocab = build_vocab(config);
  d.types = build_types(config, d.vocab);
  check_consistency(config, d.types);
  d.bias = build_bias(config, d.types);
  d.word_vectors = make_embedding_table(d.vocab.words.size(), config.word_dim, make_rng(config.seed, {0x30})());
  auto basis_rng = make_rng(config.seed, {0xba5});
  std::normal_distribution<double> gauss(0.0, 1.0);
  d.visual_basis = Tensor({config.shapes * config.colors, config.visual_dim});
  for (auto& v : d.visual_basis.data()) v = gauss(basis_rng);

  d.train = make_split(d, "train", 0, config.n_train, false);
  d.test = make_split(d, "test", 1, config.n_test, true);
  d.test_iid = make_split(d, "test_iid", 2, config.n_test, false);
  return d;
}

std::vector<double> answer_probabilities(const Dataset& data, std::size_t type, bool inverted) {
  if (type >= data.types.size()) throw std::out_of_range("unknown question type " + std::to_string(type));
  const auto& t = data.types[type];
  const auto local = type_probabilities(t, data.bias[type], inverted);
  std::vector<double> out(data.vocab.answers.size(), 0.0);
  for (std::size_t i = 0; i < t.candidates.size(); ++i) out[t.candidates[i]] = local[i];
  return out;
}

std::vector<double> answer_distribution(const DatasetSplit& split, std::size_t type, std::size_t answer_count) {
  std::vector<double> hist(answer_count, 0.0);
  std::size_t n = 0;
  for (const auto& ex : split.examples) {
    if (ex.type != type) continue;
    if (ex.answer >= answer_count) throw std::out_of_range("answer id " + std::to_string(ex.answer) + " out of range");
    hist[ex.answer] += 1.0;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("question type " + std::to_string(type) + " does not occur in the split");
  for (auto& h : hist) h /= static_cast<double>(n);
  return hist;
}

SceneFeatures scene_features(const VqaExample& example) {
  if (example.objects.empty()) throw std::invalid_argument("example has no objects");
  const std::size_t k = example.objects.size();
  const std::size_t dv = example.objects[0].visual.size(), dw = example.objects[0].label.size();
  SceneFeatures s{Tensor({k, dv}), Tensor({k, dw})};
  for (std::size_t i = 0; i < k; ++i) {
    const auto& o = example.objects[i];
    if (o.visual.size() != dv || o.label.size() != dw) throw ShapeError("ragged object features");
    std::copy(o.visual.begin(), o.visual.end(), s.visual.data().begin() + i * dv);
    std::copy(o.label.begin(), o.label.end(), s.labels.data().begin() + i * dw);
  }
  return s;
}

ExampleBatch make_batch(const DatasetSplit& split, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no examples");
  const auto& first = split.examples.at(indices[0]);
  if (first.objects.empty()) throw std::invalid_argument("make_batch: example has no objects");
  const std::size_t k = first.objects.size();
  const std::size_t dv = first.objects[0].visual.size(), dw = first.objects[0].label.size();
  ExampleBatch b;
  b.scenes.scenes = indices.size();
  b.scenes.objects = k;
  b.scenes.visual = Tensor({indices.size() * k, dv});
  b.scenes.labels = Tensor({indices.size() * k, dw});
  auto vis = b.scenes.visual.data();
  auto lab = b.scenes.labels.data();
  std::size_t row = 0;
  for (auto idx : indices) {
    const auto& ex = split.examples.at(idx);
    if (ex.objects.size() != k) {
      throw ShapeError("make_batch: example " + std::to_string(ex.id) + " has " + std::to_string(ex.objects.size()) +
                       " objects, expected " + std::to_string(k));
    }
    for (const auto& o : ex.objects) {
      if (o.visual.size() != dv || o.label.size() != dw) throw ShapeError("make_batch: ragged object features");
      std::copy(o.visual.begin(), o.visual.end(), vis.begin() + row * dv);
      std::copy(o.label.begin(), o.label.end(), lab.begin() + row * dw);
      ++row;
    }
    b.questions.tokens.push_back(ex.tokens);
    b.answers.push_back(ex.answer);
    b.types.push_back(ex.type);
  }
  return b;
}

namespace {

json example_json(const VqaExample& ex) {
  json objects = json::array();
  for (const auto& o : ex.objects)
    objects.push_back({{"shape", o.shape}, {"color", o.color}, {"v", o.visual}, {"l", o.label}});
  return json{{"id", ex.id}, {"type", ex.type}, {"tokens", ex.tokens}, {"answer", ex.answer}, {"objects", objects}};
}

template <typename T>
T field(const json& j, const char* name, std::size_t line) {
  if (!j.contains(name)) throw std::runtime_error("line " + std::to_string(line) + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw std::runtime_error("line " + std::to_string(line) + ": field '" + name + "' has the wrong type");
  }
}

}  // namespace

void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write split " + path.string());
  for (const auto& ex : split.examples) out << example_json(ex).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DatasetSplit load_split(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split " + path.string());
  DatasetSplit split;
  split.name = name.empty() ? path.stem().string() : name;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line) + ": malformed JSON");
    }
    if (!j.is_object()) throw std::runtime_error(path.string() + " line " + std::to_string(line) + ": not an object");
    VqaExample ex;
    ex.id = field<std::size_t>(j, "id", line);
    ex.type = field<std::size_t>(j, "type", line);
    ex.tokens = field<std::vector<std::size_t>>(j, "tokens", line);
    ex.answer = field<std::size_t>(j, "answer", line);
    for (const auto& o : field<json>(j, "objects", line)) {
      SyntheticObject obj;
      obj.shape = field<std::size_t>(o, "shape", line);
      obj.color = field<std::size_t>(o, "color", line);
      obj.visual = field<std::vector<double>>(o, "v", line);
      obj.label = field<std::vector<double>>(o, "l", line);
      ex.objects.push_back(std::move(obj));
    }
    split.examples.push_back(std::move(ex));
  }
  return split;
}

json dataset_manifest(const Dataset& d) {
  json types = json::array();
  for (const auto& t : d.types) {
    const auto& b = d.bias[t.id];
    types.push_back({{"id", t.id},
                     {"name", t.name},
                     {"template", template_name(t.tmpl)},
                     {"shape", t.shape},
                     {"candidates", t.candidates},
                     {"biased", b.biased},
                     {"train_majority", b.train_majority},
                     {"test_majority", b.test_majority},
                     {"rho_train", b.rho_train},
                     {"rho_test", b.rho_test}});
  }
  json hist = json::object();
  for (const auto* split : {&d.train, &d.test, &d.test_iid}) {
    json per_type = json::array();
    for (const auto& t : d.types) {
      bool present = std::any_of(split->examples.begin(), split->examples.end(),
                                 [&](const VqaExample& e) { return e.type == t.id; });
      per_type.push_back(present ? json(answer_distribution(*split, t.id, d.vocab.answers.size())) : json(nullptr));
    }
    hist[split->name] = per_type;
  }
  std::vector<std::vector<double>> words(d.word_vectors.vocab());
  for (std::size_t i = 0; i < words.size(); ++i)
    words[i].assign(d.word_vectors.table.data().begin() + i * d.word_vectors.dim(),
                    d.word_vectors.table.data().begin() + (i + 1) * d.word_vectors.dim());
  std::vector<std::vector<double>> basis(d.visual_basis.dim(0));
  for (std::size_t i = 0; i < basis.size(); ++i)
    basis[i].assign(d.visual_basis.data().begin() + i * d.visual_basis.dim(1),
                    d.visual_basis.data().begin() + (i + 1) * d.visual_basis.dim(1));
  return json{{"config", d.config},
              {"vocabularies",
               {{"words", d.vocab.words}, {"answers", d.vocab.answers}, {"shapes", d.vocab.shapes},
                {"colors", d.vocab.colors}}},
              {"question_types", types},
              {"histograms", hist},
              {"splits", {{"train", d.train.size()}, {"test", d.test.size()}, {"test_iid", d.test_iid.size()}}},
              {"word_vectors", words},
              {"visual_basis", basis}};
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_split(d.train, dir / "train.jsonl");
  save_split(d.test, dir / "test.jsonl");
  save_split(d.test_iid, dir / "test_iid.jsonl");
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << dataset_manifest(d).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open dataset manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + " is not valid JSON");
  }
  Dataset d;
  d.config = m.at("config").get<DatasetConfig>();
  const auto& v = m.at("vocabularies");
  d.vocab.words = v.at("words").get<std::vector<std::string>>();
  d.vocab.answers = v.at("answers").get<std::vector<std::string>>();
  d.vocab.shapes = v.at("shapes").get<std::vector<std::string>>();
  d.vocab.colors = v.at("colors").get<std::vector<std::string>>();
  for (const auto& t : m.at("question_types")) {
    QuestionType q;
    q.id = t.at("id").get<std::size_t>();
    q.name = t.at("name").get<std::string>();
    q.tmpl = parse_template(t.at("template").get<std::string>());
    q.shape = t.at("shape").get<std::size_t>();
    q.candidates = t.at("candidates").get<std::vector<std::size_t>>();
    d.types.push_back(std::move(q));
    TypeBias b;
    b.biased = t.at("biased").get<bool>();
    b.train_majority = t.at("train_majority").get<std::size_t>();
    b.test_majority = t.at("test_majority").get<std::size_t>();
    b.rho_train = t.at("rho_train").get<double>();
    b.rho_test = t.at("rho_test").get<double>();
    d.bias.push_back(b);
  }
  const auto words = m.at("word_vectors").get<std::vector<std::vector<double>>>();
  d.word_vectors.table = Tensor({words.size(), d.config.word_dim});
  for (std::size_t i = 0; i < words.size(); ++i)
    std::copy(words[i].begin(), words[i].end(), d.word_vectors.table.data().begin() + i * d.config.word_dim);
  d.word_vectors.set_frozen(true);
  const auto basis = m.at("visual_basis").get<std::vector<std::vector<double>>>();
  d.visual_basis = Tensor({basis.size(), d.config.visual_dim});
  for (std::size_t i = 0; i < basis.size(); ++i)
    std::copy(basis[i].begin(), basis[i].end(), d.visual_basis.data().begin() + i * d.config.visual_dim);
  d.train = load_split(dir / "train.jsonl", "train");
  d.test = load_split(dir / "test.jsonl", "test");
  d.test_iid = load_split(dir / "test_iid.jsonl", "test_iid");
  return d;
}

}  // namespace vgqe
