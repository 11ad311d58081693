#include "vgqe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace vgqe {

using nlohmann::json;

double vqa_accuracy(std::size_t prediction, std::span<const std::size_t> ground_truth) {
  if (ground_truth.empty()) throw std::invalid_argument("vqa_accuracy: empty ground truth");
  const auto matches = std::count(ground_truth.begin(), ground_truth.end(), prediction);
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

double vqa_accuracy(std::size_t prediction, std::size_t ground_truth) {
  const std::size_t replicas[] = {ground_truth, ground_truth, ground_truth};
  return vqa_accuracy(prediction, replicas);
}

ReportContext report_context(const Dataset& data) {
  ReportContext c;
  c.answers = data.vocab.answers;
  for (const auto& t : data.types) {
    c.type_names.push_back(t.name);
    const bool present = std::any_of(data.train.examples.begin(), data.train.examples.end(),
                                     [&](const VqaExample& e) { return e.type == t.id; });
    c.train_histograms.push_back(present ? answer_distribution(data.train, t.id, c.answers.size())
                                         : std::vector<double>{});
  }
  return c;
}

EvalReport rescore(const std::vector<Prediction>& predictions, const ReportContext& context) {
  if (predictions.empty()) throw std::invalid_argument("cannot score an empty prediction set");
  const std::size_t answers = context.answers.size();
  EvalReport r;
  r.answers = context.answers;
  r.predictions = predictions;
  r.count = predictions.size();

  std::map<std::size_t, TypeReport> by_type;
  double total = 0.0;
  for (const auto& p : predictions) {
    if (p.answer >= answers || p.prediction >= answers) {
      throw std::out_of_range("prediction for example " + std::to_string(p.id) + " uses an unknown answer id");
    }
    if (p.type >= context.type_names.size()) {
      throw std::out_of_range("example " + std::to_string(p.id) + " has unknown question type " +
                              std::to_string(p.type));
    }
    auto& t = by_type[p.type];
    if (t.count == 0) {
      t.type = p.type;
      t.name = context.type_names[p.type];
      t.split_histogram.assign(answers, 0.0);
      t.predicted_histogram.assign(answers, 0.0);
    }
    const double acc = vqa_accuracy(p.prediction, p.answer);
    ++t.count;
    t.accuracy += acc;
    t.split_histogram[p.answer] += 1.0;
    t.predicted_histogram[p.prediction] += 1.0;
    total += acc;
  }
  r.overall = total / static_cast<double>(r.count);
  for (auto& [id, t] : by_type) {
    const double n = static_cast<double>(t.count);
    t.accuracy /= n;
    for (auto& h : t.split_histogram) h /= n;
    for (auto& h : t.predicted_histogram) h /= n;
    if (id < context.train_histograms.size()) t.train_histogram = context.train_histograms[id];
    r.types.push_back(std::move(t));
  }
  return r;
}

EvalReport evaluate_predictions(const DatasetSplit& split, std::span<const std::size_t> predictions,
                                const ReportContext& context) {
  if (split.examples.empty()) throw std::invalid_argument("evaluate: empty split");
  if (predictions.size() != split.examples.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(split.examples.size()) + " examples");
  }
  std::vector<Prediction> preds;
  preds.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& e = split.examples[i];
    preds.push_back({e.id, e.type, e.answer, predictions[i]});
  }
  auto r = rescore(preds, context);
  r.split = split.name;
  return r;
}

namespace {

SampledTrace sample_trace(ModelParams& params, const Dataset& data, const DatasetSplit& split, std::size_t index) {
  const std::size_t idx[] = {index};
  const auto batch = make_batch(split, idx);
  ad::Tape tape;
  auto res = forward(tape, params, batch.scenes, batch.questions);
  const auto& ex = split.examples[index];
  SampledTrace t;
  t.id = ex.id;
  for (auto tok : ex.tokens) t.words.push_back(data.vocab.words.at(tok));
  for (const auto& o : ex.objects) t.objects.push_back(data.vocab.colors.at(o.color) + " " + data.vocab.shapes.at(o.shape));
  t.answer = ex.answer;
  t.prediction = predict(res.logits.value().data());
  t.attention = extract_trace(res.grounding, 0, ex.tokens.size());
  return t;
}

}  // namespace

EvalReport evaluate_split(ModelParams& params, const Dataset& data, const std::string& split_name,
                          const EvalOptions& options) {
  const auto& split = data.split(split_name);
  if (split.examples.empty()) throw std::invalid_argument("evaluate: split '" + split_name + "' is empty");
  if (options.batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  std::vector<std::size_t> predictions;
  predictions.reserve(split.size());
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < split.size(); at += options.batch_size) {
    const std::size_t end = std::min(split.size(), at + options.batch_size);
    idx.resize(end - at);
    std::iota(idx.begin(), idx.end(), at);
    const auto batch = make_batch(split, idx);
    ad::Tape tape;
    auto res = forward(tape, params, batch.scenes, batch.questions);
    const auto& logits = res.logits.value();
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) predictions.push_back(predict(logits.data().subspan(r * classes, classes)));
  }
  auto report = evaluate_predictions(split, predictions, report_context(data));
  report.variant = variant_name(params.config.variant);

  if (params.config.variant == Variant::vgqe && options.traces > 0) {
    std::map<std::size_t, std::size_t> first_of_type;
    for (std::size_t i = 0; i < split.size(); ++i) first_of_type.try_emplace(split.examples[i].type, i);
    for (const auto& [type, index] : first_of_type) {
      if (report.traces.size() >= options.traces) break;
      report.traces.push_back(sample_trace(params, data, split, index));
    }
  }
  return report;
}

double bias_gap(const EvalReport& in_distribution, const EvalReport& out_of_distribution) {
  return in_distribution.overall - out_of_distribution.overall;
}

TruncatedHistogram truncate_histogram(std::span<const double> histogram, std::size_t keep) {
  std::vector<std::size_t> order(histogram.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return histogram[a] > histogram[b]; });
  TruncatedHistogram out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < keep) {
      out.top.emplace_back(order[i], histogram[order[i]]);
    } else {
      out.rest += histogram[order[i]];
    }
  }
  return out;
}

json report_to_json(const EvalReport& r, const ReportContext& c) {
  json types = json::array();
  for (const auto& t : r.types) {
    types.push_back({{"type", t.type},
                     {"name", t.name},
                     {"n", t.count},
                     {"accuracy", t.accuracy},
                     {"train_histogram", t.train_histogram},
                     {"split_histogram", t.split_histogram},
                     {"predicted_histogram", t.predicted_histogram}});
  }
  json preds = json::array();
  for (const auto& p : r.predictions) preds.push_back({p.id, p.type, p.answer, p.prediction});
  json traces = json::array();
  for (const auto& t : r.traces) {
    traces.push_back({{"id", t.id},
                      {"words", t.words},
                      {"objects", t.objects},
                      {"answer", c.answers.at(t.answer)},
                      {"prediction", c.answers.at(t.prediction)},
                      {"attention_forward", t.attention.forward},
                      {"attention_backward", t.attention.backward}});
  }
  return json{{"format", "vgqe-report-1"},
              {"split", r.split},
              {"variant", r.variant},
              {"n", r.count},
              {"overall", r.overall},
              {"answers", c.answers},
              {"type_names", c.type_names},
              {"train_histograms", c.train_histograms},
              {"types", types},
              {"predictions_columns", {"id", "type", "answer", "prediction"}},
              {"predictions", preds},
              {"traces", traces}};
}

std::pair<EvalReport, ReportContext> report_from_json(const json& j) {
  if (j.value("format", "") != "vgqe-report-1") throw std::runtime_error("not an evaluation report");
  ReportContext c;
  c.answers = j.at("answers").get<std::vector<std::string>>();
  c.type_names = j.at("type_names").get<std::vector<std::string>>();
  c.train_histograms = j.at("train_histograms").get<std::vector<std::vector<double>>>();
  std::vector<Prediction> preds;
  for (const auto& p : j.at("predictions")) {
    preds.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>(), p.at(2).get<std::size_t>(),
                     p.at(3).get<std::size_t>()});
  }
  auto r = rescore(preds, c);
  r.split = j.value("split", "");
  r.variant = j.value("variant", "");
  for (const auto& t : j.at("traces")) {
    SampledTrace s;
    s.id = t.at("id").get<std::size_t>();
    s.words = t.at("words").get<std::vector<std::string>>();
    s.objects = t.at("objects").get<std::vector<std::string>>();
    const auto find = [&](const std::string& a) {
      auto it = std::find(c.answers.begin(), c.answers.end(), a);
      if (it == c.answers.end()) throw std::runtime_error("trace names unknown answer '" + a + "'");
      return static_cast<std::size_t>(it - c.answers.begin());
    };
    s.answer = find(t.at("answer").get<std::string>());
    s.prediction = find(t.at("prediction").get<std::string>());
    s.attention.forward = t.at("attention_forward").get<std::vector<std::vector<double>>>();
    s.attention.backward = t.at("attention_backward").get<std::vector<std::vector<double>>>();
    r.traces.push_back(std::move(s));
  }
  return {std::move(r), std::move(c)};
}

void write_report(const EvalReport& report, const ReportContext& context, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << report_to_json(report, context).dump(1) << '\n';
}

std::pair<EvalReport, ReportContext> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception&) {
    throw std::runtime_error(path.string() + " is not valid JSON");
  }
  return report_from_json(j);
}

std::vector<std::string> check_report(const EvalReport& r, double tol) {
  std::vector<std::string> problems;
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& t : r.types) {
    if (t.accuracy < 0.0 || t.accuracy > 1.0) problems.push_back(t.name + ": accuracy outside [0, 1]");
    weighted += t.accuracy * static_cast<double>(t.count);
    n += t.count;
    for (const auto* h : {&t.split_histogram, &t.predicted_histogram, &t.train_histogram}) {
      if (h->empty()) continue;
      const double s = std::accumulate(h->begin(), h->end(), 0.0);
      if (std::abs(s - 1.0) > tol) problems.push_back(t.name + ": histogram sums to " + std::to_string(s));
    }
  }
  if (n != r.count) problems.push_back("per-type counts do not add up to the example count");
  if (n > 0 && std::abs(weighted / static_cast<double>(n) - r.overall) > tol) {
    problems.push_back("type-weighted accuracy differs from overall accuracy");
  }
  return problems;
}

void write_comparison(const std::filesystem::path& baseline_path, const std::filesystem::path& vgqe_path,
                      const std::filesystem::path& out_dir) {
  const auto [base, base_ctx] = read_report(baseline_path);
  const auto [vg, vg_ctx] = read_report(vgqe_path);
  if (base_ctx.answers != vg_ctx.answers || base_ctx.type_names != vg_ctx.type_names) {
    throw std::runtime_error("reports were computed on different datasets");
  }
  if (base.split != vg.split) throw std::runtime_error("reports cover different splits");
  for (const auto* r : {&base, &vg}) {
    const auto problems = check_report(*r);
    if (!problems.empty()) throw std::runtime_error("inconsistent report: " + problems.front());
  }
  std::filesystem::create_directories(out_dir);

  std::map<std::size_t, const TypeReport*> vg_types;
  for (const auto& t : vg.types) vg_types[t.type] = &t;

  std::ofstream table(out_dir / "table.csv", std::ios::trunc);
  table.precision(17);
  table << "type,n,baseline,vgqe\n";
  for (const auto& t : base.types) {
    auto it = vg_types.find(t.type);
    if (it == vg_types.end() || it->second->count != t.count) {
      throw std::runtime_error("reports disagree on question type '" + t.name + "'");
    }
    table << '"' << t.name << "\"," << t.count << ',' << t.accuracy << ',' << it->second->accuracy << '\n';
  }
  table << "overall," << base.count << ',' << base.overall << ',' << vg.overall << '\n';

  std::ofstream hist(out_dir / "histograms.csv", std::ios::trunc);
  hist.precision(17);
  hist << "type,answer,train,split,baseline,vgqe\n";
  for (const auto& t : base.types) {
    const auto& v = *vg_types.at(t.type);
    // rank answers by their mass summed over the four columns, keep the top 8
    std::vector<double> combined(t.split_histogram.size(), 0.0);
    for (std::size_t a = 0; a < combined.size(); ++a) {
      combined[a] = t.split_histogram[a] + t.predicted_histogram[a] + v.predicted_histogram[a] +
                    (t.train_histogram.empty() ? 0.0 : t.train_histogram[a]);
    }
    const auto kept = truncate_histogram(combined);
    double train_rest = t.train_histogram.empty() ? 0.0 : 1.0, split_rest = 1.0, base_rest = 1.0, vg_rest = 1.0;
    for (const auto& [a, mass] : kept.top) {
      if (mass <= 0.0) continue;
      const double tr = t.train_histogram.empty() ? 0.0 : t.train_histogram[a];
      hist << '"' << t.name << "\"," << base_ctx.answers[a] << ',' << tr << ',' << t.split_histogram[a] << ','
           << t.predicted_histogram[a] << ',' << v.predicted_histogram[a] << '\n';
      train_rest -= tr;
      split_rest -= t.split_histogram[a];
      base_rest -= t.predicted_histogram[a];
      vg_rest -= v.predicted_histogram[a];
    }
    if (kept.rest > 0.0) {
      hist << '"' << t.name << "\",other," << std::max(0.0, train_rest) << ',' << std::max(0.0, split_rest) << ','
           << std::max(0.0, base_rest) << ',' << std::max(0.0, vg_rest) << '\n';
    }
  }

  json traces = json::array();
  for (const auto& t : vg.traces) {
    traces.push_back({{"id", t.id},
                      {"words", t.words},
                      {"objects", t.objects},
                      {"answer", vg_ctx.answers[t.answer]},
                      {"prediction", vg_ctx.answers[t.prediction]},
                      {"attention_forward", t.attention.forward},
                      {"attention_backward", t.attention.backward}});
  }
  std::ofstream tr(out_dir / "attention_traces.json", std::ios::trunc);
  tr << json{{"split", vg.split}, {"traces", traces}}.dump(1) << '\n';
  if (!table || !hist || !tr) throw std::runtime_error("failed writing comparison into " + out_dir.string());
}

}  // namespace vgqe
