#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgqe/dataset.hpp"
#include "vgqe/model.hpp"

namespace vgqe {

/// min(#matching annotators / 3, 1).
double vqa_accuracy(std::size_t prediction, std::span<const std::size_t> ground_truth);
/// Single-annotator convention: the one answer stands for three matching annotators.
double vqa_accuracy(std::size_t prediction, std::size_t ground_truth);

/// Names and train-split statistics a report needs besides the evaluated split.
struct ReportContext {
  std::vector<std::string> answers;
  std::vector<std::string> type_names;
  std::vector<std::vector<double>> train_histograms;  // per type, empty when absent from train
};

ReportContext report_context(const Dataset& data);

struct Prediction {
  std::size_t id = 0;
  std::size_t type = 0;
  std::size_t answer = 0;
  std::size_t prediction = 0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct TypeReport {
  std::size_t type = 0;
  std::string name;
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<double> train_histogram;
  std::vector<double> split_histogram;
  std::vector<double> predicted_histogram;
};

struct SampledTrace {
  std::size_t id = 0;
  std::vector<std::string> words;
  std::vector<std::string> objects;  // "<color> <shape>"
  std::size_t answer = 0;
  std::size_t prediction = 0;
  AttentionTrace attention;
};

struct EvalReport {
  std::string split;
  std::string variant;
  double overall = 0.0;
  std::size_t count = 0;
  std::vector<std::string> answers;
  std::vector<TypeReport> types;  // types present in the split, ascending id
  std::vector<Prediction> predictions;
  std::vector<SampledTrace> traces;
};

/// Scores stored predictions; predictions[i] answers split.examples[i].
EvalReport evaluate_predictions(const DatasetSplit& split, std::span<const std::size_t> predictions,
                                const ReportContext& context);

/// Rebuilds every derived figure from the prediction list alone.
EvalReport rescore(const std::vector<Prediction>& predictions, const ReportContext& context);

struct EvalOptions {
  std::size_t batch_size = 256;
  std::size_t traces = 0;  // vgqe only: one sampled question per type, up to this many
};

/// Deterministic (dropout off) evaluation of a model on one split of `data`.
EvalReport evaluate_split(ModelParams& params, const Dataset& data, const std::string& split,
                          const EvalOptions& options = {});

/// In-distribution overall minus out-of-distribution overall.
double bias_gap(const EvalReport& in_distribution, const EvalReport& out_of_distribution);

/// The top `keep` answers of a histogram, descending by mass then ascending id;
/// the remaining mass is returned in `rest`.
struct TruncatedHistogram {
  std::vector<std::pair<std::size_t, double>> top;
  double rest = 0.0;
};
TruncatedHistogram truncate_histogram(std::span<const double> histogram, std::size_t keep = 8);

nlohmann::json report_to_json(const EvalReport& report, const ReportContext& context);
/// Returns the report and the context stored alongside it.
std::pair<EvalReport, ReportContext> report_from_json(const nlohmann::json& j);

void write_report(const EvalReport& report, const ReportContext& context, const std::filesystem::path& path);
std::pair<EvalReport, ReportContext> read_report(const std::filesystem::path& path);

/// Problems found when rechecking a report: per-type/overall mismatch or
/// histograms that do not sum to one. Empty means consistent.
std::vector<std::string> check_report(const EvalReport& report, double tol = 1e-9);

/// Writes table.csv, histograms.csv and attention_traces.json for two reports
/// of the same split, recomputed from their stored predictions.
void write_comparison(const std::filesystem::path& baseline_report, const std::filesystem::path& vgqe_report,
                      const std::filesystem::path& out_dir);

}  // namespace vgqe
