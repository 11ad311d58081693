#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "vgqe/dataset.hpp"
#include "vgqe/eval.hpp"
#include "vgqe/gradient_suite.hpp"
#include "vgqe/model.hpp"
#include "vgqe/train.hpp"

namespace vgqe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw std::runtime_error(what + " not found: " + path.string());
}

json hashes(const fs::path& dir, std::initializer_list<const char*> files) {
  json h = json::object();
  for (const auto* f : files) h[f] = sha256_file(dir / f);
  return h;
}

struct GenDataArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_train, n_test;
  std::optional<double> rho_train, rho_test;
};

int gen_data(const GenDataArgs& a) {
  DatasetConfig cfg;
  if (!a.config.empty()) {
    auto j = read_json(a.config);
    cfg = (j.contains("data") ? j.at("data") : j).get<DatasetConfig>();
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.n_train) cfg.n_train = *a.n_train;
  if (a.n_test) cfg.n_test = *a.n_test;
  if (a.rho_train) cfg.rho_train = *a.rho_train;
  if (a.rho_test) cfg.rho_test = *a.rho_test;

  const auto data = generate_dataset(cfg);
  const fs::path out = a.out;
  save_dataset(data, out);
  write_json(out / "config.json", json{{"data", cfg}});
  write_json(out / "run.json", json{{"command", "gen-data"},
                                    {"config", {{"data", cfg}}},
                                    {"seeds", {{"data", cfg.seed}}},
                                    {"artifacts", hashes(out, {"train.jsonl", "test.jsonl", "test_iid.jsonl",
                                                               "manifest.json", "config.json"})}});
  std::cout << "wrote " << data.train.size() << " train, " << data.test.size() << " test and " << data.test_iid.size()
            << " test_iid examples to " << out.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, variant, out, config;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, dropout;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  require_file(fs::path(a.data) / "manifest.json", "dataset manifest");
  ModelConfig model;
  TrainConfig tc;
  if (!a.config.empty()) {
    const auto j = read_json(a.config);
    if (j.contains("model")) model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) tc = j.at("train").get<TrainConfig>();
  }
  const auto data = load_dataset(a.data);
  model.variant = parse_variant(a.variant);
  model.visual_dim = data.config.visual_dim;
  model.word_dim = data.config.word_dim;
  model.answers = data.vocab.answers.size();
  model.seed = a.seed;
  tc.seed = a.seed;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.schedule.base_lr = *a.lr;
  if (a.dropout) model.dropout = *a.dropout;

  auto params = model_init(model, data.word_vectors);
  const fs::path out = a.out;
  fs::create_directories(out);
  const json merged{{"model", params.config}, {"train", tc}};
  write_json(out / "config.json", merged);

  const auto log = train(params, data.train, tc, [&](const EpochLog& e) {
    if (!a.quiet) {
      std::printf("epoch %zu  lr %.3g  loss %.4f  acc %.4f  %.1fs\n", e.epoch, e.lr, e.loss, e.accuracy, e.seconds);
      std::fflush(stdout);
    }
  });
  save_checkpoint(out / "checkpoint.json", params, json{{"train", tc}});
  write_train_log(log, out / "train_log.csv");
  write_json(out / "run.json",
             json{{"command", "train"},
                  {"config", merged},
                  {"seeds", {{"model", model.seed}, {"train", tc.seed}, {"data", data.config.seed}}},
                  {"dataset", {{"path", a.data}, {"manifest_sha256", sha256_file(fs::path(a.data) / "manifest.json")},
                               {"train_sha256", sha256_file(fs::path(a.data) / "train.jsonl")}}},
                  {"parameters", count_parameters(params)},
                  {"final", {{"loss", log.back().loss}, {"accuracy", log.back().accuracy}}},
                  {"artifacts", hashes(out, {"checkpoint.json", "checkpoint.bin", "config.json"})}});
  std::cout << "saved " << (out / "checkpoint.json").string() << " (" << count_parameters(params)
            << " trainable parameters)\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split, report;
  std::size_t batch_size = 256;
  std::size_t traces = 12;
};

int eval_cmd(const EvalArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  require_file(fs::path(a.data) / "manifest.json", "dataset manifest");
  auto params = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  EvalOptions opts;
  opts.batch_size = a.batch_size;
  opts.traces = a.traces;
  const auto report = evaluate_split(params, data, a.split, opts);
  const auto context = report_context(data);
  const auto problems = check_report(report);
  write_report(report, context, a.report);

  fs::path csv = a.report;
  csv.replace_extension(".csv");
  std::ofstream table(csv, std::ios::trunc);
  table.precision(17);
  table << "type,n,accuracy\n";
  for (const auto& t : report.types) table << '"' << t.name << "\"," << t.count << ',' << t.accuracy << '\n';
  table << "overall," << report.count << ',' << report.overall << '\n';

  std::cout << report.variant << " on " << report.split << ": accuracy " << report.overall << " over "
            << report.count << " examples\n";
  for (const auto& p : problems) std::cerr << "inconsistent report: " << p << '\n';
  return problems.empty() ? 0 : 1;
}

int gradcheck_cmd(const std::string& module, std::uint64_t seed) {
  constexpr double tolerance = 1e-4;
  bool ok = true;
  for (const auto& r : run_gradient_suite(module, seed)) {
    const bool pass = r.report.max_rel_error < tolerance;
    ok = ok && pass;
    std::printf("%-16s max_rel_error %.3e  coords %6zu  %6.2fs  %s\n", r.module.c_str(), r.report.max_rel_error,
                r.report.coordinates, r.seconds, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int report_cmd(const std::string& baseline, const std::string& vgqe, const std::string& out) {
  require_file(baseline, "baseline report");
  require_file(vgqe, "vgqe report");
  const auto before = std::make_pair(sha256_file(baseline), sha256_file(vgqe));
  write_comparison(baseline, vgqe, out);
  if (std::make_pair(sha256_file(baseline), sha256_file(vgqe)) != before) {
    throw std::runtime_error("input reports changed while reporting");
  }
  const fs::path dir = out;
  write_json(dir / "run.json", json{{"command", "report"},
                                    {"inputs", {{"baseline", {{"path", baseline}, {"sha256", before.first}}},
                                                {"vgqe", {{"path", vgqe}, {"sha256", before.second}}}}},
                                    {"artifacts", hashes(dir, {"table.csv", "histograms.csv",
                                                               "attention_traces.json"})}});
  std::cout << "wrote table.csv, histograms.csv and attention_traces.json to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Visually-grounded question encoder: data, training, evaluation and reports"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a changing-priors dataset");
  gen->add_option("--config", gd.config, "JSON dataset config")->check(CLI::ExistingFile);
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--seed", gd.seed, "Override the dataset seed");
  gen->add_option("--n-train", gd.n_train, "Override the train split size");
  gen->add_option("--n-test", gd.n_test, "Override the test split sizes");
  gen->add_option("--rho-train", gd.rho_train, "Override the train prior skew");
  gen->add_option("--rho-test", gd.rho_test, "Override the test prior skew");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train one model variant");
  trn->add_option("--data", tr.data, "Dataset directory")->required();
  trn->add_option("--variant", tr.variant, "baseline or vgqe")
      ->required()
      ->check(CLI::IsMember({"baseline", "vgqe"}));
  trn->add_option("--seed", tr.seed, "Model and training seed")->required();
  trn->add_option("--out", tr.out, "Run directory")->required();
  trn->add_option("--config", tr.config, "JSON with optional model/train sections")->check(CLI::ExistingFile);
  trn->add_option("--epochs", tr.epochs, "Override the epoch count");
  trn->add_option("--batch-size", tr.batch_size, "Override the batch size");
  trn->add_option("--lr", tr.lr, "Override the base learning rate");
  trn->add_option("--dropout", tr.dropout, "Override the dropout rate");
  trn->add_flag("--quiet", tr.quiet, "Suppress per-epoch output");

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  evl->add_option("--checkpoint", ev.checkpoint, "Checkpoint manifest (.json)")->required();
  evl->add_option("--data", ev.data, "Dataset directory")->required();
  evl->add_option("--split", ev.split, "train, test or test_iid")
      ->required()
      ->check(CLI::IsMember({"train", "test", "test_iid"}));
  evl->add_option("--report", ev.report, "Report JSON path")->required();
  evl->add_option("--batch-size", ev.batch_size, "Evaluation batch size");
  evl->add_option("--traces", ev.traces, "Attention traces to sample (vgqe)");

  std::string module;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--module", module, "Check only this module");
  gc->add_option("--seed", gc_seed, "Seed for the random check points");

  std::string base_report, vgqe_report, report_out;
  auto* rep = app.add_subcommand("report", "Compare two evaluation reports");
  rep->add_option("--baseline", base_report, "Baseline report JSON")->required();
  rep->add_option("--vgqe", vgqe_report, "VGQE report JSON")->required();
  rep->add_option("--out", report_out, "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return gen_data(gd);
    if (*trn) return train_cmd(tr);
    if (*evl) return eval_cmd(ev);
    if (*gc) return gradcheck_cmd(module, gc_seed);
    if (*rep) return report_cmd(base_report, vgqe_report, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace vgqe::cli
