// Acceptance run: one PASS/FAIL line per criterion.
// Usage: vgqe_acceptance <work dir> <experiment config json> [criterion...]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "vgqe/dataset.hpp"
#include "vgqe/eval.hpp"
#include "vgqe/gradient_suite.hpp"
#include "vgqe/model.hpp"
#include "vgqe/train.hpp"

namespace fs = std::filesystem;
using namespace vgqe;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor gaussian(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : t.data()) v = g(rng);
  return t;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_module;
  for (const auto& r : run_gradient_suite()) {
    if (r.report.max_rel_error >= worst) {
      worst = r.report.max_rel_error;
      worst_module = r.module;
    }
  }
  const double t = seconds_since(start);
  verdict(worst < 1e-4 && t < 60.0, "gradient_suite",
          fmt("max relative error %.3e (%s), %.1fs; need < 1e-4 and < 60s", worst, worst_module.c_str(), t));
}

void algebraic_invariants() {
  constexpr int seeds = 20;
  double softmax_err = 0.0, equiv_err = 0.0, bound_violation = 0.0, homog_err = 0.0, additive_err = 0.0,
         pool_err = 0.0;
  for (int s = 0; s < seeds; ++s) {
    auto rng = make_rng(1000 + s, {0xa1});

    {
      ad::Tape tape;
      auto x = tape.constant(gaussian({5, 7}, rng));
      auto p = ad::softmax(ad::scale(x, 10.0)).value();
      for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 7; ++c) sum += p.at(r, c);
        softmax_err = std::max(softmax_err, std::abs(sum - 1.0));
      }
    }

    {
      VgwConfig vc;
      vc.fusion = BlockFusionConfig{0, 0, 32, 32, 0, 4, 3, true, false};
      auto params = vgw_params_init(vc, rng());
      const std::size_t k = 6;
      auto labels = gaussian({k, vc.word_dim}, rng);
      auto visual = gaussian({k, vc.visual_dim}, rng);
      auto word = gaussian({1, vc.word_dim}, rng);
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      ad::Tape tape;
      auto vars = bind(tape, params);
      auto a = vgw_attention(tape.constant(labels), tape.constant(visual), tape.constant(word), k, vars);
      auto b = vgw_attention(ad::gather_rows(tape.constant(labels), perm), ad::gather_rows(tape.constant(visual), perm),
                             tape.constant(word), k, vars);
      for (std::size_t i = 0; i < k; ++i)
        equiv_err = std::max(equiv_err, std::abs(b.alpha.value()[i] - a.alpha.value()[perm[i]]));
      equiv_err = std::max(equiv_err, max_abs_diff(a.visual.value().data(), b.visual.value().data()));
      for (std::size_t j = 0; j < vc.visual_dim; ++j) {
        double lo = visual.at(0, j), hi = lo;
        for (std::size_t i = 1; i < k; ++i) {
          lo = std::min(lo, visual.at(i, j));
          hi = std::max(hi, visual.at(i, j));
        }
        const double f = a.visual.value()[j];
        bound_violation = std::max({bound_violation, lo - f - 1e-12, f - hi - 1e-12});
      }
    }

    {
      auto fp = block_params_init(BlockFusionConfig{9, 7, 16, 12, 5, 4, 3, false, false}, rng());
      auto x1 = gaussian({3, 9}, rng), x2 = gaussian({3, 9}, rng), y = gaussian({3, 7}, rng);
      const double a = std::normal_distribution<double>(0.0, 2.0)(rng);
      ad::Tape tape;
      auto fx1 = block_fuse(tape.constant(x1), tape.constant(y), fp).value();
      auto fx2 = block_fuse(tape.constant(x2), tape.constant(y), fp).value();
      auto fax = block_fuse(ad::scale(tape.constant(x1), a), tape.constant(y), fp).value();
      auto fsum = block_fuse(ad::add(tape.constant(x1), tape.constant(x2)), tape.constant(y), fp).value();
      auto fya = block_fuse(tape.constant(x1), ad::scale(tape.constant(y), a), fp).value();
      for (std::size_t i = 0; i < fx1.size(); ++i) {
        const double scale = std::max(1.0, std::abs(fx1[i]) + std::abs(fx2[i]));
        homog_err = std::max({homog_err, std::abs(fax[i] - a * fx1[i]) / scale, std::abs(fya[i] - a * fx1[i]) / scale});
        additive_err = std::max(additive_err, std::abs(fsum[i] - fx1[i] - fx2[i]) / scale);
      }
    }

    for (auto variant : {Variant::baseline, Variant::vgqe}) {
      ModelConfig mc;
      mc.variant = variant;
      mc.answers = 11;
      mc.seed = rng();
      auto params = model_init(mc, make_embedding_table(12, mc.word_dim, rng()));
      const std::size_t k = 6;
      SceneFeatures scene{gaussian({k, mc.visual_dim}, rng), gaussian({k, mc.word_dim}, rng)};
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      SceneFeatures permuted{Tensor({k, mc.visual_dim}), Tensor({k, mc.word_dim})};
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < mc.visual_dim; ++j) permuted.visual.at(i, j) = scene.visual.at(perm[i], j);
        for (std::size_t j = 0; j < mc.word_dim; ++j) permuted.labels.at(i, j) = scene.labels.at(perm[i], j);
      }
      QuestionTokens q{{0, 3, 5, 9}, 0};
      ad::Tape tape;
      auto a = forward(tape, params, scene, q).value();
      auto b = forward(tape, params, permuted, q).value();
      pool_err = std::max(pool_err, max_abs_diff(a.data(), b.data()));
    }
  }
  const bool pass = softmax_err < 1e-6 && equiv_err < 1e-9 && bound_violation <= 0.0 && homog_err < 1e-9 &&
                    additive_err < 1e-9 && pool_err < 1e-9;
  verdict(pass, "algebraic_invariants",
          fmt("%d seeds; softmax %.1e (<1e-6), attention permutation %.1e (<1e-9), convex bound excess %.1e (<=0), "
              "fusion homogeneity %.1e / additivity %.1e (<1e-9), max-pool permutation %.1e (<1e-9)",
              seeds, softmax_err, equiv_err, bound_violation, homog_err, additive_err, pool_err));
}

void encoder_contrast(const Dataset& data) {
  constexpr int samples = 20;
  int baseline_identical = 0, vgqe_differ = 0;
  double min_vgqe_diff = INFINITY;
  auto rng = make_rng(77, {0xec});
  std::uniform_int_distribution<std::size_t> pick(0, data.test.size() - 1);
  for (int s = 0; s < samples; ++s) {
    const auto& qa = data.test.examples[pick(rng)];
    const auto& other = data.test.examples[pick(rng)];
    const QuestionTokens q{qa.tokens, qa.type};
    const auto scene_a = scene_features(qa);
    const auto scene_b = scene_features(other);

    ModelConfig mc;
    mc.answers = data.vocab.answers.size();
    mc.seed = rng();
    mc.variant = Variant::baseline;
    auto base = model_init(mc, data.word_vectors);
    mc.variant = Variant::vgqe;
    auto vg = model_init(mc, data.word_vectors);

    ad::Tape tape;
    auto enc = [&](ModelParams& p, const SceneFeatures& scene) {
      QuestionBatch batch;
      batch.tokens = {q.ids};
      return forward(tape, p, stack_scenes(scene), batch).question.value();
    };
    const auto ba = enc(base, scene_a), bb = enc(base, scene_b);
    if (ba == bb) ++baseline_identical;
    const double d = max_abs_diff(enc(vg, scene_a).data(), enc(vg, scene_b).data());
    min_vgqe_diff = std::min(min_vgqe_diff, d);
    if (d > 1e-6) ++vgqe_differ;
  }
  verdict(baseline_identical == samples && vgqe_differ == samples, "encoder_contrast",
          fmt("baseline bit-identical across scenes %d/%d; vgqe L-inf difference > 1e-6 in %d/%d (min %.3e)",
              baseline_identical, samples, vgqe_differ, samples, min_vgqe_diff));
}

void overfit(const Dataset& data) {
  DatasetSplit subset{"overfit", {data.train.examples.begin(), data.train.examples.begin() + 32}};
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 32;
  tc.schedule.base_lr = 1e-2;
  tc.schedule.warm_factor = 0.0;
  tc.schedule.warm_end_epoch = tc.epochs;
  tc.seed = 3;
  std::string detail;
  bool pass = true;
  for (auto variant : {Variant::baseline, Variant::vgqe}) {
    ModelConfig mc;
    mc.variant = variant;
    mc.answers = data.vocab.answers.size();
    mc.dropout = 0.0;
    mc.seed = 3;
    auto params = model_init(mc, data.word_vectors);
    const auto start = Clock::now();
    const auto log = train(params, subset, tc);
    const double t = seconds_since(start);
    double best = INFINITY;
    std::size_t reached = 0;
    for (const auto& e : log) {
      if (e.loss < 0.05 && reached == 0) reached = e.epoch;
      best = std::min(best, e.loss);
    }
    pass = pass && reached > 0 && t < 120.0;
    detail += fmt("%s final loss %.4f, below 0.05 at epoch %zu, %.1fs; ", variant_name(variant).c_str(),
                  log.back().loss, reached, t);
  }
  verdict(pass, "overfit_sanity", detail + "need loss < 0.05 within 200 epochs and < 120s");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ExperimentOutput {
  fs::path baseline_report, vgqe_report;
};

ExperimentOutput bias_shift(const Dataset& data, const json& experiment, const fs::path& work) {
  const auto start = Clock::now();
  const auto tc_base = experiment.at("train").get<TrainConfig>();
  const auto seeds = experiment.at("seeds").get<std::vector<std::uint64_t>>();
  const auto context = report_context(data);

  std::vector<double> ood[2], iid[2];
  ExperimentOutput out;
  for (auto seed : seeds) {
    for (int v = 0; v < 2; ++v) {
      const auto variant = v == 0 ? Variant::baseline : Variant::vgqe;
      ModelConfig mc;
      mc.variant = variant;
      mc.visual_dim = data.config.visual_dim;
      mc.word_dim = data.config.word_dim;
      mc.answers = data.vocab.answers.size();
      mc.seed = seed;
      auto tc = tc_base;
      tc.seed = seed;
      auto params = model_init(mc, data.word_vectors);
      train(params, data.train, tc);
      EvalOptions eo;
      eo.traces = 12;
      const auto test = evaluate_split(params, data, "test", eo);
      const auto test_iid = evaluate_split(params, data, "test_iid", eo);
      ood[v].push_back(test.overall);
      iid[v].push_back(test_iid.overall);
      std::printf("  seed %llu %-8s ood %.4f iid %.4f gap %.4f (%.0fs elapsed)\n",
                  static_cast<unsigned long long>(seed), variant_name(variant).c_str(), test.overall,
                  test_iid.overall, bias_gap(test_iid, test), seconds_since(start));
      std::fflush(stdout);
      if (seed == seeds.front()) {
        const auto path = work / ("bias_shift_" + variant_name(variant) + "_test.json");
        write_report(test, context, path);
        (v == 0 ? out.baseline_report : out.vgqe_report) = path;
      }
    }
  }
  const double t = seconds_since(start);

  // Constant predictor of each type's train-majority answer, scored on the iid split.
  std::vector<std::size_t> majority;
  for (const auto& ex : data.test_iid.examples) {
    const auto& h = context.train_histograms[ex.type];
    majority.push_back(static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin()));
  }
  const double floor = evaluate_predictions(data.test_iid, majority, context).overall;

  const double b_ood = median(ood[0]), v_ood = median(ood[1]), b_iid = median(iid[0]), v_iid = median(iid[1]);
  const bool pass = v_ood - b_ood >= 0.08 && v_iid >= b_iid - 0.02 && b_iid > floor && v_iid > floor && t < 1800.0;
  verdict(pass, "bias_shift",
          fmt("%zu seeds; median ood baseline %.4f vgqe %.4f (diff %+.4f, need >= +0.08); median iid baseline %.4f "
              "vgqe %.4f (diff %+.4f, need >= -0.02); majority floor %.4f; %.0fs (need < 1800s)",
              seeds.size(), b_ood, v_ood, v_ood - b_ood, b_iid, v_iid, v_iid - b_iid, floor, t));
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
      if (c == '"') {
        quoted = !quoted;
      } else if (c == ',' && !quoted) {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void reporting_fidelity(const ExperimentOutput& exp, const fs::path& work) {
  const auto out = work / "report";
  const auto hash_b = cli::sha256_file(exp.baseline_report), hash_v = cli::sha256_file(exp.vgqe_report);
  const int status = cli::run({"vgqe", "report", "--baseline", exp.baseline_report.string(), "--vgqe",
                               exp.vgqe_report.string(), "--out", out.string()});
  const bool untouched =
      cli::sha256_file(exp.baseline_report) == hash_b && cli::sha256_file(exp.vgqe_report) == hash_v;

  double table_err = 0.0, hist_err = 0.0;
  std::size_t types = 0;
  const auto table = read_csv(out / "table.csv");
  double weighted[2] = {0, 0}, overall[2] = {0, 0};
  std::size_t n = 0;
  for (const auto& row : table) {
    if (row.at(0) == "overall") {
      overall[0] = std::stod(row.at(2));
      overall[1] = std::stod(row.at(3));
      continue;
    }
    const auto count = std::stoul(row.at(1));
    n += count;
    ++types;
    for (int c = 0; c < 2; ++c) weighted[c] += std::stod(row.at(2 + c)) * static_cast<double>(count);
  }
  for (int c = 0; c < 2; ++c) table_err = std::max(table_err, std::abs(weighted[c] / static_cast<double>(n) - overall[c]));

  std::map<std::string, std::array<double, 4>> sums;
  for (const auto& row : read_csv(out / "histograms.csv")) {
    auto& s = sums[row.at(0)];
    for (int c = 0; c < 4; ++c) s[c] += std::stod(row.at(2 + c));
  }
  for (const auto& [type, s] : sums)
    for (double v : s) hist_err = std::max(hist_err, std::abs(v - 1.0));

  const bool traces = fs::exists(out / "attention_traces.json") &&
                      !json::parse(std::ifstream(out / "attention_traces.json")).at("traces").empty();
  const bool pass = status == 0 && untouched && types > 0 && sums.size() == types && table_err < 1e-9 &&
                    hist_err < 1e-9 && traces;
  verdict(pass, "reporting_fidelity",
          fmt("report exit %d, inputs unchanged %s, %zu types; |type-weighted - overall| %.2e (<1e-9); max "
              "|histogram sum - 1| %.2e (<1e-9); attention traces %s",
              status, untouched ? "yes" : "no", types, table_err, hist_err, traces ? "present" : "missing"));
}

void determinism(const fs::path& work) {
  const auto root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto cfg = root / "data_config.json";
  std::ofstream(cfg) << json{{"data", {{"n_train", 300}, {"n_test", 120}, {"seed", 11}}}}.dump();

  bool ok = true;
  std::vector<std::string> mismatched;
  const auto compare = [&](const fs::path& a, const fs::path& b) {
    if (!fs::exists(a) || read_bytes(a) != read_bytes(b)) {
      ok = false;
      mismatched.push_back(a.filename().string());
    }
  };
  for (const char* run : {"a", "b"}) {
    const auto dir = root / run;
    int st = cli::run({"vgqe", "gen-data", "--config", cfg.string(), "--out", (dir / "data").string()});
    for (const char* variant : {"baseline", "vgqe"}) {
      st |= cli::run({"vgqe", "train", "--data", (dir / "data").string(), "--variant", variant, "--seed", "5",
                      "--out", (dir / variant).string(), "--epochs", "2", "--quiet"});
      st |= cli::run({"vgqe", "eval", "--checkpoint", (dir / variant / "checkpoint.json").string(), "--data",
                      (dir / "data").string(), "--split", "test", "--report", (dir / variant / "test.json").string()});
    }
    st |= cli::run({"vgqe", "report", "--baseline", (dir / "baseline" / "test.json").string(), "--vgqe",
                    (dir / "vgqe" / "test.json").string(), "--out", (dir / "report").string()});
    if (st != 0) ok = false;
  }
  const auto a = root / "a", b = root / "b";
  for (const char* f : {"train.jsonl", "test.jsonl", "test_iid.jsonl", "manifest.json"})
    compare(a / "data" / f, b / "data" / f);
  for (const char* variant : {"baseline", "vgqe"})
    for (const char* f : {"checkpoint.json", "checkpoint.bin", "test.json", "test.csv"})
      compare(a / variant / f, b / variant / f);
  for (const char* f : {"table.csv", "histograms.csv", "attention_traces.json"}) compare(a / "report" / f, b / "report" / f);
  std::string detail = "two identical gen-data/train/eval/report runs";
  detail += ok ? " are byte-identical" : ", differing: ";
  for (const auto& m : mismatched) detail += m + " ";
  verdict(ok, "determinism", detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: %s <work dir> <experiment config> [criterion...]\n", argv[0]);
    return 2;
  }
  const fs::path work = argv[1];
  fs::create_directories(work);
  json experiment;
  {
    std::ifstream in(argv[2]);
    if (!in) {
      std::fprintf(stderr, "cannot open %s\n", argv[2]);
      return 2;
    }
    experiment = json::parse(in);
  }
  const auto data = generate_dataset(experiment.at("data").get<DatasetConfig>());

  const std::vector<std::string> only(argv + 3, argv + argc);
  const auto selected = [&](const char* name) {
    return only.empty() || std::find(only.begin(), only.end(), name) != only.end();
  };
  if (selected("gradient_suite")) gradient_suite();
  if (selected("algebraic_invariants")) algebraic_invariants();
  if (selected("encoder_contrast")) encoder_contrast(data);
  if (selected("overfit_sanity")) overfit(data);
  if (selected("bias_shift") || selected("reporting_fidelity")) {
    const auto exp = bias_shift(data, experiment, work);
    reporting_fidelity(exp, work);
  }
  if (selected("determinism")) determinism(work);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
