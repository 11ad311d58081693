#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using vgqe::cli::run;

namespace {

struct Captured {
  int status;
  std::string out, err;
};

Captured capture(std::vector<std::string> args) {
  args.insert(args.begin(), "vgqe");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  int status = 0;
  try {
    status = run(args);
  } catch (...) {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    throw;
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {status, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vgqe_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("sha256 of a known string") {
  const auto dir = temp_dir("hash");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  CHECK(vgqe::cli::sha256_file(dir / "abc.txt") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK_THROWS(vgqe::cli::sha256_file(dir / "missing"));
}

TEST_CASE("argument errors exit nonzero") {
  CHECK(capture({}).status != 0);
  CHECK(capture({"frobnicate"}).status != 0);
  CHECK(capture({"gen-data", "--out", "/tmp/x", "--bogus", "1"}).status != 0);
  CHECK(capture({"train", "--data", "d", "--variant", "other", "--seed", "1", "--out", "o"}).status != 0);
  CHECK(capture({"eval", "--checkpoint", "c.json", "--data", "d", "--split", "dev", "--report", "r.json"}).status != 0);
}

TEST_CASE("a missing checkpoint is named in the error") {
  const auto dir = temp_dir("missing");
  const auto ckpt = (dir / "nowhere" / "checkpoint.json").string();
  auto r = capture({"eval", "--checkpoint", ckpt, "--data", dir.string(), "--split", "test", "--report",
                    (dir / "r.json").string()});
  CHECK(r.status == 1);
  CHECK(r.err.find("checkpoint not found: " + ckpt) != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "r.json"));
}

TEST_CASE("gradcheck command") {
  auto ok = capture({"gradcheck", "--module", "tensor_ops", "--seed", "2"});
  CHECK(ok.status == 0);
  CHECK(capture({"gradcheck", "--module", "no_such_module"}).status != 0);
}

TEST_CASE("gen-data, train, eval and report end to end") {
  const auto dir = temp_dir("pipeline");
  std::ofstream(dir / "data.json") << R"({"data": {"n_train": 96, "n_test": 48, "seed": 3}})";
  auto gen = capture({"gen-data", "--config", (dir / "data.json").string(), "--out", (dir / "data").string(),
                      "--rho-train", "0.7"});
  REQUIRE(gen.status == 0);
  for (const char* f : {"train.jsonl", "test.jsonl", "test_iid.jsonl", "manifest.json", "config.json", "run.json"})
    CHECK(fs::exists(dir / "data" / f));
  const auto written = read_json(dir / "data" / "config.json").at("data");
  CHECK(written.at("rho_train") == 0.7);
  CHECK(written.at("n_train") == 96);

  for (const std::string variant : {"baseline", "vgqe"}) {
    const auto run_dir = dir / variant;
    auto tr = capture({"train", "--data", (dir / "data").string(), "--variant", variant, "--seed", "1", "--out",
                       run_dir.string(), "--epochs", "2", "--batch-size", "32", "--quiet"});
    REQUIRE(tr.status == 0);
    for (const char* f : {"checkpoint.json", "checkpoint.bin", "train_log.csv", "config.json", "run.json"})
      CHECK(fs::exists(run_dir / f));

    auto ev = capture({"eval", "--checkpoint", (run_dir / "checkpoint.json").string(), "--data",
                       (dir / "data").string(), "--split", "test", "--report", (run_dir / "report.json").string(),
                       "--traces", "2"});
    REQUIRE(ev.status == 0);
    CHECK(fs::exists(run_dir / "report.csv"));
    auto rep = read_json(run_dir / "report.json");
    CHECK(rep.at("variant") == variant);
    CHECK(rep.at("split") == "test");
  }

  auto cmp = capture({"report", "--baseline", (dir / "baseline" / "report.json").string(), "--vgqe",
                      (dir / "vgqe" / "report.json").string(), "--out", (dir / "cmp").string()});
  REQUIRE(cmp.status == 0);
  for (const char* f : {"table.csv", "histograms.csv", "attention_traces.json", "run.json"})
    CHECK(fs::exists(dir / "cmp" / f));
  CHECK(read_json(dir / "cmp" / "attention_traces.json").size() == 2);

  // Reports from different splits are refused.
  auto ev_iid = capture({"eval", "--checkpoint", (dir / "vgqe" / "checkpoint.json").string(), "--data",
                         (dir / "data").string(), "--split", "test_iid", "--report", (dir / "iid.json").string()});
  REQUIRE(ev_iid.status == 0);
  auto bad = capture({"report", "--baseline", (dir / "baseline" / "report.json").string(), "--vgqe",
                      (dir / "iid.json").string(), "--out", (dir / "cmp2").string()});
  CHECK(bad.status != 0);
  CHECK(bad.err.find("different splits") != std::string::npos);
}
