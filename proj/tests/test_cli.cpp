#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <regex>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "support.hpp"

using gallop::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Run run(const TempDir& tmp, const std::string& args, const std::string& env = "") {
  const auto out = tmp / "stdout.txt", err = tmp / "stderr.txt";
  const std::string cmd = "cd '" + tmp.path().string() + "' && " + env + (env.empty() ? "" : " ") + "'" +
                          GALLOP_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

const char* kSeparable = R"({"noise_sigma": 0.0})";
const char* kTwoClass = R"({"num_classes": 2, "shots_per_class": 8, "d": 8, "L": 8, "noise_sigma": 0.1})";

}  // namespace

TEST_CASE("usage errors exit 1") {
  TempDir tmp("cli");
  auto r = run(tmp, "");
  CHECK(r.code == 1);
  CHECK((r.out + r.err).find("Usage") != std::string::npos);
  CHECK(run(tmp, "train --data x --out y --bogus 3").code == 1);
  CHECK(run(tmp, "frobnicate").code == 1);
  CHECK(run(tmp, "eval --ckpt only").code == 1);
  CHECK(run(tmp, "--help").code == 0);
}

TEST_CASE("synth, train, eval on separable data prints top1 1.0000") {
  TempDir tmp("cli");
  write(tmp / "spec.json", kSeparable);
  write(tmp / "cfg.json", R"({"epochs": 30})");
  auto r = run(tmp, "synth --spec spec.json --out-dir data");
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(tmp / "data" / "train.glf"));
  CHECK(std::filesystem::exists(tmp / "data" / "id.glf"));
  CHECK(std::filesystem::exists(tmp / "data" / "ood.glf"));

  r = run(tmp, "train --config cfg.json --data data --out m.ckpt");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("config {", 0) == 0);  // resolved config comes first
  CHECK(r.out.find("\"epochs\": 30") != std::string::npos);
  const auto trace = slurp(tmp / "m.ckpt.trace.jsonl");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 30);

  r = run(tmp, "eval --ckpt m.ckpt --data data/train.glf");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("top1 1.0000\n") != std::string::npos);

  r = run(tmp, "ood --ckpt m.ckpt --id data/id.glf --ood data/ood.glf --out-dir scores");
  REQUIRE(r.code == 0);
  CHECK(std::regex_search(r.out, std::regex("glmcm fpr95 [0-9.]+ auroc [0-9.]+")));
  CHECK(slurp(tmp / "scores" / "id_scores.csv").rfind("record_index,label,predicted", 0) == 0);

  r = run(tmp, "inspect --ckpt m.ckpt");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"version\"") != std::string::npos);
}

TEST_CASE("gradcheck on a two-class set passes") {
  TempDir tmp("cli");
  write(tmp / "spec.json", kTwoClass);
  REQUIRE(run(tmp, "synth --spec spec.json --out-dir data").code == 0);
  const auto r = run(tmp, "gradcheck --data data/train.glf");
  CHECK(r.code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(r.out, m, std::regex("max_rel_error ([0-9.e+-]+) PASS")));
  CHECK(std::stod(m[1]) < 1e-4);
}

TEST_CASE("identical runs write identical bytes") {
  TempDir tmp("cli");
  write(tmp / "spec.json", kTwoClass);
  write(tmp / "cfg.json", R"({"epochs": 5, "batch_size": 4})");
  REQUIRE(run(tmp, "synth --spec spec.json --out-dir data").code == 0);
  REQUIRE(run(tmp, "train --config cfg.json --data data --out a.ckpt").code == 0);
  REQUIRE(run(tmp, "train --config cfg.json --data data --out b.ckpt --threads 3").code == 0);
  CHECK(slurp(tmp / "a.ckpt") == slurp(tmp / "b.ckpt"));
  CHECK(slurp(tmp / "a.ckpt.trace.jsonl") == slurp(tmp / "b.ckpt.trace.jsonl"));
  REQUIRE(run(tmp, "ood --ckpt a.ckpt --id data --ood data --out-dir s1").code == 0);
  REQUIRE(run(tmp, "ood --ckpt b.ckpt --id data --ood data --out-dir s2").code == 0);
  CHECK(slurp(tmp / "s1" / "ood_scores.csv") == slurp(tmp / "s2" / "ood_scores.csv"));

  SUBCASE("GALLOP_SEED overrides the config seed") {
    REQUIRE(run(tmp, "train --config cfg.json --data data --out c.ckpt", "GALLOP_SEED=5").code == 0);
    CHECK(slurp(tmp / "c.ckpt") != slurp(tmp / "a.ckpt"));
    const auto r = run(tmp, "train --config cfg.json --data data --out d.ckpt", "GALLOP_SEED=abc");
    CHECK(r.code == 2);
  }
}

TEST_CASE("data and config problems exit 2") {
  TempDir tmp("cli");
  write(tmp / "junk.glf", "not a feature file");
  auto r = run(tmp, "train --data junk.glf --out m.ckpt");
  CHECK(r.code == 2);
  CHECK(r.err.find("format error") != std::string::npos);
  write(tmp / "bad.json", R"({"epochz": 1})");
  CHECK(run(tmp, "train --config bad.json --data junk.glf --out m.ckpt").code == 2);
  CHECK(run(tmp, "eval --ckpt missing.ckpt --data junk.glf").code == 2);
}
