// gallop command-line driver. Talks to the engine only through the C API.
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gallop/gallop.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitGradcheck = 3;

struct CliError {
  int code;
  std::string message;
};

void check(gallop_status status, const std::string& context) {
  if (status == GALLOP_OK) return;
  throw CliError{kExitData, context + ": " + gallop_status_name(status) + ": " + gallop_last_error()};
}

struct DatasetDeleter {
  void operator()(gallop_dataset* p) const { gallop_dataset_free(p); }
};
struct ConfigDeleter {
  void operator()(gallop_config* p) const { gallop_config_free(p); }
};
struct ModelDeleter {
  void operator()(gallop_model* p) const { gallop_model_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { gallop_string_free(p); }
};
using DatasetPtr = std::unique_ptr<gallop_dataset, DatasetDeleter>;
using ConfigPtr = std::unique_ptr<gallop_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<gallop_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kExitData, "cannot open " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{kExitData, "cannot write " + path.string()};
  out << text;
  if (!out.flush()) throw CliError{kExitData, "write failed: " + path.string()};
}

// A directory argument picks the split file that `synth` wrote there.
std::string resolve_data(const std::string& path, const char* split) {
  if (fs::is_directory(path)) return (fs::path(path) / (std::string(split) + ".glf")).string();
  return path;
}

DatasetPtr load_dataset(const std::string& path) {
  gallop_dataset* ds = nullptr;
  check(gallop_dataset_read(path.c_str(), &ds), path);
  return DatasetPtr(ds);
}

ModelPtr load_model(const std::string& path) {
  gallop_model* m = nullptr;
  check(gallop_model_load(path.c_str(), &m), path);
  return ModelPtr(m);
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("GALLOP_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || *end != '\0' || raw[0] == '-')
    throw CliError{kExitData, std::string("GALLOP_SEED is not an unsigned integer: ") + raw};
  return static_cast<std::uint64_t>(v);
}

ConfigPtr resolve_config(const std::string& path, unsigned threads) {
  gallop_config* cfg = nullptr;
  if (path.empty()) {
    check(gallop_config_parse(nullptr, &cfg), "default config");
  } else {
    check(gallop_config_load(path.c_str(), &cfg), path);
  }
  ConfigPtr out(cfg);
  if (auto seed = env_seed()) check(gallop_config_set_seed(out.get(), *seed), "GALLOP_SEED");
  if (threads > 0) check(gallop_config_set_threads(out.get(), threads), "--threads");

  char* json = nullptr;
  check(gallop_config_to_json(out.get(), &json), "config");
  StringPtr text(json);
  std::cout << "config " << text.get() << "\n";
  return out;
}

void print_header(const std::string& ckpt) {
  char* json = nullptr;
  check(gallop_checkpoint_header(ckpt.c_str(), &json), ckpt);
  StringPtr text(json);
  std::cout << "checkpoint " << text.get() << "\n";
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const std::string spec = spec_path.empty() ? std::string() : read_text(spec_path);
  gallop_dataset *train = nullptr, *id = nullptr, *ood = nullptr;
  char* resolved = nullptr;
  check(gallop_synth_generate(spec.c_str(), &train, &id, &ood, &resolved), "synth");
  DatasetPtr a(train), b(id), c(ood);
  StringPtr text(resolved);
  std::cout << "spec " << text.get() << "\n";

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw CliError{kExitData, "cannot create " + out_dir + ": " + ec.message()};
  const fs::path dir(out_dir);
  check(gallop_dataset_write(a.get(), (dir / "train.glf").string().c_str()), "train.glf");
  check(gallop_dataset_write(b.get(), (dir / "id.glf").string().c_str()), "id.glf");
  check(gallop_dataset_write(c.get(), (dir / "ood.glf").string().c_str()), "ood.glf");
  std::cout << "wrote " << (dir / "train.glf").string() << " " << (dir / "id.glf").string() << " "
            << (dir / "ood.glf").string() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              std::string trace_path, unsigned threads) {
  auto cfg = resolve_config(config_path, threads);
  auto ds = load_dataset(resolve_data(data, "train"));
  gallop_model* model = nullptr;
  char* trace = nullptr;
  check(gallop_train(cfg.get(), ds.get(), &model, &trace), "train");
  ModelPtr m(model);
  StringPtr t(trace);
  check(gallop_model_save(m.get(), out.c_str()), out);
  if (trace_path.empty()) trace_path = out + ".trace.jsonl";
  write_text(trace_path, t.get());

  // last epoch summary
  std::string jsonl(t.get());
  if (!jsonl.empty() && jsonl.back() == '\n') jsonl.pop_back();
  const auto pos = jsonl.rfind('\n');
  std::cout << "final " << (pos == std::string::npos ? jsonl : jsonl.substr(pos + 1)) << "\n";
  std::cout << "wrote " << out << " " << trace_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data) {
  print_header(ckpt);
  auto m = load_model(ckpt);
  auto ds = load_dataset(resolve_data(data, "train"));
  double top1 = 0.0;
  check(gallop_evaluate(m.get(), ds.get(), &top1), "eval");
  std::printf("top1 %.4f\n", top1);
  return kExitOk;
}

int cmd_ood(const std::string& ckpt, const std::string& id_path, const std::string& ood_path,
            const std::string& out_dir) {
  print_header(ckpt);
  auto m = load_model(ckpt);
  auto id = load_dataset(resolve_data(id_path, "id"));
  auto ood = load_dataset(resolve_data(ood_path, "ood"));
  gallop_ood_result r{};
  check(gallop_score_ood(m.get(), id.get(), ood.get(), &r), "ood");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path dir(out_dir);
  const auto id_csv = (dir / "id_scores.csv").string();
  const auto ood_csv = (dir / "ood_scores.csv").string();
  check(gallop_write_scores(m.get(), id.get(), id_csv.c_str()), id_csv);
  check(gallop_write_scores(m.get(), ood.get(), ood_csv.c_str()), ood_csv);

  std::printf("glmcm fpr95 %.4f auroc %.4f\n", r.fpr95, r.auroc);
  std::printf("mcm fpr95 %.4f auroc %.4f\n", r.fpr95_global, r.auroc_global);
  std::cout << "wrote " << id_csv << " " << ood_csv << "\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, const std::string& data, unsigned threads) {
  auto cfg = resolve_config(config_path, threads);
  auto ds = load_dataset(resolve_data(data, "train"));
  gallop_gradcheck_result r{};
  check(gallop_gradcheck(cfg.get(), ds.get(), &r), "gradcheck");
  std::printf("global_prompts max_rel_error %.3e\n", r.global_prompts_rel_error);
  std::printf("local_prompts max_rel_error %.3e\n", r.local_prompts_rel_error);
  std::printf("theta max_rel_error %.3e\n", r.theta_rel_error);
  std::printf("coordinates %u checked %u skipped\n", r.coordinates_checked, r.coordinates_skipped);
  std::printf("max_rel_error %.3e %s\n", r.max_rel_error, r.passed ? "PASS" : "FAIL");
  return r.passed ? kExitOk : kExitGradcheck;
}

int cmd_inspect(const std::string& ckpt) {
  char* json = nullptr;
  check(gallop_checkpoint_header(ckpt.c_str(), &json), ckpt);
  StringPtr text(json);
  std::cout << text.get() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gallop: global/local prompt ensembles over precomputed features"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = 0;
  app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  std::string spec_path, out_dir = ".", config_path, data, out, trace_path, ckpt, id_path, ood_path;

  auto* synth = app.add_subcommand("synth", "generate synthetic train/id/ood feature files");
  synth->add_option("--spec", spec_path, "synthetic spec JSON (defaults when omitted)");
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train prompts and alignment map");
  train->add_option("--config", config_path, "training config JSON (defaults when omitted)");
  train->add_option("--data", data, "feature file or synth directory")->required();
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_option("--trace", trace_path, "JSON-lines trace path (default <out>.trace.jsonl)");

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data, "feature file")->required();

  auto* ood = app.add_subcommand("ood", "GL-MCM out-of-distribution scoring");
  ood->add_option("--ckpt", ckpt, "checkpoint")->required();
  ood->add_option("--id", id_path, "in-distribution feature file")->required();
  ood->add_option("--ood", ood_path, "out-of-distribution feature file")->required();
  ood->add_option("--out-dir", out_dir, "directory for id_scores.csv and ood_scores.csv");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--config", config_path, "training config JSON (defaults when omitted)");
  gradcheck->add_option("--data", data, "feature file")->required();

  auto* inspect = app.add_subcommand("inspect", "print checkpoint header");
  inspect->add_option("--ckpt", ckpt, "checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(spec_path, out_dir);
    if (*train) return cmd_train(config_path, data, out, trace_path, threads);
    if (*eval) return cmd_eval(ckpt, data);
    if (*ood) return cmd_ood(ckpt, id_path, ood_path, out_dir);
    if (*gradcheck) return cmd_gradcheck(config_path, data, threads);
    if (*inspect) return cmd_inspect(ckpt);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  std::cerr << app.help();
  return kExitUsage;
}
