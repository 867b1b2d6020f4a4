#include "gallop/gallop.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "gallop/config.hpp"
#include "gallop/error.hpp"
#include "gallop/feature_store.hpp"
#include "gallop/inference.hpp"
#include "gallop/model.hpp"
#include "gallop/trainer.hpp"

struct gallop_dataset {
  gallop::FeatureDataset value;
};

struct gallop_config {
  gallop::TrainConfig value;
};

struct gallop_model {
  gallop::GallopModel value;
};

namespace {

thread_local std::string g_last_error;

gallop_status to_status(gallop::ErrorCode code) {
  switch (code) {
    case gallop::ErrorCode::kArgument: return GALLOP_ERR_ARGUMENT;
    case gallop::ErrorCode::kShape: return GALLOP_ERR_SHAPE;
    case gallop::ErrorCode::kConfig: return GALLOP_ERR_CONFIG;
    case gallop::ErrorCode::kFormat: return GALLOP_ERR_FORMAT;
    case gallop::ErrorCode::kTruncated: return GALLOP_ERR_TRUNCATED;
    case gallop::ErrorCode::kData: return GALLOP_ERR_DATA;
    case gallop::ErrorCode::kIo: return GALLOP_ERR_IO;
  }
  return GALLOP_ERR_INTERNAL;
}

gallop_status set_error(gallop_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
gallop_status guarded(Fn&& fn) {
  try {
    fn();
    return GALLOP_OK;
  } catch (const gallop::Error& e) {
    return set_error(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(GALLOP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(GALLOP_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(GALLOP_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) gallop::fail(gallop::ErrorCode::kArgument, what);
}

}  // namespace

extern "C" {

const char* gallop_version(void) { return "0.1.0"; }

const char* gallop_last_error(void) { return g_last_error.c_str(); }

const char* gallop_status_name(gallop_status status) {
  switch (status) {
    case GALLOP_OK: return "ok";
    case GALLOP_ERR_ARGUMENT: return "argument error";
    case GALLOP_ERR_SHAPE: return "shape error";
    case GALLOP_ERR_CONFIG: return "configuration error";
    case GALLOP_ERR_FORMAT: return "format error";
    case GALLOP_ERR_TRUNCATED: return "truncation error";
    case GALLOP_ERR_DATA: return "data error";
    case GALLOP_ERR_IO: return "I/O error";
    case GALLOP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void gallop_string_free(char* s) { std::free(s); }

gallop_status gallop_dataset_read(const char* path, gallop_dataset** out) {
  return guarded([&] {
    require(path && out, "gallop_dataset_read: null argument");
    *out = new gallop_dataset{gallop::read_dataset(path)};
  });
}

gallop_status gallop_dataset_write(const gallop_dataset* dataset, const char* path) {
  return guarded([&] {
    require(dataset && path, "gallop_dataset_write: null argument");
    gallop::write_dataset(dataset->value, path);
  });
}

gallop_status gallop_dataset_info_get(const gallop_dataset* dataset, gallop_dataset_info* out) {
  return guarded([&] {
    require(dataset && out, "gallop_dataset_info_get: null argument");
    out->d = dataset->value.d;
    out->L = dataset->value.L;
    out->num_classes = dataset->value.num_classes;
    out->num_records = dataset->value.records.size();
  });
}

void gallop_dataset_free(gallop_dataset* dataset) { delete dataset; }

gallop_status gallop_synth_generate(const char* spec_json, gallop_dataset** train, gallop_dataset** test_id,
                                    gallop_dataset** test_ood, char** resolved_spec) {
  return guarded([&] {
    require(train && test_id && test_ood, "gallop_synth_generate: null output");
    const gallop::SynthSpec spec =
        (spec_json && *spec_json) ? gallop::parse_synth_spec(spec_json) : gallop::SynthSpec{};
    auto splits = gallop::generate_synthetic(spec);
    auto a = std::make_unique<gallop_dataset>(gallop_dataset{std::move(splits.train)});
    auto b = std::make_unique<gallop_dataset>(gallop_dataset{std::move(splits.test_id)});
    auto c = std::make_unique<gallop_dataset>(gallop_dataset{std::move(splits.test_ood)});
    if (resolved_spec) *resolved_spec = dup_string(gallop::synth_spec_to_json(spec));
    *train = a.release();
    *test_id = b.release();
    *test_ood = c.release();
  });
}

gallop_status gallop_config_parse(const char* json_text, gallop_config** out) {
  return guarded([&] {
    require(out, "gallop_config_parse: null output");
    *out = new gallop_config{(json_text && *json_text) ? gallop::parse_config(json_text) : gallop::TrainConfig{}};
  });
}

gallop_status gallop_config_load(const char* path, gallop_config** out) {
  return guarded([&] {
    require(path && out, "gallop_config_load: null argument");
    *out = new gallop_config{gallop::load_config(path)};
  });
}

gallop_status gallop_config_set_seed(gallop_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "gallop_config_set_seed: null config");
    config->value.seed = seed;
  });
}

gallop_status gallop_config_set_threads(gallop_config* config, uint32_t threads) {
  return guarded([&] {
    require(config, "gallop_config_set_threads: null config");
    require(threads >= 1, "threads must be >= 1");
    config->value.threads = threads;
  });
}

gallop_status gallop_config_to_json(const gallop_config* config, char** out) {
  return guarded([&] {
    require(config && out, "gallop_config_to_json: null argument");
    *out = dup_string(gallop::config_to_json(config->value));
  });
}

void gallop_config_free(gallop_config* config) { delete config; }

gallop_status gallop_train(const gallop_config* config, const gallop_dataset* train, gallop_model** out,
                           char** trace_jsonl) {
  return guarded([&] {
    require(config && train && out, "gallop_train: null argument");
    auto result = gallop::train(train->value, config->value);
    auto model = std::make_unique<gallop_model>(gallop_model{std::move(result.model)});
    if (trace_jsonl) *trace_jsonl = dup_string(gallop::trace_to_jsonl(result.trace));
    *out = model.release();
  });
}

gallop_status gallop_model_save(const gallop_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "gallop_model_save: null argument");
    gallop::save_checkpoint(model->value, path);
  });
}

gallop_status gallop_model_load(const char* path, gallop_model** out) {
  return guarded([&] {
    require(path && out, "gallop_model_load: null argument");
    *out = new gallop_model{gallop::load_checkpoint(path)};
  });
}

gallop_status gallop_checkpoint_header(const char* path, char** out_json) {
  return guarded([&] {
    require(path && out_json, "gallop_checkpoint_header: null argument");
    *out_json = dup_string(gallop::checkpoint_header(path));
  });
}

void gallop_model_free(gallop_model* model) { delete model; }

namespace {

void check_compatible(const gallop::GallopModel& model, const gallop::FeatureDataset& ds) {
  if (ds.d != model.feature_dim()) gallop::fail(gallop::ErrorCode::kConfig, "dataset d differs from model");
  if (ds.num_classes != model.num_classes()) gallop::fail(gallop::ErrorCode::kConfig, "dataset class count differs from model");
  model.scales.check_fits(ds.L);
}

}  // namespace

gallop_status gallop_evaluate(const gallop_model* model, const gallop_dataset* dataset, double* top1) {
  return guarded([&] {
    require(model && dataset && top1, "gallop_evaluate: null argument");
    check_compatible(model->value, dataset->value);
    *top1 = gallop::top1_accuracy(model->value, dataset->value);
  });
}

gallop_status gallop_score_ood(const gallop_model* model, const gallop_dataset* id, const gallop_dataset* ood,
                               gallop_ood_result* out) {
  return guarded([&] {
    require(model && id && ood && out, "gallop_score_ood: null argument");
    check_compatible(model->value, id->value);
    check_compatible(model->value, ood->value);
    const auto id_scores = gallop::score_dataset(model->value, id->value, model->value.tau);
    const auto ood_scores = gallop::score_dataset(model->value, ood->value, model->value.tau);
    std::vector<double> a, b, ga, gb;
    for (const auto& s : id_scores) {
      a.push_back(s.s_glmcm);
      ga.push_back(s.s_gmcm);
    }
    for (const auto& s : ood_scores) {
      b.push_back(s.s_glmcm);
      gb.push_back(s.s_gmcm);
    }
    const auto combined = gallop::ood_metrics(a, b);
    const auto global = gallop::ood_metrics(ga, gb);
    *out = {combined.fpr95, combined.auroc, global.fpr95, global.auroc};
  });
}

gallop_status gallop_write_scores(const gallop_model* model, const gallop_dataset* dataset, const char* csv_path) {
  return guarded([&] {
    require(model && dataset && csv_path, "gallop_write_scores: null argument");
    check_compatible(model->value, dataset->value);
    const auto reports = gallop::score_dataset(model->value, dataset->value, model->value.tau);
    gallop::write_score_csv(csv_path, dataset->value, reports);
  });
}

gallop_status gallop_gradcheck(const gallop_config* config, const gallop_dataset* dataset,
                               gallop_gradcheck_result* out) {
  return guarded([&] {
    require(config && dataset && out, "gallop_gradcheck: null argument");
    const auto& cfg = config->value;
    const auto& ds = dataset->value;
    if (ds.records.empty()) gallop::fail(gallop::ErrorCode::kArgument, "gradcheck needs a nonempty dataset");
    const auto model = gallop::init_model(cfg, ds);

    gallop::Batch batch = gallop::full_batch(ds);
    if (batch.size() > cfg.batch_size) batch.resize(cfg.batch_size);
    const auto gmask = gallop::sample_dropout(cfg.dropout, batch.size(), model.prompts.global.size(), cfg.seed, 0);
    gallop::PromptMask lmask;
    gallop::LossOptions loss;
    loss.global_mask = &gmask;
    loss.lambda_div = cfg.lambda_div;
    loss.threads = cfg.threads;
    if (cfg.dropout.apply_to_local && !model.prompts.local.empty()) {
      lmask = gallop::sample_dropout(cfg.dropout, batch.size(), model.prompts.local.size(), cfg.seed ^ 0x4c44, 0);
      loss.local_mask = &lmask;
    }
    gallop::GradCheckOptions opts;
    opts.seed = cfg.seed;
    const auto report = gallop::gradient_check(model, batch, loss, opts);

    *out = {};
    out->max_rel_error = report.max_rel_error;
    for (const auto& g : report.groups) {
      if (g.name == "global_prompts") out->global_prompts_rel_error = g.max_rel_error;
      if (g.name == "local_prompts") out->local_prompts_rel_error = g.max_rel_error;
      if (g.name == "theta") out->theta_rel_error = g.max_rel_error;
      out->coordinates_checked += static_cast<uint32_t>(g.checked);
      out->coordinates_skipped += static_cast<uint32_t>(g.skipped);
    }
    out->passed = report.passed ? 1 : 0;
  });
}

}  // extern "C"
