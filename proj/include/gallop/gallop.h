/*
 * gallop.h - C interface to the gallop prompt-ensemble engine.
 *
 * Objects are opaque handles created and destroyed through this API. Every
 * fallible call returns a gallop_status; on failure a message describing the
 * error is available from gallop_last_error() on the calling thread until the
 * next failing call. Strings returned through char** out-parameters are
 * heap-allocated and must be released with gallop_string_free().
 */
#ifndef GALLOP_GALLOP_H
#define GALLOP_GALLOP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(GALLOP_BUILDING_LIBRARY)
#    define GALLOP_API __declspec(dllexport)
#  else
#    define GALLOP_API __declspec(dllimport)
#  endif
#else
#  define GALLOP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gallop_status {
  GALLOP_OK = 0,
  GALLOP_ERR_ARGUMENT = 1,
  GALLOP_ERR_SHAPE = 2,
  GALLOP_ERR_CONFIG = 3,
  GALLOP_ERR_FORMAT = 4,
  GALLOP_ERR_TRUNCATED = 5,
  GALLOP_ERR_DATA = 6,
  GALLOP_ERR_IO = 7,
  GALLOP_ERR_INTERNAL = 8
} gallop_status;

typedef struct gallop_dataset gallop_dataset;
typedef struct gallop_config gallop_config;
typedef struct gallop_model gallop_model;

typedef struct gallop_dataset_info {
  uint32_t d;
  uint32_t L;
  uint32_t num_classes;
  uint64_t num_records;
} gallop_dataset_info;

/* OOD detection metrics for the combined (GL-MCM) and global-only (MCM) scores. */
typedef struct gallop_ood_result {
  double fpr95;
  double auroc;
  double fpr95_global;
  double auroc_global;
} gallop_ood_result;

typedef struct gallop_gradcheck_result {
  double max_rel_error;
  double global_prompts_rel_error;
  double local_prompts_rel_error;
  double theta_rel_error;
  uint32_t coordinates_checked;
  uint32_t coordinates_skipped;
  int passed;
} gallop_gradcheck_result;

GALLOP_API const char* gallop_version(void);
GALLOP_API const char* gallop_last_error(void);
GALLOP_API const char* gallop_status_name(gallop_status status);
GALLOP_API void gallop_string_free(char* s);

/* Feature files. */
GALLOP_API gallop_status gallop_dataset_read(const char* path, gallop_dataset** out);
GALLOP_API gallop_status gallop_dataset_write(const gallop_dataset* dataset, const char* path);
GALLOP_API gallop_status gallop_dataset_info_get(const gallop_dataset* dataset, gallop_dataset_info* out);
GALLOP_API void gallop_dataset_free(gallop_dataset* dataset);

/* Synthetic train / held-out ID / OOD splits from a JSON spec. A NULL or empty
 * spec uses the defaults. resolved_spec (optional) receives the spec with
 * defaults filled in. */
GALLOP_API gallop_status gallop_synth_generate(const char* spec_json, gallop_dataset** train,
                                               gallop_dataset** test_id, gallop_dataset** test_ood,
                                               char** resolved_spec);

/* Training configuration. A NULL or empty JSON text yields the defaults. */
GALLOP_API gallop_status gallop_config_parse(const char* json_text, gallop_config** out);
GALLOP_API gallop_status gallop_config_load(const char* path, gallop_config** out);
GALLOP_API gallop_status gallop_config_set_seed(gallop_config* config, uint64_t seed);
GALLOP_API gallop_status gallop_config_set_threads(gallop_config* config, uint32_t threads);
GALLOP_API gallop_status gallop_config_to_json(const gallop_config* config, char** out);
GALLOP_API void gallop_config_free(gallop_config* config);

/* Trains from a fresh model. trace_jsonl (optional) receives one JSON object
 * per epoch. */
GALLOP_API gallop_status gallop_train(const gallop_config* config, const gallop_dataset* train,
                                      gallop_model** out, char** trace_jsonl);

/* Checkpoints. */
GALLOP_API gallop_status gallop_model_save(const gallop_model* model, const char* path);
GALLOP_API gallop_status gallop_model_load(const char* path, gallop_model** out);
GALLOP_API gallop_status gallop_checkpoint_header(const char* path, char** out_json);
GALLOP_API void gallop_model_free(gallop_model* model);

/* Ensemble top-1 accuracy over a labeled dataset. */
GALLOP_API gallop_status gallop_evaluate(const gallop_model* model, const gallop_dataset* dataset, double* top1);

/* FPR@95TPR and AUROC with ID as the positive class. */
GALLOP_API gallop_status gallop_score_ood(const gallop_model* model, const gallop_dataset* id,
                                          const gallop_dataset* ood, gallop_ood_result* out);

/* Per-record score CSV:
 * record_index,label,predicted,prob_max,s_gmcm,s_lmcm,s_glmcm */
GALLOP_API gallop_status gallop_write_scores(const gallop_model* model, const gallop_dataset* dataset,
                                             const char* csv_path);

/* Finite-difference check of the loss gradient at a freshly initialized
 * model, on the first batch_size records of the dataset. */
GALLOP_API gallop_status gallop_gradcheck(const gallop_config* config, const gallop_dataset* dataset,
                                          gallop_gradcheck_result* out);

#ifdef __cplusplus
}
#endif

#endif /* GALLOP_GALLOP_H */
