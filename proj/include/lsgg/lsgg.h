/* Copyright (C) 2026 The lsgg Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the lifelong scene-graph learner. Handles are opaque; every
 * fallible call returns an lsgg_status and leaves a message for
 * lsgg_last_error() (per thread) on failure. Strings are UTF-8, NUL-terminated.
 */

#ifndef LSGG_LSGG_H_
#define LSGG_LSGG_H_

#include <stddef.h>

#if defined(_WIN32)
#define LSGG_API __declspec(dllexport)
#else
#define LSGG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lsgg_status {
  LSGG_OK = 0,
  LSGG_ERR_INVALID_ARGUMENT = 1,
  LSGG_ERR_IO = 2,
  LSGG_ERR_PARSE = 3,
  LSGG_ERR_NUMERIC = 4,
  LSGG_ERR_VERSION = 5,
  LSGG_ERR_STATE = 6,
  LSGG_ERR_INTERNAL = 7
} lsgg_status;

typedef struct lsgg_config lsgg_config;
typedef struct lsgg_results lsgg_results;

typedef struct lsgg_dump_metrics {
  double recall;
  double mean_recall;
  double m;
  double wmap_rel;
  double wmap_phr;
  double score_wtd;
} lsgg_dump_metrics;

LSGG_API const char* lsgg_version(void);
LSGG_API const char* lsgg_status_name(lsgg_status status);
/* Message of the last failed call on this thread; "" if none. */
LSGG_API const char* lsgg_last_error(void);

LSGG_API lsgg_status lsgg_config_create(lsgg_config** out);
LSGG_API void lsgg_config_destroy(lsgg_config* config);
LSGG_API lsgg_status lsgg_config_set(lsgg_config* config, const char* key, const char* value);
/* Copies the value into buf (if cap allows); *needed gets the size incl. NUL. */
LSGG_API lsgg_status lsgg_config_get(const lsgg_config* config, const char* key, char* buf, size_t cap,
                                     size_t* needed);
LSGG_API lsgg_status lsgg_config_load(lsgg_config* config, const char* path);
LSGG_API lsgg_status lsgg_config_save(const lsgg_config* config, const char* path);
LSGG_API lsgg_status lsgg_config_apply_preset(lsgg_config* config, const char* name);
/* Parses every key; reports the first invalid one. */
LSGG_API lsgg_status lsgg_config_validate(const lsgg_config* config);

/* Synthetic benchmark from the synth.* keys. vocab_path may be NULL. */
LSGG_API lsgg_status lsgg_synth(const lsgg_config* config, const char* embeddings_path, const char* vocab_path);
/* Stage schedule for the configured data (schedule.mode, schedule.tasks, seed). */
LSGG_API lsgg_status lsgg_split(const lsgg_config* config, const char* schedule_path);

LSGG_API lsgg_status lsgg_run_experiment(const lsgg_config* config, lsgg_results** out);
LSGG_API lsgg_status lsgg_results_read(const char* dir, lsgg_results** out);
LSGG_API void lsgg_results_destroy(lsgg_results* results);
LSGG_API lsgg_status lsgg_results_write(lsgg_results* results, const char* dir);
LSGG_API lsgg_status lsgg_results_stage_count(const lsgg_results* results, size_t* out);
/* Final-stage value by name: "R@50", "mR@100", "M@50", "FM@50", "wmAP_rel", "wmAP_phr", "score_wtd". */
LSGG_API lsgg_status lsgg_results_metric(const lsgg_results* results, const char* name, double* out);

/* presets: comma list or NULL for the standard suite; seeds: comma list or
 * NULL for the config's "seeds"; out_dir may be NULL. Writes the comparison
 * table as CSV to table_path. */
LSGG_API lsgg_status lsgg_ablation_run(const lsgg_config* base, const char* presets, const char* seeds,
                                       const char* out_dir, const char* table_path);

/* format: "csv" or "text". Output goes to out_path when non-NULL and to buf
 * (size-query protocol as lsgg_config_get) when buf or needed is non-NULL. */
LSGG_API lsgg_status lsgg_report(const char* const* dirs, size_t n_dirs, const char* format, const char* out_path,
                                 char* buf, size_t cap, size_t* needed);

/* Metrics of a prediction dump against a ground-truth file at cut-off k. */
LSGG_API lsgg_status lsgg_eval_dump(const char* predictions_path, const char* gt_path, size_t k,
                                    lsgg_dump_metrics* out);

#ifdef __cplusplus
}
#endif

#endif /* LSGG_LSGG_H_ */
