// Copyright 2026 The stnp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the stnp library. All objects are opaque handles; every
 * call returns a status code and, on failure, leaves a message retrievable
 * with stnp_last_error() on the calling thread. Strings returned through
 * `char**` out-parameters are owned by the caller and released with
 * stnp_string_free(). */
#ifndef STNP_STNP_H_
#define STNP_STNP_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define STNP_API __declspec(dllexport)
#else
#define STNP_API __attribute__((visibility("default")))
#endif

typedef enum stnp_status {
  STNP_OK = 0,
  STNP_ERR_INVALID_ARGUMENT = 1,
  STNP_ERR_INVALID_CONFIG = 2,
  STNP_ERR_DATA = 3,
  STNP_ERR_SHAPE = 4,
  STNP_ERR_NUMERICAL = 5,
  STNP_ERR_INGESTION = 6,
  STNP_ERR_IO = 7,
  STNP_ERR_INTERNAL = 8
} stnp_status;

typedef struct stnp_config stnp_config;
typedef struct stnp_model stnp_model;

typedef struct stnp_metrics_row {
  int64_t step;
  const char* split; /* "train" or "eval" */
  const char* variant;
  double mean_log_likelihood;
  double rmse;
  double loss;
  double wall_ms;
  uint64_t seed;
} stnp_metrics_row;

typedef struct stnp_eval_result {
  double mean_log_likelihood;
  double rmse;
} stnp_eval_result;

typedef struct stnp_check {
  const char* name;
  int passed;
  double value;
  double tolerance;
  const char* detail;
} stnp_check;

typedef struct stnp_ablation_row {
  const char* name;
  uint64_t seed;
  double mean_log_likelihood;
  double rmse;
  double seconds;
} stnp_ablation_row;

typedef enum stnp_suite { STNP_SUITE_PROPCHECK = 0, STNP_SUITE_GRADCHECK = 1, STNP_SUITE_SCALING = 2 } stnp_suite;

typedef void (*stnp_progress_fn)(const stnp_metrics_row* row, void* user);
typedef void (*stnp_check_fn)(const stnp_check* check, void* user);
typedef void (*stnp_ablation_fn)(const stnp_ablation_row* row, void* user);

STNP_API const char* stnp_version(void);
STNP_API const char* stnp_status_name(stnp_status status);
/* Message of the last failed call on this thread, "" if none. */
STNP_API const char* stnp_last_error(void);
STNP_API void stnp_string_free(char* s);

STNP_API stnp_status stnp_config_default(stnp_config** out);
STNP_API stnp_status stnp_config_load(const char* path, stnp_config** out);
STNP_API stnp_status stnp_config_from_json(const char* text, stnp_config** out);
STNP_API stnp_status stnp_config_save(const stnp_config* cfg, const char* path);
STNP_API stnp_status stnp_config_to_json(const stnp_config* cfg, char** out);
/* Sets a field by dotted key path, e.g. "train.steps"; value is JSON text
 * or a bare string. */
STNP_API stnp_status stnp_config_set(stnp_config* cfg, const char* key, const char* value);
STNP_API void stnp_config_free(stnp_config* cfg);

/* Fresh parameters initialised from the config seed. */
STNP_API stnp_status stnp_model_create(const stnp_config* cfg, stnp_model** out);
STNP_API stnp_status stnp_model_load(const stnp_config* cfg, const char* checkpoint_path, stnp_model** out);
STNP_API stnp_status stnp_model_save(const stnp_model* model, const char* checkpoint_path);
STNP_API void stnp_model_free(stnp_model* model);

/* Trains with the config, writing the run directory. Any of the out
 * pointers may be NULL. */
STNP_API stnp_status stnp_train(const stnp_config* cfg, stnp_progress_fn progress, void* user, stnp_model** out_model,
                                stnp_eval_result* out_eval, char** out_run_dir);
/* Evaluates on the fixed cache described by the model's config. */
STNP_API stnp_status stnp_evaluate(const stnp_model* model, stnp_eval_result* out);
/* Scalar inputs and outputs: m context pairs, n targets. mu and sigma
 * receive n values each. */
STNP_API stnp_status stnp_predict(const stnp_model* model, const double* xc, const double* yc, size_t m,
                                  const double* xt, size_t n, uint64_t noise_seed, double* mu, double* sigma);
/* Aggregator output for a context as CSV-style text sections. */
STNP_API stnp_status stnp_inspect_spectrum(const stnp_model* model, const double* xc, const double* yc, size_t m,
                                           uint64_t noise_seed, char** out_text);
STNP_API stnp_status stnp_inspect_spectrum_file(const stnp_model* model, const char* context_csv,
                                                uint64_t noise_seed, char** out_text);

STNP_API stnp_status stnp_ablate(const stnp_config* cfg, const uint64_t* seeds, size_t n_seeds,
                                 stnp_ablation_fn progress, void* user);
/* Runs a check suite; *all_passed is set to 1 when every check passed.
 * out_table (may be NULL) receives the timing table of the scaling suite. */
STNP_API stnp_status stnp_run_suite(stnp_suite suite, uint64_t seed, stnp_check_fn on_check, void* user,
                                    int* all_passed, char** out_table);

#ifdef __cplusplus
}
#endif

#endif /* STNP_STNP_H_ */
