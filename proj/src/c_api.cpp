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

#include "stnp/stnp.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>

#include "stnp/error.hpp"
#include "stnp/harness.hpp"

struct stnp_config {
  stnp::harness::RunConfig cfg;
};

struct stnp_model {
  stnp::harness::RunConfig cfg;
  stnp::model::ParamStore params;
};

namespace {

thread_local std::string g_last_error;

stnp_status status_of(stnp::ErrorKind kind) {
  switch (kind) {
    case stnp::ErrorKind::InvalidConfig: return STNP_ERR_INVALID_CONFIG;
    case stnp::ErrorKind::Data: return STNP_ERR_DATA;
    case stnp::ErrorKind::Shape: return STNP_ERR_SHAPE;
    case stnp::ErrorKind::Numerical: return STNP_ERR_NUMERICAL;
    case stnp::ErrorKind::Ingestion: return STNP_ERR_INGESTION;
    case stnp::ErrorKind::Io: return STNP_ERR_IO;
  }
  return STNP_ERR_INTERNAL;
}

template <typename F>
stnp_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    fn();
    return STNP_OK;
  } catch (const stnp::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return STNP_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return STNP_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

stnp::tasks::Episode make_episode(const double* xc, const double* yc, size_t m, const double* xt, size_t n) {
  if (m > 0) {
    need(xc, "xc");
    need(yc, "yc");
  }
  if (n > 0) need(xt, "xt");
  stnp::tasks::Episode ep;
  ep.xc = stnp::Matrix(m, 1, std::vector<double>(xc, xc + m));
  ep.yc = stnp::Matrix(m, 1, std::vector<double>(yc, yc + m));
  ep.xt = stnp::Matrix(n, 1, std::vector<double>(xt, xt + n));
  ep.yt = stnp::Matrix(n, 1);
  return ep;
}

}  // namespace

extern "C" {

const char* stnp_version(void) { return "0.1.0"; }

const char* stnp_status_name(stnp_status status) {
  switch (status) {
    case STNP_OK: return "ok";
    case STNP_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case STNP_ERR_INVALID_CONFIG: return "invalid_config";
    case STNP_ERR_DATA: return "data";
    case STNP_ERR_SHAPE: return "shape";
    case STNP_ERR_NUMERICAL: return "numerical";
    case STNP_ERR_INGESTION: return "ingestion";
    case STNP_ERR_IO: return "io";
    case STNP_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* stnp_last_error(void) { return g_last_error.c_str(); }

void stnp_string_free(char* s) { std::free(s); }

stnp_status stnp_config_default(stnp_config** out) {
  if (!out) {
    g_last_error = "out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { *out = new stnp_config{stnp::harness::default_run_config()}; });
}

stnp_status stnp_config_load(const char* path, stnp_config** out) {
  if (!path || !out) {
    g_last_error = "path and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { *out = new stnp_config{stnp::harness::read_config(path)}; });
}

stnp_status stnp_config_from_json(const char* text, stnp_config** out) {
  if (!text || !out) {
    g_last_error = "text and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { *out = new stnp_config{stnp::harness::config_from_json(text)}; });
}

stnp_status stnp_config_save(const stnp_config* cfg, const char* path) {
  if (!cfg || !path) {
    g_last_error = "cfg and path must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { stnp::harness::write_config(cfg->cfg, path); });
}

stnp_status stnp_config_to_json(const stnp_config* cfg, char** out) {
  if (!cfg || !out) {
    g_last_error = "cfg and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { *out = dup_string(stnp::harness::config_to_json(cfg->cfg)); });
}

stnp_status stnp_config_set(stnp_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) {
    g_last_error = "cfg, key and value must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    auto copy = cfg->cfg;  // a failed edit leaves the handle unchanged
    stnp::harness::set_config_value(copy, key, value);
    cfg->cfg = std::move(copy);
  });
}

void stnp_config_free(stnp_config* cfg) { delete cfg; }

stnp_status stnp_model_create(const stnp_config* cfg, stnp_model** out) {
  if (!cfg || !out) {
    g_last_error = "cfg and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { *out = new stnp_model{cfg->cfg, stnp::harness::init_run_params(cfg->cfg)}; });
}

stnp_status stnp_model_load(const stnp_config* cfg, const char* checkpoint_path, stnp_model** out) {
  if (!cfg || !checkpoint_path || !out) {
    g_last_error = "cfg, checkpoint_path and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    auto params = stnp::harness::load_checkpoint(checkpoint_path);
    // The checkpoint must hold exactly the arrays this config's model uses.
    const auto expected = stnp::harness::init_run_params(cfg->cfg);
    for (const auto& [name, t] : expected.params()) {
      if (!params.contains(name))
        stnp::fail(stnp::ErrorKind::Io, "checkpoint lacks parameter '" + name + "' required by the config");
      if (params.get(name).shape() != t.shape())
        stnp::fail(stnp::ErrorKind::Io, "checkpoint parameter '" + name + "' has the wrong shape for the config");
    }
    if (params.params().size() != expected.params().size())
      stnp::fail(stnp::ErrorKind::Io, "checkpoint holds parameters the config's model does not use");
    *out = new stnp_model{cfg->cfg, std::move(params)};
  });
}

stnp_status stnp_model_save(const stnp_model* model, const char* checkpoint_path) {
  if (!model || !checkpoint_path) {
    g_last_error = "model and checkpoint_path must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { stnp::harness::save_checkpoint(model->params, checkpoint_path); });
}

void stnp_model_free(stnp_model* model) { delete model; }

stnp_status stnp_train(const stnp_config* cfg, stnp_progress_fn progress, void* user, stnp_model** out_model,
                       stnp_eval_result* out_eval, char** out_run_dir) {
  if (!cfg) {
    g_last_error = "cfg must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    stnp::harness::ProgressFn fn;
    if (progress)
      fn = [&](const stnp::harness::MetricsRow& r) {
        const stnp_metrics_row row{r.step, r.split.c_str(), r.variant.c_str(), r.mean_log_likelihood, r.rmse,
                                   r.loss, r.wall_ms, r.seed};
        progress(&row, user);
      };
    auto res = stnp::harness::run_training(cfg->cfg, fn);
    if (out_eval) *out_eval = {res.final_eval.mean_log_likelihood, res.final_eval.rmse};
    if (out_run_dir) *out_run_dir = dup_string(res.run_dir);
    if (out_model) *out_model = new stnp_model{cfg->cfg, std::move(res.params)};
  });
}

stnp_status stnp_evaluate(const stnp_model* model, stnp_eval_result* out) {
  if (!model || !out) {
    g_last_error = "model and out must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const auto ev = stnp::harness::evaluate_params(model->cfg, model->params);
    *out = {ev.mean_log_likelihood, ev.rmse};
  });
}

stnp_status stnp_predict(const stnp_model* model, const double* xc, const double* yc, size_t m, const double* xt,
                         size_t n, uint64_t noise_seed, double* mu, double* sigma) {
  if (!model || (n > 0 && (!mu || !sigma))) {
    g_last_error = "model, mu and sigma must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const auto ep = make_episode(xc, yc, m, xt, n);
    const stnp::model::Model mdl(model->cfg.model);
    stnp::Rng rng(noise_seed);
    const auto pg = mdl.predict(model->params, ep, mdl.draw_noise(rng));
    for (size_t i = 0; i < n; ++i) {
      mu[i] = pg.mu(i, 0);
      sigma[i] = pg.sigma(i, 0);
    }
  });
}

stnp_status stnp_inspect_spectrum(const stnp_model* model, const double* xc, const double* yc, size_t m,
                                  uint64_t noise_seed, char** out_text) {
  if (!model || !out_text) {
    g_last_error = "model and out_text must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const auto ep = make_episode(xc, yc, m, nullptr, 0);
    const auto rep = stnp::harness::inspect_spectrum(model->cfg.model, model->params, ep.xc, ep.yc, noise_seed);
    *out_text = dup_string(stnp::harness::format_spectrum(rep));
  });
}

stnp_status stnp_inspect_spectrum_file(const stnp_model* model, const char* context_csv, uint64_t noise_seed,
                                       char** out_text) {
  if (!model || !context_csv || !out_text) {
    g_last_error = "model, context_csv and out_text must not be NULL";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    stnp::Matrix xs, ys;
    const auto& mc = model->cfg.model;
    stnp::harness::read_context_csv(context_csv, mc.d_x, mc.d_y, xs, ys);
    const auto rep = stnp::harness::inspect_spectrum(mc, model->params, xs, ys, noise_seed);
    *out_text = dup_string(stnp::harness::format_spectrum(rep));
  });
}

stnp_status stnp_ablate(const stnp_config* cfg, const uint64_t* seeds, size_t n_seeds, stnp_ablation_fn progress,
                        void* user) {
  if (!cfg || !seeds || n_seeds == 0) {
    g_last_error = "cfg and a non-empty seed list are required";
    return STNP_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    std::function<void(const stnp::harness::AblationRow&)> fn;
    if (progress)
      fn = [&](const stnp::harness::AblationRow& r) {
        const stnp_ablation_row row{r.name.c_str(), r.seed, r.mean_log_likelihood, r.rmse, r.seconds};
        progress(&row, user);
      };
    stnp::harness::run_ablation(cfg->cfg, std::vector<std::uint64_t>(seeds, seeds + n_seeds), fn);
  });
}

stnp_status stnp_run_suite(stnp_suite suite, uint64_t seed, stnp_check_fn on_check, void* user, int* all_passed,
                           char** out_table) {
  return guarded([&] {
    std::vector<stnp::harness::CheckResult> results;
    std::string table;
    switch (suite) {
      case STNP_SUITE_PROPCHECK: results = stnp::harness::run_propcheck(seed); break;
      case STNP_SUITE_GRADCHECK: results = stnp::harness::run_gradcheck(seed); break;
      case STNP_SUITE_SCALING: results = stnp::harness::run_scaling(seed, &table); break;
      default: throw std::invalid_argument("unknown suite " + std::to_string(static_cast<int>(suite)));
    }
    bool ok = true;
    for (const auto& r : results) {
      ok = ok && r.passed;
      if (on_check) {
        const stnp_check c{r.name.c_str(), r.passed ? 1 : 0, r.value, r.tolerance, r.detail.c_str()};
        on_check(&c, user);
      }
    }
    if (all_passed) *all_passed = ok ? 1 : 0;
    if (out_table) *out_table = dup_string(table);
  });
}

}  // extern "C"
