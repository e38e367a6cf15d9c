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

// Command line front end. Talks to the library through the C API only.
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stnp/stnp.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed, eval_seed;
  std::optional<std::int64_t> steps;
  std::optional<std::string> variant, out;
  std::optional<std::size_t> m_min, threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration (defaults if omitted)");
  app->add_option("--seed", c.seed, "training seed");
  app->add_option("--eval-seed", c.eval_seed, "evaluation cache seed");
  app->add_option("--steps", c.steps, "training steps");
  app->add_option("--variant", c.variant, "stnp, plain_tnp, fan, disc or rff");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--m-min", c.m_min, "minimum context size");
  app->add_option("--threads", c.threads, "worker threads");
}

int report(stnp_status st) {
  if (st == STNP_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", stnp_status_name(st), stnp_last_error());
  return st == STNP_ERR_INVALID_CONFIG || st == STNP_ERR_INVALID_ARGUMENT ? 2 : 1;
}

// Builds the config handle from --config plus flag overrides.
stnp_status load_config(const Common& c, stnp_config** out) {
  stnp_status st = c.config.empty() ? stnp_config_default(out) : stnp_config_load(c.config.c_str(), out);
  if (st != STNP_OK) return st;
  std::vector<std::pair<const char*, std::string>> edits;
  if (c.seed) edits.emplace_back("seed", std::to_string(*c.seed));
  if (c.eval_seed) edits.emplace_back("eval_seed", std::to_string(*c.eval_seed));
  if (c.steps) edits.emplace_back("train.steps", std::to_string(*c.steps));
  if (c.variant) edits.emplace_back("model.variant", "\"" + *c.variant + "\"");
  if (c.out) edits.emplace_back("out_dir", "\"" + *c.out + "\"");
  if (c.m_min) edits.emplace_back("task.m_min", std::to_string(*c.m_min));
  if (c.threads) edits.emplace_back("train.threads", std::to_string(*c.threads));
  for (const auto& [key, value] : edits)
    if ((st = stnp_config_set(*out, key, value.c_str())) != STNP_OK) {
      stnp_config_free(*out);
      *out = nullptr;
      return st;
    }
  return STNP_OK;
}

void print_check(const stnp_check* c, void*) {
  std::printf("%-22s %s  value=%.6g  tol=%.3g  %s\n", c->name, c->passed ? "PASS" : "FAIL", c->value, c->tolerance,
              c->detail);
}

int run_suite(stnp_suite suite, std::uint64_t seed) {
  int all = 0;
  char* table = nullptr;
  const auto st = stnp_run_suite(suite, seed, print_check, nullptr, &all, &table);
  if (st != STNP_OK) return report(st);
  if (table && *table) std::printf("%s", table);
  stnp_string_free(table);
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral transformer neural process tools"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, ablate_opts, inspect_opts, default_opts;
  std::uint64_t check_seed = 0;

  auto* train = app.add_subcommand("train", "train one model and write metrics, checkpoint and config");
  add_common(train, train_opts);

  std::string checkpoint;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the fixed evaluation cache");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  std::vector<std::uint64_t> seeds;
  auto* ablate = app.add_subcommand("ablate", "train every embedding variant and responsibility net");
  add_common(ablate, ablate_opts);
  ablate->add_option("--seeds", seeds, "seeds to average over (default: the config seed)");

  std::string context, inspect_ckpt;
  std::uint64_t noise_seed = 0;
  auto* inspect = app.add_subcommand("inspect-spectrum", "dump grid spectrum, mixture and sampled frequencies");
  add_common(inspect, inspect_opts);
  inspect->add_option("--context", context, "CSV with header; x then y columns")->required();
  inspect->add_option("--checkpoint", inspect_ckpt, "trained parameters (default: fresh init from the seed)");
  inspect->add_option("--noise-seed", noise_seed, "seed of the frequency noise");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", check_seed, "suite seed");
  auto* propcheck = app.add_subcommand("propcheck", "equivariance, invariance, convergence and consistency suite");
  propcheck->add_option("--seed", check_seed, "suite seed");
  auto* scaling = app.add_subcommand("scaling", "embedding and attention timing against N");
  scaling->add_option("--seed", check_seed, "suite seed");

  auto* defaults = app.add_subcommand("default-config", "print the configuration with flag overrides applied");
  add_common(defaults, default_opts);

  CLI11_PARSE(app, argc, argv);

  stnp_config* cfg = nullptr;
  stnp_status st = STNP_OK;

  if (*train) {
    if ((st = load_config(train_opts, &cfg)) != STNP_OK) return report(st);
    auto progress = [](const stnp_metrics_row* r, void*) {
      if (std::string(r->split) == "eval")
        std::printf("step %lld  eval  ll=%.6f  rmse=%.6f\n", static_cast<long long>(r->step),
                    r->mean_log_likelihood, r->rmse);
      else if ((r->step + 1) % 100 == 0)
        std::printf("step %lld  train loss=%.6f\n", static_cast<long long>(r->step + 1), r->loss);
      std::fflush(stdout);
    };
    stnp_eval_result ev{};
    char* dir = nullptr;
    st = stnp_train(cfg, progress, nullptr, nullptr, &ev, &dir);
    if (st == STNP_OK) {
      std::printf("final  ll=%.6f  rmse=%.6f  run=%s\n", ev.mean_log_likelihood, ev.rmse, dir);
      stnp_string_free(dir);
    }
  } else if (*evaluate) {
    if ((st = load_config(eval_opts, &cfg)) != STNP_OK) return report(st);
    stnp_model* m = nullptr;
    if ((st = stnp_model_load(cfg, checkpoint.c_str(), &m)) == STNP_OK) {
      stnp_eval_result ev{};
      if ((st = stnp_evaluate(m, &ev)) == STNP_OK)
        std::printf("mean_log_likelihood=%.17g\nrmse=%.17g\n", ev.mean_log_likelihood, ev.rmse);
      stnp_model_free(m);
    }
  } else if (*ablate) {
    if ((st = load_config(ablate_opts, &cfg)) != STNP_OK) return report(st);
    if (seeds.empty()) seeds.push_back(ablate_opts.seed.value_or(0));
    struct Acc {
      std::map<std::string, std::pair<double, int>> mean;
      std::vector<std::string> order;
    } acc;
    auto row = [](const stnp_ablation_row* r, void* user) {
      auto& a = *static_cast<Acc*>(user);
      std::printf("%-10s seed %llu  ll=%.6f  rmse=%.6f  (%.1fs)\n", r->name, static_cast<unsigned long long>(r->seed),
                  r->mean_log_likelihood, r->rmse, r->seconds);
      std::fflush(stdout);
      if (!a.mean.count(r->name)) a.order.push_back(r->name);
      auto& [sum, n] = a.mean[r->name];
      sum += r->mean_log_likelihood;
      ++n;
    };
    if ((st = stnp_ablate(cfg, seeds.data(), seeds.size(), row, &acc)) == STNP_OK) {
      std::printf("mean over %zu seed(s):\n", seeds.size());
      for (const auto& name : acc.order)
        std::printf("  %-10s %.6f\n", name.c_str(), acc.mean[name].first / acc.mean[name].second);
    }
  } else if (*inspect) {
    if ((st = load_config(inspect_opts, &cfg)) != STNP_OK) return report(st);
    stnp_model* m = nullptr;
    st = inspect_ckpt.empty() ? stnp_model_create(cfg, &m) : stnp_model_load(cfg, inspect_ckpt.c_str(), &m);
    if (st == STNP_OK) {
      char* text = nullptr;
      if ((st = stnp_inspect_spectrum_file(m, context.c_str(), noise_seed, &text)) == STNP_OK) {
        std::printf("%s", text);
        stnp_string_free(text);
      }
      stnp_model_free(m);
    }
  } else if (*gradcheck) {
    return run_suite(STNP_SUITE_GRADCHECK, check_seed);
  } else if (*propcheck) {
    return run_suite(STNP_SUITE_PROPCHECK, check_seed);
  } else if (*scaling) {
    return run_suite(STNP_SUITE_SCALING, check_seed);
  } else if (*defaults) {
    if ((st = load_config(default_opts, &cfg)) != STNP_OK) return report(st);
    char* json = nullptr;
    if ((st = stnp_config_to_json(cfg, &json)) == STNP_OK) {
      std::printf("%s", json);
      stnp_string_free(json);
    }
  }
  stnp_config_free(cfg);
  return report(st);
}
