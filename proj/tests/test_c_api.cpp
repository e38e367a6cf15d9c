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

// Exercises the shared library through its C interface only.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "stnp/stnp.h"

namespace fs = std::filesystem;

namespace {

void set(stnp_config* c, const char* key, const std::string& value) {
  const auto st = stnp_config_set(c, key, value.c_str());
  INFO(key << ": " << stnp_last_error());
  REQUIRE(st == STNP_OK);
}

stnp_config* small_config(const fs::path& out) {
  stnp_config* c = nullptr;
  REQUIRE(stnp_config_default(&c) == STNP_OK);
  set(c, "model.d_model", "16");
  set(c, "model.n_layers", "1");
  set(c, "model.d_ff", "16");
  set(c, "model.mlp_hidden", "8");
  set(c, "model.mlp_out", "8");
  set(c, "model.head_hidden", "8");
  set(c, "model.branches.0.K", "16");
  set(c, "model.branches.0.Q", "2");
  set(c, "model.branches.0.D0", "2");
  set(c, "model.branches.0.resp_net.channels", "4");
  set(c, "model.branches.0.resp_net.layers", "2");
  set(c, "model.branches.0.resp_net.kernel_size", "3");
  set(c, "train.steps", "6");
  set(c, "train.batch_size", "2");
  set(c, "eval.n_batches", "2");
  set(c, "eval.batch_size", "2");
  set(c, "out_dir", out.string());
  return c;
}

}  // namespace

TEST_CASE("config handles report errors by key") {
  stnp_config* c = nullptr;
  REQUIRE(stnp_config_default(&c) == STNP_OK);
  CHECK(stnp_config_set(c, "train.nope", "1") == STNP_ERR_INVALID_CONFIG);
  CHECK(std::string(stnp_last_error()).find("train.nope") != std::string::npos);
  CHECK(stnp_config_set(c, "train.steps", "-5") == STNP_ERR_INVALID_CONFIG);
  CHECK(std::string(stnp_last_error()).find("train.steps") != std::string::npos);
  CHECK(stnp_config_set(c, "train.steps", "10") == STNP_OK);
  CHECK(std::string(stnp_last_error()).empty());
  char* json = nullptr;
  REQUIRE(stnp_config_to_json(c, &json) == STNP_OK);
  CHECK(std::string(json).find("\"steps\": 10") != std::string::npos);
  stnp_config* back = nullptr;
  CHECK(stnp_config_from_json(json, &back) == STNP_OK);
  stnp_string_free(json);
  stnp_config_free(back);
  CHECK(stnp_config_from_json("{}", &back) == STNP_ERR_INVALID_CONFIG);
  CHECK(stnp_config_load("/nonexistent/c.json", &back) == STNP_ERR_IO);
  CHECK(stnp_config_set(nullptr, "a", "b") == STNP_ERR_INVALID_ARGUMENT);
  CHECK(std::string(stnp_status_name(STNP_ERR_NUMERICAL)) == "numerical");
  stnp_config_free(c);
}

TEST_CASE("train, persist, evaluate and predict through handles") {
  const fs::path dir = fs::temp_directory_path() / "stnp_c_api";
  fs::remove_all(dir);
  stnp_config* c = small_config(dir);

  int rows = 0;
  auto count = [](const stnp_metrics_row* r, void* user) {
    ++*static_cast<int*>(user);
    CHECK(std::isfinite(r->loss));
  };
  stnp_model* m = nullptr;
  stnp_eval_result ev{};
  char* run_dir = nullptr;
  REQUIRE(stnp_train(c, count, &rows, &m, &ev, &run_dir) == STNP_OK);
  CHECK(rows == 6 + 1);
  const fs::path run(run_dir);
  stnp_string_free(run_dir);
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(fs::exists(run / "config.json"));

  stnp_eval_result again{};
  REQUIRE(stnp_evaluate(m, &again) == STNP_OK);
  CHECK(again.mean_log_likelihood == ev.mean_log_likelihood);

  REQUIRE(stnp_model_save(m, (dir / "m.bin").string().c_str()) == STNP_OK);
  stnp_model* loaded = nullptr;
  REQUIRE(stnp_model_load(c, (run / "checkpoint.bin").string().c_str(), &loaded) == STNP_OK);
  stnp_eval_result third{};
  REQUIRE(stnp_evaluate(loaded, &third) == STNP_OK);
  CHECK(third.mean_log_likelihood == ev.mean_log_likelihood);

  const std::vector<double> xc{-1.0, 0.0, 1.0}, yc{0.5, -0.2, 0.1}, xt{-0.5, 0.5};
  double mu[2], sigma[2], mu2[2], sigma2[2];
  REQUIRE(stnp_predict(loaded, xc.data(), yc.data(), 3, xt.data(), 2, 9, mu, sigma) == STNP_OK);
  REQUIRE(stnp_predict(m, xc.data(), yc.data(), 3, xt.data(), 2, 9, mu2, sigma2) == STNP_OK);
  for (int i = 0; i < 2; ++i) {
    CHECK(sigma[i] > 0.0);
    CHECK(mu[i] == mu2[i]);
    CHECK(sigma[i] == sigma2[i]);
  }
  CHECK(stnp_predict(m, nullptr, yc.data(), 3, xt.data(), 2, 9, mu, sigma) == STNP_ERR_INVALID_ARGUMENT);

  char* text = nullptr;
  REQUIRE(stnp_inspect_spectrum(m, xc.data(), yc.data(), 3, 1, &text) == STNP_OK);
  CHECK(std::string(text).find("# mixture") != std::string::npos);
  stnp_string_free(text);

  // A checkpoint from a different architecture is refused.
  stnp_config* other = nullptr;
  REQUIRE(stnp_config_default(&other) == STNP_OK);
  stnp_model* wrong = nullptr;
  CHECK(stnp_model_load(other, (run / "checkpoint.bin").string().c_str(), &wrong) == STNP_ERR_IO);
  CHECK(wrong == nullptr);

  stnp_model_free(loaded);
  stnp_model_free(m);
  stnp_config_free(other);
  stnp_config_free(c);
}

TEST_CASE("property suite runs through the C interface") {
  int all = 0, n = 0;
  auto cb = [](const stnp_check* c, void* user) {
    ++*static_cast<int*>(user);
    INFO(c->name << " " << c->value);
    CHECK(c->passed == 1);
  };
  REQUIRE(stnp_run_suite(STNP_SUITE_PROPCHECK, 3, cb, &n, &all, nullptr) == STNP_OK);
  CHECK(all == 1);
  CHECK(n >= 7);
  CHECK(stnp_run_suite(static_cast<stnp_suite>(42), 0, nullptr, nullptr, nullptr, nullptr) ==
        STNP_ERR_INVALID_ARGUMENT);
}
