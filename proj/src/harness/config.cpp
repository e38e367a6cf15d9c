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

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stnp/error.hpp"
#include "stnp/harness.hpp"

namespace stnp::harness {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& why) {
  fail(ErrorKind::InvalidConfig, "config key '" + path + "': " + why);
}

// Strict view of one JSON object: every key must be read exactly once,
// anything left over is reported by finish().
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(where(), "expected an object");
  }

  const json& at(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) config_error(join(key), "missing");
    seen_.insert(key);
    return *it;
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number()) config_error(join(key), "expected a number");
    return v.get<double>();
  }
  std::size_t count(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number_unsigned()) config_error(join(key), "expected a non-negative integer");
    return v.get<std::size_t>();
  }
  std::int64_t integer(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number_integer()) config_error(join(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::uint64_t seed(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_number_unsigned()) config_error(join(key), "expected a non-negative integer seed");
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_boolean()) config_error(join(key), "expected true or false");
    return v.get<bool>();
  }
  std::string text(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_string()) config_error(join(key), "expected a string");
    return v.get<std::string>();
  }
  tasks::Range range(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      config_error(join(key), "expected [lo, hi]");
    return {v[0].get<double>(), v[1].get<double>()};
  }
  std::vector<std::size_t> counts(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_array()) config_error(join(key), "expected an array of non-negative integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) config_error(join(key), "expected an array of non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }
  std::vector<double> numbers(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_array()) config_error(join(key), "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) config_error(join(key), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  Reader child(const std::string& key) { return Reader(at(key), join(key)); }

  // Calls fn with the parsed string, rethrowing library errors with the key path.
  template <typename F>
  auto named(const std::string& key, F fn) {
    const std::string s = text(key);
    try {
      return fn(s);
    } catch (const Error& e) {
      config_error(join(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) config_error(join(it.key()), "unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const tasks::Range& r) { return json::array({r.lo, r.hi}); }

const char* spacing_name(spectral::GridSpacing s) {
  return s == spectral::GridSpacing::Logarithmic ? "log" : "linear";
}
const char* covariance_name(spectral::Covariance c) {
  return c == spectral::Covariance::Diagonal ? "diagonal" : "isotropic";
}
const char* resp_kind_name(spectral::RespNetKind k) { return k == spectral::RespNetKind::Cnn ? "cnn" : "ffn"; }

json branch_json(const spectral::SpectralBranchConfig& b) {
  json mode;
  if (const auto* s = std::get_if<spectral::ScalarChannel>(&b.channel_mode)) {
    mode = {{"kind", "scalar"}, {"channel", s->channel}};
  } else if (const auto* p = std::get_if<spectral::ProjectedChannel>(&b.channel_mode)) {
    mode = {{"kind", "projected"}, {"u", p->u}};
  } else {
    mode = {{"kind", "shared"}, {"channels", std::get<spectral::SharedChannels>(b.channel_mode).channels}};
  }
  return {
      {"coords", b.coords},
      {"channel_mode", mode},
      {"K", b.K},
      {"Q", b.Q},
      {"D0", b.D0},
      {"period_min", b.period_min},
      {"period_max", b.period_max},
      {"spacing", spacing_name(b.spacing)},
      {"eps", b.eps},
      {"sigma_min", b.sigma_min},
      {"w_floor", b.w_floor},
      {"phase_enabled", b.phase_enabled},
      {"covariance", covariance_name(b.covariance)},
      {"resp_net",
       {{"kind", resp_kind_name(b.net.kind)},
        {"channels", b.net.channels},
        {"layers", b.net.layers},
        {"kernel_size", b.net.kernel_size}}},
  };
}

spectral::SpectralBranchConfig read_branch(Reader r) {
  spectral::SpectralBranchConfig b;
  b.coords = r.counts("coords");
  {
    Reader m = r.child("channel_mode");
    const std::string kind = m.text("kind");
    if (kind == "scalar") {
      b.channel_mode = spectral::ScalarChannel{m.count("channel")};
    } else if (kind == "projected") {
      b.channel_mode = spectral::ProjectedChannel{m.numbers("u")};
    } else if (kind == "shared") {
      b.channel_mode = spectral::SharedChannels{m.counts("channels")};
    } else {
      config_error(m.join("kind"), "expected scalar, projected or shared, got '" + kind + "'");
    }
    m.finish();
  }
  b.K = r.count("K");
  b.Q = r.count("Q");
  b.D0 = r.count("D0");
  b.period_min = r.number("period_min");
  b.period_max = r.number("period_max");
  const std::string spacing = r.text("spacing");
  if (spacing == "log") b.spacing = spectral::GridSpacing::Logarithmic;
  else if (spacing == "linear") b.spacing = spectral::GridSpacing::Linear;
  else config_error(r.join("spacing"), "expected log or linear, got '" + spacing + "'");
  b.eps = r.number("eps");
  b.sigma_min = r.number("sigma_min");
  b.w_floor = r.number("w_floor");
  b.phase_enabled = r.boolean("phase_enabled");
  const std::string cov = r.text("covariance");
  if (cov == "diagonal") b.covariance = spectral::Covariance::Diagonal;
  else if (cov == "isotropic") b.covariance = spectral::Covariance::Isotropic;
  else config_error(r.join("covariance"), "expected diagonal or isotropic, got '" + cov + "'");
  {
    Reader n = r.child("resp_net");
    const std::string kind = n.text("kind");
    if (kind == "cnn") b.net.kind = spectral::RespNetKind::Cnn;
    else if (kind == "ffn") b.net.kind = spectral::RespNetKind::Ffn;
    else config_error(n.join("kind"), "expected cnn or ffn, got '" + kind + "'");
    b.net.channels = n.count("channels");
    b.net.layers = n.count("layers");
    b.net.kernel_size = n.count("kernel_size");
    n.finish();
  }
  r.finish();
  return b;
}

json to_json_value(const RunConfig& c) {
  const auto& t = c.task;
  const auto& m = c.model;
  json branches = json::array();
  for (const auto& b : m.branches) branches.push_back(branch_json(b));
  return {
      {"seed", c.seed},
      {"eval_seed", c.eval_seed},
      {"out_dir", c.out_dir},
      {"record_wall_time", c.record_wall_time},
      {"task",
       {{"family", tasks::to_string(t.family)},
        {"x_range", range_json(t.x_range)},
        {"m_min", t.m_min},
        {"n_cap", t.n_cap},
        {"min_targets", t.min_targets},
        {"s", range_json(t.s)},
        {"ell", range_json(t.ell)},
        {"period", range_json(t.period)},
        {"noise", t.noise},
        {"saw_amplitude", t.saw_amplitude},
        {"saw_terms", json::array({t.saw_terms_min, t.saw_terms_max})},
        {"saw_freq", range_json(t.saw_freq)},
        {"saw_shift", range_json(t.saw_shift)}}},
      {"model",
       {{"variant", model::to_string(m.variant)},
        {"d_x", m.d_x},
        {"d_y", m.d_y},
        {"d_model", m.d_model},
        {"n_layers", m.n_layers},
        {"n_heads", m.n_heads},
        {"d_ff", m.d_ff},
        {"mlp_hidden", m.mlp_hidden},
        {"mlp_out", m.mlp_out},
        {"head_hidden", m.head_hidden},
        {"fan_width", m.fan_width},
        {"rff_samples", m.rff_samples},
        {"sigma_out_min", m.sigma_out_min},
        {"context_self_only", m.context_self_only},
        {"mlp_y_only", m.mlp_y_only},
        {"branches", branches}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"lr_min", c.train.lr_min},
        {"clip_norm", c.train.clip_norm},
        {"adam_beta1", c.train.adam.beta1},
        {"adam_beta2", c.train.adam.beta2},
        {"adam_eps", c.train.adam.eps},
        {"weight_decay", c.train.adam.weight_decay},
        {"threads", c.train.threads}}},
      {"eval", {{"n_batches", c.eval.n_batches}, {"batch_size", c.eval.batch_size}, {"every", c.eval.every}}},
  };
}

RunConfig from_json_value(const json& root) {
  RunConfig c;
  Reader r(root, "");
  c.seed = r.seed("seed");
  c.eval_seed = r.seed("eval_seed");
  c.out_dir = r.text("out_dir");
  c.record_wall_time = r.boolean("record_wall_time");
  {
    Reader t = r.child("task");
    c.task.family = t.named("family", tasks::task_family_from_string);
    c.task.x_range = t.range("x_range");
    c.task.m_min = t.count("m_min");
    c.task.n_cap = t.count("n_cap");
    c.task.min_targets = t.count("min_targets");
    c.task.s = t.range("s");
    c.task.ell = t.range("ell");
    c.task.period = t.range("period");
    c.task.noise = t.number("noise");
    c.task.saw_amplitude = t.number("saw_amplitude");
    const auto terms = t.counts("saw_terms");
    if (terms.size() != 2) config_error(t.join("saw_terms"), "expected [min, max]");
    c.task.saw_terms_min = terms[0];
    c.task.saw_terms_max = terms[1];
    c.task.saw_freq = t.range("saw_freq");
    c.task.saw_shift = t.range("saw_shift");
    t.finish();
  }
  {
    Reader m = r.child("model");
    c.model.variant = m.named("variant", model::variant_from_string);
    c.model.d_x = m.count("d_x");
    c.model.d_y = m.count("d_y");
    c.model.d_model = m.count("d_model");
    c.model.n_layers = m.count("n_layers");
    c.model.n_heads = m.count("n_heads");
    c.model.d_ff = m.count("d_ff");
    c.model.mlp_hidden = m.count("mlp_hidden");
    c.model.mlp_out = m.count("mlp_out");
    c.model.head_hidden = m.count("head_hidden");
    c.model.fan_width = m.count("fan_width");
    c.model.rff_samples = m.count("rff_samples");
    c.model.sigma_out_min = m.number("sigma_out_min");
    c.model.context_self_only = m.boolean("context_self_only");
    c.model.mlp_y_only = m.boolean("mlp_y_only");
    const auto& arr = m.at("branches");
    if (!arr.is_array()) config_error(m.join("branches"), "expected an array");
    c.model.branches.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      c.model.branches.push_back(read_branch(Reader(arr[i], m.join("branches") + "." + std::to_string(i))));
    m.finish();
  }
  {
    Reader t = r.child("train");
    c.train.steps = t.integer("steps");
    c.train.batch_size = t.count("batch_size");
    c.train.lr = t.number("lr");
    c.train.lr_min = t.number("lr_min");
    c.train.clip_norm = t.number("clip_norm");
    c.train.adam.beta1 = t.number("adam_beta1");
    c.train.adam.beta2 = t.number("adam_beta2");
    c.train.adam.eps = t.number("adam_eps");
    c.train.adam.weight_decay = t.number("weight_decay");
    c.train.threads = t.count("threads");
    t.finish();
  }
  {
    Reader e = r.child("eval");
    c.eval.n_batches = e.count("n_batches");
    c.eval.batch_size = e.count("batch_size");
    c.eval.every = e.integer("every");
    e.finish();
  }
  r.finish();
  c.validate();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  task.validate();
  if (model.d_x != 1 || model.d_y != 1)
    fail(ErrorKind::InvalidConfig, "model.d_x: synthetic tasks have scalar inputs and outputs");
  model.validate();
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::InvalidConfig, field + ": " + why);
  };
  if (train.steps < 0) bad("train.steps", "must be non-negative");
  if (train.batch_size == 0) bad("train.batch_size", "must be positive");
  if (!(train.lr >= 0.0)) bad("train.lr", "must be non-negative");
  if (!(train.lr_min >= 0.0 && train.lr_min <= train.lr)) bad("train.lr_min", "need 0 <= lr_min <= lr");
  if (!(train.clip_norm > 0.0)) bad("train.clip_norm", "must be positive");
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0)) bad("train.adam_beta1", "must lie in [0, 1)");
  if (!(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) bad("train.adam_beta2", "must lie in [0, 1)");
  if (!(train.adam.eps > 0.0)) bad("train.adam_eps", "must be positive");
  if (!(train.adam.weight_decay >= 0.0)) bad("train.weight_decay", "must be non-negative");
  if (train.threads == 0) bad("train.threads", "must be positive");
  if (eval.n_batches == 0) bad("eval.n_batches", "must be positive");
  if (eval.batch_size == 0) bad("eval.batch_size", "must be positive");
  if (eval.every < 0) bad("eval.every", "must be non-negative");
  if (out_dir.empty()) bad("out_dir", "must not be empty");
}

RunConfig default_run_config() { return RunConfig{}; }

std::string config_to_json(const RunConfig& cfg) { return to_json_value(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::InvalidConfig, std::string("config: malformed JSON: ") + e.what());
  }
  return from_json_value(root);
}

RunConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void write_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write config '" + path + "'");
  out << config_to_json(cfg);
  if (!out) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

void set_config_value(RunConfig& cfg, const std::string& path, const std::string& value) {
  json root = to_json_value(cfg);
  json* node = &root;
  std::string walked;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    walked = walked.empty() ? part : walked + "." + part;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        config_error(walked, "expected an array index");
      }
      if (idx >= node->size()) config_error(walked, "index out of range");
      node = &(*node)[idx];
    } else if (node->is_object()) {
      if (!node->contains(part)) config_error(walked, "unknown key");
      node = &(*node)[part];
    } else {
      config_error(walked, "parent is not an object or array");
    }
  }
  if (walked.empty()) config_error(path, "empty key path");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  *node = parsed;
  cfg = from_json_value(root);
}

}  // namespace stnp::harness
