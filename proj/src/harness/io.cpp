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

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stnp/error.hpp"
#include "stnp/harness.hpp"

namespace stnp::harness {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'N', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string format_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%s,%s,%.17g,%.17g,%.17g,%.17g,%" PRIu64, r.step, r.split.c_str(),
                r.variant.c_str(), r.mean_log_likelihood, r.rmse, r.loss, r.wall_ms, r.seed);
  return buf;
}

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) fail(ErrorKind::Io, "checkpoint '" + path_ + "': truncated");
  }

  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, std::string("cannot open ") + what + " '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) fail(ErrorKind::Io, "cannot write metrics '" + path + "'");
  std::fprintf(file_, "%s\n", kMetricsHeader);
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

void MetricsWriter::append(const MetricsRow& row) {
  std::fprintf(file_, "%s\n", format_row(row).c_str());
}

void MetricsWriter::flush() {
  if (std::fflush(file_) != 0) fail(ErrorKind::Io, "flush failed for '" + path_ + "'");
}

void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  MetricsWriter w(path);
  for (const auto& r : rows) w.append(r);
  w.flush();
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open metrics '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    fail(ErrorKind::Io, "metrics '" + path + "': unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) fail(ErrorKind::Io, "metrics '" + path + "' line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      MetricsRow r;
      r.step = std::stoll(f[0]);
      r.split = f[1];
      r.variant = f[2];
      r.mean_log_likelihood = std::stod(f[3]);
      r.rmse = std::stod(f[4]);
      r.loss = std::stod(f[5]);
      r.wall_ms = std::stod(f[6]);
      r.seed = std::stoull(f[7]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      fail(ErrorKind::Io, "metrics '" + path + "' line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

void save_checkpoint(const model::ParamStore& store, const std::string& path) {
  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.params().size()));
  for (const auto& [name, t] : store.params()) {  // std::map: sorted by name
    require(name.size() <= 0xffff, ErrorKind::Io, "checkpoint: parameter name too long");
    require(t.rank() <= 0xff, ErrorKind::Io, "checkpoint: rank too large");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim(d)));
    for (double v : t.vec()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

model::ParamStore load_checkpoint(const std::string& path) {
  const std::string data = slurp(path, "checkpoint");
  ByteReader r(data, path);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    fail(ErrorKind::Io, "checkpoint '" + path + "': bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(ErrorKind::Io, "checkpoint '" + path + "': unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  model::ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.bytes(len);
    const auto rank = r.get<std::uint8_t>();
    diff::Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>();
      n *= d;
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    if (store.contains(name)) fail(ErrorKind::Io, "checkpoint '" + path + "': duplicate entry '" + name + "'");
    store.add(name, diff::Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) fail(ErrorKind::Io, "checkpoint '" + path + "': trailing bytes");
  return store;
}

}  // namespace stnp::harness
