// Copyright 2026 The EyeDoc Authors.
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

#include "eyedoc/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eyedoc/errors.hpp"

namespace eyedoc::ad {

namespace {

constexpr char kMagic[8] = {'E', 'Y', 'E', 'D', 'O', 'C', 'K', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint: truncated archive");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace

void ParameterSet::add(const std::string& path, Tensor t) {
  if (!params_.emplace(path, std::move(t)).second)
    throw ContractError("parameters: duplicate path " + path);
}

Tensor& ParameterSet::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw IndexError("parameters: no entry " + path);
  return it->second;
}

const Tensor& ParameterSet::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw IndexError("parameters: no entry " + path);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [k, t] : params_)
    if (k.rfind(prefix, 0) == 0) out.add(k, t);
  return out;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [k, t] : other.params_) add(k, t);
}

std::size_t ParameterSet::load_values(const ParameterSet& source, bool require_all) {
  std::size_t copied = 0;
  for (auto& [k, t] : params_) {
    auto it = source.params_.find(k);
    if (it == source.params_.end()) {
      if (require_all) throw FormatError("parameters: checkpoint lacks " + k);
      continue;
    }
    if (it->second.shape() != t.shape())
      throw DimensionError("parameters: shape mismatch for " + k + ": " +
                           shape_str(it->second.shape()) + " vs " + shape_str(t.shape()));
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
    ++copied;
  }
  return copied;
}

void ParameterSet::set_requires_grad(bool flag) {
  for (auto& [_, t] : params_) t.set_requires_grad(flag);
}

std::string ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, t] : params_) {
    mix(k.data(), k.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    for (double v : t.data()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      mix(&bits, sizeof bits);
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(ckpt.version);
  w.u64(ckpt.metadata.size());
  w.bytes(ckpt.metadata.data(), ckpt.metadata.size());
  w.u64(ckpt.params.size());
  for (const auto& [name, t] : ckpt.params.items()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw FormatError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw FormatError("checkpoint: bad magic in " + path.string());
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1)
    throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version));
  ckpt.metadata = r.str(r.u64());
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> data(numel(shape));
    for (double& v : data) v = r.f64();
    ckpt.params.add(name, Tensor::from(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes in " + path.string());
  return ckpt;
}

}  // namespace eyedoc::ad
