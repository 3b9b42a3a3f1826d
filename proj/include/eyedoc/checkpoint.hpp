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

// Flat parameter archives.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "EYEDOCK1"
//   version    u32      (currently 1)
//   meta_len   u64, then meta_len bytes of UTF-8 JSON metadata
//   count      u64
//   count x { name_len u32, name bytes, rank u32, dims u64[rank],
//             payload f64[prod(dims)] (IEEE-754 binary64, little-endian) }
//
// Parameter paths are slash-separated and namespaced by component, e.g.
// "base/layer0/wq", "lora/layer1/v/down", "prefix/layer0/doctor".

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eyedoc/tensor.hpp"

namespace eyedoc::ad {

/// Ordered path -> tensor map. Holds handles, so updating a tensor through
/// the set updates the owning model.
class ParameterSet {
 public:
  void add(const std::string& path, Tensor t);
  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  const std::map<std::string, Tensor>& items() const { return params_; }

  /// Parameters whose path starts with `prefix`.
  ParameterSet subset(const std::string& prefix) const;
  std::vector<Tensor> tensors() const;

  /// Adds every entry of `other` (paths must not collide).
  void merge(const ParameterSet& other);

  /// Copies values from `source` into matching paths. Shapes must agree.
  /// Returns the number of tensors copied.
  std::size_t load_values(const ParameterSet& source, bool require_all = false);

  void set_requires_grad(bool flag);

  /// FNV-1a over paths, shapes and raw payload bits, as 16 hex digits.
  std::string checksum() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string metadata = "{}";  // JSON document
  ParameterSet params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eyedoc::ad
