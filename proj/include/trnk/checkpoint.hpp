// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "trnk/numerics.hpp"

namespace trnk {

/// Named trainable tensors in registration order.
class ParameterStore {
 public:
  /// Registers `t` (marked as requiring grad) under a unique name.
  Tensor add(const std::string& name, Tensor t);
  Tensor create(const std::string& name, Shape shape, Rng& rng, double lo = -0.1, double hi = 0.1);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t num_scalars() const;
  void zero_grad();
  /// Copies values from a same-named, same-shaped set; anything else is an error.
  void assign(const std::vector<std::pair<std::string, Tensor>>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// "TRNK1" container: a key=value text header, then named f64 tensors.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string& header_value(const std::string& key) const;
  bool has_header(const std::string& key) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trnk
