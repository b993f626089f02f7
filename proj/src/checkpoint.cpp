// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "trnk/binary_io.hpp"

namespace trnk {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::create(const std::string& name, Shape shape, Rng& rng, double lo, double hi) {
  return add(name, Tensor::parameter(std::move(shape), rng, lo, hi));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

void ParameterStore::assign(const std::vector<std::pair<std::string, Tensor>>& values) {
  if (values.size() != entries_.size()) {
    throw std::invalid_argument("parameter count mismatch: have " + std::to_string(entries_.size()) + ", got " +
                                std::to_string(values.size()));
  }
  for (const auto& [name, src] : values) {
    Tensor dst = get(name);
    if (dst.shape() != src.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(dst.shape()) + ", checkpoint has " +
                       shape_string(src.shape()));
    }
    auto out = dst.mutable_data();
    auto in = src.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

const std::string& Checkpoint::header_value(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw io::FormatError("checkpoint header has no '" + key + "'");
}

bool Checkpoint::has_header(const std::string& key) const {
  for (const auto& kv : header) {
    if (kv.first == key) return true;
  }
  return false;
}

namespace {

constexpr const char* kMagic = "TRNK1";

void put_string(std::ostream& os, const std::string& s) {
  io::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = io::get_u32(is);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw io::FormatError("truncated checkpoint string");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kMagic, 5);
  std::string header;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint header entries must be single-line key=value");
    }
    header += k + "=" + v + "\n";
  }
  put_string(os, header);
  io::put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(os, name);
    io::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) io::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) io::put_f64(os, v);
  }
  if (!os) throw io::FormatError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, kMagic);
  Checkpoint ckpt;
  std::istringstream header(get_string(is));
  std::string line;
  while (std::getline(header, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw io::FormatError("malformed checkpoint header line: " + line);
    ckpt.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto count = io::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    Shape shape(io::get_u32(is));
    for (auto& d : shape) d = io::get_u32(is);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = io::get_f64(is);
    ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::FormatError("cannot write " + path.string());
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot read checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace trnk
