// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Named learnable tensors plus per-parameter optimizer slots.
//
// Checkpoint layout (little-endian):
//   char[8] magic "DPTBFCK1"
//   u64     parameter count
//   per parameter, in insertion order:
//     u32 name length, name bytes (no terminator)
//     u8  dtype tag (0 = f32, 1 = f64)
//     u32 rank, u64 x rank dims
//     raw values, prod(dims) elements of the tagged dtype

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dptbf/autodiff.hpp"
#include "dptbf/common.hpp"

namespace dptbf {

template <typename Scalar>
class ParamStore {
 public:
  using Tensor = ad::Tensor<Scalar>;
  using Array = typename Tensor::Array;

  struct Slot {
    Tensor param;
    Array m, v;  // Adam moments
  };

  /// Registers a new trainable tensor; names are unique and shapes fixed.
  Tensor add(const std::string& name, ad::Shape shape, Array values) {
    if (index_.count(name)) throw ValidationError("param store: duplicate parameter '" + name + "'");
    Tensor t = Tensor::from(std::move(shape), std::move(values), true);
    index_[name] = slots_.size();
    names_.push_back(name);
    slots_.push_back({t, Array::Zero(t.size()), Array::Zero(t.size())});
    return t;
  }

  /// Uniform(-bound, bound) initialization from `rng`.
  Tensor add_uniform(const std::string& name, ad::Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array values(ad::numel(shape));
    for (Index i = 0; i < values.size(); ++i) values[i] = static_cast<Scalar>(dist(rng));
    return add(name, std::move(shape), std::move(values));
  }

  Tensor add_constant(const std::string& name, ad::Shape shape, Scalar value) {
    const Index n = ad::numel(shape);
    return add(name, std::move(shape), Array::Constant(n, value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const { return slot(name).param; }
  Slot& slot(const std::string& name) { return slots_.at(find(name)); }
  const Slot& slot(const std::string& name) const { return slots_.at(find(name)); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::size_t size() const { return slots_.size(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& s : slots_) n += s.param.size();
    return n;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& s : slots_) out.push_back(s.param);
    return out;
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void save(const std::filesystem::path& path) const {
    atomic_write(path, [&](std::ostream& os) {
      os.write("DPTBFCK1", 8);
      put<std::uint64_t>(os, slots_.size());
      for (std::size_t i = 0; i < slots_.size(); ++i) {
        const auto& name = names_[i];
        const auto& t = slots_[i].param;
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(os, sizeof(Scalar) == 8 ? 1 : 0);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (Index d : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.value().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
      }
    });
  }

  /// Overwrites values of existing parameters (names and shapes must match),
  /// or populates an empty store. Values of the other precision are converted.
  void load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "DPTBFCK1", 8) != 0) throw IoError(path.string() + ": not a checkpoint");
    const bool populate = slots_.empty();
    const auto count = get<std::uint64_t>(is);
    if (!populate && count != slots_.size())
      throw IoError(path.string() + ": checkpoint has " + std::to_string(count) + " parameters, model has " +
                    std::to_string(slots_.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = get<std::uint32_t>(is);
      if (len > 4096) throw IoError(path.string() + ": corrupt parameter name");
      std::string name(len, '\0');
      is.read(name.data(), len);
      const auto dtype = get<std::uint8_t>(is);
      if (dtype > 1) throw IoError(path.string() + ": unknown dtype tag");
      const auto rank = get<std::uint32_t>(is);
      if (rank > 8) throw IoError(path.string() + ": corrupt rank");
      ad::Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get<std::uint64_t>(is)));
      const Index n = ad::numel(shape);
      Array values(n);
      if (dtype == 1) {
        std::vector<double> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(double)));
        for (Index k = 0; k < n; ++k) values[k] = static_cast<Scalar>(raw[k]);
      } else {
        std::vector<float> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
        for (Index k = 0; k < n; ++k) values[k] = static_cast<Scalar>(raw[k]);
      }
      if (!is) throw IoError(path.string() + ": truncated checkpoint");
      if (populate) {
        add(name, shape, std::move(values));
      } else {
        if (!contains(name)) throw IoError(path.string() + ": unexpected parameter '" + name + "'");
        Tensor& t = slot(name).param;
        if (t.shape() != shape)
          throw IoError(path.string() + ": shape mismatch for '" + name + "': " + ad::to_string(shape) + " vs " +
                        ad::to_string(t.shape()));
        t.mutable_value() = std::move(values);
      }
    }
  }

 private:
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("param store: no parameter '" + name + "'");
    return it->second;
  }

  template <typename T>
  static void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated checkpoint");
    return v;
  }

  std::vector<Slot> slots_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dptbf
