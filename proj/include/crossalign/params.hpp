#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crossalign/tensor.hpp"

namespace crossalign::nn {

/// View of one trainable tensor and its gradient slot.
template <typename T>
struct Parameter {
  const std::string& name;
  Tensor<T>& value;
  Tensor<T>& grad;
};

/// Ordered collection of named parameters. Layers hold indices into it, so a
/// model can be copied without fixing up references. Gradients live in a
/// parallel array; per-example gradient buffers share the same layout.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    if (index_.contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.emplace_back(shape);
    grads_.emplace_back(std::move(shape));
    return names_.size() - 1;
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  Tensor<T>& grad(std::size_t i) { return grads_[i]; }
  const Tensor<T>& grad(std::size_t i) const { return grads_[i]; }
  Parameter<T> operator[](std::size_t i) { return {names_[i], values_[i], grads_[i]}; }

  std::span<Tensor<T>> values() noexcept { return values_; }
  std::span<const Tensor<T>> values() const noexcept { return values_; }
  std::span<Tensor<T>> grads() noexcept { return grads_; }
  std::span<const Tensor<T>> grads() const noexcept { return grads_; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ValidationError("no parameter named '" + std::string(name) + "'");
  }

  void zero_grad() {
    for (auto& g : grads_) g.zero();
  }

  /// Zero-filled tensors shaped like the parameters.
  std::vector<Tensor<T>> make_grad_buffer() const {
    std::vector<Tensor<T>> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.emplace_back(v.shape());
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> grads_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
using GradSpan = std::span<Tensor<T>>;

}  // namespace crossalign::nn
