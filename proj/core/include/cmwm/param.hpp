#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmwm/tensor.hpp"

namespace cmwm {

/// Named trainable tensor with a persistent gradient accumulator.
/// Frozen parameters receive neither gradients nor optimizer updates.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

enum class Init { zeros, ones, normal };

/// Owns all parameters of a model family, keyed by hierarchical names
/// ("base/layer0/attn/wq", "extractor/mlp/w1", ...). Addresses are stable
/// for the lifetime of the store. Initialization is derived from the store
/// seed and the parameter name, so creation order does not matter.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : rng_(seed) {}

  Parameter<T>* create(const std::string& name, std::vector<int> shape,
                       Init init = Init::normal, double stddev = 0.02) {
    if (params_.count(name))
      throw std::invalid_argument("parameter already exists: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    switch (init) {
      case Init::zeros:
        p->value = Tensor<T>::zeros(shape);
        break;
      case Init::ones:
        p->value = Tensor<T>::full(shape, T(1));
        break;
      case Init::normal: {
        SplitRng r = rng_.split(name);
        p->value = Tensor<T>::randn(shape, r, static_cast<T>(stddev));
        break;
      }
    }
    p->grad = Tensor<T>::zeros(shape);
    Parameter<T>* raw = p.get();
    params_.emplace(name, std::move(p));
    return raw;
  }

  Parameter<T>* get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::out_of_range("no such parameter: " + name);
    return it->second.get();
  }

  bool exists(const std::string& name) const { return params_.count(name) > 0; }

  /// All parameters in lexicographic name order.
  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& [k, v] : params_) out.push_back(v.get());
    return out;
  }

  std::vector<Parameter<T>*> with_prefix(const std::string& prefix) {
    std::vector<Parameter<T>*> out;
    for (auto& [k, v] : params_)
      if (k.rfind(prefix, 0) == 0) out.push_back(v.get());
    return out;
  }

  void zero_grads() {
    for (auto& [k, v] : params_)
      for (int64_t i = 0; i < v->grad.numel(); ++i) v->grad[i] = T(0);
  }

  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto* p : with_prefix(prefix)) p->trainable = trainable;
  }

  int64_t count(const std::string& prefix = "", bool trainable_only = false) {
    int64_t n = 0;
    for (auto& [k, v] : params_) {
      if (!prefix.empty() && k.rfind(prefix, 0) != 0) continue;
      if (trainable_only && !v->trainable) continue;
      n += v->value.numel();
    }
    return n;
  }

  /// FNV-1a over little-endian f32 bytes of the values, name order.
  /// Matches the precision stored in checkpoints.
  uint64_t checksum(const std::string& prefix = "") const {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const void* data, size_t len) {
      const auto* bytes = static_cast<const unsigned char*>(data);
      for (size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [k, v] : params_) {
      if (!prefix.empty() && k.rfind(prefix, 0) != 0) continue;
      feed(k.data(), k.size());
      for (int64_t i = 0; i < v->value.numel(); ++i) {
        const float f = static_cast<float>(v->value[i]);
        feed(&f, sizeof(f));
      }
    }
    return h;
  }

 private:
  std::map<std::string, std::unique_ptr<Parameter<T>>> params_;
  SplitRng rng_;
};

}  // namespace cmwm
