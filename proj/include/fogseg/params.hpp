#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fogseg/common.hpp"
#include "fogseg/tensor.hpp"

namespace fogseg {

// Named flat parameter collection; the unit of checkpointing, splicing and
// interpolation. Iteration order is insertion order, which every builder
// produces deterministically. Entries whose name contains ".running_" are
// normalization statistics: carried, spliced and interpolated like weights
// but never touched by optimizers.

class ParamSet {
 public:
  void add(const std::string& name, Tensorf t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensorf& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter name: " + name);
    return items_[it->second].second;
  }

  Tensorf& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter name: " + name);
    return items_[it->second].second;
  }

  void set(const std::string& name, Tensorf t) {
    Tensorf& dst = at(name);
    check_same_shape(dst, t, "ParamSet::set(" + name + ")");
    dst = std::move(t);
  }

  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  const std::vector<std::pair<std::string, Tensorf>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensorf>>& items() { return items_; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  bool bitwise_equal(const ParamSet& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].first != other.items_[i].first) return false;
      if (!items_[i].second.bitwise_equal(other.items_[i].second)) return false;
    }
    return true;
  }

  ParamSet clone() const {
    ParamSet out;
    for (const auto& [name, t] : items_) out.add(name, t.clone());
    return out;
  }

  bool all_finite() const {
    for (const auto& [name, t] : items_)
      if (!t.all_finite()) return false;
    return true;
  }

  static bool is_stat(const std::string& name) {
    return name.find(".running_") != std::string::npos;
  }

  uint64_t fingerprint() const {
    uint64_t h = kFnvOffset;
    for (const auto& [name, t] : items_) {
      h = fnv1a64(name, h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()),
                                   size_t(t.numel()) * sizeof(float)),
                  h);
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensorf>> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace fogseg
