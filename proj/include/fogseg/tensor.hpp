#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "fogseg/common.hpp"

namespace fogseg {

// Dense row-major tensor with shared storage. Copies are cheap and share the
// buffer; mutable_data() detaches when the buffer is shared, so values handed
// out through ParamSet or the autodiff graph are never mutated in place.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(std::vector<int> dims, T fill = T(0)) : dims_(std::move(dims)) {
    data_ = std::make_shared<std::vector<T>>(size_t(count(dims_)), fill);
  }

  static Tensor from(std::vector<int> dims, std::vector<T> values) {
    if (count(dims) != int64_t(values.size()))
      throw DimensionError("tensor: value count does not match shape");
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  const std::vector<int>& dims() const { return dims_; }
  int dim(size_t i) const { return dims_.at(i); }
  int ndim() const { return int(dims_.size()); }
  int64_t numel() const { return int64_t(data_->size()); }
  bool empty() const { return data_->empty(); }

  const T* data() const { return data_->data(); }
  T* mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    return data_->data();
  }

  T operator[](int64_t i) const { return (*data_)[size_t(i)]; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  Tensor reshaped(std::vector<int> dims) const {
    if (count(dims) != numel()) throw DimensionError("tensor: reshape changes element count");
    Tensor t = *this;
    t.dims_ = std::move(dims);
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.dims_ = dims_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->size());
    for (size_t i = 0; i < data_->size(); ++i) out[i] = U((*data_)[i]);
    return Tensor<U>::from(dims_, std::move(out));
  }

  void fill(T v) {
    T* p = mutable_data();
    std::fill(p, p + numel(), v);
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (T v : *data_)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool bitwise_equal(const Tensor& o) const {
    return dims_ == o.dims_ && *data_ == *o.data_;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << "]";
    return os.str();
  }

  static int64_t count(const std::vector<int>& dims) {
    int64_t n = 1;
    for (int d : dims) {
      if (d < 0) throw DimensionError("tensor: negative dimension");
      n *= d;
    }
    return dims.empty() ? 0 : n;
  }

 private:
  std::vector<int> dims_;
  std::shared_ptr<std::vector<T>> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;
using Tensori = Tensor<int32_t>;

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace fogseg
