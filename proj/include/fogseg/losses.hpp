#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "fogseg/nn_ops.hpp"

// Training objectives. Graph-level functions take Var handles so gradient
// routing is decided by how the caller built the inputs (frozen branches are
// constant leaves); the plain-Tensor overloads exist for metrics and tests.

namespace fogseg {
namespace losses {

inline constexpr int kIgnoreLabel = 255;

enum class KlDirection { clean_ref, fog_ref };

inline const char* to_string(KlDirection d) {
  return d == KlDirection::clean_ref ? "clean_ref" : "fog_ref";
}

// ---- graph-level ----

template <typename T>
Var<T> l1_similarity(const Var<T>& a, const Var<T>& b) {
  return mean_abs_diff(a, b);
}

template <typename T>
Var<T> pyramid_l1(const std::vector<Var<T>>& a, const std::vector<Var<T>>& b,
                  const char* what) {
  if (a.size() != b.size() || a.empty())
    throw DimensionError(std::string(what) + ": pyramid stage counts differ or are empty");
  Var<T> acc = mean_abs_diff(a[0], b[0]);
  for (size_t i = 1; i < a.size(); ++i) acc = add(acc, mean_abs_diff(a[i], b[i]));
  return acc;
}

// Sum over encoder stages of the per-stage mean |e_def - e_cl|.
template <typename T>
Var<T> dct_loss(const std::vector<Var<T>>& e_def, const std::vector<Var<T>>& e_cl) {
  return pyramid_l1(e_def, e_cl, "dct_loss");
}

// Decoder-stage alignment plus logit alignment, both plain L1.
template <typename T>
Var<T> sed_loss(const std::vector<Var<T>>& d_def, const std::vector<Var<T>>& d_cl,
                const Var<T>& s_def, const Var<T>& s_cl) {
  return add(pyramid_l1(d_def, d_cl, "sed_loss"), mean_abs_diff(s_def, s_cl));
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const Tensori& labels) {
  return softmax_cross_entropy(logits, labels, kIgnoreLabel);
}

// KL between the two branch posteriors; by default the clean branch is the
// reference distribution. The reference is detached so it guides the other
// branch without being dragged toward it.
template <typename T>
Var<T> kl_consistency(const Var<T>& s_def, const Var<T>& s_cl,
                      KlDirection dir = KlDirection::clean_ref) {
  if (dir == KlDirection::clean_ref)
    return kl_divergence_logits(make_const(s_cl->value), s_def);
  return kl_divergence_logits(make_const(s_def->value), s_cl);
}

template <typename T>
Var<T> finetune_total(const Var<T>& fog_ce, const Var<T>& clean_ce, const Var<T>& kl,
                      T lambda_con) {
  if (lambda_con < T(0)) throw ConfigError("finetune_total: lambda_con must be >= 0");
  return add(add(fog_ce, clean_ce), scale(kl, lambda_con));
}

template <typename T>
Var<T> l1_pixel_loss(const Var<T>& defogged, const Var<T>& clean) {
  return mean_abs_diff(defogged, clean);
}

// ---- plain-value overloads ----

template <typename T>
T l1_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "l1_similarity");
  if (a.numel() == 0) throw DimensionError("l1_similarity: empty input");
  T acc = T(0);
  const T* ad = a.data();
  const T* bd = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(ad[i] - bd[i]);
  return acc / T(a.numel());
}

template <typename T>
T dct_loss(const std::vector<Tensor<T>>& e_def, const std::vector<Tensor<T>>& e_cl) {
  if (e_def.size() != e_cl.size() || e_def.empty())
    throw DimensionError("dct_loss: pyramid stage counts differ or are empty");
  T acc = T(0);
  for (size_t i = 0; i < e_def.size(); ++i) acc += l1_similarity(e_def[i], e_cl[i]);
  return acc;
}

template <typename T>
T sed_loss(const std::vector<Tensor<T>>& d_def, const std::vector<Tensor<T>>& d_cl,
           const Tensor<T>& s_def, const Tensor<T>& s_cl) {
  if (d_def.size() != d_cl.size() || d_def.empty())
    throw DimensionError("sed_loss: pyramid stage counts differ or are empty");
  T acc = T(0);
  for (size_t i = 0; i < d_def.size(); ++i) acc += l1_similarity(d_def[i], d_cl[i]);
  return acc + l1_similarity(s_def, s_cl);
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, const Tensori& labels) {
  auto v = softmax_cross_entropy(make_const(logits), labels, kIgnoreLabel);
  return v->value[0];
}

template <typename T>
T kl_consistency(const Tensor<T>& s_def, const Tensor<T>& s_cl,
                 KlDirection dir = KlDirection::clean_ref) {
  auto v = kl_consistency(make_const(s_def), make_const(s_cl), dir);
  return v->value[0];
}

template <typename T>
T finetune_total(T fog_ce, T clean_ce, T kl, T lambda_con) {
  if (lambda_con < T(0)) throw ConfigError("finetune_total: lambda_con must be >= 0");
  return fog_ce + clean_ce + lambda_con * kl;
}

template <typename T>
T l1_pixel_loss(const Tensor<T>& defogged, const Tensor<T>& clean) {
  return l1_similarity(defogged, clean);
}

// ---- per-step scalar record ----

struct LossReport {
  std::optional<float> dct, sed, l1_pix, fog_ce, clean_ce, kl_con, total;

  static const char* csv_columns() { return "dct,sed,l1_pix,fog_ce,clean_ce,kl_con,total"; }

  std::string csv_fields() const {
    auto fmt = [](const std::optional<float>& v) -> std::string {
      if (!v) return "";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", double(*v));
      return buf;
    };
    return fmt(dct) + "," + fmt(sed) + "," + fmt(l1_pix) + "," + fmt(fog_ce) + "," +
           fmt(clean_ce) + "," + fmt(kl_con) + "," + fmt(total);
  }
};

}  // namespace losses
using namespace losses;
}  // namespace fogseg
