#pragma once

#include <map>
#include <string>
#include <vector>

#include "fogseg/nn_ops.hpp"
#include "fogseg/params.hpp"

// Miniature segmentation network (FSnet) and defogging network (DFnet).
// Both encoders share one architecture and one parameter namespace
// ("encoder.*"), which is what makes encoder splicing total. Stage i of the
// encoder emits stage_channels[i-1] channels at stride 2^(i+1); the FSnet
// decoder mirrors those widths back up so encoder and decoder pyramids share
// one shape contract.

namespace fogseg {
namespace nets {

enum class DecoderDepth { light, heavy };

inline const char* to_string(DecoderDepth d) {
  return d == DecoderDepth::light ? "light" : "heavy";
}

struct ArchConfig {
  int n_stages = 4;
  std::vector<int> stage_channels = {16, 32, 64, 128};
  int num_classes = 5;
  DecoderDepth decoder_depth = DecoderDepth::light;
  int dfnet_out_channels = 3;  // 1 for the depth-estimation pretext

  int stem_channels() const { return std::max(stage_channels.at(0) / 2, 4); }

  void validate() const {
    if (n_stages != 4) throw ConfigError("arch: n_stages must be 4");
    if (int(stage_channels.size()) != n_stages)
      throw ConfigError("arch: need one channel width per stage");
    for (size_t i = 1; i < stage_channels.size(); ++i)
      if (stage_channels[i] <= stage_channels[i - 1])
        throw ConfigError("arch: stage_channels must be strictly increasing");
    if (stage_channels[0] < 4) throw ConfigError("arch: first stage width too small");
    if (num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
    if (dfnet_out_channels != 3 && dfnet_out_channels != 1)
      throw ConfigError("arch: dfnet_out_channels must be 3 or 1");
  }
};

ParamSet build_segnet(const ArchConfig& cfg, uint64_t seed);
ParamSet build_dfnet(const ArchConfig& cfg, uint64_t seed);

inline bool is_encoder_param(const std::string& name) {
  return name.rfind("encoder.", 0) == 0;
}

// target's decoder + source's encoder; throws SpliceError on any missing
// name or shape mismatch.
ParamSet splice_encoder(const ParamSet& source, const ParamSet& target);

// Batch-statistic sink. When a trainer passes one into a forward, every
// normalization site reports the per-channel moments of its input, and
// apply() folds them into the running estimates with the usual EMA. Phases
// that only align features never pass one, so their statistics stay frozen.
struct StatsCollector {
  float momentum = 0.1f;
  std::map<std::string, std::pair<Tensorf, Tensorf>> sums;  // prefix -> (mean sum, var sum)
  std::map<std::string, int> counts;

  void note(const std::string& prefix, const Tensorf& mean, const Tensorf& var) {
    auto it = sums.find(prefix);
    if (it == sums.end()) {
      sums.emplace(prefix, std::make_pair(mean.clone(), var.clone()));
      counts[prefix] = 1;
      return;
    }
    float* ms = it->second.first.mutable_data();
    float* vs = it->second.second.mutable_data();
    const float* m = mean.data();
    const float* v = var.data();
    for (int64_t i = 0; i < mean.numel(); ++i) {
      ms[i] += m[i];
      vs[i] += v[i];
    }
    counts[prefix] += 1;
  }

  void apply(ParamSet& ps) const {
    for (const auto& [prefix, mv] : sums) {
      const int n = counts.at(prefix);
      Tensorf& rm = ps.at(prefix + ".running_mean");
      Tensorf& rv = ps.at(prefix + ".running_var");
      float* rmd = rm.mutable_data();
      float* rvd = rv.mutable_data();
      const float* ms = mv.first.data();
      const float* vs = mv.second.data();
      for (int64_t i = 0; i < rm.numel(); ++i) {
        rmd[i] = (1.0f - momentum) * rmd[i] + momentum * ms[i] / float(n);
        rvd[i] = (1.0f - momentum) * rvd[i] + momentum * vs[i] / float(n);
      }
    }
  }
};

// Binds a ParamSet to graph leaves in precision T. Trainable entries become
// gradient-bearing leaves (statistics never do).
template <typename T>
class GraphParams {
 public:
  GraphParams(const ParamSet& ps, bool trainable) {
    for (const auto& [name, t] : ps.items()) {
      const bool rg = trainable && !ParamSet::is_stat(name);
      vars_.emplace(name, make_leaf(t.template cast<T>(), rg));
    }
  }

  const Var<T>& at(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("unknown parameter name: " + name);
    return it->second;
  }

  const Tensor<T>& value(const std::string& name) const { return at(name)->value; }

  // Gradient readback after backward(); zero tensors for untouched leaves.
  std::map<std::string, Tensor<T>> grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, v] : vars_) {
      if (!v->requires_grad) continue;
      if (v->grad.numel() == 0)
        out.emplace(name, Tensor<T>(v->value.dims(), T(0)));
      else
        out.emplace(name, v->grad);
    }
    return out;
  }

  void zero_grads() {
    for (auto& [name, v] : vars_) v->grad = Tensor<T>();
  }

 private:
  std::map<std::string, Var<T>> vars_;
};

namespace detail {

template <typename T>
void channel_moments(const Tensor<T>& x, Tensorf& mean, Tensorf& var) {
  const int C = x.dim(0);
  const int64_t hw = int64_t(x.dim(1)) * x.dim(2);
  mean = Tensorf({C}, 0.0f);
  var = Tensorf({C}, 0.0f);
  float* md = mean.mutable_data();
  float* vd = var.mutable_data();
  const T* xd = x.data();
  for (int c = 0; c < C; ++c) {
    double s = 0, s2 = 0;
    const T* row = xd + int64_t(c) * hw;
    for (int64_t i = 0; i < hw; ++i) {
      s += double(row[i]);
      s2 += double(row[i]) * double(row[i]);
    }
    const double m = s / double(hw);
    md[c] = float(m);
    vd[c] = float(std::max(0.0, s2 / double(hw) - m * m));
  }
}

template <typename T>
Var<T> bn(const GraphParams<T>& gp, const std::string& prefix, const Var<T>& x,
          StatsCollector* sc) {
  if (sc) {
    Tensorf mean, var;
    channel_moments(x->value, mean, var);
    sc->note(prefix, mean, var);
  }
  return channel_norm_affine(x, gp.at(prefix + ".gamma"), gp.at(prefix + ".beta"),
                             gp.value(prefix + ".running_mean"),
                             gp.value(prefix + ".running_var"));
}

template <typename T>
Var<T> conv(const GraphParams<T>& gp, const std::string& prefix, const Var<T>& x, int stride,
            int pad) {
  return conv2d(x, gp.at(prefix + ".weight"), gp.at(prefix + ".bias"), stride, pad);
}

template <typename T>
Var<T> convt(const GraphParams<T>& gp, const std::string& prefix, const Var<T>& x, int stride) {
  return conv_transpose2d(x, gp.at(prefix + ".weight"), gp.at(prefix + ".bias"), stride);
}

// stride-2 residual stage: 3x3/s2 + 3x3 against a 1x1/s2 projection
template <typename T>
Var<T> encoder_stage(const GraphParams<T>& gp, const std::string& prefix, const Var<T>& x,
                     StatsCollector* sc) {
  auto main = relu(bn(gp, prefix + ".bn1", conv(gp, prefix + ".conv1", x, 2, 1), sc));
  main = bn(gp, prefix + ".bn2", conv(gp, prefix + ".conv2", main, 1, 1), sc);
  auto skip = bn(gp, prefix + ".skip_bn", conv(gp, prefix + ".skip", x, 2, 0), sc);
  return relu(add(main, skip));
}

// stride-1 residual block used by the heavy DFnet decoder variant
template <typename T>
Var<T> res_block(const GraphParams<T>& gp, const std::string& prefix, const Var<T>& x,
                 StatsCollector* sc) {
  auto main = relu(bn(gp, prefix + ".bn1", conv(gp, prefix + ".conv1", x, 1, 1), sc));
  main = bn(gp, prefix + ".bn2", conv(gp, prefix + ".conv2", main, 1, 1), sc);
  return relu(add(main, x));
}

template <typename T>
std::vector<Var<T>> encoder_graph(const ArchConfig& cfg, const GraphParams<T>& gp,
                                  const Var<T>& image, StatsCollector* sc) {
  auto x = relu(bn(gp, "encoder.stem.bn", conv(gp, "encoder.stem.conv", image, 2, 1), sc));
  std::vector<Var<T>> feats;
  for (int i = 1; i <= cfg.n_stages; ++i) {
    x = encoder_stage(gp, "encoder.stage" + std::to_string(i), x, sc);
    feats.push_back(x);
  }
  return feats;
}

}  // namespace detail

template <typename T>
struct SegGraph {
  Var<T> logits;                      // {K,H,W}
  std::vector<Var<T>> encoder_feats;  // strides 4,8,16,32
  std::vector<Var<T>> decoder_feats;  // same shapes, refined top-down
};

template <typename T>
SegGraph<T> seg_forward_graph(const ArchConfig& cfg, const GraphParams<T>& gp,
                              const Var<T>& image, StatsCollector* sc = nullptr) {
  cfg.validate();
  if (!image->value.all_finite()) throw NumericError("seg_forward: non-finite input");
  if (image->value.dim(1) % 32 != 0 || image->value.dim(2) % 32 != 0)
    throw DimensionError("seg_forward: input spatial dims must be divisible by 32");
  using namespace detail;
  SegGraph<T> g;
  g.encoder_feats = encoder_graph(cfg, gp, image, sc);

  const int n = cfg.n_stages;
  std::vector<Var<T>> dec(static_cast<size_t>(n));
  {
    const std::string p = "decoder.refine" + std::to_string(n);
    dec[size_t(n - 1)] =
        relu(bn(gp, p + ".bn", conv(gp, p + ".conv", g.encoder_feats.back(), 1, 1), sc));
  }
  for (int i = n - 1; i >= 1; --i) {
    const std::string p = "decoder.refine" + std::to_string(i);
    auto top = conv(gp, p + ".top", upsample_bilinear(dec[size_t(i)], 2), 1, 0);
    auto lat = conv(gp, p + ".lat", g.encoder_feats[size_t(i - 1)], 1, 0);
    dec[size_t(i - 1)] = relu(bn(gp, p + ".bn", conv(gp, p + ".conv", add(top, lat), 1, 1), sc));
  }
  g.decoder_feats = dec;

  auto head = conv(gp, "decoder.head", dec[0], 1, 0);  // {K, H/4, W/4}
  g.logits = upsample_bilinear(head, 4);
  return g;
}

template <typename T>
struct DfGraph {
  Var<T> out;                         // {out_channels,H,W}, sigmoid-bounded
  std::vector<Var<T>> encoder_feats;  // strides 4,8,16,32
};

template <typename T>
DfGraph<T> dfnet_forward_graph(const ArchConfig& cfg, const GraphParams<T>& gp,
                               const Var<T>& image, StatsCollector* sc = nullptr) {
  cfg.validate();
  if (!image->value.all_finite()) throw NumericError("dfnet_forward: non-finite input");
  if (image->value.dim(1) % 32 != 0 || image->value.dim(2) % 32 != 0)
    throw DimensionError("dfnet_forward: input spatial dims must be divisible by 32");
  using namespace detail;
  DfGraph<T> g;
  g.encoder_feats = encoder_graph(cfg, gp, image, sc);

  auto x = g.encoder_feats.back();
  for (int i = cfg.n_stages; i >= 1; --i) {
    const std::string p = "dfdec.up" + std::to_string(i);
    x = relu(bn(gp, p + ".bn1", convt(gp, p + ".convt", x, 2), sc));
    x = relu(bn(gp, p + ".bn2", conv(gp, p + ".conv", x, 1, 1), sc));
    if (cfg.decoder_depth == DecoderDepth::heavy)
      for (int j = 1; j <= 3; ++j) x = res_block(gp, p + ".res" + std::to_string(j), x, sc);
  }
  // the four up blocks recover stride 2; a fixed bilinear doubling reaches
  // input resolution before the single output convolution
  x = upsample_bilinear(x, 2);
  g.out = sigmoid(conv(gp, "dfdec.out.conv", x, 1, 1));
  return g;
}

// ---- plain-value wrappers ----

struct SegOutput {
  Tensorf logits;
  std::vector<Tensorf> encoder_feats;
  std::vector<Tensorf> decoder_feats;
};

SegOutput seg_forward(const ArchConfig& cfg, const ParamSet& ps, const Tensorf& image);

struct DfOutput {
  Tensorf out;
  std::vector<Tensorf> encoder_feats;
};

DfOutput dfnet_forward(const ArchConfig& cfg, const ParamSet& ps, const Tensorf& image);

}  // namespace nets
using namespace nets;
}  // namespace fogseg
