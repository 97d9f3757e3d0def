#include "fogseg/nets.hpp"

#include "fogseg/rng.hpp"

namespace fogseg {
namespace nets {

namespace {

// Every tensor draws from its own stream keyed by (seed, name), so identical
// names initialize identically across builds — and across FSnet/DFnet, whose
// encoders share the namespace.
Tensorf init_normal(const std::vector<int>& dims, uint64_t seed, const std::string& name,
                    double stddev) {
  Tensorf t(dims, 0.0f);
  Rng rng(mix_seed(seed, name));
  float* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = float(rng.normal(0.0, stddev));
  return t;
}

struct Builder {
  ParamSet ps;
  uint64_t seed;

  void conv(const std::string& prefix, int cin, int cout, int k, bool zero_init = false) {
    const std::string wname = prefix + ".weight";
    if (zero_init)
      ps.add(wname, Tensorf({cout, cin, k, k}, 0.0f));
    else
      ps.add(wname, init_normal({cout, cin, k, k}, seed, wname,
                                std::sqrt(2.0 / (double(cin) * k * k))));
    ps.add(prefix + ".bias", Tensorf({cout}, 0.0f));
  }

  void convt(const std::string& prefix, int cin, int cout, int k) {
    const std::string wname = prefix + ".weight";
    ps.add(wname, init_normal({cin, cout, k, k}, seed, wname, std::sqrt(2.0 / double(cin))));
    ps.add(prefix + ".bias", Tensorf({cout}, 0.0f));
  }

  void bn(const std::string& prefix, int c) {
    ps.add(prefix + ".gamma", Tensorf({c}, 1.0f));
    ps.add(prefix + ".beta", Tensorf({c}, 0.0f));
    ps.add(prefix + ".running_mean", Tensorf({c}, 0.0f));
    ps.add(prefix + ".running_var", Tensorf({c}, 1.0f));
  }
};

void build_encoder(Builder& b, const ArchConfig& cfg) {
  const int stem = cfg.stem_channels();
  b.conv("encoder.stem.conv", 3, stem, 3);
  b.bn("encoder.stem.bn", stem);
  int prev = stem;
  for (int i = 1; i <= cfg.n_stages; ++i) {
    const int c = cfg.stage_channels[size_t(i - 1)];
    const std::string p = "encoder.stage" + std::to_string(i);
    b.conv(p + ".conv1", prev, c, 3);
    b.bn(p + ".bn1", c);
    b.conv(p + ".conv2", c, c, 3);
    b.bn(p + ".bn2", c);
    b.conv(p + ".skip", prev, c, 1);
    b.bn(p + ".skip_bn", c);
    prev = c;
  }
}

}  // namespace

ParamSet build_segnet(const ArchConfig& cfg, uint64_t seed) {
  cfg.validate();
  Builder b{ParamSet{}, seed};
  build_encoder(b, cfg);

  const auto& ch = cfg.stage_channels;
  const int n = cfg.n_stages;
  {
    const std::string p = "decoder.refine" + std::to_string(n);
    b.conv(p + ".conv", ch[size_t(n - 1)], ch[size_t(n - 1)], 3);
    b.bn(p + ".bn", ch[size_t(n - 1)]);
  }
  for (int i = n - 1; i >= 1; --i) {
    const std::string p = "decoder.refine" + std::to_string(i);
    b.conv(p + ".top", ch[size_t(i)], ch[size_t(i - 1)], 1);
    b.conv(p + ".lat", ch[size_t(i - 1)], ch[size_t(i - 1)], 1);
    b.conv(p + ".conv", ch[size_t(i - 1)], ch[size_t(i - 1)], 3);
    b.bn(p + ".bn", ch[size_t(i - 1)]);
  }
  // zero-initialized head: an untrained net emits the uniform posterior
  b.conv("decoder.head", ch[0], cfg.num_classes, 1, /*zero_init=*/true);
  return std::move(b.ps);
}

ParamSet build_dfnet(const ArchConfig& cfg, uint64_t seed) {
  cfg.validate();
  Builder b{ParamSet{}, seed};
  build_encoder(b, cfg);

  const auto& ch = cfg.stage_channels;
  const int stem = cfg.stem_channels();
  for (int i = cfg.n_stages; i >= 1; --i) {
    const std::string p = "dfdec.up" + std::to_string(i);
    const int cin = ch[size_t(i - 1)];
    const int cout = i >= 2 ? ch[size_t(i - 2)] : stem;
    b.convt(p + ".convt", cin, cout, 2);
    b.bn(p + ".bn1", cout);
    b.conv(p + ".conv", cout, cout, 3);
    b.bn(p + ".bn2", cout);
    if (cfg.decoder_depth == DecoderDepth::heavy) {
      for (int j = 1; j <= 3; ++j) {
        const std::string r = p + ".res" + std::to_string(j);
        b.conv(r + ".conv1", cout, cout, 3);
        b.bn(r + ".bn1", cout);
        b.conv(r + ".conv2", cout, cout, 3);
        b.bn(r + ".bn2", cout);
      }
    }
  }
  // zero-initialized: restoration starts from a flat mid-gray guess instead
  // of amplified decoder noise
  b.conv("dfdec.out.conv", stem, cfg.dfnet_out_channels, 3, /*zero_init=*/true);
  return std::move(b.ps);
}

ParamSet splice_encoder(const ParamSet& source, const ParamSet& target) {
  ParamSet out;
  for (const auto& [name, t] : target.items()) {
    if (is_encoder_param(name)) {
      if (!source.has(name)) throw SpliceError("splice: source missing parameter " + name);
      const Tensorf& s = source.at(name);
      if (!s.same_shape(t))
        throw SpliceError("splice: shape mismatch for " + name + " " + s.shape_str() + " vs " +
                          t.shape_str());
      out.add(name, s);
    } else {
      out.add(name, t);
    }
  }
  return out;
}

SegOutput seg_forward(const ArchConfig& cfg, const ParamSet& ps, const Tensorf& image) {
  GraphParams<float> gp(ps, /*trainable=*/false);
  SegGraph<float> g = seg_forward_graph(cfg, gp, make_const(image));
  SegOutput out;
  out.logits = g.logits->value;
  for (auto& f : g.encoder_feats) out.encoder_feats.push_back(f->value);
  for (auto& f : g.decoder_feats) out.decoder_feats.push_back(f->value);
  return out;
}

DfOutput dfnet_forward(const ArchConfig& cfg, const ParamSet& ps, const Tensorf& image) {
  GraphParams<float> gp(ps, /*trainable=*/false);
  DfGraph<float> g = dfnet_forward_graph(cfg, gp, make_const(image));
  DfOutput out;
  out.out = g.out->value;
  for (auto& f : g.encoder_feats) out.encoder_feats.push_back(f->value);
  return out;
}

}  // namespace nets
}  // namespace fogseg
