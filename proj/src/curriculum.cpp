#include "fogseg/curriculum.hpp"

#include <cmath>
#include <utility>

#include "fogseg/optim.hpp"
#include "fogseg/rng.hpp"
#include "fogseg/trainlog.hpp"

namespace fogseg {
namespace curriculum {

namespace {

struct PairSample {
  Tensorf fog;
  Tensorf clean;
};

struct LabeledSample {
  Tensorf fog;
  Tensorf clean;
  Tensori label;
};

std::vector<PairSample> load_pairs(const Dataset& ds, const std::vector<size_t>& indices,
                                   const char* what) {
  if (indices.empty()) throw ConfigError(std::string(what) + ": no training pairs selected");
  std::vector<PairSample> out;
  out.reserve(indices.size());
  for (size_t i : indices) {
    if (!ds.entry(i).labels_visible)
      throw ConfigError(std::string(what) + ": sample " + ds.entry(i).id +
                        " withholds its clean reference");
    SceneSample s = ds.load(i);
    out.push_back({std::move(s.fog), std::move(s.clean)});
  }
  return out;
}

std::vector<LabeledSample> load_labeled(const Dataset& ds, const std::vector<size_t>& indices,
                                        const char* what) {
  if (indices.empty()) throw ConfigError(std::string(what) + ": no training samples selected");
  std::vector<LabeledSample> out;
  out.reserve(indices.size());
  for (size_t i : indices) {
    if (!ds.entry(i).labels_visible)
      throw ConfigError(std::string(what) + ": sample " + ds.entry(i).id +
                        " withholds its labels");
    SceneSample s = ds.load(i);
    out.push_back({std::move(s.fog), std::move(s.clean), std::move(s.label)});
  }
  return out;
}

float poly_lr(float base, int step, int total, float power) {
  return base * float(std::pow(1.0 - double(step) / double(total), double(power)));
}

// One pair's alignment objective. The teacher branch holds constant weights,
// so the only gradient path is through the student: directly for the encoder
// term, and through the teacher's activations (via the defogged image) for
// the decoder/logit term. The student's normalization statistics track its
// own activations (sc); the teacher's stay frozen.
Var<float> pair_alignment_loss(const ArchConfig& arch, const GraphParams<float>& student,
                               const GraphParams<float>& teacher, const Tensorf& fog,
                               const Tensorf& clean, bool use_dct, bool use_sed, bool use_l1,
                               LossReport& acc, StatsCollector* sc) {
  auto df = dfnet_forward_graph(arch, student, make_const(fog), sc);
  Var<float> total;
  auto fold = [&total](const Var<float>& term) {
    total = total ? add(total, term) : term;
  };

  SegGraph<float> t_cl;
  if (use_dct || use_sed) t_cl = seg_forward_graph(arch, teacher, make_const(clean));

  if (use_dct) {
    auto term = dct_loss(df.encoder_feats, t_cl.encoder_feats);
    acc.dct = acc.dct.value_or(0.0f) + term->value[0];
    fold(term);
  }
  if (use_sed) {
    auto t_def = seg_forward_graph(arch, teacher, df.out);
    auto term = sed_loss(t_def.decoder_feats, t_cl.decoder_feats, t_def.logits, t_cl.logits);
    acc.sed = acc.sed.value_or(0.0f) + term->value[0];
    fold(term);
  }
  if (use_l1) {
    auto term = l1_pixel_loss(df.out, make_const(clean));
    acc.l1_pix = acc.l1_pix.value_or(0.0f) + term->value[0];
    fold(term);
  }
  return total;
}

void finish_report(LossReport& r, int batch) {
  const float inv = 1.0f / float(batch);
  for (auto* f : {&r.dct, &r.sed, &r.l1_pix, &r.fog_ce, &r.clean_ce, &r.kl_con})
    if (f->has_value()) *f = **f * inv;
}

void require_finite(const ParamSet& ps, const char* phase) {
  if (!ps.all_finite())
    throw NumericError(std::string(phase) + ": weights diverged to non-finite values");
}

void check_loop(int steps, int batch, const char* what) {
  if (steps <= 0) throw ConfigError(std::string(what) + ": steps must be positive");
  if (batch <= 0) throw ConfigError(std::string(what) + ": batch must be positive");
}

// Shared loop for the Adam-driven alignment phases. `draw` returns the next
// (fog, clean-reference) pair.
template <typename DrawFn>
ParamSet alignment_loop(ParamSet student_ps, const ParamSet& fsnetc, const ArchConfig& arch,
                        const PretrainOptions& opt, const char* phase, DrawFn&& draw,
                        const std::function<void(ParamSet&)>& post_step) {
  check_loop(opt.steps, opt.batch, phase);
  GraphParams<float> teacher(fsnetc, false);
  Adam adam(opt.adam_beta1, opt.adam_beta2);
  PhaseLogger logger(opt.log_path, phase);

  for (int step = 0; step < opt.steps; ++step) {
    GraphParams<float> student(student_ps, true);
    StatsCollector sc;
    LossReport report;
    Var<float> batch_sum;
    for (int b = 0; b < opt.batch; ++b) {
      const PairSample& p = draw();
      auto loss = pair_alignment_loss(arch, student, teacher, p.fog, p.clean, opt.use_dct,
                                      opt.use_sed, opt.use_l1, report, &sc);
      batch_sum = batch_sum ? add(batch_sum, loss) : loss;
    }
    auto total = scale(batch_sum, 1.0f / float(opt.batch));
    backward(total);

    const float lr = lr_linear(step, opt.steps, opt.lr0, opt.lr1);
    adam.step(student_ps, student.grads(), lr);
    sc.apply(student_ps);
    if (post_step) post_step(student_ps);

    finish_report(report, opt.batch);
    report.total = total->value[0];
    logger.log(step, lr, report);
  }
  require_finite(student_ps, phase);
  logger.close();
  return student_ps;
}

}  // namespace

ParamSet train_clean_baseline(const ArchConfig& arch, const Dataset& ds,
                              const std::vector<size_t>& indices,
                              const CleanBaselineOptions& opt) {
  check_loop(opt.steps, opt.batch, "clean baseline");
  if (opt.jitter_contrast < 0.0f || opt.jitter_contrast >= 1.0f ||
      opt.jitter_brightness < 0.0f)
    throw ConfigError("clean baseline: jitter_contrast must be in [0,1), jitter_brightness >= 0");
  arch.validate();
  auto samples = load_labeled(ds, indices, "clean baseline");
  ParamSet ps = build_segnet(arch, opt.seed);
  SgdMomentum sgd(opt.momentum);
  Rng rng(mix_seed(opt.seed, "clean_baseline.batches"));
  PhaseLogger logger(opt.log_path, "clean_baseline");

  auto jitter = [&](const Tensorf& x) {
    if (opt.jitter_contrast == 0.0f && opt.jitter_brightness == 0.0f) return x;
    const float g = 1.0f + opt.jitter_contrast * float(rng.uniform(-1.0, 1.0));
    const float b = opt.jitter_brightness * float(rng.uniform(-1.0, 1.0));
    Tensorf out(x.dims());
    for (size_t i = 0; i < x.numel(); ++i) {
      const float v = (x.data()[i] - 0.5f) * g + 0.5f + b;
      out.mutable_data()[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return out;
  };

  for (int step = 0; step < opt.steps; ++step) {
    GraphParams<float> gp(ps, true);
    StatsCollector sc;
    LossReport report;
    Var<float> batch_sum;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& s = samples[size_t(rng.uniform_int(0, int64_t(samples.size()) - 1))];
      auto g = seg_forward_graph(arch, gp, make_const(jitter(s.clean)), &sc);
      auto ce = cross_entropy(g.logits, s.label);
      report.clean_ce = report.clean_ce.value_or(0.0f) + ce->value[0];
      batch_sum = batch_sum ? add(batch_sum, ce) : ce;
    }
    auto total = scale(batch_sum, 1.0f / float(opt.batch));
    backward(total);

    const float decay = poly_lr(1.0f, step, opt.steps, opt.poly_power);
    sgd.step(ps, gp.grads(), [&](const std::string& name) {
      return decay * (is_encoder_param(name) ? opt.encoder_lr : opt.decoder_lr);
    });
    sc.apply(ps);

    finish_report(report, opt.batch);
    report.total = total->value[0];
    logger.log(step, decay * opt.decoder_lr, report);
  }
  require_finite(ps, "clean baseline");
  logger.close();
  return ps;
}

ParamSet pretrain_basic(ParamSet dfnet, const ParamSet& fsnetc, bool fsnetc_frozen,
                        const ArchConfig& arch, const Dataset& ds,
                        const std::vector<size_t>& pair_indices, const PretrainOptions& opt) {
  if (!fsnetc_frozen) throw ContractError("pretrain: reference weights must be frozen");
  if (!opt.use_dct && !opt.use_sed && !opt.use_l1)
    throw ConfigError("pretrain: enable at least one of dct/sed/l1");
  arch.validate();
  auto pairs = load_pairs(ds, pair_indices, "pretrain");
  Rng rng(mix_seed(opt.seed, "pretrain_basic.batches"));
  auto draw = [&]() -> const PairSample& {
    return pairs[size_t(rng.uniform_int(0, int64_t(pairs.size()) - 1))];
  };
  return alignment_loop(std::move(dfnet), fsnetc, arch, opt, "basic", draw, nullptr);
}

ParamSet joint_train(ParamSet fsnet, const ParamSet& fsnetc, bool fsnetc_frozen,
                     const ArchConfig& arch, const Dataset& ds,
                     const std::vector<size_t>& indices, const JointOptions& opt) {
  if (!fsnetc_frozen) throw ContractError("joint train: reference weights must be frozen");
  check_loop(opt.steps, opt.batch, "joint train");
  arch.validate();
  auto samples = load_labeled(ds, indices, "joint train");
  GraphParams<float> teacher(fsnetc, false);
  Adam adam(opt.adam_beta1, opt.adam_beta2);
  Rng rng(mix_seed(opt.seed, "joint.batches"));
  PhaseLogger logger(opt.log_path, "joint");

  for (int step = 0; step < opt.steps; ++step) {
    GraphParams<float> gp(fsnet, true);
    StatsCollector sc;
    LossReport report;
    Var<float> batch_sum;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& s = samples[size_t(rng.uniform_int(0, int64_t(samples.size()) - 1))];
      auto g_fog = seg_forward_graph(arch, gp, make_const(s.fog), &sc);
      auto t_cl = seg_forward_graph(arch, teacher, make_const(s.clean));

      // Both alignment terms flow into the same weights the class loss trains.
      auto ce_f = cross_entropy(g_fog.logits, s.label);
      auto dct = dct_loss(g_fog.encoder_feats, t_cl.encoder_feats);
      auto sed =
          sed_loss(g_fog.decoder_feats, t_cl.decoder_feats, g_fog.logits, t_cl.logits);
      auto loss = add(add(ce_f, dct), sed);

      report.fog_ce = report.fog_ce.value_or(0.0f) + ce_f->value[0];
      report.dct = report.dct.value_or(0.0f) + dct->value[0];
      report.sed = report.sed.value_or(0.0f) + sed->value[0];
      batch_sum = batch_sum ? add(batch_sum, loss) : loss;
    }
    auto total = scale(batch_sum, 1.0f / float(opt.batch));
    backward(total);

    const float lr = lr_linear(step, opt.steps, opt.lr0, opt.lr1);
    adam.step(fsnet, gp.grads(), lr);
    sc.apply(fsnet);

    finish_report(report, opt.batch);
    report.total = total->value[0];
    logger.log(step, lr, report);
  }
  require_finite(fsnet, "joint train");
  logger.close();
  return fsnet;
}

std::vector<PseudoPair> generate_pseudo_pairs(const ParamSet& dfnet, const CheckpointMeta& meta,
                                              const ArchConfig& arch, const Dataset& ds,
                                              const std::vector<size_t>& real_indices) {
  if (meta.phase != "basic" && meta.phase != "fdm")
    throw ContractError("pseudo pairs need defog weights (phase basic or fdm), got: " +
                        meta.phase);
  if (real_indices.empty()) throw ConfigError("pseudo pairs: no source samples selected");
  arch.validate();
  std::vector<PseudoPair> out;
  out.reserve(real_indices.size());
  for (size_t i : real_indices) {
    SceneSample s = ds.load(i);
    DfOutput df = dfnet_forward(arch, dfnet, s.fog);
    out.push_back({s.id, std::move(s.fog), std::move(df.out), meta.ckpt_id});
  }
  return out;
}

ParamSet interpolate_weights(const ParamSet& current, const ParamSet& base, float gamma) {
  if (!(gamma >= 0.0f && gamma <= 1.0f))
    throw DomainError("interpolate_weights: gamma must lie in [0,1]");
  if (current.size() != base.size())
    throw SpliceError("interpolate_weights: parameter sets differ in entry count");
  if (gamma == 0.0f) return current.clone();
  if (gamma == 1.0f) return base.clone();
  ParamSet out;
  for (const auto& [name, cur] : current.items()) {
    if (!base.has(name)) throw SpliceError("interpolate_weights: missing in base: " + name);
    const Tensorf& b = base.at(name);
    if (b.dims() != cur.dims())
      throw SpliceError("interpolate_weights: shape mismatch for " + name);
    Tensorf t(cur.dims(), 0.0f);
    float* td = t.mutable_data();
    const float* cd = cur.data();
    const float* bd = b.data();
    for (int64_t i = 0; i < t.numel(); ++i) td[i] = gamma * bd[i] + (1.0f - gamma) * cd[i];
    out.add(name, std::move(t));
  }
  return out;
}

ParamSet pretrain_fdm(const ParamSet& dfnet_base, const ParamSet& fsnetc, bool fsnetc_frozen,
                      const ArchConfig& arch, const Dataset& ds,
                      const std::vector<size_t>& synth_indices,
                      const std::vector<PseudoPair>& pseudo, float gamma,
                      const PretrainOptions& opt) {
  if (!fsnetc_frozen) throw ContractError("pretrain: reference weights must be frozen");
  if (!opt.use_dct && !opt.use_sed && !opt.use_l1)
    throw ConfigError("pretrain: enable at least one of dct/sed/l1");
  if (pseudo.empty()) throw ConfigError("migration pretrain: pseudo-pair set is empty");
  if (!(gamma >= 0.0f && gamma <= 1.0f))
    throw DomainError("migration pretrain: gamma must lie in [0,1]");
  arch.validate();

  // union of true synthetic pairs and defogged pseudo pairs, sampled
  // uniformly; an empty synthetic selection means pseudo pairs alone
  std::vector<PairSample> pairs;
  if (!synth_indices.empty()) pairs = load_pairs(ds, synth_indices, "migration pretrain");
  for (const auto& p : pseudo) pairs.push_back({p.fog, p.defogged});

  Rng rng(mix_seed(opt.seed, "pretrain_fdm.batches"));
  auto draw = [&]() -> const PairSample& {
    return pairs[size_t(rng.uniform_int(0, int64_t(pairs.size()) - 1))];
  };
  auto anchor = [&](ParamSet& ps) { ps = interpolate_weights(ps, dfnet_base, gamma); };
  return alignment_loop(dfnet_base.clone(), fsnetc, arch, opt, "fdm", draw, anchor);
}

ParamSet pretrain_depth(ParamSet dfnet1, const ParamSet& fsnetc, bool fsnetc_frozen,
                        const ArchConfig& arch, const Dataset& ds,
                        const std::vector<size_t>& indices, const PretrainOptions& opt) {
  if (!fsnetc_frozen) throw ContractError("pretrain: reference weights must be frozen");
  if (arch.dfnet_out_channels != 1)
    throw ConfigError("depth pretext: arch must use a 1-channel output head");
  if (!opt.use_dct && !opt.use_sed)
    throw ConfigError("depth pretext: enable at least one of dct/sed");
  check_loop(opt.steps, opt.batch, "depth pretext");
  arch.validate();

  if (indices.empty()) throw ConfigError("depth pretext: no training samples selected");
  struct DepthSample {
    Tensorf fog, clean, target;  // target {1,H,W}
  };
  const auto& sc_cfg = ds.manifest().scene;
  std::vector<DepthSample> samples;
  samples.reserve(indices.size());
  for (size_t i : indices) {
    if (!ds.entry(i).labels_visible)
      throw ConfigError("depth pretext: sample " + ds.entry(i).id +
                        " withholds its clean reference");
    SceneSample s = ds.load(i);
    Tensorf nd = normalize_depth(s.depth, sc_cfg.depth_near, sc_cfg.depth_far);
    samples.push_back({std::move(s.fog), std::move(s.clean),
                       nd.reshaped({1, nd.dim(0), nd.dim(1)})});
  }

  GraphParams<float> teacher(fsnetc, false);
  Adam adam(opt.adam_beta1, opt.adam_beta2);
  Rng rng(mix_seed(opt.seed, "pretrain_depth.batches"));
  PhaseLogger logger(opt.log_path, "depth");

  for (int step = 0; step < opt.steps; ++step) {
    GraphParams<float> student(dfnet1, true);
    StatsCollector sc;
    LossReport report;
    Var<float> batch_sum;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& s = samples[size_t(rng.uniform_int(0, int64_t(samples.size()) - 1))];
      auto df = dfnet_forward_graph(arch, student, make_const(s.fog), &sc);
      auto loss = mean_abs_diff(df.out, make_const(s.target));
      report.l1_pix = report.l1_pix.value_or(0.0f) + loss->value[0];

      SegGraph<float> t_cl;
      if (opt.use_dct || opt.use_sed)
        t_cl = seg_forward_graph(arch, teacher, make_const(s.clean));
      if (opt.use_dct) {
        auto term = dct_loss(df.encoder_feats, t_cl.encoder_feats);
        report.dct = report.dct.value_or(0.0f) + term->value[0];
        loss = add(loss, term);
      }
      if (opt.use_sed) {
        // the 1-channel depth map stands in for the image the reference
        // network expects, broadcast across its three input channels
        auto t_def = seg_forward_graph(arch, teacher, replicate_channels(df.out, 3));
        auto term =
            sed_loss(t_def.decoder_feats, t_cl.decoder_feats, t_def.logits, t_cl.logits);
        report.sed = report.sed.value_or(0.0f) + term->value[0];
        loss = add(loss, term);
      }
      batch_sum = batch_sum ? add(batch_sum, loss) : loss;
    }
    auto total = scale(batch_sum, 1.0f / float(opt.batch));
    backward(total);

    const float lr = lr_linear(step, opt.steps, opt.lr0, opt.lr1);
    adam.step(dfnet1, student.grads(), lr);
    sc.apply(dfnet1);

    finish_report(report, opt.batch);
    report.total = total->value[0];
    logger.log(step, lr, report);
  }
  require_finite(dfnet1, "depth pretext");
  logger.close();
  return dfnet1;
}

namespace {

float eval_pairs_loss(const ParamSet& dfnet, const ParamSet& fsnetc, const ArchConfig& arch,
                      const std::vector<PairSample>& pairs, bool use_dct, bool use_sed,
                      bool use_l1) {
  if (!use_dct && !use_sed && !use_l1)
    throw ConfigError("pretrain eval: enable at least one of dct/sed/l1");
  if (pairs.empty()) throw ConfigError("pretrain eval: no pairs selected");
  GraphParams<float> student(dfnet, false);
  GraphParams<float> teacher(fsnetc, false);
  double acc = 0.0;
  for (const auto& p : pairs) {
    LossReport unused;
    auto loss = pair_alignment_loss(arch, student, teacher, p.fog, p.clean, use_dct, use_sed,
                                    use_l1, unused, nullptr);
    acc += double(loss->value[0]);
  }
  return float(acc / double(pairs.size()));
}

}  // namespace

float eval_pretrain_loss(const ParamSet& dfnet, const ParamSet& fsnetc, const ArchConfig& arch,
                         const Dataset& ds, const std::vector<size_t>& indices, bool use_dct,
                         bool use_sed, bool use_l1) {
  return eval_pairs_loss(dfnet, fsnetc, arch, load_pairs(ds, indices, "pretrain eval"),
                         use_dct, use_sed, use_l1);
}

float eval_pretrain_loss(const ParamSet& dfnet, const ParamSet& fsnetc, const ArchConfig& arch,
                         const std::vector<PseudoPair>& pairs, bool use_dct, bool use_sed,
                         bool use_l1) {
  std::vector<PairSample> ps;
  ps.reserve(pairs.size());
  for (const auto& p : pairs) ps.push_back({p.fog, p.defogged});
  return eval_pairs_loss(dfnet, fsnetc, arch, ps, use_dct, use_sed, use_l1);
}

float eval_depth_mae(const ParamSet& dfnet1, const ArchConfig& arch, const Dataset& ds,
                     const std::vector<size_t>& indices) {
  if (arch.dfnet_out_channels != 1)
    throw ConfigError("depth eval: arch must use a 1-channel output head");
  if (indices.empty()) throw ConfigError("depth eval: no samples selected");
  const auto& sc_cfg = ds.manifest().scene;
  double acc = 0.0;
  for (size_t i : indices) {
    SceneSample s = ds.load(i, true);
    DfOutput df = dfnet_forward(arch, dfnet1, s.fog);
    Tensorf nd = normalize_depth(s.depth, sc_cfg.depth_near, sc_cfg.depth_far);
    acc += double(l1_similarity(df.out, nd.reshaped({1, nd.dim(0), nd.dim(1)})));
  }
  return float(acc / double(indices.size()));
}

}  // namespace curriculum
}  // namespace fogseg
