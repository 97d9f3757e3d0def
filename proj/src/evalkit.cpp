#include "fogseg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "fogseg/checkpoint.hpp"
#include "fogseg/curriculum.hpp"
#include "fogseg/finetune.hpp"
#include "fogseg/imageio.hpp"

namespace fs = std::filesystem;

namespace fogseg {
namespace evalkit {

// ---- confusion / metrics ----

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

void ConfusionMatrix::add(const Tensori& pred, const Tensori& gt) {
  if (num_classes <= 0) throw ConfigError("confusion: matrix not initialized");
  if (pred.dims() != gt.dims())
    throw DimensionError("confusion: prediction and ground truth shapes differ");
  const int32_t* pd = pred.data();
  const int32_t* gd = gt.data();
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const int32_t g = gd[i];
    if (g == kIgnoreLabel) continue;
    if (g < 0 || g >= num_classes)
      throw RangeError("confusion: ground-truth label " + std::to_string(g) + " out of range");
    const int32_t p = pd[i];
    if (p < 0 || p >= num_classes)
      throw RangeError("confusion: predicted label " + std::to_string(p) + " out of range");
    at(g, p)++;
  }
}

ConfusionMatrix confusion(const Tensori& pred, const Tensori& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return cm;
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  if (cm.num_classes <= 0) throw DegenerateBatchError("iou: empty confusion matrix");
  const int K = cm.num_classes;
  std::vector<double> out(size_t(K), std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < K; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < K; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    if (tp + fp + fn == 0) continue;  // absent from both -> excluded
    out[size_t(c)] = double(tp) / double(tp + fp + fn);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  if (cm.num_classes <= 0 || cm.total() == 0)
    throw DegenerateBatchError("miou: empty confusion matrix");
  double acc = 0.0;
  int n = 0;
  for (double v : per_class_iou(cm)) {
    if (std::isnan(v)) continue;
    acc += v;
    ++n;
  }
  if (n == 0) throw DegenerateBatchError("miou: no class present");
  return acc / double(n);
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const int64_t t = cm.total();
  if (cm.num_classes <= 0 || t == 0)
    throw DegenerateBatchError("pixel accuracy: empty confusion matrix");
  int64_t diag = 0;
  for (int c = 0; c < cm.num_classes; ++c) diag += cm.at(c, c);
  return double(diag) / double(t);
}

double psnr(const Tensorf& a, const Tensorf& b) {
  if (a.dims() != b.dims()) throw DimensionError("psnr: shape mismatch");
  if (a.numel() == 0) throw DegenerateBatchError("psnr: empty rasters");
  const float* ad = a.data();
  const float* bd = b.data();
  double se = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(ad[i]) - double(bd[i]);
    se += d * d;
  }
  const double mse = se / double(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---- split evaluation ----

const char* to_string(EvalInput in) {
  switch (in) {
    case EvalInput::fog: return "fog";
    case EvalInput::clean: return "clean";
    default: return "defogged";
  }
}

namespace {

Tensori argmax_labels(const Tensorf& logits) {
  const int K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  Tensori out({H, W}, 0);
  int32_t* od = out.mutable_data();
  const float* ld = logits.data();
  const int64_t plane = int64_t(H) * W;
  for (int64_t i = 0; i < plane; ++i) {
    int best = 0;
    float bv = ld[i];
    for (int k = 1; k < K; ++k) {
      const float v = ld[k * plane + i];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    od[i] = best;
  }
  return out;
}

}  // namespace

Metrics evaluate(const ArchConfig& arch, const ParamSet& seg, const Dataset& ds,
                 const std::vector<size_t>& indices, EvalInput input,
                 const ParamSet* defogger) {
  arch.validate();
  if (indices.empty()) throw ConfigError("evaluate: no samples selected");
  if (input == EvalInput::defogged && defogger == nullptr)
    throw ConfigError("evaluate: defogged input needs defog weights");
  ArchConfig df_arch = arch;
  df_arch.dfnet_out_channels = 3;

  ConfusionMatrix cm(arch.num_classes);
  for (size_t i : indices) {
    SceneSample s = ds.load(i, /*eval_mode=*/true);
    const Tensorf* img = &s.fog;
    Tensorf restored;
    if (input == EvalInput::clean) {
      img = &s.clean;
    } else if (input == EvalInput::defogged) {
      restored = dfnet_forward(df_arch, *defogger, s.fog).out;
      img = &restored;
    }
    const Tensorf logits = seg_forward(arch, seg, *img).logits;
    cm.add(argmax_labels(logits), s.label);
  }

  Metrics m;
  m.miou = miou(cm);
  m.pixel_acc = pixel_accuracy(cm);
  m.class_iou = per_class_iou(cm);
  m.cm = std::move(cm);
  return m;
}

// ---- stats helpers ----

double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw DegenerateBatchError("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.empty()) throw DegenerateBatchError("stddev: empty sample");
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

// ---- stage cache + runner ----

namespace {

std::string fmt_g(double v) {
  char b[40];
  std::snprintf(b, sizeof(b), "%.9g", v);
  return b;
}

std::string fmt_f6(double v) {
  char b[40];
  std::snprintf(b, sizeof(b), "%.6f", v);
  return b;
}

// Pipe-delimited stage descriptor; doubles as the cache key source and the
// provenance note stored in the checkpoint.
class Recipe {
 public:
  explicit Recipe(std::string kind) : s_(std::move(kind)) {}
  Recipe& kv(const std::string& k, const std::string& v) {
    s_ += "|" + k + "=" + v;
    return *this;
  }
  Recipe& kv(const std::string& k, double v) { return kv(k, fmt_g(v)); }
  Recipe& kv(const std::string& k, int64_t v) { return kv(k, std::to_string(v)); }
  Recipe& kv(const std::string& k, int v) { return kv(k, std::to_string(v)); }
  Recipe& kv(const std::string& k, uint64_t v) { return kv(k, std::to_string(v)); }
  Recipe& kv(const std::string& k, bool v) { return kv(k, std::string(v ? "1" : "0")); }
  const std::string& str() const { return s_; }

 private:
  std::string s_;
};

struct StageOut {
  ParamSet ps;
  CheckpointMeta meta;
  std::string log_csv;
};

class StageRunner {
 public:
  explicit StageRunner(const AblationSpec& spec)
      : cfg_(spec.config), ds_(Dataset::open(spec.dataset_root)) {
    cfg_.validate();
    cache_ = (spec.work_dir.empty() ? std::string(".") : spec.work_dir) + "/cache";
    std::error_code ec;
    fs::create_directories(cache_, ec);
    if (ec) throw DataError("cannot create stage cache at " + cache_);
    data_fp_ = hex64(fnv1a64(read_file_bytes(spec.dataset_root + "/manifest.json")));
    tr_ = ds_.split_indices("train");
    te_ = ds_.split_indices("test");
    rf_ = ds_.split_indices("real_fog");
    if (tr_.empty() || te_.empty())
      throw ConfigError("ablation: dataset lacks train or test split");
    seg_arch_ = cfg_.arch;
    seg_arch_.decoder_depth = DecoderDepth::light;  // depth knob only shapes DFnet
    seg_arch_.dfnet_out_channels = 3;
    seg_arch_fp_ = hex64(fnv1a64(arch_to_json(seg_arch_)));
  }

  const Dataset& ds() const { return ds_; }
  const ArchConfig& seg_arch() const { return seg_arch_; }
  const std::vector<size_t>& test_split() const { return te_; }

  double miou_pct(const ParamSet& seg, EvalInput input) {
    return 100.0 * evaluate(seg_arch_, seg, ds_, te_, input).miou;
  }

  StageOut teacher(uint64_t seed) {
    RunConfig c = seeded(seed);
    auto opt = c.clean_options("");
    Recipe r("teacher");
    r.kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("elr", opt.encoder_lr)
        .kv("dlr", opt.decoder_lr)
        .kv("mom", opt.momentum)
        .kv("pow", opt.poly_power)
        .kv("arch", seg_arch_fp_)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("clean_baseline", r, opt.seed, /*frozen=*/true, c, seg_arch_,
               [&](const std::string& log) {
                 auto o = opt;
                 o.log_path = log;
                 return train_clean_baseline(seg_arch_, ds_, tr_, o);
               });
  }

  // Alignment/reconstruction pre-training on the synthetic pairs.
  StageOut pretrain(uint64_t seed, bool dct, bool sed, bool l1, DecoderDepth depth) {
    RunConfig c = seeded(seed);
    auto opt = c.basic_options("");
    opt.use_dct = dct;
    opt.use_sed = sed;
    opt.use_l1 = l1;
    ArchConfig a = seg_arch_;
    a.decoder_depth = depth;
    StageOut t = teacher(seed);
    Recipe r("basic");
    r.kv("dct", dct)
        .kv("sed", sed)
        .kv("l1", l1)
        .kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("lr0", opt.lr0)
        .kv("lr1", opt.lr1)
        .kv("b1", opt.adam_beta1)
        .kv("b2", opt.adam_beta2)
        .kv("arch", hex64(fnv1a64(arch_to_json(a))))
        .kv("teacher", t.meta.ckpt_id)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("basic", r, opt.seed, false, c, a, [&](const std::string& log) {
      auto o = opt;
      o.log_path = log;
      return pretrain_basic(build_dfnet(a, mix_seed(opt.seed, "init.dfnet")), t.ps, true, a,
                            ds_, tr_, o);
    });
  }

  // Depth-regression pretext with optional alignment terms.
  StageOut depth_pretext(uint64_t seed, bool dct, bool sed) {
    RunConfig c = seeded(seed);
    auto opt = c.basic_options("");
    opt.use_dct = dct;
    opt.use_sed = sed;
    opt.use_l1 = false;
    ArchConfig a = seg_arch_;
    a.dfnet_out_channels = 1;
    StageOut t = teacher(seed);
    Recipe r("depth");
    r.kv("dct", dct)
        .kv("sed", sed)
        .kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("lr0", opt.lr0)
        .kv("lr1", opt.lr1)
        .kv("arch", hex64(fnv1a64(arch_to_json(a))))
        .kv("teacher", t.meta.ckpt_id)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("depth", r, opt.seed, false, c, a, [&](const std::string& log) {
      auto o = opt;
      o.log_path = log;
      return pretrain_depth(build_dfnet(a, mix_seed(opt.seed, "init.dfnet")), t.ps, true, a,
                            ds_, tr_, o);
    });
  }

  // Migration re-pretraining: pseudo pairs from the current defogger, union
  // with synthetic pairs, weights anchored to the round's starting point.
  StageOut fdm(uint64_t seed) {
    RunConfig c = seeded(seed);
    StageOut base = pretrain(seed, true, true, false, cfg_.arch.decoder_depth);
    StageOut t = teacher(seed);
    auto opt = c.fdm_options("");
    Recipe r("fdm");
    r.kv("gamma", c.fdm.gamma)
        .kv("rounds", c.fdm.rounds)
        .kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("lr0", opt.lr0)
        .kv("lr1", opt.lr1)
        .kv("base", base.meta.ckpt_id)
        .kv("teacher", t.meta.ckpt_id)
        .kv("synth", true)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("fdm", r, opt.seed, false, c, seg_arch_, [&](const std::string& log) {
      ParamSet cur = base.ps.clone();
      CheckpointMeta meta = base.meta;
      for (int round = 0; round < c.fdm.rounds; ++round) {
        auto pseudo = generate_pseudo_pairs(cur, meta, seg_arch_, ds_, rf_);
        auto o = opt;
        o.seed = mix_seed(opt.seed, uint64_t(round));
        o.log_path = round + 1 == c.fdm.rounds ? log : "";
        cur = pretrain_fdm(cur, t.ps, true, seg_arch_, ds_, tr_, pseudo, c.fdm.gamma, o);
        meta.phase = "fdm";
      }
      return cur;
    });
  }

  // From-scratch pre-training on a chosen pair source (pseudo pairs come from
  // this seed's basic defogger); the anchoring ratio is zero.
  StageOut scratch_pairs(uint64_t seed, bool with_synth, bool with_pseudo) {
    RunConfig c = seeded(seed);
    StageOut gen = pretrain(seed, true, true, false, cfg_.arch.decoder_depth);
    StageOut t = teacher(seed);
    auto opt = c.basic_options("");
    opt.seed = mix_seed(opt.seed, "stage.scratch_pairs");
    Recipe r("pairset");
    r.kv("synth", with_synth)
        .kv("pseudo", with_pseudo)
        .kv("generator", gen.meta.ckpt_id)
        .kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("lr0", opt.lr0)
        .kv("lr1", opt.lr1)
        .kv("teacher", t.meta.ckpt_id)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("fdm", r, opt.seed, false, c, seg_arch_, [&](const std::string& log) {
      std::vector<curriculum::PseudoPair> pseudo;
      if (with_pseudo) pseudo = generate_pseudo_pairs(gen.ps, gen.meta, seg_arch_, ds_, rf_);
      auto o = opt;
      o.log_path = log;
      ParamSet fresh = build_dfnet(seg_arch_, mix_seed(opt.seed, "init.dfnet"));
      const std::vector<size_t> synth = with_synth ? tr_ : std::vector<size_t>{};
      return pretrain_fdm(fresh, t.ps, true, seg_arch_, ds_, synth, pseudo, 0.0f, o);
    });
  }

  StageOut finetuned(uint64_t seed, const StageOut* init, bool fog, bool cl, bool con) {
    RunConfig c = seeded(seed);
    auto opt = c.finetune_options("");
    opt.use_fog = fog;
    opt.use_cl = cl;
    opt.use_con = con;
    Recipe r("finetune");
    r.kv("init", init ? init->meta.ckpt_id : std::string("none"))
        .kv("fog", fog)
        .kv("cl", cl)
        .kv("con", con)
        .kv("lam", opt.lambda_con)
        .kv("input", to_string(opt.input))
        .kv("kld", to_string(opt.kl_direction))
        .kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("elr", opt.encoder_lr)
        .kv("dlr", opt.decoder_lr)
        .kv("mom", opt.momentum)
        .kv("arch", seg_arch_fp_)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("finetune", r, opt.seed, false, c, seg_arch_, [&](const std::string& log) {
      auto o = opt;
      o.log_path = log;
      ParamSet seg0 = build_segnet(seg_arch_, mix_seed(opt.seed, "init.segnet"));
      if (init) seg0 = init_from_pretrain(init->ps, seg0);
      const ParamSet* defogger =
          (o.input == FinetuneInput::defogged && init) ? &init->ps : nullptr;
      return finetune::finetune(std::move(seg0), seg_arch_, ds_, tr_, o, defogger);
    });
  }

  StageOut joint(uint64_t seed) {
    RunConfig c = seeded(seed);
    StageOut t = teacher(seed);
    auto opt = c.joint_options("");
    Recipe r("joint");
    r.kv("steps", opt.steps)
        .kv("batch", opt.batch)
        .kv("lr0", opt.lr0)
        .kv("lr1", opt.lr1)
        .kv("teacher", t.meta.ckpt_id)
        .kv("arch", seg_arch_fp_)
        .kv("data", data_fp_)
        .kv("seed", opt.seed);
    return run("joint", r, opt.seed, false, c, seg_arch_, [&](const std::string& log) {
      auto o = opt;
      o.log_path = log;
      return joint_train(build_segnet(seg_arch_, mix_seed(opt.seed, "init.segnet")), t.ps,
                         true, seg_arch_, ds_, tr_, o);
    });
  }

 private:
  RunConfig seeded(uint64_t seed) const {
    RunConfig c = cfg_;
    c.seed = seed;
    return c;
  }

  StageOut run(const std::string& phase, const Recipe& r, uint64_t seed, bool frozen,
               const RunConfig& cfg_echo, const ArchConfig& arch,
               const std::function<ParamSet(const std::string&)>& train) {
    const std::string key = phase + "-" + hex64(fnv1a64(r.str()));
    const std::string path = cache_ + "/" + key + ".ckpt";
    const std::string log = cache_ + "/" + key + ".log.csv";
    if (fs::exists(path)) {
      auto [ps, meta] = load_checkpoint(path);
      if (meta.provenance != r.str())
        throw IntegrityError("stage cache collision at " + path);
      return {std::move(ps), std::move(meta), log};
    }
    ParamSet ps = train(log);
    CheckpointMeta meta;
    meta.phase = phase;
    meta.seed = seed;
    meta.iteration = 0;
    meta.frozen = frozen;
    meta.arch_json = arch_to_json(arch);
    meta.config_json = cfg_echo.to_json();
    meta.provenance = r.str();
    save_checkpoint(path, ps, meta);
    auto [ps2, meta2] = load_checkpoint(path);
    return {std::move(ps2), std::move(meta2), log};
  }

  RunConfig cfg_;
  Dataset ds_;
  ArchConfig seg_arch_;
  std::string seg_arch_fp_;
  std::string cache_;
  std::string data_fp_;
  std::vector<size_t> tr_, te_, rf_;
};

std::vector<CurvePoint> parse_total_curve(const std::string& path) {
  std::ifstream f(path);
  if (!f) return {};
  std::string header;
  if (!std::getline(f, header)) return {};
  int total_col = -1;
  {
    std::stringstream ss(header);
    std::string col;
    for (int i = 0; std::getline(ss, col, ','); ++i)
      if (col == "total") total_col = i;
  }
  if (total_col < 0) return {};
  std::vector<CurvePoint> out;
  std::string line;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string field, iter_s, total_s;
    for (int i = 0; std::getline(ss, field, ','); ++i) {
      if (i == 0) iter_s = field;
      if (i == total_col) total_s = field;
    }
    if (iter_s.empty() || total_s.empty()) continue;
    out.push_back({std::stoll(iter_s), std::stod(total_s)});
  }
  return out;
}

struct RowOut {
  ParamSet seg;
  std::string curve_log;  // finetuning-loss trajectory source, when meaningful
};

struct RowDef {
  std::string label;
  std::string detail;
  std::function<RowOut(StageRunner&, uint64_t)> build;
};

std::vector<RowDef> preset_rows(const std::string& preset, const RunConfig& cfg) {
  auto ft_full = [](StageRunner& sr, uint64_t seed, const StageOut* init) {
    StageOut s = sr.finetuned(seed, init, true, true, true);
    return RowOut{std::move(s.ps), s.log_csv};
  };
  auto baseline = [ft_full](StageRunner& sr, uint64_t seed) {
    return ft_full(sr, seed, nullptr);
  };
  auto decoupled = [ft_full](StageRunner& sr, uint64_t seed) {
    StageOut pre = sr.pretrain(seed, true, true, false, DecoderDepth::light);
    return ft_full(sr, seed, &pre);
  };
  auto joint_row = [](StageRunner& sr, uint64_t seed) {
    StageOut s = sr.joint(seed);
    return RowOut{std::move(s.ps), s.log_csv};
  };
  auto migration = [ft_full](StageRunner& sr, uint64_t seed) {
    StageOut pre = sr.fdm(seed);
    return ft_full(sr, seed, &pre);
  };

  if (preset == "table2")
    return {
        {"(i) baseline", "fine-tune only, no pre-training", baseline},
        {"(ii) joint", "single net, class + alignment losses together", joint_row},
        {"(iii) decoupled", "alignment pre-training, then fine-tune", decoupled},
        {"(iv) decoupled+migration", "pre-training with the migration round", migration},
    };
  if (preset == "table3") {
    auto pre_row = [ft_full](bool dct, bool sed, bool l1) {
      return [ft_full, dct, sed, l1](StageRunner& sr, uint64_t seed) {
        StageOut pre = sr.pretrain(seed, dct, sed, l1, DecoderDepth::light);
        return ft_full(sr, seed, &pre);
      };
    };
    return {
        {"(i) none", "no pre-training", baseline},
        {"(ii) encoder only", "encoder alignment pre-training", pre_row(true, false, false)},
        {"(iii) decoder only", "decoder/posterior alignment pre-training",
         pre_row(false, true, false)},
        {"(iv) pixel l1", "plain reconstruction pre-training", pre_row(false, false, true)},
        {"(v) encoder+decoder", "both alignment losses", pre_row(true, true, false)},
    };
  }
  if (preset == "table4") {
    auto ft_row = [](bool fog, bool cl, bool con) {
      return [fog, cl, con](StageRunner& sr, uint64_t seed) {
        StageOut pre = sr.pretrain(seed, true, true, false, DecoderDepth::light);
        StageOut s = sr.finetuned(seed, &pre, fog, cl, con);
        return RowOut{std::move(s.ps), s.log_csv};
      };
    };
    return {
        {"(i) fog", "foggy-branch class loss only", ft_row(true, false, false)},
        {"(ii) fog+clean", "both class losses", ft_row(true, true, false)},
        {"(iii) fog+clean+consistency", "full fine-tuning objective",
         ft_row(true, true, true)},
    };
  }
  if (preset == "table5") {
    auto pairs_row = [ft_full](bool synth, bool pseudo) {
      return [ft_full, synth, pseudo](StageRunner& sr, uint64_t seed) {
        StageOut pre = sr.scratch_pairs(seed, synth, pseudo);
        return ft_full(sr, seed, &pre);
      };
    };
    return {
        {"(i) pseudo only", "pre-train from scratch on defogged pseudo pairs",
         pairs_row(false, true)},
        {"(ii) synthetic only", "standard synthetic-pair pre-training", decoupled},
        {"(iii) union", "pseudo + synthetic pairs, no anchoring", pairs_row(true, true)},
        {"(iv) anchored migration", "union with per-step weight anchoring", migration},
    };
  }
  if (preset == "table6") {
    auto splice_row = [](bool l1) {
      return [l1](StageRunner& sr, uint64_t seed) {
        StageOut pre = l1 ? sr.pretrain(seed, false, false, true, DecoderDepth::light)
                          : sr.pretrain(seed, true, true, false, DecoderDepth::light);
        StageOut t = sr.teacher(seed);
        return RowOut{splice_encoder(pre.ps, t.ps), ""};
      };
    };
    return {
        {"(i) aligned encoder", "alignment-pretrained encoder + reference decoder",
         splice_row(false)},
        {"(ii) reconstruction encoder", "plain-L1 encoder + reference decoder",
         splice_row(true)},
        {"(iii) reference net", "clean-trained reference network unchanged",
         [](StageRunner& sr, uint64_t seed) {
           StageOut t = sr.teacher(seed);
           return RowOut{std::move(t.ps), ""};
         }},
    };
  }
  if (preset == "table7") {
    auto heavy = [ft_full](StageRunner& sr, uint64_t seed) {
      StageOut pre = sr.pretrain(seed, true, true, false, DecoderDepth::heavy);
      return ft_full(sr, seed, &pre);
    };
    return {
        {"(i) baseline", "no pre-training", baseline},
        {"(ii) heavy decoder", "defog decoder widened with residual blocks", heavy},
        {"(iii) light decoder", "standard defog decoder", decoupled},
    };
  }
  if (preset == "table8") {
    auto depth_row = [ft_full](bool dct) {
      return [ft_full, dct](StageRunner& sr, uint64_t seed) {
        StageOut pre = sr.depth_pretext(seed, dct, true);
        return ft_full(sr, seed, &pre);
      };
    };
    return {
        {"(i) baseline", "no pre-training", baseline},
        {"(ii) depth, decoder loss", "depth pretext with decoder alignment only",
         depth_row(false)},
        {"(iii) depth, both losses", "depth pretext with both alignment losses",
         depth_row(true)},
        {"(iv) defog reference", "defogging pre-training, both losses", decoupled},
    };
  }
  if (preset == "fig1c")
    return {
        {"joint", "single net, class + alignment losses together", joint_row},
        {"decoupled", "alignment pre-training, then fine-tune", decoupled},
    };
  if (preset == "fig8") {
    auto l1_then_ft = [ft_full](StageRunner& sr, uint64_t seed) {
      StageOut pre = sr.pretrain(seed, false, false, true, DecoderDepth::light);
      return ft_full(sr, seed, &pre);
    };
    return {
        {"joint", "training loss of the coupled variant", joint_row},
        {"l1 pretrain", "fine-tuning loss after reconstruction pre-training", l1_then_ft},
        {"decoupled", "fine-tuning loss after alignment pre-training", decoupled},
    };
  }
  (void)cfg;
  throw ConfigError("ablation: unknown preset " + preset);
}

}  // namespace

AblationTable run_ablation(const AblationSpec& spec) {
  if (spec.seeds.empty()) throw ConfigError("ablation: need at least one seed");
  auto rows = preset_rows(spec.preset, spec.config);
  StageRunner runner(spec);

  AblationTable out;
  out.preset = spec.preset;
  out.seeds = spec.seeds;
  const bool want_curves = spec.preset == "fig8";
  for (auto& def : rows) {
    AblationRow row;
    row.label = def.label;
    row.detail = def.detail;
    for (size_t si = 0; si < spec.seeds.size(); ++si) {
      RowOut r = def.build(runner, spec.seeds[si]);
      row.fog_miou.push_back(runner.miou_pct(r.seg, EvalInput::fog));
      row.clean_miou.push_back(runner.miou_pct(r.seg, EvalInput::clean));
      if (si == 0 && want_curves && !r.curve_log.empty()) {
        auto curve = parse_total_curve(r.curve_log);
        if (!curve.empty()) out.curves.emplace_back(def.label, std::move(curve));
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---- palette / overlays ----

const std::vector<std::array<uint8_t, 3>>& class_palette() {
  static const std::vector<std::array<uint8_t, 3>> kPalette = {
      {{70, 130, 220}},   // 0: sky
      {{150, 105, 60}},   // 1: ground
      {{220, 60, 60}},    // 2
      {{60, 180, 75}},    // 3
      {{240, 200, 40}},   // 4
      {{145, 30, 180}},   // 5
      {{70, 240, 240}},   // 6
      {{245, 130, 48}},   // 7
      {{240, 50, 230}},   // 8
      {{0, 128, 128}},    // 9
  };
  return kPalette;
}

Tensorf overlay_labels(const Tensorf& img, const Tensori& labels, float alpha) {
  if (img.dim(0) != 3 || img.dim(1) != labels.dim(0) || img.dim(2) != labels.dim(1))
    throw DimensionError("overlay: raster and label map shapes differ");
  const auto& pal = class_palette();
  Tensorf out = img.clone();
  float* od = out.mutable_data();
  const int32_t* ld = labels.data();
  const int64_t plane = labels.numel();
  for (int64_t i = 0; i < plane; ++i) {
    if (ld[i] == kIgnoreLabel) continue;  // ignore keeps the raw pixel
    const auto& c = pal[size_t(ld[i]) % pal.size()];
    for (int ch = 0; ch < 3; ++ch) {
      float& v = od[ch * plane + i];
      v = (1.0f - alpha) * v + alpha * float(c[size_t(ch)]) / 255.0f;
    }
  }
  return out;
}

// ---- plotting (tiny self-contained rasterizer) ----

namespace {

struct Rgb8 {
  uint8_t r, g, b;
};

constexpr Rgb8 kInk{30, 30, 30};
constexpr Rgb8 kGrid{215, 215, 215};
constexpr Rgb8 kBar{86, 130, 190};

struct Glyph {
  char c;
  uint8_t rows[7];  // bit 4 = leftmost column
};

// 5x7 uppercase font, just enough for axis labels.
constexpr Glyph kFont[] = {
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
};

const uint8_t* glyph_rows(char c) {
  if (c >= 'a' && c <= 'z') c = char(c - 'a' + 'A');
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  return nullptr;
}

struct Canvas {
  int W, H;
  Tensorf img;

  Canvas(int w, int h) : W(w), H(h), img({3, h, w}, 1.0f) {}

  void px(int x, int y, Rgb8 c) {
    if (x < 0 || y < 0 || x >= W || y >= H) return;
    float* d = img.mutable_data();
    const int64_t plane = int64_t(H) * W;
    const int64_t p = int64_t(y) * W + x;
    d[p] = float(c.r) / 255.0f;
    d[plane + p] = float(c.g) / 255.0f;
    d[2 * plane + p] = float(c.b) / 255.0f;
  }

  void fill(int x0, int y0, int x1, int y1, Rgb8 c) {
    for (int y = std::max(0, y0); y <= std::min(H - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(W - 1, x1); ++x) px(x, y, c);
  }

  void line(int x0, int y0, int x1, int y1, Rgb8 c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      px(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(int x, int y, const std::string& s, Rgb8 c) {
    for (char ch : s) {
      const uint8_t* rows = glyph_rows(ch);
      if (rows) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (rows[ry] & (1 << (4 - rx))) px(x + rx, y + ry, c);
      }
      x += 6;
    }
  }

  void save(const std::string& path) const { write_ppm(path, img); }
};

std::string trim_to(const std::string& s, size_t n) {
  return s.size() <= n ? s : s.substr(0, n);
}

void bar_chart(const std::string& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<double>& means,
               const std::vector<double>& stds) {
  const int W = 480, H = 320, L = 56, R = 12, T = 26, B = 56;
  Canvas cv(W, H);
  cv.text(L, 8, trim_to(title, size_t((W - L - R) / 6)), kInk);

  double top = 1e-9;
  for (size_t i = 0; i < means.size(); ++i) top = std::max(top, means[i] + stds[i]);
  top *= 1.15;

  const int px0 = L, px1 = W - R, py0 = T, py1 = H - B;
  auto ymap = [&](double v) {
    return py1 - int(std::lround((v / top) * double(py1 - py0)));
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = top * t / 4.0;
    const int y = ymap(v);
    cv.line(px0, y, px1, y, kGrid);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    cv.text(4, y - 3, buf, kInk);
  }
  cv.line(px0, py0, px0, py1, kInk);
  cv.line(px0, py1, px1, py1, kInk);

  const int n = int(means.size());
  if (n > 0) {
    const int slot = (px1 - px0) / n;
    const int barw = std::max(6, slot * 3 / 5);
    for (int i = 0; i < n; ++i) {
      const int cx = px0 + slot * i + slot / 2;
      const int y = ymap(means[size_t(i)]);
      cv.fill(cx - barw / 2, y, cx + barw / 2, py1 - 1, kBar);
      const int yu = ymap(means[size_t(i)] + stds[size_t(i)]);
      const int yd = ymap(std::max(0.0, means[size_t(i)] - stds[size_t(i)]));
      cv.line(cx, yu, cx, yd, kInk);
      cv.line(cx - 3, yu, cx + 3, yu, kInk);
      cv.line(cx - 3, yd, cx + 3, yd, kInk);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.1f", means[size_t(i)]);
      cv.text(cx - int(6 * std::string(buf).size()) / 2, y - 10, buf, kInk);
      const std::string lab = trim_to(labels[size_t(i)], size_t(std::max(1, slot / 6 - 1)));
      cv.text(cx - int(6 * lab.size()) / 2, py1 + 6, lab, kInk);
    }
  }
  cv.save(path);
}

void curve_plot(const std::string& path, const std::string& title,
                const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& curves) {
  const int W = 560, H = 320, L = 64, R = 12, T = 26, B = 40;
  Canvas cv(W, H);
  cv.text(L, 8, trim_to(title, size_t((W - L - R) / 6)), kInk);

  double x0 = 0, x1 = 1, lo = 0, hi = 1;
  bool first = true;
  for (const auto& [name, pts] : curves) {
    (void)name;
    for (const auto& p : pts) {
      if (first) {
        x0 = x1 = double(p.step);
        lo = hi = p.value;
        first = false;
      }
      x0 = std::min(x0, double(p.step));
      x1 = std::max(x1, double(p.step));
      lo = std::min(lo, p.value);
      hi = std::max(hi, p.value);
    }
  }
  if (first) {
    cv.save(path);
    return;
  }
  if (x1 <= x0) x1 = x0 + 1;
  const double pad = std::max(1e-12, (hi - lo) * 0.05);
  lo -= pad;
  hi += pad;

  const int px0 = L, px1 = W - R, py0 = T, py1 = H - B;
  auto xmap = [&](double v) {
    return px0 + int(std::lround((v - x0) / (x1 - x0) * double(px1 - px0)));
  };
  auto ymap = [&](double v) {
    return py1 - int(std::lround((v - lo) / (hi - lo) * double(py1 - py0)));
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int y = ymap(v);
    cv.line(px0, y, px1, y, kGrid);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    cv.text(4, y - 3, buf, kInk);
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = x0 + (x1 - x0) * t / 4.0;
    const int x = xmap(v);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    cv.text(x - int(6 * std::string(buf).size()) / 2, py1 + 6, buf, kInk);
  }
  cv.line(px0, py0, px0, py1, kInk);
  cv.line(px0, py1, px1, py1, kInk);

  const auto& pal = class_palette();
  int legend_y = T + 4;
  for (size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c8 = pal[(ci + 2) % pal.size()];  // skip the muted scene hues
    const Rgb8 col{c8[0], c8[1], c8[2]};
    const auto& pts = curves[ci].second;
    for (size_t i = 1; i < pts.size(); ++i)
      cv.line(xmap(double(pts[i - 1].step)), ymap(pts[i - 1].value),
              xmap(double(pts[i].step)), ymap(pts[i].value), col);
    cv.fill(px1 - 104, legend_y, px1 - 96, legend_y + 6, col);
    cv.text(px1 - 92, legend_y, trim_to(curves[ci].first, 14), kInk);
    legend_y += 11;
  }
  cv.save(path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory: " + dir);
}

}  // namespace

// ---- reports ----

void emit_report(const AblationTable& table, const std::string& out_dir) {
  ensure_dir(out_dir + "/tables");
  ensure_dir(out_dir + "/plots");

  std::ostringstream csv;
  csv << "schema_version,preset,row,label,detail,seed_count,"
         "fog_miou_mean,fog_miou_std,clean_miou_mean,clean_miou_std,"
         "fog_miou_by_seed,clean_miou_by_seed\n";
  auto joined = [](const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt_f6(v[i]);
    return s;
  };
  auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
  for (size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    csv << 1 << "," << table.preset << "," << i << "," << quoted(r.label) << ","
        << quoted(r.detail) << "," << r.fog_miou.size() << "," << fmt_f6(mean_of(r.fog_miou))
        << "," << fmt_f6(stddev_of(r.fog_miou)) << "," << fmt_f6(mean_of(r.clean_miou)) << ","
        << fmt_f6(stddev_of(r.clean_miou)) << "," << joined(r.fog_miou) << ","
        << joined(r.clean_miou) << "\n";
  }
  atomic_write_file(out_dir + "/tables/" + table.preset + ".csv", csv.str());

  std::vector<std::string> labels;
  std::vector<double> fog_means, fog_stds, clean_means, clean_stds;
  for (const auto& r : table.rows) {
    labels.push_back(r.label);
    fog_means.push_back(mean_of(r.fog_miou));
    fog_stds.push_back(stddev_of(r.fog_miou));
    clean_means.push_back(mean_of(r.clean_miou));
    clean_stds.push_back(stddev_of(r.clean_miou));
  }
  if (!table.rows.empty()) {
    bar_chart(out_dir + "/plots/" + table.preset + "_fog_miou.ppm",
              table.preset + " fog-test miou", labels, fog_means, fog_stds);
    bar_chart(out_dir + "/plots/" + table.preset + "_clean_miou.ppm",
              table.preset + " clean-test miou", labels, clean_means, clean_stds);
  }

  if (!table.curves.empty()) {
    std::ostringstream ccsv;
    ccsv << "schema_version,preset,variant,step,total_loss\n";
    for (const auto& [name, pts] : table.curves)
      for (const auto& p : pts)
        ccsv << 1 << "," << table.preset << "," << quoted(name) << "," << p.step << ","
             << fmt_g(p.value) << "\n";
    atomic_write_file(out_dir + "/tables/" + table.preset + "_curves.csv", ccsv.str());
    curve_plot(out_dir + "/plots/" + table.preset + "_curves.ppm",
               table.preset + " training loss", table.curves);
  }
}

void emit_visuals(const ArchConfig& arch, const ParamSet& seg, const ParamSet* defogger,
                  const Dataset& ds, const std::vector<size_t>& indices,
                  const std::string& out_dir) {
  arch.validate();
  if (indices.empty()) throw ConfigError("visuals: no samples selected");
  ensure_dir(out_dir + "/plots");
  ensure_dir(out_dir + "/overlays");
  ArchConfig df_arch = arch;
  df_arch.dfnet_out_channels = 3;

  for (size_t i : indices) {
    SceneSample s = ds.load(i, /*eval_mode=*/true);
    std::vector<Tensorf> panels;
    panels.push_back(s.fog);
    if (defogger) panels.push_back(dfnet_forward(df_arch, *defogger, s.fog).out);
    panels.push_back(s.clean);

    const int H = s.fog.dim(1), W = s.fog.dim(2);
    const int gut = 2;
    const int total_w = int(panels.size()) * W + (int(panels.size()) - 1) * gut;
    Tensorf strip({3, H, total_w}, 1.0f);
    float* sd = strip.mutable_data();
    const int64_t splane = int64_t(H) * total_w;
    int xoff = 0;
    for (const auto& p : panels) {
      const float* pd = p.data();
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            sd[c * splane + int64_t(y) * total_w + xoff + x] =
                pd[c * int64_t(H) * W + int64_t(y) * W + x];
      xoff += W + gut;
    }
    write_ppm(out_dir + "/plots/strip_" + s.id + ".ppm", strip);

    const Tensorf logits = seg_forward(arch, seg, s.fog).logits;
    write_ppm(out_dir + "/overlays/" + s.id + "_pred.ppm",
              overlay_labels(s.fog, argmax_labels(logits)));
    write_ppm(out_dir + "/overlays/" + s.id + "_gt.ppm", overlay_labels(s.clean, s.label));
  }
}

}  // namespace evalkit
}  // namespace fogseg
