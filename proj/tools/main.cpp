// fogseg command-line front end.
//
// Exit codes: 0 success, 2 bad configuration/usage, 3 data problems,
// 4 numeric failures. Errors print one machine-parsable line on stderr:
//   fogseg: error kind=<config|data|numeric> exit=<code> msg="<text>"
//
// Output root: --out flag, else $FOGSEG_OUTPUT_ROOT, else ./fogseg_out.
// Stage commands are resumable: an existing checkpoint whose embedded
// config matches the active one is reused instead of retrained
// (--force retrains). All files are written via temp-and-rename, so an
// interrupted run leaves only *.tmp leftovers, never a torn output.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fogseg/checkpoint.hpp"
#include "fogseg/curriculum.hpp"
#include "fogseg/evalkit.hpp"
#include "fogseg/finetune.hpp"
#include "fogseg/imageio.hpp"
#include "fogseg/runconfig.hpp"

namespace fs = std::filesystem;
using namespace fogseg;

namespace {

struct CliCtx {
  RunConfig cfg;
  std::string out;
  std::string data_root;
  bool force = false;

  std::string ckpt(const std::string& name) const { return out + "/checkpoints/" + name; }
  std::string log(const std::string& name) const { return out + "/logs/" + name; }
};

void ensure_dirs(const CliCtx& c) {
  for (const char* d : {"", "/checkpoints", "/logs", "/metrics", "/reports"}) {
    std::error_code ec;
    fs::create_directories(c.out + d, ec);
    if (ec) throw DataError("cannot create output directory " + c.out + d);
  }
}

Dataset open_data(const CliCtx& c) {
  if (!fs::exists(c.data_root + "/manifest.json"))
    throw DataError("dataset missing at " + c.data_root + " (run gen-data first)");
  return Dataset::open(c.data_root);
}

// Reuse a checkpoint when its stored config echo matches the active config.
std::optional<std::pair<ParamSet, CheckpointMeta>> reuse(const CliCtx& c,
                                                         const std::string& path,
                                                         const std::string& phase) {
  if (c.force || !fs::exists(path)) return std::nullopt;
  auto [ps, meta] = load_checkpoint(path);
  if (meta.phase != phase || meta.config_json != c.cfg.to_json()) {
    std::printf("[fogseg] %s: stale checkpoint (config changed), retraining\n",
                phase.c_str());
    return std::nullopt;
  }
  std::printf("[fogseg] %s: reused %s\n", phase.c_str(), path.c_str());
  return std::make_pair(std::move(ps), std::move(meta));
}

void store(const CliCtx& c, const std::string& path, const ParamSet& ps,
           const std::string& phase, uint64_t seed, bool frozen) {
  CheckpointMeta meta;
  meta.phase = phase;
  meta.seed = seed;
  meta.frozen = frozen;
  meta.arch_json = arch_to_json(c.cfg.arch);
  meta.config_json = c.cfg.to_json();
  meta.provenance = "cli:" + phase + ":" + c.cfg.fingerprint();
  save_checkpoint(path, ps, meta);
  std::printf("[fogseg] %s: wrote %s\n", phase.c_str(), path.c_str());
}

// The generation settings are mirrored into <data_root>/genconfig.json so a
// later run can tell whether the dataset on disk matches the active config.
std::string data_section_json(const RunConfig& cfg) {
  return nlohmann::ordered_json::parse(cfg.to_json())["data"].dump(2) + "\n";
}

void cmd_gen_data(const CliCtx& c) {
  const std::string mpath = c.data_root + "/manifest.json";
  const std::string gpath = c.data_root + "/genconfig.json";
  const std::string want = data_section_json(c.cfg);
  if (fs::exists(mpath) && !c.force) {
    if (fs::exists(gpath) && read_file_bytes(gpath) == want) {
      std::printf("[fogseg] gen-data: reused %s\n", c.data_root.c_str());
      return;
    }
    throw DataError("dataset at " + c.data_root +
                    " was built with different settings (use --force to rebuild)");
  }
  const Manifest m = build_dataset(c.cfg.data, c.data_root);
  atomic_write_file(gpath, want);
  std::printf("[fogseg] gen-data: %zu samples at %s\n", m.samples.size(),
              c.data_root.c_str());
}

ParamSet cmd_train_clean(const CliCtx& c) {
  const std::string path = c.ckpt("fsnetc.ckpt");
  if (auto r = reuse(c, path, "clean_baseline")) return std::move(r->first);
  Dataset ds = open_data(c);
  auto opt = c.cfg.clean_options(c.log("clean.csv"));
  ParamSet ps = train_clean_baseline(c.cfg.arch, ds, ds.split_indices("train"), opt);
  store(c, path, ps, "clean_baseline", opt.seed, /*frozen=*/true);
  return ps;
}

ParamSet load_ckpt_as(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw DataError(what + " checkpoint missing at " + path);
  return load_checkpoint(path).first;
}

ParamSet cmd_pretrain_basic(const CliCtx& c, const std::string& teacher_path) {
  const std::string path = c.ckpt("basic.ckpt");
  if (auto r = reuse(c, path, "basic")) return std::move(r->first);
  Dataset ds = open_data(c);
  ParamSet teacher = load_ckpt_as(teacher_path, "teacher");
  auto opt = c.cfg.basic_options(c.log("basic.csv"));
  ParamSet dfnet = build_dfnet(c.cfg.arch, mix_seed(opt.seed, "init.dfnet"));
  ParamSet ps = pretrain_basic(std::move(dfnet), teacher, true, c.cfg.arch, ds,
                               ds.split_indices("train"), opt);
  store(c, path, ps, "basic", opt.seed, false);
  return ps;
}

ParamSet cmd_fdm(const CliCtx& c, const std::string& base_path,
                 const std::string& teacher_path) {
  const std::string path = c.ckpt("fdm.ckpt");
  if (auto r = reuse(c, path, "fdm")) return std::move(r->first);
  Dataset ds = open_data(c);
  ParamSet teacher = load_ckpt_as(teacher_path, "teacher");
  if (!fs::exists(base_path)) throw DataError("base checkpoint missing at " + base_path);
  auto [cur, meta] = load_checkpoint(base_path);
  const auto tr = ds.split_indices("train");
  const auto rf = ds.split_indices("real_fog");
  auto opt = c.cfg.fdm_options("");
  for (int round = 0; round < c.cfg.fdm.rounds; ++round) {
    auto pseudo = generate_pseudo_pairs(cur, meta, c.cfg.arch, ds, rf);
    auto o = opt;
    o.seed = mix_seed(opt.seed, uint64_t(round));
    o.log_path = round + 1 == c.cfg.fdm.rounds ? c.log("fdm.csv") : "";
    cur = pretrain_fdm(std::move(cur), teacher, true, c.cfg.arch, ds, tr, pseudo,
                       c.cfg.fdm.gamma, o);
    meta.phase = "fdm";
  }
  store(c, path, cur, "fdm", opt.seed, false);
  return cur;
}

ParamSet cmd_finetune(const CliCtx& c, const std::string& init_spec) {
  const std::string path = c.ckpt("segnet.ckpt");
  if (auto r = reuse(c, path, "finetune")) return std::move(r->first);
  Dataset ds = open_data(c);

  std::string init_path;
  if (init_spec == "auto") {
    if (fs::exists(c.ckpt("fdm.ckpt")))
      init_path = c.ckpt("fdm.ckpt");
    else if (fs::exists(c.ckpt("basic.ckpt")))
      init_path = c.ckpt("basic.ckpt");
  } else if (init_spec != "none") {
    init_path = init_spec;
  }

  auto opt = c.cfg.finetune_options(c.log("finetune.csv"));
  ParamSet seg = build_segnet(c.cfg.arch, mix_seed(opt.seed, "init.segnet"));
  ParamSet pre;
  if (!init_path.empty()) {
    pre = load_ckpt_as(init_path, "pre-training");
    seg = init_from_pretrain(pre, seg);
    std::printf("[fogseg] finetune: initialized from %s\n", init_path.c_str());
  }
  const ParamSet* defogger =
      (opt.input == FinetuneInput::defogged && !init_path.empty()) ? &pre : nullptr;
  if (opt.input == FinetuneInput::defogged && defogger == nullptr)
    throw ConfigError("finetune: defogged input needs a pre-trained defogger init");
  ParamSet ps =
      finetune::finetune(std::move(seg), c.cfg.arch, ds, ds.split_indices("train"), opt, defogger);
  store(c, path, ps, "finetune", opt.seed, false);
  return ps;
}

std::string metrics_csv_row(const std::string& split, const std::string& input,
                            size_t n_samples, const evalkit::Metrics& m) {
  std::ostringstream os;
  char buf[64];
  os << 1 << "," << split << "," << input << "," << n_samples;
  std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", m.miou, m.pixel_acc);
  os << buf;
  for (double v : m.class_iou) {
    if (std::isnan(v))
      os << ",nan";
    else {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      os << buf;
    }
  }
  os << "\n";
  return os.str();
}

std::string metrics_csv_header(int num_classes) {
  std::string h = "schema_version,split,input,samples,miou,pixel_accuracy";
  for (int k = 0; k < num_classes; ++k) h += ",iou_class_" + std::to_string(k);
  return h + "\n";
}

evalkit::Metrics eval_one(const CliCtx& c, const Dataset& ds, const ParamSet& seg,
                          const std::string& split, evalkit::EvalInput input,
                          const ParamSet* defogger) {
  const auto idx = ds.split_indices(split);
  if (idx.empty()) throw ConfigError("eval: unknown or empty split " + split);
  return evalkit::evaluate(c.cfg.arch, seg, ds, idx, input, defogger);
}

evalkit::EvalInput parse_input(const std::string& s) {
  if (s == "fog") return evalkit::EvalInput::fog;
  if (s == "clean") return evalkit::EvalInput::clean;
  if (s == "defogged") return evalkit::EvalInput::defogged;
  throw ConfigError("eval: input must be fog, clean or defogged (got " + s + ")");
}

void cmd_eval(const CliCtx& c, const std::string& segnet_path, const std::string& split,
              const std::string& input_s, const std::string& defogger_path) {
  Dataset ds = open_data(c);
  ParamSet seg = load_ckpt_as(segnet_path, "segmentation");
  const auto input = parse_input(input_s);
  ParamSet df;
  const ParamSet* dfp = nullptr;
  if (input == evalkit::EvalInput::defogged) {
    std::string p = defogger_path;
    if (p.empty())
      p = fs::exists(c.ckpt("fdm.ckpt")) ? c.ckpt("fdm.ckpt") : c.ckpt("basic.ckpt");
    df = load_ckpt_as(p, "defogger");
    dfp = &df;
  }
  const auto m = eval_one(c, ds, seg, split, input, dfp);
  const std::string path = c.out + "/metrics/eval_" + split + "_" + input_s + ".csv";
  atomic_write_file(path, metrics_csv_header(c.cfg.arch.num_classes) +
                              metrics_csv_row(split, input_s, ds.split_indices(split).size(), m));
  std::printf("[fogseg] eval: split=%s input=%s miou=%.4f pixel_acc=%.4f -> %s\n",
              split.c_str(), input_s.c_str(), m.miou, m.pixel_acc, path.c_str());
}

void cmd_ablate(const CliCtx& c, const std::string& preset,
                const std::vector<uint64_t>& seeds) {
  evalkit::AblationSpec spec;
  spec.preset = preset;
  spec.seeds = seeds;
  spec.config = c.cfg;
  spec.dataset_root = c.data_root;
  spec.work_dir = c.out + "/ablate";
  const auto table = evalkit::run_ablation(spec);
  evalkit::emit_report(table, c.out + "/reports");
  std::printf("[fogseg] ablate: %s (%zu rows, %zu seeds) -> %s/reports\n", preset.c_str(),
              table.rows.size(), seeds.size(), c.out.c_str());
  for (const auto& r : table.rows)
    std::printf("  %-34s fog %6.2f +-%5.2f  clean %6.2f +-%5.2f\n", r.label.c_str(),
                evalkit::mean_of(r.fog_miou), evalkit::stddev_of(r.fog_miou),
                evalkit::mean_of(r.clean_miou), evalkit::stddev_of(r.clean_miou));
}

void cmd_report(const CliCtx& c, const std::string& segnet_path,
                const std::string& defogger_path, int n_samples) {
  Dataset ds = open_data(c);
  ParamSet seg = load_ckpt_as(segnet_path, "segmentation");
  ParamSet df;
  const ParamSet* dfp = nullptr;
  if (!defogger_path.empty()) {
    df = load_ckpt_as(defogger_path, "defogger");
    dfp = &df;
  } else if (fs::exists(c.ckpt("fdm.ckpt"))) {
    df = load_ckpt_as(c.ckpt("fdm.ckpt"), "defogger");
    dfp = &df;
  } else if (fs::exists(c.ckpt("basic.ckpt"))) {
    df = load_ckpt_as(c.ckpt("basic.ckpt"), "defogger");
    dfp = &df;
  }
  auto idx = ds.split_indices("test");
  if (int(idx.size()) > n_samples) idx.resize(size_t(n_samples));
  evalkit::emit_visuals(c.cfg.arch, seg, dfp, ds, idx, c.out + "/reports");
  std::printf("[fogseg] report: %zu sample strips + overlays -> %s/reports\n", idx.size(),
              c.out.c_str());
}

void cmd_pipeline(const CliCtx& c) {
  cmd_gen_data(c);
  cmd_train_clean(c);
  cmd_pretrain_basic(c, c.ckpt("fsnetc.ckpt"));
  cmd_fdm(c, c.ckpt("basic.ckpt"), c.ckpt("fsnetc.ckpt"));
  ParamSet seg = cmd_finetune(c, "auto");

  Dataset ds = open_data(c);
  ParamSet df = load_ckpt_as(c.ckpt("fdm.ckpt"), "defogger");
  std::string csv = metrics_csv_header(c.cfg.arch.num_classes);
  const size_t n = ds.split_indices("test").size();
  csv += metrics_csv_row("test", "fog", n,
                         eval_one(c, ds, seg, "test", evalkit::EvalInput::fog, nullptr));
  csv += metrics_csv_row("test", "clean", n,
                         eval_one(c, ds, seg, "test", evalkit::EvalInput::clean, nullptr));
  csv += metrics_csv_row("test", "defogged", n,
                         eval_one(c, ds, seg, "test", evalkit::EvalInput::defogged, &df));
  const std::string path = c.out + "/metrics/final_metrics.csv";
  atomic_write_file(path, csv);
  std::printf("[fogseg] pipeline: final metrics -> %s\n", path.c_str());
  cmd_report(c, c.ckpt("segnet.ckpt"), c.ckpt("fdm.ckpt"), 4);
}

int dispatch(int argc, char** argv) {
  CLI::App app{"procedural foggy-scene segmentation workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_flag, data_flag;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed_flag;
  bool force = false;
  app.add_option("--config", config_path, "config file (json)");
  app.add_option("--set", sets, "override a config key (dotted.path=value)");
  app.add_option("--seed", seed_flag, "set the run seed and dataset seed");
  app.add_option("--out", out_flag, "output root (default $FOGSEG_OUTPUT_ROOT)");
  app.add_option("--data-root", data_flag, "dataset directory (default <out>/data)");
  app.add_flag("--force", force, "retrain / rebuild even if outputs exist");

  auto* sc_gen = app.add_subcommand("gen-data", "generate the procedural dataset")->fallthrough();
  auto* sc_clean = app.add_subcommand("train-clean", "train the clean-scene reference net")->fallthrough();
  auto* sc_basic =
      app.add_subcommand("pretrain-basic", "alignment pre-training on synthetic pairs")->fallthrough();
  auto* sc_fdm = app.add_subcommand("fdm", "migration re-pretraining with pseudo pairs")->fallthrough();
  auto* sc_ft = app.add_subcommand("finetune", "segmentation fine-tuning")->fallthrough();
  auto* sc_eval = app.add_subcommand("eval", "evaluate a segmentation checkpoint")->fallthrough();
  auto* sc_abl = app.add_subcommand("ablate", "run a preset ablation study")->fallthrough();
  auto* sc_rep = app.add_subcommand("report", "emit sample strips and overlays")->fallthrough();
  auto* sc_pipe = app.add_subcommand("pipeline", "run every stage end to end")->fallthrough();

  std::string teacher_path, base_path, init_spec = "auto";
  sc_basic->add_option("--teacher", teacher_path, "clean reference checkpoint");
  sc_fdm->add_option("--teacher", teacher_path, "clean reference checkpoint");
  sc_fdm->add_option("--base", base_path, "pre-trained defogger to migrate");
  sc_ft->add_option("--init", init_spec, "pre-training checkpoint, 'auto' or 'none'");

  std::string segnet_path, defogger_path, split = "test", input_s = "fog";
  sc_eval->add_option("--segnet", segnet_path, "segmentation checkpoint");
  sc_eval->add_option("--split", split, "dataset split");
  sc_eval->add_option("--input", input_s, "fog | clean | defogged");
  sc_eval->add_option("--defogger", defogger_path, "defogger checkpoint");

  std::string preset;
  std::vector<uint64_t> seeds = {1, 2, 3};
  sc_abl->add_option("--preset", preset, "table2..table8 | fig1c | fig8")->required();
  sc_abl->add_option("--seeds", seeds, "seeds to aggregate over");

  int n_samples = 4;
  sc_rep->add_option("--segnet", segnet_path, "segmentation checkpoint");
  sc_rep->add_option("--defogger", defogger_path, "defogger checkpoint");
  sc_rep->add_option("--samples", n_samples, "number of test samples to render");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "fogseg: error kind=config exit=2 msg=\"%s\"\n", e.what());
    return 2;
  }

  CliCtx ctx;
  ctx.force = force;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw ConfigError("config file missing: " + config_path);
    ctx.cfg = RunConfig::from_json(read_file_bytes(config_path));
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects dotted.path=value, got " + kv);
    ctx.cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_flag) {
    ctx.cfg.seed = *seed_flag;
    ctx.cfg.data.seed = *seed_flag;
    ctx.cfg.validate();
  }

  if (!out_flag.empty())
    ctx.out = out_flag;
  else if (const char* env = std::getenv("FOGSEG_OUTPUT_ROOT"))
    ctx.out = env;
  else
    ctx.out = "./fogseg_out";
  ctx.data_root = data_flag.empty() ? ctx.out + "/data" : data_flag;
  ensure_dirs(ctx);

  if (teacher_path.empty()) teacher_path = ctx.ckpt("fsnetc.ckpt");
  if (base_path.empty()) base_path = ctx.ckpt("basic.ckpt");
  if (segnet_path.empty()) segnet_path = ctx.ckpt("segnet.ckpt");

  if (app.got_subcommand(sc_gen)) cmd_gen_data(ctx);
  if (app.got_subcommand(sc_clean)) cmd_train_clean(ctx);
  if (app.got_subcommand(sc_basic)) cmd_pretrain_basic(ctx, teacher_path);
  if (app.got_subcommand(sc_fdm)) cmd_fdm(ctx, base_path, teacher_path);
  if (app.got_subcommand(sc_ft)) cmd_finetune(ctx, init_spec);
  if (app.got_subcommand(sc_eval)) cmd_eval(ctx, segnet_path, split, input_s, defogger_path);
  if (app.got_subcommand(sc_abl)) cmd_ablate(ctx, preset, seeds);
  if (app.got_subcommand(sc_rep)) cmd_report(ctx, segnet_path, defogger_path, n_samples);
  if (app.got_subcommand(sc_pipe)) cmd_pipeline(ctx);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "fogseg: error kind=config exit=2 msg=\"%s\"\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "fogseg: error kind=data exit=3 msg=\"%s\"\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "fogseg: error kind=numeric exit=4 msg=\"%s\"\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fogseg: error kind=numeric exit=4 msg=\"%s\"\n", e.what());
    return 4;
  }
}
