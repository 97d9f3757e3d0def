// Python bindings: configuration, dataset generation, the training stages,
// weight handling and evaluation, plus a few numeric helpers.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "fogseg/checkpoint.hpp"
#include "fogseg/curriculum.hpp"
#include "fogseg/evalkit.hpp"
#include "fogseg/finetune.hpp"
#include "fogseg/runconfig.hpp"

namespace py = pybind11;
using namespace fogseg;

namespace {

Tensorf tensorf_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> dims(size_t(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[size_t(i)] = int(a.shape(i));
  Tensorf t(dims, 0.0f);
  std::memcpy(t.mutable_data(), a.data(), size_t(t.numel()) * sizeof(float));
  return t;
}

Tensori tensori_from(const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> dims(size_t(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[size_t(i)] = int(a.shape(i));
  Tensori t(dims, 0);
  std::memcpy(t.mutable_data(), a.data(), size_t(t.numel()) * sizeof(int32_t));
  return t;
}

py::array_t<float> numpy_from(const Tensorf& t) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < t.ndim(); ++i) shape.push_back(t.dim(i));
  py::array_t<float> a(shape);
  std::memcpy(a.mutable_data(), t.data(), size_t(t.numel()) * sizeof(float));
  return a;
}

py::array_t<int32_t> numpy_from(const Tensori& t) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < t.ndim(); ++i) shape.push_back(t.dim(i));
  py::array_t<int32_t> a(shape);
  std::memcpy(a.mutable_data(), t.data(), size_t(t.numel()) * sizeof(int32_t));
  return a;
}

// Opaque parameter bundle with checkpoint IO.
struct Weights {
  ParamSet ps;
  std::string phase = "external";

  static Weights load(const std::string& path) {
    auto [ps, meta] = load_checkpoint(path);
    return {std::move(ps), meta.phase};
  }
  void save(const std::string& path, const std::string& phase_name) const {
    CheckpointMeta meta;
    meta.phase = phase_name.empty() ? phase : phase_name;
    save_checkpoint(path, ps, meta);
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, t] : ps.items()) out.push_back(n);
    return out;
  }
  py::array_t<float> get(const std::string& name) const { return numpy_from(ps.at(name)); }
};

evalkit::EvalInput input_from(const std::string& s) {
  if (s == "fog") return evalkit::EvalInput::fog;
  if (s == "clean") return evalkit::EvalInput::clean;
  if (s == "defogged") return evalkit::EvalInput::defogged;
  throw ConfigError("evaluate: input must be fog, clean or defogged");
}

}  // namespace

PYBIND11_MODULE(_fogseg, m) {
  m.doc() = "foggy-scene segmentation workbench (native core)";

  py::register_exception<ConfigError>(m, "FogsegConfigError");
  py::register_exception<DataError>(m, "FogsegDataError");
  py::register_exception<NumericError>(m, "FogsegNumericError");

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_json", &RunConfig::from_json, py::arg("text"))
      .def("to_json", &RunConfig::to_json)
      .def("override", &RunConfig::apply_override, py::arg("key"), py::arg("value"))
      .def("fingerprint", &RunConfig::fingerprint)
      .def_readwrite("seed", &RunConfig::seed);

  py::class_<Weights>(m, "Weights")
      .def_static("load", &Weights::load, py::arg("path"))
      .def("save", &Weights::save, py::arg("path"), py::arg("phase") = std::string())
      .def("names", &Weights::names)
      .def("get", &Weights::get, py::arg("name"))
      .def_readonly("phase", &Weights::phase);

  m.def(
      "gen_data",
      [](const RunConfig& cfg, const std::string& root) {
        return build_dataset(cfg.data, root).samples.size();
      },
      py::arg("config"), py::arg("root"), "Generate the procedural dataset; returns sample count.");

  m.def(
      "apply_fog",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& clean,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& depth,
         float beta, float airlight) {
        return numpy_from(apply_fog(tensorf_from(clean), tensorf_from(depth), beta, airlight));
      },
      py::arg("clean"), py::arg("depth"), py::arg("beta"), py::arg("airlight"),
      "Atmospheric scattering: clean*exp(-beta*d) + airlight*(1-exp(-beta*d)).");

  m.def(
      "train_clean",
      [](const RunConfig& cfg, const std::string& root) {
        Dataset ds = Dataset::open(root);
        ParamSet ps =
            train_clean_baseline(cfg.arch, ds, ds.split_indices("train"), cfg.clean_options(""));
        return Weights{std::move(ps), "clean_baseline"};
      },
      py::arg("config"), py::arg("root"), "Train the clean-scene reference segmentation net.");

  m.def(
      "pretrain_basic",
      [](const RunConfig& cfg, const std::string& root, const Weights& teacher) {
        Dataset ds = Dataset::open(root);
        auto opt = cfg.basic_options("");
        ParamSet dfnet = build_dfnet(cfg.arch, mix_seed(opt.seed, "init.dfnet"));
        ParamSet ps = pretrain_basic(std::move(dfnet), teacher.ps, true, cfg.arch, ds,
                                     ds.split_indices("train"), opt);
        return Weights{std::move(ps), "basic"};
      },
      py::arg("config"), py::arg("root"), py::arg("teacher"),
      "Defog pre-training on synthetic fog/clean pairs.");

  m.def(
      "fdm",
      [](const RunConfig& cfg, const std::string& root, const Weights& base,
         const Weights& teacher) {
        Dataset ds = Dataset::open(root);
        const auto tr = ds.split_indices("train");
        const auto rf = ds.split_indices("real_fog");
        auto opt = cfg.fdm_options("");
        CheckpointMeta meta;
        meta.phase = base.phase;
        meta.ckpt_id = "python";
        ParamSet cur = base.ps.clone();
        for (int round = 0; round < cfg.fdm.rounds; ++round) {
          auto pseudo = generate_pseudo_pairs(cur, meta, cfg.arch, ds, rf);
          auto o = opt;
          o.seed = mix_seed(opt.seed, uint64_t(round));
          cur = pretrain_fdm(cur, teacher.ps, true, cfg.arch, ds, tr, pseudo, cfg.fdm.gamma, o);
          meta.phase = "fdm";
        }
        return Weights{std::move(cur), "fdm"};
      },
      py::arg("config"), py::arg("root"), py::arg("base"), py::arg("teacher"),
      "Migration re-pretraining with pseudo pairs and weight anchoring.");

  m.def(
      "finetune",
      [](const RunConfig& cfg, const std::string& root, std::optional<Weights> init) {
        Dataset ds = Dataset::open(root);
        auto opt = cfg.finetune_options("");
        ParamSet seg = build_segnet(cfg.arch, mix_seed(opt.seed, "init.segnet"));
        const ParamSet* defogger = nullptr;
        if (init) {
          seg = init_from_pretrain(init->ps, seg);
          if (opt.input == FinetuneInput::defogged) defogger = &init->ps;
        }
        ParamSet ps = finetune::finetune(std::move(seg), cfg.arch, ds,
                                         ds.split_indices("train"), opt, defogger);
        return Weights{std::move(ps), "finetune"};
      },
      py::arg("config"), py::arg("root"), py::arg("init") = std::nullopt,
      "Segmentation fine-tuning, optionally from pre-trained encoder weights.");

  m.def(
      "evaluate",
      [](const RunConfig& cfg, const std::string& root, const Weights& seg,
         const std::string& split, const std::string& input,
         std::optional<Weights> defogger) {
        Dataset ds = Dataset::open(root);
        const auto idx = ds.split_indices(split);
        if (idx.empty()) throw ConfigError("evaluate: unknown or empty split " + split);
        const auto metrics =
            evalkit::evaluate(cfg.arch, seg.ps, ds, idx, input_from(input),
                              defogger ? &defogger->ps : nullptr);
        py::dict out;
        out["miou"] = metrics.miou;
        out["pixel_accuracy"] = metrics.pixel_acc;
        out["class_iou"] = metrics.class_iou;
        return out;
      },
      py::arg("config"), py::arg("root"), py::arg("segnet"), py::arg("split") = "test",
      py::arg("input") = "fog", py::arg("defogger") = std::nullopt,
      "Confusion-matrix metrics for a segmentation checkpoint on one split.");

  m.def(
      "interpolate",
      [](const Weights& current, const Weights& base, float gamma) {
        return Weights{interpolate_weights(current.ps, base.ps, gamma), current.phase};
      },
      py::arg("current"), py::arg("base"), py::arg("gamma"),
      "gamma * base + (1 - gamma) * current, name for name.");

  m.def(
      "miou",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& gt,
         int num_classes) {
        return evalkit::miou(evalkit::confusion(tensori_from(pred), tensori_from(gt),
                                                num_classes));
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"),
      "Mean IoU over the classes present in either map.");

  m.def(
      "psnr",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        return evalkit::psnr(tensorf_from(a), tensorf_from(b));
      },
      py::arg("a"), py::arg("b"), "10*log10(1/mse) on unit-range rasters.");

  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("total_steps"), py::arg("lr0"),
        "Polynomial decay at power 0.5.");

  m.def(
      "load_sample",
      [](const std::string& root, size_t index) {
        Dataset ds = Dataset::open(root);
        SceneSample s = ds.load(index, true);
        py::dict out;
        out["id"] = s.id;
        out["split"] = s.split;
        out["clean"] = numpy_from(s.clean);
        out["fog"] = numpy_from(s.fog);
        out["depth"] = numpy_from(s.depth);
        out["label"] = numpy_from(s.label);
        out["beta"] = s.beta;
        out["airlight"] = s.airlight;
        return out;
      },
      py::arg("root"), py::arg("index"), "Load one stored sample with all rasters.");
}
