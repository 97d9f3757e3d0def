#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fogseg/fogsim.hpp"
#include "fogseg/nets.hpp"
#include "fogseg/runconfig.hpp"

// Metrics, split evaluation, the ablation presets, and report emission.

namespace fogseg {
namespace evalkit {

// Rows index ground truth, columns prediction. Total count equals the number
// of evaluated (non-ignore) pixels.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int K) : num_classes(K), counts(size_t(K) * size_t(K), 0) {
    if (K <= 0) throw ConfigError("confusion: need at least one class");
  }

  int64_t at(int gt, int pred) const { return counts[size_t(gt) * num_classes + pred]; }
  int64_t& at(int gt, int pred) { return counts[size_t(gt) * num_classes + pred]; }
  int64_t total() const;
  void add(const Tensori& pred, const Tensori& gt);  // accumulates; ignores gt==255
};

ConfusionMatrix confusion(const Tensori& pred, const Tensori& gt, int num_classes);

// IoU per class; classes absent from both prediction and ground truth come
// back as NaN and are excluded from the mean.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);
double miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

// 10*log10(1/mse) for [0,1]-range rasters; identical inputs -> +infinity.
double psnr(const Tensorf& a, const Tensorf& b);

enum class EvalInput { fog, clean, defogged };
const char* to_string(EvalInput in);

struct Metrics {
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::vector<double> class_iou;
  ConfusionMatrix cm;
};

// Argmax segmentation over a split (labels loaded in evaluation mode).
// input==defogged routes each foggy raster through `defogger` first.
Metrics evaluate(const ArchConfig& arch, const ParamSet& seg, const Dataset& ds,
                 const std::vector<size_t>& indices, EvalInput input,
                 const ParamSet* defogger = nullptr);

// ---- ablation presets ----

struct AblationSpec {
  std::string preset;  // table2..table8 | fig1c | fig8
  std::vector<uint64_t> seeds = {1, 2, 3};
  RunConfig config;
  std::string dataset_root;
  std::string work_dir;  // stage cache + per-phase training logs
};

struct CurvePoint {
  int64_t step = 0;
  double value = 0.0;
};

struct AblationRow {
  std::string label;   // mirrors the source row naming, e.g. "(ii) joint"
  std::string detail;  // human-readable variant description
  std::vector<double> fog_miou;    // one entry per seed
  std::vector<double> clean_miou;  // one entry per seed
};

struct AblationTable {
  std::string preset;
  std::vector<uint64_t> seeds;
  std::vector<AblationRow> rows;
  // fine-tuning loss trajectories per variant (first seed), for the curve plot
  std::vector<std::pair<std::string, std::vector<CurvePoint>>> curves;
};

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);  // sample std; 0 for a single value

// Runs every row of the preset across all seeds and evaluates on the fog and
// clean test splits. Stage results are cached under work_dir/cache keyed by
// their full recipe, so shared stages train once.
AblationTable run_ablation(const AblationSpec& spec);

// tables/<preset>.csv + plots/*.ppm (bar chart per split; curve plot when
// trajectories are present). Deterministic for a fixed table.
void emit_report(const AblationTable& table, const std::string& out_dir);

// Side-by-side fog/defogged/clean strips and prediction/ground-truth overlays
// for the given samples.
void emit_visuals(const ArchConfig& arch, const ParamSet& seg, const ParamSet* defogger,
                  const Dataset& ds, const std::vector<size_t>& indices,
                  const std::string& out_dir);

// Fixed overlay palette, one RGB triple per class index (cycled past its
// size); documented in the repo docs.
const std::vector<std::array<uint8_t, 3>>& class_palette();
Tensorf overlay_labels(const Tensorf& img, const Tensori& labels, float alpha = 0.55f);

}  // namespace evalkit
using namespace evalkit;
}  // namespace fogseg
