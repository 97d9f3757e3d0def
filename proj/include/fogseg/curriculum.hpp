#pragma once

#include <string>
#include <vector>

#include "fogseg/checkpoint.hpp"
#include "fogseg/fogsim.hpp"
#include "fogseg/losses.hpp"
#include "fogseg/nets.hpp"

// Pre-training stages. The clean baseline produces the frozen teacher; basic
// pre-training fits DFnet with encoder/decoder alignment losses on synthetic
// pairs; the migration round defogs the hidden-label real-fog split into
// pseudo pairs and re-pretrains on the union while anchoring every step to
// the basic weights at ratio gamma; the depth pretext swaps the defogging
// target for normalized scene depth.

namespace fogseg {
namespace curriculum {

struct CleanBaselineOptions {
  int steps = 800;
  int batch = 4;
  float encoder_lr = 1e-3f;
  float decoder_lr = 1e-2f;
  float momentum = 0.9f;
  float poly_power = 0.5f;
  // photometric augmentation: per-sample contrast gain in [1-c, 1+c] around
  // mid-gray and brightness shift in [-b, b]; zero disables
  float jitter_contrast = 0.4f;
  float jitter_brightness = 0.2f;
  uint64_t seed = 1;
  std::string log_path;
};

struct PretrainOptions {
  int steps = 2000;
  int batch = 6;
  float lr0 = 5e-5f;
  float lr1 = 1e-5f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.99f;
  bool use_dct = true;
  bool use_sed = true;
  bool use_l1 = false;  // plain pixel-reconstruction baseline
  uint64_t seed = 1;
  std::string log_path;
};

// Coupled reference point: one segmentation network carries the class loss
// and both alignment losses at once, under the pre-training optimizer.
struct JointOptions {
  int steps = 5000;
  int batch = 4;
  float lr0 = 1e-3f;
  float lr1 = 1e-5f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.99f;
  uint64_t seed = 1;
  std::string log_path;
};

struct PseudoPair {
  std::string id;
  Tensorf fog;
  Tensorf defogged;    // surrogate clean reference
  std::string provenance;  // checkpoint id that produced it
};

// Supervised teacher training on clean rasters. The returned weights are the
// frozen reference for every later phase; callers persist them with
// frozen=true.
ParamSet train_clean_baseline(const ArchConfig& arch, const Dataset& ds,
                              const std::vector<size_t>& indices,
                              const CleanBaselineOptions& opt);

// Defog pre-training on paired synthetic fog/clean. Loss selection follows
// the flags; at least one loss must be enabled.
ParamSet pretrain_basic(ParamSet dfnet, const ParamSet& fsnetc, bool fsnetc_frozen,
                        const ArchConfig& arch, const Dataset& ds,
                        const std::vector<size_t>& pair_indices, const PretrainOptions& opt);

// Single-model alternative: the class loss and both alignment losses
// back-propagate through one shared segmentation network. Used by the
// ablation harness as the coupled-training reference point.
ParamSet joint_train(ParamSet fsnet, const ParamSet& fsnetc, bool fsnetc_frozen,
                     const ArchConfig& arch, const Dataset& ds,
                     const std::vector<size_t>& indices, const JointOptions& opt);

std::vector<PseudoPair> generate_pseudo_pairs(const ParamSet& dfnet, const CheckpointMeta& meta,
                                              const ArchConfig& arch, const Dataset& ds,
                                              const std::vector<size_t>& real_indices);

// out = gamma * base + (1 - gamma) * current, name for name.
ParamSet interpolate_weights(const ParamSet& current, const ParamSet& base, float gamma);

ParamSet pretrain_fdm(const ParamSet& dfnet_base, const ParamSet& fsnetc, bool fsnetc_frozen,
                      const ArchConfig& arch, const Dataset& ds,
                      const std::vector<size_t>& synth_indices,
                      const std::vector<PseudoPair>& pseudo, float gamma,
                      const PretrainOptions& opt);

// Depth-estimation pretext: DFnet with a 1-channel head regresses normalized
// depth (plain L1) while the flags add the alignment losses on top. At least
// one of use_dct/use_sed must be set.
ParamSet pretrain_depth(ParamSet dfnet1, const ParamSet& fsnetc, bool fsnetc_frozen,
                        const ArchConfig& arch, const Dataset& ds,
                        const std::vector<size_t>& indices, const PretrainOptions& opt);

// Mean per-sample pre-training loss at fixed weights (no gradients); used for
// before/after comparisons on held-out pairs.
float eval_pretrain_loss(const ParamSet& dfnet, const ParamSet& fsnetc, const ArchConfig& arch,
                         const Dataset& ds, const std::vector<size_t>& indices, bool use_dct,
                         bool use_sed, bool use_l1);

// Same, but over already-materialized pairs (e.g. held-out pseudo pairs).
float eval_pretrain_loss(const ParamSet& dfnet, const ParamSet& fsnetc, const ArchConfig& arch,
                         const std::vector<PseudoPair>& pairs, bool use_dct, bool use_sed,
                         bool use_l1);

// Mean absolute error of the depth pretext on a split.
float eval_depth_mae(const ParamSet& dfnet1, const ArchConfig& arch, const Dataset& ds,
                     const std::vector<size_t>& indices);

}  // namespace curriculum
using namespace curriculum;
}  // namespace fogseg
