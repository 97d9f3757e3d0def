#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fogseg/tensor.hpp"

// Procedural paired scenes: a textured toy world (sky band, ground plane,
// boxy/elliptic/triangular objects) with per-pixel depth, fogged through the
// atmospheric scattering model out = clean*exp(-beta*d) + A*(1-exp(-beta*d)).
// The "real" domain uses a disjoint, denser beta range plus a low-frequency
// illumination field baked into the clean raster before fogging, so the
// stored scalar airlight still regenerates the fog raster byte-for-byte.

namespace fogseg {
namespace fogsim {

struct SceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int min_shapes = 3;
  int max_shapes = 6;
  float depth_near = 2.0f;
  float depth_far = 20.0f;

  void validate() const;
};

struct SceneParts {
  Tensorf clean;  // {3,H,W}, already snapped to the 8-bit grid
  Tensorf depth;  // {H,W}
  Tensori label;  // {H,W}
};

SceneParts gen_scene(uint64_t seed, const SceneConfig& cfg);

Tensorf apply_fog(const Tensorf& clean, const Tensorf& depth, float beta, float airlight);

Tensorf normalize_depth(const Tensorf& depth, float dmin, float dmax);

struct DatasetConfig {
  SceneConfig scene;
  uint64_t seed = 1;
  int train = 200;
  int val = 20;
  int test = 50;
  int real_fog = 60;
  // dense enough that defogging measurably moves PSNR at 64x64
  float synth_beta_lo = 0.10f, synth_beta_hi = 0.18f;
  float real_beta_lo = 0.22f, real_beta_hi = 0.34f;
  float airlight_lo = 0.70f, airlight_hi = 0.95f;
  float illum_amplitude = 0.05f;  // clean-raster shading in the real domain

  void validate() const;
};

struct ManifestEntry {
  std::string id;
  std::string split;
  float beta = 0.0f;
  float airlight = 1.0f;
  bool labels_visible = true;
};

struct Manifest {
  int format_version = 1;
  uint64_t seed = 0;
  SceneConfig scene;
  std::vector<ManifestEntry> samples;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

struct SceneSample {
  std::string id;
  std::string split;
  Tensorf clean;
  Tensorf fog;
  Tensorf depth;
  Tensori label;
  float beta = 0.0f;
  float airlight = 1.0f;
  bool labels_visible = true;
};

Manifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir);

class Dataset {
 public:
  static Dataset open(const std::string& root);

  const Manifest& manifest() const { return manifest_; }
  size_t size() const { return manifest_.samples.size(); }
  const ManifestEntry& entry(size_t i) const { return manifest_.samples[i]; }
  std::vector<size_t> split_indices(const std::string& split) const;

  // eval_mode=true overrides the labels_visible flag (evaluation only);
  // otherwise hidden samples come back without clean raster or labels.
  SceneSample load(size_t i, bool eval_mode = false) const;

 private:
  std::string root_;
  Manifest manifest_;
};

}  // namespace fogsim
using namespace fogsim;
}  // namespace fogseg
