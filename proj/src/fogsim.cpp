#include "fogseg/fogsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "fogseg/common.hpp"
#include "fogseg/imageio.hpp"
#include "fogseg/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fogseg {
namespace fogsim {

void SceneConfig::validate() const {
  if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0)
    throw ConfigError("scene dimensions must be >= 32 and divisible by 32");
  if (num_classes < 2 || num_classes > 32) throw ConfigError("num_classes must be in [2,32]");
  if (min_shapes < 0 || max_shapes < min_shapes)
    throw ConfigError("invalid shapes-per-scene range");
  if (!(depth_near > 0.0f) || !(depth_far > depth_near))
    throw ConfigError("need 0 < depth_near < depth_far");
}

void DatasetConfig::validate() const {
  scene.validate();
  if (train < 0 || val < 0 || test < 0 || real_fog < 0)
    throw ConfigError("split counts must be non-negative");
  if (!(synth_beta_lo >= 0 && synth_beta_hi >= synth_beta_lo))
    throw ConfigError("invalid synthetic beta range");
  if (!(real_beta_lo >= 0 && real_beta_hi >= real_beta_lo))
    throw ConfigError("invalid real beta range");
  if (!(airlight_lo >= 0 && airlight_hi <= 1 && airlight_hi >= airlight_lo))
    throw ConfigError("invalid airlight range");
  if (illum_amplitude < 0 || illum_amplitude > 0.2f)
    throw ConfigError("illumination amplitude out of range");
}

namespace {

// Stateless per-pixel noise so textures are stable under any draw order.
float pixel_noise(uint64_t seed, int y, int x, int c) {
  uint64_t h = mix_seed(seed, (uint64_t(uint32_t(y)) << 34) ^ (uint64_t(uint32_t(x)) << 2) ^
                                  uint64_t(uint32_t(c)));
  return float((h >> 11) * 0x1.0p-53);
}

struct Rgb {
  float r, g, b;
};

constexpr Rgb kPalette[] = {
    {0.78f, 0.32f, 0.25f}, {0.28f, 0.52f, 0.72f}, {0.36f, 0.62f, 0.30f},
    {0.72f, 0.62f, 0.22f}, {0.55f, 0.35f, 0.62f}, {0.75f, 0.48f, 0.58f},
    {0.30f, 0.65f, 0.62f}, {0.62f, 0.44f, 0.28f}, {0.46f, 0.46f, 0.70f},
    {0.68f, 0.68f, 0.40f}, {0.40f, 0.30f, 0.45f}, {0.58f, 0.70f, 0.55f},
};

struct Shape {
  int kind;  // 0 rect, 1 ellipse, 2 triangle
  int cls;
  float depth;
  float cx, cy, rx, ry;
  float x0, y0, x1, y1, x2, y2;  // triangle vertices
  float stripe_freq, stripe_phase;
  uint64_t tex_seed;
};

bool shape_hits(const Shape& s, int y, int x) {
  if (s.kind == 0) {
    return std::abs(x - s.cx) <= s.rx && std::abs(y - s.cy) <= s.ry;
  }
  if (s.kind == 1) {
    const float dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
    return dx * dx + dy * dy <= 1.0f;
  }
  auto edge = [&](float ax, float ay, float bx, float by) {
    return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
  };
  const float e0 = edge(s.x0, s.y0, s.x1, s.y1);
  const float e1 = edge(s.x1, s.y1, s.x2, s.y2);
  const float e2 = edge(s.x2, s.y2, s.x0, s.y0);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace

SceneParts gen_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const int H = cfg.height, W = cfg.width, K = cfg.num_classes;
  Rng rng(mix_seed(seed, "scene"));

  const int horizon = int(std::lround(H * rng.uniform(0.30, 0.48)));
  const int n_shapes = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);

  std::vector<Shape> shapes(static_cast<size_t>(n_shapes));
  for (int i = 0; i < n_shapes; ++i) {
    Shape& s = shapes[size_t(i)];
    s.kind = rng.uniform_int(0, 2);
    s.cls = K > 2 ? 2 + i % (K - 2) : 1;
    s.depth = float(rng.uniform(cfg.depth_near * 1.2, cfg.depth_far * 0.8));
    s.cy = float(rng.uniform(horizon - H / 8.0, H - 2.0));
    s.cx = float(rng.uniform(2.0, W - 2.0));
    s.rx = float(rng.uniform(W / 16.0, W / 6.0));
    s.ry = float(rng.uniform(H / 16.0, H / 6.0));
    s.x0 = s.cx - s.rx;
    s.y0 = s.cy + s.ry;
    s.x1 = s.cx + s.rx;
    s.y1 = s.cy + float(rng.uniform(-0.5, 0.5)) * s.ry;
    s.x2 = s.cx + float(rng.uniform(-0.5, 0.5)) * s.rx;
    s.y2 = s.cy - s.ry;
    s.stripe_freq = float(rng.uniform(0.2, 0.9));
    s.stripe_phase = float(rng.uniform(0.0, 6.28318));
    s.tex_seed = rng.next_u64();
  }
  // painter's order: far objects first so nearer ones overwrite
  std::stable_sort(shapes.begin(), shapes.end(),
                   [](const Shape& a, const Shape& b) { return a.depth > b.depth; });

  const uint64_t sky_seed = rng.next_u64();
  const uint64_t ground_seed = rng.next_u64();

  SceneParts out;
  out.clean = Tensorf({3, H, W}, 0.0f);
  out.depth = Tensorf({H, W}, 0.0f);
  out.label = Tensori({H, W}, 0);
  float* img = out.clean.mutable_data();
  float* dep = out.depth.mutable_data();
  int32_t* lab = out.label.mutable_data();
  const int64_t plane = int64_t(H) * W;

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int64_t p = int64_t(y) * W + x;
      float r, g, b, d;
      int cls;
      if (y < horizon) {
        const float t = horizon > 1 ? float(y) / float(horizon - 1) : 0.0f;
        r = 0.55f + 0.20f * t;
        g = 0.65f + 0.18f * t;
        b = 0.85f + 0.10f * t;
        const float n = 0.02f * (pixel_noise(sky_seed, y, x, 0) - 0.5f);
        r += n;
        g += n;
        b += n;
        d = cfg.depth_far;
        cls = 0;
      } else {
        const float t = (H - 1 > horizon) ? float(y - horizon) / float(H - 1 - horizon) : 1.0f;
        d = cfg.depth_far + (cfg.depth_near - cfg.depth_far) * t;
        const float stripes = 0.04f * std::sin(0.55f * x + 2.1f * t);
        r = 0.38f - 0.10f * t + stripes;
        g = 0.33f - 0.06f * t + stripes;
        b = 0.26f - 0.04f * t + stripes;
        const float n = 0.05f * (pixel_noise(ground_seed, y, x, 0) - 0.5f);
        r += n;
        g += n;
        b += n;
        cls = std::min(1, K - 1);
      }
      for (const Shape& s : shapes) {
        if (!shape_hits(s, y, x)) continue;
        const Rgb base = kPalette[size_t(s.cls) % std::size(kPalette)];
        const float stripe =
            0.06f * std::sin(s.stripe_freq * (x + 0.7f * y) + s.stripe_phase);
        const float n = 0.06f * (pixel_noise(s.tex_seed, y, x, 0) - 0.5f);
        r = base.r + stripe + n;
        g = base.g + stripe - n * 0.5f;
        b = base.b - stripe + n;
        d = s.depth;
        cls = s.cls;
      }
      img[0 * plane + p] = clamp01(r);
      img[1 * plane + p] = clamp01(g);
      img[2 * plane + p] = clamp01(b);
      dep[p] = d;
      lab[p] = cls;
    }
  }
  out.clean = quantize_raster(out.clean);
  return out;
}

Tensorf apply_fog(const Tensorf& clean, const Tensorf& depth, float beta, float airlight) {
  if (clean.ndim() != 3 || clean.dim(0) != 3 || depth.ndim() != 2 ||
      clean.dim(1) != depth.dim(0) || clean.dim(2) != depth.dim(1))
    throw DimensionError("apply_fog: clean {3,H,W} and depth {H,W} must agree");
  if (beta < 0.0f) throw DomainError("apply_fog: beta must be >= 0");
  if (airlight < 0.0f || airlight > 1.0f) throw DomainError("apply_fog: airlight must be in [0,1]");

  Tensorf out(clean.dims(), 0.0f);
  float* od = out.mutable_data();
  const float* cd = clean.data();
  const float* dd = depth.data();
  const int64_t plane = int64_t(clean.dim(1)) * clean.dim(2);
  for (int64_t p = 0; p < plane; ++p) {
    const float t = std::exp(-beta * dd[p]);
    const float fogterm = airlight * (1.0f - t);
    for (int c = 0; c < 3; ++c) od[c * plane + p] = clamp01(cd[c * plane + p] * t + fogterm);
  }
  return out;
}

Tensorf normalize_depth(const Tensorf& depth, float dmin, float dmax) {
  if (!(dmax > dmin)) throw DomainError("normalize_depth: need dmax > dmin");
  Tensorf out(depth.dims(), 0.0f);
  float* od = out.mutable_data();
  const float* dd = depth.data();
  const float inv = 1.0f / (dmax - dmin);
  for (int64_t i = 0; i < depth.numel(); ++i) od[i] = clamp01((dd[i] - dmin) * inv);
  return out;
}

namespace {

ordered_json scene_to_json(const SceneConfig& s) {
  ordered_json j;
  j["height"] = s.height;
  j["width"] = s.width;
  j["num_classes"] = s.num_classes;
  j["min_shapes"] = s.min_shapes;
  j["max_shapes"] = s.max_shapes;
  j["depth_near"] = double(s.depth_near);
  j["depth_far"] = double(s.depth_far);
  return j;
}

SceneConfig scene_from_json(const ordered_json& j) {
  SceneConfig s;
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.min_shapes = j.at("min_shapes").get<int>();
  s.max_shapes = j.at("max_shapes").get<int>();
  s.depth_near = float(j.at("depth_near").get<double>());
  s.depth_far = float(j.at("depth_far").get<double>());
  return s;
}

}  // namespace

std::string Manifest::to_json() const {
  ordered_json j;
  j["format_version"] = format_version;
  j["seed"] = seed;
  j["scene"] = scene_to_json(scene);
  ordered_json arr = ordered_json::array();
  for (const ManifestEntry& e : samples) {
    ordered_json je;
    je["id"] = e.id;
    je["split"] = e.split;
    je["beta"] = double(e.beta);
    je["airlight"] = double(e.airlight);
    je["labels_visible"] = e.labels_visible;
    arr.push_back(std::move(je));
  }
  j["samples"] = std::move(arr);
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("manifest parse failure: ") + e.what());
  }
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw DataError("unsupported manifest format_version");
    m.seed = j.at("seed").get<uint64_t>();
    m.scene = scene_from_json(j.at("scene"));
    for (const auto& je : j.at("samples")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.split = je.at("split").get<std::string>();
      e.beta = float(je.at("beta").get<double>());
      e.airlight = float(je.at("airlight").get<double>());
      e.labels_visible = je.at("labels_visible").get<bool>();
      m.samples.push_back(std::move(e));
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("manifest field error: ") + e.what());
  }
  return m;
}

namespace {

// The real domain's mild scene-shading: a smooth additive field in
// [-amp, amp], applied to the clean raster before quantization and fogging.
void bake_illumination(Tensorf& clean, uint64_t seed, float amp) {
  if (amp <= 0.0f) return;
  const int H = clean.dim(1), W = clean.dim(2);
  Rng rng(mix_seed(seed, "illum"));
  const float fx = float(rng.uniform(0.5, 1.5)) * 6.28318f / float(W);
  const float fy = float(rng.uniform(0.5, 1.5)) * 6.28318f / float(H);
  const float ph = float(rng.uniform(0.0, 6.28318));
  float* d = clean.mutable_data();
  const int64_t plane = int64_t(H) * W;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float f = amp * std::sin(fx * x + fy * y + ph);
      const int64_t p = int64_t(y) * W + x;
      for (int c = 0; c < 3; ++c) d[c * plane + p] = clamp01(d[c * plane + p] + f);
    }
}

std::string sample_id(const std::string& split, int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), idx);
  return buf;
}

}  // namespace

Manifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create dataset directory: " + out_dir);

  Manifest m;
  m.seed = cfg.seed;
  m.scene = cfg.scene;

  struct SplitPlan {
    const char* name;
    int count;
    bool real_domain;
    bool labels_visible;
  };
  // test lives in the real beta range so the fog-test split actually sits
  // across the domain gap the curriculum is meant to bridge
  const SplitPlan plans[] = {
      {"train", cfg.train, false, true},
      {"val", cfg.val, false, true},
      {"test", cfg.test, true, true},
      {"real_fog", cfg.real_fog, true, false},
  };

  for (const SplitPlan& plan : plans) {
    const std::string split_dir = out_dir + "/" + plan.name;
    fs::create_directories(split_dir, ec);
    if (ec) throw DataError("cannot create dataset directory: " + split_dir);
    for (int i = 0; i < plan.count; ++i) {
      const std::string id = sample_id(plan.name, i);
      const uint64_t sseed = mix_seed(cfg.seed, id);
      SceneParts parts = gen_scene(sseed, cfg.scene);
      Rng rng(mix_seed(sseed, "fog"));
      float beta, airlight = float(rng.uniform(cfg.airlight_lo, cfg.airlight_hi));
      if (plan.real_domain) {
        beta = float(rng.uniform(cfg.real_beta_lo, cfg.real_beta_hi));
        bake_illumination(parts.clean, sseed, cfg.illum_amplitude);
        parts.clean = quantize_raster(parts.clean);
      } else {
        beta = float(rng.uniform(cfg.synth_beta_lo, cfg.synth_beta_hi));
      }
      const Tensorf fog = quantize_raster(apply_fog(parts.clean, parts.depth, beta, airlight));

      const std::string stem = split_dir + "/" + id;
      write_ppm(stem + ".clean.ppm", parts.clean);
      write_ppm(stem + ".fog.ppm", fog);
      write_pgm(stem + ".label.pgm", parts.label);
      write_pfm(stem + ".depth.pfm", parts.depth);

      ManifestEntry e;
      e.id = id;
      e.split = plan.name;
      e.beta = beta;
      e.airlight = airlight;
      e.labels_visible = plan.labels_visible;
      m.samples.push_back(std::move(e));
    }
  }
  atomic_write_file(out_dir + "/manifest.json", m.to_json());
  return m;
}

Dataset Dataset::open(const std::string& root) {
  Dataset d;
  d.root_ = root;
  const std::string mpath = root + "/manifest.json";
  if (!fs::exists(mpath)) throw IntegrityError("missing manifest: " + mpath);
  d.manifest_ = Manifest::from_json(read_file_bytes(mpath));
  return d;
}

std::vector<size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<size_t> idx;
  for (size_t i = 0; i < manifest_.samples.size(); ++i)
    if (manifest_.samples[i].split == split) idx.push_back(i);
  return idx;
}

SceneSample Dataset::load(size_t i, bool eval_mode) const {
  if (i >= manifest_.samples.size()) throw RangeError("dataset index out of range");
  const ManifestEntry& e = manifest_.samples[i];
  const std::string stem = root_ + "/" + e.split + "/" + e.id;
  for (const char* suffix : {".clean.ppm", ".fog.ppm", ".label.pgm", ".depth.pfm"}) {
    const std::string p = stem + suffix;
    if (!fs::exists(p)) throw IntegrityError("manifest references missing file: " + p);
  }
  SceneSample s;
  s.id = e.id;
  s.split = e.split;
  s.beta = e.beta;
  s.airlight = e.airlight;
  s.labels_visible = e.labels_visible;
  s.fog = read_ppm(stem + ".fog.ppm");
  s.depth = read_pfm(stem + ".depth.pfm");
  if (e.labels_visible || eval_mode) {
    s.clean = read_ppm(stem + ".clean.ppm");
    s.label = read_pgm(stem + ".label.pgm");
    const int K = manifest_.scene.num_classes;
    const int32_t* lab = s.label.data();
    for (int64_t p = 0; p < s.label.numel(); ++p)
      if (lab[p] != 255 && lab[p] >= K)
        throw IntegrityError("label value out of range in " + stem + ".label.pgm");
  }
  return s;
}

}  // namespace fogsim
}  // namespace fogseg
