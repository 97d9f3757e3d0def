#include <doctest.h>

#include <filesystem>
#include <set>

#include "fogseg/fogsim.hpp"
#include "fogseg/imageio.hpp"
#include "fogseg/rng.hpp"

using namespace fogseg;
namespace fs = std::filesystem;

namespace {
SceneConfig small_scene() {
  SceneConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  return cfg;
}
}  // namespace

TEST_CASE("gen_scene determinism and label coverage") {
  const SceneConfig cfg = small_scene();
  const SceneParts a = gen_scene(7, cfg);
  const SceneParts b = gen_scene(7, cfg);
  CHECK(a.clean.bitwise_equal(b.clean));
  CHECK(a.depth.bitwise_equal(b.depth));
  CHECK(a.label.bitwise_equal(b.label));

  const SceneParts c = gen_scene(8, cfg);
  CHECK_FALSE(a.label.bitwise_equal(c.label));

  std::set<int32_t> classes;
  for (int64_t i = 0; i < a.label.numel(); ++i) {
    const int32_t v = a.label[i];
    CHECK(v >= 0);
    CHECK(v < cfg.num_classes);
    classes.insert(v);
  }
  CHECK(classes.size() >= 2);

  for (int64_t i = 0; i < a.depth.numel(); ++i) {
    CHECK(a.depth[i] >= cfg.depth_near);
    CHECK(a.depth[i] <= cfg.depth_far);
  }
  CHECK(a.clean.all_finite());

  SceneConfig bad = cfg;
  bad.height = 48;  // not divisible by 32
  CHECK_THROWS_AS(gen_scene(1, bad), ConfigError);
  bad = cfg;
  bad.num_classes = 1;
  CHECK_THROWS_AS(gen_scene(1, bad), ConfigError);
}

TEST_CASE("apply_fog identities") {
  const SceneParts s = gen_scene(3, small_scene());

  // beta = 0 is exact identity
  const Tensorf same = apply_fog(s.clean, s.depth, 0.0f, 0.9f);
  CHECK(same.bitwise_equal(s.clean));

  // scalar oracle: 0.8*e^{-1} + 1*(1 - e^{-1})
  Tensorf pix({3, 1, 1}, 0.8f);
  Tensorf d({1, 1}, 2.0f);
  const Tensorf fogged = apply_fog(pix, d, 0.5f, 1.0f);
  const double expect = 0.8 * std::exp(-1.0) + (1.0 - std::exp(-1.0));
  CHECK(fogged[0] == doctest::Approx(expect).epsilon(1e-4));

  // saturated fog approaches airlight
  Tensorf deep({1, 1}, 400.0f);
  const Tensorf sat = apply_fog(pix, deep, 0.05f, 0.73f);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(sat[c] - 0.73f) < 1e-6);

  CHECK_THROWS_AS(apply_fog(s.clean, Tensorf({4, 4}, 1.0f), 0.1f, 0.9f), DimensionError);
  CHECK_THROWS_AS(apply_fog(s.clean, s.depth, -0.1f, 0.9f), DomainError);
  CHECK_THROWS_AS(apply_fog(s.clean, s.depth, 0.1f, 1.5f), DomainError);
}

TEST_CASE("fog is monotone toward airlight in beta") {
  Rng rng(31);
  int checked = 0;
  while (checked < 1000) {
    const float clean = float(rng.uniform());
    const float airlight = float(rng.uniform());
    const float d = float(rng.uniform(0.5, 20.0));
    const float b1 = float(rng.uniform(0.0, 0.2));
    const float b2 = b1 + float(rng.uniform(0.01, 0.2));
    Tensorf c({3, 1, 1}, clean);
    Tensorf dep({1, 1}, d);
    const float f1 = apply_fog(c, dep, b1, airlight)[0];
    const float f2 = apply_fog(c, dep, b2, airlight)[0];
    if (clean < airlight)
      CHECK(f2 >= f1);
    else
      CHECK(f1 >= f2);
    ++checked;
  }
}

TEST_CASE("transmittance stays in (0,1]") {
  Rng rng(32);
  for (int i = 0; i < 1000; ++i) {
    const float t = std::exp(-float(rng.uniform(0.0, 1.0)) * float(rng.uniform(0.0, 50.0)));
    CHECK(t > 0.0f);
    CHECK(t <= 1.0f);
  }
}

TEST_CASE("dataset build, manifest, and round-trip regeneration") {
  const std::string root = (fs::temp_directory_path() / "fogseg_ds_test").string();
  fs::remove_all(root);

  DatasetConfig cfg;
  cfg.scene = small_scene();
  cfg.seed = 5;
  cfg.train = 4;
  cfg.val = 2;
  cfg.test = 3;
  cfg.real_fog = 3;

  const Manifest m = build_dataset(cfg, root);
  CHECK(m.samples.size() == 12);

  // deterministic: a second build into another directory matches byte-wise
  const std::string root2 = root + "_b";
  fs::remove_all(root2);
  const Manifest m2 = build_dataset(cfg, root2);
  CHECK(m.to_json() == m2.to_json());
  CHECK(read_file_bytes(root + "/train/train_0000.fog.ppm") ==
        read_file_bytes(root2 + "/train/train_0000.fog.ppm"));

  const Dataset ds = Dataset::open(root);
  CHECK(ds.size() == 12);
  CHECK(ds.split_indices("train").size() == 4);
  CHECK(ds.split_indices("real_fog").size() == 3);

  int hidden = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const ManifestEntry& e = ds.entry(i);
    if (e.split == "real_fog") {
      CHECK_FALSE(e.labels_visible);
      ++hidden;
      const SceneSample s = ds.load(i);
      CHECK(s.label.numel() == 0);  // withheld outside evaluation mode
      CHECK(s.clean.numel() == 0);
      const SceneSample se = ds.load(i, /*eval_mode=*/true);
      CHECK(se.label.numel() == 32 * 32);
    } else {
      CHECK(e.labels_visible);
    }

    // stored fog regenerates byte-for-byte from stored inputs
    const SceneSample s = ds.load(i, true);
    const Tensorf refog = quantize_raster(apply_fog(s.clean, s.depth, s.beta, s.airlight));
    CHECK(refog.bitwise_equal(s.fog));

    // split domains: disjoint beta ranges
    if (e.split == "train" || e.split == "val") {
      CHECK(e.beta >= cfg.synth_beta_lo);
      CHECK(e.beta <= cfg.synth_beta_hi);
    } else {
      CHECK(e.beta >= cfg.real_beta_lo);
      CHECK(e.beta <= cfg.real_beta_hi);
    }
  }
  CHECK(hidden == 3);

  // integrity: deleting a referenced file is reported by name
  fs::remove(root + "/train/train_0001.depth.pfm");
  const Dataset broken = Dataset::open(root);
  const auto idx = broken.split_indices("train");
  CHECK_THROWS_WITH_AS(broken.load(idx[1]),
                       doctest::Contains("train_0001.depth.pfm"), IntegrityError);

  fs::remove_all(root);
  fs::remove_all(root2);
}

TEST_CASE("depth normalization clamps to unit range") {
  const Tensorf d = Tensorf::from({2, 2}, {2.0f, 11.0f, 20.0f, 25.0f});
  const Tensorf n = normalize_depth(d, 2.0f, 20.0f);
  CHECK(n[0] == doctest::Approx(0.0));
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == doctest::Approx(1.0));
  CHECK(n[3] == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalize_depth(d, 5.0f, 5.0f), DomainError);
}
