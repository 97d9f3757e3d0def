#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "fogseg/curriculum.hpp"
#include "fogseg/finetune.hpp"

using namespace fogseg;
namespace fs = std::filesystem;

namespace {

const std::string& ds_root() {
  static const std::string root = [] {
    const std::string r = (fs::temp_directory_path() / "fogseg_ft_ds").string();
    DatasetConfig cfg;
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.train = 5;
    cfg.val = 1;
    cfg.test = 2;
    cfg.real_fog = 2;
    cfg.seed = 33;
    fs::remove_all(r);
    build_dataset(cfg, r);
    return r;
  }();
  return root;
}

ArchConfig small_arch() {
  ArchConfig a;
  a.stage_channels = {8, 12, 16, 24};
  a.num_classes = 5;
  return a;
}

}  // namespace

TEST_CASE("poly-0.5 schedule: endpoints, midpoint oracle, domain checks") {
  CHECK(lr_schedule(0, 100, 0.01f) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(lr_schedule(100, 100, 0.01f) == doctest::Approx(0.0));
  // midpoint: 0.01 * sqrt(0.5)
  CHECK(std::abs(lr_schedule(50, 100, 0.01f) - 0.01 * std::sqrt(0.5)) < 1e-7);
  CHECK(std::abs(lr_schedule(50, 100, 0.01f) - 0.0070710678f) < 1e-7);

  CHECK_THROWS_AS(lr_schedule(0, 0, 0.01f), ConfigError);
  CHECK_THROWS_AS(lr_schedule(0, 100, -0.5f), ConfigError);
  CHECK_THROWS_AS(lr_schedule(-1, 100, 0.01f), DomainError);
  CHECK_THROWS_AS(lr_schedule(101, 100, 0.01f), DomainError);
}

TEST_CASE("encoder weights transfer into a fresh segmentation net") {
  const ArchConfig arch = small_arch();
  const ParamSet pre = build_dfnet(arch, 3);
  const ParamSet seg = build_segnet(arch, 4);

  const ParamSet out = init_from_pretrain(pre, seg);
  CHECK(out.size() == seg.size());
  int copied = 0, kept = 0;
  for (const auto& [name, t] : out.items()) {
    if (is_encoder_param(name)) {
      const Tensorf& src = pre.at(name);
      CHECK(std::memcmp(t.data(), src.data(), size_t(t.numel()) * sizeof(float)) == 0);
      ++copied;
    } else {
      const Tensorf& src = seg.at(name);
      CHECK(std::memcmp(t.data(), src.data(), size_t(t.numel()) * sizeof(float)) == 0);
      ++kept;
    }
  }
  CHECK(copied > 0);
  CHECK(kept > 0);

  ParamSet no_enc;
  no_enc.add("decoder.head.weight", Tensorf({2}, 0.0f));
  CHECK_THROWS_AS(init_from_pretrain(no_enc, seg), SpliceError);
}

TEST_CASE("fine-tuning runs, is deterministic, and validates its options") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto tr = ds.split_indices("train");
  const ParamSet seg0 = build_segnet(arch, 8);

  FinetuneOptions opt;
  opt.steps = 3;
  opt.batch = 2;
  const ParamSet a = finetune::finetune(seg0.clone(), arch, ds, tr, opt);
  const ParamSet b = finetune::finetune(seg0.clone(), arch, ds, tr, opt);
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(seg0));

  FinetuneOptions none = opt;
  none.use_fog = none.use_cl = none.use_con = false;
  CHECK_THROWS_AS(finetune::finetune(seg0.clone(), arch, ds, tr, none), ConfigError);

  FinetuneOptions defog = opt;
  defog.input = FinetuneInput::defogged;
  CHECK_THROWS_AS(finetune::finetune(seg0.clone(), arch, ds, tr, defog, nullptr),
                  ConfigError);

  CHECK_THROWS_AS(finetune::finetune(seg0.clone(), arch, ds, {}, opt), ConfigError);
}

TEST_CASE("loss flags change the optimization result") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto tr = ds.split_indices("train");
  const ParamSet seg0 = build_segnet(arch, 8);

  FinetuneOptions both;
  both.steps = 3;
  both.batch = 2;
  FinetuneOptions fog_only = both;
  fog_only.use_cl = fog_only.use_con = false;

  const ParamSet a = finetune::finetune(seg0.clone(), arch, ds, tr, both);
  const ParamSet b = finetune::finetune(seg0.clone(), arch, ds, tr, fog_only);
  CHECK_FALSE(a.bitwise_equal(b));
}
