#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "fogseg/curriculum.hpp"

using namespace fogseg;
namespace fs = std::filesystem;

namespace {

const std::string& ds_root() {
  static const std::string root = [] {
    const std::string r = (fs::temp_directory_path() / "fogseg_curr_ds").string();
    DatasetConfig cfg;
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.train = 5;
    cfg.val = 1;
    cfg.test = 2;
    cfg.real_fog = 3;
    cfg.seed = 21;
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

bool bitwise_equal(const ParamSet& a, const ParamSet& b) { return a.bitwise_equal(b); }

}  // namespace

TEST_CASE("weight interpolation: exact endpoints and the anchor ratio") {
  ParamSet cur, base;
  cur.add("w", Tensorf::from({3}, {1.0f, 2.0f, -0.5f}));
  base.add("w", Tensorf::from({3}, {0.0f, 1.0f, 0.25f}));

  CHECK(bitwise_equal(interpolate_weights(cur, base, 0.0f), cur));
  CHECK(bitwise_equal(interpolate_weights(cur, base, 1.0f), base));

  // scalar probe: current=1, base=0, gamma=0.01 -> 0.99
  ParamSet c1, b0;
  c1.add("x", Tensorf({1}, 1.0f));
  b0.add("x", Tensorf({1}, 0.0f));
  const ParamSet mid = interpolate_weights(c1, b0, 0.01f);
  CHECK(std::abs(mid.at("x")[0] - 0.99f) < 1e-7f);
}

TEST_CASE("weight interpolation rejects bad ratios and mismatched sets") {
  ParamSet cur, base;
  cur.add("w", Tensorf({2}, 1.0f));
  base.add("w", Tensorf({2}, 0.0f));
  CHECK_THROWS_AS(interpolate_weights(cur, base, -0.1f), DomainError);
  CHECK_THROWS_AS(interpolate_weights(cur, base, 1.5f), DomainError);

  ParamSet other;
  other.add("v", Tensorf({2}, 0.0f));
  CHECK_THROWS_AS(interpolate_weights(cur, other, 0.5f), SpliceError);
  ParamSet shaped;
  shaped.add("w", Tensorf({3}, 0.0f));
  CHECK_THROWS_AS(interpolate_weights(cur, shaped, 0.5f), SpliceError);
}

TEST_CASE("pre-training demands a frozen reference and at least one loss") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto tr = ds.split_indices("train");
  const ParamSet teacher = build_segnet(arch, 5);
  ParamSet dfnet = build_dfnet(arch, 6);

  PretrainOptions opt;
  opt.steps = 1;
  opt.batch = 1;
  CHECK_THROWS_AS(pretrain_basic(dfnet.clone(), teacher, false, arch, ds, tr, opt),
                  ContractError);

  PretrainOptions none = opt;
  none.use_dct = none.use_sed = none.use_l1 = false;
  CHECK_THROWS_AS(pretrain_basic(dfnet.clone(), teacher, true, arch, ds, tr, none),
                  ConfigError);
  CHECK_THROWS_AS(pretrain_basic(dfnet.clone(), teacher, true, arch, ds, {}, opt),
                  ConfigError);

  JointOptions jopt;
  jopt.steps = 1;
  jopt.batch = 1;
  CHECK_THROWS_AS(joint_train(build_segnet(arch, 7), teacher, false, arch, ds, tr, jopt),
                  ContractError);
}

TEST_CASE("a short pre-training run moves the student but not the teacher") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto tr = ds.split_indices("train");
  const ParamSet teacher = build_segnet(arch, 5);
  const ParamSet teacher_copy = teacher.clone();
  const ParamSet dfnet0 = build_dfnet(arch, 6);

  PretrainOptions opt;
  opt.steps = 3;
  opt.batch = 2;
  const ParamSet dfnet1 = pretrain_basic(dfnet0.clone(), teacher, true, arch, ds, tr, opt);
  CHECK_FALSE(bitwise_equal(dfnet0, dfnet1));
  CHECK(bitwise_equal(teacher, teacher_copy));  // reference bytes untouched

  // same seed, same data -> identical result
  const ParamSet dfnet2 = pretrain_basic(dfnet0.clone(), teacher, true, arch, ds, tr, opt);
  CHECK(bitwise_equal(dfnet1, dfnet2));
}

TEST_CASE("pseudo pairs carry provenance and actually change the raster") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto rf = ds.split_indices("real_fog");
  REQUIRE(rf.size() == 3);
  const ParamSet dfnet = build_dfnet(arch, 11);

  CheckpointMeta meta;
  meta.phase = "basic";
  meta.ckpt_id = "unit-test-ckpt";
  const auto pairs = generate_pseudo_pairs(dfnet, meta, arch, ds, rf);
  REQUIRE(pairs.size() == rf.size());
  for (const auto& p : pairs) {
    CHECK(p.provenance == "unit-test-ckpt");
    CHECK(p.fog.dims() == p.defogged.dims());
    float delta = 0.0f;
    for (int64_t i = 0; i < p.fog.numel(); ++i)
      delta += std::abs(p.fog[i] - p.defogged[i]);
    CHECK(delta > 0.0f);
  }

  CheckpointMeta wrong = meta;
  wrong.phase = "finetune";
  CHECK_THROWS_AS(generate_pseudo_pairs(dfnet, wrong, arch, ds, rf), ContractError);
  CHECK_THROWS_AS(generate_pseudo_pairs(dfnet, meta, arch, ds, {}), ConfigError);
}

TEST_CASE("migration pre-training accepts pseudo-only input but not an empty set") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto tr = ds.split_indices("train");
  const auto rf = ds.split_indices("real_fog");
  const ParamSet teacher = build_segnet(arch, 5);
  const ParamSet base = build_dfnet(arch, 6);

  CheckpointMeta meta;
  meta.phase = "basic";
  meta.ckpt_id = "unit-test-ckpt";
  const auto pseudo = generate_pseudo_pairs(base, meta, arch, ds, rf);

  PretrainOptions opt;
  opt.steps = 2;
  opt.batch = 2;
  CHECK_THROWS_AS(pretrain_fdm(base, teacher, true, arch, ds, tr, {}, 0.01f, opt),
                  ConfigError);
  CHECK_THROWS_AS(pretrain_fdm(base, teacher, true, arch, ds, tr, pseudo, 1.5f, opt),
                  DomainError);

  const ParamSet out = pretrain_fdm(base, teacher, true, arch, ds, {}, pseudo, 0.01f, opt);
  CHECK_FALSE(bitwise_equal(out, base));
}

TEST_CASE("anchoring at full strength pins the weights to the base") {
  const ArchConfig arch = small_arch();
  const Dataset ds = Dataset::open(ds_root());
  const auto rf = ds.split_indices("real_fog");
  const ParamSet teacher = build_segnet(arch, 5);
  const ParamSet base = build_dfnet(arch, 6);

  CheckpointMeta meta;
  meta.phase = "basic";
  meta.ckpt_id = "unit-test-ckpt";
  const auto pseudo = generate_pseudo_pairs(base, meta, arch, ds, rf);

  PretrainOptions opt;
  opt.steps = 2;
  opt.batch = 1;
  const ParamSet out = pretrain_fdm(base, teacher, true, arch, ds, {}, pseudo, 1.0f, opt);
  // gamma=1 re-anchors every trainable weight to the base each step;
  // normalization statistics still follow the forward passes
  for (const auto& [name, t] : out.items()) {
    if (ParamSet::is_stat(name)) continue;
    const Tensorf& b = base.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == b[i]);
  }
}

TEST_CASE("held-out pre-training loss drops after a few hundred steps") {
  // full-width net at 64x64: narrow toy nets plateau on the alignment
  // objective, so this one miniature runs at the real working scale
  const std::string root = (fs::temp_directory_path() / "fogseg_curr_ds64").string();
  DatasetConfig dcfg;
  dcfg.train = 4;
  dcfg.val = 1;
  dcfg.test = 2;
  dcfg.real_fog = 2;
  dcfg.seed = 22;
  fs::remove_all(root);
  build_dataset(dcfg, root);

  const ArchConfig arch;
  const Dataset ds = Dataset::open(root);
  const auto tr = ds.split_indices("train");
  std::vector<size_t> held = ds.split_indices("val");
  for (size_t i : ds.split_indices("test")) held.push_back(i);

  CleanBaselineOptions copt;
  copt.steps = 100;
  copt.batch = 2;
  copt.seed = 50;
  const ParamSet teacher = train_clean_baseline(arch, ds, tr, copt);
  const ParamSet dfnet0 = build_dfnet(arch, 6);

  const float before = eval_pretrain_loss(dfnet0, teacher, arch, ds, held, true, true, false);
  PretrainOptions opt;
  opt.steps = 200;
  opt.batch = 2;
  const ParamSet dfnet1 = pretrain_basic(dfnet0.clone(), teacher, true, arch, ds, tr, opt);
  const float after = eval_pretrain_loss(dfnet1, teacher, arch, ds, held, true, true, false);
  CHECK(after < before);

  CHECK_THROWS_AS(eval_pretrain_loss(dfnet0, teacher, arch, ds, held, false, false, false),
                  ConfigError);
}
