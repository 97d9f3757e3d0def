#include <doctest.h>

#include <filesystem>

#include "fogseg/checkpoint.hpp"
#include "fogseg/imageio.hpp"
#include "fogseg/losses.hpp"
#include "fogseg/nets.hpp"
#include "fogseg/rng.hpp"

using namespace fogseg;
namespace fs = std::filesystem;

namespace {

Tensorf random_image(int h, int w, uint64_t seed) {
  Tensorf img({3, h, w}, 0.0f);
  Rng rng(seed);
  float* d = img.mutable_data();
  for (int64_t i = 0; i < img.numel(); ++i) d[i] = float(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("segnet builds deterministically with the contracted shapes") {
  ArchConfig cfg;
  const ParamSet a = build_segnet(cfg, 9);
  const ParamSet b = build_segnet(cfg, 9);
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(build_segnet(cfg, 10)));

  const Tensorf img = random_image(64, 64, 1);
  const SegOutput out = seg_forward(cfg, a, img);
  CHECK(out.logits.dims() == std::vector<int>{5, 64, 64});
  REQUIRE(out.encoder_feats.size() == 4);
  REQUIRE(out.decoder_feats.size() == 4);
  for (int i = 0; i < 4; ++i) {
    const int stride = 4 << i;
    CHECK(out.encoder_feats[size_t(i)].dims() ==
          std::vector<int>{cfg.stage_channels[size_t(i)], 64 / stride, 64 / stride});
    CHECK(out.decoder_feats[size_t(i)].dims() == out.encoder_feats[size_t(i)].dims());
  }

  // zero-initialized head: logits identical across classes (uniform posterior)
  const int64_t hw = 64 * 64;
  for (int64_t p = 0; p < hw; p += 97)
    for (int k = 1; k < 5; ++k)
      CHECK(out.logits[k * hw + p] == doctest::Approx(out.logits[p]).epsilon(1e-12));

  // purity
  const SegOutput out2 = seg_forward(cfg, a, img);
  CHECK(out2.logits.bitwise_equal(out.logits));

  // sensitivity: one encoder weight nudged -> decoder features move
  ParamSet mutated = a.clone();
  mutated.at("encoder.stage2.conv1.weight").mutable_data()[0] += 0.5f;
  const SegOutput out3 = seg_forward(cfg, mutated, img);
  bool any_changed = false;
  for (size_t i = 0; i < 4 && !any_changed; ++i)
    any_changed = !out3.decoder_feats[i].bitwise_equal(out.decoder_feats[i]);
  CHECK(any_changed);

  Tensorf bad = img.clone();
  bad.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(seg_forward(cfg, a, bad), NumericError);
}

TEST_CASE("dfnet mirrors the encoder and bounds its output") {
  ArchConfig cfg;
  const ParamSet fs_params = build_segnet(cfg, 4);
  const ParamSet df = build_dfnet(cfg, 4);

  // identical encoder namespaces, shape for shape
  for (const auto& [name, t] : fs_params.items()) {
    if (!is_encoder_param(name)) continue;
    REQUIRE(df.has(name));
    CHECK(df.at(name).same_shape(t));
  }
  for (const auto& [name, t] : df.items())
    if (is_encoder_param(name)) CHECK(fs_params.has(name));

  ArchConfig heavy = cfg;
  heavy.decoder_depth = DecoderDepth::heavy;
  CHECK(build_dfnet(heavy, 4).scalar_count() > df.scalar_count());

  const Tensorf img = random_image(64, 64, 2);
  const DfOutput out = dfnet_forward(cfg, df, img);
  CHECK(out.out.dims() == std::vector<int>{3, 64, 64});
  for (int64_t i = 0; i < out.out.numel(); ++i) {
    CHECK(out.out[i] >= 0.0f);
    CHECK(out.out[i] <= 1.0f);
  }
  CHECK(out.encoder_feats.size() == 4);

  const DfOutput out2 = dfnet_forward(cfg, df, img);
  CHECK(out2.out.bitwise_equal(out.out));

  ArchConfig depth_variant = cfg;
  depth_variant.dfnet_out_channels = 1;
  const ParamSet dfd = build_dfnet(depth_variant, 4);
  CHECK(dfnet_forward(depth_variant, dfd, img).out.dims() == std::vector<int>{1, 64, 64});
}

TEST_CASE("encoder splice replaces exactly the encoder") {
  ArchConfig cfg;
  const ParamSet seg = build_segnet(cfg, 1);
  const ParamSet df = build_dfnet(cfg, 2);

  const ParamSet self_splice = splice_encoder(seg, seg);
  CHECK(self_splice.bitwise_equal(seg));

  const ParamSet merged = splice_encoder(df, seg);
  for (const auto& [name, t] : merged.items()) {
    if (is_encoder_param(name))
      CHECK(t.bitwise_equal(df.at(name)));
    else
      CHECK(t.bitwise_equal(seg.at(name)));
  }

  ParamSet missing;
  missing.add("encoder.stem.conv.weight", Tensorf({1}, 0.0f));
  CHECK_THROWS_AS(splice_encoder(missing, seg), SpliceError);
}

TEST_CASE("checkpoints round trip losslessly") {
  ArchConfig cfg;
  const ParamSet ps = build_dfnet(cfg, 3);
  CheckpointMeta meta;
  meta.phase = "basic";
  meta.seed = 3;
  meta.iteration = 123;
  meta.frozen = false;
  meta.arch_json = arch_to_json(cfg);
  meta.config_json = "{}";
  meta.provenance = "test";

  const std::string path = (fs::temp_directory_path() / "fogseg_ckpt_test.bin").string();
  save_checkpoint(path, ps, meta);
  auto [loaded, lmeta] = load_checkpoint(path);
  CHECK(loaded.bitwise_equal(ps));
  CHECK(lmeta.phase == "basic");
  CHECK(lmeta.iteration == 123);
  CHECK_FALSE(lmeta.ckpt_id.empty());
  const ArchConfig arch = arch_from_json(lmeta.arch_json);
  CHECK(arch.stage_channels == cfg.stage_channels);

  // same content -> same derived checkpoint id
  save_checkpoint(path + "2", ps, meta);
  CHECK(load_checkpoint(path + "2").second.ckpt_id == lmeta.ckpt_id);

  std::string bytes = read_file_bytes(path);
  bytes[1] = 'X';
  atomic_write_file(path + "3", bytes);
  CHECK_THROWS_AS(load_checkpoint(path + "3"), DataError);
  CHECK_THROWS_AS(load_checkpoint(path + "_nope"), IntegrityError);

  fs::remove(path);
  fs::remove(path + "2");
  fs::remove(path + "3");
}

TEST_CASE("feature-alignment losses leave the teacher untouched") {
  ArchConfig cfg;
  cfg.stage_channels = {8, 16, 24, 32};
  const ParamSet teacher = build_segnet(cfg, 11);
  const ParamSet teacher_before = teacher.clone();
  ParamSet student = build_dfnet(cfg, 12);

  const Tensorf fog = random_image(32, 32, 5);
  const Tensorf clean = random_image(32, 32, 6);

  GraphParams<float> gp_teacher(teacher, /*trainable=*/false);
  GraphParams<float> gp_student(student, /*trainable=*/true);

  auto df = dfnet_forward_graph(cfg, gp_student, make_const(fog));
  auto seg_clean = seg_forward_graph(cfg, gp_teacher, make_const(clean));
  auto seg_def = seg_forward_graph(cfg, gp_teacher, df.out);

  auto loss = add(dct_loss(df.encoder_feats, seg_clean.encoder_feats),
                  sed_loss(seg_def.decoder_feats, seg_clean.decoder_feats, seg_def.logits,
                           seg_clean.logits));
  backward(loss);
  CHECK(loss->value[0] >= 0.0f);

  CHECK(teacher.bitwise_equal(teacher_before));

  // gradient reached the student's encoder and decoder, not the teacher
  auto grads = gp_student.grads();
  double total = 0;
  for (const auto& [name, g] : grads) {
    double s = 0;
    for (int64_t i = 0; i < g.numel(); ++i) s += std::abs(double(g[i]));
    total += s;
  }
  CHECK(total > 0.0);
  CHECK(gp_teacher.grads().empty());
}

TEST_CASE("stats collector only updates running estimates") {
  ArchConfig cfg;
  cfg.stage_channels = {8, 16, 24, 32};
  ParamSet ps = build_segnet(cfg, 13);
  const ParamSet before = ps.clone();

  StatsCollector sc;
  GraphParams<float> gp(ps, false);
  (void)seg_forward_graph(cfg, gp, make_const(random_image(32, 32, 7)), &sc);
  CHECK_FALSE(sc.sums.empty());
  sc.apply(ps);

  bool stats_changed = false;
  for (const auto& [name, t] : ps.items()) {
    if (ParamSet::is_stat(name)) {
      if (!t.bitwise_equal(before.at(name))) stats_changed = true;
    } else {
      CHECK(t.bitwise_equal(before.at(name)));
    }
  }
  CHECK(stats_changed);
}
