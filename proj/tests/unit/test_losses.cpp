#include <doctest.h>

#include "fogseg/losses.hpp"
#include "support/gradcheck.hpp"

using namespace fogseg;
using fogseg::testing::max_rel_grad_err;
using fogseg::testing::random_tensor;

TEST_CASE("l1 similarity closed forms") {
  const Tensord a = Tensord::from({4}, {1, 2, 3, 4});
  const Tensord ones = Tensord::from({4}, {1, 1, 1, 1});
  CHECK(l1_similarity(a, ones) == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(l1_similarity(a, a) == doctest::Approx(0.0));
  CHECK(l1_similarity(a, ones) == doctest::Approx(l1_similarity(ones, a)));
  CHECK_THROWS_AS(l1_similarity(a, Tensord({3}, 0.0)), DimensionError);
}

TEST_CASE("dct loss sums per-stage means") {
  std::vector<Tensord> e_def{Tensord::from({2}, {1.0, 1.0}), Tensord::from({1}, {2.0})};
  std::vector<Tensord> e_cl{Tensord::from({2}, {0.5, 1.5}), Tensord::from({1}, {2.25})};
  CHECK(dct_loss(e_def, e_cl) == doctest::Approx(0.75).epsilon(1e-9));

  CHECK(dct_loss(e_def, e_def) == doctest::Approx(0.0));

  // doubling one stage of e_def strictly increases the loss
  std::vector<Tensord> worse = e_def;
  Tensord t = worse[0].clone();
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] *= 2.0;
  worse[0] = t;
  CHECK(dct_loss(worse, e_cl) > dct_loss(e_def, e_cl));

  std::vector<Tensord> short_pyr{e_def[0]};
  CHECK_THROWS_AS(dct_loss(short_pyr, e_cl), DimensionError);
}

TEST_CASE("sed loss adds decoder and logit terms") {
  std::vector<Tensord> d_def{Tensord({3}, 0.0), Tensord({2}, 0.0)};
  std::vector<Tensord> d_cl{Tensord({3}, 0.4), Tensord({2}, 0.2)};
  const Tensord s_def({5}, 0.0);
  const Tensord s_cl({5}, 0.1);
  CHECK(sed_loss(d_def, d_cl, s_def, s_cl) == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(sed_loss(d_def, d_def, s_def, s_def) == doctest::Approx(0.0));
  CHECK(sed_loss(d_def, d_cl, s_def, s_cl) >= 0.0);
}

TEST_CASE("cross entropy closed forms") {
  const Tensord zeros({4, 2, 2}, 0.0);
  const Tensori labels = Tensori::from({2, 2}, {0, 3, 1, 2});
  CHECK(cross_entropy(zeros, labels) == doctest::Approx(std::log(4.0)).epsilon(1e-9));

  Tensord confident({4, 2, 2}, 0.0);
  double* cd = confident.mutable_data();
  const int64_t hw = 4;
  for (int64_t p = 0; p < hw; ++p) cd[int64_t(labels[p]) * hw + p] = 30.0;
  CHECK(cross_entropy(confident, labels) < 1e-9);

  // masked recomputation: CE over half the pixels equals CE with the other
  // half ignored
  Rng rng(21);
  const Tensord logits = random_tensor({4, 2, 2}, rng);
  const Tensori half = Tensori::from({2, 2}, {0, 255, 1, 255});
  auto one = make_const(logits.reshaped({4, 2, 2}));
  const double masked = cross_entropy(logits, half);
  // brute force: average of the two per-pixel CE values
  auto pixel_ce = [&](int64_t p, int y) {
    double mx = logits[p];
    for (int k = 1; k < 4; ++k) mx = std::max(mx, logits[k * hw + p]);
    double sum = 0;
    for (int k = 0; k < 4; ++k) sum += std::exp(logits[k * hw + p] - mx);
    return -(logits[y * hw + p] - mx - std::log(sum));
  };
  CHECK(masked == doctest::Approx((pixel_ce(0, 0) + pixel_ce(2, 1)) / 2).epsilon(1e-9));
}

TEST_CASE("kl consistency closed forms") {
  // single pixel: reference posterior ~ (1,0) vs target (0.5,0.5)
  const Tensord s_cl = Tensord::from({2, 1, 1}, {20.0, -20.0});
  const Tensord s_def = Tensord::from({2, 1, 1}, {0.0, 0.0});
  CHECK(kl_consistency(s_def, s_cl) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(kl_consistency(s_def, s_def) == doctest::Approx(0.0));

  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensord a = random_tensor({3, 2, 2}, rng, -2.0, 2.0);
    const Tensord b = random_tensor({3, 2, 2}, rng, -2.0, 2.0);
    CHECK(kl_consistency(a, b) >= 0.0);
    CHECK(kl_consistency(a, b, KlDirection::fog_ref) >= 0.0);
  }
}

TEST_CASE("finetune total is the stated affine combination") {
  CHECK(finetune_total(1.0, 2.0, 5.0, 1e-4) == doctest::Approx(3.0005).epsilon(1e-9));
  CHECK(finetune_total(1.0, 2.0, 5.0, 0.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(finetune_total(1.0, 1.0, 1.0, -0.5), ConfigError);

  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const double f = rng.uniform(0, 3), c = rng.uniform(0, 3), k = rng.uniform(0, 3);
    CHECK(finetune_total(f, c, k, 1e-4) == doctest::Approx(f + c + 1e-4 * k).epsilon(1e-12));
  }
}

TEST_CASE("l1 pixel loss closed forms") {
  const Tensord a({3, 2, 2}, 0.2);
  const Tensord b({3, 2, 2}, 0.5);
  CHECK(l1_pixel_loss(a, b) == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(l1_pixel_loss(a, a) == doctest::Approx(0.0));
  CHECK(l1_pixel_loss(a, b) >= 0.0);
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(24);

  // dct over two stages; clean side frozen
  auto e1 = make_leaf(random_tensor({2, 3}, rng, 0.4, 1.0), true);
  auto e2 = make_leaf(random_tensor({4}, rng, 0.4, 1.0), true);
  auto c1 = make_const(random_tensor({2, 3}, rng, -1.0, -0.4));
  auto c2 = make_const(random_tensor({4}, rng, -1.0, -0.4));
  auto dct = [&] { return dct_loss<double>({e1, e2}, {c1, c2}); };
  CHECK(max_rel_grad_err({e1, e2}, dct) < 1e-3);

  // sed: decoder pyramid + logits
  auto s_def = make_leaf(random_tensor({3, 2, 2}, rng, 0.4, 1.0), true);
  auto s_cl = make_const(random_tensor({3, 2, 2}, rng, -1.0, -0.4));
  auto sed = [&] { return sed_loss<double>({e1, e2}, {c1, c2}, s_def, s_cl); };
  CHECK(max_rel_grad_err({e1, e2, s_def}, sed) < 1e-3);

  // kl through the losses wrapper: gradient reaches the guided branch only,
  // the reference is detached
  auto ka = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto kb = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto kl = [&] { return kl_consistency(ka, kb); };
  CHECK(max_rel_grad_err({ka}, kl) < 1e-3);
  auto kv = kl_consistency(ka, kb);
  backward(kv);
  for (size_t i = 0; i < kb->grad.numel(); ++i) CHECK(kb->grad.data()[i] == 0.0);

  // composite objective end to end
  const Tensori labels = Tensori::from({2, 2}, {0, 1, 2, 255});
  auto lf = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto lc = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto total = [&] {
    auto fog_ce = cross_entropy(lf, labels);
    auto clean_ce = cross_entropy(lc, labels);
    auto kld = kl_consistency(lf, lc);
    return finetune_total(fog_ce, clean_ce, kld, 1e-4);
  };
  // lc feeds the detached kl reference, so only lf has an exact full gradient
  CHECK(max_rel_grad_err({lf}, total) < 1e-3);

  // l1 pixel loss
  auto pa = make_leaf(random_tensor({3, 2, 2}, rng, 0.3, 0.9), true);
  auto pb = make_const(random_tensor({3, 2, 2}, rng, -0.9, -0.3));
  auto pix = [&] { return l1_pixel_loss(pa, pb); };
  CHECK(max_rel_grad_err({pa}, pix) < 1e-3);
}

TEST_CASE("loss report serializes fixed columns") {
  LossReport r;
  r.dct = 0.5f;
  r.sed = 0.25f;
  r.total = 0.75f;
  CHECK(std::string(LossReport::csv_columns()) == "dct,sed,l1_pix,fog_ce,clean_ce,kl_con,total");
  CHECK(r.csv_fields() == "0.5,0.25,,,,,0.75");
}
