#include <doctest.h>

#include "fogseg/nn_ops.hpp"
#include "support/gradcheck.hpp"

using namespace fogseg;
using fogseg::testing::max_rel_grad_err;
using fogseg::testing::random_tensor;

namespace {

// keeps |v| >= margin so relu/abs gradchecks stay off their kinks
Tensord away_from_zero(Tensord t, double margin = 0.08) {
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(d[i]) < margin) d[i] = d[i] < 0 ? -margin : margin;
  }
  return t;
}

Tensord probe_weights(const std::vector<int>& dims, uint64_t seed) {
  Rng rng(seed);
  return fogseg::testing::random_tensor(dims, rng, -1.0, 1.0);
}

}  // namespace

TEST_CASE("conv2d forward values") {
  auto x = make_const(Tensord::from({1, 2, 2}, {1, 2, 3, 4}));
  auto w = make_const(Tensord::from({1, 1, 1, 1}, {2}));
  auto b = make_const(Tensord::from({1}, {0.5}));
  auto y = conv2d(x, w, b, 1, 0);
  CHECK(y->value.dims() == std::vector<int>{1, 2, 2});
  CHECK(y->value[0] == doctest::Approx(2.5));
  CHECK(y->value[3] == doctest::Approx(8.5));

  auto y2 = conv2d(x, w, b, 2, 0);
  CHECK(y2->value.dims() == std::vector<int>{1, 1, 1});
}

TEST_CASE("conv2d gradients (x, w, b)") {
  Rng rng(11);
  auto x = make_leaf(random_tensor({2, 4, 4}, rng), true);
  auto w = make_leaf(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5), true);
  auto b = make_leaf(random_tensor({3}, rng), true);
  const Tensord probe = probe_weights({3, 2, 2}, 5);
  auto loss = [&] { return weighted_sum(conv2d(x, w, b, 2, 1), probe); };
  CHECK(max_rel_grad_err({x, w, b}, loss) < 1e-3);
}

TEST_CASE("conv_transpose2d forward values and shape") {
  auto x = make_const(Tensord::from({1, 1, 1}, {3}));
  auto w = make_const(Tensord::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto b = make_const(Tensord::from({1}, {1}));
  auto y = conv_transpose2d(x, w, b, 2);
  CHECK(y->value.dims() == std::vector<int>{1, 2, 2});
  CHECK(y->value[0] == doctest::Approx(4));
  CHECK(y->value[1] == doctest::Approx(7));
  CHECK(y->value[2] == doctest::Approx(10));
  CHECK(y->value[3] == doctest::Approx(13));

  auto x2 = make_const(Tensord({4, 3, 3}, 0.1));
  auto w2 = make_const(Tensord({4, 2, 2, 2}, 0.2));
  auto b2 = make_const(Tensord({2}, 0.0));
  CHECK(conv_transpose2d(x2, w2, b2, 2)->value.dims() == std::vector<int>{2, 6, 6});
}

TEST_CASE("conv_transpose2d gradients") {
  Rng rng(12);
  auto x = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto w = make_leaf(random_tensor({3, 2, 2, 2}, rng, -0.5, 0.5), true);
  auto b = make_leaf(random_tensor({2}, rng), true);
  const Tensord probe = probe_weights({2, 4, 4}, 6);
  auto loss = [&] { return weighted_sum(conv_transpose2d(x, w, b, 2), probe); };
  CHECK(max_rel_grad_err({x, w, b}, loss) < 1e-3);
}

TEST_CASE("channel_norm_affine forward values") {
  auto x = make_const(Tensord::from({1, 1, 2}, {2, 4}));
  auto gamma = make_const(Tensord::from({1}, {3}));
  auto beta = make_const(Tensord::from({1}, {1}));
  auto y = channel_norm_affine(x, gamma, beta, Tensord::from({1}, {2}), Tensord::from({1}, {4}),
                               0.0);
  CHECK(y->value[0] == doctest::Approx(1.0));
  CHECK(y->value[1] == doctest::Approx(4.0));
}

TEST_CASE("channel_norm_affine gradients") {
  Rng rng(13);
  auto x = make_leaf(random_tensor({2, 3, 3}, rng), true);
  auto gamma = make_leaf(random_tensor({2}, rng, 0.5, 1.5), true);
  auto beta = make_leaf(random_tensor({2}, rng), true);
  const Tensord mean = random_tensor({2}, rng, -0.2, 0.2);
  const Tensord var = random_tensor({2}, rng, 0.5, 1.5);
  const Tensord probe = probe_weights({2, 3, 3}, 7);
  auto loss = [&] {
    return weighted_sum(channel_norm_affine(x, gamma, beta, mean, var), probe);
  };
  CHECK(max_rel_grad_err({x, gamma, beta}, loss) < 1e-3);
}

TEST_CASE("relu / sigmoid / add / scale gradients") {
  Rng rng(14);
  auto x = make_leaf(away_from_zero(random_tensor({3, 4}, rng)), true);
  auto y = make_leaf(random_tensor({3, 4}, rng), true);
  const Tensord probe = probe_weights({3, 4}, 8);

  auto relu_loss = [&] { return weighted_sum(relu(x), probe); };
  CHECK(max_rel_grad_err({x}, relu_loss) < 1e-3);

  auto sig_loss = [&] { return weighted_sum(sigmoid(x), probe); };
  CHECK(max_rel_grad_err({x}, sig_loss) < 1e-3);

  auto mix_loss = [&] { return weighted_sum(add(scale(x, 0.7), y), probe); };
  CHECK(max_rel_grad_err({x, y}, mix_loss) < 1e-3);
}

TEST_CASE("relu forward clamps") {
  auto x = make_const(Tensord::from({4}, {-1, -0.5, 0.5, 2}));
  auto y = relu(x);
  CHECK(y->value[0] == 0);
  CHECK(y->value[1] == 0);
  CHECK(y->value[2] == 0.5);
  CHECK(y->value[3] == 2);
}

TEST_CASE("upsample_bilinear forward values") {
  auto x = make_const(Tensord::from({1, 1, 2}, {1, 2}));
  auto y = upsample_bilinear(x, 2);
  CHECK(y->value.dims() == std::vector<int>{1, 2, 4});
  CHECK(y->value[0] == doctest::Approx(1.0));
  CHECK(y->value[1] == doctest::Approx(1.25));
  CHECK(y->value[2] == doctest::Approx(1.75));
  CHECK(y->value[3] == doctest::Approx(2.0));

  auto c = make_const(Tensord({3, 2, 2}, 0.6));
  auto yc = upsample_bilinear(c, 4);
  CHECK(yc->value.dims() == std::vector<int>{3, 8, 8});
  for (int64_t i = 0; i < yc->value.numel(); ++i) CHECK(yc->value[i] == doctest::Approx(0.6));
}

TEST_CASE("upsample_bilinear gradients") {
  Rng rng(15);
  auto x = make_leaf(random_tensor({2, 2, 3}, rng), true);
  const Tensord probe = probe_weights({2, 4, 6}, 9);
  auto loss = [&] { return weighted_sum(upsample_bilinear(x, 2), probe); };
  CHECK(max_rel_grad_err({x}, loss) < 1e-3);
}

TEST_CASE("mean_abs_diff gradients away from ties") {
  Rng rng(16);
  auto a = make_leaf(random_tensor({3, 3}, rng, 0.3, 1.0), true);
  auto b = make_leaf(random_tensor({3, 3}, rng, -1.0, -0.3), true);
  auto loss = [&] { return mean_abs_diff(a, b); };
  CHECK(max_rel_grad_err({a, b}, loss) < 1e-3);
}

TEST_CASE("softmax cross entropy values and gradients") {
  auto logits = make_const(Tensord({4, 2, 2}, 0.0));
  const Tensori labels = Tensori::from({2, 2}, {0, 1, 2, 3});
  auto ce = softmax_cross_entropy(logits, labels, 255);
  CHECK(ce->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));

  // ignore pixels drop out of numerator and denominator
  const Tensori with_ignore = Tensori::from({2, 2}, {0, 255, 2, 255});
  Rng rng(17);
  auto lg = make_leaf(random_tensor({4, 2, 2}, rng), true);
  auto kept = softmax_cross_entropy(lg, with_ignore, 255);
  auto manual_a = softmax_cross_entropy(lg, Tensori::from({2, 2}, {0, 255, 255, 255}), 255);
  auto manual_b = softmax_cross_entropy(lg, Tensori::from({2, 2}, {255, 255, 2, 255}), 255);
  CHECK(kept->value[0] ==
        doctest::Approx((manual_a->value[0] + manual_b->value[0]) / 2).epsilon(1e-9));

  auto loss = [&] { return softmax_cross_entropy(lg, with_ignore, 255); };
  CHECK(max_rel_grad_err({lg}, loss) < 1e-3);

  const Tensori all_ignore({2, 2}, 255);
  CHECK_THROWS_AS(softmax_cross_entropy(lg, all_ignore, 255), DegenerateBatchError);
  const Tensori bad = Tensori::from({2, 2}, {0, 9, 0, 0});
  CHECK_THROWS_AS(softmax_cross_entropy(lg, bad, 255), RangeError);
}

TEST_CASE("kl divergence values and gradients") {
  Rng rng(18);
  auto a = make_leaf(random_tensor({3, 2, 2}, rng), true);
  auto b = make_leaf(random_tensor({3, 2, 2}, rng), true);

  auto same = kl_divergence_logits(a, a);
  CHECK(same->value[0] == doctest::Approx(0.0).epsilon(1e-12));

  auto kl = kl_divergence_logits(a, b);
  CHECK(kl->value[0] >= 0.0);

  auto loss = [&] { return kl_divergence_logits(a, b); };
  CHECK(max_rel_grad_err({a, b}, loss) < 1e-3);
}

TEST_CASE("gradient flow control") {
  Rng rng(19);
  auto x = make_leaf(random_tensor({2, 2}, rng), true);
  auto frozen = make_const(random_tensor({2, 2}, rng));

  // shared subexpression accumulates from both uses
  auto s = scale(x, 2.0);
  auto total = add(s, s);
  auto loss = weighted_sum(total, Tensord({2, 2}, 1.0));
  backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(4.0));

  // constants collect no gradient and spawn no backprop work
  auto mixed = mean_abs_diff(x, frozen);
  backward(mixed);
  CHECK(frozen->grad.numel() == 0);

  CHECK_THROWS_AS(backward(add(x, x)), NumericError);  // non-scalar root
}
