#include <doctest.h>

#include "fogseg/optim.hpp"

using namespace fogseg;

namespace {

std::map<std::string, Tensorf> quadratic_grads(const ParamSet& ps, const Tensorf& target) {
  std::map<std::string, Tensorf> g;
  for (const auto& [name, t] : ps.items()) {
    if (ParamSet::is_stat(name)) continue;
    Tensorf gt(t.dims(), 0.0f);
    float* gd = gt.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) gd[i] = 2.0f * (t[i] - target[i]);
    g.emplace(name, std::move(gt));
  }
  return g;
}

}  // namespace

TEST_CASE("adam converges on a quadratic") {
  ParamSet ps;
  ps.add("w", Tensorf::from({4}, {5.0f, -3.0f, 2.0f, 0.5f}));
  const Tensorf target = Tensorf::from({4}, {1.0f, 1.0f, -1.0f, 0.0f});

  Adam opt(0.9f, 0.99f);
  for (int step = 0; step < 400; ++step) opt.step(ps, quadratic_grads(ps, target), 0.05f);

  for (int64_t i = 0; i < 4; ++i)
    CHECK(std::abs(ps.at("w")[i] - target[i]) < 1e-2);
  CHECK(opt.steps_taken() == 400);
}

TEST_CASE("adam leaves parameters without gradients alone") {
  ParamSet ps;
  ps.add("w", Tensorf({2}, 1.0f));
  ps.add("bn.running_mean", Tensorf({2}, 0.25f));
  std::map<std::string, Tensorf> g;
  g.emplace("w", Tensorf({2}, 1.0f));
  Adam opt;
  opt.step(ps, g, 0.1f);
  CHECK(ps.at("bn.running_mean")[0] == 0.25f);
  CHECK(ps.at("w")[0] < 1.0f);
}

TEST_CASE("sgd momentum applies per-group learning rates") {
  ParamSet ps;
  ps.add("encoder.w", Tensorf({1}, 1.0f));
  ps.add("decoder.w", Tensorf({1}, 1.0f));
  std::map<std::string, Tensorf> g;
  g.emplace("encoder.w", Tensorf({1}, 1.0f));
  g.emplace("decoder.w", Tensorf({1}, 1.0f));

  SgdMomentum opt(0.9f);
  auto lr_of = [](const std::string& name) {
    return name.rfind("encoder.", 0) == 0 ? 1e-3f : 1e-2f;
  };
  opt.step(ps, g, lr_of);
  CHECK(ps.at("encoder.w")[0] == doctest::Approx(1.0f - 1e-3f));
  CHECK(ps.at("decoder.w")[0] == doctest::Approx(1.0f - 1e-2f));

  // momentum accumulates: second identical gradient moves farther
  const float before = ps.at("encoder.w")[0];
  opt.step(ps, g, lr_of);
  const float delta2 = before - ps.at("encoder.w")[0];
  CHECK(delta2 == doctest::Approx(1e-3f * 1.9f));
}

TEST_CASE("linear decay endpoints and midpoint") {
  CHECK(lr_linear(0, 100, 5e-5f, 1e-5f) == doctest::Approx(5e-5f));
  CHECK(lr_linear(100, 100, 5e-5f, 1e-5f) == doctest::Approx(1e-5f));
  CHECK(lr_linear(50, 100, 5e-5f, 1e-5f) == doctest::Approx(3e-5f));
  CHECK_THROWS_AS(lr_linear(101, 100, 5e-5f, 1e-5f), DomainError);
  CHECK_THROWS_AS(lr_linear(0, 0, 5e-5f, 1e-5f), ConfigError);
}
