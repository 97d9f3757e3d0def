#include <doctest.h>

#include <json.hpp>

#include "fogseg/runconfig.hpp"

using namespace fogseg;

TEST_CASE("run config round-trips through json") {
  RunConfig a;
  const std::string j = a.to_json();
  const RunConfig b = RunConfig::from_json(j);
  CHECK(b.to_json() == j);
  CHECK(b.fingerprint() == a.fingerprint());
}

TEST_CASE("unknown keys are rejected at every level") {
  RunConfig base;
  auto doc = nlohmann::ordered_json::parse(base.to_json());
  doc["surprise"] = 1;
  CHECK_THROWS_WITH_AS(RunConfig::from_json(doc.dump()).validate(),
                       "config: unknown key surprise", ConfigError);

  doc = nlohmann::ordered_json::parse(base.to_json());
  doc["basic"]["surprise"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(doc.dump()), ConfigError);

  doc = nlohmann::ordered_json::parse(base.to_json());
  doc["data"]["betamax"] = 0.5;
  CHECK_THROWS_AS(RunConfig::from_json(doc.dump()), ConfigError);
}

TEST_CASE("flag overrides parse by target type and re-validate") {
  RunConfig c;
  c.apply_override("basic.steps", "123");
  CHECK(c.basic.steps == 123);
  c.apply_override("fdm.gamma", "0.25");
  CHECK(c.fdm.gamma == doctest::Approx(0.25));
  c.apply_override("finetune.use_con", "false");
  CHECK_FALSE(c.ft.use_con);
  c.apply_override("finetune.input", "defogged");
  c.apply_override("seed", "42");
  CHECK(c.seed == 42);
  c.apply_override("arch.stage_channels", "8,16,32,48");
  CHECK(c.arch.stage_channels == std::vector<int>{8, 16, 32, 48});

  // the encoder is fixed at four stages
  CHECK_THROWS_AS(c.apply_override("arch.stage_channels", "8,16,32"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("basic.steps", "soon"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("fdm.gamma", "2.0"), ConfigError);     // out of range
  CHECK_THROWS_AS(c.apply_override("finetune.input", "hazy"), ConfigError);
}

TEST_CASE("validation catches inconsistent settings") {
  RunConfig c;
  c.fdm.gamma = -0.5f;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.basic.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.arch.num_classes = 3;  // disagrees with data.scene.num_classes
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig();
  c.fdm.rounds = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("fingerprint tracks content") {
  RunConfig a, b;
  CHECK(a.fingerprint() == b.fingerprint());
  b.ft.lambda_con = 2e-4f;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("stage option builders derive distinct stage seeds from the run seed") {
  RunConfig c;
  c.seed = 77;
  const auto clean = c.clean_options("");
  const auto basic = c.basic_options("");
  const auto fdm = c.fdm_options("");
  const auto joint = c.joint_options("");
  const auto ft = c.finetune_options("");
  CHECK(clean.seed != basic.seed);
  CHECK(basic.seed != fdm.seed);
  CHECK(joint.seed != ft.seed);
  CHECK(ft.seed != clean.seed);

  // paper-shaped constants flow through
  CHECK(basic.adam_beta1 == doctest::Approx(0.9));
  CHECK(basic.adam_beta2 == doctest::Approx(0.99));
  CHECK(ft.momentum == doctest::Approx(0.9));
  CHECK(ft.lambda_con == doctest::Approx(1e-4));
  CHECK(ft.encoder_lr == doctest::Approx(1e-3));
  CHECK(ft.decoder_lr == doctest::Approx(1e-2));
  CHECK(fdm.use_dct);
  CHECK(fdm.use_sed);
  CHECK_FALSE(fdm.use_l1);

  // same run seed -> same derived seeds
  RunConfig d;
  d.seed = 77;
  CHECK(d.basic_options("").seed == basic.seed);
}
