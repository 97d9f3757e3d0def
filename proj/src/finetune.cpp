#include "fogseg/finetune.hpp"

#include <cmath>
#include <utility>

#include "fogseg/optim.hpp"
#include "fogseg/rng.hpp"
#include "fogseg/trainlog.hpp"

namespace fogseg {
namespace finetune {

ParamSet init_from_pretrain(const ParamSet& pretrained, const ParamSet& segnet) {
  return splice_encoder(pretrained, segnet);
}

float lr_schedule(int64_t step, int64_t total_steps, float lr0) {
  if (total_steps <= 0) throw ConfigError("lr_schedule: total steps must be positive");
  if (lr0 <= 0.0f) throw ConfigError("lr_schedule: lr0 must be positive");
  if (step < 0 || step > total_steps) throw DomainError("lr_schedule: step out of range");
  return lr0 * float(std::sqrt(1.0 - double(step) / double(total_steps)));
}

ParamSet finetune(ParamSet seg, const ArchConfig& arch, const Dataset& ds,
                  const std::vector<size_t>& indices, const FinetuneOptions& opt,
                  const ParamSet* defogger) {
  if (!opt.use_fog && !opt.use_cl && !opt.use_con)
    throw ConfigError("finetune: enable at least one of fog/cl/con losses");
  if (opt.lambda_con < 0.0f) throw ConfigError("finetune: lambda_con must be >= 0");
  if (opt.steps <= 0) throw ConfigError("finetune: steps must be positive");
  if (opt.batch <= 0) throw ConfigError("finetune: batch must be positive");
  if (opt.input == FinetuneInput::defogged && !defogger)
    throw ConfigError("finetune: defogged input needs defog weights");
  if (indices.empty()) throw ConfigError("finetune: no training samples selected");
  arch.validate();

  struct Triple {
    Tensorf fog, clean;
    Tensori label;
  };
  std::vector<Triple> samples;
  samples.reserve(indices.size());
  for (size_t i : indices) {
    if (!ds.entry(i).labels_visible)
      throw ConfigError("finetune: sample " + ds.entry(i).id + " withholds its labels");
    SceneSample s = ds.load(i);
    Tensorf branch = std::move(s.fog);
    if (opt.input == FinetuneInput::defogged) {
      ArchConfig df_arch = arch;
      df_arch.dfnet_out_channels = 3;
      branch = dfnet_forward(df_arch, *defogger, branch).out;
    }
    samples.push_back({std::move(branch), std::move(s.clean), std::move(s.label)});
  }

  SgdMomentum sgd(opt.momentum);
  Rng rng(mix_seed(opt.seed, "finetune.batches"));
  PhaseLogger logger(opt.log_path, "finetune");

  for (int step = 0; step < opt.steps; ++step) {
    GraphParams<float> gp(seg, true);
    StatsCollector sc;
    LossReport report;
    Var<float> batch_sum;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& s = samples[size_t(rng.uniform_int(0, int64_t(samples.size()) - 1))];
      Var<float> s_def, s_cl;
      if (opt.use_fog || opt.use_con)
        s_def = seg_forward_graph(arch, gp, make_const(s.fog), &sc).logits;
      if (opt.use_cl || opt.use_con)
        s_cl = seg_forward_graph(arch, gp, make_const(s.clean), &sc).logits;

      Var<float> loss;
      auto fold = [&loss](const Var<float>& term) {
        loss = loss ? add(loss, term) : term;
      };
      if (opt.use_fog) {
        auto ce = cross_entropy(s_def, s.label);
        report.fog_ce = report.fog_ce.value_or(0.0f) + ce->value[0];
        fold(ce);
      }
      if (opt.use_cl) {
        auto ce = cross_entropy(s_cl, s.label);
        report.clean_ce = report.clean_ce.value_or(0.0f) + ce->value[0];
        fold(ce);
      }
      if (opt.use_con) {
        auto kl = kl_consistency(s_def, s_cl, opt.kl_direction);
        report.kl_con = report.kl_con.value_or(0.0f) + kl->value[0];
        fold(scale(kl, opt.lambda_con));
      }
      batch_sum = batch_sum ? add(batch_sum, loss) : loss;
    }
    auto total = scale(batch_sum, 1.0f / float(opt.batch));
    backward(total);

    const float decay = lr_schedule(step, opt.steps, 1.0f);
    sgd.step(seg, gp.grads(), [&](const std::string& name) {
      return decay * (is_encoder_param(name) ? opt.encoder_lr : opt.decoder_lr);
    });
    sc.apply(seg);

    const float inv = 1.0f / float(opt.batch);
    for (auto* f : {&report.fog_ce, &report.clean_ce, &report.kl_con})
      if (f->has_value()) *f = **f * inv;
    report.total = total->value[0];
    logger.log(step, decay * opt.decoder_lr, report);
  }
  if (!seg.all_finite()) throw NumericError("finetune: weights diverged to non-finite values");
  logger.close();
  return seg;
}

}  // namespace finetune
}  // namespace fogseg
