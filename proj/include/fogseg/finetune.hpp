#pragma once

#include <string>
#include <vector>

#include "fogseg/fogsim.hpp"
#include "fogseg/losses.hpp"
#include "fogseg/nets.hpp"

// Segmentation fine-tuning: the pre-trained encoder is spliced into a fresh
// segmentation network, then optimized on matched fog/clean pairs with
// per-branch cross-entropy plus a weighted prediction-consistency term.

namespace fogseg {
namespace finetune {

enum class FinetuneInput { fog, defogged };

inline const char* to_string(FinetuneInput i) {
  return i == FinetuneInput::fog ? "fog" : "defogged";
}

struct FinetuneOptions {
  int steps = 3000;
  int batch = 4;
  float encoder_lr = 1e-3f;
  float decoder_lr = 1e-2f;
  float momentum = 0.9f;
  float lambda_con = 1e-4f;
  losses::KlDirection kl_direction = losses::KlDirection::clean_ref;
  bool use_fog = true;
  bool use_cl = true;
  bool use_con = true;
  FinetuneInput input = FinetuneInput::fog;
  uint64_t seed = 1;
  std::string log_path;
};

// Pre-trained encoder over the given segnet's decoder.
ParamSet init_from_pretrain(const ParamSet& pretrained, const ParamSet& segnet);

// Polynomial decay at power 0.5: lr0 * (1 - step/total)^0.5.
float lr_schedule(int64_t step, int64_t total_steps, float lr0);

// When opt.input == defogged, `defogger` must point at defog weights; the
// foggy branch then sees the restored image instead of the raw foggy one.
ParamSet finetune(ParamSet seg, const ArchConfig& arch, const Dataset& ds,
                  const std::vector<size_t>& indices, const FinetuneOptions& opt,
                  const ParamSet* defogger = nullptr);

}  // namespace finetune
// the finetune() op itself stays qualified (finetune::finetune) because the
// unqualified name would collide with the namespace
using finetune::FinetuneInput;
using finetune::FinetuneOptions;
using finetune::init_from_pretrain;
using finetune::lr_schedule;
}  // namespace fogseg
