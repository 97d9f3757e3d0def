#pragma once

#include <string>
#include <utility>

#include "fogseg/nets.hpp"
#include "fogseg/params.hpp"

// Checkpoint container: fixed magic, a JSON metadata block (phase tag, seed,
// iteration, frozen flag, arch, originating run config), then flat
// name -> (shape, float32 payload) records. Everything little-endian.

namespace fogseg {

struct CheckpointMeta {
  std::string phase;  // clean_baseline | basic | fdm | depth | finetune | init
  uint64_t seed = 0;
  int64_t iteration = 0;
  bool frozen = false;
  std::string ckpt_id;      // content fingerprint, derived at save time when empty
  std::string arch_json;    // ArchConfig echo
  std::string config_json;  // RunConfig echo
  std::string provenance;   // free-form parent-checkpoint note
};

std::string arch_to_json(const ArchConfig& cfg);
ArchConfig arch_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const ParamSet& ps, CheckpointMeta meta);
std::pair<ParamSet, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace fogseg
