#pragma once

#include <map>
#include <string>

#include "mlpmatch/model/seg_model.hpp"
#include "mlpmatch/trainer/optimizer.hpp"

namespace mlpmatch::trainer {

struct CheckpointMeta {
  int iteration = 0;
  int epoch = 0;
  double best_miou = 0.0;
  std::string config_text;                      // serialized TrainConfig
  std::map<std::string, std::string> rng;       // named rng stream states
};

// Single-file container: magic + JSON directory + raw float payloads.
// Stores model parameters, BN running stats and (when given) optimizer
// momentum. Loading restores values bit-exactly.
void save_checkpoint(const std::string& path, model::PerturbableSegModel<float>& model,
                     SgdOptimizer<float>* optimizer, const CheckpointMeta& meta);

// Restores into an already-built model (shapes must match the file; anything
// else is reported as a data error naming the offending tensor).
CheckpointMeta load_checkpoint(const std::string& path, model::PerturbableSegModel<float>& model,
                               SgdOptimizer<float>* optimizer);

// Reads only the metadata block (for config/class-count inspection).
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace mlpmatch::trainer
