#pragma once

#include <string>
#include <vector>

#include "mlpmatch/config/train_config.hpp"
#include "mlpmatch/dataset/batch_iterator.hpp"
#include "mlpmatch/trainer/checkpoint.hpp"
#include "mlpmatch/trainer/evaluate.hpp"
#include "mlpmatch/trainer/optimizer.hpp"
#include "mlpmatch/trainer/step.hpp"

namespace mlpmatch::trainer {

struct TrainResult {
  std::string metrics_csv;
  std::string last_checkpoint;
  std::string best_checkpoint;
  double best_miou = 0.0;
  double final_miou = 0.0;
  int iterations_done = 0;  // global iteration count at return
};

// Owns the full loop: data, model, optimizer, schedules, metrics, artifacts.
// Every random draw is keyed on (seed, iteration), so training is a pure
// function of the config and resuming from a checkpoint continues the exact
// trajectory of an uninterrupted run.
class Trainer {
 public:
  // Loads the dataset under cfg.data.root (images/, masks/, splits/) and
  // prepares the run directory. If run_dir/last.ckpt exists, training state
  // is restored from it; the stored config must match cfg.
  Trainer(config::TrainConfig cfg, std::string run_dir);

  // Runs until the configured end, or pauses once the global iteration count
  // reaches stop_after (checkpointing so a later call / process resumes).
  TrainResult run_training(int stop_after = -1);

  EvalReport evaluate_now();

  model::PerturbableSegModel<float>& model() { return model_; }
  const config::TrainConfig& config() const { return cfg_; }
  int total_iterations() const { return total_iterations_; }
  int steps_per_epoch() const { return steps_per_epoch_; }
  int start_iteration() const { return start_iteration_; }

 private:
  StepBatch<float> make_batch(const dataset::EpochIterator::Batch& b, int t) const;
  Rng aug_rng(int t, int slot, int purpose) const;
  void save_state(const std::string& path, int next_iteration);

  config::TrainConfig cfg_;
  std::string run_dir_;
  std::vector<Sample> labeled_, unlabeled_, eval_;
  model::PerturbableSegModel<float> model_;
  SgdOptimizer<float> optimizer_;
  int steps_per_epoch_ = 0;
  int total_iterations_ = 0;
  int start_iteration_ = 0;
  double best_miou_ = -1.0;
  std::uint64_t seed_ = 0;
};

}  // namespace mlpmatch::trainer
