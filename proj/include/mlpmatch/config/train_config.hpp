#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mlpmatch/augment/augment.hpp"
#include "mlpmatch/model/seg_model.hpp"
#include "mlpmatch/objective/objective.hpp"

namespace mlpmatch::config {

struct DataConfig {
  std::string root;     // dataset directory with images/, masks/, splits/
  int num_classes = 4;
};

struct AugmentConfig {
  int crop_size = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double hflip_prob = 0.5;
  double color_jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double cutmix_prob = 0.5;
  double cutmix_area_min = 0.25;
  double cutmix_area_max = 0.5;
};

struct ModelConfig {
  double width_multiplier = 1.0;
  std::array<int, 4> depths = {2, 2, 2, 2};
  bool relu_on_projection_skip = true;
  std::vector<int> np_stages = {1, 2, 3, 4};        // 1-based stages open to skipping
  std::array<double, 4> np_stage_weights = {1.0, 1.0, 1.0, 1.0};
};

struct ObjectiveConfig {
  double tau = 0.95;
  double fp_rate = 0.5;
  double lambda_x = 1.0;
  double lambda_x_np_max = 0.25;
  std::string lambda_x_np_mode = "linear";  // "linear" or "fixed"
  double lambda_u_s = 0.5;
  double lambda_u_fp = 0.25;
  double lambda_u_np = 0.25;
};

struct TrainerConfig {
  int epochs = 40;
  int batch_size = 8;
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  double decoder_lr_mult = 10.0;
  int eval_every = 200;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  DataConfig data;
  AugmentConfig augment;
  ModelConfig model;
  ObjectiveConfig objective;
  TrainerConfig trainer;

  void validate() const;

  // Adapters into the module-level spec structs.
  mlpmatch::augment::WeakAugSpec weak_spec() const;
  mlpmatch::augment::StrongAugSpec strong_spec() const;
  mlpmatch::objective::UnlabeledSpec unlabeled_spec() const;
  mlpmatch::model::ModelSpec model_spec() const;
  mlpmatch::model::PerturbationPolicy perturbation_policy() const;
};

// INI-style text: [section] headers, key = value lines, '#'/';' comments.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);

// assignment is "section.key=value"; unknown keys fail, listing what exists.
void apply_override(TrainConfig& cfg, const std::string& assignment);

}  // namespace mlpmatch::config
