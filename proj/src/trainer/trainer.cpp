#include "mlpmatch/trainer/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mlpmatch/augment/augment.hpp"
#include "mlpmatch/dataset/voc.hpp"
#include "mlpmatch/trainer/schedule.hpp"

namespace mlpmatch::trainer {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitTag = 0x696E6974;
constexpr std::uint64_t kStepTag = 0x73746570;
constexpr std::uint64_t kAugTag = 0x617567;
constexpr std::uint64_t kDataTag = 0x64617461;

constexpr const char* kCsvHeader =
    "iteration,l_x,l_x_np,l_u_s,l_u_fp,l_u_np,total,lr,lambda_x_np,mask_pass_rate,chosen_block,miou";

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

Trainer::Trainer(config::TrainConfig cfg, std::string run_dir)
    : cfg_(std::move(cfg)), run_dir_(std::move(run_dir)) {
  cfg_.validate();
  seed_ = cfg_.trainer.seed;

  SplitSpec split;
  split.num_classes = cfg_.data.num_classes;
  split.labeled_ids = dataset::read_id_list(cfg_.data.root + "/splits/labeled.txt");
  split.unlabeled_ids = dataset::read_id_list(cfg_.data.root + "/splits/unlabeled.txt");
  auto pair = dataset::load_voc_dir(cfg_.data.root, split);
  labeled_ = std::move(pair.first);
  unlabeled_ = std::move(pair.second);
  eval_ = dataset::load_voc_samples(cfg_.data.root,
                                    dataset::read_id_list(cfg_.data.root + "/splits/val.txt"),
                                    cfg_.data.num_classes, /*with_labels=*/true);
  if (eval_.empty()) throw DataError("trainer: validation split is empty");

  model_ = model::PerturbableSegModel<float>(cfg_.model_spec());
  model_.set_eligible_stages(cfg_.model.np_stages);

  dataset::EpochIterator probe(labeled_, unlabeled_, cfg_.trainer.batch_size,
                               mix64(mix64(seed_ ^ kDataTag)));
  steps_per_epoch_ = probe.steps();
  total_iterations_ = cfg_.trainer.epochs * steps_per_epoch_;

  fs::create_directories(run_dir_);
  const std::string last = run_dir_ + "/last.ckpt";
  optimizer_ = SgdOptimizer<float>(model_.params(), cfg_.trainer.momentum,
                                   cfg_.trainer.weight_decay, cfg_.trainer.decoder_lr_mult);
  if (fs::exists(last)) {
    const CheckpointMeta meta = load_checkpoint(last, model_, &optimizer_);
    if (meta.config_text != config::serialize_config(cfg_))
      throw ConfigError("trainer: '" + last + "' was written under a different configuration");
    start_iteration_ = meta.iteration;
    best_miou_ = meta.best_miou;
  } else {
    Rng init(mix64(seed_ ^ kInitTag));
    model_.init_params(init);
  }
}

Rng Trainer::aug_rng(int t, int slot, int purpose) const {
  const std::uint64_t a = mix64(seed_ ^ kAugTag);
  const std::uint64_t b = mix64(a ^ static_cast<std::uint64_t>(t));
  return Rng(mix64(b ^ (static_cast<std::uint64_t>(slot) * 8 + static_cast<std::uint64_t>(purpose))));
}

StepBatch<float> Trainer::make_batch(const dataset::EpochIterator::Batch& b, int t) const {
  StepBatch<float> out;
  const augment::WeakAugSpec weak = cfg_.weak_spec();
  const augment::StrongAugSpec strong = cfg_.strong_spec();
  const int side = weak.crop_size;
  const std::int64_t ipix = static_cast<std::int64_t>(3) * side * side;
  const std::int64_t lpix = static_cast<std::int64_t>(side) * side;

  const int nl = static_cast<int>(b.labeled.size());
  out.lab_images = Tensor<float>({nl, 3, side, side});
  out.lab_labels = Tensor<std::int32_t>({nl, side, side});
  for (int i = 0; i < nl; ++i) {
    Rng r = aug_rng(t, i, 0);
    const Sample aug = augment::weak_augment(*b.labeled[static_cast<std::size_t>(i)], weak, r);
    std::copy(aug.image.begin(), aug.image.end(), out.lab_images.begin() + i * ipix);
    std::copy(aug.label->begin(), aug.label->end(), out.lab_labels.begin() + i * lpix);
  }

  const int nu = static_cast<int>(b.unlabeled.size());
  if (nu > 0) {
    out.weak_images = Tensor<float>({nu, 3, side, side});
    out.strong1 = Tensor<float>({nu, 3, side, side});
    out.strong2 = Tensor<float>({nu, 3, side, side});
    out.valid = Tensor<std::int32_t>({nu, side, side});
    for (int i = 0; i < nu; ++i) {
      // a dummy all-zero label rides along so crop padding surfaces as IGNORE
      Sample u = *b.unlabeled[static_cast<std::size_t>(i)];
      u.label = LabelMap({u.height(), u.width()});
      Rng rw = aug_rng(t, i, 1);
      const Sample aug = augment::weak_augment(u, weak, rw);
      std::copy(aug.image.begin(), aug.image.end(), out.weak_images.begin() + i * ipix);
      std::copy(aug.label->begin(), aug.label->end(), out.valid.begin() + i * lpix);
      Rng r1 = aug_rng(t, i, 2);
      const Image s1 = augment::strong_augment(aug.image, strong, r1);
      std::copy(s1.begin(), s1.end(), out.strong1.begin() + i * ipix);
      Rng r2 = aug_rng(t, i, 3);
      const Image s2 = augment::strong_augment(aug.image, strong, r2);
      std::copy(s2.begin(), s2.end(), out.strong2.begin() + i * ipix);
    }
  }
  return out;
}

void Trainer::save_state(const std::string& path, int next_iteration) {
  CheckpointMeta meta;
  meta.iteration = next_iteration;
  meta.epoch = steps_per_epoch_ > 0 ? next_iteration / steps_per_epoch_ : 0;
  meta.best_miou = best_miou_;
  meta.config_text = config::serialize_config(cfg_);
  save_checkpoint(path, model_, &optimizer_, meta);
}

EvalReport Trainer::evaluate_now() { return evaluate(model_, eval_); }

TrainResult Trainer::run_training(int stop_after) {
  const int T = total_iterations_;
  const int stop = stop_after < 0 ? T : std::min(stop_after, T);

  const std::string csv_path = run_dir_ + "/metrics.csv";
  const bool fresh_csv = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw DataError("trainer: cannot write '" + csv_path + "'");
  if (fresh_csv) csv << kCsvHeader << "\n";

  TrainResult result;
  result.metrics_csv = csv_path;
  result.last_checkpoint = run_dir_ + "/last.ckpt";
  result.best_checkpoint = run_dir_ + "/best.ckpt";

  StepSettings settings;
  settings.unlabeled = cfg_.unlabeled_spec();
  settings.policy = cfg_.perturbation_policy();
  settings.update_running = true;
  const auto mode = cfg_.objective.lambda_x_np_mode == "fixed" ? LambdaXnpMode::kFixed
                                                               : LambdaXnpMode::kLinear;

  int t = start_iteration_;
  double last_eval_miou = best_miou_ >= 0.0 ? best_miou_ : 0.0;
  for (; t < stop; ++t) {
    const int epoch = t / steps_per_epoch_;
    const int step_in_epoch = t % steps_per_epoch_;
    dataset::EpochIterator epoch_iter(labeled_, unlabeled_, cfg_.trainer.batch_size,
                                      mix64(mix64(seed_ ^ kDataTag) ^ static_cast<std::uint64_t>(epoch)));
    const StepBatch<float> batch = make_batch(epoch_iter.batch(step_in_epoch), t);

    ScheduleState sched{t, T};
    settings.weights.lambda_x = cfg_.objective.lambda_x;
    settings.weights.lambda_x_np = lambda_x_np(sched, cfg_.objective.lambda_x_np_max, mode);
    settings.weights.lambda_u_s = cfg_.objective.lambda_u_s;
    settings.weights.lambda_u_fp = cfg_.objective.lambda_u_fp;
    settings.weights.lambda_u_np = cfg_.objective.lambda_u_np;
    const double lr = poly_lr(sched, cfg_.trainer.base_lr, cfg_.trainer.poly_power);

    Rng step_rng(mix64(mix64(seed_ ^ kStepTag) ^ static_cast<std::uint64_t>(t)));
    const StepDiagnostics diag = compute_step(model_, batch, settings, step_rng);
    optimizer_.step(lr);

    std::string chosen;
    for (std::size_t i = 0; i < diag.chosen.size(); ++i)
      chosen += (i ? "+" : "") + model::format_block_id(diag.chosen[i]);
    csv << t << ',' << fmt(diag.losses.l_x) << ',' << fmt(diag.losses.l_x_np) << ','
        << fmt(diag.losses.l_u_s) << ',' << fmt(diag.losses.l_u_fp) << ','
        << fmt(diag.losses.l_u_np) << ',' << fmt(diag.losses.total) << ',' << fmt(lr) << ','
        << fmt(settings.weights.lambda_x_np) << ',' << fmt(diag.mask_pass_rate) << ',' << chosen
        << ",\n";

    const int done = t + 1;
    if (done % cfg_.trainer.eval_every == 0 || done == T) {
      const EvalReport report = evaluate_now();
      last_eval_miou = report.miou;
      csv << t << ",,,,,,,,,,," << fmt(report.miou) << "\n";
      csv.flush();
      if (report.miou > best_miou_) {
        best_miou_ = report.miou;
        save_state(result.best_checkpoint, done);
      }
      save_state(result.last_checkpoint, done);
    }
  }

  save_state(result.last_checkpoint, t);
  result.best_miou = best_miou_ >= 0.0 ? best_miou_ : 0.0;
  result.final_miou = last_eval_miou;
  result.iterations_done = t;
  return result;
}

}  // namespace mlpmatch::trainer
