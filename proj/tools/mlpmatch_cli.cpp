// Experiment command line: train / eval / ablate / make-data.
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical abort.
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "mlpmatch/config/train_config.hpp"
#include "mlpmatch/dataset/synthetic.hpp"
#include "mlpmatch/dataset/voc.hpp"
#include "mlpmatch/trainer/checkpoint.hpp"
#include "mlpmatch/trainer/trainer.hpp"

#ifndef MLPMATCH_GIT_REV
#define MLPMATCH_GIT_REV "unknown"
#endif

namespace fs = std::filesystem;
using namespace mlpmatch;

namespace {

std::string run_root_default() {
  const char* env = std::getenv("MLPMATCH_RUN_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string config_hash(const config::TrainConfig& cfg) {
  return fnv1a_hex(config::serialize_config(cfg));
}

config::TrainConfig load_with_overrides(const std::string& config_path,
                                        const std::vector<std::string>& overrides) {
  config::TrainConfig cfg = config::load_config(config_path);
  for (const auto& kv : overrides) config::apply_override(cfg, kv);
  cfg.validate();
  return cfg;
}

void write_manifest(const std::string& run_dir, const config::TrainConfig& cfg,
                    const std::string& started, const trainer::TrainResult& result) {
  nlohmann::json j;
  j["build"] = MLPMATCH_GIT_REV;
  j["seed"] = cfg.trainer.seed;
  j["config"] = config::serialize_config(cfg);
  j["config_hash"] = config_hash(cfg);
  j["started_utc"] = started;
  j["finished_utc"] = utc_now();
  j["final"] = {{"miou", result.final_miou},
                {"best_miou", result.best_miou},
                {"iterations", result.iterations_done}};
  std::ofstream out(run_dir + "/manifest.json");
  if (!out) throw DataError("cannot write manifest under '" + run_dir + "'");
  out << j.dump(2) << "\n";
}

void print_report(const trainer::EvalReport& report) {
  for (std::size_t c = 0; c < report.per_class_iou.size(); ++c) {
    std::cout << "class " << c << " iou ";
    if (report.class_counted[c])
      std::cout << std::fixed << std::setprecision(4) << report.per_class_iou[c];
    else
      std::cout << "-";
    std::cout << "\n";
  }
  std::cout << "miou " << std::fixed << std::setprecision(4) << report.miou << "\n";
}

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values) {
  const int width = 180 * std::max<int>(2, static_cast<int>(values.size()));
  const int height = 480;
  const int base_y = height - 70;
  const int top_y = 60;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(250, 250, 250));

  double vmax = 1e-9;
  for (double v : values) vmax = std::max(vmax, v);

  cv::putText(img, title, {20, 32}, cv::FONT_HERSHEY_SIMPLEX, 0.8, {40, 40, 40}, 2);
  cv::line(img, {30, base_y}, {width - 20, base_y}, {80, 80, 80}, 2);

  const int slot = (width - 60) / static_cast<int>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int x0 = 40 + static_cast<int>(i) * slot;
    const int bar_w = slot - 40;
    const int bar_h = static_cast<int>((base_y - top_y) * values[i] / vmax);
    const cv::Point tl(x0, base_y - bar_h);
    const cv::Point br(x0 + bar_w, base_y);
    cv::rectangle(img, tl, br, cv::Scalar(180, 120, 40), cv::FILLED);
    std::ostringstream val;
    val << std::fixed << std::setprecision(3) << values[i];
    cv::putText(img, val.str(), {x0, base_y - bar_h - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
                {40, 40, 40}, 1);
    cv::putText(img, labels[i], {x0, base_y + 28}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {40, 40, 40}, 1);
  }
  if (!cv::imwrite(path, img)) throw DataError("cannot write chart: " + path);
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::string run_dir, int stop_after) {
  const config::TrainConfig cfg = load_with_overrides(config_path, overrides);
  if (run_dir.empty()) run_dir = run_root_default() + "/train-" + config_hash(cfg);

  const std::string started = utc_now();
  trainer::Trainer tr(cfg, run_dir);
  std::cout << "run dir: " << run_dir << "\n"
            << "iterations: " << tr.total_iterations() << " (resuming at "
            << tr.start_iteration() << ")\n";
  const trainer::TrainResult result = tr.run_training(stop_after);

  if (result.iterations_done == tr.total_iterations()) {
    write_manifest(run_dir, cfg, started, result);
    std::cout << "final miou " << std::fixed << std::setprecision(4) << result.final_miou
              << ", best " << result.best_miou << "\n";
  } else {
    std::cout << "paused at iteration " << result.iterations_done << "; rerun to resume\n";
  }
  std::cout << "metrics: " << result.metrics_csv << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_root, const std::string& split,
             int expect_classes, std::string out_csv) {
  const trainer::CheckpointMeta meta = trainer::peek_checkpoint(ckpt_path);
  if (meta.config_text.empty())
    throw DataError("checkpoint '" + ckpt_path + "' carries no configuration");
  config::TrainConfig cfg = config::parse_config(meta.config_text);
  if (expect_classes > 0 && expect_classes != cfg.data.num_classes)
    throw ConfigError("class-count mismatch: checkpoint was trained with num_classes=" +
                      std::to_string(cfg.data.num_classes) + " but --classes requested " +
                      std::to_string(expect_classes));

  auto model = model::PerturbableSegModel<float>(cfg.model_spec());
  trainer::load_checkpoint(ckpt_path, model, nullptr);

  const auto ids = dataset::read_id_list(data_root + "/splits/" + split + ".txt");
  const auto samples = dataset::load_voc_samples(data_root, ids, cfg.data.num_classes, true);
  const trainer::EvalReport report = trainer::evaluate(model, samples);
  print_report(report);

  if (out_csv.empty()) out_csv = ckpt_path + ".eval.csv";
  std::ofstream out(out_csv);
  if (!out) throw DataError("cannot write '" + out_csv + "'");
  for (int c = 0; c < cfg.data.num_classes; ++c) out << "iou_class" << c << ",";
  out << "miou\n";
  for (int c = 0; c < cfg.data.num_classes; ++c)
    out << std::setprecision(10) << report.per_class_iou[static_cast<std::size_t>(c)] << ",";
  out << std::setprecision(10) << report.miou << "\n";
  std::cout << "report: " << out_csv << "\n";
  return 0;
}

struct AblateRow {
  std::string label;
  config::TrainConfig cfg;
};

std::vector<AblateRow> ablate_rows(const std::string& axis, const config::TrainConfig& base) {
  std::vector<AblateRow> rows;
  if (axis == "components") {
    AblateRow baseline{"baseline", base};
    baseline.cfg.objective.lambda_u_np = 0.0;
    baseline.cfg.objective.lambda_x_np_max = 0.0;
    AblateRow np{"with_np", base};
    np.cfg.objective.lambda_x_np_max = 0.0;
    AblateRow full{"with_np_volatile", base};
    rows = {baseline, np, full};
  } else if (axis == "np_layers") {
    const std::vector<std::pair<std::string, std::vector<int>>> sets = {
        {"stage4", {4}}, {"stages3-4", {3, 4}}, {"stages2-4", {2, 3, 4}},
        {"stages1-4", {1, 2, 3, 4}}};
    for (const auto& [label, stages] : sets) {
      AblateRow row{label, base};
      row.cfg.model.np_stages = stages;
      rows.push_back(std::move(row));
    }
  } else if (axis == "lambda_x_np") {
    AblateRow fixed{"fixed-0.25", base};
    fixed.cfg.objective.lambda_x_np_mode = "fixed";
    fixed.cfg.objective.lambda_x_np_max = 0.25;
    AblateRow linear{"linear-0.25", base};
    linear.cfg.objective.lambda_x_np_mode = "linear";
    linear.cfg.objective.lambda_x_np_max = 0.25;
    rows = {fixed, linear};
  } else {
    throw ConfigError("unknown ablation axis '" + axis +
                      "'; valid axes: components, np_layers, lambda_x_np");
  }
  for (auto& row : rows) row.cfg.validate();
  return rows;
}

int run_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& axis, std::string run_root, int parallel) {
  const config::TrainConfig base = load_with_overrides(config_path, overrides);
  if (run_root.empty()) run_root = run_root_default();
  const std::string axis_dir = run_root + "/ablate-" + axis;
  fs::create_directories(axis_dir);

  std::vector<AblateRow> rows = ablate_rows(axis, base);
  std::vector<trainer::TrainResult> results(rows.size());
  std::vector<std::exception_ptr> errors(rows.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= rows.size()) return;
      try {
        const std::string started = utc_now();
        trainer::Trainer tr(rows[i].cfg, axis_dir + "/" + rows[i].label);
        results[i] = tr.run_training();
        write_manifest(axis_dir + "/" + rows[i].label, rows[i].cfg, started, results[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int workers = std::clamp<int>(parallel, 1, static_cast<int>(rows.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  const std::string csv_path = axis_dir + "/results.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write '" + csv_path + "'");
  csv << "label,config_hash,final_miou,best_miou,iterations\n";
  std::vector<std::string> labels;
  std::vector<double> mious;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << rows[i].label << ',' << config_hash(rows[i].cfg) << ',' << std::setprecision(10)
        << results[i].final_miou << ',' << results[i].best_miou << ','
        << results[i].iterations_done << "\n";
    labels.push_back(rows[i].label);
    mious.push_back(results[i].final_miou);
    std::cout << rows[i].label << ": miou " << std::fixed << std::setprecision(4)
              << results[i].final_miou << "\n";
  }
  csv.close();
  write_bar_chart(axis_dir + "/results.png", "final miou by " + axis, labels, mious);
  std::cout << "table: " << csv_path << "\nchart: " << axis_dir + "/results.png" << "\n";
  return 0;
}

int run_make_data(const std::string& out_root, int size, int classes, int labeled, int unlabeled,
                  int val, std::uint64_t seed) {
  dataset::SyntheticSpec spec;
  spec.image_size = size;
  spec.num_classes = classes;
  spec.seed = seed;
  const int total = labeled + unlabeled + val;
  if (labeled < 1 || unlabeled < 0 || val < 1)
    throw ConfigError("make-data needs labeled >= 1, unlabeled >= 0, val >= 1");
  const auto all = dataset::generate_synthetic(spec, total);
  const std::vector<Sample> lab(all.begin(), all.begin() + labeled);
  const std::vector<Sample> unl(all.begin() + labeled, all.begin() + labeled + unlabeled);
  const std::vector<Sample> va(all.begin() + labeled + unlabeled, all.end());
  dataset::write_voc_dir(out_root, lab, unl, va);
  std::cout << "wrote " << labeled << " labeled / " << unlabeled << " unlabeled / " << val
            << " val images (" << size << "x" << size << ", " << classes << " classes) to "
            << out_root << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLPMatch: semi-supervised semantic segmentation experiments"};
  app.require_subcommand(1);

  std::string config_path, run_dir, run_root, ckpt_path, data_root, split = "val", out_csv;
  std::string axis, out_root;
  std::vector<std::string> overrides;
  int stop_after = -1, parallel = 1, expect_classes = 0;
  int size = 64, classes = 4, labeled = 8, unlabeled = 64, val = 64;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Run (or resume) a training run");
  train->add_option("-c,--config", config_path, "configuration file")->required();
  train->add_option("-s,--set", overrides, "override, section.key=value (repeatable)");
  train->add_option("--run-dir", run_dir, "run directory (default: <run root>/train-<hash>)");
  train->add_option("--stop-after", stop_after, "pause after this global iteration");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_root, "dataset root")->required();
  eval->add_option("--split", split, "split name under <data>/splits (default val)");
  eval->add_option("--classes", expect_classes, "expected class count (checked against checkpoint)");
  eval->add_option("--out", out_csv, "report CSV path (default: <checkpoint>.eval.csv)");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation axis and tabulate results");
  ablate->add_option("-c,--config", config_path, "base configuration file")->required();
  ablate->add_option("-a,--axis", axis, "components | np_layers | lambda_x_np")->required();
  ablate->add_option("-s,--set", overrides, "override applied to every row (repeatable)");
  ablate->add_option("--run-root", run_root, "output root (default: $MLPMATCH_RUN_ROOT or ./runs)");
  ablate->add_option("--parallel", parallel, "number of rows trained concurrently");

  auto* make = app.add_subcommand("make-data", "Generate a synthetic dataset on disk");
  make->add_option("-o,--out", out_root, "dataset root to create")->required();
  make->add_option("--size", size, "image side length (default 64)");
  make->add_option("--classes", classes, "class count incl. background (default 4)");
  make->add_option("--labeled", labeled, "labeled image count (default 8)");
  make->add_option("--unlabeled", unlabeled, "unlabeled image count (default 64)");
  make->add_option("--val", val, "validation image count (default 64)");
  make->add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints the usage message
    return code == 0 ? 0 : 1;      // --help exits 0; any usage problem is 1
  }

  try {
    if (train->parsed()) return run_train(config_path, overrides, run_dir, stop_after);
    if (eval->parsed()) return run_eval(ckpt_path, data_root, split, expect_classes, out_csv);
    if (ablate->parsed()) return run_ablate(config_path, overrides, axis, run_root, parallel);
    if (make->parsed())
      return run_make_data(out_root, size, classes, labeled, unlabeled, val, seed);
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
