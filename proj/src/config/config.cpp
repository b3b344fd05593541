#include "mlpmatch/config/train_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace mlpmatch::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) parts.push_back(trim(cur));
  return parts;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> defs = [] {
    std::vector<Field> f;
    auto D = [&f](const char* sec, const char* key, auto member_of) {
      f.push_back({sec, key,
                   [member_of, sec, key](TrainConfig& c, const std::string& v) {
                     *member_of(c) = parse_double(std::string(sec) + "." + key, v);
                   },
                   [member_of](const TrainConfig& c) {
                     return fmt_double(*member_of(const_cast<TrainConfig&>(c)));
                   }});
    };
    auto I = [&f](const char* sec, const char* key, auto member_of) {
      f.push_back({sec, key,
                   [member_of, sec, key](TrainConfig& c, const std::string& v) {
                     *member_of(c) = static_cast<int>(parse_int(std::string(sec) + "." + key, v));
                   },
                   [member_of](const TrainConfig& c) {
                     return std::to_string(*member_of(const_cast<TrainConfig&>(c)));
                   }});
    };
    auto B = [&f](const char* sec, const char* key, auto member_of) {
      f.push_back({sec, key,
                   [member_of, sec, key](TrainConfig& c, const std::string& v) {
                     *member_of(c) = parse_bool(std::string(sec) + "." + key, v);
                   },
                   [member_of](const TrainConfig& c) {
                     return *member_of(const_cast<TrainConfig&>(c)) ? std::string("true")
                                                                    : std::string("false");
                   }});
    };
    auto S = [&f](const char* sec, const char* key, auto member_of) {
      f.push_back({sec, key,
                   [member_of](TrainConfig& c, const std::string& v) { *member_of(c) = v; },
                   [member_of](const TrainConfig& c) {
                     return *member_of(const_cast<TrainConfig&>(c));
                   }});
    };

    S("data", "root", [](TrainConfig& c) { return &c.data.root; });
    I("data", "num_classes", [](TrainConfig& c) { return &c.data.num_classes; });

    I("augment", "crop_size", [](TrainConfig& c) { return &c.augment.crop_size; });
    D("augment", "scale_min", [](TrainConfig& c) { return &c.augment.scale_min; });
    D("augment", "scale_max", [](TrainConfig& c) { return &c.augment.scale_max; });
    D("augment", "hflip_prob", [](TrainConfig& c) { return &c.augment.hflip_prob; });
    D("augment", "color_jitter_prob", [](TrainConfig& c) { return &c.augment.color_jitter_prob; });
    D("augment", "grayscale_prob", [](TrainConfig& c) { return &c.augment.grayscale_prob; });
    D("augment", "blur_prob", [](TrainConfig& c) { return &c.augment.blur_prob; });
    D("augment", "cutmix_prob", [](TrainConfig& c) { return &c.augment.cutmix_prob; });
    D("augment", "cutmix_area_min", [](TrainConfig& c) { return &c.augment.cutmix_area_min; });
    D("augment", "cutmix_area_max", [](TrainConfig& c) { return &c.augment.cutmix_area_max; });

    D("model", "width_multiplier", [](TrainConfig& c) { return &c.model.width_multiplier; });
    f.push_back({"model", "depths",
                 [](TrainConfig& c, const std::string& v) {
                   const auto parts = split_commas(v);
                   if (parts.size() != 4)
                     throw ConfigError("config: 'model.depths' expects 4 comma-separated integers");
                   for (int i = 0; i < 4; ++i)
                     c.model.depths[static_cast<std::size_t>(i)] =
                         static_cast<int>(parse_int("model.depths", parts[static_cast<std::size_t>(i)]));
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (int i = 0; i < 4; ++i)
                     s += (i ? "," : "") + std::to_string(c.model.depths[static_cast<std::size_t>(i)]);
                   return s;
                 }});
    B("model", "relu_on_projection_skip",
      [](TrainConfig& c) { return &c.model.relu_on_projection_skip; });
    f.push_back({"model", "np_stages",
                 [](TrainConfig& c, const std::string& v) {
                   c.model.np_stages.clear();
                   for (const auto& p : split_commas(v))
                     if (!p.empty())
                       c.model.np_stages.push_back(static_cast<int>(parse_int("model.np_stages", p)));
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.model.np_stages.size(); ++i)
                     s += (i ? "," : "") + std::to_string(c.model.np_stages[i]);
                   return s;
                 }});
    f.push_back({"model", "np_stage_weights",
                 [](TrainConfig& c, const std::string& v) {
                   const auto parts = split_commas(v);
                   if (parts.size() != 4)
                     throw ConfigError("config: 'model.np_stage_weights' expects 4 comma-separated numbers");
                   for (int i = 0; i < 4; ++i)
                     c.model.np_stage_weights[static_cast<std::size_t>(i)] =
                         parse_double("model.np_stage_weights", parts[static_cast<std::size_t>(i)]);
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (int i = 0; i < 4; ++i)
                     s += (i ? "," : "") + fmt_double(c.model.np_stage_weights[static_cast<std::size_t>(i)]);
                   return s;
                 }});

    D("objective", "tau", [](TrainConfig& c) { return &c.objective.tau; });
    D("objective", "fp_rate", [](TrainConfig& c) { return &c.objective.fp_rate; });
    D("objective", "lambda_x", [](TrainConfig& c) { return &c.objective.lambda_x; });
    D("objective", "lambda_x_np_max", [](TrainConfig& c) { return &c.objective.lambda_x_np_max; });
    S("objective", "lambda_x_np_mode", [](TrainConfig& c) { return &c.objective.lambda_x_np_mode; });
    D("objective", "lambda_u_s", [](TrainConfig& c) { return &c.objective.lambda_u_s; });
    D("objective", "lambda_u_fp", [](TrainConfig& c) { return &c.objective.lambda_u_fp; });
    D("objective", "lambda_u_np", [](TrainConfig& c) { return &c.objective.lambda_u_np; });

    I("trainer", "epochs", [](TrainConfig& c) { return &c.trainer.epochs; });
    I("trainer", "batch_size", [](TrainConfig& c) { return &c.trainer.batch_size; });
    D("trainer", "base_lr", [](TrainConfig& c) { return &c.trainer.base_lr; });
    D("trainer", "momentum", [](TrainConfig& c) { return &c.trainer.momentum; });
    D("trainer", "weight_decay", [](TrainConfig& c) { return &c.trainer.weight_decay; });
    D("trainer", "poly_power", [](TrainConfig& c) { return &c.trainer.poly_power; });
    D("trainer", "decoder_lr_mult", [](TrainConfig& c) { return &c.trainer.decoder_lr_mult; });
    I("trainer", "eval_every", [](TrainConfig& c) { return &c.trainer.eval_every; });
    f.push_back({"trainer", "seed",
                 [](TrainConfig& c, const std::string& v) {
                   try {
                     // stoull accepts a sign and wraps; an explicit scan does not
                     if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
                       throw std::invalid_argument(v);
                     std::size_t pos = 0;
                     c.trainer.seed = std::stoull(v, &pos);
                     if (pos != v.size()) throw std::invalid_argument(v);
                   } catch (const std::exception&) {
                     throw ConfigError("config: 'trainer.seed' expects an unsigned integer, got '" + v + "'");
                   }
                 },
                 [](const TrainConfig& c) { return std::to_string(c.trainer.seed); }});
    return f;
  }();
  return defs;
}

std::string valid_keys_for(const std::string& section) {
  std::string out;
  for (const auto& fd : fields())
    if (fd.section == section) out += (out.empty() ? "" : ", ") + fd.key;
  return out;
}

std::string valid_sections() {
  std::string out;
  std::vector<std::string> seen;
  for (const auto& fd : fields()) {
    if (std::find(seen.begin(), seen.end(), fd.section) == seen.end()) {
      seen.push_back(fd.section);
      out += (out.empty() ? "" : ", ") + fd.section;
    }
  }
  return out;
}

const Field& find_field(const std::string& section, const std::string& key) {
  bool section_known = false;
  for (const auto& fd : fields()) {
    if (fd.section == section) {
      section_known = true;
      if (fd.key == key) return fd;
    }
  }
  if (!section_known)
    throw ConfigError("config: unknown section '" + section + "'; valid sections: " +
                      valid_sections());
  throw ConfigError("config: unknown key '" + section + "." + key + "'; valid keys in [" + section +
                    "]: " + valid_keys_for(section));
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line = line.substr(0, cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (valid_keys_for(section).empty())
        throw ConfigError("config: unknown section '" + section + "'; valid sections: " +
                          valid_sections());
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' appears before any [section] header");
    find_field(section, key).set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& fd : fields()) {
    if (fd.section != current) {
      if (!current.empty()) os << "\n";
      os << "[" << fd.section << "]\n";
      current = fd.section;
    }
    os << fd.key << " = " << fd.get(cfg) << "\n";
  }
  return os.str();
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: override '" + assignment + "' must look like section.key=value");
  const std::string path = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const std::size_t dot = path.find('.');
  if (dot == std::string::npos)
    throw ConfigError("config: override key '" + path + "' must be qualified as section.key");
  find_field(path.substr(0, dot), path.substr(dot + 1)).set(cfg, value);
}

void TrainConfig::validate() const {
  if (data.num_classes < 2) throw ConfigError("config: data.num_classes must be >= 2");
  if (augment.crop_size < 8) throw ConfigError("config: augment.crop_size must be >= 8");
  if (augment.scale_min <= 0.0 || augment.scale_max < augment.scale_min)
    throw ConfigError("config: augment scale range must satisfy 0 < scale_min <= scale_max");
  for (double p : {augment.hflip_prob, augment.color_jitter_prob, augment.grayscale_prob,
                   augment.blur_prob, augment.cutmix_prob})
    if (p < 0.0 || p > 1.0) throw ConfigError("config: augment probabilities must be in [0, 1]");
  if (augment.cutmix_area_min <= 0.0 || augment.cutmix_area_max < augment.cutmix_area_min ||
      augment.cutmix_area_max > 1.0)
    throw ConfigError("config: cutmix area range must satisfy 0 < min <= max <= 1");

  if (model.width_multiplier <= 0.0) throw ConfigError("config: model.width_multiplier must be > 0");
  for (int d : model.depths)
    if (d < 1) throw ConfigError("config: model.depths entries must be >= 1");
  if (model.np_stages.empty()) throw ConfigError("config: model.np_stages must not be empty");
  for (int s : model.np_stages)
    if (s < 1 || s > 4) throw ConfigError("config: model.np_stages entries must be in 1..4");
  double wsum = 0.0;
  for (double w : model.np_stage_weights) {
    if (w < 0.0) throw ConfigError("config: model.np_stage_weights must be non-negative");
    wsum += w;
  }
  if (wsum <= 0.0) throw ConfigError("config: model.np_stage_weights must not all be zero");

  if (objective.tau < 0.0 || objective.tau > 1.0)
    throw ConfigError("config: objective.tau must be in [0, 1]");
  if (objective.fp_rate < 0.0 || objective.fp_rate >= 1.0)
    throw ConfigError("config: objective.fp_rate must be in [0, 1)");
  objective::LossWeights w;
  w.lambda_x = objective.lambda_x;
  w.lambda_x_np = objective.lambda_x_np_max;
  w.lambda_u_s = objective.lambda_u_s;
  w.lambda_u_fp = objective.lambda_u_fp;
  w.lambda_u_np = objective.lambda_u_np;
  objective::validate_weights(w);
  if (objective.lambda_x_np_mode != "linear" && objective.lambda_x_np_mode != "fixed")
    throw ConfigError("config: objective.lambda_x_np_mode must be 'linear' or 'fixed'");

  if (trainer.epochs < 1) throw ConfigError("config: trainer.epochs must be >= 1");
  if (trainer.batch_size < 2 || trainer.batch_size % 2 != 0)
    throw ConfigError("config: trainer.batch_size must be an even number >= 2");
  if (trainer.base_lr <= 0.0) throw ConfigError("config: trainer.base_lr must be > 0");
  if (trainer.momentum < 0.0 || trainer.momentum >= 1.0)
    throw ConfigError("config: trainer.momentum must be in [0, 1)");
  if (trainer.weight_decay < 0.0) throw ConfigError("config: trainer.weight_decay must be >= 0");
  if (trainer.poly_power <= 0.0) throw ConfigError("config: trainer.poly_power must be > 0");
  if (trainer.decoder_lr_mult <= 0.0)
    throw ConfigError("config: trainer.decoder_lr_mult must be > 0");
  if (trainer.eval_every < 1) throw ConfigError("config: trainer.eval_every must be >= 1");
}

mlpmatch::augment::WeakAugSpec TrainConfig::weak_spec() const {
  mlpmatch::augment::WeakAugSpec s;
  s.crop_size = augment.crop_size;
  s.scale_min = augment.scale_min;
  s.scale_max = augment.scale_max;
  s.hflip_prob = augment.hflip_prob;
  return s;
}

mlpmatch::augment::StrongAugSpec TrainConfig::strong_spec() const {
  mlpmatch::augment::StrongAugSpec s;
  s.color_jitter_prob = augment.color_jitter_prob;
  s.grayscale_prob = augment.grayscale_prob;
  s.blur_prob = augment.blur_prob;
  s.cutmix_prob = augment.cutmix_prob;
  return s;
}

mlpmatch::objective::UnlabeledSpec TrainConfig::unlabeled_spec() const {
  mlpmatch::objective::UnlabeledSpec s;
  s.tau = objective.tau;
  s.fp_rate = objective.fp_rate;
  s.cutmix_prob = augment.cutmix_prob;
  s.cutmix_area_min = augment.cutmix_area_min;
  s.cutmix_area_max = augment.cutmix_area_max;
  return s;
}

mlpmatch::model::ModelSpec TrainConfig::model_spec() const {
  mlpmatch::model::ModelSpec s;
  s.num_classes = data.num_classes;
  s.width_multiplier = model.width_multiplier;
  s.depths = model.depths;
  s.relu_on_projection_skip = model.relu_on_projection_skip;
  return s;
}

mlpmatch::model::PerturbationPolicy TrainConfig::perturbation_policy() const {
  mlpmatch::model::PerturbationPolicy p;
  p.enabled = true;
  p.max_skipped = 1;
  p.stage_weights = model.np_stage_weights;
  return p;
}

}  // namespace mlpmatch::config
