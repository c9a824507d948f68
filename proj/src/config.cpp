#include "metdrive/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace metdrive {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config: cannot parse '" + text + "' for key " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: expected true/false for key " + key + ", got '" + text + "'");
}

std::string format_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field integer(std::string key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.*member = parse_number<T>(key, v);
          }};
}

Field real(std::string key, double ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(c.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.*member = parse_number<double>(key, v);
          }};
}

Field loss_weight(std::string key, double losses::LossWeights::*member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(c.loss.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.loss.*member = parse_number<double>(key, v);
          }};
}

Field text(std::string key, std::string ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return c.*member; },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      integer("model.L", &ExperimentConfig::length),
      integer("model.K", &ExperimentConfig::waypoints),
      integer("model.embed_dim", &ExperimentConfig::embed_dim),
      integer("model.temporal_dim", &ExperimentConfig::temporal_dim),
      integer("model.geometric_dim", &ExperimentConfig::geometric_dim),
      integer("model.hidden", &ExperimentConfig::hidden),
      integer("model.heads", &ExperimentConfig::heads),
      integer("model.kernel", &ExperimentConfig::kernel),
      loss_weight("loss.alpha", &losses::LossWeights::alpha),
      loss_weight("loss.beta", &losses::LossWeights::beta),
      loss_weight("loss.lambda_tg", &losses::LossWeights::lambda_tg),
      real("train.lr", &ExperimentConfig::learning_rate),
      integer("train.batch_size", &ExperimentConfig::batch_size),
      integer("train.epochs", &ExperimentConfig::epochs),
      integer("seed", &ExperimentConfig::seed),
      text("data.path", &ExperimentConfig::data_path),
      integer("data.routes", &ExperimentConfig::data_routes),
      integer("data.stride", &ExperimentConfig::stride),
      integer("data.smoothing_window", &ExperimentConfig::smoothing_window),
      integer("data.max_difficulty", &ExperimentConfig::max_difficulty),
      text("checkpoint.path", &ExperimentConfig::checkpoint_path),
      text("report.path", &ExperimentConfig::report_path),
      {"ablation.temporal_loss_on",
       [](const ExperimentConfig& c) { return std::string(c.temporal_loss_on ? "true" : "false"); },
       [](ExperimentConfig& c, const std::string& v) {
         c.temporal_loss_on = parse_bool("ablation.temporal_loss_on", v);
       }},
      {"ablation.input_mode",
       [](const ExperimentConfig& c) { return temporal::to_string(c.input_mode); },
       [](ExperimentConfig& c, const std::string& v) {
         c.input_mode = temporal::input_mode_from_string(v);
       }},
      integer("eval.routes", &ExperimentConfig::eval_routes),
      integer("eval.max_difficulty", &ExperimentConfig::eval_max_difficulty),
      integer("eval.seed", &ExperimentConfig::eval_seed),
  };
  return table;
}

}  // namespace

ModelConfig ExperimentConfig::model() const {
  ModelConfig m;
  m.waypoints = waypoints;
  m.temporal.length = length;
  m.temporal.embed_dim = embed_dim;
  m.temporal.output_dim = temporal_dim;
  m.temporal.heads = heads;
  m.temporal.kernel = kernel;
  m.temporal.mode = input_mode;
  m.perception.output_dim = geometric_dim;
  m.hidden = hidden;
  return m;
}

losses::LossWeights ExperimentConfig::effective_loss() const {
  losses::LossWeights w = loss;
  if (!temporal_loss_on) w.lambda_tg = 0.0;
  return w;
}

std::vector<std::pair<std::string, std::string>> snapshot(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override '" + assignment + "' is not key=value");
  }
  apply_setting(c, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [key, value] : snapshot(c)) out += key + " = " + value + "\n";
  return out;
}

void validate_config(const ExperimentConfig& c) {
  validate_model_config(c.model());
  if (c.kernel < 1 || c.kernel % 2 == 0) throw ConfigError("model.kernel must be odd and >= 1");
  losses::validate_weights(c.loss, c.temporal_loss_on);
  if (!(c.learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (c.data_routes < 1) throw ConfigError("data.routes must be >= 1");
  if (c.stride < 1) throw ConfigError("data.stride must be >= 1");
  if (c.smoothing_window < 1 || c.smoothing_window % 2 == 0) {
    throw ConfigError("data.smoothing_window must be odd and >= 1");
  }
  if (c.max_difficulty < 0 || c.max_difficulty > 3) throw ConfigError("data.max_difficulty must be in [0, 3]");
  if (c.eval_routes < 1) throw ConfigError("eval.routes must be >= 1");
  if (c.eval_max_difficulty < 0 || c.eval_max_difficulty > 3) {
    throw ConfigError("eval.max_difficulty must be in [0, 3]");
  }
}

}  // namespace metdrive
