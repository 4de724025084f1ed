#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cral/errors.hpp"

namespace cral::cli {

Command parse_command(const std::string& name) {
  static const std::map<std::string, Command> table{
      {"train", Command::Train},   {"kfold", Command::Kfold}, {"msuda", Command::Msuda},
      {"ablate", Command::Ablate}, {"sweep", Command::Sweep}, {"gen-data", Command::GenData},
      {"grad-check", Command::GradCheck}};
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("command", "unknown command '" + name + "'");
  return it->second;
}

std::string command_name(Command c) {
  switch (c) {
    case Command::Train: return "train";
    case Command::Kfold: return "kfold";
    case Command::Msuda: return "msuda";
    case Command::Ablate: return "ablate";
    case Command::Sweep: return "sweep";
    case Command::GenData: return "gen-data";
    case Command::GradCheck: return "grad-check";
  }
  return "?";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key size_key(T RunConfig::*group, std::size_t T::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*group).*field = to_uint(k, v); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*field); }};
}

template <typename T>
Key double_key(T RunConfig::*group, double T::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*group).*field = to_double(k, v); },
          [=](const RunConfig& c) { return fmt((c.*group).*field); }};
}

Key weight_key(double LossWeights::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.train.weights.*field = to_double(k, v); },
          [=](const RunConfig& c) { return fmt(c.train.weights.*field); }};
}

Key switch_key(bool TermSwitches::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.train.switches.*field = to_bool(k, v); },
          [=](const RunConfig& c) { return std::string(c.train.switches.*field ? "true" : "false"); }};
}

Key hidden_key(std::vector<std::size_t> ModelConfig::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            std::vector<std::size_t> widths;
            for (const auto& item : split_list(v)) widths.push_back(to_uint(k, item));
            c.model.*field = widths;
          },
          [=](const RunConfig& c) { return fmt_list(c.model.*field); }};
}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    // training
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_uint(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    t["epochs"] = size_key(&RunConfig::train, &TrainConfig::epochs);
    t["batch_size"] = size_key(&RunConfig::train, &TrainConfig::batch_size);
    t["eval_every"] = size_key(&RunConfig::train, &TrainConfig::eval_every);
    t["learning_rate"] = double_key(&RunConfig::train, &TrainConfig::learning_rate);
    t["log_wall_clock"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.log_wall_clock = to_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.train.log_wall_clock ? "true" : "false"); }};
    t["adversarial_sign"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                               if (v == "standard") c.train.sign = AdversarialSign::Standard;
                               else if (v == "literal") c.train.sign = AdversarialSign::Literal;
                               else throw ConfigError(k, "expected standard or literal, got '" + v + "'");
                             },
                             [](const RunConfig& c) {
                               return std::string(c.train.sign == AdversarialSign::Standard ? "standard" : "literal");
                             }};
    // loss weights
    t["gamma"] = weight_key(&LossWeights::gamma);
    t["lambda_adv"] = weight_key(&LossWeights::lambda_adv);
    t["lambda_d"] = weight_key(&LossWeights::lambda_d);
    t["lambda_div"] = weight_key(&LossWeights::lambda_div);
    t["lambda_uvt"] = weight_key(&LossWeights::lambda_uvt);
    t["lambda_lvt"] = weight_key(&LossWeights::lambda_lvt);
    t["vat_epsilon"] = weight_key(&LossWeights::vat_epsilon);
    t["vat_xi"] = weight_key(&LossWeights::vat_xi);
    t["use_disagreement"] = switch_key(&TermSwitches::disagreement);
    t["use_diversity"] = switch_key(&TermSwitches::diversity);
    t["use_vat_unlabeled"] = switch_key(&TermSwitches::vat_unlabeled);
    t["use_vat_labeled"] = switch_key(&TermSwitches::vat_labeled);
    // model
    t["shared_hidden"] = hidden_key(&ModelConfig::shared_hidden);
    t["specific_hidden"] = hidden_key(&ModelConfig::specific_hidden);
    t["shared_dim"] = size_key(&RunConfig::model, &ModelConfig::shared_dim);
    t["specific_dim"] = size_key(&RunConfig::model, &ModelConfig::specific_dim);
    t["dropout"] = double_key(&RunConfig::model, &ModelConfig::dropout);
    // data
    t["data"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "synthetic") c.source = DataSource::Synthetic;
                   else if (v == "files") c.source = DataSource::Files;
                   else throw ConfigError(k, "expected synthetic or files, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.source == DataSource::Synthetic ? "synthetic" : "files"); }};
    t["data_files"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                         c.data_files.clear();
                         for (const auto& item : split_list(v)) c.data_files.emplace_back(item);
                       },
                       [](const RunConfig& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.data_files.size(); ++i) {
                           out += (i ? "," : "") + c.data_files[i].string();
                         }
                         return out;
                       }};
    t["feature_dim"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.feature_dim = to_uint(k, v); },
                        [](const RunConfig& c) { return std::to_string(c.feature_dim); }};
    t["synthetic_domains"] = size_key(&RunConfig::synthetic, &SyntheticSpec::num_domains);
    t["synthetic_feature_dim"] = size_key(&RunConfig::synthetic, &SyntheticSpec::feature_dim);
    t["synthetic_labeled"] = size_key(&RunConfig::synthetic, &SyntheticSpec::labeled_per_domain);
    t["synthetic_unlabeled"] = size_key(&RunConfig::synthetic, &SyntheticSpec::unlabeled_per_domain);
    t["synthetic_separation"] = double_key(&RunConfig::synthetic, &SyntheticSpec::class_separation);
    t["synthetic_shift"] = double_key(&RunConfig::synthetic, &SyntheticSpec::domain_shift);
    t["synthetic_noise"] = double_key(&RunConfig::synthetic, &SyntheticSpec::label_noise);
    t["synthetic_seed"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic.seed = to_uint(k, v); },
        [](const RunConfig& c) { return std::to_string(c.synthetic.seed); }};
    // protocols
    t["folds"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.folds = to_uint(k, v); },
                  [](const RunConfig& c) { return std::to_string(c.folds); }};
    t["target_domain"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.target_domain = to_uint(k, v); },
        [](const RunConfig& c) { return std::to_string(c.target_domain); }};
    t["sweep_parameter"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sweep_parameter = v; },
                            [](const RunConfig& c) { return c.sweep_parameter; }};
    t["sweep_values"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.sweep_values.clear();
                           for (const auto& item : split_list(v)) c.sweep_values.push_back(to_double(k, item));
                         },
                         [](const RunConfig& c) {
                           std::string out;
                           for (std::size_t i = 0; i < c.sweep_values.size(); ++i) {
                             out += (i ? "," : "") + fmt(c.sweep_values[i]);
                           }
                           return out;
                         }};
    return t;
  }();
  return table;
}

void check(const RunConfig& c) {
  auto wrap = [](const std::string& key, auto&& body) {
    try {
      body();
    } catch (const SpecError& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("train", [&] { c.train.validate(); });
  wrap("dropout", [&] {
    if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) throw SpecError("dropout must lie in [0, 1)");
  });
  if (c.model.shared_dim == 0) throw ConfigError("shared_dim", "must be positive");
  if (c.model.specific_dim == 0) throw ConfigError("specific_dim", "must be positive");
  for (auto w : c.model.shared_hidden) {
    if (w == 0) throw ConfigError("shared_hidden", "widths must be positive");
  }
  for (auto w : c.model.specific_hidden) {
    if (w == 0) throw ConfigError("specific_hidden", "widths must be positive");
  }
  if (c.folds < 2) throw ConfigError("folds", "must be at least 2");

  if (c.source == DataSource::Files) {
    if (c.data_files.empty()) throw ConfigError("data_files", "required when data = files");
    if (c.feature_dim == 0) throw ConfigError("feature_dim", "required when data = files");
    for (const auto& p : c.data_files) {
      if (!std::filesystem::exists(p)) throw ConfigError("data_files", "no such file: " + p.string());
    }
  } else {
    wrap("synthetic", [&] { c.synthetic.validate(); });
  }
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::stringstream ss(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(std::string_view(raw).substr(0, hash == std::string::npos ? raw.size() : hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, source + ":" + std::to_string(line) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("", source + ":" + std::to_string(line) + ": missing key");
    if (!out.emplace(key, value).second) {
      throw ConfigError(key, source + ":" + std::to_string(line) + ": repeated key");
    }
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

RunConfig resolve(Command command, const KeyValues& values) {
  RunConfig c;
  c.command = command;
  c.model.shared_hidden = {64};
  c.model.specific_hidden = {64};
  const auto& table = keys();
  for (const auto& [k, v] : values) {
    const auto it = table.find(k);
    if (it == table.end()) throw ConfigError(k, "unknown key");
    it->second.set(c, k, v);
  }
  check(c);
  return c;
}

std::string render(const RunConfig& config) {
  std::string out = "# command: " + command_name(config.command) + "\n";
  for (const auto& [k, key] : keys()) out += k + " = " + key.get(config) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [k, key] : keys()) out.push_back(k);
  return out;
}

}  // namespace cral::cli
