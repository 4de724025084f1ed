#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <numeric>
#include <fstream>
#include <ostream>

#include "cral/errors.hpp"
#include "cral/gradcheck.hpp"

namespace cral::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

class RunDir {
 public:
  RunDir(fs::path dir, bool wall_clock) : dir_(std::move(dir)), wall_clock_(wall_clock) {
    fs::create_directories(dir_);
    metrics_.open(dir_ / "metrics.jsonl", std::ios::trunc);
    if (!metrics_) throw DataError("cannot write " + (dir_ / "metrics.jsonl").string());
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream os(dir_ / name, std::ios::trunc);
    os << text;
    if (!os) throw DataError("cannot write " + (dir_ / name).string());
  }

  void line(const json& j) { metrics_ << j.dump() << '\n' << std::flush; }

  MetricsSink sink(const std::string& run = {}) {
    return [this, run](const MetricsRecord& r) {
      auto j = json::parse(to_json_line(r, wall_clock_));
      if (!run.empty()) j["run"] = run;
      line(j);
    };
  }

  void summary(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::string text;
    auto emit = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) text += (i ? "\t" : "") + cells[i];
      text += '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    write_text("summary.tsv", text);
  }

  fs::path checkpoint(const std::string& name) {
    const auto dir = dir_ / "checkpoints";
    fs::create_directories(dir);
    return dir / (name + ".bin");
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  bool wall_clock_;
  std::ofstream metrics_;
};

std::vector<DomainDataset> load_domains(const RunConfig& c) {
  if (c.source == DataSource::Synthetic) return generate_synthetic(c.synthetic);
  std::vector<DomainDataset> out;
  for (const auto& p : c.data_files) out.push_back(load_sparse_dataset(p, c.feature_dim));
  return out;
}

std::vector<std::string> domain_names(std::span<const DomainDataset> domains) {
  std::vector<std::string> out;
  for (const auto& d : domains) out.push_back(d.name);
  return out;
}

ModelConfig model_for(const RunConfig& c, std::size_t num_domains, std::size_t input_dim) {
  ModelConfig m = c.model;
  m.num_domains = num_domains;
  m.input_dim = input_dim;
  return m;
}

std::string slug(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
  }
  return s;
}

std::vector<std::string> accuracy_row(const std::optional<MdtcResult>& r, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(r ? fmt(r->per_domain[i]) : "");
  return out;
}

void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

// --- commands ----------------------------------------------------------------

int cmd_train(const RunConfig& c, RunDir& dir) {
  const auto domains = load_domains(c);
  const auto data = holdout_split(domains, c.train.seed);
  const auto res = train(fit_model_config(c.model, data), data, c.train, dir.sink());
  std::vector<std::vector<std::string>> rows;
  const auto names = domain_names(domains);
  for (std::size_t i = 0; i < names.size(); ++i) {
    rows.push_back({names[i], fmt(res.dev->per_domain[i]), fmt(res.test->per_domain[i])});
  }
  rows.push_back({"average", fmt(res.dev->average), fmt(res.test->average)});
  dir.summary({"domain", "dev_accuracy", "test_accuracy"}, rows);
  res.model.save(dir.checkpoint("model"));
  return 0;
}

int cmd_kfold(const RunConfig& c, RunDir& dir, std::ostream& err) {
  const auto domains = load_domains(c);
  if (domains.empty()) throw DataError("no domains");
  const auto mc = model_for(c, domains.size(), domains.front().feature_dim);
  const auto res = run_kfold(
      domains, c.folds, mc, c.train, [&](std::size_t r) { return dir.sink("fold" + std::to_string(r)); },
      [&](const std::string& w) { err << "warning: " << w << '\n'; });

  const auto names = domain_names(domains);
  std::vector<std::string> header{"fold", "best_epoch"};
  append(header, names);
  header.push_back("average");
  std::vector<std::vector<std::string>> rows;
  for (const auto& f : res.folds) {
    std::vector<std::string> row{std::to_string(f.fold), std::to_string(f.best_epoch)};
    append(row, accuracy_row(f.test, names.size()));
    row.push_back(fmt(f.test.average));
    rows.push_back(row);
    f.model.save(dir.checkpoint("fold" + std::to_string(f.fold)));
  }
  std::vector<std::string> mean{"mean", ""};
  append(mean, accuracy_row(res.mean, names.size()));
  mean.push_back(fmt(res.mean.average));
  rows.push_back(mean);
  dir.summary(header, rows);
  return 0;
}

int cmd_msuda(const RunConfig& c, RunDir& dir) {
  const auto domains = load_domains(c);
  if (domains.size() < 3) throw DataError("msuda needs at least 3 domains (2 sources + 1 target)");
  if (c.target_domain >= domains.size()) {
    throw ConfigError("target_domain", "index " + std::to_string(c.target_domain) + " out of range");
  }
  std::vector<DomainDataset> sources;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (i != c.target_domain) sources.push_back(domains[i]);
  }
  const auto& target = domains[c.target_domain];
  auto data = holdout_split(sources, c.train.seed);
  std::vector<std::size_t> all(target.labeled.size());
  std::iota(all.begin(), all.end(), 0);
  data.target = labeled_subset(target, all);
  const auto res = train(fit_model_config(c.model, data), data, c.train, dir.sink());

  const auto positives = static_cast<double>(std::count(target.labels.begin(), target.labels.end(), 1));
  const double majority = std::max(positives, target.labels.size() - positives) / static_cast<double>(target.labels.size());
  dir.summary({"target", "accuracy", "majority_baseline", "source_dev_average"},
              {{target.name, fmt(*res.target), fmt(majority), fmt(res.dev->average)}});
  res.model.save(dir.checkpoint("model"));
  return 0;
}

int cmd_ablate(const RunConfig& c, RunDir& dir) {
  const auto domains = load_domains(c);
  const auto data = holdout_split(domains, c.train.seed);
  const auto names = ablation_variant_names();
  const auto rows_out = run_ablation(fit_model_config(c.model, data), data, c.train,
                                     [&](std::size_t v) { return dir.sink(names[v]); });
  const auto dnames = domain_names(domains);
  std::vector<std::string> header{"variant", "best_epoch", "dev_average", "test_average"};
  append(header, dnames);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : rows_out) {
    std::vector<std::string> row{r.variant, std::to_string(r.result.best_epoch), fmt(r.result.dev->average),
                                 fmt(r.result.test->average)};
    append(row, accuracy_row(r.result.test, dnames.size()));
    rows.push_back(row);
    r.result.model.save(dir.checkpoint(slug(r.variant)));
  }
  dir.summary(header, rows);
  return 0;
}

int cmd_sweep(const RunConfig& c, RunDir& dir) {
  const auto domains = load_domains(c);
  const auto data = holdout_split(domains, c.train.seed);
  const auto points = run_sweep(fit_model_config(c.model, data), data, c.train, c.sweep_parameter, c.sweep_values,
                                [&](std::size_t g) { return dir.sink(c.sweep_parameter + "=" + fmt(c.sweep_values[g])); });
  std::vector<std::vector<std::string>> rows;
  for (std::size_t g = 0; g < points.size(); ++g) {
    const auto& p = points[g];
    rows.push_back({c.sweep_parameter, fmt(p.value), std::to_string(p.result.best_epoch), fmt(p.result.dev->average),
                    fmt(p.result.test->average)});
    p.result.model.save(dir.checkpoint(c.sweep_parameter + "_" + std::to_string(g)));
  }
  dir.summary({"parameter", "value", "best_epoch", "dev_average", "test_average"}, rows);
  return 0;
}

int cmd_gen_data(const RunConfig& c, RunDir& dir) {
  const auto domains = generate_synthetic(c.synthetic);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    const std::string file = d.name + ".txt";
    save_sparse_dataset(dir.dir() / file, d);
    const auto positives = std::count(d.labels.begin(), d.labels.end(), 1);
    dir.line({{"event", "gen-data"}, {"domain", i}, {"file", file}, {"labeled", d.labeled.size()},
              {"unlabeled", d.unlabeled.size()}, {"positives", positives}});
    rows.push_back({d.name, file, std::to_string(d.labeled.size()), std::to_string(d.unlabeled.size()),
                    std::to_string(positives)});
  }
  dir.summary({"domain", "file", "labeled", "unlabeled", "positives"}, rows);
  return 0;
}

int cmd_grad_check(const RunConfig& c, RunDir& dir, std::ostream& err) {
  GradCheckOptions options;
  options.seed = c.train.seed;
  options.weights = c.train.weights;
  const auto report = run_gradient_suite(options);
  std::vector<std::vector<std::string>> rows;
  for (const auto& t : report.terms) {
    dir.line({{"event", "grad-check"}, {"term", t.term}, {"checked", t.checked}, {"passed", t.passed},
              {"excluded", t.excluded}, {"max_rel_error", t.max_rel_error}});
    rows.push_back({t.term, std::to_string(t.checked), std::to_string(t.passed), std::to_string(t.excluded),
                    fmt(t.max_rel_error)});
  }
  dir.summary({"term", "checked", "passed", "excluded", "max_rel_error"}, rows);
  if (!report.ok()) {
    const std::string msg = "gradcheck: finite-difference agreement below the required fraction";
    dir.line({{"error", msg}, {"module", "gradcheck"}});
    err << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}

std::pair<std::string, std::string> classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return {"config", e.what()};
  if (dynamic_cast<const DataError*>(&e)) return {"data", e.what()};
  if (dynamic_cast<const SpecError*>(&e)) return {"spec", e.what()};
  if (dynamic_cast<const ContractError*>(&e)) return {"contract", e.what()};
  if (dynamic_cast<const NumericError*>(&e)) return {"numeric", e.what()};
  if (dynamic_cast<const DimensionError*>(&e)) return {"tensor", e.what()};
  return {"internal", e.what()};
}

}  // namespace

int run(const RunConfig& config, std::ostream& err) {
  RunDir dir(config.out_dir, config.train.log_wall_clock);
  dir.write_text("config.resolved", render(config));
  try {
    switch (config.command) {
      case Command::Train: return cmd_train(config, dir);
      case Command::Kfold: return cmd_kfold(config, dir, err);
      case Command::Msuda: return cmd_msuda(config, dir);
      case Command::Ablate: return cmd_ablate(config, dir);
      case Command::Sweep: return cmd_sweep(config, dir);
      case Command::GenData: return cmd_gen_data(config, dir);
      case Command::GradCheck: return cmd_grad_check(config, dir, err);
    }
  } catch (const std::exception& e) {
    const auto [module, what] = classify(e);
    dir.line({{"error", what}, {"module", module}});
    err << "error: " << module << ": " << what << '\n';
  }
  return 1;
}

int main_with_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Co-regularized adversarial multi-domain text classification"};
  app.name("cral");
  std::string command, config_path, out_dir;
  std::vector<std::string> overrides;
  app.add_option("command", command, "train | kfold | msuda | ablate | sweep | gen-data | grad-check")->required();
  app.add_option("--config", config_path, "flat key = value configuration file");
  app.add_option("--set", overrides, "key=value override, repeatable")->allow_extra_args(false);
  app.add_option("--out", out_dir, "output directory")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    KeyValues values;
    if (!config_path.empty()) values = read_key_values(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError(kv, "--set expects key=value");
      values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    auto config = resolve(parse_command(command), values);
    config.out_dir = out_dir;
    return run(config, err);
  } catch (const ConfigError& e) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
    metrics << json{{"error", e.what()}, {"module", "config"}, {"key", e.key()}}.dump() << '\n';
    err << "error: config: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cral::cli
