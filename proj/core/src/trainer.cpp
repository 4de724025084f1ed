#include "cral/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cral/errors.hpp"

namespace cral {

void TrainConfig::validate() const {
  if (epochs == 0) throw SpecError("epochs must be at least 1");
  if (batch_size == 0) throw SpecError("batch_size must be at least 1");
  if (eval_every == 0) throw SpecError("eval_every must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw SpecError("learning_rate must be positive");
  weights.validate();
}

// --- serialization -------------------------------------------------------------

namespace {

nlohmann::json to_json(const MdtcResult& r) { return {{"per_domain", r.per_domain}, {"average", r.average}}; }

}  // namespace

std::string to_json_line(const MetricsRecord& record, bool include_wall_clock) {
  const auto& l = record.losses;
  nlohmann::json j;
  j["iteration"] = record.iteration;
  j["epoch"] = record.epoch;
  j["losses"] = {{"classification", l.classification},
                 {"adversarial", l.adversarial},
                 {"entropy", l.entropy},
                 {"vat_unlabeled", l.vat_unlabeled},
                 {"vat_labeled", l.vat_labeled},
                 {"disagreement", l.disagreement},
                 {"diversity", l.diversity},
                 {"main_loss", l.main_loss},
                 {"disc_loss", l.disc_loss}};
  if (record.discriminator_accuracy) j["discriminator_accuracy"] = *record.discriminator_accuracy;
  if (record.dev) j["dev"] = to_json(*record.dev);
  if (record.test) j["test"] = to_json(*record.test);
  if (record.target) j["target"] = *record.target;
  if (include_wall_clock) j["wall_clock"] = record.wall_clock;
  return j.dump();
}

// --- sampling --------------------------------------------------------------

BatchSampler::BatchSampler(std::span<const DomainDataset> domains, std::size_t batch_size, std::uint64_t seed)
    : domains_(domains), batch_size_(batch_size) {
  if (batch_size == 0) throw SpecError("batch_size must be at least 1");
  if (domains.empty()) throw DataError("no training domains");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    if (d.labeled.empty()) throw DataError("domain '" + d.name + "' has no labeled samples");
    if (d.unlabeled.empty()) throw DataError("domain '" + d.name + "' has no unlabeled samples");
    if (d.feature_dim != domains[0].feature_dim) throw DataError("domains disagree on feature_dim");
    auto make = [&](std::size_t n, const std::string& tag) {
      Stream s;
      s.order.resize(n);
      std::iota(s.order.begin(), s.order.end(), 0);
      s.cursor = n;
      s.rng = make_rng(seed, tag + std::to_string(i));
      return s;
    };
    labeled_.push_back(make(d.labeled.size(), "sampler.labeled"));
    unlabeled_.push_back(make(d.unlabeled.size(), "sampler.unlabeled"));
  }
}

std::vector<std::size_t> BatchSampler::take(Stream& s) {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  while (out.size() < batch_size_) {
    if (s.cursor == s.order.size()) {
      std::shuffle(s.order.begin(), s.order.end(), s.rng);
      s.cursor = 0;
    }
    out.push_back(s.order[s.cursor++]);
  }
  return out;
}

MultiDomainBatch BatchSampler::next() {
  MultiDomainBatch batch;
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    const auto& d = domains_[i];
    const auto li = take(labeled_[i]);
    const auto ui = take(unlabeled_[i]);
    DomainBatch db;
    db.labeled = to_dense(d.labeled, li, d.feature_dim);
    for (auto k : li) db.labels.push_back(d.labels[k]);
    db.unlabeled = to_dense(d.unlabeled, ui, d.feature_dim);
    batch.domains.push_back(std::move(db));
  }
  return batch;
}

// --- optimization ------------------------------------------------------------

OptimizerState make_optimizer(const TrainConfig& config) {
  OptimizerState s;
  s.discriminator.config.learning_rate = config.learning_rate;
  s.main.config.learning_rate = config.learning_rate;
  return s;
}

namespace {

std::unordered_set<const Tensor*> pointer_set(const std::vector<NamedParameter>& params) {
  std::unordered_set<const Tensor*> out;
  for (const auto& p : params) out.insert(p.value);
  return out;
}

std::vector<Var> bind_all(ParameterBinding& binding, const std::vector<NamedParameter>& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(binding.bind(*p.value));
  return out;
}

void check_finite(double v, const std::string& term) {
  if (!std::isfinite(v)) throw NumericError("non-finite loss term " + term);
}

void check_breakdown(const LossBreakdown& l) {
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    const auto tag = ".b" + std::to_string(b + 1);
    check_finite(l.classification[b], "classification" + tag);
    check_finite(l.adversarial[b], "adversarial" + tag);
    check_finite(l.entropy[b], "entropy" + tag);
    check_finite(l.vat_unlabeled[b], "vat_unlabeled" + tag);
    check_finite(l.vat_labeled[b], "vat_labeled" + tag);
  }
  check_finite(l.disagreement, "disagreement");
  check_finite(l.diversity, "diversity");
  check_finite(l.main_loss, "main_loss");
}

void descend(Tape& tape, Var loss, const std::vector<Var>& vars, AdamState& state,
             const std::vector<NamedParameter>& params) {
  const auto g = tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (auto v : vars) grads.push_back(g[v]);
  adam_step(state, params, grads);
}

}  // namespace

LossBreakdown train_step(CralModel& model, const MultiDomainBatch& batch, const TrainConfig& config,
                         OptimizerState& opt, Rng& dropout_rng, Rng& vat_rng) {
  const ObjectiveOptions options{config.weights, config.switches, config.sign, false};
  const auto disc_params = model.parameters(ParamGroup::Discriminator);
  const auto main_params = model.parameters(ParamGroup::Main);

  double disc_loss = 0.0;
  {
    Tape tape;
    ParameterBinding binding(tape, pointer_set(disc_params));
    const auto vars = bind_all(binding, disc_params);
    ObjectiveContext ctx{binding, Mode::Train, &dropout_rng, &vat_rng, nullptr};
    const auto obj = build_objective(ctx, model, batch, options, false, true);
    if (obj.disc_loss) {
      disc_loss = obj.disc_loss->value().item();
      check_finite(disc_loss, "disc_loss");
      const Var loss = config.sign == AdversarialSign::Standard ? *obj.disc_loss : -*obj.disc_loss;
      descend(tape, loss, vars, opt.discriminator, disc_params);
    }
  }

  Tape tape;
  ParameterBinding binding(tape, pointer_set(main_params));
  const auto vars = bind_all(binding, main_params);
  ObjectiveContext ctx{binding, Mode::Train, &dropout_rng, &vat_rng, nullptr};
  const auto obj = build_objective(ctx, model, batch, options, true, false);
  LossBreakdown out = obj.values();
  out.disc_loss = disc_loss;
  check_breakdown(out);
  descend(tape, *obj.main_loss, vars, opt.main, main_params);
  return out;
}

double discriminator_step(CralModel& model, const MultiDomainBatch& batch, AdamState& state, Rng& dropout_rng) {
  batch.validate(model.config().input_dim);
  const auto params = model.parameters(ParamGroup::Discriminator);
  Tape tape;
  ParameterBinding binding(tape, pointer_set(params));
  const auto vars = bind_all(binding, params);
  ObjectiveContext ctx{binding, Mode::Train, &dropout_rng, nullptr, nullptr};
  ForwardRequest req;
  req.class_labeled = false;
  req.class_unlabeled = false;
  const auto first = forward_branch(ctx, model, 0, batch, req);
  const auto second = forward_branch(ctx, model, 1, batch, req);
  const Var loss = adversarial_term(first) + adversarial_term(second);
  const double value = loss.value().item();
  check_finite(value, "adversarial");
  descend(tape, loss, vars, state, params);
  return value;
}

// --- evaluation -------------------------------------------------------------

namespace {

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth) {
  std::size_t correct = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) correct += predicted[k] == truth[k];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

}  // namespace

MdtcResult evaluate_mdtc(const CralModel& model, std::span<const LabeledSet> test_sets) {
  if (test_sets.size() != model.num_domains()) {
    throw ContractError("expected " + std::to_string(model.num_domains()) + " test sets, got " +
                        std::to_string(test_sets.size()));
  }
  MdtcResult r;
  for (std::size_t i = 0; i < test_sets.size(); ++i) {
    const auto& set = test_sets[i];
    if (set.size() == 0) throw DataError("empty test set for domain " + std::to_string(i));
    const Tensor x = to_dense(set.samples, model.config().input_dim);
    r.per_domain.push_back(accuracy(predict_labels(model, i, x), set.labels));
  }
  r.average = std::accumulate(r.per_domain.begin(), r.per_domain.end(), 0.0) / static_cast<double>(r.per_domain.size());
  return r;
}

double evaluate_msuda(const CralModel& model, const LabeledSet& target) {
  if (target.size() == 0) throw DataError("empty target set");
  const Tensor x = to_dense(target.samples, model.config().input_dim);
  return accuracy(predict_labels(model, std::nullopt, x), target.labels);
}

double evaluate_discriminator(const CralModel& model, std::span<const std::vector<SparseVector>> inputs) {
  if (inputs.size() != model.num_domains()) throw ContractError("one input set per domain is required");
  std::size_t correct = 0, total = 0;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].empty()) continue;
      const Tensor x = to_dense(inputs[i], model.config().input_dim);
      for (auto p : argmax_rows(predict_domain(model, b, x))) correct += p == i;
      total += inputs[i].size();
    }
  }
  if (total == 0) throw DataError("no held-out samples for the discriminator");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// --- runs -------------------------------------------------------------------

ModelConfig fit_model_config(ModelConfig base, const TrainData& data) {
  if (data.train.empty()) throw DataError("no training domains");
  base.input_dim = data.train.front().feature_dim;
  base.num_domains = data.train.size();
  return base;
}

TrainResult train(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                  const MetricsSink& sink) {
  config.validate();
  if (data.train.size() != model_config.num_domains) throw ContractError("domain count does not match the model");
  for (const auto& d : data.train) {
    d.validate();
    if (d.feature_dim != model_config.input_dim) throw ContractError("feature_dim does not match the model input");
  }
  const auto clock_start = std::chrono::steady_clock::now();

  TrainResult result;
  result.model = CralModel::create(model_config, derive_seed(config.seed, "model"));
  CralModel& model = result.model;
  BatchSampler sampler(data.train, config.batch_size, derive_seed(config.seed, "sampler"));
  Rng dropout_rng = make_rng(config.seed, "dropout");
  Rng vat_rng = make_rng(config.seed, "vat");
  auto opt = make_optimizer(config);

  std::vector<std::vector<SparseVector>> holdout = data.domain_holdout;
  if (holdout.empty()) {
    for (const auto* sets : {&data.dev, &data.test}) {
      if (!sets->empty()) {
        for (const auto& s : *sets) holdout.push_back(s.samples);
        break;
      }
    }
  }

  std::size_t largest = 0;
  for (const auto& d : data.train) largest = std::max(largest, d.labeled.size());
  const std::size_t steps_per_epoch = (largest + config.batch_size - 1) / config.batch_size;

  std::optional<CralModel> best;
  std::size_t iteration = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      MetricsRecord rec;
      rec.iteration = ++iteration;
      rec.epoch = epoch;
      rec.losses = train_step(model, sampler.next(), config, opt, dropout_rng, vat_rng);

      const bool evaluate =
          step + 1 == steps_per_epoch && (epoch % config.eval_every == 0 || epoch == config.epochs);
      if (evaluate) {
        if (!holdout.empty()) rec.discriminator_accuracy = evaluate_discriminator(model, holdout);
        if (!data.dev.empty()) rec.dev = evaluate_mdtc(model, data.dev);
        if (!data.test.empty()) rec.test = evaluate_mdtc(model, data.test);
        if (data.target) rec.target = evaluate_msuda(model, *data.target);
        const bool improved = !rec.dev || !result.dev || rec.dev->average > result.dev->average;
        if (improved) {
          result.best_epoch = epoch;
          result.dev = rec.dev;
          result.test = rec.test;
          result.target = rec.target;
          result.discriminator_accuracy = rec.discriminator_accuracy;
          if (rec.dev) best = model;
        }
      }
      rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
      if (sink) sink(rec);
    }
  }
  result.iterations = iteration;
  if (best) model = std::move(*best);
  return result;
}

TrainData holdout_split(std::span<const DomainDataset> domains, std::uint64_t seed) {
  TrainData data;
  const std::array<double, 3> fractions{0.6, 0.2, 0.2};
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    const auto parts = stratified_split(d.labels, fractions, derive_seed(seed, "holdout.domain" + std::to_string(i)));
    DomainDataset tr = d;
    const auto train_part = labeled_subset(d, parts[0]);
    tr.labeled = train_part.samples;
    tr.labels = train_part.labels;
    data.train.push_back(std::move(tr));
    data.dev.push_back(labeled_subset(d, parts[1]));
    data.test.push_back(labeled_subset(d, parts[2]));
  }
  return data;
}

KfoldResult run_kfold(std::span<const DomainDataset> domains, std::size_t k, const ModelConfig& model_config,
                      const TrainConfig& config, const std::function<MetricsSink(std::size_t)>& sink_for,
                      const std::function<void(const std::string&)>& warn) {
  if (domains.empty()) throw DataError("no domains for k-fold");
  std::vector<std::vector<std::vector<std::size_t>>> folds;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    folds.push_back(stratified_folds(domains[i].labels, k, derive_seed(config.seed, "kfold.domain" + std::to_string(i))));
  }

  KfoldResult out;
  out.mean.per_domain.assign(domains.size(), 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t dev_fold = (r + 1) % k;
    TrainData data;
    std::size_t smallest = SIZE_MAX;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      std::vector<LabeledSet> parts;
      for (std::size_t f = 0; f < k; ++f) {
        if (f != r && f != dev_fold) parts.push_back(labeled_subset(domains[i], folds[i][f]));
      }
      const auto merged = merge(parts);
      DomainDataset tr;
      tr.name = domains[i].name;
      tr.feature_dim = domains[i].feature_dim;
      tr.labeled = merged.samples;
      tr.labels = merged.labels;
      tr.unlabeled = domains[i].unlabeled;
      smallest = std::min(smallest, tr.labeled.size());
      data.train.push_back(std::move(tr));
      data.dev.push_back(labeled_subset(domains[i], folds[i][dev_fold]));
      data.test.push_back(labeled_subset(domains[i], folds[i][r]));
    }

    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, "fold" + std::to_string(r));
    if (smallest < cfg.batch_size) {
      if (warn) {
        warn("fold " + std::to_string(r) + ": training part of " + std::to_string(smallest) +
             " samples is smaller than batch size " + std::to_string(cfg.batch_size) + "; batch shrinks");
      }
      cfg.batch_size = smallest;
    }
    auto res = train(model_config, data, cfg, sink_for ? sink_for(r) : MetricsSink{});
    FoldResult fr{r, std::move(res.model), res.best_epoch, *res.dev, *res.test};
    for (std::size_t i = 0; i < domains.size(); ++i) out.mean.per_domain[i] += fr.test.per_domain[i] / static_cast<double>(k);
    out.folds.push_back(std::move(fr));
  }
  out.mean.average = std::accumulate(out.mean.per_domain.begin(), out.mean.per_domain.end(), 0.0) /
                     static_cast<double>(out.mean.per_domain.size());
  return out;
}

std::vector<std::string> ablation_variant_names() { return {"full", "w/o L_d", "w/o L_div", "w/o L_uvt", "w/o L_lvt"}; }

TrainConfig ablation_variant(const TrainConfig& base, std::size_t variant) {
  TrainConfig cfg = base;
  switch (variant) {
    case 0: break;
    case 1: cfg.switches.disagreement = false; break;
    case 2: cfg.switches.diversity = false; break;
    case 3: cfg.switches.vat_unlabeled = false; break;
    case 4: cfg.switches.vat_labeled = false; break;
    default: throw ContractError("ablation variant index out of range");
  }
  return cfg;
}

std::vector<AblationRow> run_ablation(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                                      const std::function<MetricsSink(std::size_t)>& sink_for) {
  const auto names = ablation_variant_names();
  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < kAblationVariants; ++v) {
    rows.push_back({names[v], train(model_config, data, ablation_variant(config, v), sink_for ? sink_for(v) : MetricsSink{})});
  }
  return rows;
}

void set_weight(LossWeights& w, const std::string& name, double value) {
  if (name == "gamma") w.gamma = value;
  else if (name == "lambda_adv") w.lambda_adv = value;
  else if (name == "lambda_d") w.lambda_d = value;
  else if (name == "lambda_div") w.lambda_div = value;
  else if (name == "lambda_uvt") w.lambda_uvt = value;
  else if (name == "lambda_lvt") w.lambda_lvt = value;
  else if (name == "vat_epsilon") w.vat_epsilon = value;
  else if (name == "vat_xi") w.vat_xi = value;
  else throw ConfigError(name, "not a loss weight");
}

std::vector<SweepPoint> run_sweep(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                                  const std::string& parameter, std::span<const double> grid,
                                  const std::function<MetricsSink(std::size_t)>& sink_for) {
  static const std::array<const char*, 4> kSweepable{"lambda_d", "lambda_div", "lambda_uvt", "lambda_lvt"};
  if (std::find(kSweepable.begin(), kSweepable.end(), parameter) == kSweepable.end()) {
    throw ConfigError("sweep_parameter", "cannot sweep '" + parameter + "'");
  }
  std::vector<SweepPoint> out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    TrainConfig cfg = config;
    set_weight(cfg.weights, parameter, grid[g]);
    out.push_back({grid[g], train(model_config, data, cfg, sink_for ? sink_for(g) : MetricsSink{})});
  }
  return out;
}

}  // namespace cral
