#include "cral/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <unordered_set>

#include "cral/errors.hpp"

namespace cral {

ModelConfig toy_model_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.num_domains = 2;
  c.shared_hidden = {5};
  c.specific_hidden = {5};
  c.shared_dim = 4;
  c.specific_dim = 3;
  return c;
}

MultiDomainBatch toy_batch(const ModelConfig& config, std::size_t per_domain, std::uint64_t seed) {
  Rng rng = make_rng(seed, "toy.batch");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, kNumClasses - 1);
  MultiDomainBatch batch;
  for (std::size_t i = 0; i < config.num_domains; ++i) {
    DomainBatch d;
    d.labeled = Tensor({per_domain, config.input_dim});
    d.unlabeled = Tensor({per_domain, config.input_dim});
    for (double& v : d.labeled.data()) v = normal(rng);
    for (double& v : d.unlabeled.data()) v = normal(rng);
    for (std::size_t k = 0; k < per_domain; ++k) d.labels.push_back(label(rng));
    batch.domains.push_back(std::move(d));
  }
  return batch;
}

bool GradCheckReport::ok() const {
  return std::all_of(terms.begin(), terms.end(), [&](const TermCheck& t) { return t.pass_rate() >= pass_fraction; });
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

namespace {

using Picker = std::function<std::optional<Var>(const ObjectiveVars&)>;

std::vector<std::pair<std::string, Picker>> term_pickers() {
  std::vector<std::pair<std::string, Picker>> out;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    const auto tag = ".b" + std::to_string(b + 1);
    out.emplace_back("classification" + tag, [b](const ObjectiveVars& v) { return v.classification[b]; });
    out.emplace_back("adversarial" + tag, [b](const ObjectiveVars& v) { return v.adversarial[b]; });
    out.emplace_back("entropy" + tag, [b](const ObjectiveVars& v) { return v.entropy[b]; });
    out.emplace_back("vat_unlabeled" + tag, [b](const ObjectiveVars& v) { return v.vat_unlabeled[b]; });
    out.emplace_back("vat_labeled" + tag, [b](const ObjectiveVars& v) { return v.vat_labeled[b]; });
  }
  out.emplace_back("disagreement", [](const ObjectiveVars& v) { return v.disagreement; });
  out.emplace_back("diversity", [](const ObjectiveVars& v) { return v.diversity; });
  out.emplace_back("main_loss", [](const ObjectiveVars& v) { return v.main_loss; });
  out.emplace_back("disc_loss", [](const ObjectiveVars& v) { return v.disc_loss; });
  return out;
}

class Harness {
 public:
  Harness(CralModel& model, const MultiDomainBatch& batch, const GradCheckOptions& options)
      : model_(model), batch_(batch), options_(options), pickers_(term_pickers()) {
    objective_.weights = options.weights;
    objective_.evaluate_zero_weighted = true;
  }

  struct Evaluation {
    std::vector<double> values;
    std::vector<std::uint8_t> kinks;
  };

  Evaluation evaluate() {
    Tape tape;
    ParameterBinding params(tape);
    auto [dropout, vat] = rngs();
    ObjectiveContext ctx{params, options_.mode, &dropout, &vat, &cache_};
    const auto obj = build_objective(ctx, model_, batch_, objective_);
    Evaluation e;
    for (const auto& [name, pick] : pickers_) {
      const auto v = pick(obj);
      if (!v) throw ContractError("gradient suite: term " + name + " was not built");
      e.values.push_back(v->value().item());
    }
    e.kinks = tape.kink_signature();
    return e;
  }

  /// d(term)/d(parameter entries), flattened in all_parameters() order.
  std::vector<double> analytic(std::size_t term) {
    const auto params = model_.all_parameters();
    std::unordered_set<const Tensor*> trainable;
    for (const auto& p : params) trainable.insert(p.value);
    Tape tape;
    ParameterBinding binding(tape, trainable);
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(binding.bind(*p.value));
    auto [dropout, vat] = rngs();
    ObjectiveContext ctx{binding, options_.mode, &dropout, &vat, &cache_};
    const auto obj = build_objective(ctx, model_, batch_, objective_);
    const auto grads = tape.backward(*pickers_[term].second(obj));
    std::vector<double> flat;
    for (auto v : vars) {
      const auto& g = grads[v];
      flat.insert(flat.end(), g.data().begin(), g.data().end());
    }
    return flat;
  }

  const std::string& name(std::size_t term) const { return pickers_[term].first; }
  std::size_t term_count() const { return pickers_.size(); }

 private:
  std::pair<Rng, Rng> rngs() const {
    return {make_rng(options_.seed, "gradcheck.dropout"), make_rng(options_.seed, "gradcheck.vat")};
  }

  CralModel& model_;
  const MultiDomainBatch& batch_;
  GradCheckOptions options_;
  ObjectiveOptions objective_;
  std::vector<std::pair<std::string, Picker>> pickers_;
  VatCache cache_;
};

}  // namespace

GradCheckReport run_gradient_suite(const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto model = CralModel::create(toy_model_config(), options.seed);
  // Zero biases put relu inputs exactly on the kink whenever a hidden row is
  // all zeros; move to a generic point.
  Rng jitter = make_rng(options.seed, "gradcheck.bias");
  std::uniform_real_distribution<double> offset(-0.1, 0.1);
  for (const auto& p : model.all_parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double& v : p.value->data()) v = offset(jitter);
    }
  }
  const auto batch = toy_batch(model.config(), options.batch_per_domain, options.seed);
  Harness h(model, batch, options);

  const auto base = h.evaluate();  // also fills the VAT cache
  std::vector<std::vector<double>> analytic;
  for (std::size_t t = 0; t < h.term_count(); ++t) analytic.push_back(h.analytic(t));

  GradCheckReport report;
  report.pass_fraction = options.pass_fraction;
  for (std::size_t t = 0; t < h.term_count(); ++t) report.terms.push_back({h.name(t)});

  std::size_t flat = 0;
  for (const auto& p : model.all_parameters()) {
    auto data = p.value->data();
    for (std::size_t k = 0; k < data.size(); ++k, ++flat) {
      const double saved = data[k];
      data[k] = saved + options.step;
      const auto plus = h.evaluate();
      data[k] = saved - options.step;
      const auto minus = h.evaluate();
      data[k] = saved;
      const bool smooth = plus.kinks == base.kinks && minus.kinks == base.kinks;
      for (std::size_t t = 0; t < h.term_count(); ++t) {
        auto& tc = report.terms[t];
        if (!smooth) {
          ++tc.excluded;
          continue;
        }
        const double numeric = (plus.values[t] - minus.values[t]) / (2.0 * options.step);
        const double err = relative_error(analytic[t][flat], numeric);
        ++tc.checked;
        if (err < options.tolerance) ++tc.passed;
        tc.max_rel_error = std::max(tc.max_rel_error, err);
      }
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cral
