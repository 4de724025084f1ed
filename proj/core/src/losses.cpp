#include "cral/losses.hpp"

#include <cmath>

#include "cral/errors.hpp"

namespace cral {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"gamma", gamma},           {"lambda_adv", lambda_adv}, {"lambda_d", lambda_d},
      {"lambda_div", lambda_div}, {"lambda_uvt", lambda_uvt}, {"lambda_lvt", lambda_lvt},
      {"vat_epsilon", vat_epsilon}, {"vat_xi", vat_xi}};
  for (const auto& [name, v] : all) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw SpecError(std::string(name) + " must be finite and non-negative");
  }
  if (!(gamma > 0.0)) throw SpecError("gamma must be positive");
}

void MultiDomainBatch::validate(std::size_t input_dim) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    const std::string where = "domain " + std::to_string(i);
    if (d.labeled.empty() != d.labels.empty() || (!d.labeled.empty() && d.labeled.rows() != d.labels.size())) {
      throw ContractError(where + ": label count does not match labeled rows");
    }
    for (auto y : d.labels) {
      if (y >= kNumClasses) throw ContractError(where + ": label " + std::to_string(y) + " out of range");
    }
    for (const Tensor* t : {&d.labeled, &d.unlabeled}) {
      if (!t->empty() && (t->rank() != 2 || t->cols() != input_dim)) {
        throw DimensionError(where + ": batch shape " + to_string(t->shape()) + " does not match input width " +
                             std::to_string(input_dim));
      }
    }
  }
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) throw ContractError("one_hot: label out of range");
    t.at(r, labels[r]) = 1.0;
  }
  return t;
}

// --- pure terms ---------------------------------------------------------------

namespace {

Var safe_log(Var p) { return log(clamp_min(p, kProbabilityFloor)); }

void check_probability_rows(const Tensor& t, const char* what) {
  constexpr double tol = 1e-6;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (double v : t.row(r)) {
      if (v < -tol) throw ContractError(std::string(what) + ": negative probability in row " + std::to_string(r));
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

Var cross_entropy(Var probs, const Tensor& one_hot_labels) {
  Var y = probs.tape()->constant(one_hot_labels);
  return -mean(sum(y * safe_log(probs), 1));
}

Var mean_entropy(Var probs) { return -mean(sum(probs * safe_log(probs), 1)); }

Var kl_divergence(Var p, Var q) {
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: " + to_string(p.shape()) + " vs " + to_string(q.shape()));
  }
  check_probability_rows(p.value(), "kl_divergence(p)");
  check_probability_rows(q.value(), "kl_divergence(q)");
  // Rounding can leave a row a few ulps below zero when p ≈ q; lift it with a
  // constant so the gradient stays that of the smooth expression.
  Var rows = sum(p * (safe_log(p) - safe_log(q)), 1);
  Tensor lift(rows.shape());
  for (std::size_t r = 0; r < lift.size(); ++r) lift[r] = std::max(0.0, -rows.value()[r]);
  return mean(rows + p.tape()->constant(std::move(lift)));
}

Var mean_l1_distance(Var p, Var q) { return mean(l1_norm(p - q, 1)); }

double kl_divergence(const Tensor& p, const Tensor& q) {
  Tape tape;
  return kl_divergence(tape.constant(p), tape.constant(q)).value().item();
}

// --- forward cache -------------------------------------------------------------

namespace {

bool needs_masks(const ObjectiveContext& ctx, const CralModel& model) {
  return ctx.mode == Mode::Train && model.config().dropout > 0.0;
}

const SplitForward& require_split(const std::optional<SplitForward>& s, std::size_t domain, const char* split,
                                  const char* term) {
  if (!s) {
    throw ContractError(std::string(term) + ": domain " + std::to_string(domain) + " has an empty " + split +
                        " batch");
  }
  return *s;
}

}  // namespace

BranchForward forward_branch(ObjectiveContext& ctx, const CralModel& model, std::size_t b,
                             const MultiDomainBatch& batch, const ForwardRequest& request) {
  if (batch.num_domains() != model.num_domains()) {
    throw ContractError("batch covers " + std::to_string(batch.num_domains()) + " domains, model has " +
                        std::to_string(model.num_domains()));
  }
  const bool masked = needs_masks(ctx, model);
  if (masked && !ctx.dropout_rng) throw ContractError("train-mode objective with dropout needs a dropout rng");

  const std::size_t m = batch.num_domains();
  BranchForward out{b, std::vector<std::optional<SplitForward>>(m), std::vector<std::optional<SplitForward>>(m)};

  auto run = [&](std::size_t domain, const Tensor& x, bool class_path) -> std::optional<SplitForward> {
    if (x.empty()) return std::nullopt;
    SplitForward sf;
    sf.input = ctx.tape().reference(x, false);
    std::optional<MaskSource> recorder;
    if (masked) recorder.emplace(*ctx.dropout_rng, &sf.class_masks);
    ForwardContext fc{ctx.params, ctx.mode, recorder ? &*recorder : nullptr};
    sf.shared = shared_features(fc, model, b, sf.input);
    if (class_path) {
      Var specific = specific_features(fc, model, b, domain, sf.input);
      sf.class_probs = class_probabilities(fc, model, b, sf.shared, specific);
    }
    if (request.domain) {
      std::optional<MaskSource> fresh;
      if (masked) fresh.emplace(*ctx.dropout_rng);
      ForwardContext fd{ctx.params, ctx.mode, fresh ? &*fresh : nullptr};
      sf.domain_probs = domain_probabilities(fd, model, b, sf.shared);
    }
    return sf;
  };

  for (std::size_t i = 0; i < m; ++i) {
    const auto& d = batch.domains[i];
    if (request.labeled) out.labeled[i] = run(i, d.labeled, request.class_labeled);
    if (request.unlabeled) out.unlabeled[i] = run(i, d.unlabeled, request.class_unlabeled);
  }
  return out;
}

// --- terms -------------------------------------------------------------------

Var classification_term(const BranchForward& fwd, const MultiDomainBatch& batch) {
  std::optional<Var> total;
  for (std::size_t i = 0; i < fwd.labeled.size(); ++i) {
    const auto& s = require_split(fwd.labeled[i], i, "labeled", "classification_loss");
    if (!s.class_probs) throw ContractError("classification_loss: labeled class path was not evaluated");
    Var term = cross_entropy(*s.class_probs, one_hot(batch.domains[i].labels, kNumClasses));
    total = total ? *total + term : term;
  }
  if (!total) throw ContractError("classification_loss: no domains");
  return *total;
}

Var adversarial_term(const BranchForward& fwd) {
  std::optional<Var> total;
  const std::size_t m = fwd.labeled.size();
  for (std::size_t i = 0; i < m; ++i) {
    std::optional<Var> nll;
    std::size_t count = 0;
    for (const auto* split : {&fwd.labeled[i], &fwd.unlabeled[i]}) {
      if (!*split) continue;
      const auto& s = **split;
      if (!s.domain_probs) throw ContractError("adversarial_loss: discriminator path was not evaluated");
      const std::size_t n = s.domain_probs->value().rows();
      std::vector<std::size_t> target(n, i);
      Var mask = s.domain_probs->tape()->constant(one_hot(target, m));
      Var part = -sum(mask * log(clamp_min(*s.domain_probs, kProbabilityFloor)));
      nll = nll ? *nll + part : part;
      count += n;
    }
    if (!nll) throw ContractError("adversarial_loss: domain " + std::to_string(i) + " has no samples");
    Var term = scale(*nll, 1.0 / static_cast<double>(count));
    total = total ? *total + term : term;
  }
  if (!total) throw ContractError("adversarial_loss: no domains");
  return *total;
}

Var entropy_term(const BranchForward& fwd) {
  std::optional<Var> total;
  for (std::size_t i = 0; i < fwd.unlabeled.size(); ++i) {
    const auto& s = require_split(fwd.unlabeled[i], i, "unlabeled", "entropy_loss");
    if (!s.class_probs) throw ContractError("entropy_loss: unlabeled class path was not evaluated");
    Var term = mean_entropy(*s.class_probs);
    total = total ? *total + term : term;
  }
  if (!total) throw ContractError("entropy_loss: no domains");
  return *total;
}

Var disagreement_term(const BranchForward& first, const BranchForward& second) {
  std::optional<Var> total;
  for (std::size_t i = 0; i < first.unlabeled.size(); ++i) {
    const auto& a = require_split(first.unlabeled[i], i, "unlabeled", "disagreement_loss");
    const auto& b = require_split(second.unlabeled[i], i, "unlabeled", "disagreement_loss");
    if (!a.class_probs || !b.class_probs) throw ContractError("disagreement_loss: class path was not evaluated");
    Var term = mean_l1_distance(*a.class_probs, *b.class_probs);
    total = total ? *total + term : term;
  }
  if (!total) throw ContractError("disagreement_loss: no domains");
  return *total;
}

Var diversity_term(const BranchForward& first, const BranchForward& second, double gamma) {
  std::optional<Var> gap;
  const std::size_t m = first.labeled.size();
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = require_split(first.labeled[i], i, "labeled", "diversity_loss");
    const auto& b = require_split(second.labeled[i], i, "labeled", "diversity_loss");
    Var centroid_gap = mean(a.shared - b.shared, 0);
    gap = gap ? *gap + centroid_gap : centroid_gap;
  }
  if (!gap) throw ContractError("diversity_loss: no domains");
  return min_scalar(l2_norm_sq(scale(*gap, 1.0 / static_cast<double>(m))), gamma);
}

Var vat_term(ObjectiveContext& ctx, const CralModel& model, const BranchForward& fwd, bool labeled,
             const LossWeights& weights) {
  const auto& splits = labeled ? fwd.labeled : fwd.unlabeled;
  const char* term = labeled ? "vat_loss(labeled)" : "vat_loss(unlabeled)";
  const bool masked = needs_masks(ctx, model);
  std::optional<Var> total;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& s = require_split(splits[i], i, labeled ? "labeled" : "unlabeled", term);
    if (!s.class_probs) throw ContractError(std::string(term) + ": class path was not evaluated");
    const Tensor& x = s.input.value();

    const auto key = std::make_tuple(fwd.branch, i, labeled);
    Var reference;
    Tensor perturbation;
    if (ctx.vat_cache && ctx.vat_cache->contains(key)) {
      const auto& entry = ctx.vat_cache->at(key);
      reference = ctx.tape().constant(entry.reference);
      perturbation = entry.perturbation;
    } else {
      if (!ctx.vat_rng) throw ContractError(std::string(term) + ": needs a VAT rng");
      reference = stop_gradient(*s.class_probs);
      perturbation = vat_perturbation(model, fwd.branch, i, x, weights.vat_epsilon, weights.vat_xi, *ctx.vat_rng,
                                      ctx.mode, &s.class_masks);
      if (ctx.vat_cache) ctx.vat_cache->emplace(key, VatEntry{perturbation, reference.value()});
    }

    Tensor shifted = x;
    for (std::size_t k = 0; k < shifted.size(); ++k) shifted[k] += perturbation[k];
    auto replay = MaskSource::replay(s.class_masks);
    ForwardContext fc{ctx.params, ctx.mode, masked ? &replay : nullptr};
    Var q = class_probabilities_from_input(fc, model, fwd.branch, i, ctx.tape().constant(std::move(shifted)));
    Var kl = kl_divergence(reference, q);
    total = total ? *total + kl : kl;
  }
  if (!total) throw ContractError(std::string(term) + ": no domains");
  return *total;
}

Tensor vat_perturbation(const CralModel& model, std::size_t b, std::optional<std::size_t> domain, const Tensor& x,
                        double epsilon, double xi, Rng& rng, Mode mode, const std::vector<Tensor>* masks) {
  if (!(epsilon >= 0.0)) throw ContractError("vat_perturbation: epsilon must be non-negative");
  if (epsilon == 0.0) return Tensor(x.shape());
  const bool masked = mode == Mode::Train && model.config().dropout > 0.0;
  if (masked && !masks) throw ContractError("vat_perturbation: train mode needs the recorded dropout masks");

  static const std::vector<Tensor> kNoMasks;
  auto clean_masks = MaskSource::replay(masked ? *masks : kNoMasks);
  const Tensor reference = predict_class(model, b, domain, x, mode, masked ? &clean_masks : nullptr);

  // Random unit direction per row.
  Tensor d(x.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : d.data()) v = normal(rng);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    auto row = d.row(r);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }

  Tape tape;
  ParameterBinding params(tape);
  auto replay = MaskSource::replay(masked ? *masks : kNoMasks);
  ForwardContext fc{params, mode, masked ? &replay : nullptr};
  Var direction = tape.variable(d, true);
  Var probe = add(tape.constant(x), scale(direction, xi));
  Var q = class_probabilities_from_input(fc, model, b, domain, probe);
  Var kl = kl_divergence(tape.constant(reference), q);
  Tensor g = tape.backward(kl)[direction];

  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto row = g.row(r);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-20) {
      for (double& v : row) v = 0.0;
    } else {
      for (double& v : row) v *= epsilon / norm;
    }
  }
  return g;
}

// --- objective ---------------------------------------------------------------

double LossBreakdown::recombine(const LossWeights& w, AdversarialSign sign) const {
  const double adv = sign == AdversarialSign::Standard ? -w.lambda_adv : w.lambda_adv;
  double total = 0.0;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    total += classification[b] + adv * adversarial[b] + w.lambda_uvt * (entropy[b] + vat_unlabeled[b]) +
             w.lambda_lvt * vat_labeled[b];
  }
  return total + w.lambda_d * disagreement - w.lambda_div * diversity;
}

LossBreakdown ObjectiveVars::values() const {
  auto val = [](const std::optional<Var>& v) { return v ? v->value().item() : 0.0; };
  LossBreakdown out;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    out.classification[b] = val(classification[b]);
    out.adversarial[b] = val(adversarial[b]);
    out.entropy[b] = val(entropy[b]);
    out.vat_unlabeled[b] = val(vat_unlabeled[b]);
    out.vat_labeled[b] = val(vat_labeled[b]);
  }
  out.disagreement = val(disagreement);
  out.diversity = val(diversity);
  out.main_loss = val(main_loss);
  out.disc_loss = val(disc_loss);
  return out;
}

ObjectiveVars build_objective(ObjectiveContext& ctx, const CralModel& model, const MultiDomainBatch& batch,
                              const ObjectiveOptions& options, bool main_terms, bool disc_terms) {
  const auto& w = options.weights;
  const auto& sw = options.switches;
  w.validate();
  batch.validate(model.config().input_dim);

  auto active = [&](double weight, bool enabled) {
    return enabled && (weight != 0.0 || options.evaluate_zero_weighted);
  };
  const bool adv = (main_terms || disc_terms) && active(w.lambda_adv, true);
  const bool ent = main_terms && active(w.lambda_uvt, true);
  const bool uvt = main_terms && active(w.lambda_uvt, sw.vat_unlabeled);
  const bool lvt = main_terms && active(w.lambda_lvt, sw.vat_labeled);
  const bool dis = main_terms && active(w.lambda_d, sw.disagreement);
  const bool div = main_terms && active(w.lambda_div, sw.diversity);

  ForwardRequest req;
  req.class_labeled = main_terms;
  req.class_unlabeled = ent || uvt || dis;
  req.domain = adv;
  req.labeled = main_terms || adv;
  req.unlabeled = adv || req.class_unlabeled;

  ObjectiveVars out;
  if (!req.labeled && !req.unlabeled) return out;

  std::array<BranchForward, kNumBranches> fwd;
  for (std::size_t b = 0; b < kNumBranches; ++b) fwd[b] = forward_branch(ctx, model, b, batch, req);

  for (std::size_t b = 0; b < kNumBranches; ++b) {
    if (main_terms) out.classification[b] = classification_term(fwd[b], batch);
    if (adv) out.adversarial[b] = adversarial_term(fwd[b]);
    if (ent) out.entropy[b] = entropy_term(fwd[b]);
    if (uvt) out.vat_unlabeled[b] = vat_term(ctx, model, fwd[b], false, w);
    if (lvt) out.vat_labeled[b] = vat_term(ctx, model, fwd[b], true, w);
  }
  if (dis) out.disagreement = disagreement_term(fwd[0], fwd[1]);
  if (div) out.diversity = diversity_term(fwd[0], fwd[1], w.gamma);

  if (adv && disc_terms) out.disc_loss = scale(*out.adversarial[0] + *out.adversarial[1], w.lambda_adv);

  if (main_terms) {
    const double adv_coef = options.sign == AdversarialSign::Standard ? -w.lambda_adv : w.lambda_adv;
    Var total = *out.classification[0] + *out.classification[1];
    for (std::size_t b = 0; b < kNumBranches; ++b) {
      if (out.adversarial[b]) total = total + scale(*out.adversarial[b], adv_coef);
      if (out.entropy[b]) total = total + scale(*out.entropy[b], w.lambda_uvt);
      if (out.vat_unlabeled[b]) total = total + scale(*out.vat_unlabeled[b], w.lambda_uvt);
      if (out.vat_labeled[b]) total = total + scale(*out.vat_labeled[b], w.lambda_lvt);
    }
    if (out.disagreement) total = total + scale(*out.disagreement, w.lambda_d);
    if (out.diversity) total = total + scale(*out.diversity, -w.lambda_div);
    out.main_loss = total;
  }
  return out;
}

// --- value-level wrappers ----------------------------------------------------

namespace {

template <typename F>
double evaluate_on_fresh_tape(F&& body) {
  Tape tape;
  ParameterBinding params(tape);
  ObjectiveContext ctx{params, Mode::Eval};
  return body(ctx).value().item();
}

ForwardRequest request(bool labeled, bool unlabeled, bool class_path, bool domain) {
  ForwardRequest r;
  r.labeled = labeled;
  r.unlabeled = unlabeled;
  r.class_labeled = class_path && labeled;
  r.class_unlabeled = class_path && unlabeled;
  r.domain = domain;
  return r;
}

}  // namespace

double classification_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch) {
  batch.validate(model.config().input_dim);
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    return classification_term(forward_branch(ctx, model, b, batch, request(true, false, true, false)), batch);
  });
}

double adversarial_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch) {
  batch.validate(model.config().input_dim);
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    return adversarial_term(forward_branch(ctx, model, b, batch, request(true, true, false, true)));
  });
}

double disagreement_loss(const CralModel& model, const MultiDomainBatch& batch) {
  batch.validate(model.config().input_dim);
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    const auto req = request(false, true, true, false);
    return disagreement_term(forward_branch(ctx, model, 0, batch, req), forward_branch(ctx, model, 1, batch, req));
  });
}

double diversity_loss(const CralModel& model, const MultiDomainBatch& batch, double gamma) {
  batch.validate(model.config().input_dim);
  if (!(gamma > 0.0)) throw SpecError("gamma must be positive");
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    const auto req = request(true, false, false, false);
    return diversity_term(forward_branch(ctx, model, 0, batch, req), forward_branch(ctx, model, 1, batch, req), gamma);
  });
}

double entropy_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch) {
  batch.validate(model.config().input_dim);
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    return entropy_term(forward_branch(ctx, model, b, batch, request(false, true, true, false)));
  });
}

double vat_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch, bool labeled,
                const LossWeights& weights, Rng& rng) {
  batch.validate(model.config().input_dim);
  weights.validate();
  return evaluate_on_fresh_tape([&](ObjectiveContext& ctx) {
    ctx.vat_rng = &rng;
    auto fwd = forward_branch(ctx, model, b, batch, request(labeled, !labeled, true, false));
    return vat_term(ctx, model, fwd, labeled, weights);
  });
}

LossBreakdown total_objective(const CralModel& model, const MultiDomainBatch& batch, const ObjectiveOptions& options,
                              Rng& rng, Mode mode) {
  Tape tape;
  ParameterBinding params(tape);
  ObjectiveContext ctx{params, mode, &rng, &rng};
  return build_objective(ctx, model, batch, options).values();
}

}  // namespace cral
