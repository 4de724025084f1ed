#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "cral/model.hpp"

namespace cral {

/// Floor applied to probabilities before every log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Coefficients of the training objective.
struct LossWeights {
  double gamma = 10.0;       // ceiling of the diversity term
  double lambda_adv = 1.0;   // adversarial domain alignment
  double lambda_d = 1e-5;    // branch disagreement on unlabeled data
  double lambda_div = 1e-4;  // shared-space diversity (subtracted)
  double lambda_uvt = 1.0;   // entropy + VAT on unlabeled data
  double lambda_lvt = 1.0;   // VAT on labeled data
  double vat_epsilon = 1.0;  // radius of the per-sample l2 perturbation ball
  double vat_xi = 1e-6;      // finite step of the power iteration

  /// Throws SpecError unless every value is non-negative and gamma > 0.
  void validate() const;
};

/// Which optional regularizers take part (ablation switches).
struct TermSwitches {
  bool disagreement = true;
  bool diversity = true;
  bool vat_unlabeled = true;
  bool vat_labeled = true;
};

/// Standard: the discriminator descends the domain NLL and the extractors
/// ascend it (gradient reversal). Literal: the discriminator ascends and the
/// extractors descend.
enum class AdversarialSign { Standard, Literal };

struct DomainBatch {
  Tensor labeled;                   // [n_l × input], empty when absent
  std::vector<std::size_t> labels;  // n_l entries in {0, 1}
  Tensor unlabeled;                 // [n_u × input], empty when absent
};

/// One mini-batch per domain; position in `domains` is the domain index.
struct MultiDomainBatch {
  std::vector<DomainBatch> domains;

  std::size_t num_domains() const noexcept { return domains.size(); }
  /// Throws ContractError on inconsistent labels or widths.
  void validate(std::size_t input_dim) const;
};

/// [n × classes] one-hot rows.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

// --- pure terms over probabilities -----------------------------------------

/// mean_rows −yᵀ log p.
Var cross_entropy(Var probs, const Tensor& one_hot_labels);
/// mean_rows −pᵀ log p.
Var mean_entropy(Var probs);
/// mean_rows Σ_c p_c (log p_c − log q_c). Throws ContractError unless every
/// row of p and q is a probability vector within 1e-6.
Var kl_divergence(Var p, Var q);
/// mean_rows ‖p − q‖₁.
Var mean_l1_distance(Var p, Var q);

double kl_divergence(const Tensor& p, const Tensor& q);

// --- per-branch forward cache --------------------------------------------------

struct SplitForward {
  Var input;
  Var shared;
  std::optional<Var> class_probs;
  std::optional<Var> domain_probs;
  std::vector<Tensor> class_masks;  // dropout masks of F_s, F_d, C in draw order
};

struct BranchForward {
  std::size_t branch = 0;
  std::vector<std::optional<SplitForward>> labeled;
  std::vector<std::optional<SplitForward>> unlabeled;
};

struct ForwardRequest {
  bool class_labeled = true;
  bool class_unlabeled = true;
  bool domain = true;
  bool labeled = true;
  bool unlabeled = true;
};

/// Per-sample VAT state keyed by (branch, domain, labeled split). When an
/// entry exists its perturbation and reference distribution are reused
/// verbatim instead of being recomputed; gradient checks rely on this to
/// hold them fixed while parameters move.
struct VatEntry {
  Tensor perturbation;
  Tensor reference;
};
using VatCache = std::map<std::tuple<std::size_t, std::size_t, bool>, VatEntry>;

struct ObjectiveContext {
  ParameterBinding& params;
  Mode mode = Mode::Train;
  Rng* dropout_rng = nullptr;  // required in train mode when dropout > 0
  Rng* vat_rng = nullptr;      // required for VAT terms not found in vat_cache
  VatCache* vat_cache = nullptr;

  Tape& tape() { return params.tape(); }
};

BranchForward forward_branch(ObjectiveContext& ctx, const CralModel& model, std::size_t b,
                             const MultiDomainBatch& batch, const ForwardRequest& request);

/// Σ_i mean over domain-i labeled rows of −yᵀ log G^{i,b}(x).
Var classification_term(const BranchForward& fwd, const MultiDomainBatch& batch);
/// Σ_i mean over domain-i labeled ∪ unlabeled rows of −log D^b(F_s^b(x))[i].
Var adversarial_term(const BranchForward& fwd);
/// Σ_i mean over domain-i unlabeled rows of the prediction entropy.
Var entropy_term(const BranchForward& fwd);
/// Σ_i mean over domain-i unlabeled rows of ‖G^{i,1}(x) − G^{i,2}(x)‖₁.
Var disagreement_term(const BranchForward& first, const BranchForward& second);
/// min(γ, ‖(1/M) Σ_i mean_labeled_i (F_s¹(x) − F_s²(x))‖²).
Var diversity_term(const BranchForward& first, const BranchForward& second, double gamma);
/// Σ_i mean over the split of KL(sg(G^{i,b}(x)) ‖ G^{i,b}(x + r)), r held constant.
Var vat_term(ObjectiveContext& ctx, const CralModel& model, const BranchForward& fwd, bool labeled,
             const LossWeights& weights);

/// Adversarial VAT direction for the rows of x: ε·g/‖g‖₂ per row, where g is
/// the gradient with respect to d of KL(G(x) ‖ G(x + ξ·d)) at a random unit
/// d. Rows with ‖g‖₂ < 1e-20 get a zero perturbation. When `masks` is given
/// both forward passes replay them.
Tensor vat_perturbation(const CralModel& model, std::size_t b, std::optional<std::size_t> domain, const Tensor& x,
                        double epsilon, double xi, Rng& rng, Mode mode = Mode::Eval,
                        const std::vector<Tensor>* masks = nullptr);

// --- full objective --------------------------------------------------------------

struct LossBreakdown {
  std::array<double, kNumBranches> classification{};
  std::array<double, kNumBranches> adversarial{};
  std::array<double, kNumBranches> entropy{};
  std::array<double, kNumBranches> vat_unlabeled{};
  std::array<double, kNumBranches> vat_labeled{};
  double disagreement = 0.0;
  double diversity = 0.0;
  double main_loss = 0.0;
  double disc_loss = 0.0;

  /// main_loss recomputed from the individual terms.
  double recombine(const LossWeights& w, AdversarialSign sign) const;
};

struct ObjectiveOptions {
  LossWeights weights;
  TermSwitches switches;
  AdversarialSign sign = AdversarialSign::Standard;
  /// Evaluate every enabled term even when its coefficient is zero.
  bool evaluate_zero_weighted = false;
};

struct ObjectiveVars {
  std::array<std::optional<Var>, kNumBranches> classification, adversarial, entropy, vat_unlabeled, vat_labeled;
  std::optional<Var> disagreement, diversity;
  std::optional<Var> main_loss;  // present when main terms were requested
  std::optional<Var> disc_loss;  // present when λ_Adv·L_Adv was built

  LossBreakdown values() const;
};

/// Builds the requested parts of the objective on ctx's tape.
///   disc_loss = λ_Adv Σ_b L_Adv^b
///   main_loss = Σ_b [L_c^b ∓ λ_Adv L_Adv^b + λ_uvt (L_e^b + L_uvt^b) + λ_lvt L_lvt^b] + λ_d L_d − λ_Δ L_Δ
/// with −λ_Adv under the standard sign. Disabled or zero-weighted terms are
/// skipped and report 0.
ObjectiveVars build_objective(ObjectiveContext& ctx, const CralModel& model, const MultiDomainBatch& batch,
                              const ObjectiveOptions& options, bool main_terms = true, bool disc_terms = true);

// --- value-level wrappers (fresh tape, no gradients) -----------------------

double classification_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch);
double adversarial_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch);
double disagreement_loss(const CralModel& model, const MultiDomainBatch& batch);
double diversity_loss(const CralModel& model, const MultiDomainBatch& batch, double gamma);
double entropy_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch);
double vat_loss(const CralModel& model, std::size_t b, const MultiDomainBatch& batch, bool labeled,
                const LossWeights& weights, Rng& rng);
LossBreakdown total_objective(const CralModel& model, const MultiDomainBatch& batch, const ObjectiveOptions& options,
                              Rng& rng, Mode mode = Mode::Eval);

}  // namespace cral
