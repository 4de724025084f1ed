#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cral/data.hpp"
#include "cral/losses.hpp"
#include "cral/model.hpp"

namespace cral {

struct TrainConfig {
  std::size_t epochs = 50;  // desk-scale default; one epoch = one pass over the largest labeled set
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  LossWeights weights;
  TermSwitches switches;
  AdversarialSign sign = AdversarialSign::Standard;
  std::size_t eval_every = 1;  // epochs between evaluations
  double learning_rate = 1e-4;
  bool log_wall_clock = false;  // wall-clock makes metric streams run-dependent

  void validate() const;
};

struct MdtcResult {
  std::vector<double> per_domain;
  double average = 0.0;
};

struct MetricsRecord {
  std::size_t iteration = 0;  // 1-based optimizer step
  std::size_t epoch = 0;      // 1-based
  LossBreakdown losses;
  std::optional<double> discriminator_accuracy;
  std::optional<MdtcResult> dev;
  std::optional<MdtcResult> test;
  std::optional<double> target;  // unseen-domain accuracy
  double wall_clock = 0.0;       // seconds since training started
};

/// One JSON object, no trailing newline.
std::string to_json_line(const MetricsRecord& record, bool include_wall_clock);

using MetricsSink = std::function<void(const MetricsRecord&)>;

// --- sampling --------------------------------------------------------------

/// Per-domain labeled and unlabeled index streams. Each stream shuffles, is
/// consumed in order, and reshuffles when exhausted; a batch that runs off
/// the end is completed from the fresh permutation, so every batch is full.
class BatchSampler {
 public:
  BatchSampler(std::span<const DomainDataset> domains, std::size_t batch_size, std::uint64_t seed);

  MultiDomainBatch next();
  std::size_t batch_size() const noexcept { return batch_size_; }

 private:
  struct Stream {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    Rng rng;
  };
  std::vector<std::size_t> take(Stream& s);

  std::span<const DomainDataset> domains_;
  std::size_t batch_size_;
  std::vector<Stream> labeled_;
  std::vector<Stream> unlabeled_;
};

// --- optimization ------------------------------------------------------------

struct OptimizerState {
  AdamState discriminator;
  AdamState main;
};

OptimizerState make_optimizer(const TrainConfig& config);

/// Phase 1 steps D¹, D² on disc_loss (ascending it under the literal sign);
/// phase 2 recomputes the forward pass on the same batch and steps every
/// other parameter on main_loss. Returns the full breakdown. Throws
/// NumericError naming the term if any term is non-finite, before the
/// phase that produced it takes its step.
LossBreakdown train_step(CralModel& model, const MultiDomainBatch& batch, const TrainConfig& config,
                         OptimizerState& opt, Rng& dropout_rng, Rng& vat_rng);

/// Discriminator-only update: descends Σ_b L_Adv^b with respect to D¹, D².
double discriminator_step(CralModel& model, const MultiDomainBatch& batch, AdamState& state, Rng& dropout_rng);

// --- evaluation -------------------------------------------------------------

/// Ensemble accuracy per domain plus the unweighted mean.
MdtcResult evaluate_mdtc(const CralModel& model, std::span<const LabeledSet> test_sets);
/// Ensemble accuracy with the domain-specific features zeroed.
double evaluate_msuda(const CralModel& model, const LabeledSet& target);
/// Held-out domain-classification accuracy of D over F_s, averaged over
/// branches. `inputs[i]` are samples of domain i.
double evaluate_discriminator(const CralModel& model, std::span<const std::vector<SparseVector>> inputs);

// --- runs -------------------------------------------------------------------

struct TrainData {
  std::vector<DomainDataset> train;                   // labeled + unlabeled per domain
  std::vector<LabeledSet> dev;                        // optional, one per domain
  std::vector<LabeledSet> test;                       // optional, one per domain
  std::optional<LabeledSet> target;                   // optional unseen domain
  std::vector<std::vector<SparseVector>> domain_holdout;  // optional; defaults to dev, then test inputs
};

struct TrainResult {
  CralModel model;  // snapshot at the best dev average, else the final model
  std::size_t best_epoch = 0;
  std::optional<MdtcResult> dev;
  std::optional<MdtcResult> test;
  std::optional<double> target;
  std::optional<double> discriminator_accuracy;
  std::size_t iterations = 0;
};

/// ModelConfig with input_dim and num_domains taken from the data.
ModelConfig fit_model_config(ModelConfig base, const TrainData& data);

TrainResult train(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                  const MetricsSink& sink = {});

struct FoldResult {
  std::size_t fold = 0;
  CralModel model;
  std::size_t best_epoch = 0;
  MdtcResult dev;
  MdtcResult test;
};

struct KfoldResult {
  std::vector<FoldResult> folds;
  MdtcResult mean;  // per-domain test accuracy averaged over folds
};

/// Rotation r tests on fold r, validates on fold (r+1) mod k and trains on
/// the remaining folds plus every domain's unlabeled pool. If a domain's
/// training part is smaller than the batch size, a warning is written to
/// `warn` and the batch shrinks to fit.
KfoldResult run_kfold(std::span<const DomainDataset> domains, std::size_t k, const ModelConfig& model_config,
                      const TrainConfig& config, const std::function<MetricsSink(std::size_t)>& sink_for = {},
                      const std::function<void(const std::string&)>& warn = {});

/// Holdout protocol: each domain's labeled data is split 60/20/20 into
/// train/dev/test.
TrainData holdout_split(std::span<const DomainDataset> domains, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  TrainResult result;
};

inline constexpr std::size_t kAblationVariants = 5;
/// "full", "w/o L_d", "w/o L_div", "w/o L_uvt", "w/o L_lvt": one switch off
/// per variant, same seed for all.
std::vector<std::string> ablation_variant_names();
TrainConfig ablation_variant(const TrainConfig& base, std::size_t variant);

std::vector<AblationRow> run_ablation(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                                      const std::function<MetricsSink(std::size_t)>& sink_for = {});

struct SweepPoint {
  double value = 0.0;
  TrainResult result;
};

/// One run per value of `parameter` (lambda_d, lambda_div, lambda_uvt or
/// lambda_lvt); every other setting stays as in `config`. Throws
/// ConfigError for any other parameter name.
std::vector<SweepPoint> run_sweep(const ModelConfig& model_config, const TrainData& data, const TrainConfig& config,
                                  const std::string& parameter, std::span<const double> grid,
                                  const std::function<MetricsSink(std::size_t)>& sink_for = {});

/// Sets a named LossWeights field; throws ConfigError for unknown names.
void set_weight(LossWeights& weights, const std::string& name, double value);

}  // namespace cral
