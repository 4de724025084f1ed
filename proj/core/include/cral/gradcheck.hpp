#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cral/losses.hpp"

namespace cral {

/// Input 6, shared features 4, specific features 3, two domains, one hidden
/// layer of width 5 in each extractor.
ModelConfig toy_model_config();
/// `per_domain` labeled and unlabeled standard-normal rows per domain.
MultiDomainBatch toy_batch(const ModelConfig& config, std::size_t per_domain, std::uint64_t seed);

struct GradCheckOptions {
  double step = 1e-5;          // central-difference half width
  double tolerance = 1e-4;     // relative error bound
  double pass_fraction = 0.99;  // share of checked entries that must meet it
  Mode mode = Mode::Train;     // train mode replays frozen dropout masks
  std::uint64_t seed = 7;
  std::size_t batch_per_domain = 2;
  LossWeights weights;
};

struct TermCheck {
  std::string term;
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::size_t excluded = 0;  // entries whose ±step evaluations cross a kink
  double max_rel_error = 0.0;

  double pass_rate() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 1.0; }
};

struct GradCheckReport {
  std::vector<TermCheck> terms;
  double seconds = 0.0;
  double pass_fraction = 0.99;

  bool ok() const;
};

/// relative error |a − n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Checks every loss term, main_loss and disc_loss on the toy model against
/// central finite differences over all parameters. VAT perturbations and
/// reference distributions are computed once and held fixed.
GradCheckReport run_gradient_suite(const GradCheckOptions& options = {});

}  // namespace cral
