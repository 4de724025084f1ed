#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cral/checkpoint.hpp"
#include "cral/nn.hpp"

namespace cral {

inline constexpr std::size_t kNumBranches = 2;
inline constexpr std::size_t kNumClasses = 2;

/// Architecture constants. Defaults are the bag-of-features configuration:
/// 5000-dim input, extractors 1000→500, shared features 128, domain-specific
/// features 64, dropout 0.4 on every component. The discriminator and the
/// classifier each have one hidden layer as wide as their input.
struct ModelConfig {
  std::size_t input_dim = 5000;
  std::size_t num_domains = 4;
  std::vector<std::size_t> shared_hidden{1000, 500};
  std::vector<std::size_t> specific_hidden{1000, 500};
  std::size_t shared_dim = 128;
  std::size_t specific_dim = 64;
  double dropout = 0.4;

  void validate() const;

  MlpSpec shared_spec() const;
  MlpSpec specific_spec() const;
  MlpSpec discriminator_spec() const;
  MlpSpec classifier_spec() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One branch: shared extractor, one extractor per domain, an M-way domain
/// discriminator over shared features, and a binary classifier over the
/// concatenation [shared, specific].
struct BranchParams {
  Mlp shared;
  std::vector<Mlp> specific;
  Mlp discriminator;
  Mlp classifier;
};

enum class ParamGroup { Discriminator, Main };

class CralModel {
 public:
  /// Both branches are initialized from seeds derived from `seed`, so they
  /// differ from each other but the model as a whole is reproducible.
  static CralModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t num_domains() const noexcept { return config_.num_domains; }

  /// Branch index is 0 or 1.
  BranchParams& branch(std::size_t b);
  const BranchParams& branch(std::size_t b) const;

  /// Discriminator group: D of both branches. Main group: everything else.
  std::vector<NamedParameter> parameters(ParamGroup group);
  std::vector<NamedParameter> all_parameters();

  /// Checkpoint whose metadata is a JSON manifest of the ModelConfig.
  Checkpoint to_checkpoint() const;
  static CralModel from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static CralModel load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  std::array<BranchParams, kNumBranches> branches_;
};

// --- tape-level forward ----------------------------------------------------

Var shared_features(ForwardContext& ctx, const CralModel& model, std::size_t b, Var x);
Var specific_features(ForwardContext& ctx, const CralModel& model, std::size_t b, std::size_t domain, Var x);
/// softmax(D(shared)).
Var domain_probabilities(ForwardContext& ctx, const CralModel& model, std::size_t b, Var shared);
/// softmax(C([shared, specific])); a missing specific block is replaced by zeros.
Var class_probabilities(ForwardContext& ctx, const CralModel& model, std::size_t b, Var shared,
                        std::optional<Var> specific);
/// Composite predictor from raw inputs. `domain == nullopt` selects the
/// zeroed domain-specific pathway used for unseen target domains.
Var class_probabilities_from_input(ForwardContext& ctx, const CralModel& model, std::size_t b,
                                   std::optional<std::size_t> domain, Var x);

// --- value-level prediction ------------------------------------------------

Tensor shared_features(const CralModel& model, std::size_t b, const Tensor& x, Mode mode = Mode::Eval,
                       MaskSource* masks = nullptr);
Tensor predict_domain(const CralModel& model, std::size_t b, const Tensor& x, Mode mode = Mode::Eval,
                      MaskSource* masks = nullptr);
Tensor predict_class(const CralModel& model, std::size_t b, std::optional<std::size_t> domain, const Tensor& x,
                     Mode mode = Mode::Eval, MaskSource* masks = nullptr);
/// Mean of both branches' eval-mode class probabilities.
Tensor predict_ensemble(const CralModel& model, std::optional<std::size_t> domain, const Tensor& x);
/// Argmax of predict_ensemble, ties toward class 0.
std::vector<std::size_t> predict_labels(const CralModel& model, std::optional<std::size_t> domain, const Tensor& x);

}  // namespace cral
