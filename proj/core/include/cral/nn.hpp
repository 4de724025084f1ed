#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cral/random.hpp"
#include "cral/tape.hpp"
#include "cral/tensor.hpp"

namespace cral {

enum class Mode { Train, Eval };

struct LinearLayer {
  Tensor weight;  // [out×in]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
};

/// affine → relu → dropout for every hidden layer, then a bare affine output.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  double dropout_rate = 0.4;

  /// Throws SpecError on zero widths or a rate outside [0, 1).
  void validate() const;
};

struct Mlp {
  MlpSpec spec;
  std::vector<LinearLayer> layers;
};

/// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
Mlp init_mlp(const MlpSpec& spec, Rng& rng);

struct NamedParameter {
  std::string name;
  Tensor* value;
};

/// Appends "<prefix>.l<k>.weight" / "<prefix>.l<k>.bias" entries.
void collect_parameters(Mlp& mlp, const std::string& prefix, std::vector<NamedParameter>& out);

/// Binds parameter tensors to tape leaves, once per tensor. Tensors in the
/// trainable set become gradient-carrying leaves; every other parameter is
/// recorded as a constant reference.
class ParameterBinding {
 public:
  ParameterBinding(Tape& tape, std::unordered_set<const Tensor*> trainable = {})
      : tape_(tape), trainable_(std::move(trainable)) {}

  Var bind(const Tensor& param);
  Tape& tape() noexcept { return tape_; }

 private:
  Tape& tape_;
  std::unordered_set<const Tensor*> trainable_;
  std::unordered_map<const Tensor*, Var> bound_;
};

/// Dropout masks, either drawn fresh (and optionally appended to a record)
/// or replayed verbatim from an earlier record. Mask entries are 0 or
/// 1/(1-rate) (inverted dropout).
class MaskSource {
 public:
  explicit MaskSource(Rng& rng, std::vector<Tensor>* record = nullptr) : rng_(&rng), record_(record) {}
  static MaskSource replay(const std::vector<Tensor>& masks);

  Tensor next(const Shape& shape, double rate);
  bool replaying() const noexcept { return replay_ != nullptr; }

 private:
  MaskSource() = default;

  Rng* rng_ = nullptr;
  std::vector<Tensor>* record_ = nullptr;
  const std::vector<Tensor>* replay_ = nullptr;
  std::size_t cursor_ = 0;
};

struct ForwardContext {
  ParameterBinding& params;
  Mode mode = Mode::Eval;
  MaskSource* masks = nullptr;  // required in train mode when any dropout rate is positive

  Tape& tape() { return params.tape(); }
};

Var mlp_forward(ForwardContext& ctx, const Mlp& mlp, Var x);

/// Tape-free convenience wrapper.
Tensor mlp_forward(const Mlp& mlp, const Tensor& x, Mode mode = Mode::Eval, MaskSource* masks = nullptr);

// --- Adam ------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update applied in place to `params`. Moments are
/// created on the first call. Throws NumericError naming the parameter if any
/// gradient entry is non-finite; nothing is modified in that case.
void adam_step(AdamState& state, std::span<const NamedParameter> params, std::span<const Tensor> grads);

}  // namespace cral
