#include "cral/nn.hpp"

#include <cmath>

#include "cral/errors.hpp"

namespace cral {

void MlpSpec::validate() const {
  if (input_dim == 0) throw SpecError("mlp input_dim must be positive");
  if (output_dim == 0) throw SpecError("mlp output_dim must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw SpecError("mlp hidden widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw SpecError("dropout rate must lie in [0,1), got " + std::to_string(dropout_rate));
  }
}

Mlp init_mlp(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  Mlp mlp{spec, {}};
  std::size_t fan_in = spec.input_dim;
  auto widths = spec.hidden_dims;
  widths.push_back(spec.output_dim);
  for (auto fan_out : widths) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    LinearLayer layer{Tensor({fan_out, fan_in}), Tensor(Shape{fan_out})};
    for (double& w : layer.weight.data()) w = dist(rng);
    mlp.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return mlp;
}

void collect_parameters(Mlp& mlp, const std::string& prefix, std::vector<NamedParameter>& out) {
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const std::string base = prefix + ".l" + std::to_string(k);
    out.push_back({base + ".weight", &mlp.layers[k].weight});
    out.push_back({base + ".bias", &mlp.layers[k].bias});
  }
}

Var ParameterBinding::bind(const Tensor& param) {
  if (auto it = bound_.find(&param); it != bound_.end()) return it->second;
  Var v = tape_.reference(param, trainable_.contains(&param));
  bound_.emplace(&param, v);
  return v;
}

MaskSource MaskSource::replay(const std::vector<Tensor>& masks) {
  MaskSource src;
  src.replay_ = &masks;
  return src;
}

Tensor MaskSource::next(const Shape& shape, double rate) {
  if (replay_) {
    if (cursor_ >= replay_->size()) throw ContractError("dropout replay exhausted");
    const Tensor& m = (*replay_)[cursor_++];
    if (m.shape() != shape) {
      throw DimensionError("dropout replay mask " + to_string(m.shape()) + " does not fit " + to_string(shape));
    }
    return m;
  }
  Tensor m(shape);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : m.data()) v = u(*rng_) < rate ? 0.0 : keep;
  if (record_) record_->push_back(m);
  return m;
}

Var mlp_forward(ForwardContext& ctx, const Mlp& mlp, Var x) {
  if (x.shape().size() != 2 || x.value().cols() != mlp.spec.input_dim) {
    throw DimensionError("mlp input width mismatch: expected [n x " + std::to_string(mlp.spec.input_dim) +
                         "], got " + to_string(x.shape()));
  }
  const bool drop = ctx.mode == Mode::Train && mlp.spec.dropout_rate > 0.0;
  if (drop && !ctx.masks) throw ContractError("train-mode dropout needs a mask source");

  Var h = x;
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const auto& layer = mlp.layers[k];
    h = add_row_vector(matmul_transposed_b(h, ctx.params.bind(layer.weight)), ctx.params.bind(layer.bias));
    if (k + 1 == mlp.layers.size()) break;
    h = relu(h);
    if (drop) h = h * ctx.tape().constant(ctx.masks->next(h.shape(), mlp.spec.dropout_rate));
  }
  return h;
}

Tensor mlp_forward(const Mlp& mlp, const Tensor& x, Mode mode, MaskSource* masks) {
  Tape tape;
  ParameterBinding params(tape);
  ForwardContext ctx{params, mode, masks};
  return mlp_forward(ctx, mlp, tape.constant(x)).value();
}

void adam_step(AdamState& state, std::span<const NamedParameter> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value->shape()) {
      throw DimensionError("adam_step: gradient " + to_string(grads[i].shape()) + " for parameter " +
                           params[i].name + " of shape " + to_string(params[i].value->shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + params[i].name);
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->shape());
      state.second_moment.emplace_back(p.value->shape());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }

  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value->data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

}  // namespace cral
