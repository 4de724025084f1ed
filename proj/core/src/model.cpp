#include "cral/model.hpp"

#include <json.hpp>

#include "cral/errors.hpp"

namespace cral {

void ModelConfig::validate() const {
  if (num_domains < 2) throw SpecError("model needs at least 2 domains, got " + std::to_string(num_domains));
  if (input_dim == 0 || shared_dim == 0 || specific_dim == 0) throw SpecError("model widths must be positive");
  shared_spec().validate();
  specific_spec().validate();
}

MlpSpec ModelConfig::shared_spec() const { return {input_dim, shared_hidden, shared_dim, dropout}; }

MlpSpec ModelConfig::specific_spec() const { return {input_dim, specific_hidden, specific_dim, dropout}; }

MlpSpec ModelConfig::discriminator_spec() const { return {shared_dim, {shared_dim}, num_domains, dropout}; }

MlpSpec ModelConfig::classifier_spec() const {
  const std::size_t in = shared_dim + specific_dim;
  return {in, {in}, kNumClasses, dropout};
}

namespace {

void check_branch(std::size_t b) {
  if (b >= kNumBranches) throw ContractError("branch index must be 0 or 1, got " + std::to_string(b));
}

void check_domain(const CralModel& model, std::size_t domain) {
  if (domain >= model.num_domains()) {
    throw ContractError("invalid domain index " + std::to_string(domain) + " for a model with " +
                        std::to_string(model.num_domains()) + " domains");
  }
}

std::string branch_prefix(std::size_t b) { return "b" + std::to_string(b + 1); }

nlohmann::json manifest(const ModelConfig& c) {
  return {{"format", "cral-model"},
          {"num_domains", c.num_domains},
          {"input_dim", c.input_dim},
          {"shared_hidden", c.shared_hidden},
          {"specific_hidden", c.specific_hidden},
          {"shared_dim", c.shared_dim},
          {"specific_dim", c.specific_dim},
          {"discriminator_hidden", c.shared_dim},
          {"classifier_hidden", c.shared_dim + c.specific_dim},
          {"num_classes", kNumClasses},
          {"dropout", c.dropout}};
}

}  // namespace

CralModel CralModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  CralModel model;
  model.config_ = config;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    Rng rng = make_rng(seed, "init." + branch_prefix(b));
    auto& br = model.branches_[b];
    br.shared = init_mlp(config.shared_spec(), rng);
    for (std::size_t i = 0; i < config.num_domains; ++i) br.specific.push_back(init_mlp(config.specific_spec(), rng));
    br.discriminator = init_mlp(config.discriminator_spec(), rng);
    br.classifier = init_mlp(config.classifier_spec(), rng);
  }
  return model;
}

BranchParams& CralModel::branch(std::size_t b) {
  check_branch(b);
  return branches_[b];
}

const BranchParams& CralModel::branch(std::size_t b) const {
  check_branch(b);
  return branches_[b];
}

std::vector<NamedParameter> CralModel::parameters(ParamGroup group) {
  std::vector<NamedParameter> out;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    auto& br = branches_[b];
    const auto p = branch_prefix(b);
    if (group == ParamGroup::Discriminator) {
      collect_parameters(br.discriminator, p + ".discriminator", out);
      continue;
    }
    collect_parameters(br.shared, p + ".shared", out);
    for (std::size_t i = 0; i < br.specific.size(); ++i) {
      collect_parameters(br.specific[i], p + ".specific" + std::to_string(i), out);
    }
    collect_parameters(br.classifier, p + ".classifier", out);
  }
  return out;
}

std::vector<NamedParameter> CralModel::all_parameters() {
  auto out = parameters(ParamGroup::Main);
  auto d = parameters(ParamGroup::Discriminator);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Checkpoint CralModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata = manifest(config_).dump();
  // all_parameters() only hands out pointers; nothing is modified here.
  for (const auto& p : const_cast<CralModel*>(this)->all_parameters()) ckpt.records.push_back({p.name, *p.value});
  return ckpt;
}

CralModel CralModel::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig config;
  try {
    const auto j = nlohmann::json::parse(ckpt.metadata);
    if (j.at("format") != "cral-model") throw DataError("checkpoint manifest is not a cral-model");
    config.num_domains = j.at("num_domains");
    config.input_dim = j.at("input_dim");
    config.shared_hidden = j.at("shared_hidden").get<std::vector<std::size_t>>();
    config.specific_hidden = j.at("specific_hidden").get<std::vector<std::size_t>>();
    config.shared_dim = j.at("shared_dim");
    config.specific_dim = j.at("specific_dim");
    config.dropout = j.at("dropout");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }
  auto model = create(config, 0);
  for (auto& p : model.all_parameters()) {
    const Tensor& stored = ckpt.find(p.name);
    if (stored.shape() != p.value->shape()) {
      throw DataError("checkpoint record " + p.name + " has shape " + to_string(stored.shape()) + ", manifest implies " +
                      to_string(p.value->shape()));
    }
    *p.value = stored;
  }
  return model;
}

void CralModel::save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }

CralModel CralModel::load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

// --- tape-level forward ----------------------------------------------------

Var shared_features(ForwardContext& ctx, const CralModel& model, std::size_t b, Var x) {
  return mlp_forward(ctx, model.branch(b).shared, x);
}

Var specific_features(ForwardContext& ctx, const CralModel& model, std::size_t b, std::size_t domain, Var x) {
  check_domain(model, domain);
  return mlp_forward(ctx, model.branch(b).specific[domain], x);
}

Var domain_probabilities(ForwardContext& ctx, const CralModel& model, std::size_t b, Var shared) {
  return softmax_rows(mlp_forward(ctx, model.branch(b).discriminator, shared));
}

Var class_probabilities(ForwardContext& ctx, const CralModel& model, std::size_t b, Var shared,
                        std::optional<Var> specific) {
  const std::size_t n = shared.value().rows();
  Var tail = specific ? *specific : ctx.tape().constant(Tensor({n, model.config().specific_dim}));
  return softmax_rows(mlp_forward(ctx, model.branch(b).classifier, concat_cols(shared, tail)));
}

Var class_probabilities_from_input(ForwardContext& ctx, const CralModel& model, std::size_t b,
                                   std::optional<std::size_t> domain, Var x) {
  if (domain) check_domain(model, *domain);
  Var shared = shared_features(ctx, model, b, x);
  std::optional<Var> specific;
  if (domain) specific = specific_features(ctx, model, b, *domain, x);
  return class_probabilities(ctx, model, b, shared, specific);
}

// --- value-level prediction ------------------------------------------------

Tensor shared_features(const CralModel& model, std::size_t b, const Tensor& x, Mode mode, MaskSource* masks) {
  Tape tape;
  ParameterBinding params(tape);
  ForwardContext ctx{params, mode, masks};
  return shared_features(ctx, model, b, tape.constant(x)).value();
}

Tensor predict_domain(const CralModel& model, std::size_t b, const Tensor& x, Mode mode, MaskSource* masks) {
  Tape tape;
  ParameterBinding params(tape);
  ForwardContext ctx{params, mode, masks};
  return domain_probabilities(ctx, model, b, shared_features(ctx, model, b, tape.constant(x))).value();
}

Tensor predict_class(const CralModel& model, std::size_t b, std::optional<std::size_t> domain, const Tensor& x,
                     Mode mode, MaskSource* masks) {
  Tape tape;
  ParameterBinding params(tape);
  ForwardContext ctx{params, mode, masks};
  return class_probabilities_from_input(ctx, model, b, domain, tape.constant(x)).value();
}

Tensor predict_ensemble(const CralModel& model, std::optional<std::size_t> domain, const Tensor& x) {
  Tensor p = predict_class(model, 0, domain, x);
  const Tensor q = predict_class(model, 1, domain, x);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * (p[i] + q[i]);
  return p;
}

std::vector<std::size_t> predict_labels(const CralModel& model, std::optional<std::size_t> domain, const Tensor& x) {
  return argmax_rows(predict_ensemble(model, domain, x));
}

}  // namespace cral
