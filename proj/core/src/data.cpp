#include "cral/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "cral/errors.hpp"
#include "cral/random.hpp"

namespace cral {

void DomainDataset::validate() const {
  if (feature_dim == 0) throw DataError(name + ": feature_dim must be positive");
  if (labeled.size() != labels.size()) throw DataError(name + ": label count does not match labeled samples");
  for (auto y : labels) {
    if (y > 1) throw DataError(name + ": label out of range");
  }
  for (const auto* set : {&labeled, &unlabeled}) {
    for (const auto& v : *set) {
      if (v.indices.size() != v.values.size()) throw DataError(name + ": ragged sparse vector");
      for (std::size_t k = 0; k < v.indices.size(); ++k) {
        if (v.indices[k] >= feature_dim) throw DataError(name + ": feature index out of range");
        if (k && v.indices[k] <= v.indices[k - 1]) throw DataError(name + ": indices not strictly increasing");
      }
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_domains == 0 || feature_dim == 0 || labeled_per_domain == 0 || unlabeled_per_domain == 0) {
    throw SpecError("synthetic spec counts and dimensions must be positive");
  }
  if (!(class_separation >= 0.0) || !(domain_shift >= 0.0)) {
    throw SpecError("synthetic separation and shift must be non-negative");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) throw SpecError("label_noise must lie in [0, 0.5)");
}

// --- synthetic -----------------------------------------------------------------

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  } while (norm == 0.0);
  for (double& x : v) x /= norm;
  return v;
}

// Balanced true classes in shuffled order.
std::vector<std::size_t> balanced_classes(std::size_t n, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i < (n + 1) / 2 ? 0 : 1;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

SparseVector draw_sample(const std::vector<double>& center, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(center.size());
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = center[d] + normal(rng);
  return to_sparse(x);
}

}  // namespace

std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng geometry = make_rng(spec.seed, "synthetic.geometry");
  const auto class_axis = random_unit(spec.feature_dim, geometry);

  std::vector<DomainDataset> out;
  for (std::size_t i = 0; i < spec.num_domains; ++i) {
    const auto offset_dir = random_unit(spec.feature_dim, geometry);
    std::array<std::vector<double>, 2> centers;
    for (std::size_t c = 0; c < 2; ++c) {
      const double sign = c == 0 ? -0.5 : 0.5;
      centers[c].resize(spec.feature_dim);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        centers[c][d] = spec.domain_shift * offset_dir[d] + sign * spec.class_separation * class_axis[d];
      }
    }

    Rng rng = make_rng(spec.seed, "synthetic.domain" + std::to_string(i));
    DomainDataset ds;
    ds.name = "domain" + std::to_string(i);
    ds.feature_dim = spec.feature_dim;

    ds.labels = balanced_classes(spec.labeled_per_domain, rng);
    for (auto y : ds.labels) ds.labeled.push_back(draw_sample(centers[y], rng));

    // Flip the same number of labels in each class.
    const auto flips_per_class = static_cast<std::size_t>(std::floor(spec.label_noise * spec.labeled_per_domain / 2.0));
    if (flips_per_class > 0) {
      std::array<std::vector<std::size_t>, 2> members;
      for (std::size_t k = 0; k < ds.labels.size(); ++k) members[ds.labels[k]].push_back(k);
      for (auto& m : members) {
        std::shuffle(m.begin(), m.end(), rng);
        m.resize(std::min(flips_per_class, m.size()));
      }
      for (std::size_t c = 0; c < 2; ++c) {
        for (auto k : members[c]) ds.labels[k] = 1 - c;
      }
    }

    for (auto y : balanced_classes(spec.unlabeled_per_domain, rng)) ds.unlabeled.push_back(draw_sample(centers[y], rng));
    out.push_back(std::move(ds));
  }
  return out;
}

// --- sparse format ----------------------------------------------------------

namespace {

SparseVector parse_pairs(std::string_view body, const std::string& source, std::size_t line, std::size_t feature_dim) {
  SparseVector v;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto end = body.find(' ', pos);
    if (end == std::string_view::npos) end = body.size();
    const auto tok = body.substr(pos, end - pos);
    if (tok.empty()) throw ParseError(source, line, "empty field (separators are single spaces)");
    const auto colon = tok.find(':');
    if (colon == std::string_view::npos) throw ParseError(source, line, "expected index:value, got '" + std::string(tok) + "'");
    const auto idx_tok = tok.substr(0, colon);
    const auto val_tok = tok.substr(colon + 1);

    std::uint64_t idx = 0;
    if (idx_tok.empty() || !std::all_of(idx_tok.begin(), idx_tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ParseError(source, line, "bad index '" + std::string(idx_tok) + "'");
    }
    auto [ip, iec] = std::from_chars(idx_tok.data(), idx_tok.data() + idx_tok.size(), idx);
    if (iec != std::errc{} || ip != idx_tok.data() + idx_tok.size()) {
      throw ParseError(source, line, "bad index '" + std::string(idx_tok) + "'");
    }
    if (idx >= feature_dim) {
      throw ParseError(source, line, "index " + std::to_string(idx) + " outside [0, " + std::to_string(feature_dim) + ")");
    }
    if (!v.indices.empty() && idx <= v.indices.back()) {
      throw ParseError(source, line,
                       idx == v.indices.back() ? "duplicate index " + std::to_string(idx)
                                               : "indices not strictly increasing at " + std::to_string(idx));
    }

    double value = 0.0;
    const bool numeric_start =
        !val_tok.empty() && (std::isdigit(static_cast<unsigned char>(val_tok[0])) || val_tok[0] == '-' || val_tok[0] == '.');
    auto [vp, vec] = std::from_chars(val_tok.data(), val_tok.data() + val_tok.size(), value);
    if (!numeric_start || vec != std::errc{} || vp != val_tok.data() + val_tok.size() || !std::isfinite(value)) {
      throw ParseError(source, line, "bad value '" + std::string(val_tok) + "'");
    }
    v.indices.push_back(static_cast<std::uint32_t>(idx));
    v.values.push_back(value);
    pos = end + 1;
  }
  return v;
}

}  // namespace

DomainDataset parse_sparse_dataset(std::istream& is, const std::string& source, std::size_t feature_dim) {
  if (feature_dim == 0) throw SpecError("feature_dim must be positive");
  DomainDataset ds;
  ds.name = source;
  ds.feature_dim = feature_dim;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string_view text = raw;
    if (auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
    if (text.empty()) continue;

    const auto sp = text.find(' ');
    if (sp == std::string_view::npos) throw ParseError(source, line, "expected a label followed by index:value pairs");
    const auto label = text.substr(0, sp);
    auto vec = parse_pairs(text.substr(sp + 1), source, line, feature_dim);
    if (label == "?") {
      ds.unlabeled.push_back(std::move(vec));
    } else if (label == "0" || label == "1") {
      ds.labeled.push_back(std::move(vec));
      ds.labels.push_back(label == "1" ? 1 : 0);
    } else {
      throw ParseError(source, line, "label must be 0, 1 or ?, got '" + std::string(label) + "'");
    }
  }
  if (is.bad()) throw DataError(source + ": read error");
  return ds;
}

DomainDataset load_sparse_dataset(const std::filesystem::path& path, std::size_t feature_dim) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset " + path.string());
  auto ds = parse_sparse_dataset(is, path.string(), feature_dim);
  ds.name = path.stem().string();
  return ds;
}

namespace {

void write_vector(std::ostream& os, const char* label, const SparseVector& v) {
  os << label;
  if (v.indices.empty()) {
    os << " 0:0\n";
    return;
  }
  char buf[64];
  for (std::size_t k = 0; k < v.indices.size(); ++k) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.values[k]);
    os << ' ' << v.indices[k] << ':' << std::string_view(buf, static_cast<std::size_t>(p - buf));
  }
  os << '\n';
}

}  // namespace

void write_sparse_dataset(std::ostream& os, const DomainDataset& dataset) {
  dataset.validate();
  for (std::size_t k = 0; k < dataset.labeled.size(); ++k) {
    write_vector(os, dataset.labels[k] ? "1" : "0", dataset.labeled[k]);
  }
  for (const auto& v : dataset.unlabeled) write_vector(os, "?", v);
  if (!os) throw DataError("dataset write failed");
}

void save_sparse_dataset(const std::filesystem::path& path, const DomainDataset& dataset) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "# " << dataset.name << " dim=" << dataset.feature_dim << '\n';
  write_sparse_dataset(os, dataset);
}

// --- dense conversion --------------------------------------------------------

Tensor to_dense(std::span<const SparseVector> samples, std::size_t feature_dim) {
  std::vector<std::size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), 0);
  return to_dense(samples, rows, feature_dim);
}

Tensor to_dense(std::span<const SparseVector> samples, std::span<const std::size_t> rows, std::size_t feature_dim) {
  if (rows.empty()) return Tensor();
  Tensor out({rows.size(), feature_dim});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = samples[rows[r]];
    auto dst = out.row(r);
    for (std::size_t k = 0; k < v.indices.size(); ++k) {
      if (v.indices[k] >= feature_dim) throw DimensionError("sparse index beyond feature_dim");
      dst[v.indices[k]] = v.values[k];
    }
  }
  return out;
}

SparseVector to_sparse(std::span<const double> dense) {
  SparseVector v;
  for (std::size_t d = 0; d < dense.size(); ++d) {
    if (dense[d] != 0.0) {
      v.indices.push_back(static_cast<std::uint32_t>(d));
      v.values.push_back(dense[d]);
    }
  }
  return v;
}

// --- partitions --------------------------------------------------------------

namespace {

std::array<std::vector<std::size_t>, 2> shuffled_by_class(std::span<const std::size_t> labels, Rng& rng) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] > 1) throw DataError("label out of range in stratified split");
    by_class[labels[k]].push_back(k);
  }
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);
  return by_class;
}

}  // namespace

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::size_t> labels, std::size_t k,
                                                       std::uint64_t seed) {
  if (k < 2) throw SpecError("k-fold needs k >= 2");
  Rng rng = make_rng(seed, "split.folds");
  auto by_class = shuffled_by_class(labels, rng);
  for (std::size_t c = 0; c < 2; ++c) {
    if (!by_class[c].empty() && by_class[c].size() < k) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " samples, fewer than " + std::to_string(k) + " folds");
    }
  }
  if (labels.size() < k) throw DataError("fewer samples than folds");
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (const auto& members : by_class) {
    for (auto idx : members) folds[next++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<std::vector<std::size_t>> stratified_split(std::span<const std::size_t> labels,
                                                       std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw SpecError("split needs at least one fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw SpecError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw SpecError("split fractions must sum to 1");

  Rng rng = make_rng(seed, "split.fractions");
  auto by_class = shuffled_by_class(labels, rng);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  for (const auto& members : by_class) {
    const std::size_t n = members.size();
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < fractions.size(); ++j) {
      const double exact = fractions[j] * static_cast<double>(n);
      counts[j] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[j];
      remainders.emplace_back(exact - std::floor(exact), j);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
    std::size_t pos = 0;
    for (std::size_t j = 0; j < fractions.size(); ++j) {
      parts[j].insert(parts[j].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                      members.begin() + static_cast<std::ptrdiff_t>(pos + counts[j]));
      pos += counts[j];
    }
  }
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].empty()) throw DataError("stratum too small: split part " + std::to_string(j) + " would be empty");
    std::sort(parts[j].begin(), parts[j].end());
  }
  return parts;
}

LabeledSet labeled_subset(const DomainDataset& dataset, std::span<const std::size_t> indices) {
  LabeledSet out;
  for (auto k : indices) {
    if (k >= dataset.labeled.size()) throw DataError("labeled_subset: index out of range");
    out.samples.push_back(dataset.labeled[k]);
    out.labels.push_back(dataset.labels[k]);
  }
  return out;
}

LabeledSet merge(std::span<const LabeledSet> parts) {
  LabeledSet out;
  for (const auto& p : parts) {
    out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace cral
