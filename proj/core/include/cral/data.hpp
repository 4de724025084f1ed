#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cral/tensor.hpp"

namespace cral {

struct SparseVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;

  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

/// One domain's labeled set L_i and unlabeled set U_i.
struct DomainDataset {
  std::string name;
  std::size_t feature_dim = 0;
  std::vector<SparseVector> labeled;
  std::vector<std::size_t> labels;  // one per labeled vector, in {0, 1}
  std::vector<SparseVector> unlabeled;

  void validate() const;
};

/// Labeled samples without the unlabeled pool (dev/test splits).
struct LabeledSet {
  std::vector<SparseVector> samples;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return samples.size(); }
};

/// Gaussian multi-domain families with unit covariance. Class means sit at
/// ±separation/2 along one direction shared by every domain; each domain is
/// translated by its own random offset of norm `domain_shift`.
struct SyntheticSpec {
  std::size_t num_domains = 4;
  std::size_t feature_dim = 16;
  std::size_t labeled_per_domain = 200;
  std::size_t unlabeled_per_domain = 400;
  double class_separation = 3.0;
  double domain_shift = 3.0;
  double label_noise = 0.0;  // fraction of labels flipped, in [0, 0.5)
  std::uint64_t seed = 1;

  void validate() const;
};

/// Deterministic per seed. Labeled and unlabeled sets are class-balanced (to
/// within one sample when the count is odd). Label noise flips the same
/// number of labels in each class, so observed labels stay balanced too.
std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec);

// --- sparse text format ------------------------------------------------------
//
//   line  := label SP pair (SP pair)*
//   label := "0" | "1" | "?"          ("?" marks an unlabeled sample)
//   pair  := index ":" value          index decimal, value decimal float
//
// Indices are strictly increasing and lie in [0, feature_dim). A "#" starts
// a comment running to the end of the line; blank lines are skipped.

DomainDataset parse_sparse_dataset(std::istream& is, const std::string& source, std::size_t feature_dim);
DomainDataset load_sparse_dataset(const std::filesystem::path& path, std::size_t feature_dim);

/// Labeled samples first, then unlabeled ones. Values use the shortest
/// round-trip decimal form, so reading the file back is exact. An all-zero
/// vector is written as "0:0".
void write_sparse_dataset(std::ostream& os, const DomainDataset& dataset);
void save_sparse_dataset(const std::filesystem::path& path, const DomainDataset& dataset);

// --- dense conversion --------------------------------------------------------

Tensor to_dense(std::span<const SparseVector> samples, std::size_t feature_dim);
Tensor to_dense(std::span<const SparseVector> samples, std::span<const std::size_t> rows, std::size_t feature_dim);
SparseVector to_sparse(std::span<const double> dense);

// --- stratified partitions ---------------------------------------------------

/// k stratified folds of sample indices. Each class is shuffled and dealt
/// round-robin, continuing across classes, so fold sizes (overall and per
/// class) differ by at most one. Throws DataError if a class has fewer
/// than k samples.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::size_t> labels, std::size_t k,
                                                       std::uint64_t seed);

/// Stratified split by fractions (positive, summing to 1). Per-class counts
/// use largest-remainder rounding. Throws DataError if a part would be empty.
std::vector<std::vector<std::size_t>> stratified_split(std::span<const std::size_t> labels,
                                                       std::span<const double> fractions, std::uint64_t seed);

LabeledSet labeled_subset(const DomainDataset& dataset, std::span<const std::size_t> indices);
LabeledSet merge(std::span<const LabeledSet> parts);

}  // namespace cral
