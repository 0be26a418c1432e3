#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "piper/dataset.hpp"
#include "piper/svm.hpp"

namespace piper {

/// F_i: the identities a part classifier was trained on.
class Coverage {
 public:
  Coverage() = default;
  explicit Coverage(std::size_t n_identities) : member_(n_identities, 0) {}
  static Coverage all(std::size_t n_identities);
  static Coverage of(std::size_t n_identities, std::span<const IdentityId> ids);

  std::size_t universe() const { return member_.size(); }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool contains(IdentityId y) const { return y < member_.size() && member_[y] != 0; }
  void insert(IdentityId y) { member_.at(y) = 1; }

 private:
  std::vector<std::uint8_t> member_;
};

/// Per-part distributions over the identity set, one row per instance.
/// Every stored row sums to 1 (within 1e-6) with entries in [0, 1].
class ProbabilityTable {
 public:
  ProbabilityTable() = default;
  ProbabilityTable(std::uint32_t part_id, std::size_t n_identities);

  void add(InstanceId id, bool activated, std::span<const double> row);

  std::uint32_t part_id() const { return part_id_; }
  std::size_t identities() const { return n_identities_; }
  std::size_t rows() const { return ids_.size(); }
  InstanceId id(std::size_t r) const { return ids_[r]; }
  bool activated(std::size_t r) const { return activated_[r] != 0; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * n_identities_, n_identities_}; }
  std::optional<std::size_t> find(InstanceId id) const;

 private:
  std::uint32_t part_id_ = 0;
  std::size_t n_identities_ = 0;
  std::vector<InstanceId> ids_;
  std::vector<std::uint8_t> activated_;
  std::vector<double> data_;
  std::unordered_map<InstanceId, std::size_t> index_;
};

/// P(y in F) under the global distribution.
double coverage_mass(std::span<const double> p0_row, const Coverage& f);

/// Sparsity filling. An inactive part takes the global row; an active one is
/// P(y in F) p_hat(y) + P(y not in F) p0(y), so identities outside F keep a
/// share of the global mass. p_hat must be zero outside F.
std::vector<double> fill_sparsity(std::optional<std::span<const double>> p_hat, std::span<const double> p0_row,
                                  const Coverage& f, bool activated);

/// Mixing weights indexed by part id (0 = global). The bias comes from the
/// trained pair SVM and does not enter the fused score.
struct FusionWeights {
  std::vector<double> w;
  double bias = 0.0;
};

/// s(y) = sum_i w_i P_i(y) over the given tables. Throws ContractViolation
/// when a table has no row for the instance.
std::vector<double> fuse(std::span<const ProbabilityTable* const> tables, const FusionWeights& weights,
                         InstanceId id);

/// As fuse, but a missing row contributes nothing (the unfilled variant).
std::vector<double> fuse_sparse(std::span<const ProbabilityTable* const> tables, const FusionWeights& weights,
                                InstanceId id);

/// argmax with ties to the lowest identity.
IdentityId predict(std::span<const double> scores);

std::vector<double> default_c_grid();

struct LearnWeightsOptions {
  std::vector<double> c_grid = default_c_grid();
  std::uint64_t seed = 0;
  std::size_t epochs = 15;
  bool clamp_nonnegative = false;
  bool allow_missing_rows = false;  // treat a missing row as all-zero (unfilled tables)
  std::size_t registry_size = 0;    // length of the returned w; 0 = max part id + 1
};

struct WeightSearchResult {
  FusionWeights weights;
  double best_c = 0.0;
  std::vector<double> balanced_accuracy;  // per grid entry, on the second half
};

/// Learns the mixing weights from one row per (instance, identity) pair with
/// features [P_0(y) ... P_K(y)] and label +1 iff y is the instance's identity.
/// C is chosen by balanced pair accuracy on half 1 after training on half 0;
/// the final SVM is retrained on both halves. `labels` and `halves` are keyed
/// by instance; instances missing from `halves` are ignored.
WeightSearchResult learn_weights(std::span<const ProbabilityTable> tables,
                                 const std::unordered_map<InstanceId, IdentityId>& labels,
                                 const std::unordered_map<InstanceId, int>& halves,
                                 const LearnWeightsOptions& options);

// PPT1 binary layout, little-endian:
//   "PPT1" | part_id u32 | |Y| u32 | n u32 | n x (instance_id u64, activated u8, |Y| x f32)
void write_probability_table(std::ostream& out, const ProbabilityTable& table);
ProbabilityTable read_probability_table(std::istream& in);
void save_probability_table(const std::filesystem::path& path, const ProbabilityTable& table);
ProbabilityTable load_probability_table(const std::filesystem::path& path);

// Weights file: "part_id<TAB>weight" per part, then "bias<TAB>value".
void write_weights(std::ostream& out, const FusionWeights& weights);
FusionWeights read_weights(std::istream& in);
void save_weights(const std::filesystem::path& path, const FusionWeights& weights);
FusionWeights load_weights(const std::filesystem::path& path);

}  // namespace piper
