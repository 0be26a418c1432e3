#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "piper/dataset.hpp"

namespace piper {

enum class ClassWeighting { Uniform, InverseFrequency };

enum class Solver { DualCoordinateDescent, Pegasos };

struct TrainConfig {
  double c = 1.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  ClassWeighting class_weighting = ClassWeighting::Uniform;
  bool use_bias = true;
  Solver solver = Solver::DualCoordinateDescent;

  void validate() const;
};

/// Dense row-major training rows. Keys must be unique: training visits rows
/// in key order before shuffling, so the result does not depend on insertion
/// order.
class TrainingSet {
 public:
  explicit TrainingSet(std::size_t dim);

  void add(std::uint64_t key, std::span<const double> row);
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  std::uint64_t key(std::size_t i) const { return keys_[i]; }
  std::span<const double> row(std::size_t i) const { return {x_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_;
  std::vector<double> x_;
  std::vector<std::uint64_t> keys_;
};

struct BinaryModel {
  std::vector<double> w;
  double bias = 0.0;

  double decision(std::span<const double> x) const;
};

/// Weighted L2-regularized hinge problem
///   f(w, b) = lambda/2 (|w|^2 + b^2) + 1/n sum_i c_i max(0, 1 - y_i (w.x_i + b)).
/// The bias is regularized like any other coordinate (it is absent when
/// use_bias is false).
struct BinaryProblem {
  const TrainingSet* data = nullptr;
  std::vector<int> labels;          // +1 / -1
  std::vector<double> sample_cost;  // c_i
  double lambda = 1.0;
  bool use_bias = true;

  double objective(const BinaryModel& m) const;
  /// A subgradient of the objective; the gradient wherever it exists.
  BinaryModel subgradient(const BinaryModel& m) const;
};

/// Model at each epoch boundary, after the objective safeguard: an epoch
/// that ends above the incumbent objective does not replace the incumbent.
struct TrainTrace {
  std::vector<BinaryModel> epochs;
  std::vector<double> objectives;
};

/// Seeded dual coordinate descent on the box-constrained dual
/// (0 <= alpha_i <= C c_i), one shuffled pass over the rows per epoch.
BinaryModel train_dual_cd(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace = nullptr);

/// Pegasos stochastic subgradient descent, eta_t = 1 / (lambda t) with
/// lambda = 1 / (C n), plus projection onto the ball that must contain the
/// optimum. If an epoch ends with a higher objective than the incumbent, the
/// incumbent is kept and descent resumes from it.
BinaryModel train_pegasos(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace = nullptr);

/// Runs the configured solver.
BinaryModel train_problem(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace = nullptr);

/// Binary linear SVM with inverse-frequency class weighting, labels +/-1.
BinaryModel train_binary(const TrainingSet& data, std::span<const int> labels, const TrainConfig& cfg,
                         TrainTrace* trace = nullptr);

BinaryProblem make_binary_problem(const TrainingSet& data, std::span<const int> labels, double c,
                                  ClassWeighting weighting, bool use_bias);

/// One-vs-rest multi-class linear SVM. Row k of the weights scores
/// class_index[k]; class_index is ascending.
struct LinearModel {
  std::vector<IdentityId> class_index;
  std::size_t dim = 0;
  std::vector<double> weights;  // classes x dim
  std::vector<double> biases;

  std::size_t classes() const { return class_index.size(); }
  std::span<const double> class_weights(std::size_t k) const { return {weights.data() + k * dim, dim}; }
};

LinearModel train_multiclass(const TrainingSet& data, std::span<const IdentityId> labels, const TrainConfig& cfg);

/// class_weights . x + biases, in class_index order.
std::vector<double> score(const LinearModel& model, std::span<const double> x);

/// Max-subtracted softmax at temperature 1.
std::vector<double> softmax(std::span<const double> scores);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// PLM1 binary model file, little-endian:
//   "PLM1" | classes u32 | d u32 | classes x u32 class ids | classes x d f64 | classes x f64 biases
void write_model(std::ostream& out, const LinearModel& model);
LinearModel read_model(std::istream& in);

}  // namespace piper
