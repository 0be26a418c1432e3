#include "piper/svm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "piper/error.hpp"
#include "piper/features.hpp"
#include "piper/rng.hpp"
#include "piper/simd.hpp"

namespace piper {

void TrainConfig::validate() const {
  if (!(c > 0) || !std::isfinite(c)) throw Error(ErrorCode::InvalidArgument, "C must be positive");
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be at least 1");
}

TrainingSet::TrainingSet(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "training rows need a positive dimension");
}

void TrainingSet::add(std::uint64_t key, std::span<const double> row) {
  if (row.size() != dim_) {
    throw Error(ErrorCode::DimensionMismatch,
                "row of size " + std::to_string(row.size()) + ", expected " + std::to_string(dim_));
  }
  keys_.push_back(key);
  x_.insert(x_.end(), row.begin(), row.end());
}

double BinaryModel::decision(std::span<const double> x) const { return simd::dot(w, x) + bias; }

double BinaryProblem::objective(const BinaryModel& m) const {
  const std::size_t n = data->size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double margin = labels[i] * m.decision(data->row(i));
    if (margin < 1.0) loss += sample_cost[i] * (1.0 - margin);
  }
  const double reg = simd::dot(m.w, m.w) + (use_bias ? m.bias * m.bias : 0.0);
  return 0.5 * lambda * reg + loss / static_cast<double>(n);
}

BinaryModel BinaryProblem::subgradient(const BinaryModel& m) const {
  const std::size_t n = data->size();
  BinaryModel g{m.w, use_bias ? m.bias : 0.0};
  simd::scale(lambda, g.w);
  g.bias *= lambda;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double margin = labels[i] * m.decision(data->row(i));
    if (margin < 1.0) {
      const double coef = -sample_cost[i] * labels[i] * inv_n;
      simd::axpy(coef, data->row(i), g.w);
      if (use_bias) g.bias += coef;
    }
  }
  return g;
}

namespace {

std::vector<std::size_t> canonical_order(const TrainingSet& data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.key(a) < data.key(b); });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (data.key(order[i]) == data.key(order[i - 1])) {
      throw Error(ErrorCode::InvalidArgument, "duplicate training key " + std::to_string(data.key(order[i])));
    }
  }
  return order;
}

}  // namespace

BinaryProblem make_binary_problem(const TrainingSet& data, std::span<const int> labels, double c,
                                  ClassWeighting weighting, bool use_bias) {
  if (labels.size() != data.size()) throw Error(ErrorCode::DimensionMismatch, "one label per row required");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 1 && y != -1) throw Error(ErrorCode::InvalidArgument, "binary labels must be +1 or -1");
    pos += y == 1 ? 1 : 0;
  }
  const std::size_t n = labels.size();
  if (pos == 0 || pos == n) throw Error(ErrorCode::DegenerateProblem, "both classes must be present");

  BinaryProblem p;
  p.data = &data;
  p.labels.assign(labels.begin(), labels.end());
  p.lambda = 1.0 / (c * static_cast<double>(n));
  p.use_bias = use_bias;
  p.sample_cost.assign(n, 1.0);
  if (weighting == ClassWeighting::InverseFrequency) {
    const double cpos = static_cast<double>(n) / (2.0 * static_cast<double>(pos));
    const double cneg = static_cast<double>(n) / (2.0 * static_cast<double>(n - pos));
    for (std::size_t i = 0; i < n; ++i) p.sample_cost[i] = labels[i] == 1 ? cpos : cneg;
  }
  return p;
}

BinaryModel train_pegasos(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace) {
  cfg.validate();
  const TrainingSet& data = *problem.data;
  const std::size_t n = data.size();
  const double lambda = problem.lambda;
  const double mean_cost =
      std::accumulate(problem.sample_cost.begin(), problem.sample_cost.end(), 0.0) / static_cast<double>(n);
  // f(w*) <= f(0) = mean cost bounds |w*|^2 <= 2 mean_cost / lambda.
  const double radius2 = 2.0 * mean_cost / lambda;

  const std::vector<std::size_t> base = canonical_order(data);
  std::vector<std::size_t> order(n);
  Rng rng(derive_seed(cfg.seed, "pegasos"));

  BinaryModel cur{std::vector<double>(data.dim(), 0.0), 0.0};
  BinaryModel best = cur;
  double best_obj = problem.objective(best);
  std::uint64_t t = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order = base;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto x = data.row(i);
      const int y = problem.labels[i];
      const double margin = y * cur.decision(x);
      const double shrink = 1.0 - 1.0 / static_cast<double>(t);
      simd::scale(shrink, cur.w);
      cur.bias *= shrink;
      if (margin < 1.0) {
        const double step = eta * problem.sample_cost[i] * y;
        simd::axpy(step, x, cur.w);
        if (problem.use_bias) cur.bias += step;
      }
      const double norm2 = simd::dot(cur.w, cur.w) + cur.bias * cur.bias;
      if (norm2 > radius2) {
        const double s = std::sqrt(radius2 / norm2);
        simd::scale(s, cur.w);
        cur.bias *= s;
      }
    }
    const double obj = problem.objective(cur);
    if (obj <= best_obj) {
      best = cur;
      best_obj = obj;
    } else {
      cur = best;
    }
    if (trace != nullptr) {
      trace->epochs.push_back(best);
      trace->objectives.push_back(best_obj);
    }
  }
  return best;
}

BinaryModel train_dual_cd(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace) {
  cfg.validate();
  const TrainingSet& data = *problem.data;
  const std::size_t n = data.size();
  // Rescaled primal: 1/2 (|w|^2 + b^2) + sum_i U_i hinge_i with U_i = c_i / (lambda n).
  const double scale = 1.0 / (problem.lambda * static_cast<double>(n));
  const double bias_feature = problem.use_bias ? 1.0 : 0.0;

  std::vector<double> upper(n), diag(n), alpha(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    upper[i] = problem.sample_cost[i] * scale;
    const auto x = data.row(i);
    diag[i] = simd::dot(x, x) + bias_feature;
  }

  const std::vector<std::size_t> base = canonical_order(data);
  std::vector<std::size_t> order(n);
  Rng rng(derive_seed(cfg.seed, "dual-cd"));

  BinaryModel cur{std::vector<double>(data.dim(), 0.0), 0.0};
  BinaryModel best = cur;
  double best_obj = problem.objective(best);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order = base;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      if (diag[i] <= 0.0) continue;
      const auto x = data.row(i);
      const double y = problem.labels[i];
      const double g = y * cur.decision(x) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= upper[i]) pg = std::max(g, 0.0);
      if (pg == 0.0) continue;
      const double next = std::clamp(alpha[i] - g / diag[i], 0.0, upper[i]);
      const double delta = (next - alpha[i]) * y;
      alpha[i] = next;
      simd::axpy(delta, x, cur.w);
      cur.bias += delta * bias_feature;
    }
    const double obj = problem.objective(cur);
    if (obj <= best_obj) {
      best = cur;
      best_obj = obj;
    }
    if (trace != nullptr) {
      trace->epochs.push_back(best);
      trace->objectives.push_back(best_obj);
    }
  }
  return best;
}

BinaryModel train_problem(const BinaryProblem& problem, const TrainConfig& cfg, TrainTrace* trace) {
  return cfg.solver == Solver::Pegasos ? train_pegasos(problem, cfg, trace) : train_dual_cd(problem, cfg, trace);
}

BinaryModel train_binary(const TrainingSet& data, std::span<const int> labels, const TrainConfig& cfg,
                         TrainTrace* trace) {
  cfg.validate();
  const auto problem = make_binary_problem(data, labels, cfg.c, ClassWeighting::InverseFrequency, cfg.use_bias);
  return train_problem(problem, cfg, trace);
}

LinearModel train_multiclass(const TrainingSet& data, std::span<const IdentityId> labels,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (labels.size() != data.size()) throw Error(ErrorCode::DimensionMismatch, "one label per row required");
  LinearModel model;
  model.class_index.assign(labels.begin(), labels.end());
  std::sort(model.class_index.begin(), model.class_index.end());
  model.class_index.erase(std::unique(model.class_index.begin(), model.class_index.end()),
                          model.class_index.end());
  if (model.class_index.size() < 2) {
    throw Error(ErrorCode::DegenerateProblem, "multi-class training needs at least two classes");
  }
  model.dim = data.dim();
  model.weights.assign(model.classes() * model.dim, 0.0);
  model.biases.assign(model.classes(), 0.0);

  std::vector<int> y(labels.size());
  for (std::size_t k = 0; k < model.classes(); ++k) {
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == model.class_index[k] ? 1 : -1;
    const auto problem = make_binary_problem(data, y, cfg.c, cfg.class_weighting, cfg.use_bias);
    TrainConfig sub = cfg;
    sub.seed = derive_seed(cfg.seed, "ovr", model.class_index[k]);
    const BinaryModel m = train_problem(problem, sub);
    std::copy(m.w.begin(), m.w.end(), model.weights.begin() + static_cast<std::ptrdiff_t>(k * model.dim));
    model.biases[k] = m.bias;
  }
  return model;
}

std::vector<double> score(const LinearModel& model, std::span<const double> x) {
  if (x.size() != model.dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature of size " + std::to_string(x.size()) + ", model expects " + std::to_string(model.dim));
  }
  std::vector<double> s(model.classes());
  for (std::size_t k = 0; k < model.classes(); ++k) s[k] = simd::dot(model.class_weights(k), x) + model.biases[k];
  return s;
}

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::InvalidArgument, "softmax of an empty vector");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {
void put_f64(std::ostream& out, double v) { le::put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(le::get_u64(in)); }
}  // namespace

void write_model(std::ostream& out, const LinearModel& model) {
  out.write("PLM1", 4);
  le::put_u32(out, static_cast<std::uint32_t>(model.classes()));
  le::put_u32(out, static_cast<std::uint32_t>(model.dim));
  for (auto c : model.class_index) le::put_u32(out, c);
  for (double v : model.weights) put_f64(out, v);
  for (double v : model.biases) put_f64(out, v);
}

LinearModel read_model(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "PLM1", 4) != 0) throw Error(ErrorCode::Format, "not a PLM1 model");
  LinearModel m;
  const auto classes = le::get_u32(in);
  m.dim = le::get_u32(in);
  m.class_index.resize(classes);
  for (auto& c : m.class_index) c = le::get_u32(in);
  m.weights.resize(static_cast<std::size_t>(classes) * m.dim);
  for (auto& v : m.weights) v = get_f64(in);
  m.biases.resize(classes);
  for (auto& v : m.biases) v = get_f64(in);
  return m;
}

}  // namespace piper
