#include "piper/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <string>

#include "piper/error.hpp"
#include "piper/features.hpp"
#include "piper/rng.hpp"
#include "piper/simd.hpp"

namespace piper {

Coverage Coverage::all(std::size_t n_identities) {
  Coverage c(n_identities);
  std::fill(c.member_.begin(), c.member_.end(), 1);
  return c;
}

Coverage Coverage::of(std::size_t n_identities, std::span<const IdentityId> ids) {
  Coverage c(n_identities);
  for (auto y : ids) c.insert(y);
  return c;
}

std::size_t Coverage::count() const {
  return static_cast<std::size_t>(std::count(member_.begin(), member_.end(), 1));
}

ProbabilityTable::ProbabilityTable(std::uint32_t part_id, std::size_t n_identities)
    : part_id_(part_id), n_identities_(n_identities) {
  if (n_identities == 0) throw Error(ErrorCode::InvalidArgument, "probability table needs identities");
}

void ProbabilityTable::add(InstanceId id, bool activated, std::span<const double> row) {
  if (row.size() != n_identities_) {
    throw Error(ErrorCode::DimensionMismatch, "probability row has " + std::to_string(row.size()) +
                                                  " entries, expected " + std::to_string(n_identities_));
  }
  double sum = 0.0;
  for (double v : row) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::ContractViolation, "probability outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw Error(ErrorCode::ContractViolation, "probability row sums to " + format_double(sum));
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw Error(ErrorCode::InvalidArgument, "duplicate probability row for instance " + std::to_string(id));
  }
  ids_.push_back(id);
  activated_.push_back(activated ? 1 : 0);
  data_.insert(data_.end(), row.begin(), row.end());
}

std::optional<std::size_t> ProbabilityTable::find(InstanceId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double coverage_mass(std::span<const double> p0_row, const Coverage& f) {
  double mass = 0.0;
  for (std::size_t y = 0; y < p0_row.size(); ++y) {
    if (f.contains(static_cast<IdentityId>(y))) mass += p0_row[y];
  }
  return std::clamp(mass, 0.0, 1.0);
}

std::vector<double> fill_sparsity(std::optional<std::span<const double>> p_hat, std::span<const double> p0_row,
                                  const Coverage& f, bool activated) {
  if (!activated) return {p0_row.begin(), p0_row.end()};
  if (!p_hat) throw Error(ErrorCode::ContractViolation, "activated part without a prediction");
  if (p_hat->size() != p0_row.size() || f.universe() != p0_row.size()) {
    throw Error(ErrorCode::DimensionMismatch, "prediction, global row and coverage differ in size");
  }
  for (std::size_t y = 0; y < p_hat->size(); ++y) {
    if ((*p_hat)[y] != 0.0 && !f.contains(static_cast<IdentityId>(y))) {
      throw Error(ErrorCode::ContractViolation, "part prediction is nonzero outside its coverage");
    }
  }
  const double in = coverage_mass(p0_row, f);
  const double out = 1.0 - in;
  std::vector<double> filled(p0_row.size());
  for (std::size_t y = 0; y < filled.size(); ++y) filled[y] = in * (*p_hat)[y] + out * p0_row[y];
  return filled;
}

namespace {

std::vector<double> fuse_impl(std::span<const ProbabilityTable* const> tables, const FusionWeights& weights,
                              InstanceId id, bool allow_missing) {
  if (tables.empty()) throw Error(ErrorCode::InvalidArgument, "fuse needs at least one table");
  std::vector<double> s(tables.front()->identities(), 0.0);
  for (const ProbabilityTable* t : tables) {
    if (t->identities() != s.size()) throw Error(ErrorCode::DimensionMismatch, "tables disagree on |Y|");
    if (t->part_id() >= weights.w.size()) {
      throw Error(ErrorCode::DimensionMismatch, "no weight for part " + std::to_string(t->part_id()));
    }
    const auto r = t->find(id);
    if (!r) {
      if (allow_missing) continue;
      throw Error(ErrorCode::ContractViolation, "part " + std::to_string(t->part_id()) +
                                                    " has no filled row for instance " + std::to_string(id));
    }
    simd::axpy(weights.w[t->part_id()], t->row(*r), s);
  }
  return s;
}

}  // namespace

std::vector<double> fuse(std::span<const ProbabilityTable* const> tables, const FusionWeights& weights,
                         InstanceId id) {
  return fuse_impl(tables, weights, id, false);
}

std::vector<double> fuse_sparse(std::span<const ProbabilityTable* const> tables, const FusionWeights& weights,
                                InstanceId id) {
  return fuse_impl(tables, weights, id, true);
}

IdentityId predict(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::InvalidArgument, "predict on an empty score vector");
  return static_cast<IdentityId>(argmax(scores));
}

std::vector<double> default_c_grid() {
  std::vector<double> grid;
  for (int e = -8; e <= 8; e += 2) grid.push_back(std::ldexp(1.0, e));
  return grid;
}

namespace {

struct PairData {
  TrainingSet rows;
  std::vector<int> labels;
  explicit PairData(std::size_t dim) : rows(dim) {}
};

double balanced_accuracy(const BinaryModel& m, const PairData& d) {
  std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const bool predicted = m.decision(d.rows.row(i)) > 0.0;
    if (d.labels[i] == 1) {
      ++pos;
      tp += predicted ? 1 : 0;
    } else {
      ++neg;
      tn += predicted ? 0 : 1;
    }
  }
  if (pos == 0 || neg == 0) return 0.0;
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

}  // namespace

WeightSearchResult learn_weights(std::span<const ProbabilityTable> tables,
                                 const std::unordered_map<InstanceId, IdentityId>& labels,
                                 const std::unordered_map<InstanceId, int>& halves,
                                 const LearnWeightsOptions& options) {
  if (options.c_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty C grid");
  if (tables.empty()) throw Error(ErrorCode::InvalidArgument, "no probability tables");
  const std::size_t n_ids = tables.front().identities();
  if (n_ids < 2) throw Error(ErrorCode::DegenerateProblem, "weight learning needs at least two identities");
  std::uint32_t max_part = 0;
  for (const auto& t : tables) {
    if (t.identities() != n_ids) throw Error(ErrorCode::DimensionMismatch, "tables disagree on |Y|");
    max_part = std::max(max_part, t.part_id());
  }

  std::vector<InstanceId> instances;
  for (const auto& [id, half] : halves) {
    if (half == 0 || half == 1) instances.push_back(id);
  }
  std::sort(instances.begin(), instances.end());

  const std::size_t dim = tables.size();
  PairData split[2] = {PairData(dim), PairData(dim)};
  PairData all(dim);
  std::vector<double> feat(dim);
  std::vector<std::optional<std::size_t>> rows(dim);
  for (std::size_t rank = 0; rank < instances.size(); ++rank) {
    const InstanceId id = instances[rank];
    const auto label = labels.find(id);
    if (label == labels.end()) throw Error(ErrorCode::InvalidArgument, "no label for instance " + std::to_string(id));
    for (std::size_t p = 0; p < dim; ++p) {
      rows[p] = tables[p].find(id);
      if (!rows[p] && !options.allow_missing_rows) {
        throw Error(ErrorCode::ContractViolation, "part " + std::to_string(tables[p].part_id()) +
                                                      " has no row for instance " + std::to_string(id));
      }
    }
    const int half = halves.at(id);
    for (std::size_t y = 0; y < n_ids; ++y) {
      for (std::size_t p = 0; p < dim; ++p) feat[p] = rows[p] ? tables[p].row(*rows[p])[y] : 0.0;
      const std::uint64_t key = rank * n_ids + y;
      const int target = label->second == y ? 1 : -1;
      split[half].rows.add(key, feat);
      split[half].labels.push_back(target);
      all.rows.add(key, feat);
      all.labels.push_back(target);
    }
  }

  WeightSearchResult result;
  TrainConfig cfg;
  cfg.epochs = options.epochs;
  double best = -1.0;
  for (std::size_t g = 0; g < options.c_grid.size(); ++g) {
    cfg.c = options.c_grid[g];
    cfg.seed = derive_seed(options.seed, "c-grid", g);
    const BinaryModel m = train_binary(split[0].rows, split[0].labels, cfg);
    const double acc = balanced_accuracy(m, split[1]);
    result.balanced_accuracy.push_back(acc);
    if (acc > best) {
      best = acc;
      result.best_c = cfg.c;
    }
  }

  cfg.c = result.best_c;
  cfg.seed = derive_seed(options.seed, "final");
  const BinaryModel final_model = train_binary(all.rows, all.labels, cfg);

  const std::size_t width = options.registry_size != 0 ? options.registry_size : max_part + 1u;
  result.weights.w.assign(width, 0.0);
  for (std::size_t p = 0; p < dim; ++p) {
    double v = final_model.w[p];
    if (options.clamp_nonnegative) v = std::max(v, 0.0);
    result.weights.w.at(tables[p].part_id()) = v;
  }
  result.weights.bias = final_model.bias;
  return result;
}

void write_probability_table(std::ostream& out, const ProbabilityTable& table) {
  out.write("PPT1", 4);
  le::put_u32(out, table.part_id());
  le::put_u32(out, static_cast<std::uint32_t>(table.identities()));
  le::put_u32(out, static_cast<std::uint32_t>(table.rows()));
  std::vector<std::size_t> order(table.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return table.id(a) < table.id(b); });
  for (std::size_t r : order) {
    le::put_u64(out, table.id(r));
    le::put_u8(out, table.activated(r) ? 1 : 0);
    for (double v : table.row(r)) le::put_f32(out, static_cast<float>(v));
  }
}

ProbabilityTable read_probability_table(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "PPT1", 4) != 0) {
    throw Error(ErrorCode::Format, "not a PPT1 probability table");
  }
  const auto part_id = le::get_u32(in);
  const auto n_ids = le::get_u32(in);
  const auto n = le::get_u32(in);
  ProbabilityTable t(part_id, n_ids);
  std::vector<double> row(n_ids);
  for (std::uint32_t r = 0; r < n; ++r) {
    const auto id = le::get_u64(in);
    const auto flag = le::get_u8(in);
    if (flag > 1) throw Error(ErrorCode::Format, "bad activation flag");
    double sum = 0.0;
    for (auto& v : row) {
      v = le::get_f32(in);
      sum += v;
    }
    // Rows were rounded to f32 on write.
    if (!(std::abs(sum - 1.0) < 1e-4)) throw Error(ErrorCode::Format, "stored row does not sum to 1");
    for (auto& v : row) v = std::min(1.0, v / sum);
    t.add(id, flag == 1, row);
  }
  return t;
}

void save_probability_table(const std::filesystem::path& path, const ProbabilityTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_probability_table(out, table);
}

ProbabilityTable load_probability_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_probability_table(in);
}

void write_weights(std::ostream& out, const FusionWeights& weights) {
  for (std::size_t p = 0; p < weights.w.size(); ++p) out << p << '\t' << format_double(weights.w[p]) << '\n';
  out << "bias\t" << format_double(weights.bias) << '\n';
}

FusionWeights read_weights(std::istream& in) {
  FusionWeights fw;
  std::map<std::size_t, double> by_part;
  bool have_bias = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 2) throw Error(ErrorCode::Format, "weights line needs 2 fields");
    if (f[0] == "bias") {
      fw.bias = parse_double(f[1]);
      have_bias = true;
    } else {
      by_part[parse_u64(f[0])] = parse_double(f[1]);
    }
  }
  if (!have_bias) throw Error(ErrorCode::Format, "weights file lacks the bias line");
  for (const auto& [p, v] : by_part) {
    if (p != fw.w.size()) throw Error(ErrorCode::Format, "weights must list parts 0..K contiguously");
    if (!std::isfinite(v)) throw Error(ErrorCode::Format, "non-finite weight");
    fw.w.push_back(v);
  }
  return fw;
}

void save_weights(const std::filesystem::path& path, const FusionWeights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_weights(out, weights);
}

FusionWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_weights(in);
}

}  // namespace piper
