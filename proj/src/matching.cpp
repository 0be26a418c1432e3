#include "piper/matching.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "piper/error.hpp"

namespace piper {

namespace detail {

std::vector<std::size_t> hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (rows > cols) throw Error(ErrorCode::InvalidArgument, "hungarian needs rows <= cols");
  if (cost.size() != rows * cols) throw Error(ErrorCode::DimensionMismatch, "cost matrix size");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start column.
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  }
  return out;
}

}  // namespace detail

namespace {

constexpr double kTieEps = 1e-9;
constexpr std::size_t kUnmatched = std::numeric_limits<std::size_t>::max();
constexpr std::size_t kBruteForceLimit = 8;

// Edge weights over truths and detections, both sorted by id.
struct Graph {
  std::vector<const Instance*> truths;
  std::vector<const Detection*> detections;
  std::vector<double> weight;  // row-major, T x D
  std::vector<char> admissible;

  std::size_t t() const { return truths.size(); }
  std::size_t d() const { return detections.size(); }
  double w(std::size_t i, std::size_t j) const { return weight[i * d() + j]; }
  bool ok(std::size_t i, std::size_t j) const { return admissible[i * d() + j] != 0; }
};

Graph build_graph(std::span<const Instance> truths, std::span<const Detection> detections,
                  const MatchConfig& cfg) {
  if (cfg.tau_iou < 0 || cfg.tau_iou > 1 || cfg.lambda_score < 0 || cfg.lambda_score > 1) {
    throw Error(ErrorCode::InvalidArgument, "tau_iou and lambda_score must lie in [0, 1]");
  }
  Graph g;
  for (const auto& t : truths) g.truths.push_back(&t);
  for (const auto& d : detections) g.detections.push_back(&d);
  std::sort(g.truths.begin(), g.truths.end(),
            [](auto* a, auto* b) { return a->instance_id < b->instance_id; });
  std::sort(g.detections.begin(), g.detections.end(),
            [](auto* a, auto* b) { return a->detection_id < b->detection_id; });
  g.weight.assign(g.t() * g.d(), 0.0);
  g.admissible.assign(g.t() * g.d(), 0);
  for (std::size_t i = 0; i < g.t(); ++i) {
    const BBox body = body_from_head(g.truths[i]->head, cfg.body);
    for (std::size_t j = 0; j < g.d(); ++j) {
      const double overlap = iou(body, g.detections[j]->person_box);
      if (overlap >= cfg.tau_iou) {
        g.admissible[i * g.d() + j] = 1;
        g.weight[i * g.d() + j] =
            cfg.lambda_score * g.detections[j]->score + (1.0 - cfg.lambda_score) * overlap;
      }
    }
  }
  return g;
}

// Optimal total weight using only the given rows and columns.
double optimum(const Graph& g, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  if (rows.empty()) return 0.0;
  constexpr double kForbidden = 1e6;
  const std::size_t width = cols.size() + rows.size();  // real columns then one dummy per row
  std::vector<double> cost(rows.size() * width, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      cost[r * width + c] = g.ok(rows[r], cols[c]) ? -g.w(rows[r], cols[c]) : kForbidden;
    }
  }
  const auto col_of = detail::hungarian(cost, rows.size(), width);
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (col_of[r] < cols.size()) total += g.w(rows[r], cols[col_of[r]]);
  }
  return total;
}

Assignment to_assignment(const Graph& g, const std::vector<std::size_t>& choice) {
  Assignment a;
  std::vector<char> used(g.d(), 0);
  for (std::size_t i = 0; i < g.t(); ++i) {
    if (choice[i] == kUnmatched) {
      a.unmatched_truths.push_back(g.truths[i]->instance_id);
    } else {
      a.pairs.emplace_back(g.truths[i]->instance_id, g.detections[choice[i]]->detection_id);
      a.total_weight += g.w(i, choice[i]);
      used[choice[i]] = 1;
    }
  }
  for (std::size_t j = 0; j < g.d(); ++j) {
    if (!used[j]) a.unmatched_detections.push_back(g.detections[j]->detection_id);
  }
  return a;
}

}  // namespace

void normalize_scores(std::span<Detection> detections) {
  if (detections.empty()) return;
  auto [lo, hi] = std::minmax_element(detections.begin(), detections.end(),
                                      [](const auto& a, const auto& b) { return a.score < b.score; });
  const double min = lo->score;
  const double range = hi->score - min;
  for (auto& d : detections) d.score = range > 0 ? (d.score - min) / range : 0.5;
}

Assignment match_detections(std::span<const Instance> truths, std::span<const Detection> detections,
                            const MatchConfig& cfg) {
  const Graph g = build_graph(truths, detections, cfg);
  std::vector<std::size_t> all_rows(g.t()), free_cols(g.d());
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
  std::iota(free_cols.begin(), free_cols.end(), std::size_t{0});
  const double best = optimum(g, all_rows, free_cols);

  // Fix truths one at a time, taking the smallest detection that still admits
  // a completion within kTieEps of the optimum.
  std::vector<std::size_t> choice(g.t(), kUnmatched);
  double fixed = 0.0;
  for (std::size_t i = 0; i < g.t(); ++i) {
    const std::vector<std::size_t> rest(all_rows.begin() + static_cast<std::ptrdiff_t>(i) + 1, all_rows.end());
    std::size_t pick = kUnmatched;
    double pick_value = -std::numeric_limits<double>::infinity();
    bool settled = false;
    for (std::size_t c = 0; c < free_cols.size() && !settled; ++c) {
      const std::size_t j = free_cols[c];
      if (!g.ok(i, j)) continue;
      std::vector<std::size_t> remaining = free_cols;
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(c));
      const double value = fixed + g.w(i, j) + optimum(g, rest, remaining);
      if (value >= best - kTieEps) settled = true;
      if (settled || value > pick_value) {
        pick = j;
        pick_value = value;
      }
    }
    if (!settled) {
      const double value = fixed + optimum(g, rest, free_cols);
      if (value >= best - kTieEps || value > pick_value) pick = kUnmatched;
    }
    choice[i] = pick;
    if (pick != kUnmatched) {
      fixed += g.w(i, pick);
      free_cols.erase(std::find(free_cols.begin(), free_cols.end(), pick));
    }
  }
  return to_assignment(g, choice);
}

Assignment match_bruteforce(std::span<const Instance> truths, std::span<const Detection> detections,
                            const MatchConfig& cfg) {
  if (truths.size() > kBruteForceLimit || detections.size() > kBruteForceLimit) {
    throw Error(ErrorCode::InvalidArgument, "match_bruteforce is limited to 8 truths and 8 detections");
  }
  const Graph g = build_graph(truths, detections, cfg);
  struct Candidate {
    double weight;
    std::vector<std::size_t> key;
  };
  std::vector<Candidate> all;
  std::vector<std::size_t> current(g.t(), kUnmatched);
  std::vector<char> used(g.d(), 0);
  std::function<void(std::size_t, double)> recurse = [&](std::size_t i, double acc) {
    if (i == g.t()) {
      all.push_back({acc, current});
      return;
    }
    for (std::size_t j = 0; j < g.d(); ++j) {
      if (used[j] || !g.ok(i, j)) continue;
      used[j] = 1;
      current[i] = j;
      recurse(i + 1, acc + g.w(i, j));
      used[j] = 0;
    }
    current[i] = kUnmatched;
    recurse(i + 1, acc);
  };
  recurse(0, 0.0);

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : all) best = std::max(best, c.weight);
  const Candidate* winner = nullptr;
  for (const auto& c : all) {
    if (c.weight < best - kTieEps) continue;
    if (winner == nullptr || c.key < winner->key) winner = &c;
  }
  return to_assignment(g, winner->key);
}

PartActivationTable activations_per_instance(const Assignment& assignment, std::span<const Instance> truths,
                                             std::span<const Detection> detections,
                                             const BodyExtrapolation& body) {
  std::map<DetectionId, const Detection*> by_id;
  for (const auto& d : detections) by_id.emplace(d.detection_id, &d);
  std::map<InstanceId, DetectionId> matched(assignment.pairs.begin(), assignment.pairs.end());

  PartActivationTable table;
  for (const auto& t : truths) {
    auto& row = table[t.instance_id];
    auto it = matched.find(t.instance_id);
    if (it == matched.end()) {
      row.push_back(PartActivation{0, body_from_head(t.head, body), 1.0});
      continue;
    }
    const Detection* d = by_id.at(it->second);
    row.push_back(PartActivation{0, d->person_box, d->score});
    for (const auto& a : d->activations) {
      if (a.part_id != 0) row.push_back(a);
    }
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.part_id < b.part_id; });
  }
  return table;
}

namespace {

void check_unique_parts(const Detection& d) {
  std::set<std::uint32_t> seen;
  for (const auto& a : d.activations) {
    if (!seen.insert(a.part_id).second) {
      throw Error(ErrorCode::Format, "detection " + std::to_string(d.detection_id) + " repeats part " +
                                         std::to_string(a.part_id));
    }
  }
}

}  // namespace

std::map<std::string, std::vector<Detection>> read_detections(std::istream& in) {
  std::map<std::string, std::vector<Detection>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() < 7 || (f.size() - 7) % 6 != 0) {
      throw Error(ErrorCode::Format, "detection line " + std::to_string(lineno) + " has a bad field count");
    }
    Detection d;
    d.detection_id = parse_u64(f[1]);
    d.person_box = BBox{parse_double(f[2]), parse_double(f[3]), parse_double(f[4]), parse_double(f[5])};
    d.score = parse_double(f[6]);
    for (std::size_t k = 7; k < f.size(); k += 6) {
      d.activations.push_back(PartActivation{
          static_cast<std::uint32_t>(parse_u64(f[k])),
          BBox{parse_double(f[k + 1]), parse_double(f[k + 2]), parse_double(f[k + 3]), parse_double(f[k + 4])},
          parse_double(f[k + 5])});
    }
    check_unique_parts(d);
    out[std::string(f[0])].push_back(std::move(d));
  }
  return out;
}

std::map<std::string, std::vector<Detection>> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_detections(in);
}

namespace {
void put_box(std::ostream& out, const BBox& b) {
  out << format_double(b.x) << '\t' << format_double(b.y) << '\t' << format_double(b.w) << '\t'
      << format_double(b.h);
}
}  // namespace

void write_detections(std::ostream& out, const std::map<std::string, std::vector<Detection>>& by_photo) {
  for (const auto& [photo, dets] : by_photo) {
    for (const auto& d : dets) {
      out << photo << '\t' << d.detection_id << '\t';
      put_box(out, d.person_box);
      out << '\t' << format_double(d.score);
      for (const auto& a : d.activations) {
        out << '\t' << a.part_id << '\t';
        put_box(out, a.patch);
        out << '\t' << format_double(a.score);
      }
      out << '\n';
    }
  }
}

void write_activation_table(std::ostream& out, const PartActivationTable& table) {
  for (const auto& [id, acts] : table) {
    for (const auto& a : acts) {
      out << id << '\t' << a.part_id << '\t';
      put_box(out, a.patch);
      out << '\t' << format_double(a.score) << '\n';
    }
  }
}

PartActivationTable read_activation_table(std::istream& in) {
  PartActivationTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) throw Error(ErrorCode::Format, "activation line needs 7 fields");
    table[parse_u64(f[0])].push_back(PartActivation{
        static_cast<std::uint32_t>(parse_u64(f[1])),
        BBox{parse_double(f[2]), parse_double(f[3]), parse_double(f[4]), parse_double(f[5])},
        parse_double(f[6])});
  }
  return table;
}

}  // namespace piper
