#include "piper/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "piper/error.hpp"
#include "piper/rng.hpp"
#include "piper/simd.hpp"

namespace piper {

bool ComponentMask::enabled(PartKind kind) const {
  switch (kind) {
    case PartKind::Global: return global;
    case PartKind::Face: return face;
    case PartKind::Poselet: return poselets;
  }
  return false;
}

std::string ComponentMask::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(global, "global");
  add(face, "face");
  add(poselets, "poselets");
  return out.empty() ? "none" : out;
}

ComponentMask ComponentMask::parse(std::string_view spec) {
  if (spec == "all") return {};
  ComponentMask m{false, false, false};
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto end = std::min(spec.find(',', start), spec.size());
    const auto tok = spec.substr(start, end - start);
    if (tok == "global") m.global = true;
    else if (tok == "face") m.face = true;
    else if (tok == "poselets") m.poselets = true;
    else throw Error(ErrorCode::InvalidArgument, "unknown component '" + std::string(tok) + "'");
    start = end + 1;
  }
  return m;
}

std::vector<ComponentMask> all_component_masks() {
  return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
          {true, false, true},  {false, true, true},  {true, true, true}};
}

SplitData::SplitData(const Dataset& dataset, Split split, PartRegistry registry,
                     std::shared_ptr<const std::vector<FeatureMatrix>> features)
    : registry_(std::move(registry)), features_(std::move(features)), n_identities_(dataset.identity_count(split)) {
  if (!features_ || features_->size() != registry_.size()) {
    throw Error(ErrorCode::InvalidArgument, "need one feature matrix per registered part");
  }
  for (std::size_t p = 0; p < features_->size(); ++p) {
    const auto& m = (*features_)[p];
    if (m.part_id() != p) throw Error(ErrorCode::InvalidArgument, "feature matrices must be ordered by part id");
    if (!m.normalized()) throw Error(ErrorCode::ContractViolation, "features must be L2-normalized at ingestion");
  }
  for (const Instance* inst : dataset.in_split(split)) {
    ids_.push_back(inst->instance_id);
    labels_.push_back(inst->identity);
  }
  rows_.assign(registry_.size(), std::vector<std::int64_t>(ids_.size(), -1));
  for (std::size_t p = 0; p < registry_.size(); ++p) {
    const auto& m = (*features_)[p];
    std::unordered_map<InstanceId, std::size_t> where;
    for (std::size_t r = 0; r < m.rows(); ++r) where.emplace(m.id(r), r);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      auto it = where.find(ids_[i]);
      if (it != where.end()) rows_[p][i] = static_cast<std::int64_t>(it->second);
    }
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (rows_[0][i] < 0) {
      throw Error(ErrorCode::ContractViolation,
                  "global features missing for instance " + std::to_string(ids_[i]));
    }
  }
}

std::optional<std::span<const double>> SplitData::feature(std::size_t part, std::size_t i) const {
  const auto r = rows_[part][i];
  if (r < 0) return std::nullopt;
  return (*features_)[part].row(static_cast<std::size_t>(r));
}

std::shared_ptr<const std::vector<FeatureMatrix>> load_feature_dir(const std::filesystem::path& dir,
                                                                   const PartRegistry& registry) {
  auto out = std::make_shared<std::vector<FeatureMatrix>>();
  for (const auto& p : registry.parts()) {
    auto m = load_features(dir / feature_file_name(p.part_id));
    if (m.part_id() != p.part_id) throw Error(ErrorCode::Format, "feature file part id mismatch");
    out->push_back(std::move(m));
  }
  return out;
}

std::vector<std::size_t> HalfSplit::members(int h) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < half.size(); ++i) {
    if (half[i] == h) out.push_back(i);
  }
  return out;
}

HalfSplit HalfSplit::swapped() const {
  HalfSplit s = *this;
  for (auto& h : s.half) {
    if (h >= 0) h = 1 - h;
  }
  return s;
}

HalfSplit stratified_half_split(std::span<const IdentityId> labels, std::uint64_t seed) {
  HalfSplit out;
  out.seed = seed;
  out.half.assign(labels.size(), -1);
  std::map<IdentityId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::size_t odd = 0;
  for (auto& [identity, members] : groups) {
    if (members.size() < 2) {
      ++out.excluded_identities;
      out.excluded_instances += members.size();
      continue;
    }
    Rng rng(derive_seed(seed, "half-split", identity));
    rng.shuffle(std::span<std::size_t>(members));
    // Odd-sized identities alternate which half receives the extra instance.
    std::size_t first = members.size() / 2;
    if (members.size() % 2 == 1) first += (odd++ % 2);
    for (std::size_t k = 0; k < members.size(); ++k) out.half[members[k]] = k < first ? 0 : 1;
  }
  return out;
}

std::vector<double> PartModel::predict(std::span<const double> x) const {
  const std::size_t n = coverage.universe();
  std::vector<double> p(n, 0.0);
  if (uniform) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
  } else if (single_class) {
    p[*single_class] = 1.0;
  } else if (model) {
    const auto probs = softmax(score(*model, x));
    for (std::size_t k = 0; k < probs.size(); ++k) p[model->class_index[k]] = probs[k];
  } else {
    throw Error(ErrorCode::ContractViolation, "part " + std::to_string(part_id) + " has no classifier");
  }
  return p;
}

PartModels train_part_models(const SplitData& train, std::span<const std::size_t> train_idx,
                             const ComponentMask& mask, const TrainConfig& cfg) {
  PartModels out;
  out.identities = train.identities();
  const auto& registry = train.registry();
  for (const auto& info : registry.parts()) {
    const std::uint32_t p = info.part_id;
    if (p != 0 && !mask.enabled(info.kind)) continue;
    PartModel pm;
    pm.part_id = p;
    pm.coverage = Coverage(out.identities);
    if (p == 0 && !mask.global) {
      pm.uniform = true;
      pm.coverage = Coverage::all(out.identities);
      out.parts.push_back(std::move(pm));
      continue;
    }
    std::optional<TrainingSet> rows;
    std::vector<IdentityId> labels;
    for (std::size_t i : train_idx) {
      const auto x = train.feature(p, i);
      if (!x) continue;
      if (!rows) rows.emplace(x->size());
      rows->add(train.ids()[i], *x);
      labels.push_back(train.labels()[i]);
      pm.coverage.insert(train.labels()[i]);
    }
    if (pm.coverage.count() >= 2) {
      TrainConfig sub = cfg;
      sub.seed = derive_seed(cfg.seed, "part", p);
      pm.model = train_multiclass(*rows, labels, sub);
    } else if (pm.coverage.count() == 1) {
      pm.single_class = labels.front();
    }
    if (p == 0 && !pm.model && !pm.single_class) {
      throw Error(ErrorCode::DegenerateProblem, "global part has no training instances");
    }
    out.parts.push_back(std::move(pm));
  }
  return out;
}

PartTables apply_part_models(const PartModels& models, const SplitData& data, std::span<const std::size_t> idx) {
  PartTables t;
  for (const auto& pm : models.parts) {
    t.filled.emplace_back(pm.part_id, models.identities);
    t.sparse.emplace_back(pm.part_id, models.identities);
  }
  const PartModel& global = models.parts.front();
  for (std::size_t i : idx) {
    const InstanceId id = data.ids()[i];
    const auto p0 = global.uniform ? global.predict({}) : global.predict(*data.feature(0, i));
    t.filled[0].add(id, true, p0);
    t.sparse[0].add(id, true, p0);
    for (std::size_t k = 1; k < models.parts.size(); ++k) {
      const PartModel& pm = models.parts[k];
      const auto x = data.feature(pm.part_id, i);
      if (x && !pm.coverage.empty()) {
        const auto p_hat = pm.predict(*x);
        t.sparse[k].add(id, true, p_hat);
        t.filled[k].add(id, true, fill_sparsity(std::span<const double>(p_hat), p0, pm.coverage, true));
      } else {
        t.filled[k].add(id, false, p0);
      }
    }
  }
  return t;
}

namespace {

void append_rows(ProbabilityTable& dst, const ProbabilityTable& src) {
  for (std::size_t r = 0; r < src.rows(); ++r) dst.add(src.id(r), src.activated(r), src.row(r));
}

std::vector<const ProbabilityTable*> pointers(const std::vector<ProbabilityTable>& tables) {
  std::vector<const ProbabilityTable*> out;
  for (const auto& t : tables) out.push_back(&t);
  return out;
}

std::unordered_map<InstanceId, IdentityId> label_map(const SplitData& data) {
  std::unordered_map<InstanceId, IdentityId> out;
  for (std::size_t i = 0; i < data.size(); ++i) out.emplace(data.ids()[i], data.labels()[i]);
  return out;
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sigma(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

PartTables cross_predict(const SplitData& data, const HalfSplit& halves, const ComponentMask& mask,
                         const TrainConfig& cfg) {
  PartTables merged;
  for (int h = 0; h < 2; ++h) {
    const auto train_idx = halves.members(1 - h);
    const auto eval_idx = halves.members(h);
    const auto models = train_part_models(data, train_idx, mask, cfg);
    auto fold = apply_part_models(models, data, eval_idx);
    if (h == 0) {
      merged = std::move(fold);
      continue;
    }
    for (std::size_t k = 0; k < fold.filled.size(); ++k) {
      append_rows(merged.filled[k], fold.filled[k]);
      append_rows(merged.sparse[k], fold.sparse[k]);
    }
  }
  return merged;
}

WeightSearchResult learn_protocol_weights(const SplitData& val, const ProtocolConfig& cfg) {
  const auto halves = stratified_half_split(val.labels(), derive_seed(cfg.seed, "val-halves"));
  TrainConfig part_cfg = cfg.part_svm;
  part_cfg.seed = derive_seed(cfg.seed, "val-parts");
  const auto tables = cross_predict(val, halves, cfg.mask, part_cfg);
  std::unordered_map<InstanceId, int> half_of;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (halves.half[i] >= 0) half_of.emplace(val.ids()[i], halves.half[i]);
  }
  LearnWeightsOptions opts = cfg.weights;
  opts.seed = derive_seed(cfg.seed, "weights");
  opts.allow_missing_rows = !cfg.fill;
  opts.registry_size = val.registry().size();
  return learn_weights(cfg.fill ? tables.filled : tables.sparse, label_map(val), half_of, opts);
}

RecognitionResult eval_recognition(const SplitData& test, const HalfSplit& halves, const FusionWeights& w,
                                   const ProtocolConfig& cfg) {
  TrainConfig part_cfg = cfg.part_svm;
  part_cfg.seed = derive_seed(cfg.seed, "test-parts");
  const auto tables = cross_predict(test, halves, cfg.mask, part_cfg);
  const auto ptrs = pointers(cfg.fill ? tables.filled : tables.sparse);

  RecognitionResult out;
  auto& rep = out.report;
  rep.protocol = cfg.fill ? "recognition" : "recognition-no-fill";
  rep.mask = cfg.mask.to_string();
  rep.seed = cfg.seed;
  rep.n_identities = test.identities();
  rep.excluded_identities = halves.excluded_identities;
  rep.excluded_instances = halves.excluded_instances;
  for (int h = 0; h < 2; ++h) {
    const auto members = halves.members(h);
    std::size_t hits = 0;
    for (std::size_t i : members) {
      const InstanceId id = test.ids()[i];
      const auto s = cfg.fill ? fuse(ptrs, w, id) : fuse_sparse(ptrs, w, id);
      const bool ok = predict(s) == test.labels()[i];
      hits += ok ? 1 : 0;
      out.ids.push_back(id);
      out.correct.push_back(ok ? 1 : 0);
    }
    rep.half_accuracy.push_back(members.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(members.size()));
    rep.n_test += members.size();
  }
  rep.n_train = rep.n_test;
  rep.empty = rep.n_test == 0;
  rep.accuracy = mean(rep.half_accuracy);
  return out;
}

RecognitionResult eval_recognition(const SplitData& test, const FusionWeights& w, const ProtocolConfig& cfg) {
  return eval_recognition(test, stratified_half_split(test.labels(), derive_seed(cfg.seed, "test-halves")), w, cfg);
}

RecognitionResult eval_recognition_no_fill(const SplitData& test, const FusionWeights& w, ProtocolConfig cfg) {
  cfg.fill = false;
  return eval_recognition(test, w, cfg);
}

std::pair<EvalReport, EvalReport> eval_faces_split(const RecognitionResult& result, const SplitData& test) {
  const auto face = test.registry().face_part();
  std::unordered_map<InstanceId, std::size_t> index;
  for (std::size_t i = 0; i < test.size(); ++i) index.emplace(test.ids()[i], i);

  EvalReport faces = result.report;
  EvalReport others = result.report;
  faces.protocol = "faces";
  others.protocol = "non-faces";
  std::size_t hits[2] = {0, 0}, total[2] = {0, 0};
  for (std::size_t k = 0; k < result.ids.size(); ++k) {
    const std::size_t i = index.at(result.ids[k]);
    const int bucket = face && test.activated(*face, i) ? 0 : 1;
    ++total[bucket];
    hits[bucket] += result.correct[k];
  }
  EvalReport* reps[2] = {&faces, &others};
  for (int b = 0; b < 2; ++b) {
    reps[b]->half_accuracy.clear();
    reps[b]->n_test = total[b];
    reps[b]->empty = total[b] == 0;
    reps[b]->accuracy = total[b] == 0 ? 0.0 : static_cast<double>(hits[b]) / static_cast<double>(total[b]);
  }
  return {faces, others};
}

EvalReport eval_oneshot(const SplitData& test, const FusionWeights& w, std::span<const std::size_t> shots,
                        std::size_t repeats, const ProtocolConfig& cfg) {
  if (repeats < 2) throw Error(ErrorCode::InvalidArgument, "one-shot evaluation needs at least two repeats");
  if (shots.empty()) throw Error(ErrorCode::InvalidArgument, "no shot counts given");
  std::map<IdentityId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < test.size(); ++i) groups[test.labels()[i]].push_back(i);

  EvalReport rep;
  rep.protocol = "oneshot";
  rep.mask = cfg.mask.to_string();
  rep.seed = cfg.seed;
  rep.n_identities = test.identities();
  for (std::size_t s : shots) {
    if (s == 0) throw Error(ErrorCode::InvalidArgument, "shot count must be positive");
    std::vector<double> accs;
    std::size_t excluded_ids = 0, excluded_inst = 0, n_train = 0, n_test = 0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const std::uint64_t repeat_seed = derive_seed(cfg.seed, "oneshot", r);
      std::vector<std::size_t> train_idx, eval_idx;
      excluded_ids = excluded_inst = 0;
      for (const auto& [identity, members] : groups) {
        if (members.size() <= s) {
          ++excluded_ids;
          excluded_inst += members.size();
          continue;
        }
        std::vector<std::size_t> perm = members;
        Rng rng(derive_seed(repeat_seed, "identity", identity));
        rng.shuffle(std::span<std::size_t>(perm));
        train_idx.insert(train_idx.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s));
        eval_idx.insert(eval_idx.end(), perm.begin() + static_cast<std::ptrdiff_t>(s), perm.end());
      }
      std::sort(train_idx.begin(), train_idx.end());
      std::sort(eval_idx.begin(), eval_idx.end());
      if (train_idx.empty()) {
        // Every identity excluded at this shot count.
        accs.push_back(0.0);
        n_train = n_test = 0;
        continue;
      }
      TrainConfig part_cfg = cfg.part_svm;
      part_cfg.seed = derive_seed(repeat_seed, "parts");
      const auto models = train_part_models(test, train_idx, cfg.mask, part_cfg);
      const auto tables = apply_part_models(models, test, eval_idx);
      const auto ptrs = pointers(cfg.fill ? tables.filled : tables.sparse);
      std::size_t hits = 0;
      for (std::size_t i : eval_idx) {
        const InstanceId id = test.ids()[i];
        const auto sc = cfg.fill ? fuse(ptrs, w, id) : fuse_sparse(ptrs, w, id);
        hits += predict(sc) == test.labels()[i] ? 1 : 0;
      }
      accs.push_back(eval_idx.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(eval_idx.size()));
      n_train = train_idx.size();
      n_test = eval_idx.size();
    }
    rep.curve.push_back({static_cast<double>(s), mean(accs), sample_sigma(accs)});
    if (n_test == 0 && rep.curve.size() == 1) rep.empty = true;
    rep.excluded_identities = std::max(rep.excluded_identities, excluded_ids);
    rep.excluded_instances = std::max(rep.excluded_instances, excluded_inst);
    if (rep.curve.size() == 1) {
      rep.n_train = n_train;
      rep.n_test = n_test;
    }
  }
  rep.accuracy = rep.curve.front().mean;
  return rep;
}

std::vector<std::vector<double>> build_identity_embeddings(const PartModels& val_models, const SplitData& data,
                                                           std::span<const std::size_t> idx,
                                                           const FusionWeights& w, bool global_only) {
  if (val_models.parts.empty() || val_models.parts.front().part_id != 0) {
    throw Error(ErrorCode::ContractViolation, "identity embeddings need the global model");
  }
  const auto tables = apply_part_models(val_models, data, idx);
  const auto ptrs = pointers(tables.filled);
  std::vector<std::vector<double>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const InstanceId id = data.ids()[i];
    if (global_only) {
      const auto r = tables.filled[0].row(*tables.filled[0].find(id));
      out.emplace_back(r.begin(), r.end());
    } else {
      out.push_back(fuse(ptrs, w, id));
    }
  }
  return out;
}

EvalReport eval_retrieval(std::span<const std::vector<double>> embeddings, std::span<const IdentityId> labels,
                          std::span<const InstanceId> ids, std::span<const std::size_t> k_list) {
  const std::size_t n = embeddings.size();
  if (labels.size() != n || ids.size() != n) throw Error(ErrorCode::DimensionMismatch, "retrieval inputs differ in length");
  EvalReport rep;
  rep.protocol = "retrieval";
  rep.n_test = n;
  std::map<IdentityId, std::size_t> count;
  for (auto y : labels) ++count[y];
  rep.n_identities = count.size();

  // Rank (1-based) of the first same-identity neighbor of every valid query.
  std::vector<std::size_t> first_hit;
  std::vector<double> dist(n);
  for (std::size_t q = 0; q < n; ++q) {
    if (count[labels[q]] < 2) {
      ++rep.excluded_instances;
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) dist[j] = j == q ? 0.0 : simd::squared_distance(embeddings[q], embeddings[j]);
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q || labels[j] != labels[q]) continue;
      if (best == n || std::tie(dist[j], ids[j]) < std::tie(dist[best], ids[best])) best = j;
    }
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q && std::tie(dist[j], ids[j]) < std::tie(dist[best], ids[best])) ++ahead;
    }
    first_hit.push_back(ahead + 1);
  }
  for (const auto& [y, c] : count) rep.excluded_identities += c < 2 ? 1 : 0;

  for (std::size_t k : k_list) {
    std::size_t kk = k;
    if (n >= 1 && kk > n - 1) {
      kk = n - 1;
      rep.k_clamped = true;
    }
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [&](std::size_t r) { return r <= kk; });
    const double recall = first_hit.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(first_hit.size());
    rep.curve.push_back({static_cast<double>(k), recall, 0.0});
  }
  rep.empty = first_hit.empty();
  rep.accuracy = rep.curve.empty() ? 0.0 : rep.curve.front().mean;
  return rep;
}

std::pair<EvalReport, EvalReport> eval_retrieval_protocol(const SplitData& val, const SplitData& test,
                                                          const FusionWeights& w,
                                                          std::span<const std::size_t> k_list,
                                                          const ProtocolConfig& cfg) {
  const auto halves = stratified_half_split(val.labels(), derive_seed(cfg.seed, "val-halves"));
  TrainConfig part_cfg = cfg.part_svm;
  part_cfg.seed = derive_seed(cfg.seed, "retrieval-parts");
  const auto models = train_part_models(val, halves.members(0), cfg.mask, part_cfg);
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::pair<EvalReport, EvalReport> out;
  for (bool global_only : {false, true}) {
    const auto emb = build_identity_embeddings(models, test, all, w, global_only);
    auto rep = eval_retrieval(emb, test.labels(), test.ids(), k_list);
    rep.protocol = global_only ? "retrieval-global" : "retrieval";
    rep.mask = global_only ? "global" : cfg.mask.to_string();
    rep.seed = cfg.seed;
    rep.n_train = halves.members(0).size();
    (global_only ? out.second : out.first) = std::move(rep);
  }
  return out;
}

void write_report(std::ostream& out, const EvalReport& r) {
  out << "protocol=" << r.protocol << '\n';
  out << "accuracy=" << format_double(r.accuracy) << '\n';
  for (std::size_t h = 0; h < r.half_accuracy.size(); ++h) {
    out << "half" << h << "_accuracy=" << format_double(r.half_accuracy[h]) << '\n';
  }
  out << "mask=" << r.mask << '\n';
  out << "n_train=" << r.n_train << '\n';
  out << "n_test=" << r.n_test << '\n';
  out << "n_identities=" << r.n_identities << '\n';
  out << "seed=" << r.seed << '\n';
  out << "excluded_identities=" << r.excluded_identities << '\n';
  out << "excluded_instances=" << r.excluded_instances << '\n';
  out << "empty=" << (r.empty ? "true" : "false") << '\n';
  if (r.k_clamped) out << "k_clamped=true\n";
}

void write_curve_csv(std::ostream& out, const EvalReport& r) {
  out << "x,mean,sigma\n";
  for (const auto& p : r.curve) {
    out << format_double(p.x) << ',' << format_double(p.mean) << ',' << format_double(p.sigma) << '\n';
  }
}

}  // namespace piper
