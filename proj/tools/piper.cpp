// piper: command-line front end for the sparse part fusion pipeline.
//
//   synth          generate a synthetic benchmark
//   match          assign detections to annotated heads
//   train-parts    cross-predicted part probability tables for one split
//   learn-weights  mixing weights from cross-predicted tables
//   eval           run an evaluation protocol
//
// Every command writes manifest.json next to its outputs.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "piper/error.hpp"
#include "piper/features.hpp"
#include "piper/fusion.hpp"
#include "piper/io.hpp"
#include "piper/matching.hpp"
#include "piper/protocols.hpp"
#include "piper/rng.hpp"
#include "piper/simd.hpp"
#include "piper/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace piper;

namespace {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

// Digests of a file, or of every regular file below a directory.
void digest_input(json& inputs, const std::string& path) {
  const fs::path p(path);
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) inputs[(fs::path(path) / fs::relative(f, p)).generic_string()] = sha256_hex(read_file(f));
  } else {
    inputs[path] = sha256_hex(read_file(p));
  }
}

// Collects outputs of one command and writes the manifest last.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const fs::path& rel, const std::string& contents) {
    fs::create_directories((dir_ / rel).parent_path());
    write_file_atomic(dir_ / rel, contents);
    digests_[rel.generic_string()] = sha256_hex(contents);
  }
  void record(const fs::path& rel) { digests_[rel.generic_string()] = sha256_hex(read_file(dir_ / rel)); }
  const fs::path& dir() const { return dir_; }

  void finish(const std::string& command, const json& config, const std::vector<std::string>& inputs,
              std::uint64_t seed) {
    json in = json::object();
    for (const auto& p : inputs) {
      if (!p.empty()) digest_input(in, p);
    }
    json manifest{{"command", command},
                  {"version", PIPER_VERSION},
                  {"seed", seed},
                  {"simd", simd::to_string(simd::active_isa())},
                  {"config", config},
                  {"inputs", in},
                  {"outputs", digests_}};
    write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> digests_;
};

template <class F>
std::string to_bytes(F&& writer) {
  std::ostringstream s(std::ios::binary);
  writer(s);
  return s.str();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_double(item));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty list '" + text + "'");
  return out;
}

std::string c_grid_string(const std::vector<double>& grid) {
  std::string s;
  for (double c : grid) s += (s.empty() ? "" : ",") + format_double(c);
  return s;
}

// Tables written as <dir>/part_XXX.ppt.
std::vector<ProbabilityTable> load_table_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::Io, "no .ppt tables in " + dir.string());
  std::vector<ProbabilityTable> out;
  for (const auto& f : files) out.push_back(load_probability_table(f));
  return out;
}

std::string table_name(std::uint32_t part) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part_%03u.ppt", part);
  return buf;
}

std::string model_name(std::uint32_t part) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part_%03u.plm", part);
  return buf;
}

std::string report_bytes(const EvalReport& r) {
  return to_bytes([&](std::ostream& o) { write_report(o, r); });
}

std::string curve_bytes(const EvalReport& r) {
  return to_bytes([&](std::ostream& o) { write_curve_csv(o, r); });
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  SynthConfig cfg = default_synth_config();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + a.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Format, a.config + ": " + e.what());
    }
    cfg = synth_config_from_json(j);
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  Outputs out(a.out);
  const auto generated = generate(cfg);
  for (const auto& rel : write_synth(generated, cfg, out.dir())) out.record(rel);
  out.finish("synth", to_json(cfg), {a.config}, cfg.seed);
}

// ---- match -----------------------------------------------------------------

struct MatchArgs {
  std::string dataset;
  std::string detections;
  double tau = 0.3;
  double lambda = 0.5;
  std::string out;
};

void run_match(const MatchArgs& a) {
  const Dataset ds = load_dataset(a.dataset);
  auto by_photo = load_detections(a.detections);
  MatchConfig cfg;
  cfg.tau_iou = a.tau;
  cfg.lambda_score = a.lambda;

  std::map<std::string, std::vector<Instance>> truths;
  for (const auto& inst : ds.instances()) truths[inst.photo_id].push_back(inst);

  PartActivationTable table;
  std::size_t matched = 0, unmatched_truths = 0, unmatched_dets = 0;
  const std::vector<Detection> none;
  for (const auto& [photo, ts] : truths) {
    auto it = by_photo.find(photo);
    std::vector<Detection> dets = it == by_photo.end() ? none : it->second;
    normalize_scores(dets);
    const auto assignment = match_detections(ts, dets, cfg);
    matched += assignment.pairs.size();
    unmatched_truths += assignment.unmatched_truths.size();
    unmatched_dets += assignment.unmatched_detections.size();
    table.merge(activations_per_instance(assignment, ts, dets, cfg.body));
  }
  for (const auto& [photo, dets] : by_photo) {
    if (truths.count(photo) == 0) unmatched_dets += dets.size();
  }

  Outputs out(a.out);
  out.write("activations.tsv", to_bytes([&](std::ostream& o) { write_activation_table(o, table); }));
  out.write("summary.txt", "matched=" + std::to_string(matched) + "\nunmatched_truths=" +
                               std::to_string(unmatched_truths) + "\nunmatched_detections=" +
                               std::to_string(unmatched_dets) + "\n");
  out.finish("match", json{{"tau_iou", a.tau}, {"lambda_score", a.lambda}}, {a.dataset, a.detections}, 0);
}

// ---- shared data loading ---------------------------------------------------

struct DataArgs {
  std::string dataset;
  std::string registry;
  std::string features;
};

struct LoadedData {
  Dataset dataset;
  PartRegistry registry;
  std::shared_ptr<const std::vector<FeatureMatrix>> features;
};

LoadedData load_data(const DataArgs& a) {
  LoadedData d;
  d.dataset = load_dataset(a.dataset);
  d.registry = load_registry(a.registry);
  d.features = load_feature_dir(a.features, d.registry);
  return d;
}

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--dataset", a.dataset, "dataset index (TSV)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--registry", a.registry, "part registry (TSV)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--features", a.features, "directory of part_XXX.pfv files")->required()->check(CLI::ExistingDirectory);
}

// ---- train-parts -----------------------------------------------------------

struct TrainPartsArgs {
  DataArgs data;
  std::string split = "val";
  std::string mask = "all";
  double c = 1.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  std::string out;
};

void run_train_parts(const TrainPartsArgs& a) {
  const auto d = load_data(a.data);
  const Split split = parse_split(a.split);
  const SplitData data(d.dataset, split, d.registry, d.features);
  const auto mask = ComponentMask::parse(a.mask);
  // Same sub-seeds as weight learning inside the protocols.
  const auto halves = stratified_half_split(data.labels(), derive_seed(a.seed, "val-halves"));
  TrainConfig cfg;
  cfg.c = a.c;
  cfg.epochs = a.epochs;
  cfg.seed = derive_seed(a.seed, "val-parts");

  Outputs out(a.out);
  PartTables merged;
  for (int h = 0; h < 2; ++h) {
    const auto models = train_part_models(data, halves.members(h), mask, cfg);
    for (const auto& pm : models.parts) {
      if (!pm.model) continue;
      out.write(fs::path("models") / ("half" + std::to_string(h)) / model_name(pm.part_id),
                to_bytes([&](std::ostream& o) { write_model(o, *pm.model); }));
    }
    // Models trained on half h score the other half.
    auto fold = apply_part_models(models, data, halves.members(1 - h));
    if (merged.filled.empty()) {
      merged = std::move(fold);
      continue;
    }
    for (std::size_t k = 0; k < fold.filled.size(); ++k) {
      for (std::size_t r = 0; r < fold.filled[k].rows(); ++r) {
        merged.filled[k].add(fold.filled[k].id(r), fold.filled[k].activated(r), fold.filled[k].row(r));
      }
      for (std::size_t r = 0; r < fold.sparse[k].rows(); ++r) {
        merged.sparse[k].add(fold.sparse[k].id(r), true, fold.sparse[k].row(r));
      }
    }
  }
  for (std::size_t k = 0; k < merged.filled.size(); ++k) {
    const auto part = merged.filled[k].part_id();
    out.write(fs::path("filled") / table_name(part),
              to_bytes([&](std::ostream& o) { write_probability_table(o, merged.filled[k]); }));
    out.write(fs::path("sparse") / table_name(part),
              to_bytes([&](std::ostream& o) { write_probability_table(o, merged.sparse[k]); }));
  }
  std::string halves_tsv;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (halves.half[i] >= 0) halves_tsv += std::to_string(data.ids()[i]) + '\t' + std::to_string(halves.half[i]) + '\n';
  }
  out.write("halves.tsv", halves_tsv);
  out.finish("train-parts",
             json{{"split", a.split}, {"mask", mask.to_string()}, {"c", a.c}, {"epochs", a.epochs},
                  {"excluded_identities", halves.excluded_identities},
                  {"excluded_instances", halves.excluded_instances}},
             {a.data.dataset, a.data.registry, a.data.features}, a.seed);
}

// ---- learn-weights ---------------------------------------------------------

struct LearnArgs {
  std::string tables;
  std::string dataset;
  std::string halves;
  std::string split = "val";
  std::string c_grid;
  bool allow_missing = false;
  bool clamp = false;
  std::size_t epochs = 15;
  std::uint64_t seed = 0;
  std::string out;
};

void run_learn_weights(const LearnArgs& a) {
  const auto tables = load_table_dir(a.tables);
  const Dataset ds = load_dataset(a.dataset);
  const Split split = parse_split(a.split);
  std::unordered_map<InstanceId, IdentityId> labels;
  for (const auto* inst : ds.in_split(split)) labels.emplace(inst->instance_id, inst->identity);

  std::unordered_map<InstanceId, int> halves;
  std::ifstream hin(a.halves);
  if (!hin) throw Error(ErrorCode::Io, "cannot open " + a.halves);
  std::string line;
  while (std::getline(hin, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 2) throw Error(ErrorCode::Format, "halves line needs 2 fields");
    const auto h = parse_u64(f[1]);
    if (h > 1) throw Error(ErrorCode::Format, "half must be 0 or 1");
    halves[parse_u64(f[0])] = static_cast<int>(h);
  }

  LearnWeightsOptions opts;
  if (!a.c_grid.empty()) opts.c_grid = parse_list(a.c_grid);
  opts.seed = derive_seed(a.seed, "weights");
  opts.epochs = a.epochs;
  opts.allow_missing_rows = a.allow_missing;
  opts.clamp_nonnegative = a.clamp;
  const auto result = learn_weights(tables, labels, halves, opts);

  Outputs out(a.out);
  out.write("weights.tsv", to_bytes([&](std::ostream& o) { write_weights(o, result.weights); }));
  std::string grid = "c,balanced_accuracy\n";
  for (std::size_t g = 0; g < opts.c_grid.size(); ++g) {
    grid += format_double(opts.c_grid[g]) + ',' + format_double(result.balanced_accuracy[g]) + '\n';
  }
  out.write("c_grid.csv", grid);
  out.finish("learn-weights",
             json{{"split", a.split}, {"c_grid", c_grid_string(opts.c_grid)}, {"best_c", result.best_c},
                  {"epochs", a.epochs}, {"allow_missing_rows", a.allow_missing}, {"clamp_nonnegative", a.clamp}},
             {a.tables, a.dataset, a.halves}, a.seed);
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  std::string protocol = "recognition";
  std::string weights;
  std::string mask = "all";
  std::string c_grid;
  std::string shots = "1,2,3";
  std::size_t repeats = 10;
  std::string ks = "1,2,5,10,20";
  double c = 1.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  std::string out;
};

void run_eval(const EvalArgs& a) {
  static const std::vector<std::string> protocols{"recognition", "recognition-no-fill", "oneshot",
                                                  "retrieval",   "ablation",            "faces-split"};
  if (std::find(protocols.begin(), protocols.end(), a.protocol) == protocols.end()) {
    throw Error(ErrorCode::InvalidArgument, "unknown protocol '" + a.protocol + "'");
  }
  const auto d = load_data(a.data);
  const SplitData test(d.dataset, Split::Test, d.registry, d.features);
  std::optional<SplitData> val;
  if (d.dataset.identity_count(Split::Val) > 0) val.emplace(d.dataset, Split::Val, d.registry, d.features);

  ProtocolConfig pc;
  pc.seed = a.seed;
  pc.mask = ComponentMask::parse(a.mask);
  pc.fill = a.protocol != "recognition-no-fill";
  pc.part_svm.c = a.c;
  pc.part_svm.epochs = a.epochs;
  if (!a.c_grid.empty()) pc.weights.c_grid = parse_list(a.c_grid);

  Outputs out(a.out);
  auto weights_for = [&](const ProtocolConfig& cfg) {
    if (!a.weights.empty()) return load_weights(a.weights);
    if (!val) throw Error(ErrorCode::InvalidArgument, "no --weights given and the dataset has no val split");
    return learn_protocol_weights(*val, cfg).weights;
  };
  auto save_weights_if_learned = [&](const fs::path& rel, const FusionWeights& w) {
    if (a.weights.empty()) out.write(rel, to_bytes([&](std::ostream& o) { write_weights(o, w); }));
  };

  json extra = json::object();
  if (a.protocol == "recognition" || a.protocol == "recognition-no-fill") {
    const auto w = weights_for(pc);
    save_weights_if_learned("weights.tsv", w);
    const auto r = eval_recognition(test, w, pc);
    out.write("report.txt", report_bytes(r.report));
    out.write("curve.csv", curve_bytes(r.report));
  } else if (a.protocol == "faces-split") {
    const auto w = weights_for(pc);
    save_weights_if_learned("weights.tsv", w);
    const auto r = eval_recognition(test, w, pc);
    const auto [faces, others] = eval_faces_split(r, test);
    out.write("report.txt", report_bytes(r.report));
    out.write("report_faces.txt", report_bytes(faces));
    out.write("report_nonfaces.txt", report_bytes(others));
  } else if (a.protocol == "oneshot") {
    const auto w = weights_for(pc);
    save_weights_if_learned("weights.tsv", w);
    std::vector<std::size_t> shots;
    for (double s : parse_list(a.shots)) shots.push_back(static_cast<std::size_t>(s));
    const auto r = eval_oneshot(test, w, shots, a.repeats, pc);
    out.write("report.txt", report_bytes(r));
    out.write("curve.csv", curve_bytes(r));
    extra["shots"] = a.shots;
    extra["repeats"] = a.repeats;
  } else if (a.protocol == "retrieval") {
    if (!val) throw Error(ErrorCode::InvalidArgument, "retrieval needs a val split");
    const auto w = weights_for(pc);
    save_weights_if_learned("weights.tsv", w);
    std::vector<std::size_t> ks;
    for (double k : parse_list(a.ks)) ks.push_back(static_cast<std::size_t>(k));
    const auto [fused, global] = eval_retrieval_protocol(*val, test, w, ks, pc);
    out.write("report.txt", report_bytes(fused));
    out.write("curve.csv", curve_bytes(fused));
    out.write("report_global.txt", report_bytes(global));
    out.write("curve_global.csv", curve_bytes(global));
    extra["k"] = a.ks;
  } else {  // ablation
    if (!a.weights.empty()) throw Error(ErrorCode::InvalidArgument, "ablation learns one weight vector per mask");
    std::string table = "mask,accuracy,half0_accuracy,half1_accuracy\n";
    for (const auto& mask : all_component_masks()) {
      ProtocolConfig mc = pc;
      mc.mask = mask;
      const auto w = weights_for(mc);
      const auto r = eval_recognition(test, w, mc);
      table += '"' + mask.to_string() + "\"," + format_double(r.report.accuracy) + ',' +
               format_double(r.report.half_accuracy[0]) + ',' + format_double(r.report.half_accuracy[1]) + '\n';
      std::string name = mask.to_string();
      std::replace(name.begin(), name.end(), ',', '+');
      out.write(fs::path("masks") / (name + ".txt"), report_bytes(r.report));
      out.write(fs::path("masks") / (name + "_weights.tsv"), to_bytes([&](std::ostream& o) { write_weights(o, w); }));
    }
    out.write("ablation.csv", table);
  }

  json config{{"protocol", a.protocol}, {"mask", pc.mask.to_string()}, {"part_c", a.c}, {"epochs", a.epochs},
              {"c_grid", c_grid_string(pc.weights.c_grid)}, {"weights_learned", a.weights.empty()}};
  config.update(extra);
  out.finish("eval", config, {a.data.dataset, a.data.registry, a.data.features, a.weights}, a.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse part fusion for person recognition"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(PIPER_VERSION));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic benchmark");
  s->add_option("--config", synth.config, "JSON overrides of the default config")->check(CLI::ExistingFile);
  s->add_option("--seed", synth.seed, "overrides the config seed");
  s->add_option("--out", synth.out, "output directory (created)")->required();

  MatchArgs match;
  auto* m = app.add_subcommand("match", "match detections to annotated heads");
  m->add_option("--dataset", match.dataset, "dataset index (TSV)")->required()->check(CLI::ExistingFile);
  m->add_option("--detections", match.detections, "detection file (TSV)")->required()->check(CLI::ExistingFile);
  m->add_option("--tau-iou", match.tau, "admissibility threshold on body IoU")->check(CLI::Range(0.0, 1.0));
  m->add_option("--lambda-score", match.lambda, "score vs IoU trade-off")->check(CLI::Range(0.0, 1.0));
  m->add_option("--out", match.out, "output directory")->required();

  TrainPartsArgs tp;
  auto* t = app.add_subcommand("train-parts", "train part SVMs on each half and cross-predict");
  add_data_options(t, tp.data);
  t->add_option("--split", tp.split, "split to use (train, val, test)");
  t->add_option("--mask", tp.mask, "components: all or a subset of global,face,poselets");
  t->add_option("--c", tp.c, "part SVM C")->check(CLI::PositiveNumber);
  t->add_option("--epochs", tp.epochs, "part SVM epochs")->check(CLI::PositiveNumber);
  t->add_option("--seed", tp.seed, "seed");
  t->add_option("--out", tp.out, "output directory")->required();

  LearnArgs lw;
  auto* l = app.add_subcommand("learn-weights", "learn mixing weights from cross-predicted tables");
  l->add_option("--tables", lw.tables, "directory of part_XXX.ppt tables")->required()->check(CLI::ExistingDirectory);
  l->add_option("--dataset", lw.dataset, "dataset index (labels)")->required()->check(CLI::ExistingFile);
  l->add_option("--halves", lw.halves, "halves.tsv from train-parts")->required()->check(CLI::ExistingFile);
  l->add_option("--split", lw.split, "split the tables belong to");
  l->add_option("--c-grid", lw.c_grid, "comma-separated C values (default 2^-8,2^-6,...,2^8)");
  l->add_flag("--allow-missing", lw.allow_missing, "treat missing rows as zero (unfilled tables)");
  l->add_flag("--clamp-nonnegative", lw.clamp, "clamp learned weights at 0");
  l->add_option("--epochs", lw.epochs, "pair SVM epochs")->check(CLI::PositiveNumber);
  l->add_option("--seed", lw.seed, "seed");
  l->add_option("--out", lw.out, "output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "run an evaluation protocol on the test split");
  add_data_options(e, ev.data);
  e->add_option("--protocol", ev.protocol,
                "recognition, recognition-no-fill, oneshot, retrieval, ablation or faces-split");
  e->add_option("--weights", ev.weights, "weights file; learned on val when omitted")->check(CLI::ExistingFile);
  e->add_option("--mask", ev.mask, "components: all or a subset of global,face,poselets");
  e->add_option("--c-grid", ev.c_grid, "C grid for weight learning");
  e->add_option("--shots", ev.shots, "one-shot training sizes");
  e->add_option("--repeats", ev.repeats, "one-shot repeats");
  e->add_option("--k", ev.ks, "retrieval K list");
  e->add_option("--c", ev.c, "part SVM C")->check(CLI::PositiveNumber);
  e->add_option("--epochs", ev.epochs, "part SVM epochs")->check(CLI::PositiveNumber);
  e->add_option("--seed", ev.seed, "seed");
  e->add_option("--out", ev.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*s) run_synth(synth);
    if (*m) run_match(match);
    if (*t) run_train_parts(tp);
    if (*l) run_learn_weights(lw);
    if (*e) run_eval(ev);
  } catch (const std::exception& err) {
    std::cerr << "piper: error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
