#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "piper/dataset.hpp"
#include "piper/features.hpp"
#include "piper/fusion.hpp"
#include "piper/svm.hpp"

namespace piper {

/// Which of the three cue families take part in a run. A disabled global
/// part is replaced by the uniform distribution, so sparsity filling still
/// has something to fall back on.
struct ComponentMask {
  bool global = true;
  bool face = true;
  bool poselets = true;

  bool enabled(PartKind kind) const;
  std::string to_string() const;
  /// Comma-separated subset of {global, face, poselets}, or "all".
  static ComponentMask parse(std::string_view spec);
  bool operator==(const ComponentMask&) const = default;
};

/// The seven non-empty component combinations, singletons first.
std::vector<ComponentMask> all_component_masks();

/// Instances of one split with their per-part features. Row i of every part
/// refers to instance ids[i]; identities are dense within the split.
class SplitData {
 public:
  SplitData(const Dataset& dataset, Split split, PartRegistry registry,
            std::shared_ptr<const std::vector<FeatureMatrix>> features);

  std::size_t size() const { return ids_.size(); }
  std::size_t identities() const { return n_identities_; }
  const PartRegistry& registry() const { return registry_; }
  const std::vector<InstanceId>& ids() const { return ids_; }
  const std::vector<IdentityId>& labels() const { return labels_; }
  /// Feature of part p on instance i, if the part activated there.
  std::optional<std::span<const double>> feature(std::size_t part, std::size_t i) const;
  bool activated(std::size_t part, std::size_t i) const { return rows_[part][i] >= 0; }

 private:
  PartRegistry registry_;
  std::shared_ptr<const std::vector<FeatureMatrix>> features_;
  std::vector<InstanceId> ids_;
  std::vector<IdentityId> labels_;
  std::size_t n_identities_ = 0;
  std::vector<std::vector<std::int64_t>> rows_;  // [part][instance] -> feature row or -1
};

/// Loads part_XXX.pfv for every registry part from a directory.
std::shared_ptr<const std::vector<FeatureMatrix>> load_feature_dir(const std::filesystem::path& dir,
                                                                   const PartRegistry& registry);

/// Half assignment per split index: 0, 1, or -1 for excluded instances.
struct HalfSplit {
  std::vector<int> half;
  std::uint64_t seed = 0;
  std::size_t excluded_identities = 0;
  std::size_t excluded_instances = 0;

  std::vector<std::size_t> members(int h) const;
  HalfSplit swapped() const;
};

/// Stratified per identity; identities with fewer than two instances are
/// excluded and counted.
HalfSplit stratified_half_split(std::span<const IdentityId> labels, std::uint64_t seed);

/// Trained classifier of one part over the training identity set.
struct PartModel {
  std::uint32_t part_id = 0;
  Coverage coverage;
  std::optional<LinearModel> model;       // two or more classes
  std::optional<IdentityId> single_class; // exactly one class seen
  bool uniform = false;                   // disabled global part

  /// p_hat over the identity universe, zero outside the coverage.
  std::vector<double> predict(std::span<const double> x) const;
};

struct PartModels {
  std::size_t identities = 0;
  std::vector<PartModel> parts;  // part 0 first, then enabled parts in id order
};

PartModels train_part_models(const SplitData& train, std::span<const std::size_t> train_idx,
                             const ComponentMask& mask, const TrainConfig& cfg);

/// Predictions of every trained part on a set of instances.
struct PartTables {
  std::vector<ProbabilityTable> filled;  // one row per instance
  std::vector<ProbabilityTable> sparse;  // activated rows only, p_hat
};

PartTables apply_part_models(const PartModels& models, const SplitData& data, std::span<const std::size_t> idx);

/// Trains on each half, predicts the other one and concatenates the tables.
PartTables cross_predict(const SplitData& data, const HalfSplit& halves, const ComponentMask& mask,
                         const TrainConfig& cfg);

struct CurvePoint {
  double x = 0;
  double mean = 0;
  double sigma = 0;
};

struct EvalReport {
  std::string protocol;
  double accuracy = 0.0;
  std::vector<double> half_accuracy;
  std::string mask = "global,face,poselets";
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_identities = 0;
  std::uint64_t seed = 0;
  std::size_t excluded_identities = 0;
  std::size_t excluded_instances = 0;
  bool empty = false;
  bool k_clamped = false;
  std::vector<CurvePoint> curve;
};

void write_report(std::ostream& out, const EvalReport& report);
void write_curve_csv(std::ostream& out, const EvalReport& report);

struct ProtocolConfig {
  TrainConfig part_svm{.c = 1.0, .epochs = 20};
  LearnWeightsOptions weights;
  ComponentMask mask;
  bool fill = true;
  std::uint64_t seed = 0;
};

/// Learns w on the validation split: cross-predicted tables over a stratified
/// half split, then the pair SVM with the C grid.
WeightSearchResult learn_protocol_weights(const SplitData& val, const ProtocolConfig& cfg);

struct RecognitionResult {
  EvalReport report;
  std::vector<InstanceId> ids;
  std::vector<std::uint8_t> correct;  // aligned with ids
};

/// Half-split recognition: part SVMs trained on one half score the other,
/// predictions are filled (unless cfg.fill is false) and fused with w, and
/// the two half accuracies are averaged.
RecognitionResult eval_recognition(const SplitData& test, const FusionWeights& w, const ProtocolConfig& cfg);
RecognitionResult eval_recognition(const SplitData& test, const HalfSplit& halves, const FusionWeights& w,
                                   const ProtocolConfig& cfg);
RecognitionResult eval_recognition_no_fill(const SplitData& test, const FusionWeights& w, ProtocolConfig cfg);

/// Accuracy on instances where the face part activated, and on the rest.
std::pair<EvalReport, EvalReport> eval_faces_split(const RecognitionResult& result, const SplitData& test);

/// Few-shot protocol: per repeat, `shots` instances per identity train the
/// part SVMs and the remaining instances are scored. Curve x = shots.
EvalReport eval_oneshot(const SplitData& test, const FusionWeights& w, std::span<const std::size_t> shots,
                        std::size_t repeats, const ProtocolConfig& cfg);

/// Fused |Y_val|-dimensional identity vectors for the given instances; with
/// global_only the global distribution alone is returned.
std::vector<std::vector<double>> build_identity_embeddings(const PartModels& val_models, const SplitData& data,
                                                           std::span<const std::size_t> idx,
                                                           const FusionWeights& w, bool global_only = false);

/// recall@K with Euclidean neighbors, the query excluded and distance ties
/// broken by lower instance id. Queries whose identity has a single instance
/// are skipped and counted. Curve x = K, mean = recall.
EvalReport eval_retrieval(std::span<const std::vector<double>> embeddings, std::span<const IdentityId> labels,
                          std::span<const InstanceId> ids, std::span<const std::size_t> k_list);

/// Retrieval protocol: part models trained on validation half 0 embed every
/// test instance over the validation identities. Returns the fused-embedding
/// report and the global-only one.
std::pair<EvalReport, EvalReport> eval_retrieval_protocol(const SplitData& val, const SplitData& test,
                                                          const FusionWeights& w,
                                                          std::span<const std::size_t> k_list,
                                                          const ProtocolConfig& cfg);

}  // namespace piper
