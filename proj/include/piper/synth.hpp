#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "piper/dataset.hpp"
#include "piper/features.hpp"
#include "piper/matching.hpp"

namespace piper {

/// Parameters of the synthetic stand-in for CNN part features.
///
/// Every identity gets one prototype per part. Each instance draws a latent
/// pose independently of its identity; part i fires with probability
/// activation_prob[i][pose], and a fired part emits prototype + Gaussian noise.
/// Global features also carry a per-pose offset shared by all identities.
/// Per-part vectors are indexed by part id (0 = global); activation_prob[0]
/// is ignored because the global part always fires.
struct SynthConfig {
  std::size_t n_identities = 40;      // test split
  std::size_t n_val_identities = 40;
  std::size_t n_train_identities = 0;
  std::size_t min_instances = 20;
  std::size_t max_instances = 20;
  std::size_t n_poselets = 8;
  bool face = true;
  std::size_t pose_states = 4;
  std::vector<std::size_t> feature_dim;
  std::vector<std::vector<double>> activation_prob;
  std::vector<double> noise_sigma;
  std::vector<double> informativeness;
  double pose_offset = 0.0;           // scale of the global per-pose offset
  std::size_t identities_per_uploader = 4;
  std::size_t albums_per_uploader = 3;
  std::size_t max_people_per_photo = 3;
  double false_positive_rate = 0.3;   // extra unmatched detections per photo
  std::uint64_t seed = 42;

  std::size_t parts() const { return 1 + n_poselets + (face ? 1 : 0); }
  /// Throws InvalidArgument on inconsistent sizes or out-of-range values.
  void validate() const;
};

/// The desk-scale benchmark: 40 x 20 instances per evaluated split, 8
/// poselets with pose-dependent firing between 0.05 and 0.6, and a face part
/// that fires on about half of the instances.
SynthConfig default_synth_config();

/// Overrides fields of `base` with whatever keys are present in `j`.
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = default_synth_config());
nlohmann::json to_json(const SynthConfig& cfg);

struct SynthOutput {
  std::vector<IndexRecord> records;
  PartRegistry registry;
  std::map<std::string, std::vector<Detection>> detections;  // by photo, raw scores
  std::vector<FeatureMatrix> features;                        // by part id, not normalized
  PartActivationTable truth_activations;                      // which parts fired, by instance
  std::vector<std::size_t> pose;                              // latent pose, aligned with records
};

SynthOutput generate(const SynthConfig& cfg);

/// Writes dataset.tsv, registry.tsv, detections.tsv, truth_activations.tsv,
/// synth_config.json and features/part_XXX.pfv. Returns the written paths
/// relative to `dir`.
std::vector<std::filesystem::path> write_synth(const SynthOutput& out, const SynthConfig& cfg,
                                               const std::filesystem::path& dir);

}  // namespace piper
