#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "piper/dataset.hpp"
#include "piper/geometry.hpp"

namespace piper {

using DetectionId = std::uint64_t;

struct PartActivation {
  std::uint32_t part_id = 0;
  BBox patch;
  double score = 0.0;
  bool operator==(const PartActivation&) const = default;
};

/// A person hypothesis from the part detector, with the part activations that
/// voted for it. Each part id appears at most once.
struct Detection {
  DetectionId detection_id = 0;
  BBox person_box;
  double score = 0.0;
  std::vector<PartActivation> activations;
};

struct MatchConfig {
  double tau_iou = 0.3;        // admissibility threshold on body/person IoU
  double lambda_score = 0.5;   // weight of the normalized score vs. IoU
  BodyExtrapolation body;
};

struct Assignment {
  std::vector<std::pair<InstanceId, DetectionId>> pairs;  // ascending truth id
  std::vector<InstanceId> unmatched_truths;
  std::vector<DetectionId> unmatched_detections;
  double total_weight = 0.0;
};

/// Min-max normalizes scores over one photo; a constant-score photo maps to 0.5.
void normalize_scores(std::span<Detection> detections);

/// Globally optimal truth/detection assignment (Hungarian solver).
///
/// An edge is admissible iff iou(body_from_head(head), person_box) >= tau_iou;
/// its weight is lambda * score + (1 - lambda) * iou, with scores already
/// normalized. Among matchings whose weight is within 1e-9 of the optimum the
/// one with the lexicographically smallest (truth id -> detection id) sequence
/// wins, where ids are compared in ascending order and "unmatched" sorts last.
Assignment match_detections(std::span<const Instance> truths, std::span<const Detection> detections,
                            const MatchConfig& cfg = {});

/// Exhaustive oracle with the same objective and tie-break; at most 8 x 8.
Assignment match_bruteforce(std::span<const Instance> truths, std::span<const Detection> detections,
                            const MatchConfig& cfg = {});

/// instance id -> activations, ascending part id. Part 0 (global) is always
/// present; its patch is the matched person box, or the extrapolated body for
/// unmatched truths.
using PartActivationTable = std::map<InstanceId, std::vector<PartActivation>>;

PartActivationTable activations_per_instance(const Assignment& assignment, std::span<const Instance> truths,
                                             std::span<const Detection> detections,
                                             const BodyExtrapolation& body = {});

namespace detail {
/// Rectangular min-cost assignment, rows <= cols. Returns the column of each row.
std::vector<std::size_t> hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);
}  // namespace detail

// Detection file: one detection per line, tab-separated:
//   photo_id, detection_id, x, y, w, h, score, then repeated groups of
//   part_id, x, y, w, h, activation_score.
std::map<std::string, std::vector<Detection>> read_detections(std::istream& in);
std::map<std::string, std::vector<Detection>> load_detections(const std::filesystem::path& path);
void write_detections(std::ostream& out, const std::map<std::string, std::vector<Detection>>& by_photo);

// Activation table file: one line per (instance, part):
//   instance_id, part_id, x, y, w, h, activation_score
void write_activation_table(std::ostream& out, const PartActivationTable& table);
PartActivationTable read_activation_table(std::istream& in);

}  // namespace piper
