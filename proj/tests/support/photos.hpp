#pragma once

// Random single-photo matching problems: heads on a loose grid, detections
// jittered around the implied bodies, some of them unrelated.

#include <vector>

#include "piper/matching.hpp"
#include "piper/rng.hpp"

namespace piper::testing {

struct Photo {
  std::vector<Instance> truths;
  std::vector<Detection> detections;
};

inline Photo random_photo(Rng& rng, std::size_t max_truths, std::size_t max_detections) {
  Photo p;
  const std::size_t t = rng.below(max_truths + 1);
  const std::size_t d = rng.below(max_detections + 1);
  for (std::size_t i = 0; i < t; ++i) {
    Instance inst;
    inst.instance_id = 100 + rng.below(1000) * 16 + i;  // unique, unordered
    inst.photo_id = "p";
    inst.head = BBox{rng.uniform(0, 120), rng.uniform(0, 40), rng.uniform(8, 14), rng.uniform(8, 14)};
    p.truths.push_back(inst);
  }
  for (std::size_t j = 0; j < d; ++j) {
    Detection det;
    det.detection_id = 7 + rng.below(1000) * 16 + j;
    BBox box{rng.uniform(-20, 120), rng.uniform(0, 40), 36, 72};
    if (t > 0 && rng.bernoulli(0.7)) {
      const BBox body = body_from_head(p.truths[rng.below(t)].head);
      box = BBox{body.x + rng.uniform(-8, 8), body.y + rng.uniform(-8, 8), body.w * rng.uniform(0.8, 1.2),
                 body.h * rng.uniform(0.8, 1.2)};
    }
    det.person_box = box;
    // Coarse scores make exact ties common.
    det.score = static_cast<double>(rng.below(4));
    p.detections.push_back(det);
  }
  normalize_scores(p.detections);
  return p;
}

}  // namespace piper::testing
