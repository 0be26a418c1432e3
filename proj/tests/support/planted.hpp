#pragma once

// Planted weight-learning benchmark: one part whose rows peak on the true
// identity, every other part a random distribution unrelated to it.

#include <cmath>
#include <unordered_map>
#include <vector>

#include "piper/fusion.hpp"
#include "piper/rng.hpp"

namespace piper::testing {

struct PlantedTables {
  std::vector<ProbabilityTable> tables;
  std::unordered_map<InstanceId, IdentityId> labels;
  std::unordered_map<InstanceId, int> halves;
  std::uint32_t informative = 0;
};

inline PlantedTables make_planted(std::uint64_t seed, std::size_t parts = 6, std::size_t identities = 20,
                                  std::size_t per_identity = 8) {
  Rng rng(seed);
  PlantedTables out;
  out.informative = static_cast<std::uint32_t>(rng.below(parts));
  for (std::uint32_t p = 0; p < parts; ++p) out.tables.emplace_back(p, identities);
  std::vector<double> row(identities);
  InstanceId id = 1;
  for (IdentityId y = 0; y < identities; ++y) {
    for (std::size_t k = 0; k < per_identity; ++k, ++id) {
      out.labels[id] = y;
      out.halves[id] = static_cast<int>(k % 2);
      for (std::uint32_t p = 0; p < parts; ++p) {
        double total = 0.0;
        for (std::size_t j = 0; j < identities; ++j) {
          // Exponentials give a flat Dirichlet draw; the planted part adds a
          // logit bump on the truth.
          double v = p == out.informative ? std::exp(rng.normal() + (j == y ? 3.0 : 0.0))
                                          : -std::log(1.0 - rng.uniform());
          row[j] = v;
          total += v;
        }
        for (double& v : row) v /= total;
        out.tables[p].add(id, true, row);
      }
    }
  }
  return out;
}

}  // namespace piper::testing
