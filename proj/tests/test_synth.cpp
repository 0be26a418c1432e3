#include "doctest.h"

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <map>
#include <set>

#include "piper/error.hpp"
#include "piper/io.hpp"
#include "piper/matching.hpp"
#include "piper/synth.hpp"

using namespace piper;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("piper_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<Instance> truths_of(const Dataset& ds, const std::string& photo) {
  std::vector<Instance> out;
  for (const auto& inst : ds.instances()) {
    if (inst.photo_id == photo) out.push_back(inst);
  }
  return out;
}

}  // namespace

TEST_CASE("default config shape") {
  const auto cfg = default_synth_config();
  CHECK(cfg.parts() == 10);
  CHECK_NOTHROW(cfg.validate());
  double face = 0;
  for (double a : cfg.activation_prob.back()) face += a / 4;
  CHECK(face == doctest::Approx(0.52));
  for (std::size_t p = 1; p < cfg.parts(); ++p) {
    for (double a : cfg.activation_prob[p]) {
      if (p + 1 < cfg.parts()) {
        CHECK(a >= 0.05);
        CHECK(a <= 0.6);
      }
    }
  }
  const auto out = generate(cfg);
  const Dataset ds(out.records);
  CHECK(ds.identity_count(Split::Test) == 40);
  CHECK(ds.in_split(Split::Test).size() == 800);
  CHECK(out.registry.face_part() == 9u);
}

TEST_CASE("config validation and json") {
  auto cfg = default_synth_config();
  cfg.min_instances = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_synth_config();
  cfg.activation_prob[3][1] = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = default_synth_config();
  cfg.noise_sigma.pop_back();
  CHECK_THROWS_AS(cfg.validate(), Error);

  const auto j = to_json(default_synth_config());
  const auto back = synth_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(synth_config_from_json(nlohmann::json{{"seed", 7}}).seed == 7);
  CHECK_THROWS_AS(synth_config_from_json(nlohmann::json{{"sede", 7}}), Error);
  CHECK_THROWS_AS(synth_config_from_json(nlohmann::json{{"seed", "x"}}), Error);
  CHECK_THROWS_AS(synth_config_from_json(nlohmann::json{{"max_instances", 1}}), Error);
}

TEST_CASE("same seed gives byte-identical files") {
  const auto cfg = default_synth_config();
  const auto a = scratch("a"), b = scratch("b");
  const auto files = write_synth(generate(cfg), cfg, a);
  write_synth(generate(cfg), cfg, b);
  CHECK(files.size() == 5 + cfg.parts());
  for (const auto& f : files) CHECK(read_file(a / f) == read_file(b / f));

  auto other = cfg;
  other.seed = 43;
  const auto c = scratch("c");
  write_synth(generate(other), other, c);
  CHECK(read_file(a / "features" / "part_000.pfv") != read_file(c / "features" / "part_000.pfv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("activation rates follow the configuration") {
  const auto cfg = default_synth_config();
  const auto out = generate(cfg);
  for (std::size_t p = 1; p < cfg.parts(); ++p) {
    double expected = 0;
    std::size_t fired = 0;
    for (std::size_t r = 0; r < out.records.size(); ++r) {
      expected += cfg.activation_prob[p][out.pose[r]];
      fired += out.features[p].contains(out.records[r].instance_id);
    }
    const double n = static_cast<double>(out.records.size());
    CHECK(std::fabs(static_cast<double>(fired) / n - expected / n) <= 0.05);
    // Against the configured pose-averaged rate as well.
    double configured = 0;
    for (double a : cfg.activation_prob[p]) configured += a / static_cast<double>(cfg.pose_states);
    CHECK(std::fabs(static_cast<double>(fired) / n - configured) <= 0.05);
  }
  for (const auto& r : out.records) CHECK(out.features[0].contains(r.instance_id));
}

TEST_CASE("activation is independent of identity") {
  const auto cfg = default_synth_config();
  const auto out = generate(cfg);
  std::map<std::string, std::size_t> column;
  for (const auto& r : out.records) column.emplace(r.identity_label, column.size());
  const std::size_t k = column.size();
  // One test per poselet/face part; Bonferroni keeps the family level at 0.01.
  const double alpha = 0.01 / static_cast<double>(cfg.parts() - 1);
  for (std::size_t p = 1; p < cfg.parts(); ++p) {
    std::vector<double> on(k, 0), total(k, 0);
    for (const auto& r : out.records) {
      const std::size_t c = column.at(r.identity_label);
      total[c] += 1;
      on[c] += out.features[p].contains(r.instance_id) ? 1 : 0;
    }
    double n = 0, n_on = 0;
    for (std::size_t c = 0; c < k; ++c) {
      n += total[c];
      n_on += on[c];
    }
    double stat = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e1 = total[c] * n_on / n, e0 = total[c] * (n - n_on) / n;
      stat += (on[c] - e1) * (on[c] - e1) / e1 + (total[c] - on[c] - e0) * (total[c] - on[c] - e0) / e0;
    }
    const boost::math::chi_squared dist(static_cast<double>(k - 1));
    const double critical = boost::math::quantile(boost::math::complement(dist, alpha));
    INFO("part " << p << " statistic " << stat << " critical " << critical);
    CHECK(stat < critical);
  }
}

TEST_CASE("splits and uploaders are consistent") {
  const auto out = generate(default_synth_config());
  const Dataset ds(out.records);  // validates identity and uploader rules
  std::map<std::string, std::set<Split>> id_splits;
  for (const auto& r : out.records) id_splits[r.identity_label].insert(r.split);
  for (const auto& [label, splits] : id_splits) CHECK(splits.size() == 1);
}

TEST_CASE("matching the generated detections recovers the planted activations") {
  auto cfg = default_synth_config();
  cfg.n_identities = 12;
  cfg.n_val_identities = 0;
  cfg.min_instances = 4;
  cfg.max_instances = 9;
  const auto out = generate(cfg);
  const Dataset ds(out.records);
  std::size_t checked = 0;
  for (auto [photo, dets] : out.detections) {
    normalize_scores(dets);
    const auto truths = truths_of(ds, photo);
    const auto a = match_detections(truths, dets);
    CHECK(a.unmatched_truths.empty());
    const auto table = activations_per_instance(a, truths, dets);
    for (const auto& t : truths) {
      const auto& got = table.at(t.instance_id);
      const auto& want = out.truth_activations.at(t.instance_id);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i] == want[i]);
      CHECK(got[0].patch == want[0].patch);
      ++checked;
    }
  }
  CHECK(checked == ds.instances().size());
}

TEST_CASE("instance counts respect the bounds") {
  auto cfg = default_synth_config();
  cfg.min_instances = 5;
  cfg.max_instances = 11;
  const auto out = generate(cfg);
  std::map<std::string, std::size_t> count;
  for (const auto& r : out.records) ++count[r.identity_label];
  for (const auto& [label, c] : count) {
    CHECK(c >= 5);
    CHECK(c <= 11);
  }
}
