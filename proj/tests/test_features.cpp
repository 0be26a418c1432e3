#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "piper/error.hpp"
#include "piper/features.hpp"

using namespace piper;

TEST_CASE("feature matrix contract") {
  FeatureMatrix m(3, 2);
  const double a[] = {3, 4};
  m.add(10, a);
  CHECK(m.rows() == 1);
  CHECK(m.contains(10));
  CHECK_FALSE(m.find(11).has_value());
  const double wrong[] = {1, 2, 3};
  CHECK_THROWS_AS(m.add(11, wrong), Error);
  CHECK_THROWS_AS(m.add(10, a), Error);
  const double nan[] = {1, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(m.add(12, nan), Error);

  m.l2_normalize();
  CHECK(m.normalized());
  CHECK((*m.find(10))[0] == doctest::Approx(0.6));
  CHECK((*m.find(10))[1] == doctest::Approx(0.8));
}

TEST_CASE("PFV1 layout") {
  FeatureMatrix m(7, 2);
  const double r1[] = {1.5, -2};
  const double r0[] = {0.25, 8};
  m.add(300, r1);
  m.add(2, r0);
  std::stringstream ss;
  write_features(ss, m);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 4 * 3 + 1 + 2 * (8 + 2 * 4));
  CHECK(bytes.substr(0, 4) == "PFV1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 7);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);
  CHECK(bytes[16] == 0);
  // Rows are sorted by id: instance 2 first.
  CHECK(static_cast<unsigned char>(bytes[17]) == 2);

  const auto back = read_features(ss);
  CHECK(back.part_id() == 7);
  CHECK(back.dim() == 2);
  CHECK(back.id(0) == 2);
  CHECK((*back.find(300))[0] == 1.5);
  CHECK((*back.find(300))[1] == -2.0);
}

TEST_CASE("PFV1 rejects garbage") {
  std::stringstream bad("PFV2");
  CHECK_THROWS_AS(read_features(bad), Error);
  FeatureMatrix m(0, 3);
  const double r[] = {1, 2, 3};
  m.add(1, r);
  std::stringstream ss;
  write_features(ss, m);
  std::stringstream truncated(ss.str().substr(0, ss.str().size() - 2));
  CHECK_THROWS_AS(read_features(truncated), Error);
}

TEST_CASE("load_features normalizes once") {
  FeatureMatrix m(1, 2);
  const double r[] = {0, 5};
  m.add(1, r);
  const auto path = std::filesystem::temp_directory_path() / "piper_features_test.pfv";
  save_features(path, m);
  const auto loaded = load_features(path);
  CHECK(loaded.normalized());
  CHECK((*loaded.find(1))[1] == doctest::Approx(1.0));
  const auto raw = load_features(path, false);
  CHECK_FALSE(raw.normalized());
  CHECK((*raw.find(1))[1] == 5.0);
  std::filesystem::remove(path);
  CHECK(feature_file_name(3) == "part_003.pfv");
}
