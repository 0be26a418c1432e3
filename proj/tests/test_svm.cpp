#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "piper/error.hpp"
#include "piper/rng.hpp"
#include "piper/svm.hpp"
#include "support/subgradient.hpp"

using namespace piper;
using namespace piper::testing;

namespace {

struct Labeled {
  TrainingSet data{1};
  std::vector<IdentityId> labels;
};

// Gaussian blobs around well separated centers.
Labeled blobs(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t dim, double sigma,
              std::vector<std::vector<double>>* centers_out = nullptr, std::uint64_t key0 = 0) {
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  Rng crng(99);
  for (auto& c : centers) {
    for (auto& v : c) v = crng.uniform(-3, 3);
  }
  Labeled out{TrainingSet(dim), {}};
  std::vector<double> x(dim);
  std::uint64_t key = key0;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) x[j] = centers[k][j] + sigma * rng.normal();
      out.data.add(key++, x);
      out.labels.push_back(static_cast<IdentityId>(k));
    }
  }
  if (centers_out) *centers_out = centers;
  return out;
}

std::size_t predict_class(const LinearModel& m, std::span<const double> x) {
  return m.class_index[argmax(score(m, x))];
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

TrainConfig solver_cfg(Solver s, double c, std::size_t epochs) {
  TrainConfig cfg;
  cfg.c = c;
  cfg.epochs = epochs;
  cfg.seed = 5;
  cfg.solver = s;
  return cfg;
}

}  // namespace

TEST_CASE("separable two-class data is fit exactly") {
  for (Solver s : {Solver::DualCoordinateDescent, Solver::Pegasos}) {
    Rng rng(1);
    TrainingSet data(3);
    std::vector<IdentityId> labels;
    for (std::uint64_t i = 0; i < 200; ++i) {
      const int cls = static_cast<int>(i % 2);
      // Margin 2 along axis 0: classes at x0 <= -1 and x0 >= 1.
      const double x[] = {(cls ? 1.0 : -1.0) * (1.0 + rng.uniform()), rng.uniform(-3, 3), rng.uniform(-3, 3)};
      data.add(i, x);
      labels.push_back(static_cast<IdentityId>(cls * 4));
    }
    const auto m = train_multiclass(data, labels, solver_cfg(s, 100.0, 50));
    CHECK(m.class_index == std::vector<IdentityId>{0, 4});
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hits += predict_class(m, data.row(i)) == labels[i];
    CHECK(hits == data.size());
  }
}

TEST_CASE("row order does not change the model") {
  Rng rng(2);
  const auto a = blobs(rng, 3, 30, 4, 1.0);
  std::vector<std::size_t> perm(a.data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  TrainingSet shuffled(4);
  std::vector<IdentityId> labels;
  for (std::size_t i : perm) {
    shuffled.add(a.data.key(i), a.data.row(i));
    labels.push_back(a.labels[i]);
  }
  for (Solver s : {Solver::DualCoordinateDescent, Solver::Pegasos}) {
    const auto cfg = solver_cfg(s, 1.0, 10);
    const auto m1 = train_multiclass(a.data, a.labels, cfg);
    const auto m2 = train_multiclass(shuffled, labels, cfg);
    CHECK(m1.weights == m2.weights);
    CHECK(m1.biases == m2.biases);
  }
}

TEST_CASE("gaussian blobs against a nearest-centroid oracle") {
  Rng rng(3);
  std::vector<std::vector<double>> centers;
  const auto train = blobs(rng, 5, 40, 6, 0.4, &centers);
  const auto test = blobs(rng, 5, 40, 6, 0.4, nullptr, 10000);
  const auto m = train_multiclass(train.data, train.labels, solver_cfg(Solver::DualCoordinateDescent, 1.0, 20));
  std::size_t svm_hits = 0, oracle_hits = 0;
  for (std::size_t i = 0; i < test.data.size(); ++i) {
    const auto x = test.data.row(i);
    std::size_t nearest = 0;
    double best = 1e300;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      double d = 0;
      for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - centers[k][j]) * (x[j] - centers[k][j]);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    oracle_hits += nearest == test.labels[i];
    svm_hits += predict_class(m, x) == test.labels[i];
  }
  const double n = static_cast<double>(test.data.size());
  REQUIRE(oracle_hits / n >= 0.95);
  CHECK(svm_hits / n >= 0.95);
}

TEST_CASE("score") {
  LinearModel zero{{0, 1}, 2, std::vector<double>(4, 0.0), {0, 0}};
  const double x[] = {0.3, -2};
  CHECK(score(zero, x) == std::vector<double>{0, 0});
  LinearModel eye{{0, 1}, 2, {1, 0, 0, 1}, {0, 0}};
  const double e0[] = {1, 0};
  CHECK(score(eye, e0) == std::vector<double>{1, 0});
  const double bad[] = {1, 0, 0};
  CHECK_THROWS_AS(score(eye, bad), Error);

  Rng rng(4);
  LinearModel m{{2, 5, 9}, 11, std::vector<double>(33), {0.5, -1, 2}};
  for (auto& v : m.weights) v = rng.uniform(-1, 1);
  std::vector<double> v(11);
  for (auto& t : v) t = rng.uniform(-1, 1);
  const auto s = score(m, v);
  for (std::size_t k = 0; k < 3; ++k) {
    long double ref = m.biases[k];
    for (std::size_t j = 0; j < 11; ++j) ref += static_cast<long double>(m.weights[k * 11 + j]) * v[j];
    CHECK(s[k] == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
  }
}

TEST_CASE("softmax") {
  const double z[] = {0, 0};
  CHECK(softmax(z) == std::vector<double>{0.5, 0.5});
  const double s[] = {1, 2, 3};
  const auto p = softmax(s);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(0.6652).epsilon(1e-3));
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(p[i] - std::exp(s[i]) / denom) < 1e-15);
  const double shifted[] = {1001, 1002, 1003};
  const auto q = softmax(shifted);
  for (int i = 0; i < 3; ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-12));
  CHECK_THROWS_AS(softmax(std::span<const double>{}), Error);

  Rng rng(6);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(1 + rng.below(30));
    for (auto& x : v) x = rng.uniform(-50, 50);
    const auto r = softmax(v);
    CHECK(std::fabs(std::accumulate(r.begin(), r.end(), 0.0) - 1.0) <= 1e-9);
    CHECK(*std::min_element(r.begin(), r.end()) >= 0.0);
    CHECK(argmax(r) == argmax(v));
  }
}

TEST_CASE("argmax ties go to the lowest class") {
  // Classes 3 and 8 are exact duplicates.
  LinearModel m{{3, 8, 12}, 2, {1, 1, 1, 1, -1, 0}, {0.25, 0.25, 0}};
  const double x[] = {0.5, 2};
  CHECK(predict_class(m, x) == 3);
  const double flat[] = {2, 2, 2};
  CHECK(argmax(flat) == 0);
}

TEST_CASE("binary SVM") {
  SUBCASE("1-D separation direction") {
    for (double dir : {1.0, -1.0}) {
      TrainingSet d(1);
      std::vector<int> y;
      for (int i = 0; i < 20; ++i) {
        const double x[] = {dir * (i < 10 ? -1.0 - i : 1.0 + i)};
        d.add(static_cast<std::uint64_t>(i), x);
        y.push_back(i < 10 ? -1 : 1);
      }
      const auto m = train_binary(d, y, solver_cfg(Solver::DualCoordinateDescent, 1.0, 20));
      CHECK(m.w[0] * dir > 0);
    }
  }
  SUBCASE("duplicated data keeps the boundary direction") {
    Rng rng(7);
    TrainingSet once(2), twice(2);
    std::vector<int> y1, y2;
    for (std::uint64_t i = 0; i < 60; ++i) {
      const int y = i % 3 == 0 ? 1 : -1;
      const double x[] = {y * 2.0 + rng.uniform(-1, 1), y * 1.0 + rng.uniform(-1, 1)};
      once.add(i, x);
      twice.add(i, x);
      twice.add(i + 1000, x);
      y1.push_back(y);
      y2.push_back(y);
      y2.push_back(y);
    }
    const auto cfg = solver_cfg(Solver::DualCoordinateDescent, 1000.0, 200);
    const auto a = train_binary(once, y1, cfg);
    const auto b = train_binary(twice, y2, cfg);
    CHECK(cosine(a.w, b.w) > 0.99);
  }
  SUBCASE("planted rule with 5% label noise") {
    Rng rng(8);
    const std::vector<double> rule{1.5, -2.0, 0.5, 1.0};
    const double offset = 0.3;
    auto sample = [&](TrainingSet& d, std::vector<int>& y, std::vector<int>& clean, std::size_t n, double noise,
                      std::uint64_t key0) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(4);
        double s = offset;
        for (std::size_t j = 0; j < 4; ++j) {
          x[j] = rng.uniform(-1, 1);
          s += rule[j] * x[j];
        }
        const int label = s >= 0 ? 1 : -1;
        clean.push_back(label);
        y.push_back(rng.bernoulli(noise) ? -label : label);
        d.add(key0 + i, x);
      }
    };
    TrainingSet train(4), test(4);
    std::vector<int> ytr, ctr, yte, cte;
    sample(train, ytr, ctr, 1000, 0.05, 0);
    sample(test, yte, cte, 1000, 0.0, 100000);
    const auto m = train_binary(train, ytr, solver_cfg(Solver::DualCoordinateDescent, 1.0, 30));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) hits += (m.decision(test.row(i)) >= 0 ? 1 : -1) == cte[i];
    CHECK(static_cast<double>(hits) / static_cast<double>(test.size()) >= 0.90);
  }
  SUBCASE("single class") {
    TrainingSet d(1);
    const double x[] = {1};
    d.add(0, x);
    d.add(1, x);
    const int y[] = {1, 1};
    CHECK_THROWS_AS(train_binary(d, y, TrainConfig{}), Error);
    const IdentityId ids[] = {4, 4};
    try {
      train_multiclass(d, ids, TrainConfig{});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateProblem);
    }
  }
}

TEST_CASE("config and input validation") {
  TrainConfig cfg;
  cfg.c = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.c = 1;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  TrainingSet d(2);
  const double bad[] = {1};
  CHECK_THROWS_AS(d.add(0, bad), Error);
  const double ok[] = {1, 2};
  d.add(0, ok);
  d.add(0, ok);
  const int y[] = {1, -1};
  CHECK_THROWS_AS(train_binary(d, y, TrainConfig{}), Error);  // duplicate key
}

TEST_CASE("objective never rises between epochs") {
  Rng rng(9);
  const auto set = blobs(rng, 2, 80, 5, 2.0);
  std::vector<int> y;
  for (auto l : set.labels) y.push_back(l == 0 ? 1 : -1);
  for (Solver s : {Solver::DualCoordinateDescent, Solver::Pegasos}) {
    for (double c : {0.01, 1.0, 100.0}) {
      const auto problem = make_binary_problem(set.data, y, c, ClassWeighting::InverseFrequency, true);
      TrainTrace trace;
      train_problem(problem, solver_cfg(s, c, 25), &trace);
      REQUIRE(trace.epochs.size() == 25);
      double prev = problem.objective(BinaryModel{std::vector<double>(5, 0.0), 0.0});
      for (const auto& m : trace.epochs) {
        const double f = problem.objective(m);  // recomputed, not the trace value
        CHECK(f <= prev * (1 + 1e-6));
        prev = f;
      }
    }
  }
}

TEST_CASE("subgradient matches finite differences") {
  Rng rng(10);
  const auto set = blobs(rng, 2, 60, 8, 1.5);
  std::vector<int> y;
  for (auto l : set.labels) y.push_back(l == 0 ? 1 : -1);
  for (Solver s : {Solver::DualCoordinateDescent, Solver::Pegasos}) {
    const auto problem = make_binary_problem(set.data, y, 1.0, ClassWeighting::InverseFrequency, true);
    const auto m = train_problem(problem, solver_cfg(s, 1.0, 20));
    const auto p = off_hinge(problem, m, rng);
    REQUIRE(p.has_value());
    const auto r = check_subgradient(problem, *p, rng);
    CHECK(r.coordinates == 10);
    CHECK(r.max_rel_error <= 1e-3);
  }
  // Zero model: every margin is 0, far from the hinge.
  const auto problem = make_binary_problem(set.data, y, 4.0, ClassWeighting::Uniform, true);
  const auto r = check_subgradient(problem, BinaryModel{std::vector<double>(8, 0.0), 0.0}, rng);
  CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("PLM1 round trip") {
  Rng rng(12);
  const auto set = blobs(rng, 3, 10, 2, 0.5);
  const auto m = train_multiclass(set.data, set.labels, TrainConfig{});
  std::stringstream ss;
  write_model(ss, m);
  CHECK(ss.str().substr(0, 4) == "PLM1");
  const auto back = read_model(ss);
  CHECK(back.class_index == m.class_index);
  CHECK(back.weights == m.weights);
  CHECK(back.biases == m.biases);
  std::stringstream junk("XXXX");
  CHECK_THROWS_AS(read_model(junk), Error);
}
