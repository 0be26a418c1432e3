#include "doctest.h"

#include "piper/error.hpp"
#include "piper/geometry.hpp"
#include "piper/rng.hpp"

using namespace piper;

TEST_CASE("iou basics") {
  const BBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{5, 5, 1, 1}) == 0.0);
  CHECK(iou(a, BBox{1, 0, 2, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // Touching edges share no area.
  CHECK(iou(a, BBox{2, 0, 2, 2}) == 0.0);
}

TEST_CASE("iou rejects degenerate boxes") {
  CHECK_THROWS_AS(iou(BBox{0, 0, 0, 1}, BBox{0, 0, 1, 1}), Error);
  CHECK_THROWS_AS(iou(BBox{0, 0, 1, 1}, BBox{0, 0, 1, -2}), Error);
  try {
    iou(BBox{}, BBox{});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidGeometry);
  }
}

TEST_CASE("iou properties on random boxes") {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const BBox a{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.1, 40), rng.uniform(0.1, 40)};
    const BBox b{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.1, 40), rng.uniform(0.1, 40)};
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
  }
}

TEST_CASE("body_from_head") {
  // Centered 3w x 6h, top-aligned.
  CHECK(body_from_head(BBox{10, 10, 10, 10}) == BBox{0, 10, 30, 60});
  CHECK(body_from_head(BBox{0, 0, 20, 20}) == BBox{-20, 0, 60, 120});
  const BodyExtrapolation unit{1, 1, 0, 0};
  CHECK(body_from_head(BBox{3, 4, 5, 6}, unit) == BBox{3, 4, 5, 6});
  // Offsets are in head units.
  const BodyExtrapolation shifted{3, 6, 1, 0.5};
  CHECK(body_from_head(BBox{0, 0, 10, 10}, shifted) == BBox{0, 5, 30, 60});
}

TEST_CASE("body_from_head is scale-equivariant") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const BBox h{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(1, 5), rng.uniform(1, 5)};
    const double s = rng.uniform(0.5, 4);
    const BBox a = body_from_head(BBox{h.x * s, h.y * s, h.w * s, h.h * s});
    const BBox b = body_from_head(h);
    CHECK(a.x == doctest::Approx(b.x * s));
    CHECK(a.y == doctest::Approx(b.y * s));
    CHECK(a.w == doctest::Approx(b.w * s));
    CHECK(a.h == doctest::Approx(b.h * s));
  }
}
