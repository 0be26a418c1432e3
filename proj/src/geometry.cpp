#include "piper/geometry.hpp"

#include <algorithm>

#include "piper/error.hpp"

namespace piper {

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) {
    throw Error(ErrorCode::InvalidGeometry, "iou requires boxes with positive width and height");
  }
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BBox body_from_head(const BBox& head, const BodyExtrapolation& cfg) {
  const double cx = head.x + 0.5 * head.w + cfg.x_offset * head.w;
  const double w = cfg.width_scale * head.w;
  const double h = cfg.height_scale * head.h;
  return BBox{cx - 0.5 * w, head.y + cfg.y_offset * head.h, w, h};
}

}  // namespace piper
