#pragma once

namespace piper {

/// Axis-aligned box in pixel coordinates, (x, y) is the top-left corner.
/// Head boxes may lie partially or fully outside the image.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  bool valid() const { return w > 0 && h > 0; }
  double area() const { return w * h; }
  bool operator==(const BBox&) const = default;
};

/// Intersection over union. Throws InvalidGeometry for degenerate boxes.
double iou(const BBox& a, const BBox& b);

/// Affine head-to-body extrapolation. Body width and height are multiples of
/// the head size, horizontally centered on the head; offsets are in head units.
struct BodyExtrapolation {
  double width_scale = 3.0;
  double height_scale = 6.0;
  double x_offset = 0.0;  // shift of the body center, in head widths
  double y_offset = 0.0;  // shift of the body top, in head heights
};

BBox body_from_head(const BBox& head, const BodyExtrapolation& cfg = {});

}  // namespace piper
