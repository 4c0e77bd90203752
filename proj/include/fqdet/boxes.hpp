#pragma once

#include <cmath>
#include <stdexcept>

namespace fqdet::geom {

/// Largest decodable log size ratio: ln(1000/16), the Faster R-CNN clamp.
inline constexpr double kMaxLogRatio = 4.135166556742356;

struct BoxCWH;

/// Axis-aligned box as image-plane corners, x2 >= x1 and y2 >= y1.
struct BoxXYXY {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  BoxCWH to_cwh() const;
};

/// Center/size form; extents strictly positive.
struct BoxCWH {
  double cx = 0, cy = 0, w = 0, h = 0;
  BoxXYXY to_xyxy() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

inline BoxCWH BoxXYXY::to_cwh() const { return {cx(), cy(), width(), height()}; }

/// Faster R-CNN deltas: center offsets in anchor units, log size ratios.
struct BoxDelta {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

/// Intersection over union in [0, 1]; degenerate unions give 0.
double iou(const BoxXYXY& a, const BoxXYXY& b);

/// Generalized IoU in [-1, 1]: iou - (hull - union) / hull.
double giou(const BoxXYXY& a, const BoxXYXY& b);

/// Encodes `box` relative to `anchor`. Throws if the box has a non-positive
/// extent (the log is undefined there).
BoxDelta encode_box(const BoxXYXY& box, const BoxXYXY& anchor);

/// Inverse of encode_box with tw/th clamped at kMaxLogRatio, clipped to
/// [0, image_w] x [0, image_h].
BoxXYXY decode_box(const BoxDelta& delta, const BoxXYXY& anchor, double image_w, double image_h);

/// decode_box without the image clip (loss-side decoding).
BoxXYXY decode_box_unclipped(const BoxDelta& delta, const BoxXYXY& anchor);

}  // namespace fqdet::geom
