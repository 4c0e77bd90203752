#include "fqdet/boxes.hpp"

#include <algorithm>

namespace fqdet::geom {

namespace {
double intersection_area(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  return iw * ih;
}
}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull_w = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double hull_h = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double hull = hull_w * hull_h;
  if (hull <= 0) return 0.0;  // both boxes degenerate to the same point/line
  const double i = uni > 0 ? inter / uni : 0.0;
  return i - (hull - uni) / hull;
}

BoxDelta encode_box(const BoxXYXY& box, const BoxXYXY& anchor) {
  const double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::runtime_error("encode_box: anchor has non-positive extent");
  const double w = box.width(), h = box.height();
  if (w <= 0 || h <= 0) throw std::runtime_error("encode_box: box has non-positive extent");
  return {(box.cx() - anchor.cx()) / wa, (box.cy() - anchor.cy()) / ha, std::log(w / wa),
          std::log(h / ha)};
}

BoxXYXY decode_box_unclipped(const BoxDelta& delta, const BoxXYXY& anchor) {
  const double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::runtime_error("decode_box: anchor has non-positive extent");
  const double cx = anchor.cx() + delta.tx * wa;
  const double cy = anchor.cy() + delta.ty * ha;
  const double w = wa * std::exp(std::min(delta.tw, kMaxLogRatio));
  const double h = ha * std::exp(std::min(delta.th, kMaxLogRatio));
  return BoxCWH{cx, cy, w, h}.to_xyxy();
}

BoxXYXY decode_box(const BoxDelta& delta, const BoxXYXY& anchor, double image_w, double image_h) {
  BoxXYXY b = decode_box_unclipped(delta, anchor);
  b.x1 = std::clamp(b.x1, 0.0, image_w);
  b.y1 = std::clamp(b.y1, 0.0, image_h);
  b.x2 = std::clamp(b.x2, 0.0, image_w);
  b.y2 = std::clamp(b.y2, 0.0, image_h);
  return b;
}

}  // namespace fqdet::geom
