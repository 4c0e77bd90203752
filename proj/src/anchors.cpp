#include "fqdet/anchors.hpp"

#include <cmath>
#include <stdexcept>

namespace fqdet::geom {

AnchorSet::AnchorSet(std::vector<LevelShape> levels, std::vector<AnchorType> types,
                     std::vector<BoxXYXY> boxes)
    : levels_(std::move(levels)), types_(std::move(types)), boxes_(std::move(boxes)) {
  level_offsets_.clear();
  std::int64_t offset = 0;
  for (const LevelShape& l : levels_) {
    level_offsets_.push_back(offset);
    offset += static_cast<std::int64_t>(l.h) * l.w * static_cast<std::int64_t>(types_.size());
  }
  if (offset != size()) throw std::runtime_error("AnchorSet: flat count disagrees with level shapes");
}

AnchorIndex AnchorSet::unflatten(std::int64_t flat) const {
  if (flat < 0 || flat >= size()) throw std::runtime_error("AnchorSet: flat index out of range");
  int level = 0;
  while (level + 1 < num_levels() && flat >= level_offsets_[static_cast<std::size_t>(level + 1)]) ++level;
  std::int64_t rem = flat - level_offsets_[static_cast<std::size_t>(level)];
  const int a = num_types();
  const int w = levels_[static_cast<std::size_t>(level)].w;
  AnchorIndex idx;
  idx.level = level;
  idx.type = static_cast<int>(rem % a);
  rem /= a;
  idx.x = static_cast<int>(rem % w);
  idx.y = static_cast<int>(rem / w);
  return idx;
}

std::int64_t AnchorSet::flatten(const AnchorIndex& idx) const {
  const LevelShape& l = levels_[static_cast<std::size_t>(idx.level)];
  return level_offsets_[static_cast<std::size_t>(idx.level)] +
         ((static_cast<std::int64_t>(idx.y) * l.w + idx.x) * num_types() + idx.type);
}

AnchorSet generate_anchors(const std::vector<LevelShape>& levels, const std::vector<double>& sizes,
                           const std::vector<double>& ratios, double base_scale) {
  if (levels.empty()) throw std::runtime_error("generate_anchors: empty pyramid");
  if (sizes.empty() || ratios.empty()) throw std::runtime_error("generate_anchors: sizes and ratios must be non-empty");

  std::vector<AnchorType> types;
  for (double s : sizes)
    for (double r : ratios) types.push_back({s, r});

  std::vector<BoxXYXY> boxes;
  for (const LevelShape& l : levels) {
    const double base = base_scale * l.stride;
    for (int y = 0; y < l.h; ++y) {
      for (int x = 0; x < l.w; ++x) {
        const double cx = (x + 0.5) * l.stride;
        const double cy = (y + 0.5) * l.stride;
        for (const AnchorType& t : types) {
          const double w = base * t.size / std::sqrt(t.ratio);
          const double h = base * t.size * std::sqrt(t.ratio);
          boxes.push_back(BoxCWH{cx, cy, w, h}.to_xyxy());
        }
      }
    }
  }
  return AnchorSet(levels, std::move(types), std::move(boxes));
}

std::vector<double> anchor_scale_table(int count) {
  if (count == 1) return {1.0};
  if (count == 3) return {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  throw std::runtime_error("anchor_scale_table: supported sizes are 1 and 3");
}

std::vector<double> anchor_ratio_table(int count) {
  if (count == 1) return {1.0};
  if (count == 3) return {0.5, 1.0, 2.0};
  throw std::runtime_error("anchor_ratio_table: supported ratio counts are 1 and 3");
}

}  // namespace fqdet::geom
