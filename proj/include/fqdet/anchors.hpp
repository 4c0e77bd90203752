#pragma once

#include <cstdint>
#include <vector>

#include "fqdet/boxes.hpp"

namespace fqdet::geom {

struct LevelShape {
  int h = 0;
  int w = 0;
  int stride = 0;
};

struct AnchorType {
  double size = 1.0;   // scale multiplier on the level base size
  double ratio = 1.0;  // h/w aspect ratio
};

struct AnchorIndex {
  int level = 0;
  int y = 0;
  int x = 0;
  int type = 0;
};

/// Flat list of feature-location x anchor-type boxes over a pyramid, ordered
/// level-major, then row-major over the grid, then type.
class AnchorSet {
 public:
  AnchorSet() = default;
  AnchorSet(std::vector<LevelShape> levels, std::vector<AnchorType> types,
            std::vector<BoxXYXY> boxes);

  std::int64_t size() const { return static_cast<std::int64_t>(boxes_.size()); }
  int num_types() const { return static_cast<int>(types_.size()); }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const std::vector<BoxXYXY>& boxes() const { return boxes_; }
  const BoxXYXY& box(std::int64_t flat) const { return boxes_[static_cast<std::size_t>(flat)]; }
  const std::vector<LevelShape>& levels() const { return levels_; }
  const std::vector<AnchorType>& types() const { return types_; }

  AnchorIndex unflatten(std::int64_t flat) const;
  std::int64_t flatten(const AnchorIndex& idx) const;

  /// Flat index of the feature location (level-major, row-major), i.e. the
  /// anchor's position in a per-location feature list: flat / num_types.
  std::int64_t location_of(std::int64_t flat) const { return flat / num_types(); }

 private:
  std::vector<LevelShape> levels_;
  std::vector<AnchorType> types_;
  std::vector<BoxXYXY> boxes_;
  std::vector<std::int64_t> level_offsets_;  // flat index where each level starts
};

/// RetinaNet-style generation: one anchor per (size, ratio) at each grid cell
/// center ((x+0.5)*stride, (y+0.5)*stride), w = base*s/sqrt(r),
/// h = base*s*sqrt(r), base = base_scale*stride. Anchors are not clipped.
AnchorSet generate_anchors(const std::vector<LevelShape>& levels, const std::vector<double>& sizes,
                           const std::vector<double>& ratios, double base_scale = 4.0);

/// The scale/ratio tables for the Table-2 grid: sizes in {1,3} x ratios in
/// {1,3} anchor-type configurations.
std::vector<double> anchor_scale_table(int count);
std::vector<double> anchor_ratio_table(int count);

}  // namespace fqdet::geom
