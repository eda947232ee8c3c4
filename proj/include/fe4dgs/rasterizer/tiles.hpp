#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/rasterizer/projection.hpp"

namespace fe4dgs {

struct TileBins {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  /// Per tile (row-major), indices into the projected array in global depth order.
  std::vector<std::vector<std::uint32_t>> lists;

  std::size_t num_tiles() const noexcept { return lists.size(); }
};

/// True when pixel centre (px, py) lies inside the radius disc of `g`.
inline bool in_footprint(const ProjectedGaussian& g, double px, double py) {
  const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
  const double r = static_cast<double>(g.radius);
  return dx * dx + dy * dy <= r * r;
}

/// Global front-to-back order: view depth, ties broken by source index.
inline std::vector<std::uint32_t> depth_order(const std::vector<ProjectedGaussian>& projected) {
  std::vector<std::uint32_t> order(projected.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (projected[a].view_depth != projected[b].view_depth) return projected[a].view_depth < projected[b].view_depth;
    return projected[a].source < projected[b].source;
  });
  return order;
}

/// Lists each Gaussian in every tile whose pixel centres its radius disc
/// overlaps. `order` gives the global depth order used inside each tile.
inline TileBins bin_tiles(const std::vector<ProjectedGaussian>& projected, const std::vector<std::uint32_t>& order,
                          std::size_t height, std::size_t width, int tile) {
  if (tile < 1) throw ConfigError("bin_tiles: tile size must be >= 1");
  TileBins bins;
  bins.tile_size = tile;
  bins.tiles_x = static_cast<int>((width + static_cast<std::size_t>(tile) - 1) / static_cast<std::size_t>(tile));
  bins.tiles_y = static_cast<int>((height + static_cast<std::size_t>(tile) - 1) / static_cast<std::size_t>(tile));
  bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * static_cast<std::size_t>(bins.tiles_y));
  const double max_x = static_cast<double>(width) - 1.0, max_y = static_cast<double>(height) - 1.0;

  for (std::uint32_t idx : order) {
    const ProjectedGaussian& g = projected[idx];
    const double r = static_cast<double>(g.radius);
    const double x0 = std::max(0.0, std::ceil(g.mean2d.x() - r));
    const double x1 = std::min(max_x, std::floor(g.mean2d.x() + r));
    const double y0 = std::max(0.0, std::ceil(g.mean2d.y() - r));
    const double y1 = std::min(max_y, std::floor(g.mean2d.y() + r));
    if (x0 > x1 || y0 > y1) continue;
    const int tx0 = static_cast<int>(x0) / tile, tx1 = static_cast<int>(x1) / tile;
    const int ty0 = static_cast<int>(y0) / tile, ty1 = static_cast<int>(y1) / tile;
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) {
        // Per tile row, the nearest in-range column to the centre decides the hit.
        const double px0 = tx * tile, px1 = std::min(max_x, static_cast<double>(tx * tile + tile - 1));
        const double py0 = std::max(static_cast<double>(ty * tile), y0);
        const double py1 = std::min(static_cast<double>(ty * tile + tile - 1), y1);
        const double cx = std::clamp(std::round(g.mean2d.x()), px0, px1);
        bool hit = false;
        for (double py = py0; py <= py1 && !hit; ++py) hit = in_footprint(g, cx, py);
        if (hit) bins.lists[static_cast<std::size_t>(ty * bins.tiles_x + tx)].push_back(idx);
      }
    }
  }
  return bins;
}

}  // namespace fe4dgs
