// SPDX-License-Identifier: Apache-2.0
#include "seggroup/region_masks.hpp"

#include <algorithm>
#include <map>

namespace seggroup {

std::vector<int> distinct_ids(const IdGrid& grid) {
  std::vector<int> ids(grid.cells.begin(), grid.cells.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<int> cells_with_id(const IdGrid& grid, int id) {
  std::vector<int> out;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid.cells[i] == id) out.push_back(static_cast<int>(i));
  return out;
}

bool is_partition(const RegionMaskSet& masks) {
  if (masks.num_ids < 1) return false;
  if (masks.present_ids != distinct_ids(masks.low_res)) return false;
  if (static_cast<int>(masks.present_ids.size()) > masks.num_ids) return false;
  for (const auto* grid : {&masks.low_res, &masks.high_res}) {
    if (grid->size() != static_cast<std::size_t>(grid->height) * grid->width) return false;
    std::map<int, std::size_t> counts;
    for (auto id : grid->cells) {
      if (id < 0 || id >= masks.num_ids) return false;
      ++counts[id];
    }
    std::size_t total = 0;
    for (const auto& [id, n] : counts) total += n;
    if (total != grid->size()) return false;
  }
  for (auto id : distinct_ids(masks.high_res))
    if (!std::binary_search(masks.present_ids.begin(), masks.present_ids.end(), id)) return false;
  return true;
}

IdGrid majority_downsample(const IdGrid& high_res, int height, int width) {
  if (height <= 0 || width <= 0 || high_res.height % height != 0 || high_res.width % width != 0)
    throw PreconditionError("majority_downsample: grid is not an integer multiple of the target");
  const int sy = high_res.height / height;
  const int sx = high_res.width / width;
  IdGrid out(height, width);
  std::map<int, int> counts;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      counts.clear();
      for (int dy = 0; dy < sy; ++dy)
        for (int dx = 0; dx < sx; ++dx) ++counts[high_res.at(y * sy + dy, x * sx + dx)];
      int best = -1, best_count = -1;
      for (const auto& [id, n] : counts)
        if (n > best_count) best = id, best_count = n;
      out.at(y, x) = best;
    }
  }
  return out;
}

double downsample_agreement(const RegionMaskSet& masks) {
  const auto pooled = majority_downsample(masks.high_res, masks.low_res.height, masks.low_res.width);
  std::size_t same = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) same += pooled.cells[i] == masks.low_res.cells[i];
  return pooled.size() ? static_cast<double>(same) / pooled.size() : 1.0;
}

}  // namespace seggroup
