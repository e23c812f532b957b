// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "seggroup/types.hpp"

namespace seggroup {

/// Region masks for one image: an id per patch (low_res) and an id per pixel (high_res).
struct RegionMaskSet {
  IdGrid low_res;
  IdGrid high_res;
  std::vector<int> present_ids;  // sorted distinct values of low_res
  int num_ids = 0;               // codebook size M
  bool shared_ids = true;        // ids are consistent across images (codebook mode)
};

/// Sorted distinct ids of a grid.
std::vector<int> distinct_ids(const IdGrid& grid);

/// Patch indices (row-major) carrying the given id.
std::vector<int> cells_with_id(const IdGrid& grid, int id);

/// Exact partition check: every cell carries exactly one id in [0, num_ids),
/// high_res ids are a subset of present_ids, per-id pixel counts sum to H*W.
bool is_partition(const RegionMaskSet& masks);

/// Majority-pools high_res onto the low_res grid (ties toward the lower id).
IdGrid majority_downsample(const IdGrid& high_res, int height, int width);

/// Fraction of patches where majority-pooled high_res equals low_res.
double downsample_agreement(const RegionMaskSet& masks);

}  // namespace seggroup
