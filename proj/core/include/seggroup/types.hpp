// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "seggroup/error.hpp"

namespace seggroup {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Size2 {
  int height = 0;
  int width = 0;

  friend bool operator==(const Size2&, const Size2&) = default;
};

/// Dense row-major 2D grid of integer ids.
struct IdGrid {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> cells;

  IdGrid() = default;
  IdGrid(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), cells(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& at(int y, int x) { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return cells.size(); }
  Size2 shape() const { return {height, width}; }

  friend bool operator==(const IdGrid&, const IdGrid&) = default;
};

inline constexpr std::int32_t kIgnoreLabel = 255;
inline constexpr std::int32_t kBackgroundLabel = 0;

}  // namespace seggroup
