#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "iars/image.hpp"

namespace iars {

// Closed 8-connected boundary, clockwise in image coordinates (y down).
// Points are (x, y) = (column, row). A single-pixel region yields a
// one-point chain with degenerate set.
struct ContourChain {
  std::vector<std::pair<int, int>> points;
  bool degenerate = false;

  // Freeman codes between consecutive points (wrapping), 0 = east,
  // counting counterclockwise: 1 = northeast, 2 = north, ... 7 = southeast.
  std::vector<int> chain_codes() const {
    static constexpr int code_of[3][3] = {
        // dy = -1, 0, 1 rows; dx = -1, 0, 1 cols
        {3, 2, 1},
        {4, -1, 0},
        {5, 6, 7},
    };
    std::vector<int> codes;
    if (points.size() < 2) return codes;
    codes.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& a = points[i];
      const auto& b = points[(i + 1) % points.size()];
      const int dx = b.first - a.first, dy = b.second - a.second;
      codes.push_back(code_of[dy + 1][dx + 1]);
    }
    return codes;
  }
};

// Moore-neighbor boundary tracing with Jacob's stopping criterion, applied
// to the largest 8-connected foreground component. The walk starts at the
// topmost-then-leftmost pixel, entered from the west, and scans the Moore
// neighborhood clockwise.
inline ContourChain trace_boundary(const BinaryMask& mask) {
  if (mask.count() == 0) throw std::invalid_argument("trace_boundary: no foreground");
  const BinaryMask m = largest_component(mask);

  int sx = -1, sy = -1;
  for (int y = 0; y < m.height && sx < 0; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        sx = x;
        sy = y;
        break;
      }

  // clockwise Moore neighborhood starting at west
  static constexpr int DX[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  static constexpr int DY[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  auto fg = [&](int x, int y) {
    return x >= 0 && x < m.width && y >= 0 && y < m.height && m.at(y, x) != 0;
  };

  ContourChain chain;
  chain.points.emplace_back(sx, sy);

  int cx = sx, cy = sy;
  int back = 0;  // index of the backtrack cell relative to (cx, cy); west initially
  const int start_back = back;
  const std::size_t limit = 4 * m.data.size() + 8;
  while (true) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int i = (back + k) % 8;
      if (fg(cx + DX[i], cy + DY[i])) {
        found = i;
        break;
      }
    }
    if (found < 0) {
      chain.degenerate = true;  // isolated pixel
      return chain;
    }
    const int nx = cx + DX[found], ny = cy + DY[found];
    // the cell checked just before the hit becomes the new backtrack
    const int prev = (found + 7) % 8;
    const int bx = cx + DX[prev], by = cy + DY[prev];
    int nback = -1;
    for (int i = 0; i < 8; ++i)
      if (nx + DX[i] == bx && ny + DY[i] == by) {
        nback = i;
        break;
      }
    if (nx == sx && ny == sy && nback == start_back) return chain;  // Jacob's criterion
    chain.points.emplace_back(nx, ny);
    cx = nx;
    cy = ny;
    back = nback;
    if (chain.points.size() > limit)
      throw std::runtime_error("trace_boundary: walk failed to close");
  }
}

}  // namespace iars
