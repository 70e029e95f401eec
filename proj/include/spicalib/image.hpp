#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "spicalib/error.hpp"

namespace spicalib {

// Dense row-major raster; row 0 is the top image row, x grows rightward.
template <class T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

  size_t size() const { return data.size(); }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool same_size(int w, int h) const { return width == w && height == h; }

  template <class U>
  bool same_size(const Grid<U>& o) const { return same_size(o.width, o.height); }
};

using GridF = Grid<double>;
using GridI = Grid<int32_t>;
using Mask = Grid<uint8_t>;  // 0 invalid, 255 valid
using Vec3Grid = Grid<Eigen::Vector3d>;

inline bool mask_at(const Mask& m, int x, int y) { return m.at(x, y) != 0; }

inline size_t count_valid(const Mask& m) {
  size_t n = 0;
  for (uint8_t v : m.data) n += (v != 0);
  return n;
}

template <class A, class B>
inline void require_same_size(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_size(b))
    throw Error(ErrorKind::MismatchedDimensions, std::string(what) + ": grid sizes differ");
}

}  // namespace spicalib
