#pragma once

// Structured simplicial meshes used by fixtures, tests and the CLI.

#include "eikinv/common.hpp"
#include "eikinv/mesh.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace eikinv {

/// [x0, x0+len]^2 split into n x n squares, each cut along the (0,0)-(1,1) diagonal.
inline Mesh structured_square(int n, double len = 1.0, double x0 = 0.0, double y0 = 0.0) {
  if (n < 1) throw ArgumentError("structured_square: n must be >= 1");
  Mesh m;
  m.dim = 2;
  const int nv = (n + 1) * (n + 1);
  m.vertices.resize(2, nv);
  const double h = len / n;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) m.vertices.col(j * (n + 1) + i) << x0 + i * h, y0 + j * h;
  m.elements.resize(3, 2 * n * n);
  int e = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int a = j * (n + 1) + i, b = a + 1, c = a + (n + 1), d = c + 1;
      m.elements.col(e++) << a, b, d;
      m.elements.col(e++) << a, d, c;
    }
  return m;
}

/// [0,len]^3 with n^3 cubes, each split into the 6 Kuhn tetrahedra.
inline Mesh structured_cube(int n, double len = 1.0) {
  if (n < 1) throw ArgumentError("structured_cube: n must be >= 1");
  Mesh m;
  m.dim = 3;
  const int s = n + 1;
  m.vertices.resize(3, s * s * s);
  const double h = len / n;
  auto id = [s](int i, int j, int k) { return (k * s + j) * s + i; };
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) m.vertices.col(id(i, j, k)) << i * h, j * h, k * h;
  static constexpr std::array<std::array<int, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  m.elements.resize(4, 6 * n * n * n);
  int e = 0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (const auto& p : perms) {
          std::array<int, 3> c{i, j, k};
          m.elements(0, e) = id(c[0], c[1], c[2]);
          for (int step = 0; step < 3; ++step) {
            ++c[static_cast<std::size_t>(p[static_cast<std::size_t>(step)])];
            m.elements(step + 1, e) = id(c[0], c[1], c[2]);
          }
          ++e;
        }
  return m;
}

}  // namespace eikinv
