#pragma once

#include <array>
#include <vector>

namespace invadapt {

// Points in barycentric coordinates; weights sum to 1 so that
// ∫_K f ≈ |K| Σ w_q f(x_q).
struct QuadratureRule {
  std::vector<std::array<double, 4>> points;
  std::vector<double> weights;
  int degree = 0;
};

struct TriangleRule {
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;
  int degree = 0;
};

// Smallest built-in tet rule exact for polynomials of the requested degree (≤ 5).
const QuadratureRule& tet_rule(int degree);

// Smallest built-in triangle rule exact for the requested degree (≤ 5).
const TriangleRule& triangle_rule(int degree);

}  // namespace invadapt
