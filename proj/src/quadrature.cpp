#include "invadapt/quadrature.hpp"

#include "invadapt/common.hpp"

namespace invadapt {

namespace {

QuadratureRule make_tet1() {
  return {{{0.25, 0.25, 0.25, 0.25}}, {1.0}, 1};
}

QuadratureRule make_tet2() {
  constexpr double a = 0.5854101966249685;
  constexpr double b = 0.1381966011250105;
  QuadratureRule r;
  r.degree = 2;
  for (int i = 0; i < 4; ++i) {
    std::array<double, 4> p{b, b, b, b};
    p[i] = a;
    r.points.push_back(p);
    r.weights.push_back(0.25);
  }
  return r;
}

// 14-point rule of degree 5 (Walkington / Keast family).
QuadratureRule make_tet5() {
  QuadratureRule r;
  r.degree = 5;
  constexpr double a = 0.0455037041256496494918805262793;
  constexpr double wa = 0.0425460207770814664380694281202;
  constexpr double b = 0.092735250310891226402188772153;
  constexpr double wb = 0.0734930431163619495437102054863;
  constexpr double c = 0.310885919263300609797345733763;
  constexpr double wc = 0.112687925718015850799185018655;
  constexpr int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  for (const auto& pr : pairs) {
    std::array<double, 4> p{0.5 - a, 0.5 - a, 0.5 - a, 0.5 - a};
    p[pr[0]] = a;
    p[pr[1]] = a;
    r.points.push_back(p);
    r.weights.push_back(wa);
  }
  for (int i = 0; i < 4; ++i) {
    std::array<double, 4> p{b, b, b, b};
    p[i] = 1.0 - 3.0 * b;
    r.points.push_back(p);
    r.weights.push_back(wb);
  }
  for (int i = 0; i < 4; ++i) {
    std::array<double, 4> p{c, c, c, c};
    p[i] = 1.0 - 3.0 * c;
    r.points.push_back(p);
    r.weights.push_back(wc);
  }
  return r;
}

TriangleRule make_tri1() { return {{{1.0 / 3, 1.0 / 3, 1.0 / 3}}, {1.0}, 1}; }

TriangleRule make_tri2() {
  TriangleRule r;
  r.degree = 2;
  for (int i = 0; i < 3; ++i) {
    std::array<double, 3> p{1.0 / 6, 1.0 / 6, 1.0 / 6};
    p[i] = 2.0 / 3;
    r.points.push_back(p);
    r.weights.push_back(1.0 / 3);
  }
  return r;
}

TriangleRule make_tri5() {
  TriangleRule r;
  r.degree = 5;
  r.points.push_back({1.0 / 3, 1.0 / 3, 1.0 / 3});
  r.weights.push_back(0.225);
  const double groups[2][3] = {{0.059715871789770, 0.470142064105115, 0.132394152788506},
                               {0.797426985353087, 0.101286507323456, 0.125939180544827}};
  for (const auto& g : groups) {
    for (int i = 0; i < 3; ++i) {
      std::array<double, 3> p{g[1], g[1], g[1]};
      p[i] = g[0];
      r.points.push_back(p);
      r.weights.push_back(g[2]);
    }
  }
  return r;
}

}  // namespace

const QuadratureRule& tet_rule(int degree) {
  static const QuadratureRule r1 = make_tet1(), r2 = make_tet2(), r5 = make_tet5();
  if (degree <= 1) return r1;
  if (degree == 2) return r2;
  if (degree <= 5) return r5;
  throw InputError("tet_rule: no built-in rule above degree 5");
}

const TriangleRule& triangle_rule(int degree) {
  static const TriangleRule r1 = make_tri1(), r2 = make_tri2(), r5 = make_tri5();
  if (degree <= 1) return r1;
  if (degree == 2) return r2;
  if (degree <= 5) return r5;
  throw InputError("triangle_rule: no built-in rule above degree 5");
}

}  // namespace invadapt
