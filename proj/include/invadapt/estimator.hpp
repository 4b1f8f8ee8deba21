#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "invadapt/fem.hpp"

namespace invadapt {

struct EstimatorOptions {
  SourceFn source;   // evaluated at `time`
  double time = 0.0;
  // κ as (Σ‖Δ‖²)² when true, Σ‖Δ‖² otherwise.
  bool kappa_squared = true;
};

// Pointwise access to the residuals of one backward Euler step on one mesh.
//
// d1,h and g1,h are element-local L² projections onto P1(K). A constant d1 or χ is
// projected exactly, so its data error vanishes identically.
class ResidualEvaluator {
 public:
  ResidualEvaluator(const P1Space& space, const StateFields& state, const StateFields& prev,
                    double tau, const ModelParams& params, const EstimatorOptions& options = {});

  // (ρ1ᴷ, ρ2ᴷ, ρ3ᴷ) at a barycentric point of tet t.
  std::array<double, 3> element_residual(Index t, const std::array<double, 4>& bary) const;
  // (ρ1ᴱ, ρ2ᴱ ≡ 0, ρ3ᴱ) at a barycentric point of face f (weights on Face::v).
  std::array<double, 3> face_residual(Index f, const std::array<double, 3>& bary) const;
  // (η1ᴷ, 0, 0) and (η1ᴱ, 0, 0).
  std::array<double, 3> element_data_error(Index t, const std::array<double, 4>& bary) const;
  std::array<double, 3> face_data_error(Index f, const std::array<double, 3>& bary) const;

  // Local P1 coefficients of the projections on tet t.
  const std::array<double, 4>& d1_projection(Index t) const { return d1h_[t]; }
  const std::array<double, 4>& g1_projection(Index t) const { return g1h_[t]; }

  const P1Space& space() const { return space_; }

 private:
  double field_at(const std::vector<double>& f, Index t, const std::array<double, 4>& bary) const;
  // Barycentric coordinates in tet t of a point given by weights on the face vertices.
  std::array<double, 4> face_to_tet(Index f, Index t, const std::array<double, 3>& bary) const;
  Vec3 flux1(Index t, const std::array<double, 4>& bary) const;
  Vec3 data_flux1(Index t, const std::array<double, 4>& bary) const;

  const P1Space& space_;
  const StateFields& state_;
  const StateFields& prev_;
  double tau_;
  const ModelParams& params_;
  EstimatorOptions options_;
  bool d1_exact_, g1_exact_;
  std::vector<std::array<double, 4>> d1h_, g1h_;
  std::vector<std::array<Vec3, 3>> grad_;  // ∇u, ∇v, ∇w per tet
};

// Per element and per face squared L² norms of the residuals, by field.
struct ResidualNorms {
  std::vector<std::array<double, 3>> element;  // ‖ρᵢᴷ‖²_{L²(K)}
  std::vector<std::array<double, 3>> face;     // ‖ρᵢᴱ‖²_{L²(E)}
};

ResidualNorms element_residuals(const ResidualEvaluator& ev);
ResidualNorms edge_residuals(const ResidualEvaluator& ev);
// Element and face parts of the data errors (η), in the same layout.
ResidualNorms data_errors(const ResidualEvaluator& ev);

struct EstimatorReport {
  std::uint64_t mesh_id = 0;
  std::vector<std::array<double, 3>> element_rho;  // h_K² ‖ρᵢᴷ‖²
  std::vector<std::array<double, 3>> element_eta;  // h_K² ‖ηᵢᴷ‖²
  std::vector<std::array<double, 3>> face_rho;     // h_E ‖ρᵢᴱ‖²; index 1 is always 0
  std::vector<std::array<double, 3>> face_eta;     // h_E ‖ηᵢᴱ‖²
  std::vector<double> marking;                     // element value + half of each interior face
  double alpha = 0.0;
  double theta = 0.0;
  double gamma = 0.0;
  double kappa = 0.0;
  std::array<double, 3> alpha_by_equation{};
  std::array<double, 3> gamma_by_equation{};  // P₁, P₂, P₃ before the τ/3 factor
};

// Weighted sums α, Θ and the marking field from the residual norms.
void spatial_indicator(const P1Space& space, const ResidualNorms& rho, const ResidualNorms& eta,
                       EstimatorReport& report);

struct TemporalIndicator {
  double gamma = 0.0;
  double kappa = 0.0;
  std::array<double, 3> p{};  // P₁, P₂, P₃
};

// γ from the h-weighted strong form of the linearized operator applied to the increment,
// scaled by τ/3; κ from the L² norms of the increments. Both states must share the mesh.
TemporalIndicator temporal_indicator(const P1Space& space, const StateFields& state,
                                     const StateFields& prev, double tau, const ModelParams& params,
                                     const EstimatorOptions& options = {});

// Full report for one step.
EstimatorReport estimate(const P1Space& space, const StateFields& state, const StateFields& prev,
                         double tau, const ModelParams& params, const EstimatorOptions& options = {});

// One row per element: element,rho1,rho2,rho3,eta1,eta2,eta3,total (total = marking value).
void write_report_csv(const std::string& path, const EstimatorReport& report);

// Running sums for the reliability bound over a trajectory.
struct EstimatorTotals {
  double initial = 0.0;       // Σ‖x₀ - x_{h,0}‖²
  double spatial = 0.0;       // Σ τ_n (α + Θ)
  double temporal = 0.0;      // Σ (γ + κ)
  void add_step(const EstimatorReport& report, double tau);
  double total() const { return initial + spatial + temporal; }
};

// (estimator total)^{1/2} / error; +∞ when the error is zero.
double effectivity(double estimator_total, double true_error);
inline double effectivity(const EstimatorTotals& totals, double true_error) {
  return effectivity(totals.total(), true_error);
}

}  // namespace invadapt
