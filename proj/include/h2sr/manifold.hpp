#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "h2sr/tape.hpp"

namespace h2sr::manifold {

/// Tangent norms below this short-circuit to the base point.
inline constexpr double kTinyNorm = 1e-12;
/// Membership tolerance used by validating entry points.
inline constexpr double kMembershipTolerance = 1e-6;
/// lift_rows rescales tangents longer than this many √c onto the sphere of
/// that radius, so point coordinates stay near e^10 and inner products keep
/// enough precision for the log map.
inline constexpr double kMaxLiftNorm = 10.0;

/// Minkowski bilinear form −x₀y₀ + Σᵢ≥₁ xᵢyᵢ.
double minkowski_inner(std::span<const double> x, std::span<const double> y);

struct HyperboloidPoint {
  std::vector<double> coords;  // d+1 ambient coordinates, time first
};

struct TangentVector {
  HyperboloidPoint base;
  std::vector<double> coords;  // d+1 ambient coordinates
};

/// Hyperboloid {x : ⟨x,x⟩_L = −c, x₀ > 0} of curvature −1/c embedded in ℝ^{d+1}.
class Hyperboloid {
 public:
  explicit Hyperboloid(std::size_t dim, double c = 1.0);

  std::size_t dim() const { return dim_; }
  double curvature() const { return c_; }
  HyperboloidPoint origin() const;

  /// |⟨x,x⟩_L + c|, evaluated in extended precision.
  double membership_error(const HyperboloidPoint& x) const;
  bool contains(const HyperboloidPoint& x, double tol = 1e-9) const;

  /// exp_o((0, v)): (√c·cosh(‖v‖/√c), √c·sinh(‖v‖/√c)·v/‖v‖).
  HyperboloidPoint lift(std::span<const double> v) const;
  /// Inverse of lift; returns the d spatial tangent coordinates at the origin.
  std::vector<double> log_origin(const HyperboloidPoint& x) const;

  HyperboloidPoint exp_at(const HyperboloidPoint& x, const TangentVector& v) const;
  TangentVector log_at(const HyperboloidPoint& x, const HyperboloidPoint& y) const;
  /// √c·arcosh(−⟨x,y⟩_L / c), argument clamped to [1, ∞).
  double distance(const HyperboloidPoint& x, const HyperboloidPoint& y) const;

  /// Recomputes x₀ = √(c + Σxᵢ²) from the spatial coordinates.
  HyperboloidPoint project(std::span<const double> coords) const;

 private:
  void require_point(const HyperboloidPoint& x, const char* what) const;

  std::size_t dim_;
  double c_;
};

/// sinh(s)/s and (s·cosh s − sinh s)/s³, both smooth at s = 0.
double sinhc(double s);
double sinhc_slope(double s);

/// θ/sinh θ written in terms of α = cosh θ (the log-map scale), and its derivative.
double log_scale(double alpha);
double log_scale_derivative(double alpha);

// Differentiable row-wise maps used by the convolution layers.

/// Lifts every row of an n×d matrix of origin tangents to an n×(d+1) matrix of
/// points. Rows longer than kMaxLiftNorm·√c are shortened to that length first.
Var lift_rows(const Var& tangents, double c);
/// Maps every row of an n×(d+1) matrix of points to its n×d origin tangent.
Var log_origin_rows(const Var& points, double c);
/// Distance of every row point to the origin, as an n×1 column.
Var distance_to_origin_rows(const Var& points, double c);

}  // namespace h2sr::manifold
