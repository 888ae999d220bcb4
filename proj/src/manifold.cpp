#include "h2sr/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "h2sr/errors.hpp"

namespace h2sr::manifold {
namespace {

double spatial_norm(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

double euclidean_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// asinh(s)/s and (s/√(1+s²) − asinh s)/s³.
double asinhc(double s) { return s < 1e-4 ? 1.0 - s * s / 6.0 : std::asinh(s) / s; }
double asinhc_slope(double s) {
  if (s < 1e-3) return -1.0 / 3.0 + 0.3 * s * s;
  return (s / std::sqrt(1.0 + s * s) - std::asinh(s)) / (s * s * s);
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

double minkowski_inner(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw DimensionError("minkowski_inner: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  double s = -x[0] * y[0];
  for (std::size_t i = 1; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double sinhc(double s) { return s < 1e-4 ? 1.0 + s * s / 6.0 : std::sinh(s) / s; }

double sinhc_slope(double s) {
  if (s < 1e-3) return 1.0 / 3.0 + s * s / 30.0;
  return (s * std::cosh(s) - std::sinh(s)) / (s * s * s);
}

double log_scale(double alpha) {
  const double eps = alpha - 1.0;
  if (eps < 1e-6) return 1.0 - eps / 3.0 + 2.0 * eps * eps / 15.0;
  return std::acosh(alpha) / std::sqrt(eps * (alpha + 1.0));
}

double log_scale_derivative(double alpha) {
  const double eps = alpha - 1.0;
  if (eps < 1e-6) return -1.0 / 3.0 + 4.0 * eps / 15.0;
  return (1.0 - alpha * log_scale(alpha)) / (eps * (alpha + 1.0));
}

Hyperboloid::Hyperboloid(std::size_t dim, double c) : dim_(dim), c_(c) {
  if (!(c > 0) || !std::isfinite(c)) throw ConfigError("curvature parameter c must be positive");
  if (dim == 0) throw DimensionError("hyperboloid dimension must be positive");
}

HyperboloidPoint Hyperboloid::origin() const {
  HyperboloidPoint o{std::vector<double>(dim_ + 1, 0.0)};
  o.coords[0] = std::sqrt(c_);
  return o;
}

double Hyperboloid::membership_error(const HyperboloidPoint& x) const {
  long double s = static_cast<long double>(c_);
  for (std::size_t i = 1; i < x.coords.size(); ++i) {
    s += static_cast<long double>(x.coords[i]) * x.coords[i];
  }
  const long double t = x.coords[0];
  return static_cast<double>(std::abs(s - t * t));
}

bool Hyperboloid::contains(const HyperboloidPoint& x, double tol) const {
  return x.coords.size() == dim_ + 1 && x.coords[0] > 0 && membership_error(x) < tol;
}

void Hyperboloid::require_point(const HyperboloidPoint& x, const char* what) const {
  if (x.coords.size() != dim_ + 1) {
    throw DimensionError(std::string(what) + ": point has " + std::to_string(x.coords.size()) +
                         " coordinates, expected " + std::to_string(dim_ + 1));
  }
  require_finite(x.coords, what);
  if (!(x.coords[0] > 0) || membership_error(x) > kMembershipTolerance * std::max(1.0, x.coords[0] * x.coords[0])) {
    throw GeometryError(std::string(what) + ": point is not on the hyperboloid");
  }
}

HyperboloidPoint Hyperboloid::project(std::span<const double> coords) const {
  if (coords.size() != dim_ + 1) throw DimensionError("project: wrong coordinate count");
  HyperboloidPoint p{std::vector<double>(coords.begin(), coords.end())};
  double s = c_;
  for (std::size_t i = 1; i < p.coords.size(); ++i) s += p.coords[i] * p.coords[i];
  p.coords[0] = std::sqrt(s);
  return p;
}

HyperboloidPoint Hyperboloid::lift(std::span<const double> v) const {
  if (v.size() != dim_) {
    throw DimensionError("lift: vector has " + std::to_string(v.size()) + " entries, expected " +
                         std::to_string(dim_));
  }
  require_finite(v, "lift_to_hyperboloid");
  const double r = euclidean_norm(v);
  if (r < kTinyNorm) return origin();
  const double sc = std::sqrt(c_);
  const double scale = sc * std::sinh(r / sc) / r;
  std::vector<double> coords(dim_ + 1);
  for (std::size_t i = 0; i < dim_; ++i) coords[i + 1] = scale * v[i];
  return project(coords);
}

std::vector<double> Hyperboloid::log_origin(const HyperboloidPoint& x) const {
  require_point(x, "log_origin");
  const double sc = std::sqrt(c_);
  const double r = spatial_norm(x.coords);
  const double scale = asinhc(r / sc);
  std::vector<double> v(dim_);
  for (std::size_t i = 0; i < dim_; ++i) v[i] = scale * x.coords[i + 1];
  return v;
}

HyperboloidPoint Hyperboloid::exp_at(const HyperboloidPoint& x, const TangentVector& v) const {
  require_point(x, "exp_at");
  if (v.coords.size() != dim_ + 1) throw DimensionError("exp_at: tangent has wrong length");
  require_finite(v.coords, "exp_at");
  const double inner = minkowski_inner(x.coords, v.coords);
  double vmax = 0.0;
  for (double t : v.coords) vmax = std::max(vmax, std::abs(t));
  if (std::abs(inner) > kMembershipTolerance * std::max(1.0, vmax * x.coords[0])) {
    throw GeometryError("exp_at: vector is not tangent at the base point");
  }
  const double n = std::sqrt(std::max(0.0, minkowski_inner(v.coords, v.coords)));
  if (n < kTinyNorm) return x;
  const double sc = std::sqrt(c_);
  const double ch = std::cosh(n / sc);
  const double sh = sc * std::sinh(n / sc) / n;
  std::vector<double> y(dim_ + 1);
  for (std::size_t i = 0; i <= dim_; ++i) y[i] = ch * x.coords[i] + sh * v.coords[i];
  return project(y);
}

TangentVector Hyperboloid::log_at(const HyperboloidPoint& x, const HyperboloidPoint& y) const {
  require_point(x, "log_at");
  require_point(y, "log_at");
  const double alpha = std::max(1.0, -minkowski_inner(x.coords, y.coords) / c_);
  const double f = log_scale(alpha);
  TangentVector t{x, std::vector<double>(dim_ + 1)};
  for (std::size_t i = 0; i <= dim_; ++i) t.coords[i] = f * (y.coords[i] - alpha * x.coords[i]);
  return t;
}

double Hyperboloid::distance(const HyperboloidPoint& x, const HyperboloidPoint& y) const {
  require_point(x, "distance");
  require_point(y, "distance");
  const double alpha = std::max(1.0, -minkowski_inner(x.coords, y.coords) / c_);
  return std::sqrt(c_) * std::acosh(alpha);
}

Var lift_rows(const Var& tangents, double c) {
  const Tensor& z = tangents.value();
  if (z.rank() != 2) throw DimensionError("lift_rows expects a matrix");
  const std::size_t n = z.rows(), d = z.cols();
  const double sc = std::sqrt(c);
  Tensor out = Tensor::zeros({n, d + 1});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    require_finite(row, "lift_rows");
    const double raw = euclidean_norm(row) / sc;
    const double shrink = raw > kMaxLiftNorm ? kMaxLiftNorm / raw : 1.0;
    const double s = raw * shrink;
    const double scale = sinhc(s) * shrink;
    double sq = c;
    for (std::size_t j = 0; j < d; ++j) {
      const double xs = scale * row[j];
      out.at(r, j + 1) = xs;
      sq += xs * xs;
    }
    out.at(r, 0) = std::sqrt(sq);
  }
  return tangents.tape()->record(std::move(out), {tangents},
                                 [tangents, c, sc](const Tensor& g, std::span<Tensor> gin) {
    const Tensor& z = tangents.value();
    const std::size_t d = z.cols();
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      const double raw = euclidean_norm(row) / sc;
      if (raw > kMaxLiftNorm) {
        // Gradient at the shortened tangent u, then through u = z·K√c/‖z‖,
        // whose Jacobian is (K√c/‖z‖)(I − ẑẑᵀ).
        const double shrink = kMaxLiftNorm / raw;
        const double s = kMaxLiftNorm;
        const double scale = sinhc(s);
        const double slope = sinhc_slope(s) / c;
        const double time_slope = scale / sc;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g.at(r, j + 1) * row[j] * shrink;
        const double g0 = g.at(r, 0);
        std::vector<double> gu(d);
        double radial = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double u = row[j] * shrink;
          gu[j] = scale * g.at(r, j + 1) + (slope * dot + g0 * time_slope) * u;
          radial += gu[j] * row[j];
        }
        const double zz = raw * raw * c;
        for (std::size_t j = 0; j < d; ++j) gin[0].at(r, j) += shrink * (gu[j] - radial * row[j] / zz);
        continue;
      }
      const double s = raw;
      const double scale = sinhc(s);
      // d(scale)/dz_j = sinhc_slope(s)/c · z_j and dx0/dz_j = sinhc(s)/√c · z_j.
      const double slope = sinhc_slope(s) / c;
      const double time_slope = scale / sc;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g.at(r, j + 1) * row[j];
      const double g0 = g.at(r, 0);
      for (std::size_t j = 0; j < d; ++j) {
        gin[0].at(r, j) += scale * g.at(r, j + 1) + slope * dot * row[j] + g0 * time_slope * row[j];
      }
    }
  });
}

Var log_origin_rows(const Var& points, double c) {
  const Tensor& x = points.value();
  if (x.rank() != 2 || x.cols() < 2) throw DimensionError("log_origin_rows expects an n×(d+1) matrix");
  const std::size_t n = x.rows(), d = x.cols() - 1;
  const double sc = std::sqrt(c);
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.row(r);
    const double scale = asinhc(spatial_norm(row) / sc);
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = scale * row[j + 1];
  }
  return points.tape()->record(std::move(out), {points},
                               [points, c, sc](const Tensor& g, std::span<Tensor> gin) {
    const Tensor& x = points.value();
    const std::size_t d = x.cols() - 1;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      const double s = spatial_norm(row) / sc;
      const double scale = asinhc(s);
      const double slope = asinhc_slope(s) / c;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g.at(r, j) * row[j + 1];
      for (std::size_t j = 0; j < d; ++j) {
        gin[0].at(r, j + 1) += scale * g.at(r, j) + slope * dot * row[j + 1];
      }
    }
  });
}

Var distance_to_origin_rows(const Var& points, double c) {
  const Tensor& x = points.value();
  if (x.rank() != 2) throw DimensionError("distance_to_origin_rows expects a matrix");
  const double sc = std::sqrt(c);
  Tensor out = Tensor::zeros({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out[r] = sc * std::acosh(std::max(1.0, x.at(r, 0) / sc));
  }
  return points.tape()->record(std::move(out), {points},
                               [points, sc](const Tensor& g, std::span<Tensor> gin) {
    const Tensor& x = points.value();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double a = x.at(r, 0) / sc;
      if (a <= 1.0) continue;
      gin[0].at(r, 0) += g[r] / std::sqrt((a - 1.0) * (a + 1.0));
    }
  });
}

}  // namespace h2sr::manifold
