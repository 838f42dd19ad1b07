#pragma once
// Periodic-channel geometry, trigonometric spectral bases, quadrature, and the
// discrete differential/trace operators shared by all other modules.
//
// Domain: O = T_L x (0, H), a channel periodic in x. The boundary consists of
// the two circles y = 0 and y = H; boundary fields are stored per circle and
// boundary integrals sum both circles.
//
// Three real orthonormal families:
//   bulk      cos/sin(2 pi k x / L) * cos(m pi y / H)      Neumann Laplacian
//   boundary  cos/sin(2 pi k x / L) per circle             circle Laplace-Beltrami
//   velocity  u = (d_y psi, -d_x psi),                    divergence-free,
//             psi = cos/sin(2 pi k x / L) * sin(m pi y / H),   u.n = 0 on both circles
//
// Quadrature: uniform nodes with equal weights in x (exact for the torus
// band), Gauss-Legendre in y. Mode tables are dense grid x mode matrices so
// transforms are single GEMV calls.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "chb/rng.hpp"

namespace chb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ChannelGeometry {
  double period_length = 2.0 * std::numbers::pi;  // L > 0
  double channel_height = 1.0;                    // H > 0, y in [0, H]
  int n_x_modes = 4;  // cos/sin pairs in x; the x family has 1 + 2*n_x_modes members
  int n_y_modes = 4;  // cosine modes in y, m = 0..n_y_modes-1
  int n_quad_x = 0;   // collocation sizes; 0 = auto, see resolved()
  int n_quad_y = 0;

  int x_family_size() const { return 1 + 2 * n_x_modes; }

  // Auto quadrature sizes. Projecting a cubic composition of band-n fields
  // against a test mode yields band-4n integrands. In x the uniform rule is
  // exact below the aliasing threshold, so 4n+2 clears them. In y the
  // Gauss-Legendre rule is only spectrally accurate for cosines; measured
  // point counts show band+16 keeps the error at machine precision.
  ChannelGeometry resolved() const {
    ChannelGeometry g = *this;
    if (g.n_quad_x == 0) g.n_quad_x = 4 * g.n_x_modes + 2;
    if (g.n_quad_y == 0) g.n_quad_y = 4 * g.n_y_modes + 16;
    return g;
  }
};

enum class Family { bulk, boundary, velocity };

namespace detail {

// Gauss-Legendre nodes/weights on [0, h], Newton iteration on P_n
inline void gauss_legendre(int n, double h, VectorXd& nodes, VectorXd& weights) {
  nodes.resize(n);
  weights.resize(n);
  const double pi = std::numbers::pi;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));  // standard initial guess
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = 0.5 * h * (1.0 - x);
    nodes[n - 1 - i] = 0.5 * h * (1.0 + x);
    const double w = h / ((1.0 - x * x) * pp * pp);
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

// x-family member fx evaluated at x: fx=0 constant, odd cos, even sin
struct XFactor {
  double norm, wavenum;  // normalization and a = 2 pi k / L
  int kind;              // 0 const, 1 cos, 2 sin
  double value(double x) const {
    switch (kind) {
      case 1: return norm * std::cos(wavenum * x);
      case 2: return norm * std::sin(wavenum * x);
      default: return norm;
    }
  }
  double deriv(double x) const {
    switch (kind) {
      case 1: return -norm * wavenum * std::sin(wavenum * x);
      case 2: return norm * wavenum * std::cos(wavenum * x);
      default: return 0.0;
    }
  }
  double deriv2(double x) const {
    return -wavenum * wavenum * value(x);
  }
};

inline XFactor x_factor(int fx, double L) {
  XFactor f;
  if (fx == 0) {
    f = {1.0 / std::sqrt(L), 0.0, 0};
  } else {
    const int k = (fx + 1) / 2;
    f = {std::sqrt(2.0 / L), 2.0 * std::numbers::pi * k / L, (fx % 2 == 1) ? 1 : 2};
  }
  return f;
}

}  // namespace detail

struct SpectralBasis {
  ChannelGeometry geom;  // resolved (quadrature sizes filled in)

  // quadrature: bulk grid index g = iy * n_quad_x + ix
  VectorXd qx, qy;    // node coordinates
  VectorXd wx, wy;    // 1-d weights
  VectorXd w;         // tensor weights on the bulk grid
  double wb = 0.0;    // per-node boundary weight (uniform in x)
  double area = 0.0;        // |O| = L*H
  double bnd_length = 0.0;  // |Gamma| = 2L

  // bulk modes, index i = fx * n_y_modes + m
  int n_bulk = 0;
  VectorXd bulk_eig;
  MatrixXd bulk_val, bulk_dx, bulk_dy;  // grid x modes

  // boundary modes, index j = circle * x_family_size + fx,
  // boundary grid row r = circle * n_quad_x + ix
  int n_bnd = 0;
  VectorXd bnd_eig;
  MatrixXd bnd_val, bnd_dx;

  // exact trace in coefficient space: boundary coeffs of (bulk field)|_Gamma
  MatrixXd trace_op;  // n_bnd x n_bulk

  // velocity modes, index i = fx * n_y_modes + (m - 1), m = 1..n_y_modes
  int n_vel = 0;
  VectorXd vel_eig;  // stream-function Laplacian eigenvalue (sort key)
  MatrixXd vel_ux, vel_uy;
  MatrixXd vel_g11, vel_g12, vel_g21, vel_g22;  // full velocity gradient tables
  MatrixXd vel_bval;  // tangential (x) component at boundary nodes; normal is 0

  int grid_size() const { return geom.n_quad_x * geom.n_quad_y; }
  int bnd_grid_size() const { return 2 * geom.n_quad_x; }
};

inline SpectralBasis build_basis(const ChannelGeometry& geom_in) {
  const ChannelGeometry geom = geom_in.resolved();
  if (geom.period_length <= 0.0 || geom.channel_height <= 0.0)
    throw std::invalid_argument("geometry: period_length and channel_height must be > 0");
  if (geom.n_x_modes < 1 || geom.n_y_modes < 1)
    throw std::invalid_argument("geometry: mode counts must be >= 1");
  if (geom.n_quad_x < 3 * geom.n_x_modes || geom.n_quad_y < 3 * geom.n_y_modes)
    throw std::invalid_argument(
        "geometry: quadrature sizes violate the dealiasing margin (need >= 3x modes)");

  const double L = geom.period_length;
  const double H = geom.channel_height;
  const int nqx = geom.n_quad_x, nqy = geom.n_quad_y;
  const int nxf = geom.x_family_size();
  const int nym = geom.n_y_modes;
  const double pi = std::numbers::pi;

  SpectralBasis b;
  b.geom = geom;
  b.area = L * H;
  b.bnd_length = 2.0 * L;

  b.qx.resize(nqx);
  b.wx = VectorXd::Constant(nqx, L / nqx);
  for (int i = 0; i < nqx; ++i) b.qx[i] = L * i / nqx;
  detail::gauss_legendre(nqy, H, b.qy, b.wy);
  b.w.resize(nqx * nqy);
  for (int iy = 0; iy < nqy; ++iy)
    for (int ix = 0; ix < nqx; ++ix) b.w[iy * nqx + ix] = b.wx[ix] * b.wy[iy];
  b.wb = L / nqx;

  // bulk family
  b.n_bulk = nxf * nym;
  b.bulk_eig.resize(b.n_bulk);
  b.bulk_val.resize(nqx * nqy, b.n_bulk);
  b.bulk_dx.resize(nqx * nqy, b.n_bulk);
  b.bulk_dy.resize(nqx * nqy, b.n_bulk);
  for (int fx = 0; fx < nxf; ++fx) {
    const auto X = detail::x_factor(fx, L);
    for (int m = 0; m < nym; ++m) {
      const int i = fx * nym + m;
      const double bwn = m * pi / H;
      const double ynorm = (m == 0) ? std::sqrt(1.0 / H) : std::sqrt(2.0 / H);
      b.bulk_eig[i] = X.wavenum * X.wavenum + bwn * bwn;
      for (int iy = 0; iy < nqy; ++iy) {
        const double cy = ynorm * std::cos(bwn * b.qy[iy]);
        const double sy = -ynorm * bwn * std::sin(bwn * b.qy[iy]);
        for (int ix = 0; ix < nqx; ++ix) {
          const int g = iy * nqx + ix;
          b.bulk_val(g, i) = X.value(b.qx[ix]) * cy;
          b.bulk_dx(g, i) = X.deriv(b.qx[ix]) * cy;
          b.bulk_dy(g, i) = X.value(b.qx[ix]) * sy;
        }
      }
    }
  }

  // boundary family (per circle; tangential derivative is d/dx)
  b.n_bnd = 2 * nxf;
  b.bnd_eig.resize(b.n_bnd);
  b.bnd_val = MatrixXd::Zero(2 * nqx, b.n_bnd);
  b.bnd_dx = MatrixXd::Zero(2 * nqx, b.n_bnd);
  for (int c = 0; c < 2; ++c)
    for (int fx = 0; fx < nxf; ++fx) {
      const auto X = detail::x_factor(fx, L);
      const int j = c * nxf + fx;
      b.bnd_eig[j] = X.wavenum * X.wavenum;
      for (int ix = 0; ix < nqx; ++ix) {
        b.bnd_val(c * nqx + ix, j) = X.value(b.qx[ix]);
        b.bnd_dx(c * nqx + ix, j) = X.deriv(b.qx[ix]);
      }
    }

  // exact coefficient-space trace: bulk (fx, m) -> circle c coefficient
  // Y_m(0) = sqrt(1/H) or sqrt(2/H); Y_m(H) = (-1)^m Y_m(0)
  b.trace_op = MatrixXd::Zero(b.n_bnd, b.n_bulk);
  for (int fx = 0; fx < nxf; ++fx)
    for (int m = 0; m < nym; ++m) {
      const int i = fx * nym + m;
      const double y0 = (m == 0) ? std::sqrt(1.0 / H) : std::sqrt(2.0 / H);
      b.trace_op(0 * nxf + fx, i) = y0;
      b.trace_op(1 * nxf + fx, i) = (m % 2 == 0) ? y0 : -y0;
    }

  // velocity family from stream functions psi = A * X(x) * sin(m pi y / H)
  //   u = (psi_y, -psi_x), grad u = [[psi_xy, psi_yy], [-psi_xx, -psi_xy]]
  b.n_vel = nxf * nym;
  b.vel_eig.resize(b.n_vel);
  b.vel_ux.resize(nqx * nqy, b.n_vel);
  b.vel_uy.resize(nqx * nqy, b.n_vel);
  b.vel_g11.resize(nqx * nqy, b.n_vel);
  b.vel_g12.resize(nqx * nqy, b.n_vel);
  b.vel_g21.resize(nqx * nqy, b.n_vel);
  b.vel_g22.resize(nqx * nqy, b.n_vel);
  b.vel_bval = MatrixXd::Zero(2 * nqx, b.n_vel);
  for (int fx = 0; fx < nxf; ++fx) {
    const auto Xn = detail::x_factor(fx, L);  // carries the L2(0,L) x-normalization
    for (int m = 1; m <= nym; ++m) {
      const int i = fx * nym + (m - 1);
      const double bwn = m * pi / H;
      b.vel_eig[i] = Xn.wavenum * Xn.wavenum + bwn * bwn;
      // scale so that |u|_{L2(O)} = 1: u = A (X sin(b y))_perp with the
      // normalized X; |u|^2 = A^2 (b^2 |X Cy|^2 + |X' Sy|^2) = A^2 (b^2 + a^2) H/2
      const double A = 1.0 / std::sqrt(0.5 * H * (bwn * bwn + Xn.wavenum * Xn.wavenum));
      for (int iy = 0; iy < nqy; ++iy) {
        const double Sy = std::sin(bwn * b.qy[iy]);
        const double Cy = std::cos(bwn * b.qy[iy]);
        for (int ix = 0; ix < nqx; ++ix) {
          const int g = iy * nqx + ix;
          const double X = Xn.value(b.qx[ix]);
          const double Xp = Xn.deriv(b.qx[ix]);
          const double Xpp = Xn.deriv2(b.qx[ix]);
          b.vel_ux(g, i) = A * bwn * X * Cy;
          b.vel_uy(g, i) = -A * Xp * Sy;
          b.vel_g11(g, i) = A * bwn * Xp * Cy;    // psi_xy
          b.vel_g12(g, i) = -A * bwn * bwn * X * Sy;  // psi_yy
          b.vel_g21(g, i) = -A * Xpp * Sy;        // -psi_xx
          b.vel_g22(g, i) = -A * bwn * Xp * Cy;   // -psi_xy
        }
      }
      const double sgn = (m % 2 == 0) ? 1.0 : -1.0;  // cos(m pi)
      for (int ix = 0; ix < nqx; ++ix) {
        b.vel_bval(0 * nqx + ix, i) = A * bwn * Xn.value(b.qx[ix]);
        b.vel_bval(1 * nqx + ix, i) = sgn * A * bwn * Xn.value(b.qx[ix]);
      }
    }
  }
  return b;
}

namespace detail {
inline const MatrixXd& value_table(const SpectralBasis& b, Family f) {
  switch (f) {
    case Family::bulk: return b.bulk_val;
    case Family::boundary: return b.bnd_val;
    default: throw std::invalid_argument("value_table: velocity needs the stacked overloads");
  }
}
}  // namespace detail

// pointwise field values on the collocation grid; for velocity the result is
// the stacked pair [u_x; u_y]
inline VectorXd to_grid(const VectorXd& coeffs, const SpectralBasis& b, Family f) {
  if (f == Family::velocity) {
    if (coeffs.size() != b.n_vel)
      throw std::invalid_argument("to_grid: velocity coefficient length mismatch");
    VectorXd out(2 * b.grid_size());
    out.head(b.grid_size()) = b.vel_ux * coeffs;
    out.tail(b.grid_size()) = b.vel_uy * coeffs;
    return out;
  }
  const MatrixXd& V = detail::value_table(b, f);
  if (coeffs.size() != V.cols())
    throw std::invalid_argument("to_grid: coefficient length mismatch");
  return V * coeffs;
}

// quadrature-based L2 projection onto the truncated family
inline VectorXd from_grid(const VectorXd& values, const SpectralBasis& b, Family f) {
  switch (f) {
    case Family::bulk:
      if (values.size() != b.grid_size())
        throw std::invalid_argument("from_grid: bulk grid shape mismatch");
      return b.bulk_val.transpose() * values.cwiseProduct(b.w);
    case Family::boundary:
      if (values.size() != b.bnd_grid_size())
        throw std::invalid_argument("from_grid: boundary grid shape mismatch");
      return b.bnd_val.transpose() * (b.wb * values);
    case Family::velocity: {
      if (values.size() != 2 * b.grid_size())
        throw std::invalid_argument("from_grid: velocity grid shape mismatch");
      return b.vel_ux.transpose() * values.head(b.grid_size()).cwiseProduct(b.w) +
             b.vel_uy.transpose() * values.tail(b.grid_size()).cwiseProduct(b.w);
    }
  }
  throw std::invalid_argument("from_grid: unknown family");
}

// weighted Dirichlet form  int w grad f . grad g  (tangential on the boundary);
// symmetric in (f, g); equals sum_j lambda_j f_j g_j for unit weight
inline double gradient_quadrature(const VectorXd& f_coeffs, const VectorXd& g_coeffs,
                                  const SpectralBasis& b, const VectorXd& weight,
                                  Family f = Family::bulk) {
  if (f == Family::bulk) {
    if (weight.size() != b.grid_size())
      throw std::invalid_argument("gradient_quadrature: weight shape mismatch");
    const VectorXd fx = b.bulk_dx * f_coeffs, fy = b.bulk_dy * f_coeffs;
    const VectorXd gx = b.bulk_dx * g_coeffs, gy = b.bulk_dy * g_coeffs;
    return (b.w.cwiseProduct(weight).cwiseProduct(fx.cwiseProduct(gx) + fy.cwiseProduct(gy)))
        .sum();
  }
  if (f == Family::boundary) {
    if (weight.size() != b.bnd_grid_size())
      throw std::invalid_argument("gradient_quadrature: weight shape mismatch");
    const VectorXd fd = b.bnd_dx * f_coeffs, gd = b.bnd_dx * g_coeffs;
    return b.wb * weight.cwiseProduct(fd.cwiseProduct(gd)).sum();
  }
  throw std::invalid_argument("gradient_quadrature: bulk or boundary only");
}

// bulk field restricted to the two circles, returned on the boundary grid;
// exact because the trace of a bandlimited field is bandlimited in x
inline VectorXd trace(const VectorXd& bulk_coeffs, const SpectralBasis& b) {
  return b.bnd_val * (b.trace_op * bulk_coeffs);
}

struct KornPoincareCertificate {
  double korn_ratio_max = 0.0;      // |grad v| / (|Dv| + |v|_Gamma)
  double poincare_ratio_max = 0.0;  // per-circle mean removed (Gamma is disconnected)
  int skipped = 0;                  // degenerate samples (zero denominator)
  int n_samples = 0;
};

// samples random velocity/boundary fields and records the worst observed
// constants of the strain-trace gradient bound and of the surface Poincare
// bound. The boundary mean is removed per circle: with two disjoint circles a
// cross-circle constant offset has zero tangential gradient, so only the
// per-circle oscillation is controllable.
inline KornPoincareCertificate korn_poincare_certificate(const SpectralBasis& b,
                                                         int n_samples,
                                                         std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("korn_poincare_certificate: n_samples >= 1");
  KornPoincareCertificate cert;
  cert.n_samples = n_samples;
  const int nqx = b.geom.n_quad_x;
  const int nxf = b.geom.x_family_size();
  for (int s = 0; s < n_samples; ++s) {
    // velocity sample -> Korn ratio
    VectorXd e(b.n_vel);
    for (int i = 0; i < b.n_vel; ++i) e[i] = keyed_normal(seed, 0, s, i, 11);
    const VectorXd g11 = b.vel_g11 * e, g12 = b.vel_g12 * e;
    const VectorXd g21 = b.vel_g21 * e, g22 = b.vel_g22 * e;
    const double grad2 = (b.w.array() * (g11.array().square() + g12.array().square() +
                                         g21.array().square() + g22.array().square()))
                             .sum();
    const VectorXd d12 = 0.5 * (g12 + g21);
    const double strain2 = (b.w.array() * (g11.array().square() + 2.0 * d12.array().square() +
                                           g22.array().square()))
                               .sum();
    const VectorXd ub = b.vel_bval * e;
    const double trace2 = b.wb * ub.squaredNorm();
    const double kden = std::sqrt(strain2) + std::sqrt(trace2);
    if (kden <= 1e-14 * std::sqrt(grad2) || kden == 0.0) {
      ++cert.skipped;
    } else {
      cert.korn_ratio_max = std::max(cert.korn_ratio_max, std::sqrt(grad2) / kden);
    }

    // boundary sample -> per-circle Poincare ratio
    VectorXd v(b.n_bnd);
    for (int j = 0; j < b.n_bnd; ++j) v[j] = keyed_normal(seed, 1, s, j, 12);
    VectorXd vals = b.bnd_val * v;
    double num2 = 0.0;
    for (int c = 0; c < 2; ++c) {
      auto seg = vals.segment(c * nqx, nqx);
      const double mean = seg.sum() / nqx;
      num2 += b.wb * (seg.array() - mean).square().sum();
    }
    const VectorXd vd = b.bnd_dx * v;
    const double den2 = b.wb * vd.squaredNorm();
    if (den2 <= 1e-28 * std::max(num2, 1.0)) {
      ++cert.skipped;
      (void)nxf;
    } else {
      cert.poincare_ratio_max =
          std::max(cert.poincare_ratio_max, std::sqrt(num2 / den2));
    }
  }
  return cert;
}

// human-readable mode table for debugging
inline std::string basis_summary(const SpectralBasis& b) {
  std::string s;
  char line[160];
  std::snprintf(line, sizeof line,
                "channel L=%.6g H=%.6g  quad %dx%d  modes: bulk %d boundary %d velocity %d\n",
                b.geom.period_length, b.geom.channel_height, b.geom.n_quad_x, b.geom.n_quad_y,
                b.n_bulk, b.n_bnd, b.n_vel);
  s += line;
  auto family = [&](const char* name, const VectorXd& eig) {
    std::snprintf(line, sizeof line, "%s eigenvalues:", name);
    s += line;
    for (int i = 0; i < eig.size(); ++i) {
      std::snprintf(line, sizeof line, " %.6g", eig[i]);
      s += line;
    }
    s += "\n";
  };
  family("bulk", b.bulk_eig);
  family("boundary", b.bnd_eig);
  family("velocity", b.vel_eig);
  return s;
}

}  // namespace chb
