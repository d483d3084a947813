// Spherical-harmonics Lambertian shading: order-2 basis evaluation, forward
// render (basis dot product, plus the 4x4 quadratic form as an independent
// cross-check route), analytic backward, and least-squares light estimation.
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/fields.hpp"

namespace nfed {

// Lambertian irradiance constants.
inline constexpr double sh_c1 = 0.429043;
inline constexpr double sh_c2 = 0.511664;
inline constexpr double sh_c3 = 0.743125;
inline constexpr double sh_c4 = 0.886227;
inline constexpr double sh_c5 = 0.247708;

// 27 lighting coefficients ordered [R1..R9, G1..G9, B1..B9].
struct sh_coeffs {
  std::array<double, 27> v{};

  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  double* channel(int ch) { return v.data() + 9 * ch; }
  const double* channel(int ch) const { return v.data() + 9 * ch; }

  void validate() const {
    for (double x : v)
      if (!std::isfinite(x)) throw validation_error("sh_coeffs: non-finite value");
  }
};

inline sh_coeffs operator+(const sh_coeffs& a, const sh_coeffs& b) {
  sh_coeffs r;
  for (size_t i = 0; i < 27; ++i) r[i] = a[i] + b[i];
  return r;
}
inline sh_coeffs operator*(double s, const sh_coeffs& a) {
  sh_coeffs r;
  for (size_t i = 0; i < 27; ++i) r[i] = s * a[i];
  return r;
}

inline nlohmann::json sh_to_json(const sh_coeffs& l) {
  return nlohmann::json{{"order", "R1..R9,G1..G9,B1..B9"},
                        {"coeffs", std::vector<double>(l.v.begin(), l.v.end())}};
}

inline sh_coeffs sh_from_json(const nlohmann::json& j) {
  if (!j.contains("coeffs") || !j["coeffs"].is_array() || j["coeffs"].size() != 27)
    throw validation_error("sh_coeffs: expected 27-entry \"coeffs\" array");
  sh_coeffs l;
  for (size_t i = 0; i < 27; ++i) l[i] = j["coeffs"][i].get<double>();
  l.validate();
  return l;
}

// Per-channel basis b(n): shading is S = b(n) . L. These are exactly the
// partial derivatives dS/dL_j, with L 1-indexed in the usual convention.
template <class T>
std::array<T, 9> sh_basis_t(T nx, T ny, T nz) {
  const T c1 = T(sh_c1), c2 = T(sh_c2), c3 = T(sh_c3), c4 = T(sh_c4), c5 = T(sh_c5);
  return {c4,
          T(2) * c2 * ny,
          T(2) * c2 * nz,
          T(2) * c2 * nx,
          T(2) * c1 * nx * ny,
          T(2) * c1 * ny * nz,
          c3 * nz * nz - c5,
          T(2) * c1 * nx * nz,
          c1 * (nx * nx - ny * ny)};
}

inline std::array<double, 9> sh_basis(double nx, double ny, double nz) {
  double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
  if (std::abs(norm - 1.0) > 1e-6)
    throw validation_error("sh_basis: input is not unit length");
  return sh_basis_t(nx, ny, nz);
}

// dS/dn for one channel, treating the normal components as free variables.
template <class T>
void sh_normal_partials(const T* L, T nx, T ny, T nz, T& dnx, T& dny, T& dnz) {
  const T c1 = T(sh_c1), c2 = T(sh_c2), c3 = T(sh_c3);
  dnx = T(2) * (c1 * L[8] * nx + c1 * L[4] * ny + c1 * L[7] * nz + c2 * L[3]);
  dny = T(2) * (c1 * L[4] * nx - c1 * L[8] * ny + c1 * L[5] * nz + c2 * L[1]);
  dnz = T(2) * (c1 * L[7] * nx + c1 * L[5] * ny + c3 * L[6] * nz + c2 * L[2]);
}

template <class T>
T sh_shade_pixel(const T* L, T nx, T ny, T nz) {
  const auto b = sh_basis_t(nx, ny, nz);
  T s = T(0);
  for (int j = 0; j < 9; ++j) s += b[j] * L[j];
  return s;
}

// Quadratic-form route [n;1]^T K [n;1]; kept as an independent oracle for the
// basis route above.
inline double sh_shade_pixel_quadratic(const double* L, double nx, double ny,
                                       double nz) {
  const double K[4][4] = {
      {sh_c1 * L[8], sh_c1 * L[4], sh_c1 * L[7], sh_c2 * L[3]},
      {sh_c1 * L[4], -sh_c1 * L[8], sh_c1 * L[5], sh_c2 * L[1]},
      {sh_c1 * L[7], sh_c1 * L[5], sh_c3 * L[6], sh_c2 * L[2]},
      {sh_c2 * L[3], sh_c2 * L[1], sh_c2 * L[2], sh_c4 * L[0] - sh_c5 * L[6]}};
  const double q[4] = {nx, ny, nz, 1.0};
  double s = 0.0;
  for (int r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 4; ++c) acc += K[r][c] * q[c];
    s += q[r] * acc;
  }
  return s;
}

// Unit-normalization with exact Jacobian (I - n n^T)/|raw|; bridges free
// 3-vector parameterizations to the unit-normal shading inputs. Vectors with
// |raw| <= eps fall back to (0,0,1) with a zero Jacobian.
template <class T>
struct normalize_result {
  T nx, ny, nz;
  T jac[3][3];  // d n_i / d raw_j
  bool degenerate = false;
};

template <class T>
normalize_result<T> normalize_with_grad(T rx, T ry, T rz, T eps = T(1e-8)) {
  normalize_result<T> r;
  T norm = std::sqrt(rx * rx + ry * ry + rz * rz);
  if (!(norm > eps)) {
    r.nx = T(0);
    r.ny = T(0);
    r.nz = T(1);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.jac[i][j] = T(0);
    r.degenerate = true;
    return r;
  }
  r.nx = rx / norm;
  r.ny = ry / norm;
  r.nz = rz / norm;
  const T n[3] = {r.nx, r.ny, r.nz};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r.jac[i][j] = ((i == j ? T(1) : T(0)) - n[i] * n[j]) / norm;
  return r;
}

// Forward shading over a normal field: 3-channel map, S = b(n) . L per
// channel. Pixels outside the mask (if given) are zero. Negative values are
// kept; clamping is an export concern.
inline pixel_field shade_forward(const normal_field& normals, const sh_coeffs& light,
                                 const matte_mask* mask = nullptr) {
  light.validate();
  if (mask && (mask->width != normals.width || mask->height != normals.height))
    throw validation_error("shade_forward: mask shape mismatch");
  pixel_field out(normals.width, normals.height, 3);
  for (int y = 0; y < normals.height; ++y) {
    for (int x = 0; x < normals.width; ++x) {
      if (mask && !mask->inside(y, x)) continue;
      const auto b = sh_basis_t(normals.nx(y, x), normals.ny(y, x), normals.nz(y, x));
      for (int ch = 0; ch < 3; ++ch) {
        const double* L = light.channel(ch);
        double s = 0.0;
        for (int j = 0; j < 9; ++j) s += b[j] * L[j];
        out.at(y, x, ch) = s;
      }
    }
  }
  return out;
}

// Same result through the Eq-style quadratic form; test oracle.
inline pixel_field shade_forward_quadratic(const normal_field& normals,
                                           const sh_coeffs& light,
                                           const matte_mask* mask = nullptr) {
  pixel_field out(normals.width, normals.height, 3);
  for (int y = 0; y < normals.height; ++y)
    for (int x = 0; x < normals.width; ++x) {
      if (mask && !mask->inside(y, x)) continue;
      for (int ch = 0; ch < 3; ++ch)
        out.at(y, x, ch) = sh_shade_pixel_quadratic(
            light.channel(ch), normals.nx(y, x), normals.ny(y, x), normals.nz(y, x));
    }
  return out;
}

struct shade_grads {
  pixel_field d_normals;  // 3 channels: d/dnx, d/dny, d/dnz summed over RGB
  sh_coeffs d_light;
};

// Analytic backward of shade_forward given upstream dLoss/dS.
inline shade_grads shade_backward(const normal_field& normals, const sh_coeffs& light,
                                  const pixel_field& upstream) {
  if (upstream.width != normals.width || upstream.height != normals.height ||
      upstream.channels != 3)
    throw validation_error("shade_backward: upstream shape mismatch");
  shade_grads g;
  g.d_normals = pixel_field(normals.width, normals.height, 3);
  for (int y = 0; y < normals.height; ++y) {
    for (int x = 0; x < normals.width; ++x) {
      const double nx = normals.nx(y, x), ny = normals.ny(y, x), nz = normals.nz(y, x);
      const auto b = sh_basis_t(nx, ny, nz);
      double ax = 0.0, ay = 0.0, az = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double up = upstream.at(y, x, ch);
        if (up == 0.0) continue;
        double* dL = g.d_light.channel(ch);
        for (int j = 0; j < 9; ++j) dL[j] += up * b[j];
        double dnx, dny, dnz;
        sh_normal_partials(light.channel(ch), nx, ny, nz, dnx, dny, dnz);
        ax += up * dnx;
        ay += up * dny;
        az += up * dnz;
      }
      g.d_normals.at(y, x, 0) = ax;
      g.d_normals.at(y, x, 1) = ay;
      g.d_normals.at(y, x, 2) = az;
    }
  }
  return g;
}

namespace detail {

// Small dense routines for the 9x9 normal equations.
inline bool cholesky9(const double A[9][9], double L[9][9]) {
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) L[i][j] = 0.0;
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = A[i][j];
      for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
      if (i == j) {
        if (s <= 0.0) return false;
        L[i][i] = std::sqrt(s);
      } else {
        L[i][j] = s / L[j][j];
      }
    }
  }
  return true;
}

inline std::array<double, 9> cholesky9_solve(const double L[9][9],
                                             const std::array<double, 9>& b) {
  std::array<double, 9> y{}, x{};
  for (int i = 0; i < 9; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= L[i][k] * y[k];
    y[i] = s / L[i][i];
  }
  for (int i = 8; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < 9; ++k) s -= L[k][i] * x[k];
    x[i] = s / L[i][i];
  }
  return x;
}

// Eigenvalues of a symmetric 9x9 matrix by cyclic Jacobi rotations.
inline std::array<double, 9> jacobi_eigenvalues9(double A[9][9]) {
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 9; ++p)
      for (int q = p + 1; q < 9; ++q) off += A[p][q] * A[p][q];
    if (off < 1e-30) break;
    for (int p = 0; p < 9; ++p) {
      for (int q = p + 1; q < 9; ++q) {
        if (A[p][q] == 0.0) continue;
        const double theta = (A[q][q] - A[p][p]) / (2.0 * A[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 9; ++k) {
          const double akp = A[k][p], akq = A[k][q];
          A[k][p] = c * akp - s * akq;
          A[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 9; ++k) {
          const double apk = A[p][k], aqk = A[q][k];
          A[p][k] = c * apk - s * aqk;
          A[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::array<double, 9> ev;
  for (int i = 0; i < 9; ++i) ev[i] = A[i][i];
  return ev;
}

// Householder QR least squares for an m x 9 system; fallback route when the
// normal equations are not positive definite.
inline std::array<double, 9> qr_least_squares9(std::vector<double> A,
                                               std::vector<double> b) {
  const size_t m = b.size();
  for (size_t k = 0; k < 9; ++k) {
    double norm = 0.0;
    for (size_t i = k; i < m; ++i) norm += A[i * 9 + k] * A[i * 9 + k];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw numeric_error("qr_least_squares9: rank-deficient column");
    if (A[k * 9 + k] > 0) norm = -norm;
    std::vector<double> v(m - k);
    v[0] = A[k * 9 + k] - norm;
    for (size_t i = k + 1; i < m; ++i) v[i - k] = A[i * 9 + k];
    double vtv = 0.0;
    for (double x : v) vtv += x * x;
    if (vtv == 0.0) continue;
    for (size_t j = k; j < 9; ++j) {
      double dot = 0.0;
      for (size_t i = k; i < m; ++i) dot += v[i - k] * A[i * 9 + j];
      const double f = 2.0 * dot / vtv;
      for (size_t i = k; i < m; ++i) A[i * 9 + j] -= f * v[i - k];
    }
    double dot = 0.0;
    for (size_t i = k; i < m; ++i) dot += v[i - k] * b[i];
    const double f = 2.0 * dot / vtv;
    for (size_t i = k; i < m; ++i) b[i] -= f * v[i - k];
  }
  std::array<double, 9> x{};
  for (int i = 8; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < 9; ++j) s -= A[size_t(i) * 9 + j] * x[j];
    if (A[size_t(i) * 9 + i] == 0.0)
      throw numeric_error("qr_least_squares9: singular R");
    x[i] = s / A[size_t(i) * 9 + i];
  }
  return x;
}

}  // namespace detail

// Least-squares light estimation under a constant-albedo assumption (albedo
// fixed to 1; any other constant only rescales L). Per channel, solves
// min_L sum_masked (b(n_i).L - I_i)^2 by normal equations with a QR fallback.
// Throws numeric_error with the condition number when the design matrix is
// rank-deficient (cond >= 1e8).
inline sh_coeffs estimate_light(const pixel_field& image, const normal_field& normals,
                                const matte_mask& mask,
                                double cond_limit = 1e8) {
  if (image.channels != 3)
    throw validation_error("estimate_light: image must have 3 channels");
  if (image.width != normals.width || image.height != normals.height)
    throw validation_error("estimate_light: image/normals shape mismatch");
  require_mask_shape(image, mask, "estimate_light");

  std::vector<double> rows;  // m x 9 design matrix
  std::vector<std::array<double, 3>> targets;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      if (!mask.inside(y, x)) continue;
      const auto b = sh_basis_t(normals.nx(y, x), normals.ny(y, x), normals.nz(y, x));
      rows.insert(rows.end(), b.begin(), b.end());
      targets.push_back({image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)});
    }
  const size_t m = targets.size();
  if (m < 9)
    throw validation_error("estimate_light: needs at least 9 masked pixels, got " +
                           std::to_string(m));

  double btb[9][9] = {};
  std::array<std::array<double, 9>, 3> bty{};
  for (size_t i = 0; i < m; ++i) {
    const double* r = rows.data() + i * 9;
    for (int a = 0; a < 9; ++a) {
      for (int b2 = a; b2 < 9; ++b2) btb[a][b2] += r[a] * r[b2];
      for (int ch = 0; ch < 3; ++ch) bty[ch][a] += r[a] * targets[i][ch];
    }
  }
  for (int a = 0; a < 9; ++a)
    for (int b2 = 0; b2 < a; ++b2) btb[a][b2] = btb[b2][a];

  double work[9][9];
  std::memcpy(work, btb, sizeof(work));
  const auto ev = detail::jacobi_eigenvalues9(work);
  double ev_min = ev[0], ev_max = ev[0];
  for (double e : ev) {
    ev_min = std::min(ev_min, e);
    ev_max = std::max(ev_max, e);
  }
  // Eigenvalues of B^T B are squared singular values of B.
  const double cond = ev_min <= 0.0 ? std::numeric_limits<double>::infinity()
                                    : std::sqrt(ev_max / ev_min);
  if (!(cond < cond_limit))
    throw numeric_error("estimate_light: rank-deficient design matrix, condition "
                        "number " + std::to_string(cond));

  sh_coeffs out;
  double chol[9][9];
  if (detail::cholesky9(btb, chol)) {
    for (int ch = 0; ch < 3; ++ch) {
      const auto x = detail::cholesky9_solve(chol, bty[ch]);
      for (int j = 0; j < 9; ++j) out.channel(ch)[j] = x[j];
    }
  } else {
    for (int ch = 0; ch < 3; ++ch) {
      std::vector<double> b(m);
      for (size_t i = 0; i < m; ++i) b[i] = targets[i][ch];
      const auto x = detail::qr_least_squares9(rows, std::move(b));
      for (int j = 0; j < 9; ++j) out.channel(ch)[j] = x[j];
    }
  }
  return out;
}

namespace detail {

// Solve (M + lam I) x = g for a symmetric PSD 9x9 M.
inline std::array<double, 9> solve_spd9(double M[9][9], double lam,
                                        const std::array<double, 9>& g) {
  for (int i = 0; i < 9; ++i) M[i][i] += lam;
  double chol[9][9];
  if (!cholesky9(M, chol))
    throw numeric_error("solve_spd9: factorization failed");
  return cholesky9_solve(chol, g);
}

}  // namespace detail

// Albedo-invariant light estimation from shading ratios. For two neighboring
// pixels with the same albedo, I_i S_j == I_j S_i, which is linear and
// homogeneous in L:  (I_j b(n_i) - I_i b(n_j)) . L = 0. Rows are collected
// from in-mask neighbor pairs whose log-intensity difference is below tau
// (likely same albedo cell), and the per-channel scale left free by the
// homogeneous system is pinned by the mean-shading constraint
// mean_masked(b . L) = target_mean. A small ridge keeps the cap-unobservable
// basis directions at zero.
struct ratio_light_options {
  double tau = 0.04;          // |log I_i - log I_j| gate for pair inclusion
  double lambda_rel = 1e-5;   // ridge relative to tr(R^T R)/9
  double target_mean = 0.75;  // per-channel masked mean shading
  double intensity_floor = 1e-3;
};

inline sh_coeffs estimate_light_ratio(const pixel_field& image,
                                      const normal_field& normals,
                                      const matte_mask& mask,
                                      const ratio_light_options& opt = {}) {
  if (image.channels != 3)
    throw validation_error("estimate_light_ratio: image must have 3 channels");
  if (image.width != normals.width || image.height != normals.height)
    throw validation_error("estimate_light_ratio: image/normals shape mismatch");
  require_mask_shape(image, mask, "estimate_light_ratio");

  double M[3][9][9] = {};
  std::array<double, 9> gmean{};
  int64_t n_mask = 0;
  int64_t n_rows[3] = {0, 0, 0};

  auto add_pair = [&](int y0, int x0, int y1, int x1) {
    const auto bi = sh_basis_t(normals.nx(y0, x0), normals.ny(y0, x0),
                               normals.nz(y0, x0));
    const auto bj = sh_basis_t(normals.nx(y1, x1), normals.ny(y1, x1),
                               normals.nz(y1, x1));
    for (int ch = 0; ch < 3; ++ch) {
      const double Ii = std::max(image.at(y0, x0, ch), opt.intensity_floor);
      const double Ij = std::max(image.at(y1, x1, ch), opt.intensity_floor);
      if (std::abs(std::log(Ii) - std::log(Ij)) > opt.tau) continue;
      double row[9];
      for (int k = 0; k < 9; ++k) row[k] = Ij * bi[k] - Ii * bj[k];
      for (int a = 0; a < 9; ++a)
        for (int b = a; b < 9; ++b) M[ch][a][b] += row[a] * row[b];
      ++n_rows[ch];
    }
  };

  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      if (!mask.inside(y, x)) continue;
      ++n_mask;
      const auto b = sh_basis_t(normals.nx(y, x), normals.ny(y, x), normals.nz(y, x));
      for (int k = 0; k < 9; ++k) gmean[k] += b[k];
      if (x + 1 < image.width && mask.inside(y, x + 1)) add_pair(y, x, y, x + 1);
      if (y + 1 < image.height && mask.inside(y + 1, x)) add_pair(y, x, y + 1, x);
    }
  if (n_mask < 9)
    throw validation_error("estimate_light_ratio: needs at least 9 masked pixels");
  for (int k = 0; k < 9; ++k) gmean[k] /= double(n_mask);

  sh_coeffs out;
  for (int ch = 0; ch < 3; ++ch) {
    if (n_rows[ch] < 9)
      throw numeric_error("estimate_light_ratio: too few same-albedo pairs in "
                          "channel " + std::to_string(ch));
    for (int a = 0; a < 9; ++a)
      for (int b = 0; b < a; ++b) M[ch][a][b] = M[ch][b][a];
    double trace = 0.0;
    for (int a = 0; a < 9; ++a) trace += M[ch][a][a];
    const double lam = std::max(opt.lambda_rel * trace / 9.0, 1e-300);
    // Minimize L^T M L + lam |L|^2 subject to gmean . L = target_mean:
    // L = t (M + lam I)^{-1} gmean with t chosen to satisfy the constraint.
    const auto base = detail::solve_spd9(M[ch], lam, gmean);
    double denom = 0.0;
    for (int k = 0; k < 9; ++k) denom += gmean[k] * base[k];
    if (std::abs(denom) < 1e-300)
      throw numeric_error("estimate_light_ratio: degenerate mean constraint");
    const double t = opt.target_mean / denom;
    for (int k = 0; k < 9; ++k) out.channel(ch)[k] = t * base[k];
  }
  return out;
}

// Ridge-regularized variant: min_L |B L - y|^2 + lambda_rel * tr(BtB)/9 * |L|^2.
// Normal distributions that cover only a cap of the sphere leave the plain
// least-squares problem with near-null directions along which coefficients
// explode; the ridge pins those while leaving well-observed directions nearly
// untouched. Used by the solver's interleaved light refits.
inline sh_coeffs estimate_light_ridge(const pixel_field& image,
                                      const normal_field& normals,
                                      const matte_mask& mask, double lambda_rel) {
  if (image.channels != 3)
    throw validation_error("estimate_light_ridge: image must have 3 channels");
  if (image.width != normals.width || image.height != normals.height)
    throw validation_error("estimate_light_ridge: image/normals shape mismatch");
  require_mask_shape(image, mask, "estimate_light_ridge");

  double btb[9][9] = {};
  std::array<std::array<double, 9>, 3> bty{};
  int64_t m = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      if (!mask.inside(y, x)) continue;
      ++m;
      const auto b = sh_basis_t(normals.nx(y, x), normals.ny(y, x), normals.nz(y, x));
      for (int a = 0; a < 9; ++a) {
        for (int b2 = a; b2 < 9; ++b2) btb[a][b2] += b[a] * b[b2];
        for (int ch = 0; ch < 3; ++ch) bty[ch][a] += b[a] * image.at(y, x, ch);
      }
    }
  if (m < 9)
    throw validation_error("estimate_light_ridge: needs at least 9 masked pixels");
  for (int a = 0; a < 9; ++a)
    for (int b2 = 0; b2 < a; ++b2) btb[a][b2] = btb[b2][a];
  double trace = 0.0;
  for (int a = 0; a < 9; ++a) trace += btb[a][a];
  const double lam = lambda_rel * trace / 9.0;
  for (int a = 0; a < 9; ++a) btb[a][a] += lam;

  double chol[9][9];
  if (!detail::cholesky9(btb, chol))
    throw numeric_error("estimate_light_ridge: factorization failed");
  sh_coeffs out;
  for (int ch = 0; ch < 3; ++ch) {
    const auto x = detail::cholesky9_solve(chol, bty[ch]);
    for (int j = 0; j < 9; ++j) out.channel(ch)[j] = x[j];
  }
  return out;
}

}  // namespace nfed
