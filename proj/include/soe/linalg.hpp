#pragma once

// Dense real linear algebra used throughout the toolkit: a row-major matrix,
// a deterministic cyclic-Jacobi symmetric eigensolver, the Gram-dual route to
// principal components, and orthogonal projection helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "soe/error.hpp"

namespace soe {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::InvalidInput, "matrix data size mismatch");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, ErrorCode::InvalidInput, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Builds a d×n matrix whose columns are the given vectors.
  static Matrix from_columns(std::span<const Vector> columns) {
    require(!columns.empty(), ErrorCode::InvalidInput, "no columns");
    const std::size_t d = columns.front().size();
    Matrix m(d, columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
      require(columns[j].size() == d, ErrorCode::InvalidInput, "column length mismatch");
      for (std::size_t i = 0; i < d; ++i) m(i, j) = columns[j][i];
    }
    return m;
  }

  static Matrix from_rows(std::span<const Vector> rows) {
    require(!rows.empty(), ErrorCode::InvalidInput, "no rows");
    const std::size_t d = rows.front().size();
    Matrix m(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == d, ErrorCode::InvalidInput, "row length mismatch");
      std::copy(rows[i].begin(), rows[i].end(), m.row_ptr(i));
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) noexcept { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const noexcept { return data_.data() + i * cols_; }
  std::span<const double> row(std::size_t i) const noexcept { return {row_ptr(i), cols_}; }
  std::span<double> row(std::size_t i) noexcept { return {row_ptr(i), cols_}; }

  Vector row_vector(std::size_t i) const { return Vector(row_ptr(i), row_ptr(i) + cols_); }
  Vector col(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }
  void set_col(std::size_t j, std::span<const double> v) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Small vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double frobenius_norm(const Matrix& m) { return norm(m.data()); }

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::InvalidInput, "multiply: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* bp = b.row_ptr(p);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

inline Vector multiply(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), ErrorCode::InvalidInput, "matvec: dimension mismatch");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

/// Computes a^T x without forming the transpose.
inline Vector multiply_transposed(const Matrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), ErrorCode::InvalidInput, "matvec^T: dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    const double* ai = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * xi;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct SymEig {
  Vector eigenvalues;  // descending
  Matrix eigenvectors; // column i pairs with eigenvalues[i]
};

struct SymEigOptions {
  double tol = 1e-12;            // off-diagonal stop: max |a_pq| < tol·‖M‖_F
  double clamp_rel = 1e-12;      // |λ| < clamp_rel·max|λ| is reported as exactly 0
  std::size_t max_sweeps = 100;
};

namespace detail {

// Largest-magnitude entry positive; the first such entry wins ties.
inline void canonicalize_sign(Matrix& v, std::size_t col) {
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const double a = std::abs(v(i, col));
    if (a > best) {
      best = a;
      arg = i;
    }
  }
  if (v(arg, col) < 0.0)
    for (std::size_t i = 0; i < v.rows(); ++i) v(i, col) = -v(i, col);
}

inline double max_off_diagonal(const Matrix& a) {
  double m = 0.0;
  for (std::size_t p = 0; p < a.rows(); ++p)
    for (std::size_t q = p + 1; q < a.cols(); ++q) m = std::max(m, std::abs(a(p, q)));
  return m;
}

}  // namespace detail

/// Cyclic Jacobi eigensolver for a symmetric matrix. Rotations are applied in
/// a fixed row-by-row order, so identical input bits give identical output.
inline SymEig sym_eig(const Matrix& m, const SymEigOptions& opts = {}) {
  const std::size_t n = m.rows();
  require(n >= 1 && m.cols() == n, ErrorCode::InvalidInput, "sym_eig: matrix must be square and non-empty");
  require(m.all_finite(), ErrorCode::InvalidInput, "sym_eig: non-finite entry");
  const double fro = frobenius_norm(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(m(i, j) - m(j, i)) <= opts.tol * fro, ErrorCode::InvalidInput,
              "sym_eig: matrix is not symmetric");

  Matrix a = m;
  // Work on the exactly symmetrised copy so both triangles stay in lockstep.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(j, i) = a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  const double stop = opts.tol * fro;
  for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    if (detail::max_off_diagonal(a) <= stop) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= stop * 1e-3) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEig out{Vector(n), Matrix(n, n)};
  double max_abs = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_abs = std::max(max_abs, std::abs(a(i, i)));
  for (std::size_t k = 0; k < n; ++k) {
    double lambda = a(order[k], order[k]);
    if (std::abs(lambda) < opts.clamp_rel * max_abs) lambda = 0.0;
    out.eigenvalues[k] = lambda;
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = v(i, order[k]);
    detail::canonicalize_sign(out.eigenvectors, k);
  }
  return out;
}

inline SymEig sym_eig(const Matrix& m, double tol) {
  SymEigOptions opts;
  opts.tol = tol;
  return sym_eig(m, opts);
}

// ---------------------------------------------------------------------------
// Gram duality

/// G = HᵀH for a d×N matrix H. Only the upper triangle is computed; the lower
/// triangle is an exact mirror.
inline Matrix gram(const Matrix& h) {
  require(h.rows() >= 1 && h.cols() >= 1, ErrorCode::InvalidInput, "gram: empty matrix");
  require(h.all_finite(), ErrorCode::InvalidInput, "gram: non-finite entry");
  const std::size_t n = h.cols();
  Matrix g(n, n);
  for (std::size_t k = 0; k < h.rows(); ++k) {
    const double* hk = h.row_ptr(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double hki = hk[i];
      if (hki == 0.0) continue;
      double* gi = g.row_ptr(i);
      for (std::size_t j = i; j < n; ++j) gi[j] += hki * hk[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g(j, i) = g(i, j);
  return g;
}

/// Same as gram() for an N×d matrix holding samples as rows: returns X Xᵀ.
inline Matrix row_gram(const Matrix& x) {
  require(x.rows() >= 1 && x.cols() >= 1, ErrorCode::InvalidInput, "row_gram: empty matrix");
  const std::size_t n = x.rows();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) g(i, j) = dot(x.row(i), x.row(j));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g(j, i) = g(i, j);
  return g;
}

struct Components {
  Matrix basis;    // d×r, orthonormal columns
  Vector lambdas;  // r eigenvalues of HᵀH, descending
};

/// Maps eigenvectors of HᵀH back to left singular directions of H:
/// u_k = H v_k / √λ_k, keeping only λ_k > min_lambda.
inline Components recover_components(const Matrix& h, const SymEig& geig, double min_lambda) {
  require(geig.eigenvectors.rows() == h.cols(), ErrorCode::InvalidInput,
          "recover_components: eigenvectors do not match the sample count");
  std::size_t r = 0;
  while (r < geig.eigenvalues.size() && geig.eigenvalues[r] > min_lambda) ++r;
  require(r > 0, ErrorCode::DegenerateSpectrum, "recover_components: no eigenvalue above min_lambda");

  Components out{Matrix(h.rows(), r), Vector(geig.eigenvalues.begin(), geig.eigenvalues.begin() + r)};
  for (std::size_t k = 0; k < r; ++k) {
    const double scale = 1.0 / std::sqrt(geig.eigenvalues[k]);
    for (std::size_t i = 0; i < h.rows(); ++i) {
      double s = 0.0;
      const double* hi = h.row_ptr(i);
      for (std::size_t j = 0; j < h.cols(); ++j) s += hi[j] * geig.eigenvectors(j, k);
      out.basis(i, k) = s * scale;
    }
    detail::canonicalize_sign(out.basis, k);
  }
  return out;
}

/// Default threshold: 1e-10·λ_1.
inline Components recover_components(const Matrix& h, const SymEig& geig) {
  const double lambda1 = geig.eigenvalues.empty() ? 0.0 : geig.eigenvalues.front();
  return recover_components(h, geig, 1e-10 * lambda1);
}

// ---------------------------------------------------------------------------
// Projection

struct Split {
  Vector parallel;
  Vector perpendicular;
};

/// x_par = U(Uᵀx), x_perp = x − x_par.
inline Split project_split(const Matrix& u, std::span<const double> x) {
  require(u.rows() == x.size(), ErrorCode::InvalidInput, "project_split: dimension mismatch");
  const Vector coeffs = multiply_transposed(u, x);
  Split s{multiply(u, coeffs), Vector(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) s.perpendicular[i] = x[i] - s.parallel[i];
  return s;
}

/// Number of values above rel_tol·σ_1; values are expected in descending order.
inline std::size_t numerical_rank(std::span<const double> singular_values, double rel_tol) {
  if (singular_values.empty() || !(singular_values.front() > 0.0)) return 0;
  const double cutoff = rel_tol * singular_values.front();
  return static_cast<std::size_t>(
      std::count_if(singular_values.begin(), singular_values.end(), [&](double s) { return s > cutoff; }));
}

/// Singular values of a general matrix via the smaller of its two Gram matrices.
inline Vector singular_values(const Matrix& a) {
  const Matrix g = a.rows() <= a.cols() ? row_gram(a) : gram(a);
  SymEigOptions opts;
  opts.clamp_rel = 0.0;
  Vector s = sym_eig(g, opts).eigenvalues;
  for (double& x : s) x = std::sqrt(std::max(x, 0.0));
  return s;
}

/// Orthonormal basis for the column span of a (modified Gram–Schmidt with one
/// reorthogonalisation pass); columns whose residual falls below
/// rel_tol·max column norm are dropped.
inline Matrix orthonormal_basis(const Matrix& a, double rel_tol = 1e-10) {
  double scale = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) scale = std::max(scale, norm(a.col(j)));
  std::vector<Vector> q;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    Vector v = a.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& qi : q) {
        const double c = dot(qi, v);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * qi[i];
      }
    const double nv = norm(v);
    if (nv > rel_tol * scale && nv > 0.0) {
      for (double& x : v) x /= nv;
      q.push_back(std::move(v));
    }
  }
  if (q.empty()) return Matrix(a.rows(), 0);
  return Matrix::from_columns(q);
}

/// Largest principal angle between span(a) and span(b), both with orthonormal
/// columns and equal column count. Uses sin θ_max = ‖(I − AAᵀ)B‖₂, which stays
/// accurate for small angles.
inline double max_principal_angle(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::InvalidInput,
          "max_principal_angle: shape mismatch");
  if (a.cols() == 0) return 0.0;
  Matrix r(b.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) r.set_col(j, project_split(a, b.col(j)).perpendicular);
  const Vector s = singular_values(r);
  return std::asin(std::min(1.0, s.front()));
}

}  // namespace soe
