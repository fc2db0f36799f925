#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pvtr/io.hpp"
#include "pvtr/rng.hpp"

namespace pvtr::linalg {

/// Dense row-major real64 matrix. Small and self-contained on purpose: the
/// rest of the library only needs products, transposes and a symmetric
/// eigensolver for dimensions up to ~1024.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, length rows*cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
        return t;
    }
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matrix product: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[k * b.cols];
            double* orow = &out.data[i * out.cols];
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline std::vector<double> operator*(const Matrix& a, const std::vector<double>& x) {
    if (a.cols != x.size()) throw std::invalid_argument("matrix-vector product: dimensions differ");
    std::vector<double> out(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = &a.data[i * a.cols];
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

inline double max_abs(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data) v = std::max(v, std::abs(x));
    return v;
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
}

inline bool is_symmetric(const Matrix& m, double tol) {
    if (m.rows != m.cols) return false;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = i + 1; j < m.cols; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol) return false;
    return true;
}

/// Result of a symmetric eigendecomposition M = U diag(lambda) U^T.
/// Eigenvalues are sorted descending; eigenvector i is column i of
/// `eigenvectors` and the columns form an orthonormal basis.
struct EigenDecomposition {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;
};

/// Covariance of a sample set. `ml_denominator` selects the 1/n convention
/// (profiling a distribution); pass false for the unbiased 1/(n-1) estimate.
inline Matrix covariance(const std::vector<std::vector<double>>& samples,
                         bool ml_denominator = true) {
    if (samples.size() < 2) throw std::invalid_argument("covariance: need at least 2 samples");
    const std::size_t n = samples.size();
    const std::size_t d = samples[0].size();
    for (const auto& s : samples)
        if (s.size() != d) throw std::invalid_argument("covariance: sample dimension mismatch");

    std::vector<double> mean(d, 0.0);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < d; ++i) mean[i] += s[i];
    for (double& m : mean) m /= static_cast<double>(n);

    Matrix cov(d, d);
    std::vector<double> dev(d);
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < d; ++i) dev[i] = s[i] - mean[i];
        for (std::size_t i = 0; i < d; ++i) {
            const double di = dev[i];
            double* row = &cov.data[i * d];
            for (std::size_t j = i; j < d; ++j) row[j] += di * dev[j];
        }
    }
    const double denom = static_cast<double>(ml_denominator ? n : n - 1);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov(i, j) /= denom;
            cov(j, i) = cov(i, j);
        }
    return cov;
}

namespace detail {

// One cyclic Jacobi sweep over the strict upper triangle.
inline void jacobi_rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
    const double apq = a(p, q);
    if (apq == 0.0) return;
    const std::size_t n = a.rows;

    const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
    double t;
    if (tau >= 0.0)
        t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
    else
        t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
    const double c = 1.0 / std::sqrt(1.0 + t * t);
    const double s = t * c;

    const double app = a(p, p), aqq = a(q, q);
    a(p, p) = app - t * apq;
    a(q, q) = aqq + t * apq;
    a(p, q) = 0.0;
    a(q, p) = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k == p || k == q) continue;
        const double akp = a(k, p), akq = a(k, q);
        a(k, p) = c * akp - s * akq;
        a(p, k) = a(k, p);
        a(k, q) = s * akp + c * akq;
        a(q, k) = a(k, q);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double vkp = v(k, p), vkq = v(k, q);
        v(k, p) = c * vkp - s * vkq;
        v(k, q) = s * vkp + c * vkq;
    }
}

inline double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = i + 1; j < a.cols; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Stops when the off-diagonal norm drops below 1e-12 * ||M||_F; throws if
/// that does not happen within `max_sweeps`.
inline EigenDecomposition sym_eig(const Matrix& m, std::size_t max_sweeps = 100) {
    if (m.rows != m.cols) throw std::invalid_argument("sym_eig: matrix not square");
    const std::size_t n = m.rows;
    const double sym_tol = 1e-9 * (1.0 + max_abs(m));
    if (!is_symmetric(m, sym_tol)) throw std::invalid_argument("sym_eig: matrix not symmetric");

    Matrix a = m;
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = avg;
            a(j, i) = avg;
        }

    Matrix v = Matrix::identity(n);
    const double threshold = 1e-12 * frobenius_norm(m);

    bool converged = (n < 2) || detail::off_diagonal_norm(a) <= threshold;
    for (std::size_t sweep = 0; !converged && sweep < max_sweeps; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) detail::jacobi_rotate(a, v, p, q);
        converged = detail::off_diagonal_norm(a) <= threshold;
    }
    if (!converged) throw std::runtime_error("sym_eig: no convergence within sweep limit");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&a](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        out.eigenvalues[c] = a(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, c) = v(r, order[c]);
    }
    return out;
}

/// Draw e = U diag(sqrt(sigma)) z with z standard normal, i.e. a sample from
/// N(0, U diag(sigma) U^T). Coordinates with sigma_i = 0 contribute exactly
/// nothing.
inline std::vector<double> sample_anisotropic_gaussian(const Matrix& basis,
                                                       const std::vector<double>& sigma,
                                                       RngStream& rng) {
    const std::size_t d = sigma.size();
    if (basis.rows != d || basis.cols != d)
        throw std::invalid_argument("sample_anisotropic_gaussian: basis/sigma dimension mismatch");
    std::vector<double> scaled(d);
    for (std::size_t i = 0; i < d; ++i) {
        if (sigma[i] < 0.0)
            throw std::invalid_argument("sample_anisotropic_gaussian: negative variance");
        const double z = rng.gaussian();
        scaled[i] = sigma[i] == 0.0 ? 0.0 : std::sqrt(sigma[i]) * z;
    }
    return basis * scaled;
}

// --- PMAT container ---------------------------------------------------------
// magic "PMAT", version u8 = 1, rows u32 LE, cols u32 LE, rows*cols real64 LE.

inline io::Bytes serialize_matrix(const Matrix& m) {
    io::Bytes out;
    io::put_magic(out, "PMAT");
    io::put_u8(out, 1);
    io::put_u32(out, static_cast<std::uint32_t>(m.rows));
    io::put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) io::put_f64(out, v);
    return out;
}

inline Matrix deserialize_matrix(const io::Bytes& bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("PMAT", "matrix");
    if (r.u8() != 1) throw std::runtime_error("matrix: unsupported version");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Matrix m(rows, cols);
    for (double& v : m.data) v = r.f64();
    return m;
}

inline std::uint64_t matrix_hash(const Matrix& m) { return io::fnv1a64(serialize_matrix(m)); }

}  // namespace pvtr::linalg
