#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/codec.hpp"
#include "pvtr/io.hpp"
#include "pvtr/linalg.hpp"
#include "pvtr/rng.hpp"

namespace pvtr {

/// Mutual-information budget (nats) plus the adversary's prior.
struct PrivacyBudget {
    double v = 0.0;             // nats of mutual information allowed
    double prior_failure = 0.0; // delta_rho_o

    double prior_success() const { return 1.0 - prior_failure; }
};

/// Left-hand side of the posterior bound: the divergence between the
/// posterior failure rate delta and the prior failure rate delta_o,
///   delta ln(delta/delta_o) + (1-delta) ln((1-delta)/(1-delta_o)).
/// Monotone decreasing in delta on (0, delta_o].
inline double posterior_divergence(double delta, double delta_o) {
    if (!(delta > 0.0 && delta < 1.0) || !(delta_o > 0.0 && delta_o < 1.0))
        throw std::invalid_argument("posterior_divergence: rates must lie in (0,1)");
    return delta * std::log(delta / delta_o) +
           (1.0 - delta) * std::log((1.0 - delta) / (1.0 - delta_o));
}

/// Largest posterior success rate any adversary can reach when the release
/// carries at most v nats about the secret. Solved by bisection on the
/// failure rate; absolute tolerance 1e-9, result clamped to [prior, 1].
inline double psr_from_mi(double v, double prior_success) {
    if (!(prior_success > 0.0 && prior_success < 1.0))
        throw std::invalid_argument("psr_from_mi: prior success must lie in (0,1)");
    if (v < 0.0) throw std::invalid_argument("psr_from_mi: negative information bound");
    const double delta_o = 1.0 - prior_success;
    if (v == 0.0) return prior_success;
    // As delta -> 0 the divergence tends to -ln(prior_success); at or above
    // that budget the bound is vacuous.
    if (v >= -std::log(prior_success)) return 1.0;

    double lo = 0.0;      // divergence above v
    double hi = delta_o;  // divergence 0 <= v
    for (int iter = 0; iter < 200 && (hi - lo) > 1e-9; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (posterior_divergence(mid, delta_o) > v)
            lo = mid;
        else
            hi = mid;
    }
    return 1.0 - hi;
}

inline double psr_from_mi(const PrivacyBudget& budget) {
    return psr_from_mi(budget.v, budget.prior_success());
}

/// Budget needed to certify `target_psr`: direct evaluation of the bound's
/// left side at delta = 1 - target_psr.
inline double mi_from_psr(double target_psr, double prior_success) {
    if (!(prior_success > 0.0 && prior_success < 1.0))
        throw std::invalid_argument("mi_from_psr: prior success must lie in (0,1)");
    if (target_psr < prior_success)
        throw std::invalid_argument("mi_from_psr: target below prior (bound vacuous)");
    if (!(target_psr < 1.0)) throw std::invalid_argument("mi_from_psr: target must be < 1");
    if (target_psr == prior_success) return 0.0;
    return posterior_divergence(1.0 - target_psr, 1.0 - prior_success);
}

/// Noise covariance in eigen form: Sigma_e = U diag(sigma) U^T.
struct NoiseCalibration {
    linalg::Matrix basis;        // U, d x d orthonormal
    std::vector<double> sigma;   // per-eigenvalue noise variances
    double v = 0.0;              // budget the calibration satisfies
    std::uint64_t source_cov_hash = 0;
    double trace = 0.0;          // sum of sigma
    bool degenerate = false;     // zero source covariance

    std::size_t dim() const { return sigma.size(); }
};

inline NoiseCalibration zero_calibration(std::size_t d) {
    NoiseCalibration cal;
    cal.basis = linalg::Matrix::identity(d);
    cal.sigma.assign(d, 0.0);
    cal.degenerate = true;
    return cal;
}

namespace detail {

inline std::vector<double> clamped_spectrum(const std::vector<double>& eigenvalues,
                                            double lambda_floor) {
    std::vector<double> out(eigenvalues.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::max(std::max(eigenvalues[i], 0.0), lambda_floor);
    return out;
}

}  // namespace detail

/// Distribution-aware minimal noise: sigma_i = sqrt(lambda_i) * S / (2v) with
/// S = sum_j sqrt(lambda_j), the minimizer of total noise energy under the
/// linearized information constraint sum_i lambda_i / (2 sigma_i) <= v.
/// Its trace is (sum sqrt(lambda))^2 / (2v).
inline NoiseCalibration calibrate_damp(const linalg::Matrix& source_cov, double v,
                                       double lambda_floor = 0.0) {
    if (!(v > 0.0)) throw std::invalid_argument("calibrate_damp: budget must be positive");
    const linalg::EigenDecomposition eig = linalg::sym_eig(source_cov);
    const std::vector<double> lambda = detail::clamped_spectrum(eig.eigenvalues, lambda_floor);

    double sqrt_sum = 0.0;
    for (double l : lambda) sqrt_sum += std::sqrt(l);

    NoiseCalibration cal;
    cal.basis = eig.eigenvectors;
    cal.v = v;
    cal.source_cov_hash = linalg::matrix_hash(source_cov);
    cal.sigma.resize(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        cal.sigma[i] = std::sqrt(lambda[i]) * sqrt_sum / (2.0 * v);
        cal.trace += cal.sigma[i];
    }
    cal.degenerate = sqrt_sum == 0.0;
    return cal;
}

inline NoiseCalibration calibrate_damp_from_samples(const std::vector<std::vector<double>>& samples,
                                                    double v, double lambda_floor = 0.0) {
    return calibrate_damp(linalg::covariance(samples), v, lambda_floor);
}

/// Isotropic baseline under the same linearized constraint: a single
/// per-dimension variance sigma = sum lambda / (2v), trace d * sum(lambda)/(2v).
/// Never below the distribution-aware trace (Cauchy-Schwarz).
inline NoiseCalibration calibrate_isotropic_mi(const linalg::Matrix& source_cov, double v,
                                               double lambda_floor = 0.0) {
    if (!(v > 0.0)) throw std::invalid_argument("calibrate_isotropic_mi: budget must be positive");
    const linalg::EigenDecomposition eig = linalg::sym_eig(source_cov);
    const std::vector<double> lambda = detail::clamped_spectrum(eig.eigenvalues, lambda_floor);

    double total = 0.0;
    for (double l : lambda) total += l;
    const double per_dim = total / (2.0 * v);

    NoiseCalibration cal;
    cal.basis = eig.eigenvectors;
    cal.v = v;
    cal.source_cov_hash = linalg::matrix_hash(source_cov);
    cal.sigma.assign(lambda.size(), per_dim);
    cal.trace = per_dim * static_cast<double>(lambda.size());
    cal.degenerate = total == 0.0;
    return cal;
}

/// Classic Gaussian mechanism: per-dimension standard deviation
/// sensitivity * sqrt(2 ln(1.25/delta)) / epsilon, stored as variance.
inline NoiseCalibration calibrate_dp_gaussian(double l2_sensitivity, double epsilon, double delta,
                                              std::size_t dim) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("calibrate_dp_gaussian: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("calibrate_dp_gaussian: delta must lie in (0,1)");
    if (l2_sensitivity < 0.0)
        throw std::invalid_argument("calibrate_dp_gaussian: negative sensitivity");
    const double std_dev = l2_sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;

    NoiseCalibration cal;
    cal.basis = linalg::Matrix::identity(dim);
    cal.sigma.assign(dim, std_dev * std_dev);
    cal.trace = std_dev * std_dev * static_cast<double>(dim);
    cal.degenerate = l2_sensitivity == 0.0;
    return cal;
}

/// The released observation O = z + e, e ~ N(0, U diag(sigma) U^T).
inline LatentCode add_noise(const LatentCode& z, const NoiseCalibration& cal, RngStream& rng) {
    if (z.values.size() != cal.dim()) throw std::invalid_argument("add_noise: dimension mismatch");
    const std::vector<double> e = linalg::sample_anisotropic_gaussian(cal.basis, cal.sigma, rng);
    LatentCode out = z;
    for (std::size_t i = 0; i < e.size(); ++i) out.values[i] += e[i];
    return out;
}

class DistributionTracker;
inline bool stale_calibration(const NoiseCalibration& cal, const linalg::Matrix& current_cov) {
    return cal.source_cov_hash != linalg::matrix_hash(current_cov);
}

/// Exponentially-weighted tracker of the latent distribution. Single writer;
/// fires a recalibration signal when the covariance trace drifts by more than
/// `tau` relative to the trace at the last installed calibration.
class DistributionTracker {
public:
    DistributionTracker(std::size_t dim, double beta = 0.99, double tau = 0.05,
                        std::size_t warmup = 100)
        : dim_(dim), beta_(beta), tau_(tau), warmup_(warmup), mean_(dim, 0.0), cov_(dim, dim) {
        if (!(beta >= 0.0 && beta < 1.0))
            throw std::invalid_argument("tracker: beta must lie in [0,1)");
        if (!(tau > 0.0)) throw std::invalid_argument("tracker: tau must be positive");
    }

    /// Folds one latent into the running statistics; returns true when the
    /// accumulated drift warrants recalibration.
    bool update(const LatentCode& z) {
        if (z.values.size() != dim_) throw std::invalid_argument("tracker: dimension mismatch");
        for (double v : z.values)
            if (!std::isfinite(v)) throw std::invalid_argument("tracker: non-finite latent");

        for (std::size_t i = 0; i < dim_; ++i)
            mean_[i] = beta_ * mean_[i] + (1.0 - beta_) * z.values[i];
        std::vector<double> dev(dim_);
        for (std::size_t i = 0; i < dim_; ++i) dev[i] = z.values[i] - mean_[i];
        for (std::size_t i = 0; i < dim_; ++i) {
            double* row = &cov_.data[i * dim_];
            const double di = dev[i];
            for (std::size_t j = 0; j < dim_; ++j)
                row[j] = beta_ * row[j] + (1.0 - beta_) * di * dev[j];
        }
        ++samples_seen_;

        if (samples_seen_ < warmup_ || last_calibration_trace_ <= 0.0) return false;
        const double t = trace();
        return std::abs(t - last_calibration_trace_) / last_calibration_trace_ > tau_;
    }

    bool ready() const { return samples_seen_ >= warmup_; }

    /// Records the trace the current calibration was built from.
    void mark_calibrated() { last_calibration_trace_ = trace(); }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) t += cov_(i, i);
        return t * bias_correction();
    }

    std::vector<double> mean() const {
        std::vector<double> out = mean_;
        const double c = bias_correction();
        for (double& v : out) v *= c;
        return out;
    }

    /// Debiased covariance snapshot for calibration.
    linalg::Matrix covariance() const {
        linalg::Matrix out = cov_;
        const double c = bias_correction();
        for (double& v : out.data) v *= c;
        return out;
    }

    std::size_t samples_seen() const { return samples_seen_; }
    std::size_t dim() const { return dim_; }

private:
    // The EMA starts from zero, so after t samples it carries only a
    // (1 - beta^t) share of the steady-state statistic; divide it out.
    double bias_correction() const {
        if (samples_seen_ == 0 || beta_ == 0.0) return 1.0;
        const double w = 1.0 - std::pow(beta_, static_cast<double>(samples_seen_));
        return w > 0.0 ? 1.0 / w : 1.0;
    }

    std::size_t dim_;
    double beta_;
    double tau_;
    std::size_t warmup_;
    std::vector<double> mean_;
    linalg::Matrix cov_;
    std::size_t samples_seen_ = 0;
    double last_calibration_trace_ = 0.0;
};

// --- PCAL container ---------------------------------------------------------
// magic "PCAL", version u8 = 1, v real64, d u32, sigma (d real64 LE),
// U (d*d real64 LE row-major), source covariance hash u64.

inline io::Bytes serialize_calibration(const NoiseCalibration& cal) {
    io::Bytes out;
    io::put_magic(out, "PCAL");
    io::put_u8(out, 1);
    io::put_f64(out, cal.v);
    io::put_u32(out, static_cast<std::uint32_t>(cal.dim()));
    for (double s : cal.sigma) io::put_f64(out, s);
    for (double u : cal.basis.data) io::put_f64(out, u);
    io::put_u64(out, cal.source_cov_hash);
    return out;
}

inline NoiseCalibration deserialize_calibration(const io::Bytes& bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("PCAL", "calibration");
    if (r.u8() != 1) throw std::runtime_error("calibration: unsupported version");
    NoiseCalibration cal;
    cal.v = r.f64();
    const std::uint32_t d = r.u32();
    cal.sigma.resize(d);
    for (double& s : cal.sigma) s = r.f64();
    cal.basis = linalg::Matrix(d, d);
    for (double& u : cal.basis.data) u = r.f64();
    cal.source_cov_hash = r.u64();
    for (double s : cal.sigma) cal.trace += s;
    cal.degenerate = cal.trace == 0.0;
    return cal;
}

inline void save_calibration(const std::string& path, const NoiseCalibration& cal) {
    io::write_file(path, serialize_calibration(cal));
}

inline NoiseCalibration load_calibration(const std::string& path) {
    return deserialize_calibration(io::read_file(path));
}

inline std::uint64_t calibration_hash(const NoiseCalibration& cal) {
    return io::fnv1a64(serialize_calibration(cal));
}

}  // namespace pvtr
