#include "btdvar/var_process.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "btdvar/rng.hpp"

namespace btdvar {

void VarParams::validate(bool allow_noiseless) const {
    if (b.rows() <= 0 || b.cols() <= 0 || b.cols() % b.rows() != 0) {
        throw DimensionError("B must be K x K*L with K, L >= 1");
    }
    if (nu.size() != b.rows()) {
        throw DimensionError("intercept length must equal K");
    }
    if (!(sigma2 > 0.0 || (allow_noiseless && sigma2 == 0.0)) || !std::isfinite(sigma2)) {
        throw DimensionError("noise variance must be positive and finite");
    }
}

void PanelParams::validate() const {
    shared.validate();
    if (alpha.empty() || alpha.size() != b_random.size()) {
        throw DimensionError("panel needs N >= 1 matching random transitions and intercepts");
    }
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (b_random[i].rows() != shared.b.rows() || b_random[i].cols() != shared.b.cols() ||
            alpha[i].size() != shared.k()) {
            throw DimensionError("subject " + std::to_string(i) + " parameters do not match shared shape");
        }
    }
}

void PanelData::validate() const {
    if (y.empty()) {
        throw DimensionError("panel has no subjects");
    }
    const Index rows = y.front().rows();
    const Index cols = y.front().cols();
    if (rows <= 0 || cols <= 0) {
        throw DimensionError("panel series are empty");
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i].rows() != rows || y[i].cols() != cols) {
            throw DimensionError("subject " + std::to_string(i) + " has a different shape");
        }
        if (!y[i].allFinite()) {
            throw DimensionError("subject " + std::to_string(i) + " contains non-finite values");
        }
    }
    if (!names.empty() && static_cast<Index>(names.size()) != cols) {
        throw DimensionError("series name count does not match K");
    }
    if (holdout < 0 || holdout >= rows) {
        throw DimensionError("holdout must be in [0, T)");
    }
}

void PanelData::validate_for_lags(Index lags) const {
    validate();
    if (lags < 1) {
        throw DimensionError("lag order must be at least 1");
    }
    if (train_t() <= lags) {
        throw DimensionError("need more training time points than lags (T=" + std::to_string(train_t()) +
                             ", L=" + std::to_string(lags) + ")");
    }
}

Matrix companion_matrix(const VarParams& p) {
    p.validate(true);
    const Index k = p.k();
    const Index kl = p.b.cols();
    Matrix a = Matrix::Zero(kl, kl);
    a.topRows(k) = p.b;
    if (kl > k) {
        a.bottomLeftCorner(kl - k, kl - k).setIdentity();
    }
    return a;
}

StabilityReport is_stable(const VarParams& p) {
    const Matrix a = companion_matrix(p);
    Eigen::EigenSolver<Matrix> solver(a, false);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("eigenvalue solver did not converge on the companion matrix");
    }
    const double radius = solver.eigenvalues().cwiseAbs().maxCoeff();
    return {radius < 1.0, radius};
}

Vector stationary_mean(const VarParams& p, const Vector& alpha) {
    const auto report = is_stable(p);
    if (!report.stable) {
        throw UnstableError("process is not stable (spectral radius " + std::to_string(report.spectral_radius) +
                            "); the stationary mean does not exist");
    }
    if (alpha.size() != p.k()) {
        throw DimensionError("random intercept length must equal K");
    }
    // E(Y) = (I - A)^{-1} V in companion form; y_t is the first block.
    const Matrix a = companion_matrix(p);
    Vector v = Vector::Zero(a.rows());
    v.head(p.k()) = p.nu;
    const Vector big = (Matrix::Identity(a.rows(), a.cols()) - a).partialPivLu().solve(v);
    return big.head(p.k()) + alpha;
}

Matrix simulate_with_noise(const VarParams& p, const Vector& alpha, const Matrix& noise, Index burn_in) {
    p.validate(true);
    const Index k = p.k();
    const Index lags = p.lags();
    if (alpha.size() != k || noise.cols() != k || burn_in < 0 || noise.rows() <= burn_in) {
        throw DimensionError("simulation inputs have inconsistent shapes");
    }
    const Index total = noise.rows();
    // history rows: lags presample values followed by the generated path
    Matrix path(total + lags, k);
    for (Index r = 0; r < lags; ++r) {
        path.row(r) = (p.nu + alpha).transpose();
    }
    for (Index t = 0; t < total; ++t) {
        Vector y = p.nu + alpha;
        for (Index l = 0; l < lags; ++l) {
            const Vector prev = path.row(lags + t - 1 - l).transpose() - alpha;
            y.noalias() += p.b.middleCols(l * k, k) * prev;
        }
        y += noise.row(t).transpose();
        path.row(lags + t) = y.transpose();
    }
    return path.bottomRows(total - burn_in);
}

Matrix simulate(const VarParams& p, const Vector& alpha, Index t, Index burn_in, std::uint64_t seed) {
    const auto report = is_stable(p);
    if (!report.stable) {
        throw UnstableError("refusing to simulate an unstable process (spectral radius " +
                            std::to_string(report.spectral_radius) + ")");
    }
    if (t <= 0 || burn_in < 0) {
        throw DimensionError("simulation length must be positive and burn-in non-negative");
    }
    Rng rng(seed);
    const double sd = std::sqrt(p.sigma2);
    Matrix noise(burn_in + t, p.k());
    for (Index r = 0; r < noise.rows(); ++r) {
        for (Index c = 0; c < noise.cols(); ++c) {
            noise(r, c) = sd * rng.normal();
        }
    }
    return simulate_with_noise(p, alpha, noise, burn_in);
}

PanelSimulation simulate_panel(const VarParams& shared, const PanelSimOptions& opts, std::uint64_t seed) {
    shared.validate();
    if (opts.subjects < 1 || opts.t <= 0 || opts.holdout < 0) {
        throw DimensionError("panel simulation needs N >= 1 and T > 0");
    }
    if (!is_stable(shared).stable) {
        throw UnstableError("shared dynamics are not stable");
    }
    const Index k = shared.k();
    const Index lags = shared.lags();

    double sum_sq = 0.0;
    Index nonzero = 0;
    for (Index c = 0; c < shared.b.cols(); ++c) {
        for (Index r = 0; r < k; ++r) {
            if (shared.b(r, c) != 0.0) {
                sum_sq += shared.b(r, c) * shared.b(r, c);
                ++nonzero;
            }
        }
    }
    const double rms = nonzero > 0 ? std::sqrt(sum_sq / static_cast<double>(nonzero)) : 0.0;
    const double re_sd = opts.random_scale * rms;

    Rng rng(seed);
    PanelSimulation sim;
    sim.params.shared = shared;
    sim.truth.fixed = support_of(shared.b, lags);
    sim.data.holdout = opts.holdout;
    for (Index c = 0; c < k; ++c) {
        sim.data.names.push_back("y" + std::to_string(c + 1));
    }

    for (std::size_t i = 0; i < opts.subjects; ++i) {
        Matrix b_random = Matrix::Zero(k, shared.b.cols());
        bool accepted = false;
        for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
            for (Index c = 0; c < b_random.cols(); ++c) {
                for (Index r = 0; r < k; ++r) {
                    b_random(r, c) = shared.b(r, c) != 0.0 ? re_sd * rng.normal() : 0.0;
                }
            }
            VarParams subject = shared;
            subject.b += b_random;
            if (is_stable(subject).stable) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            throw UnstableError("could not draw stable random effects for subject " + std::to_string(i) +
                                " within the retry budget; reduce random_scale");
        }
        Vector alpha(k);
        for (Index c = 0; c < k; ++c) {
            alpha(c) = opts.alpha_scale * rng.normal();
        }
        VarParams subject = shared;
        subject.b += b_random;
        const std::uint64_t noise_seed = rng.next_u64();
        sim.data.y.push_back(simulate(subject, alpha, opts.t + opts.holdout, opts.burn_in, noise_seed));
        sim.truth.subjects.push_back(support_of(subject.b, lags));
        sim.params.b_random.push_back(std::move(b_random));
        sim.params.alpha.push_back(std::move(alpha));
    }
    return sim;
}

namespace {

// B <- B * c / rho while rho >= 1; rescaling a VAR(L) does not move rho
// linearly, so iterate.
void stabilise(VarParams& p) {
    constexpr double c = 0.9;
    for (int guard = 0; guard < 1000; ++guard) {
        const double rho = is_stable(p).spectral_radius;
        if (rho < 1.0) {
            return;
        }
        p.b *= c / rho;
    }
    throw std::runtime_error("failed to stabilise generated coefficients");
}

double signed_magnitude(Rng& rng, double lo, double hi) {
    const double m = lo + (hi - lo) * rng.uniform();
    return rng.uniform() < 0.5 ? -m : m;
}

}  // namespace

TruthScenario make_block_diagonal_truth(Index k, Index lags_true, std::uint64_t seed) {
    if (k < 2 || k % 2 != 0) {
        throw DimensionError("block-diagonal truth needs an even K >= 2");
    }
    if (lags_true < 1) {
        throw DimensionError("L_true must be at least 1");
    }
    Rng rng(seed);
    const Index half = k / 2;
    // Series in the first half carry persistent own-lag dynamics (a double
    // root at 0.7 over lags 1-2) and weak inputs; the second half is driven
    // strongly by the first. A pair keeps one sign across lags.
    constexpr double own_root = 0.7;
    constexpr double within = 0.05;    // first half -> first half
    constexpr double feedback = 0.03;  // second half -> first half
    constexpr double strong = 0.5;     // first half -> second half
    Matrix sign(k, k);
    for (Index i = 0; i < sign.size(); ++i) {
        sign.data()[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    VarParams p;
    p.b = Matrix::Zero(k, k * lags_true);
    for (Index l = 0; l < lags_true; ++l) {
        for (Index s = 0; s < k; ++s) {
            for (Index t = 0; t < k; ++t) {
                if (t >= half && s >= half) {
                    continue;
                }
                const double m = 0.5 + 0.5 * rng.uniform();
                const double scale = t >= half ? strong : (s >= half ? feedback : within);
                p.b(t, l * k + s) = sign(t, s) * m * scale;
            }
        }
    }
    for (Index t = 0; t < half; ++t) {
        p.b(t, t) = 2.0 * own_root;
        if (lags_true > 1) {
            p.b(t, k + t) = -own_root * own_root;
        }
    }
    p.nu.resize(k);
    for (Index c = 0; c < k; ++c) {
        p.nu(c) = 0.5 * rng.normal();
    }
    p.sigma2 = 1.0;
    stabilise(p);
    return {p, support_of(p.b, lags_true)};
}

TruthScenario make_community_truth(Index k, Index lags_true, std::uint64_t seed) {
    if (k < 4) {
        throw DimensionError("community truth needs K >= 4");
    }
    if (lags_true < 1) {
        throw DimensionError("L_true must be at least 1");
    }
    Rng rng(seed);
    const Index communities = std::max<Index>(1, k / 10);
    const Index rank = 2;
    VarParams p;
    p.b = Matrix::Zero(k, k * lags_true);
    for (Index c = 0; c < communities; ++c) {
        const Index begin = c * k / communities;
        const Index end = (c + 1) * k / communities;
        const Index size = end - begin;
        // sparse row and column loadings shared across lags
        Matrix u = Matrix::Zero(size, rank);
        Matrix v = Matrix::Zero(size, rank);
        for (Index a = 0; a < rank; ++a) {
            for (Index m = 0; m < size; ++m) {
                if (rng.uniform() < 0.5) {
                    u(m, a) = signed_magnitude(rng, 0.5, 1.0);
                }
                if (rng.uniform() < 0.5) {
                    v(m, a) = signed_magnitude(rng, 0.5, 1.0);
                }
            }
        }
        for (Index l = 0; l < lags_true; ++l) {
            Matrix w(rank, rank);
            for (Index a = 0; a < rank; ++a) {
                for (Index b2 = 0; b2 < rank; ++b2) {
                    w(a, b2) = signed_magnitude(rng, 0.3, 1.0) / static_cast<double>(l + 1);
                }
            }
            p.b.block(begin, l * k + begin, size, size) = u * w * v.transpose();
        }
    }
    p.nu.resize(k);
    for (Index c = 0; c < k; ++c) {
        p.nu(c) = 0.5 * rng.normal();
    }
    p.sigma2 = 1.0;
    stabilise(p);
    return {p, support_of(p.b, lags_true)};
}

Matrix lagged_design(const Matrix& series, Index lags) {
    const Index k = series.cols();
    const Index n = series.rows() - lags;
    if (lags < 1 || n < 1) {
        throw DimensionError("series too short for the requested lag order");
    }
    Matrix x(k * lags, n);
    for (Index t = 0; t < n; ++t) {
        for (Index l = 0; l < lags; ++l) {
            x.block(l * k, t, k, 1) = series.row(lags + t - 1 - l).transpose();
        }
    }
    return x;
}

OlsResult fit_ols(const Matrix& series, Index lags) {
    const Index k = series.cols();
    if (lags < 1 || series.rows() <= lags) {
        throw DimensionError("OLS needs T > L");
    }
    const Index n = series.rows() - lags;
    const Index p = 1 + k * lags;
    if (n < p) {
        return NotComputable{"design has " + std::to_string(p) + " regressors but only " + std::to_string(n) +
                             " usable observations"};
    }
    Matrix design(n, p);
    design.col(0).setOnes();
    design.rightCols(p - 1) = lagged_design(series, lags).transpose();
    const Matrix response = series.bottomRows(n);

    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
        return NotComputable{"singular design (rank " + std::to_string(qr.rank()) + " < " + std::to_string(p) + ")"};
    }
    const Matrix coef = qr.solve(response);  // p x K
    VarParams out;
    out.nu = coef.row(0).transpose();
    out.b = coef.bottomRows(p - 1).transpose();
    const Matrix resid = response - design * coef;
    const double dof = static_cast<double>(std::max<Index>(1, n - p));
    out.sigma2 = std::max(resid.squaredNorm() / (dof * static_cast<double>(k)), 1e-300);
    return out;
}

Matrix predict_one_step(const Matrix& series, const Matrix& b, const Vector& nu, const Vector& alpha, Index begin,
                        Index end) {
    const Index k = series.cols();
    if (b.rows() != k || b.cols() % k != 0 || nu.size() != k || alpha.size() != k) {
        throw DimensionError("prediction parameters do not match the series");
    }
    const Index lags = b.cols() / k;
    if (begin < lags || end > series.rows() || begin > end) {
        throw DimensionError("prediction rows must lie in [L, T]");
    }
    Matrix out(end - begin, k);
    const Vector level = nu + alpha;
    for (Index t = begin; t < end; ++t) {
        Vector mean = level;
        for (Index l = 0; l < lags; ++l) {
            mean.noalias() += b.middleCols(l * k, k) * (series.row(t - 1 - l).transpose() - alpha);
        }
        out.row(t - begin) = mean.transpose();
    }
    return out;
}

}  // namespace btdvar
