#include "btdvar/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace btdvar {

namespace {

Matrix core_mode2_slice(const Tensor3& g, Index r2) {
    Matrix out(g.dim(1), g.dim(3));
    for (Index c = 0; c < g.dim(3); ++c) {
        for (Index a = 0; a < g.dim(1); ++a) {
            out(a, c) = g(a, r2, c);
        }
    }
    return out;
}

Matrix drop_column(const Matrix& m, Index c) {
    Matrix out(m.rows(), m.cols() - 1);
    out.leftCols(c) = m.leftCols(c);
    out.rightCols(m.cols() - c - 1) = m.rightCols(m.cols() - c - 1);
    return out;
}

Vector drop_entry(const Vector& v, Index c) {
    Vector out(v.size() - 1);
    out.head(c) = v.head(c);
    out.tail(v.size() - c - 1) = v.tail(v.size() - c - 1);
    return out;
}

// N(Q^{-1} b, sigma2 Q^{-1}) via the Cholesky factor of Q.
Vector draw_gaussian(const Matrix& precision, const Vector& rhs, double sigma2, Rng& rng, const std::string& step) {
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw SamplerError(step + ": conditional precision is not positive definite");
    }
    Vector z(rhs.size());
    for (Index i = 0; i < z.size(); ++i) {
        z(i) = rng.normal();
    }
    Vector out = llt.solve(rhs);
    out += std::sqrt(sigma2) * llt.matrixU().solve(z);
    return out;
}

double ig(Rng& rng, double shape, double scale) { return floor_scale(rng.inv_gamma(shape, scale)); }

}  // namespace

void SamplerConfig::validate(Index k) const {
    if (lags < 1) {
        throw std::invalid_argument("lags must be at least 1");
    }
    if (ranks[0] < 1 || ranks[1] < 1 || ranks[2] < 1) {
        throw std::invalid_argument("ranks must be at least 1");
    }
    if (ranks[0] > k || ranks[1] > k || ranks[2] > lags) {
        throw std::invalid_argument("ranks must satisfy R1, R2 <= K and R3 <= L");
    }
    if (burn_in < 0 || iterations <= burn_in) {
        throw std::invalid_argument("iterations must exceed burn_in >= 0");
    }
    if (thin < 1 || prune_window < 1) {
        throw std::invalid_argument("thin and prune_window must be at least 1");
    }
    if (!(prune_threshold >= 0.0)) {
        throw std::invalid_argument("prune_threshold must be non-negative");
    }
    if (!(hyper.a1 > 0 && hyper.a2 > 0 && hyper.a_sigma > 0 && hyper.b_sigma > 0)) {
        throw std::invalid_argument("prior hyperparameters must be positive");
    }
}

// ---------------------------------------------------------------------------
// PanelState

Matrix PanelState::subject_beta1(std::size_t i) const {
    return beta1_dev.empty() ? beta1_fixed : Matrix(beta1_fixed + beta1_dev[i]);
}

Vector PanelState::subject_alpha(std::size_t i) const {
    return alpha.empty() ? Vector::Zero(k()) : alpha[i];
}

Matrix PanelState::loading_basis() const { return tucker_loading_basis(core, beta2, beta3); }

Matrix PanelState::b_fixed() const { return beta1_fixed * loading_basis(); }

Matrix PanelState::b_subject(std::size_t i) const { return subject_beta1(i) * loading_basis(); }

TuckerFactors PanelState::fixed_factors() const { return {core, beta1_fixed, beta2, beta3}; }

void PanelState::validate() const {
    fixed_factors().validate();
    const Index kk = k();
    const auto r = ranks();
    if (nu.size() != kk) {
        throw DimensionError("intercept length must equal K");
    }
    if (!alpha.empty() && alpha.size() != beta1_dev.size()) {
        throw DimensionError("random intercepts and loading deviations differ in subject count");
    }
    for (const auto& d : beta1_dev) {
        if (d.rows() != kk || d.cols() != r[0]) {
            throw DimensionError("loading deviation must be K x R1");
        }
    }
    for (const auto& a : alpha) {
        if (a.size() != kk) {
            throw DimensionError("random intercept length must equal K");
        }
    }
    const Index rows[3] = {kk, kk, lags()};
    for (std::size_t j = 0; j < 3; ++j) {
        const auto& f = hyper.factor[j];
        if (f.tau2.rows() != rows[j] || f.tau2.cols() != r[j] || f.phi.rows() != rows[j] ||
            f.phi.cols() != r[j] || f.delta.size() != r[j] || f.psi.size() != r[j]) {
            throw DimensionError("shrinkage of factor " + std::to_string(j + 1) + " does not match its shape");
        }
    }
    if (hyper.deviation.size() != beta1_dev.size()) {
        throw DimensionError("deviation scales do not match subject count");
    }
    for (const auto& d : hyper.deviation) {
        if (d.tau2.rows() != kk || d.tau2.cols() != r[0] || d.phi.rows() != kk || d.phi.cols() != r[0]) {
            throw DimensionError("deviation scales must be K x R1");
        }
    }
    if (hyper.core.tau2.size() != core.size() || hyper.core.phi.size() != core.size()) {
        throw DimensionError("core scales do not match the core size");
    }
    if (hyper.nu.tau2.size() != kk || hyper.nu.phi.size() != kk) {
        throw DimensionError("intercept scales must have length K");
    }
}

PanelState sample_prior_state(Index k, Index lags, std::array<Index, 3> ranks, std::size_t deviations,
                              const HyperParameters& hp, Rng& rng) {
    PanelState s;
    s.hyper = sample_hyper_prior(k, lags, ranks, deviations, hp, rng);
    const auto& h = s.hyper;
    const Index rows[3] = {k, k, lags};
    Matrix* targets[3] = {&s.beta1_fixed, &s.beta2, &s.beta3};
    for (int j = 1; j <= 3; ++j) {
        Matrix& m = *targets[j - 1];
        m.resize(rows[j - 1], ranks[static_cast<std::size_t>(j - 1)]);
        for (Index c = 0; c < m.cols(); ++c) {
            for (Index r = 0; r < m.rows(); ++r) {
                m(r, c) = draw_prior_beta_entry(j, r, c, h, rng);
            }
        }
    }
    for (std::size_t i = 0; i < deviations; ++i) {
        Matrix d(k, ranks[0]);
        for (Index c = 0; c < ranks[0]; ++c) {
            for (Index r = 0; r < k; ++r) {
                const double var = h.deviation[i].tau2(r, c) * h.factor[0].lambda2 * h.sigma2 / h.factor[0].psi(c);
                d(r, c) = std::sqrt(var) * rng.normal();
            }
        }
        s.beta1_dev.push_back(std::move(d));
    }
    s.core = Tensor3(ranks[0], ranks[1], ranks[2]);
    auto& g = s.core.values();
    for (std::size_t e = 0; e < g.size(); ++e) {
        g[e] = std::sqrt(h.core.tau2(static_cast<Index>(e)) * h.core.lambda2 * h.sigma2) * rng.normal();
    }
    s.nu.resize(k);
    for (Index e = 0; e < k; ++e) {
        s.nu(e) = std::sqrt(h.nu.tau2(e) * h.nu.lambda2 * h.sigma2) * rng.normal();
    }
    for (std::size_t i = 0; i < deviations; ++i) {
        Vector a(k);
        for (Index e = 0; e < k; ++e) {
            a(e) = std::sqrt(h.alpha_lambda2 * h.sigma2) * rng.normal();
        }
        s.alpha.push_back(std::move(a));
    }
    return s;
}

PanelState initial_state(const PanelData& data, const SamplerConfig& cfg, Rng& rng) {
    const Index k = data.k();
    cfg.validate(k);
    data.validate_for_lags(cfg.lags);
    const bool panel = cfg.random_effects && data.subjects() > 1;
    const std::size_t n_dev = panel ? data.subjects() : 0;
    const auto& r = cfg.ranks;

    PanelState s;
    auto small = [&](Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index c = 0; c < cols; ++c) {
            for (Index e = 0; e < rows; ++e) {
                m(e, c) = 0.1 * rng.normal();
            }
        }
        return m;
    };
    s.beta1_fixed = small(k, r[0]);
    s.beta2 = small(k, r[1]);
    s.beta3 = small(cfg.lags, r[2]);
    s.core = Tensor3(r[0], r[1], r[2]);
    for (double& v : s.core.values()) {
        v = 0.1 * rng.normal();
    }
    for (std::size_t i = 0; i < n_dev; ++i) {
        s.beta1_dev.push_back(Matrix::Zero(k, r[0]));
    }

    const Index rows = data.train_t();
    Vector diff_sum = Vector::Zero(k);
    Vector level_sum = Vector::Zero(k);
    std::vector<Vector> subject_mean;
    for (const auto& y : data.y) {
        const Matrix train = y.topRows(rows);
        if (rows > 1) {
            diff_sum += (train.bottomRows(rows - 1) - train.topRows(rows - 1)).colwise().sum().transpose();
        }
        subject_mean.push_back(train.colwise().mean().transpose());
        level_sum += subject_mean.back();
    }
    const double n_diff = static_cast<double>(data.subjects()) * static_cast<double>(rows - 1);
    s.nu = n_diff > 0 ? Vector(diff_sum / n_diff) : Vector(Vector::Zero(k));
    const Vector pooled = level_sum / static_cast<double>(data.subjects());
    for (std::size_t i = 0; i < n_dev; ++i) {
        s.alpha.push_back(subject_mean[i] - pooled);
    }

    HyperState& h = s.hyper;
    h.params = cfg.hyper;
    h.factor[0] = FactorShrinkage::ones(k, r[0]);
    h.factor[1] = FactorShrinkage::ones(k, r[1]);
    h.factor[2] = FactorShrinkage::ones(cfg.lags, r[2]);
    for (std::size_t i = 0; i < n_dev; ++i) {
        h.deviation.push_back({Matrix::Ones(k, r[0]), Matrix::Ones(k, r[0])});
    }
    h.core = HorseshoeScales::ones(s.core.size());
    h.nu = HorseshoeScales::ones(k);
    return s;
}

Matrix build_h_matrix(const PanelState& state, const Vector& lags_vector, int j, Index r, std::size_t subject) {
    const Index k = state.k();
    const Index lags = state.lags();
    if (lags_vector.size() != k * lags) {
        throw DimensionError("lag vector must have length K*L");
    }
    const auto ranks = state.ranks();
    if (j < 1 || j > 3 || r < 0 || r >= ranks[static_cast<std::size_t>(j - 1)]) {
        throw std::out_of_range("factor or column index out of range");
    }
    const Vector alpha = state.subject_alpha(subject);
    Vector z = lags_vector;
    for (Index l = 0; l < lags; ++l) {
        z.segment(l * k, k) -= alpha;
    }
    const Matrix w = state.subject_beta1(subject);
    if (j == 1) {
        const double u = state.loading_basis().row(r).dot(z);
        return u * Matrix::Identity(k, k);
    }
    if (j == 2) {
        const Matrix p = w * core_mode2_slice(state.core, r) * state.beta3.transpose();  // K x L
        Matrix h = Matrix::Zero(k, k);
        for (Index l = 0; l < lags; ++l) {
            h += p.col(l) * z.segment(l * k, k).transpose();
        }
        return h;
    }
    const Matrix a = w * state.core.frontal_slice(r) * state.beta2.transpose();  // K x K
    Matrix h(k, lags);
    for (Index l = 0; l < lags; ++l) {
        h.col(l) = a * z.segment(l * k, k);
    }
    return h;
}

// ---------------------------------------------------------------------------
// GibbsSampler

GibbsSampler::GibbsSampler(const PanelData& data, const SamplerConfig& cfg, PanelState state)
    : cfg_(cfg), state_(std::move(state)) {
    state_.validate();
    load_data(data);
    refresh_all();
}

void GibbsSampler::load_data(const PanelData& data) {
    const Index lags = state_.lags();
    data.validate_for_lags(lags);
    if (data.k() != state_.k()) {
        throw DimensionError("data and state disagree on K");
    }
    if (state_.random_effects() && state_.beta1_dev.size() != data.subjects()) {
        throw DimensionError("state has random effects for a different number of subjects");
    }
    const Index rows = data.train_t();
    subjects_.assign(data.subjects(), SubjectCache{});
    n_ = rows - lags;
    for (std::size_t i = 0; i < data.subjects(); ++i) {
        const Matrix train = data.y[i].topRows(rows);
        auto& c = subjects_[i];
        c.x = lagged_design(train, lags);
        c.y = train.bottomRows(n_).transpose();
        c.xxt = c.x * c.x.transpose();
        c.xsum = c.x.rowwise().sum();
    }
}

void GibbsSampler::set_state(PanelState state) {
    state.validate();
    if (state.k() != state_.k() || state.lags() != state_.lags() ||
        state.random_effects() != state_.random_effects() || state.beta1_dev.size() != state_.beta1_dev.size()) {
        throw DimensionError("replacement state has a different layout");
    }
    state_ = std::move(state);
    refresh_all();
}

void GibbsSampler::set_data(const PanelData& data) {
    if (data.subjects() != subjects_.size()) {
        throw DimensionError("replacement data has a different number of subjects");
    }
    load_data(data);
    refresh_all();
}

void GibbsSampler::refresh_all() {
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        refresh_centering(i);
    }
    refresh_basis();
    refresh_residuals();
}

void GibbsSampler::refresh_centering(std::size_t i) {
    auto& c = subjects_[i];
    const Index k = state_.k();
    const Index lags = state_.lags();
    const Vector alpha = state_.subject_alpha(i);
    Vector stacked(k * lags);
    for (Index l = 0; l < lags; ++l) {
        stacked.segment(l * k, k) = alpha;
    }
    c.z = c.x.colwise() - stacked;
    c.s = c.xxt - c.xsum * stacked.transpose() - stacked * c.xsum.transpose() +
          static_cast<double>(n_) * stacked * stacked.transpose();
}

void GibbsSampler::refresh_basis() {
    basis_ = state_.loading_basis();
    for (auto& c : subjects_) {
        c.u.noalias() = basis_ * c.z;
    }
}

void GibbsSampler::refresh_residuals() {
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        auto& c = subjects_[i];
        const Vector level = state_.nu + state_.subject_alpha(i);
        c.e = c.y.colwise() - level;
        c.e.noalias() -= state_.subject_beta1(i) * c.u;
    }
}

void GibbsSampler::check_finite(const Matrix& m, const std::string& step) const {
    if (!m.allFinite()) {
        throw SamplerError(step + ": non-finite value in conditional draw");
    }
}

void GibbsSampler::check_finite(double v, const std::string& step) const {
    if (!std::isfinite(v)) {
        throw SamplerError(step + ": non-finite value in conditional draw");
    }
}

double GibbsSampler::factor_quadratic(int j, Index r) const {
    const auto& f = state_.hyper.factor[static_cast<std::size_t>(j - 1)];
    const Matrix& beta = j == 1 ? state_.beta1_fixed : (j == 2 ? state_.beta2 : state_.beta3);
    double q = (beta.col(r).array().square() / f.tau2.col(r).array()).sum();
    if (j == 1) {
        for (std::size_t i = 0; i < state_.beta1_dev.size(); ++i) {
            q += (state_.beta1_dev[i].col(r).array().square() / state_.hyper.deviation[i].tau2.col(r).array()).sum();
        }
    }
    return q;
}

Index GibbsSampler::factor_entry_count(int j) const {
    const auto& f = state_.hyper.factor[static_cast<std::size_t>(j - 1)];
    Index rows = f.tau2.rows();
    if (j == 1) {
        rows *= 1 + static_cast<Index>(state_.beta1_dev.size());
    }
    return rows * f.tau2.cols();
}

void GibbsSampler::sweep(Rng& rng) {
    refresh_all();
    update_sigma2(rng);
    update_local_scales(rng);
    update_global_scales(rng);
    update_mgps(rng);
    update_factors(rng);
    update_core(rng);
    update_intercept(rng);
    update_random_intercepts(rng);
    update_auxiliaries(rng);
    update_xi(rng);
}

void GibbsSampler::update_sigma2(Rng& rng) {
    const auto& h = state_.hyper;
    const double n_subj = static_cast<double>(subjects_.size());
    const Index k = state_.k();
    double shape = h.params.a_sigma + 0.5 * n_subj * static_cast<double>(n_ * k);
    double rate = h.params.b_sigma;
    for (const auto& c : subjects_) {
        rate += 0.5 * c.e.squaredNorm();
    }
    for (int j = 1; j <= 3; ++j) {
        const auto& f = h.factor[static_cast<std::size_t>(j - 1)];
        shape += 0.5 * static_cast<double>(factor_entry_count(j));
        for (Index r = 0; r < f.psi.size(); ++r) {
            rate += 0.5 * f.psi(r) * factor_quadratic(j, r) / f.lambda2;
        }
    }
    const Vector g = Eigen::Map<const Vector>(state_.core.values().data(), state_.core.size());
    shape += 0.5 * static_cast<double>(g.size());
    rate += 0.5 * (g.array().square() / h.core.tau2.array()).sum() / h.core.lambda2;
    shape += 0.5 * static_cast<double>(k);
    rate += 0.5 * (state_.nu.array().square() / h.nu.tau2.array()).sum() / h.nu.lambda2;
    for (const auto& a : state_.alpha) {
        shape += 0.5 * static_cast<double>(k);
        rate += 0.5 * a.squaredNorm() / h.alpha_lambda2;
    }
    state_.hyper.sigma2 = ig(rng, shape, rate);
    check_finite(state_.hyper.sigma2, "sigma2");
}

void GibbsSampler::update_local_scales(Rng& rng) {
    auto& h = state_.hyper;
    const double s2 = h.sigma2;
    const Matrix* betas[3] = {&state_.beta1_fixed, &state_.beta2, &state_.beta3};
    for (std::size_t j = 0; j < 3; ++j) {
        auto& f = h.factor[j];
        const Matrix& b = *betas[j];
        for (Index c = 0; c < b.cols(); ++c) {
            for (Index r = 0; r < b.rows(); ++r) {
                f.tau2(r, c) = ig(rng, 1.0, 1.0 / f.phi(r, c) + f.psi(c) * b(r, c) * b(r, c) / (2.0 * f.lambda2 * s2));
            }
        }
    }
    for (std::size_t i = 0; i < state_.beta1_dev.size(); ++i) {
        auto& d = h.deviation[i];
        const Matrix& b = state_.beta1_dev[i];
        for (Index c = 0; c < b.cols(); ++c) {
            for (Index r = 0; r < b.rows(); ++r) {
                d.tau2(r, c) = ig(rng, 1.0,
                                  1.0 / d.phi(r, c) + h.factor[0].psi(c) * b(r, c) * b(r, c) / (2.0 * h.factor[0].lambda2 * s2));
            }
        }
    }
    const auto& g = state_.core.values();
    for (Index e = 0; e < h.core.tau2.size(); ++e) {
        const double v = g[static_cast<std::size_t>(e)];
        h.core.tau2(e) = ig(rng, 1.0, 1.0 / h.core.phi(e) + v * v / (2.0 * h.core.lambda2 * s2));
    }
    for (Index e = 0; e < h.nu.tau2.size(); ++e) {
        const double v = state_.nu(e);
        h.nu.tau2(e) = ig(rng, 1.0, 1.0 / h.nu.phi(e) + v * v / (2.0 * h.nu.lambda2 * s2));
    }
}

void GibbsSampler::update_global_scales(Rng& rng) {
    auto& h = state_.hyper;
    const double s2 = h.sigma2;
    for (int j = 1; j <= 3; ++j) {
        auto& f = h.factor[static_cast<std::size_t>(j - 1)];
        double rate = 1.0 / h.xi;
        for (Index r = 0; r < f.psi.size(); ++r) {
            rate += f.psi(r) * factor_quadratic(j, r) / (2.0 * s2);
        }
        f.lambda2 = ig(rng, 0.5 * (1.0 + static_cast<double>(factor_entry_count(j))), rate);
    }
    const auto& gv = state_.core.values();
    const Vector g = Eigen::Map<const Vector>(gv.data(), state_.core.size());
    h.core.lambda2 = ig(rng, 0.5 * (1.0 + static_cast<double>(g.size())),
                        1.0 / h.xi + (g.array().square() / h.core.tau2.array()).sum() / (2.0 * s2));
    h.nu.lambda2 = ig(rng, 0.5 * (1.0 + static_cast<double>(state_.nu.size())),
                      1.0 / h.xi + (state_.nu.array().square() / h.nu.tau2.array()).sum() / (2.0 * s2));
    if (!state_.alpha.empty()) {
        double ss = 0.0;
        for (const auto& a : state_.alpha) {
            ss += a.squaredNorm();
        }
        const double count = static_cast<double>(state_.alpha.size()) * static_cast<double>(state_.k());
        h.alpha_lambda2 = ig(rng, 0.5 * (1.0 + count), 1.0 / h.alpha_phi + ss / (2.0 * s2));
    }
}

void GibbsSampler::update_mgps(Rng& rng) {
    auto& h = state_.hyper;
    for (int j = 1; j <= 3; ++j) {
        auto& f = h.factor[static_cast<std::size_t>(j - 1)];
        const Index cols = f.delta.size();
        const double rows = static_cast<double>(factor_entry_count(j) / cols);
        Vector q(cols);
        for (Index r = 0; r < cols; ++r) {
            q(r) = factor_quadratic(j, r) / (f.lambda2 * h.sigma2);
        }
        for (Index m = 0; m < cols; ++m) {
            double rate = 1.0;
            for (Index r = m; r < cols; ++r) {
                rate += 0.5 * (f.psi(r) / f.delta(m)) * q(r);
            }
            const double a = m == 0 ? h.params.a1 : h.params.a2;
            f.delta(m) = floor_scale(rng.gamma(a + 0.5 * rows * static_cast<double>(cols - m), rate));
            f.recompute_psi();
        }
        check_finite(f.psi, "mgps");
    }
}

ColumnSystem GibbsSampler::column_system(int j, Index r, std::optional<std::size_t> subject) const {
    const Index k = state_.k();
    const Index lags = state_.lags();
    const auto ranks = state_.ranks();
    if (j < 1 || j > 3 || r < 0 || r >= ranks[static_cast<std::size_t>(j - 1)]) {
        throw std::out_of_range("factor or column index out of range");
    }
    if (subject && *subject >= subjects_.size()) {
        throw std::out_of_range("subject index out of range");
    }
    std::size_t first = subject ? *subject : 0;
    std::size_t last = subject ? *subject + 1 : subjects_.size();

    ColumnSystem sys;
    if (j == 1) {
        // Own contribution: the deviation when a subject is named and
        // random effects are on, otherwise the fixed loadings.
        const bool deviation = subject && state_.random_effects();
        double uu_total = 0.0;
        sys.rhs = Vector::Zero(k);
        for (std::size_t i = first; i < last; ++i) {
            const auto& c = subjects_[i];
            const double uu = c.u.row(r).squaredNorm();
            const Vector own = deviation ? Vector(state_.beta1_dev[i].col(r)) : Vector(state_.beta1_fixed.col(r));
            sys.rhs.noalias() += c.e * c.u.row(r).transpose();
            sys.rhs += uu * own;
            uu_total += uu;
        }
        sys.gram = uu_total * Matrix::Identity(k, k);
        return sys;
    }
    if (j == 2) {
        sys.gram = Matrix::Zero(k, k);
        sys.rhs = Vector::Zero(k);
        const Matrix gr = core_mode2_slice(state_.core, r);
        for (std::size_t i = first; i < last; ++i) {
            const auto& c = subjects_[i];
            const Matrix p = state_.subject_beta1(i) * gr * state_.beta3.transpose();  // K x L
            const Matrix ptp = p.transpose() * p;
            for (Index l = 0; l < lags; ++l) {
                for (Index m = 0; m < lags; ++m) {
                    sys.gram += ptp(l, m) * c.s.block(l * k, m * k, k, k);
                }
            }
            const Matrix etp = c.e.transpose() * p;  // n x L
            for (Index l = 0; l < lags; ++l) {
                sys.rhs.noalias() += c.z.middleRows(l * k, k) * etp.col(l);
            }
        }
        sys.rhs += sys.gram * state_.beta2.col(r);
        return sys;
    }
    sys.gram = Matrix::Zero(lags, lags);
    sys.rhs = Vector::Zero(lags);
    const Matrix slice = state_.core.frontal_slice(r);
    for (std::size_t i = first; i < last; ++i) {
        const auto& c = subjects_[i];
        const Matrix a = state_.subject_beta1(i) * slice * state_.beta2.transpose();  // K x K
        const Matrix phi = a.transpose() * a;
        for (Index l = 0; l < lags; ++l) {
            for (Index m = 0; m < lags; ++m) {
                sys.gram(l, m) += phi.cwiseProduct(c.s.block(l * k, m * k, k, k)).sum();
            }
        }
        const Matrix ate = a.transpose() * c.e;  // K x n
        for (Index l = 0; l < lags; ++l) {
            sys.rhs(l) += c.z.middleRows(l * k, k).cwiseProduct(ate).sum();
        }
    }
    sys.rhs += sys.gram * state_.beta3.col(r);
    return sys;
}

void GibbsSampler::update_factor_column(int j, Index r, Rng& rng) {
    switch (j) {
        case 1:
            update_beta1_column(r, rng);
            break;
        case 2:
            update_beta2_column(r, rng);
            break;
        case 3:
            update_beta3_column(r, rng);
            break;
        default:
            throw std::out_of_range("factor index must be 1, 2 or 3");
    }
}

void GibbsSampler::update_factors(Rng& rng) {
    const auto ranks = state_.ranks();
    for (Index r = 0; r < ranks[0]; ++r) {
        update_beta1_column(r, rng);
    }
    for (Index r = 0; r < ranks[1]; ++r) {
        update_beta2_column(r, rng);
    }
    for (Index r = 0; r < ranks[2]; ++r) {
        update_beta3_column(r, rng);
    }
}

void GibbsSampler::update_beta1_column(Index r, Rng& rng) {
    const auto& f = state_.hyper.factor[0];
    const double s2 = state_.hyper.sigma2;
    {
        auto sys = column_system(1, r);
        sys.gram.diagonal().array() += f.psi(r) / (f.lambda2 * f.tau2.col(r).array());
        const Vector draw = draw_gaussian(sys.gram, sys.rhs, s2, rng, "beta1 fixed column");
        check_finite(draw, "beta1 fixed column");
        const Vector delta = draw - state_.beta1_fixed.col(r);
        state_.beta1_fixed.col(r) = draw;
        for (auto& c : subjects_) {
            c.e.noalias() -= delta * c.u.row(r);
        }
    }
    for (std::size_t i = 0; i < state_.beta1_dev.size(); ++i) {
        auto sys = column_system(1, r, i);
        sys.gram.diagonal().array() += f.psi(r) / (f.lambda2 * state_.hyper.deviation[i].tau2.col(r).array());
        const Vector draw = draw_gaussian(sys.gram, sys.rhs, s2, rng, "beta1 deviation column");
        check_finite(draw, "beta1 deviation column");
        const Vector delta = draw - state_.beta1_dev[i].col(r);
        state_.beta1_dev[i].col(r) = draw;
        subjects_[i].e.noalias() -= delta * subjects_[i].u.row(r);
    }
}

void GibbsSampler::update_beta2_column(Index r, Rng& rng) {
    const auto& f = state_.hyper.factor[1];
    auto sys = column_system(2, r);
    sys.gram.diagonal().array() += f.psi(r) / (f.lambda2 * f.tau2.col(r).array());
    const Vector draw = draw_gaussian(sys.gram, sys.rhs, state_.hyper.sigma2, rng, "beta2 column");
    check_finite(draw, "beta2 column");
    const Vector delta = draw - state_.beta2.col(r);
    const Index k = state_.k();
    const Index lags = state_.lags();
    const Matrix gr = core_mode2_slice(state_.core, r);
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        auto& c = subjects_[i];
        const Matrix p = state_.subject_beta1(i) * gr * state_.beta3.transpose();
        Matrix q(lags, n_);
        for (Index l = 0; l < lags; ++l) {
            q.row(l).noalias() = delta.transpose() * c.z.middleRows(l * k, k);
        }
        c.e.noalias() -= p * q;
    }
    state_.beta2.col(r) = draw;
    refresh_basis();
}

void GibbsSampler::update_beta3_column(Index r, Rng& rng) {
    const auto& f = state_.hyper.factor[2];
    auto sys = column_system(3, r);
    sys.gram.diagonal().array() += f.psi(r) / (f.lambda2 * f.tau2.col(r).array());
    const Vector draw = draw_gaussian(sys.gram, sys.rhs, state_.hyper.sigma2, rng, "beta3 column");
    check_finite(draw, "beta3 column");
    const Vector delta = draw - state_.beta3.col(r);
    const Index k = state_.k();
    const Matrix slice = state_.core.frontal_slice(r);
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        auto& c = subjects_[i];
        const Matrix a = state_.subject_beta1(i) * slice * state_.beta2.transpose();
        Matrix mix = Matrix::Zero(k, n_);
        for (Index l = 0; l < delta.size(); ++l) {
            mix += delta(l) * c.z.middleRows(l * k, k);
        }
        c.e.noalias() -= a * mix;
    }
    state_.beta3.col(r) = draw;
    refresh_basis();
}

void GibbsSampler::update_core(Rng& rng) {
    const Index k = state_.k();
    const Index lags = state_.lags();
    const auto [r1n, r2n, r3n] = state_.ranks();
    const std::size_t ns = subjects_.size();

    // Per subject: s(r2 + R2 r3, t) = beta2_r2^T sum_l beta3(l, r3) z_{l,t},
    // F = W^T E and W^T W, so each element costs O(R1 n).
    std::vector<Matrix> s(ns), fmat(ns), wtw(ns);
    std::vector<Vector> ss(ns);
    for (std::size_t i = 0; i < ns; ++i) {
        const auto& c = subjects_[i];
        const Matrix w = state_.subject_beta1(i);
        s[i].resize(r2n * r3n, n_);
        for (Index r3 = 0; r3 < r3n; ++r3) {
            Matrix mixed = Matrix::Zero(k, n_);
            for (Index l = 0; l < lags; ++l) {
                mixed += state_.beta3(l, r3) * c.z.middleRows(l * k, k);
            }
            s[i].middleRows(r3 * r2n, r2n).noalias() = state_.beta2.transpose() * mixed;
        }
        fmat[i].noalias() = w.transpose() * c.e;
        wtw[i].noalias() = w.transpose() * w;
        ss[i] = s[i].rowwise().squaredNorm();
    }

    auto& hc = state_.hyper.core;
    const double s2 = state_.hyper.sigma2;
    for (Index r3 = 0; r3 < r3n; ++r3) {
        for (Index r2 = 0; r2 < r2n; ++r2) {
            const Index row = r2 + r2n * r3;
            for (Index r1 = 0; r1 < r1n; ++r1) {
                const Index e = r1 + r1n * row;
                double& g = state_.core(r1, r2, r3);
                double prec = 0.0;
                double rhs = 0.0;
                for (std::size_t i = 0; i < ns; ++i) {
                    const double w2 = wtw[i](r1, r1) * ss[i](row);
                    prec += w2;
                    rhs += fmat[i].row(r1).dot(s[i].row(row)) + g * w2;
                }
                prec += 1.0 / (hc.lambda2 * hc.tau2(e));
                const double draw = rhs / prec + std::sqrt(s2 / prec) * rng.normal();
                check_finite(draw, "core");
                const double delta = draw - g;
                g = draw;
                for (std::size_t i = 0; i < ns; ++i) {
                    fmat[i].noalias() -= (delta * wtw[i].col(r1)) * s[i].row(row);
                }
            }
        }
    }
    refresh_basis();
    refresh_residuals();
}

void GibbsSampler::update_intercept(Rng& rng) {
    const auto& h = state_.hyper.nu;
    const double total = static_cast<double>(subjects_.size()) * static_cast<double>(n_);
    Vector esum = Vector::Zero(state_.k());
    for (const auto& c : subjects_) {
        esum += c.e.rowwise().sum();
    }
    Vector delta(state_.k());
    for (Index k = 0; k < state_.k(); ++k) {
        const double prec = total + 1.0 / (h.lambda2 * h.tau2(k));
        const double rhs = esum(k) + total * state_.nu(k);
        const double draw = rhs / prec + std::sqrt(state_.hyper.sigma2 / prec) * rng.normal();
        check_finite(draw, "intercept");
        delta(k) = draw - state_.nu(k);
        state_.nu(k) = draw;
    }
    for (auto& c : subjects_) {
        c.e.colwise() -= delta;
    }
}

void GibbsSampler::update_random_intercepts(Rng& rng) {
    if (state_.alpha.empty()) {
        return;
    }
    const Index k = state_.k();
    const Index lags = state_.lags();
    const double n = static_cast<double>(n_);
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        auto& c = subjects_[i];
        const Matrix b = state_.subject_beta1(i) * basis_;
        Matrix cm = Matrix::Identity(k, k);
        for (Index l = 0; l < lags; ++l) {
            cm -= b.middleCols(l * k, k);
        }
        const Matrix ctc = cm.transpose() * cm;
        Matrix prec = n * ctc;
        prec.diagonal().array() += 1.0 / state_.hyper.alpha_lambda2;
        const Vector rhs = cm.transpose() * c.e.rowwise().sum() + n * ctc * state_.alpha[i];
        const Vector draw = draw_gaussian(prec, rhs, state_.hyper.sigma2, rng, "random intercept");
        check_finite(draw, "random intercept");
        const Vector shift = cm * (draw - state_.alpha[i]);
        state_.alpha[i] = draw;
        c.e.colwise() -= shift;
        refresh_centering(i);
        c.u.noalias() = basis_ * c.z;
    }
}

void GibbsSampler::update_auxiliaries(Rng& rng) {
    auto& h = state_.hyper;
    for (auto& f : h.factor) {
        for (Index c = 0; c < f.phi.cols(); ++c) {
            for (Index r = 0; r < f.phi.rows(); ++r) {
                f.phi(r, c) = ig(rng, 1.0, 1.0 + 1.0 / f.tau2(r, c));
            }
        }
    }
    for (auto& d : h.deviation) {
        for (Index c = 0; c < d.phi.cols(); ++c) {
            for (Index r = 0; r < d.phi.rows(); ++r) {
                d.phi(r, c) = ig(rng, 1.0, 1.0 + 1.0 / d.tau2(r, c));
            }
        }
    }
    for (Index e = 0; e < h.core.phi.size(); ++e) {
        h.core.phi(e) = ig(rng, 1.0, 1.0 + 1.0 / h.core.tau2(e));
    }
    for (Index e = 0; e < h.nu.phi.size(); ++e) {
        h.nu.phi(e) = ig(rng, 1.0, 1.0 + 1.0 / h.nu.tau2(e));
    }
    if (!state_.alpha.empty()) {
        h.alpha_phi = ig(rng, 1.0, 1.0 + 1.0 / h.alpha_lambda2);
    }
}

void GibbsSampler::update_xi(Rng& rng) {
    auto& h = state_.hyper;
    double rate = 1.0 + 1.0 / h.core.lambda2 + 1.0 / h.nu.lambda2;
    for (const auto& f : h.factor) {
        rate += 1.0 / f.lambda2;
    }
    h.xi = ig(rng, 3.0, rate);
    check_finite(h.xi, "xi");
}

// ---------------------------------------------------------------------------
// Pruning

ColumnNormWindow ColumnNormWindow::zeros(const PanelState& s) {
    ColumnNormWindow w;
    const auto r = s.ranks();
    for (std::size_t j = 0; j < 3; ++j) {
        w.fixed[j] = Vector::Zero(r[j]);
    }
    w.deviation.assign(s.beta1_dev.size(), Vector::Zero(r[0]));
    return w;
}

void ColumnNormWindow::accumulate(const PanelState& s) {
    if (samples == 0) {
        *this = zeros(s);
    }
    w_add(fixed[0], s.beta1_fixed);
    w_add(fixed[1], s.beta2);
    w_add(fixed[2], s.beta3);
    for (std::size_t i = 0; i < deviation.size(); ++i) {
        w_add(deviation[i], s.beta1_dev[i]);
    }
    ++samples;
}

void ColumnNormWindow::w_add(Vector& acc, const Matrix& m) {
    if (acc.size() != m.cols()) {
        throw DimensionError("norm window does not match the current ranks");
    }
    acc += m.colwise().norm().transpose();
}

ColumnNormWindow ColumnNormWindow::averaged() const {
    ColumnNormWindow out = *this;
    if (samples > 0) {
        const double n = static_cast<double>(samples);
        for (auto& v : out.fixed) {
            v /= n;
        }
        for (auto& v : out.deviation) {
            v /= n;
        }
        out.samples = 1;
    }
    return out;
}

namespace {

void remove_column(PanelState& s, int j, Index c) {
    auto& f = s.hyper.factor[static_cast<std::size_t>(j)];
    f.tau2 = drop_column(f.tau2, c);
    f.phi = drop_column(f.phi, c);
    f.delta = drop_entry(f.delta, c);
    f.recompute_psi();

    auto dims = s.core.dims();
    Tensor3::Dims next = dims;
    next[static_cast<std::size_t>(j)] -= 1;
    Tensor3 core(next[0], next[1], next[2]);
    Vector tau(core.size()), phi(core.size());
    Index out = 0;
    for (Index r3 = 0; r3 < dims[2]; ++r3) {
        for (Index r2 = 0; r2 < dims[1]; ++r2) {
            for (Index r1 = 0; r1 < dims[0]; ++r1) {
                const Index idx[3] = {r1, r2, r3};
                if (idx[j] == c) {
                    continue;
                }
                const Index src = r1 + dims[0] * (r2 + dims[1] * r3);
                core.values()[static_cast<std::size_t>(out)] = s.core(r1, r2, r3);
                tau(out) = s.hyper.core.tau2(src);
                phi(out) = s.hyper.core.phi(src);
                ++out;
            }
        }
    }
    s.core = std::move(core);
    s.hyper.core.tau2 = tau;
    s.hyper.core.phi = phi;

    if (j == 0) {
        s.beta1_fixed = drop_column(s.beta1_fixed, c);
        for (std::size_t i = 0; i < s.beta1_dev.size(); ++i) {
            s.beta1_dev[i] = drop_column(s.beta1_dev[i], c);
            s.hyper.deviation[i].tau2 = drop_column(s.hyper.deviation[i].tau2, c);
            s.hyper.deviation[i].phi = drop_column(s.hyper.deviation[i].phi, c);
        }
    } else if (j == 1) {
        s.beta2 = drop_column(s.beta2, c);
    } else {
        s.beta3 = drop_column(s.beta3, c);
    }
}

}  // namespace

RankReport prune_ranks(PanelState& state, const ColumnNormWindow& window, double threshold) {
    state.validate();
    RankReport report;
    report.before = state.ranks();
    const ColumnNormWindow avg = window.averaged();
    for (std::size_t j = 0; j < 3; ++j) {
        if (avg.fixed[j].size() != report.before[j]) {
            throw DimensionError("norm window does not match the current ranks");
        }
    }
    if (avg.deviation.size() != state.beta1_dev.size()) {
        throw DimensionError("norm window does not match the subject count");
    }
    for (std::size_t j = 0; j < 3; ++j) {
        const Index cols = report.before[j];
        // Column norm used for the cut: the largest over fixed and deviations.
        Vector strength = avg.fixed[j];
        if (j == 0) {
            for (const auto& d : avg.deviation) {
                strength = strength.cwiseMax(d);
            }
        }
        const double cut = threshold * strength.maxCoeff();
        std::vector<Index> drop;
        for (Index c = 0; c < cols; ++c) {
            if (strength(c) < cut || strength(c) == 0.0) {
                drop.push_back(c);
            }
        }
        if (static_cast<Index>(drop.size()) == cols) {
            Index keep = 0;
            strength.maxCoeff(&keep);
            drop.erase(std::find(drop.begin(), drop.end(), keep));
            report.refused_empty = true;
        }
        for (auto it = drop.rbegin(); it != drop.rend(); ++it) {
            remove_column(state, static_cast<int>(j), *it);
        }
        report.dropped[j] = drop;
    }
    report.after = state.ranks();
    return report;
}

// ---------------------------------------------------------------------------
// Draw storage

PosteriorDraw snapshot(const PanelState& s) {
    PosteriorDraw d;
    d.beta1_fixed = s.beta1_fixed;
    d.beta1_dev = s.beta1_dev;
    d.beta2 = s.beta2;
    d.beta3 = s.beta3;
    d.core = s.core;
    d.nu = s.nu;
    d.alpha = s.alpha;
    d.sigma2 = s.hyper.sigma2;
    VarParams p{s.b_fixed(), s.nu, s.hyper.sigma2};
    try {
        d.spectral_radius = is_stable(p).spectral_radius;
    } catch (const std::runtime_error&) {
        d.spectral_radius = std::numeric_limits<double>::quiet_NaN();
    }
    return d;
}

Matrix PosteriorDraws::b_fixed(std::size_t d) const {
    const auto& x = draws.at(d);
    return x.beta1_fixed * tucker_loading_basis(x.core, x.beta2, x.beta3);
}

Matrix PosteriorDraws::b_subject(std::size_t d, std::size_t i) const {
    const auto& x = draws.at(d);
    const Matrix w = x.beta1_dev.empty() ? x.beta1_fixed : Matrix(x.beta1_fixed + x.beta1_dev.at(i));
    return w * tucker_loading_basis(x.core, x.beta2, x.beta3);
}

Vector PosteriorDraws::alpha(std::size_t d, std::size_t i) const {
    const auto& x = draws.at(d);
    return x.alpha.empty() ? Vector(Vector::Zero(k)) : x.alpha.at(i);
}

std::vector<Matrix> PosteriorDraws::b_fixed_samples() const {
    std::vector<Matrix> out;
    out.reserve(draws.size());
    for (std::size_t d = 0; d < draws.size(); ++d) {
        out.push_back(b_fixed(d));
    }
    return out;
}

std::vector<Matrix> PosteriorDraws::b_subject_samples(std::size_t i) const {
    std::vector<Matrix> out;
    out.reserve(draws.size());
    for (std::size_t d = 0; d < draws.size(); ++d) {
        out.push_back(b_subject(d, i));
    }
    return out;
}

Vector PosteriorDraws::beta3_row_norms(std::size_t d) const { return draws.at(d).beta3.rowwise().norm(); }

namespace {

void require_draws(const PosteriorDraws& p) {
    if (p.draws.empty()) {
        throw std::invalid_argument("no posterior draws stored");
    }
}

}  // namespace

Matrix PosteriorDraws::mean_b_fixed() const {
    require_draws(*this);
    Matrix m = Matrix::Zero(k, k * lags);
    for (std::size_t d = 0; d < draws.size(); ++d) {
        m += b_fixed(d);
    }
    return m / static_cast<double>(draws.size());
}

Matrix PosteriorDraws::mean_b_subject(std::size_t i) const {
    require_draws(*this);
    Matrix m = Matrix::Zero(k, k * lags);
    for (std::size_t d = 0; d < draws.size(); ++d) {
        m += b_subject(d, i);
    }
    return m / static_cast<double>(draws.size());
}

Vector PosteriorDraws::mean_nu() const {
    require_draws(*this);
    Vector m = Vector::Zero(k);
    for (const auto& d : draws) {
        m += d.nu;
    }
    return m / static_cast<double>(draws.size());
}

Vector PosteriorDraws::mean_alpha(std::size_t i) const {
    require_draws(*this);
    Vector m = Vector::Zero(k);
    for (std::size_t d = 0; d < draws.size(); ++d) {
        m += alpha(d, i);
    }
    return m / static_cast<double>(draws.size());
}

// ---------------------------------------------------------------------------
// Chain driver

namespace {

ChainState fresh_chain(const PanelData& data, const SamplerConfig& cfg, Rng& rng) {
    ChainState c;
    c.state = initial_state(data, cfg, rng);
    c.draws.k = data.k();
    c.draws.lags = cfg.lags;
    c.draws.subjects = data.subjects();
    c.draws.random_effects = c.state.random_effects();
    c.draws.names = data.names;
    return c;
}

ChainState checked_chain(const PanelData& data, const SamplerConfig& cfg, ChainState chain) {
    cfg.validate(data.k());
    data.validate_for_lags(cfg.lags);
    if (chain.iteration < 0 || chain.iteration > cfg.iterations) {
        throw std::invalid_argument("saved chain iteration is outside the configured run");
    }
    return chain;
}

}  // namespace

FitRunner::FitRunner(const PanelData& data, const SamplerConfig& cfg)
    : cfg_(cfg), rng_(cfg.seed), chain_(fresh_chain(data, cfg, rng_)), sampler_(data, cfg, chain_.state) {}

FitRunner::FitRunner(const PanelData& data, const SamplerConfig& cfg, ChainState chain)
    : cfg_(cfg),
      rng_(cfg.seed),
      chain_(checked_chain(data, cfg, std::move(chain))),
      sampler_(data, cfg, chain_.state) {
    rng_.restore(chain_.rng_state);
}

void FitRunner::step() {
    if (done()) {
        return;
    }
    sampler_.sweep(rng_);
    const int it = ++chain_.iteration;
    chain_.draws.rank_trace.push_back(sampler_.state().ranks());

    if (cfg_.prune_enabled && it > cfg_.burn_in / 2 && it <= cfg_.burn_in) {
        chain_.window.accumulate(sampler_.state());
        if (chain_.window.samples >= cfg_.prune_window) {
            PanelState s = sampler_.state();
            RankReport report = prune_ranks(s, chain_.window, cfg_.prune_threshold);
            chain_.window = ColumnNormWindow{};
            if (report.before != report.after || report.refused_empty) {
                chain_.rank_events.push_back(report);
                sampler_.set_state(std::move(s));
            }
        }
    }
    if (it > cfg_.burn_in && (it - cfg_.burn_in) % cfg_.thin == 0) {
        chain_.draws.draws.push_back(snapshot(sampler_.state()));
    }
}

void FitRunner::run_until(int iteration) {
    while (chain_.iteration < std::min(iteration, cfg_.iterations)) {
        step();
    }
}

ChainState FitRunner::chain() const {
    ChainState c = chain_;
    c.state = sampler_.state();
    c.rng_state = rng_.state();
    return c;
}

PosteriorDraws fit(const PanelData& data, const SamplerConfig& cfg) {
    FitRunner runner(data, cfg);
    runner.run();
    return runner.draws();
}

LagSummary select_lags(const PosteriorDraws& draws, const DecisionConfig& decision) {
    if (draws.draws.empty()) {
        throw std::invalid_argument("lag selection needs at least one draw");
    }
    const auto v = inclusion_probabilities(draws.b_fixed_samples(), draws.lags, decision.delta);
    const auto net = decide_network(v, decision);
    LagSummary out;
    const auto n = draws.size();
    for (Index l = 0; l < draws.lags; ++l) {
        std::size_t edges = 0;
        for (Index t = 0; t < draws.k; ++t) {
            for (Index s = 0; s < draws.k; ++s) {
                edges += net.edges(l, t, s) ? 1 : 0;
            }
        }
        std::vector<double> norms(n);
        for (std::size_t d = 0; d < n; ++d) {
            norms[d] = draws.draws[d].beta3.row(l).norm();
        }
        double mean = 0.0;
        for (double x : norms) {
            mean += x;
        }
        mean /= static_cast<double>(n);
        std::sort(norms.begin(), norms.end());
        const double median = n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
        out.active.push_back(edges > 0);
        out.mean_row_norm.push_back(mean);
        out.median_row_norm.push_back(median);
        out.edges.push_back(edges);
    }
    return out;
}

}  // namespace btdvar
