#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/link.hpp"

namespace mobds {

// Design: one dummy column per time point 1..n_time (no global intercept),
// then the x covariates. Rows with t_star > n_time carry an all-zero dummy
// block; they arise only at t = k_max.
struct ModelSpec {
    Link link = Link::logit;
    int n_time = 0;
    int n_x = 0;
    int dim() const { return n_time + n_x; }
};

inline ModelSpec make_spec(const AugmentedDataset& aug, const Dataset& ds, Link link) {
    int max_t = 0;
    for (auto t : aug.t_star) max_t = std::max(max_t, static_cast<int>(t));
    ModelSpec spec;
    spec.link = link;
    spec.n_time = std::min(max_t, aug.k_max - 1);
    spec.n_x = ds.n_x();
    if (spec.dim() == 0) throw DataError("model has no parameters");
    return spec;
}

struct FittedHazardModel {
    ModelSpec spec;
    Eigen::VectorXd theta;
    double loglik = 0.0;
    std::vector<double> loglik_trace;
    Eigen::VectorXd mu;      // per-row fitted hazard
    Eigen::MatrixXd scores;  // n x d
    Eigen::MatrixXd bread;   // observed information / n
    Eigen::MatrixXd meat;    // OPG / n
    bool converged = false;
    int iterations = 0;
    std::size_t n_rows = 0;
};

namespace detail {

struct IrlsPass {
    double loglik = 0.0;
    Eigen::VectorXd grad;  // score column sums
    Eigen::MatrixXd info;  // sum of w * x x^T (negative Hessian)
};

// One sweep over the augmented rows. The dummy block has a single nonzero per
// row, so the info accumulation is O(p^2) per row rather than O(d^2).
template <bool WithInfo>
inline IrlsPass irls_pass(const AugmentedDataset& aug, const Dataset& ds, const ModelSpec& spec,
                          const Eigen::VectorXd& theta) {
    const int nt = spec.n_time;
    const int p = spec.n_x;
    const int d = spec.dim();
    IrlsPass pass;
    pass.grad = Eigen::VectorXd::Zero(d);
    if (WithInfo) pass.info = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t r = 0; r < aug.n; ++r) {
        const int t = aug.t_star[r];
        const int di = t <= nt ? t - 1 : -1;
        const double* xp = p > 0 ? ds.subjects[aug.subject_idx[r]].x.data() : nullptr;
        double eta = di >= 0 ? theta[di] : 0.0;
        for (int j = 0; j < p; ++j) eta += theta[nt + j] * xp[j];
        const int y = aug.y[r];
        pass.loglik += link_loglik_term(spec.link, y, eta);
        const double sf = link_score_factor(spec.link, y, eta);
        if (di >= 0) pass.grad[di] += sf;
        for (int j = 0; j < p; ++j) pass.grad[nt + j] += sf * xp[j];
        if (WithInfo) {
            const double w = link_weight(spec.link, y, eta);
            if (di >= 0) {
                pass.info(di, di) += w;
                for (int j = 0; j < p; ++j) pass.info(di, nt + j) += w * xp[j];
            }
            for (int j = 0; j < p; ++j)
                for (int l = j; l < p; ++l) pass.info(nt + j, nt + l) += w * xp[j] * xp[l];
        }
    }
    if (WithInfo) {
        pass.info = pass.info.selfadjointView<Eigen::Upper>();
    }
    return pass;
}

inline double loglik_only(const AugmentedDataset& aug, const Dataset& ds, const ModelSpec& spec,
                          const Eigen::VectorXd& theta) {
    const int nt = spec.n_time;
    const int p = spec.n_x;
    double ll = 0.0;
    for (std::size_t r = 0; r < aug.n; ++r) {
        const int t = aug.t_star[r];
        const double* xp = p > 0 ? ds.subjects[aug.subject_idx[r]].x.data() : nullptr;
        double eta = t <= nt ? theta[t - 1] : 0.0;
        for (int j = 0; j < p; ++j) eta += theta[nt + j] * xp[j];
        ll += link_loglik_term(spec.link, aug.y[r], eta);
    }
    return ll;
}

}  // namespace detail

inline double loglik(const AugmentedDataset& aug, const Dataset& ds, const Eigen::VectorXd& theta,
                     const ModelSpec& spec) {
    return detail::loglik_only(aug, ds, spec, theta);
}

inline Eigen::MatrixXd score_rows(const AugmentedDataset& aug, const Dataset& ds,
                                  const Eigen::VectorXd& theta, const ModelSpec& spec) {
    const int nt = spec.n_time;
    const int p = spec.n_x;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(aug.n, spec.dim());
    for (std::size_t r = 0; r < aug.n; ++r) {
        const int t = aug.t_star[r];
        const double* xp = p > 0 ? ds.subjects[aug.subject_idx[r]].x.data() : nullptr;
        double eta = t <= nt ? theta[t - 1] : 0.0;
        for (int j = 0; j < p; ++j) eta += theta[nt + j] * xp[j];
        const double sf = link_score_factor(spec.link, aug.y[r], eta);
        if (t <= nt) s(r, t - 1) = sf;
        for (int j = 0; j < p; ++j) s(r, nt + j) = sf * xp[j];
    }
    return s;
}

inline constexpr int kIrlsMaxIter = 50;
inline constexpr double kIrlsLlTol = 1e-10;
inline constexpr double kIrlsGradTol = 1e-8;
inline constexpr double kThetaCap = 30.0;

// Newton scoring (observed information) with step-halving.
inline FittedHazardModel fit(const AugmentedDataset& aug, const Dataset& ds, const ModelSpec& spec,
                             const Eigen::VectorXd* warm_start = nullptr) {
    if (aug.n == 0) throw DataError("empty augmented dataset");
    const int d = spec.dim();
    Eigen::VectorXd theta = warm_start ? *warm_start : Eigen::VectorXd::Zero(d);
    if (warm_start && warm_start->size() != d) throw ConfigError("warm start dimension mismatch");

    FittedHazardModel out;
    out.spec = spec;
    out.n_rows = aug.n;

    double ll_prev = 0.0;
    bool have_prev = false;
    bool converged = false;
    int steps = 0;
    for (int iter = 0; iter < kIrlsMaxIter; ++iter) {
        auto pass = detail::irls_pass<true>(aug, ds, spec, theta);
        out.loglik_trace.push_back(pass.loglik);
        const double grad_max = pass.grad.cwiseAbs().maxCoeff();
        const bool grad_ok = grad_max / static_cast<double>(aug.n) < kIrlsGradTol;
        const bool ll_ok =
            have_prev && std::abs(pass.loglik - ll_prev) <= kIrlsLlTol * (std::abs(pass.loglik) + 1e-300);
        if (grad_ok && ll_ok) {
            converged = true;
            break;
        }
        ll_prev = pass.loglik;
        have_prev = true;

        Eigen::LDLT<Eigen::MatrixXd> ldlt(pass.info);
        Eigen::VectorXd dvec = ldlt.vectorD();
        double dmax = dvec.cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || dvec.minCoeff() <= 1e-12 * dmax)
            throw NumericError("design matrix rank deficient");
        Eigen::VectorXd delta = ldlt.solve(pass.grad);

        double step = 1.0;
        for (int h = 0; h < 30; ++h) {
            double ll_new = detail::loglik_only(aug, ds, spec, theta + step * delta);
            if (ll_new >= pass.loglik - 1e-12 * (std::abs(pass.loglik) + 1.0)) break;
            step *= 0.5;
        }
        theta += step * delta;
        ++steps;
        if (theta.cwiseAbs().maxCoeff() > kThetaCap)
            throw SeparationError("coefficient " + std::to_string(theta.cwiseAbs().maxCoeff()) +
                                  " exceeds cap " + std::to_string(kThetaCap) +
                                  " (complete separation)");
    }
    if (!converged)
        throw NumericError("no convergence after " + std::to_string(kIrlsMaxIter) + " iterations");

    out.theta = theta;
    out.iterations = steps;
    out.converged = true;

    // Final quantities at theta-hat.
    const int nt = spec.n_time;
    const int p = spec.n_x;
    out.mu.resize(aug.n);
    out.scores = Eigen::MatrixXd::Zero(aug.n, d);
    out.bread = Eigen::MatrixXd::Zero(d, d);
    double ll = 0.0;
    for (std::size_t r = 0; r < aug.n; ++r) {
        const int t = aug.t_star[r];
        const int di = t <= nt ? t - 1 : -1;
        const double* xp = p > 0 ? ds.subjects[aug.subject_idx[r]].x.data() : nullptr;
        double eta = di >= 0 ? theta[di] : 0.0;
        for (int j = 0; j < p; ++j) eta += theta[nt + j] * xp[j];
        const int y = aug.y[r];
        out.mu[r] = link_h(spec.link, eta);
        ll += link_loglik_term(spec.link, y, eta);
        const double sf = link_score_factor(spec.link, y, eta);
        const double w = link_weight(spec.link, y, eta);
        if (di >= 0) {
            out.scores(r, di) = sf;
            out.bread(di, di) += w;
            for (int j = 0; j < p; ++j) out.bread(di, nt + j) += w * xp[j];
        }
        for (int j = 0; j < p; ++j) {
            out.scores(r, nt + j) = sf * xp[j];
            for (int l = j; l < p; ++l) out.bread(nt + j, nt + l) += w * xp[j] * xp[l];
        }
    }
    out.loglik = ll;
    out.bread = out.bread.selfadjointView<Eigen::Upper>();
    out.bread /= static_cast<double>(aug.n);
    out.meat = out.scores.transpose() * out.scores / static_cast<double>(aug.n);
    out.meat = 0.5 * (out.meat + out.meat.transpose()).eval();
    return out;
}

// Maximized log-likelihood of the intercept-only model, directly from the
// per-time counts (hazard d_t/n_t; 0*log 0 = 0). The cell terms are link-free
// by MLE invariance; rows at the open horizon interval have an all-zero
// design, so each contributes the fixed term log(1 - h(0)) of the link.
inline double saturated_time_loglik(const TimeCounts& tc, Link link = Link::logit) {
    double ll = 0.0;
    for (std::size_t t = 0; t < tc.at_risk.size(); ++t) {
        const double n = static_cast<double>(tc.at_risk[t]);
        const double dd = static_cast<double>(tc.events[t]);
        if (n == 0.0) continue;
        const double h = dd / n;
        if (dd > 0.0) ll += dd * std::log(h);
        if (n - dd > 0.0) ll += (n - dd) * std::log1p(-h);
    }
    ll += static_cast<double>(tc.at_horizon) * std::log1p(-link_h(link, 0.0));
    return ll;
}

enum class CovEstimator { opg, sandwich };

inline std::string cov_name(CovEstimator c) { return c == CovEstimator::opg ? "opg" : "sandwich"; }

inline CovEstimator parse_cov(const std::string& s) {
    if (s == "opg") return CovEstimator::opg;
    if (s == "sandwich") return CovEstimator::sandwich;
    throw ConfigError("unknown covariance estimator '" + s + "'");
}

inline constexpr double kEigFloor = 1e-12;

namespace detail {
// V f(lambda) V^T for a symmetric input; eigenvalues pass through f after
// being floored at `floor_`.
template <class F>
inline Eigen::MatrixXd sym_apply(const Eigen::MatrixXd& m, double floor_, F f) {
    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    if (!sym.allFinite()) throw SingularCovarianceError("covariance matrix is not finite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw SingularCovarianceError("eigendecomposition failed");
    Eigen::VectorXd vals = es.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) vals[i] = f(std::max(vals[i], floor_));
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

inline Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& m, double floor_ = kEigFloor) {
    return detail::sym_apply(m, floor_, [](double v) { return 1.0 / std::sqrt(v); });
}

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    return detail::sym_apply(m, 0.0, [](double v) { return std::sqrt(v); });
}

inline Eigen::MatrixXd sym_inv(const Eigen::MatrixXd& m, double floor_ = kEigFloor) {
    return detail::sym_apply(m, floor_, [](double v) { return 1.0 / v; });
}

// The matrix S with W(m) = S n^{-1/2} (cumulative score sum): S = J-hat^{-1/2}.
// opg: M^{-1/2}. sandwich: (B^{-1} M B^{-1})^{1/2}, i.e. J-hat = B M^-1 B with
// only the bread inverted, which keeps sparse-event fits usable.
inline Eigen::MatrixXd score_scaler(const FittedHazardModel& model, CovEstimator est) {
    if (est == CovEstimator::opg) return sym_inv_sqrt(model.meat);
    if (!model.bread.allFinite() || model.bread.diagonal().maxCoeff() <= kEigFloor)
        throw SingularCovarianceError("singular bread matrix");
    Eigen::MatrixXd binv = sym_inv(model.bread);
    Eigen::MatrixXd g = binv * model.meat * binv;
    return sym_sqrt(g);
}

// J-hat as a d x d matrix (reporting; the test pipeline uses score_scaler).
inline Eigen::MatrixXd covariance(const FittedHazardModel& model, CovEstimator est) {
    if (est == CovEstimator::opg) return model.meat;
    if (!model.bread.allFinite() || model.bread.diagonal().maxCoeff() <= kEigFloor)
        throw SingularCovarianceError("singular bread matrix");
    Eigen::MatrixXd binv = sym_inv(model.bread);
    Eigen::MatrixXd g = binv * model.meat * binv;
    return sym_inv(g);
}

}  // namespace mobds
