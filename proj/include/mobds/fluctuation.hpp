#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mobds/errors.hpp"
#include "mobds/glm.hpp"

namespace mobds {

struct TrimWindow {
    double lo = 0.1;
    double hi = 0.9;
};

// Empirical fluctuation process: scaled cumulative score sums in ascending
// z order. Row r holds W((r+1)/n). `boundaries` lists cumulative row counts
// at the ends of tie groups; the process is only evaluated there.
struct FluctuationProcess {
    Eigen::MatrixXd process;  // n x d
    std::vector<std::size_t> boundaries;
    std::size_t n = 0;
    int d = 0;
};

inline FluctuationProcess efp(const FittedHazardModel& model, const std::vector<double>& z_rows,
                              CovEstimator est = CovEstimator::sandwich) {
    const std::size_t n = model.n_rows;
    if (z_rows.size() != n) throw DataError("z values do not match augmented row count");
    const int d = model.spec.dim();
    Eigen::MatrixXd scaler = score_scaler(model, est);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return z_rows[a] < z_rows[b]; });

    FluctuationProcess out;
    out.n = n;
    out.d = d;
    out.process.resize(n, d);
    const double root_n = std::sqrt(static_cast<double>(n));
    Eigen::VectorXd cum = Eigen::VectorXd::Zero(d);
    for (std::size_t r = 0; r < n; ++r) {
        cum += model.scores.row(order[r]).transpose();
        out.process.row(r) = (scaler * cum).transpose() / root_n;
        if (r + 1 == n || z_rows[order[r + 1]] != z_rows[order[r]])
            out.boundaries.push_back(r + 1);
    }
    return out;
}

inline double suplm(const FluctuationProcess& proc, TrimWindow trim = {}) {
    if (!(0.0 < trim.lo && trim.lo < trim.hi && trim.hi < 1.0))
        throw ConfigError("invalid trimming window");
    bool found = false;
    double best = 0.0;
    const double n = static_cast<double>(proc.n);
    for (std::size_t b : proc.boundaries) {
        const double m = static_cast<double>(b) / n;
        if (m < trim.lo || m > trim.hi) continue;
        const double v = proc.process.row(b - 1).squaredNorm() / (m * (1.0 - m));
        if (!found || v > best) best = v;
        found = true;
    }
    if (!found) throw DataError("no evaluation points in trimming window");
    return best;
}

struct CatStatResult {
    double statistic = 0.0;
    int df = 0;
    int n_categories = 0;
};

// Weighted squared L2 norms of per-category scaled score sums; chi-squared
// with d*(C-1) degrees of freedom under the null. Empty categories drop out.
inline CatStatResult cat_stat(const FittedHazardModel& model, const std::vector<int>& cat_rows,
                              CovEstimator est = CovEstimator::sandwich) {
    const std::size_t n = model.n_rows;
    if (cat_rows.size() != n) throw DataError("category labels do not match augmented row count");
    const int d = model.spec.dim();
    int n_codes = 0;
    for (int c : cat_rows) {
        if (c < 0) throw DataError("negative category code");
        n_codes = std::max(n_codes, c + 1);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_codes, d);
    std::vector<long> counts(n_codes, 0);
    for (std::size_t r = 0; r < n; ++r) {
        sums.row(cat_rows[r]) += model.scores.row(r);
        ++counts[cat_rows[r]];
    }
    Eigen::MatrixXd scaler = score_scaler(model, est);
    CatStatResult out;
    const double nn = static_cast<double>(n);
    for (int c = 0; c < n_codes; ++c) {
        if (counts[c] == 0) continue;
        ++out.n_categories;
        Eigen::VectorXd delta = scaler * sums.row(c).transpose() / std::sqrt(nn);
        out.statistic += (nn / static_cast<double>(counts[c])) * delta.squaredNorm();
    }
    if (out.n_categories < 2) throw DataError("fewer than 2 non-empty categories");
    out.df = d * (out.n_categories - 1);
    return out;
}

inline double chisq_pvalue(double statistic, int df) {
    if (!(statistic >= 0.0)) throw NumericError("negative test statistic");
    if (df < 1) throw ConfigError("chi-squared df must be >= 1");
    boost::math::chi_squared dist(static_cast<double>(df));
    return boost::math::cdf(boost::math::complement(dist, statistic));
}

}  // namespace mobds
