#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mobds/data.hpp"
#include "mobds/glm.hpp"
#include "mobds/link.hpp"
#include "mobds/rng.hpp"

using namespace mobds;
using Catch::Matchers::WithinAbs;

namespace {

Dataset random_survival(Rng& rng, long n, int k, int p, double coef_scale = 0.5) {
    Dataset ds;
    ds.k_max = k;
    for (int j = 1; j <= p; ++j) ds.x_names.push_back("x" + std::to_string(j));
    for (long i = 0; i < n; ++i) {
        SubjectRecord s;
        s.id = i + 1;
        for (int j = 0; j < p; ++j) s.x.push_back(rng.normal());
        double shift = 0.0;
        for (int j = 0; j < p; ++j) shift += coef_scale * s.x[j];
        s.obs_time = k;
        s.status = 0;
        for (int t = 1; t <= k - 1; ++t) {
            double h = 1.0 / (1.0 + std::exp(-(-1.0 + 0.2 * t + shift)));
            if (rng.uniform() < h) {
                s.obs_time = t;
                s.status = 1;
                break;
            }
        }
        if (s.obs_time == k && rng.uniform() < 0.3) {  // some administrative censoring earlier
            s.obs_time = 1 + static_cast<int>(rng.bounded(k - 1));
            s.status = 0;
        }
        ds.subjects.push_back(s);
    }
    return validate(ds);
}

// Well-specified variant: censor time drawn independently before the trials
// and administrative end at k-1, so no subject reaches the open-ended horizon
// interval. Under this DGP the fitted model is exactly correct, which the
// opg-vs-sandwich comparison requires (information matrix equality).
Dataset clean_survival(Rng& rng, long n, int k, int p, double coef_scale = 0.5) {
    Dataset ds;
    ds.k_max = k;
    for (int j = 1; j <= p; ++j) ds.x_names.push_back("x" + std::to_string(j));
    for (long i = 0; i < n; ++i) {
        SubjectRecord s;
        s.id = i + 1;
        for (int j = 0; j < p; ++j) s.x.push_back(rng.normal());
        double shift = 0.0;
        for (int j = 0; j < p; ++j) shift += coef_scale * s.x[j];
        int cens = k - 1;
        if (rng.uniform() < 0.3) cens = 1 + static_cast<int>(rng.bounded(k - 1));
        s.obs_time = cens;
        s.status = 0;
        for (int t = 1; t <= cens; ++t) {
            double h = 1.0 / (1.0 + std::exp(-(-1.0 + 0.2 * t + shift)));
            if (rng.uniform() < h) {
                s.obs_time = t;
                s.status = 1;
                break;
            }
        }
        ds.subjects.push_back(s);
    }
    return validate(ds);
}

struct FitBundle {
    Dataset ds;
    AugmentedDataset aug;
    ModelSpec spec;
    FittedHazardModel model;
};

FitBundle fit_random(Rng& rng, long n, int k, int p, Link link) {
    FitBundle b;
    b.ds = random_survival(rng, n, k, p);
    b.aug = augment(b.ds);
    b.spec = make_spec(b.aug, b.ds, link);
    b.model = fit(b.aug, b.ds, b.spec);
    return b;
}

}  // namespace

TEST_CASE("link functions invert, order and differentiate") {
    for (Link link : {Link::logit, Link::gompertz}) {
        for (double lam : {1e-8, 1e-4, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-8}) {
            double eta = link_g(link, lam);
            REQUIRE_THAT(link_h(link, eta), WithinAbs(lam, 1e-12));
        }
        // Stay below the gompertz clamp point (~3.14) where h saturates.
        double prev = link_h(link, -8.0);
        for (double eta = -7.75; eta <= 3.0; eta += 0.25) {
            double cur = link_h(link, eta);
            REQUIRE(cur > prev);
            prev = cur;
        }
        for (double eta : {-3.0, -1.0, 0.0, 0.5, 1.0}) {
            double hp = link_hprime(link, eta);
            REQUIRE(hp > 0.0);
            double fd = (link_h(link, eta + 1e-6) - link_h(link, eta - 1e-6)) / 2e-6;
            REQUIRE_THAT(hp, WithinAbs(fd, 1e-6 + 1e-6 * std::abs(fd)));
        }
    }
    REQUIRE_THAT(link_h(Link::logit, 0.0), WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(link_h(Link::gompertz, 0.0), WithinAbs(1.0 - std::exp(-1.0), 1e-15));
    REQUIRE(parse_link("logit") == Link::logit);
    REQUIRE(parse_link("gompertz") == Link::gompertz);
    REQUIRE_THROWS_AS(parse_link("probit"), ConfigError);
}

TEST_CASE("intercept-only fit equals life-table hazards") {
    SECTION("hand example: 4 of 10 events at t=1") {
        Dataset ds;
        ds.k_max = 3;
        long id = 0;
        for (int i = 0; i < 4; ++i) {
            SubjectRecord s;
            s.id = ++id;
            s.obs_time = 1;
            s.status = 1;
            ds.subjects.push_back(s);
        }
        for (int i = 0; i < 2; ++i) {
            SubjectRecord s;
            s.id = ++id;
            s.obs_time = 2;
            s.status = 1;
            ds.subjects.push_back(s);
        }
        for (int i = 0; i < 4; ++i) {
            SubjectRecord s;
            s.id = ++id;
            s.obs_time = 3;
            s.status = 0;
            ds.subjects.push_back(s);
        }
        ds = validate(ds);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, Link::logit);
        FittedHazardModel m = fit(aug, ds, spec);
        REQUIRE_THAT(m.theta[0], WithinAbs(std::log(0.4 / 0.6), 1e-6));  // logit(0.4)
        REQUIRE_THAT(m.theta[1], WithinAbs(std::log((1.0 / 3.0) / (2.0 / 3.0)), 1e-6));
    }
    SECTION("random datasets, both links, hazard scale 1e-8") {
        Rng rng(301);
        for (int rep = 0; rep < 50; ++rep) {
            Dataset ds = random_survival(rng, 10 + static_cast<long>(rng.bounded(40)),
                                         3 + static_cast<int>(rng.bounded(5)), 0);
            AugmentedDataset aug = augment(ds);
            LifeTable lt = life_table(ds);
            for (Link link : {Link::logit, Link::gompertz}) {
                ModelSpec spec = make_spec(aug, ds, link);
                FittedHazardModel m = fit(aug, ds, spec);
                for (int t = 0; t < spec.n_time; ++t) {
                    double fitted = link_h(link, m.theta[t]);
                    REQUIRE_THAT(fitted, WithinAbs(lt.hazard[t], 1e-8));
                }
            }
        }
    }
}

TEST_CASE("analytic scores match central finite differences") {
    Rng rng(302);
    const double step = 1e-6;
    for (Link link : {Link::logit, Link::gompertz}) {
        for (int dsrep = 0; dsrep < 5; ++dsrep) {
            Dataset ds = random_survival(rng, 25, 4, dsrep % 3);
            AugmentedDataset aug = augment(ds);
            ModelSpec spec = make_spec(aug, ds, link);
            // Shrink theta until every row eta sits strictly inside the clamp
            // bounds; the log-likelihood is flat in the clamped region, which
            // would invalidate the finite-difference oracle.
            const double lo = detail::eta_lo(link) + 0.01;
            const double hi = detail::eta_hi(link) - 0.01;
            auto interior = [&](const Eigen::VectorXd& th) {
                for (std::size_t r = 0; r < aug.n; ++r) {
                    const int t = aug.t_star[r];
                    double eta = t <= spec.n_time ? th[t - 1] : 0.0;
                    const auto& x = ds.subjects[aug.subject_idx[r]].x;
                    for (int j = 0; j < spec.n_x; ++j) eta += th[spec.n_time + j] * x[j];
                    if (!(eta > lo && eta < hi)) return false;
                }
                return true;
            };
            for (int trial = 0; trial < 20; ++trial) {
                Eigen::VectorXd theta(spec.dim());
                for (int j = 0; j < spec.dim(); ++j) theta[j] = 0.5 * rng.normal();
                while (!interior(theta)) theta *= 0.5;
                Eigen::MatrixXd sc = score_rows(aug, ds, theta, spec);
                Eigen::VectorXd grad = sc.colwise().sum();
                for (int j = 0; j < spec.dim(); ++j) {
                    Eigen::VectorXd tp = theta, tm = theta;
                    tp[j] += step;
                    tm[j] -= step;
                    double fd = (loglik(aug, ds, tp, spec) - loglik(aug, ds, tm, spec)) / (2 * step);
                    double rel = std::abs(grad[j] - fd) / std::max(1.0, std::abs(fd));
                    REQUIRE(rel < 1e-5);
                }
            }
        }
    }
}

TEST_CASE("logit score rows reduce to (y - mu) times the design row") {
    Rng rng(303);
    Dataset ds = random_survival(rng, 30, 4, 2);
    AugmentedDataset aug = augment(ds);
    ModelSpec spec = make_spec(aug, ds, Link::logit);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(spec.dim());
    theta[0] = -0.3;
    Eigen::MatrixXd sc = score_rows(aug, ds, theta, spec);
    for (std::size_t r = 0; r < aug.n; ++r) {
        int t = aug.t_star[r];
        const auto& s = ds.subjects[aug.subject_idx[r]];
        double eta = 0.0;
        if (t <= spec.n_time) eta += theta[t - 1];
        for (int j = 0; j < spec.n_x; ++j) eta += theta[spec.n_time + j] * s.x[j];
        double mu = 1.0 / (1.0 + std::exp(-eta));
        double resid = aug.y[r] - mu;
        if (t <= spec.n_time)
            REQUIRE_THAT(sc(r, t - 1), WithinAbs(resid, 1e-12));
        for (int j = 0; j < spec.n_x; ++j)
            REQUIRE_THAT(sc(r, spec.n_time + j), WithinAbs(resid * s.x[j], 1e-12));
    }
}

TEST_CASE("fit converges with vanishing gradient and monotone trace") {
    Rng rng(304);
    for (Link link : {Link::logit, Link::gompertz}) {
        FitBundle b = fit_random(rng, 200, 5, 2, link);
        REQUIRE(b.model.converged);
        Eigen::VectorXd grad = b.model.scores.colwise().sum();
        REQUIRE(grad.cwiseAbs().maxCoeff() < 1e-6 * static_cast<double>(b.model.n_rows));
        for (std::size_t i = 0; i + 1 < b.model.loglik_trace.size(); ++i) {
            double slack = 1e-12 * (1.0 + std::abs(b.model.loglik_trace[i]));
            REQUIRE(b.model.loglik_trace[i + 1] >= b.model.loglik_trace[i] - slack);
        }
        for (int i = 0; i < b.model.mu.size(); ++i) {
            REQUIRE(b.model.mu[i] > 0.0);
            REQUIRE(b.model.mu[i] < 1.0);
        }
        // idempotence: warm start from the optimum converges immediately
        Eigen::VectorXd at = b.model.theta;
        FittedHazardModel again = fit(b.aug, b.ds, b.spec, &at);
        REQUIRE(again.iterations <= 2);
        REQUIRE((again.theta - b.model.theta).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("degenerate model dimension is rejected") {
    Dataset ds;
    for (long i = 1; i <= 5; ++i) {
        SubjectRecord s;
        s.id = i;
        s.obs_time = 1;
        s.status = 0;
        ds.subjects.push_back(s);
    }
    ds = validate(ds);  // k_max inferred 1 -> no time dummies, no x
    AugmentedDataset aug = augment(ds);
    REQUIRE_THROWS_AS(make_spec(aug, ds, Link::logit), DataError);
}

TEST_CASE("separation and rank deficiency raise distinct errors") {
    SECTION("separation via a perfectly separating covariate") {
        Dataset ds;
        ds.k_max = 2;
        ds.x_names = {"x1"};
        for (long i = 0; i < 40; ++i) {
            SubjectRecord s;
            s.id = i + 1;
            s.obs_time = 1;
            s.status = i < 20 ? 1 : 0;
            s.x = {i < 20 ? 0.01 : -0.01};  // small scale so |beta| must blow up
            ds.subjects.push_back(s);
        }
        ds = validate(ds);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, Link::logit);
        REQUIRE_THROWS_AS(fit(aug, ds, spec), SeparationError);
    }
    SECTION("duplicated column is rank deficient") {
        Rng rng(305);
        Dataset ds = random_survival(rng, 60, 4, 1);
        ds.x_names.push_back("x1_copy");
        for (auto& s : ds.subjects) s.x.push_back(s.x[0]);
        ds = validate(ds);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, Link::logit);
        REQUIRE_THROWS_WITH(fit(aug, ds, spec),
                            Catch::Matchers::ContainsSubstring("rank deficient"));
    }
}

TEST_CASE("saturated time loglik matches the fitted intercept-only model") {
    Rng rng(306);
    for (int rep = 0; rep < 20; ++rep) {
        Dataset ds = random_survival(rng, 15 + static_cast<long>(rng.bounded(60)),
                                     3 + static_cast<int>(rng.bounded(4)), 0);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, Link::logit);
        FittedHazardModel m = fit(aug, ds, spec);
        double closed = saturated_time_loglik(time_counts(ds));
        REQUIRE_THAT(closed, WithinAbs(m.loglik, 1e-6 * (1.0 + std::abs(m.loglik))));
    }
}

TEST_CASE("covariance estimators are symmetric psd and consistent") {
    Rng rng(307);
    FitBundle b = fit_random(rng, 400, 5, 2, Link::logit);

    SECTION("meat is the opg of the stored scores") {
        Eigen::MatrixXd opg =
            b.model.scores.transpose() * b.model.scores / static_cast<double>(b.model.n_rows);
        REQUIRE((opg - b.model.meat).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("symmetry and eigenvalue floor") {
        for (CovEstimator est : {CovEstimator::opg, CovEstimator::sandwich}) {
            Eigen::MatrixXd j = covariance(b.model, est);
            REQUIRE((j - j.transpose()).cwiseAbs().maxCoeff() < 1e-12);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j);
            REQUIRE(eig.eigenvalues().minCoeff() >= -1e-10);
        }
    }
    SECTION("scaler squares to the inverse covariance") {
        for (CovEstimator est : {CovEstimator::opg, CovEstimator::sandwich}) {
            Eigen::MatrixXd s = score_scaler(b.model, est);
            Eigen::MatrixXd j = covariance(b.model, est);
            Eigen::MatrixXd ident = s * j * s;
            REQUIRE((ident - Eigen::MatrixXd::Identity(ident.rows(), ident.cols()))
                        .cwiseAbs()
                        .maxCoeff() < 1e-6);
        }
    }
    SECTION("opg and sandwich agree on a large well-specified null fit") {
        Rng big(308);
        Dataset ds = clean_survival(big, 100000, 4, 1);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, Link::logit);
        FittedHazardModel m = fit(aug, ds, spec);
        Eigen::MatrixXd a = covariance(m, CovEstimator::opg);
        Eigen::MatrixXd bb = covariance(m, CovEstimator::sandwich);
        double floor = 0.01 * a.diagonal().maxCoeff();
        for (int r = 0; r < a.rows(); ++r)
            for (int c = 0; c < a.cols(); ++c) {
                double scale = std::max(std::abs(a(r, c)), std::abs(bb(r, c)));
                if (scale > floor)
                    REQUIRE(std::abs(a(r, c) - bb(r, c)) <= 0.10 * scale);
                else
                    REQUIRE(std::abs(a(r, c) - bb(r, c)) <= floor);
            }
    }
}

TEST_CASE("zero and two-point score matrices give the expected opg") {
    // J_opg = n^-1 sum psi psi^T: zero scores -> zero matrix, single column
    // (c, -c) -> c^2. Checked through the same formula the fit uses.
    FittedHazardModel m;
    m.n_rows = 2;
    m.scores = Eigen::MatrixXd::Zero(2, 1);
    m.meat = m.scores.transpose() * m.scores / 2.0;
    REQUIRE(covariance(m, CovEstimator::opg)(0, 0) == 0.0);
    double c = 0.7;
    m.scores(0, 0) = c;
    m.scores(1, 0) = -c;
    m.meat = m.scores.transpose() * m.scores / 2.0;
    REQUIRE_THAT(covariance(m, CovEstimator::opg)(0, 0), WithinAbs(c * c, 1e-15));
}
