#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "mobds/csv.hpp"
#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/glm.hpp"
#include "mobds/instability.hpp"
#include "mobds/link.hpp"
#include "mobds/parallel.hpp"
#include "mobds/rng.hpp"
#include "mobds/tree.hpp"

namespace mobds {

// ---------------------------------------------------------------------------
// baseline hazard schedules

enum class Shape { A, B, C };

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::A: return "A";
        case Shape::B: return "B";
        default: return "C";
    }
}

inline Shape parse_shape(const std::string& s) {
    if (s == "A" || s == "a") return Shape::A;
    if (s == "B" || s == "b") return Shape::B;
    if (s == "C" || s == "c") return Shape::C;
    throw ConfigError("unknown shape '" + s + "'");
}

struct BaselineSchedule {
    int k_max = 0;
    std::vector<double> survival;  // S(1..K-1)
    std::vector<double> hazard;    // h(1..K-1)
    std::vector<double> gamma0;    // logit of hazard
};

namespace detail {

// Fraction of total geometric mass 1, r, r^2, ... (K-1 terms) held by the
// first m terms. Strictly decreasing in r on (0, 1).
inline double geometric_front_mass(double r, int m, int total) {
    double front = 0.0, all = 0.0, w = 1.0;
    for (int t = 0; t < total; ++t) {
        if (t < m) front += w;
        all += w;
        w *= r;
    }
    return front / all;
}

inline double solve_geometric_ratio(int m, int total, double target) {
    double lo = 1e-12, hi = 1.0 - 1e-12;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (geometric_front_mass(mid, m, total) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

// Build the K-1 baseline intercepts for the three event-time shapes:
// A = linear survival decline, B = front-loaded geometric decline (half of the
// event mass in the first ceil((K-1)/3) points when attainable), C = sigmoid
// decline centered mid-horizon. All satisfy S(K-1) = 1 - event_rate.
inline BaselineSchedule shape_to_gamma(int k, double event_rate, Shape shape) {
    if (k < 2) throw ConfigError("k must be at least 2");
    if (!(event_rate > 0.0 && event_rate < 1.0))
        throw ConfigError("event rate must be in (0,1)");
    const int m = k - 1;
    std::vector<double> cum(m);  // fraction of total event mass by time t
    switch (shape) {
        case Shape::A:
            for (int t = 1; t <= m; ++t) cum[t - 1] = static_cast<double>(t) / m;
            break;
        case Shape::B: {
            int front = (m + 2) / 3;  // ceil(m / 3)
            double target = 0.5;
            double floor_frac = static_cast<double>(front) / m;  // limit as r -> 1
            if (target <= floor_frac) target = 0.5 * (floor_frac + 1.0);
            double r = detail::solve_geometric_ratio(front, m, target);
            double total = 0.0, w = 1.0;
            for (int t = 0; t < m; ++t) { total += w; w *= r; }
            double acc = 0.0;
            w = 1.0;
            for (int t = 0; t < m; ++t) {
                acc += w;
                cum[t] = acc / total;
                w *= r;
            }
            break;
        }
        case Shape::C: {
            double c = 0.5 * m, s = m / 8.0;
            auto f = [&](double u) { return 1.0 / (1.0 + std::exp(-(u - c) / s)); };
            double f0 = f(0.0), fm = f(m);
            for (int t = 1; t <= m; ++t) cum[t - 1] = (f(t) - f0) / (fm - f0);
            break;
        }
    }
    BaselineSchedule sched;
    sched.k_max = k;
    sched.survival.resize(m);
    sched.hazard.resize(m);
    sched.gamma0.resize(m);
    double prev = 1.0;
    for (int t = 0; t < m; ++t) {
        sched.survival[t] = 1.0 - event_rate * cum[t];
        double h = (prev - sched.survival[t]) / prev;
        if (!(h > 0.0 && h < 1.0)) throw ConfigError("implied hazard outside (0,1)");
        sched.hazard[t] = h;
        sched.gamma0[t] = std::log(h / (1.0 - h));
        prev = sched.survival[t];
    }
    return sched;
}

// ---------------------------------------------------------------------------
// scenario definition

struct Scenario {
    int k = 4;
    Shape shape = Shape::A;
    double event_rate = 0.6;
    double censor_target = 0.2;
    double rho = 0.1;
    int q = 13;             // partitioning covariates
    long n_subjects = 0;    // 0 -> 100 * (k - 1)
    int replications = 500;
    int n_perms = 200;
    double alpha = 0.05;
    std::uint64_t seed = 1;
};

inline long scenario_n(const Scenario& sc) {
    return sc.n_subjects > 0 ? sc.n_subjects : 100L * (sc.k - 1);
}

inline std::string scenario_label(const Scenario& sc) {
    return "k" + std::to_string(sc.k) + "-" + shape_name(sc.shape) + "-e" +
           format_double(sc.event_rate) + "-c" + format_double(sc.censor_target) + "-r" +
           format_double(sc.rho);
}

inline void validate(const Scenario& sc) {
    if (sc.k < 4 || sc.k > 11) throw ConfigError("scenario k must be in 4..11");
    if (!(sc.event_rate > 0.0 && sc.event_rate < 1.0))
        throw ConfigError("event rate must be in (0,1)");
    if (!(sc.censor_target >= 0.0 && sc.censor_target < 1.0))
        throw ConfigError("censoring target must be in [0,1)");
    if (sc.q < 1) throw ConfigError("scenario needs at least one covariate");
    if (sc.q > 1 && (sc.rho >= 1.0 || sc.rho <= -1.0 / (sc.q - 1)))
        throw ConfigError("correlation outside the positive definite range");
    if (sc.replications < 1) throw ConfigError("replications must be positive");
    if (sc.n_perms < 1) throw ConfigError("permutation count must be positive");
    if (!(sc.alpha > 0.0 && sc.alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
}

// ---------------------------------------------------------------------------
// generators

// n x q row-major draws from N(0, Sigma), Sigma the equicorrelation matrix.
inline std::vector<double> gen_covariates(long n, int q, double rho, Rng& rng) {
    if (q < 1) throw ConfigError("need at least one covariate");
    if (q > 1 && (rho >= 1.0 || rho <= -1.0 / (q - 1)))
        throw ConfigError("correlation outside the positive definite range");
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(q, q, rho);
    sigma.diagonal().setOnes();
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
        throw ConfigError("equicorrelation matrix not positive definite");
    Eigen::MatrixXd l = llt.matrixL();
    std::vector<double> out(static_cast<std::size_t>(n) * q);
    Eigen::VectorXd e(q);
    for (long i = 0; i < n; ++i) {
        for (int j = 0; j < q; ++j) e[j] = rng.normal();
        Eigen::VectorXd z = l * e;
        for (int j = 0; j < q; ++j) out[static_cast<std::size_t>(i) * q + j] = z[j];
    }
    return out;
}

namespace detail {

// Sequential Bernoulli scheme; k means survival past the horizon.
inline int draw_event_time(const std::vector<double>& hazard, int k, Rng& rng) {
    for (int t = 1; t <= k - 1; ++t)
        if (rng.uniform() < hazard[t - 1]) return t;
    return k;
}

}  // namespace detail

inline std::vector<int> gen_survival(long n, const BaselineSchedule& sched, Rng& rng) {
    std::vector<int> t(n);
    for (long i = 0; i < n; ++i) t[i] = detail::draw_event_time(sched.hazard, sched.k_max, rng);
    return t;
}

// P(C < T) for C = min(ceil(C*), K), C* ~ Exp(rate), T from the schedule.
inline double censor_prob(double rate, const BaselineSchedule& sched) {
    if (rate <= 0.0) return 0.0;
    double p = 0.0;
    for (int t = 1; t <= sched.k_max - 1; ++t)
        p += (std::exp(-rate * (t - 1)) - std::exp(-rate * t)) * sched.survival[t - 1];
    return p;
}

// Exponential rate giving censoring fraction `target`; bisection on the exact
// closed form above (monotone increasing in the rate).
inline double calibrate_censoring_rate(const BaselineSchedule& sched, double target) {
    if (target <= 0.0) return 0.0;
    double sup = sched.survival[0];  // limit as rate -> infinity: C == 1 a.s.
    if (target >= sup)
        throw ConfigError("censoring target " + format_double(target) +
                          " unattainable (limit " + format_double(sup) + ")");
    double lo = 0.0, hi = 1.0;
    int guard = 0;
    while (censor_prob(hi, sched) < target && ++guard < 200) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (censor_prob(mid, sched) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

inline std::vector<int> gen_censoring(long n, double rate, int k, Rng& rng) {
    std::vector<int> c(n, k);
    if (rate <= 0.0) return c;
    for (long i = 0; i < n; ++i) {
        double u = rng.uniform();
        double cstar = -std::log1p(-u) / rate;
        if (cstar < static_cast<double>(k))
            c[i] = std::max(1, static_cast<int>(std::ceil(cstar)));
    }
    return c;
}

namespace detail {

inline Dataset wrap_subjects(long n, int k, int q, const std::vector<double>& z,
                             const std::vector<int>& t, const std::vector<int>& c) {
    Dataset ds;
    ds.k_max = k;
    for (int j = 1; j <= q; ++j) {
        ZVariable zv;
        zv.name = "z" + std::to_string(j);
        zv.kind = ZKind::numeric;
        ds.z_schema.push_back(zv);
    }
    ds.subjects.resize(n);
    for (long i = 0; i < n; ++i) {
        SubjectRecord& s = ds.subjects[i];
        s.id = i + 1;
        s.obs_time = std::min(t[i], c[i]);
        s.status = (t[i] <= c[i] && t[i] <= k - 1) ? 1 : 0;
        s.z.assign(z.begin() + static_cast<std::ptrdiff_t>(i) * q,
                   z.begin() + static_cast<std::ptrdiff_t>(i + 1) * q);
    }
    return ds;
}

}  // namespace detail

// One replication's worth of null data: covariates carry no signal.
inline Dataset make_null_dataset(const Scenario& sc, const BaselineSchedule& sched,
                                 double cens_rate, std::uint64_t seed) {
    Rng rng(seed);
    long n = scenario_n(sc);
    std::vector<double> z = gen_covariates(n, sc.q, sc.rho, rng);
    std::vector<int> t = gen_survival(n, sched, rng);
    std::vector<int> c = gen_censoring(n, cens_rate, sc.k, rng);
    return detail::wrap_subjects(n, sc.k, sc.q, z, t, c);
}

// Independent binary outcomes posed as a one-interval dataset: every subject
// has obs_time 1, status is the Bernoulli response, so the augmented model is
// a plain logistic intercept fit.
inline Dataset gen_binary_dataset(long n, double p_event, int q, double rho,
                                  std::uint64_t seed) {
    if (!(p_event > 0.0 && p_event < 1.0)) throw ConfigError("p_event must be in (0,1)");
    Rng rng(seed);
    std::vector<double> z = gen_covariates(n, q, rho, rng);
    std::vector<int> t(n, 1), c(n, 1);
    Dataset ds = detail::wrap_subjects(n, 2, q, z, t, c);
    for (long i = 0; i < n; ++i) ds.subjects[i].status = rng.uniform() < p_event ? 1 : 0;
    return ds;
}

// Single-threshold alternative: all baseline intercepts shifted by `shift`
// for subjects with z1 > 0.
struct PlantedConfig {
    int k = 5;
    long n = 800;
    int q = 5;
    double rho = 0.0;
    Shape shape = Shape::A;
    double event_rate = 0.6;
    double censor_target = 0.0;
    double shift = 1.0;
};

inline Dataset make_planted_dataset(const PlantedConfig& pc, std::uint64_t seed) {
    BaselineSchedule sched = shape_to_gamma(pc.k, pc.event_rate, pc.shape);
    double cens_rate = calibrate_censoring_rate(sched, pc.censor_target);
    Rng rng(seed);
    std::vector<double> z = gen_covariates(pc.n, pc.q, pc.rho, rng);
    std::vector<double> shifted(pc.k - 1);
    for (int t = 0; t < pc.k - 1; ++t)
        shifted[t] = 1.0 / (1.0 + std::exp(-(sched.gamma0[t] + pc.shift)));
    std::vector<int> t(pc.n);
    for (long i = 0; i < pc.n; ++i) {
        bool up = z[static_cast<std::size_t>(i) * pc.q] > 0.0;
        t[i] = detail::draw_event_time(up ? shifted : sched.hazard, pc.k, rng);
    }
    std::vector<int> c = gen_censoring(pc.n, cens_rate, pc.k, rng);
    return detail::wrap_subjects(pc.n, pc.k, pc.q, z, t, c);
}

// ---------------------------------------------------------------------------
// scenario runner

struct CellResult {
    Method method = Method::mob_ds;
    long replications = 0;
    long rejections = 0;
    long failures = 0;
    double rate = 0.0;
    double se = 0.0;
};

struct ScenarioReport {
    Scenario scenario;
    std::vector<CellResult> cells;  // one per method run
    int stat_dim = 0;               // d used for the tail thresholds, 0 = none
    std::vector<std::string> variables;
    std::vector<double> exceed90, exceed95, exceed99;  // per variable
};

struct StudyConfig {
    bool run_mob = true;
    bool run_mob_ds = true;
    Link link = Link::logit;
    CovEstimator cov = CovEstimator::sandwich;
    PEstimator p_estimator = PEstimator::randomized;
    PermMode perm_mode = PermMode::fast;
    TrimWindow trim;
    int threads = 0;
    SupLmTableCache* tables = nullptr;  // required when run_mob
    int table_grid = kTableGrid;
    int table_reps = kTableReps;
};

namespace detail {

inline constexpr std::uint64_t kTagRep = 0x7265706c69636174ull;

}  // namespace detail

// Runs one scenario cell: per replication generate null data, fit the root
// model once and evaluate the root-node battery for each requested method.
// A replication rejects iff the battery would split the root.
inline ScenarioReport run_scenario(const Scenario& sc, const StudyConfig& study) {
    validate(sc);
    if (!study.run_mob && !study.run_mob_ds) throw ConfigError("no method selected");
    if (study.run_mob && study.tables == nullptr)
        throw ConfigError("asymptotic p-values need a reference table cache");
    BaselineSchedule sched = shape_to_gamma(sc.k, sc.event_rate, sc.shape);
    double cens_rate = calibrate_censoring_rate(sched, sc.censor_target);
    if (study.tables != nullptr)  // warm the usual dimension before going parallel
        study.tables->get(sc.k - 1, study.trim, study.table_grid, study.table_reps);

    const long reps = sc.replications;
    std::vector<std::uint8_t> rej_mob(reps, 0), rej_ds(reps, 0), failed(reps, 0);
    std::vector<double> stats(static_cast<std::size_t>(reps) * sc.q, 0.0);

    parallel_for(static_cast<std::size_t>(reps), study.threads, [&](std::size_t rep) {
        std::uint64_t rep_seed = derive_seed(sc.seed, {detail::kTagRep, rep});
        Dataset ds = make_null_dataset(sc, sched, cens_rate, rep_seed);
        AugmentedDataset aug = augment(ds);
        ModelSpec spec = make_spec(aug, ds, study.link);
        FittedHazardModel model;
        try {
            model = fit(aug, ds, spec);
        } catch (const NumericError&) {
            failed[rep] = 1;
            return;
        }
        BatteryConfig bc;
        bc.cov = study.cov;
        bc.trim = study.trim;
        bc.n_perms = sc.n_perms;
        bc.alpha = sc.alpha;
        bc.p_estimator = study.p_estimator;
        bc.perm_mode = study.perm_mode;
        bc.tables = study.tables;
        bc.table_grid = study.table_grid;
        bc.table_reps = study.table_reps;
        bc.threads = 1;  // replications are already parallel
        bc.seed = derive_seed(rep_seed, {mobds::detail::kTagNode, 1});
        bool have_stats = false;
        try {
            if (study.run_mob) {
                bc.method = Method::mob;
                BatteryResult br = run_battery(ds, aug, model, bc);
                rej_mob[rep] = br.reject ? 1 : 0;
                for (int v = 0; v < sc.q; ++v)
                    stats[static_cast<std::size_t>(rep) * sc.q + v] = br.tests[v].statistic;
                have_stats = true;
            }
            if (study.run_mob_ds) {
                bc.method = Method::mob_ds;
                BatteryResult br = run_battery(ds, aug, model, bc);
                rej_ds[rep] = br.reject ? 1 : 0;
                if (!have_stats)
                    for (int v = 0; v < sc.q; ++v)
                        stats[static_cast<std::size_t>(rep) * sc.q + v] = br.tests[v].statistic;
            }
        } catch (const NumericError&) {
            failed[rep] = 1;
        }
    });

    long n_failed = 0;
    for (long r = 0; r < reps; ++r) n_failed += failed[r];
    if (n_failed * 100 > reps)
        throw NumericError("scenario " + scenario_label(sc) + ": " + std::to_string(n_failed) +
                           " of " + std::to_string(reps) + " replications failed");
    long effective = reps - n_failed;

    ScenarioReport rep_out;
    rep_out.scenario = sc;
    auto make_cell = [&](Method m, const std::vector<std::uint8_t>& rej) {
        CellResult cell;
        cell.method = m;
        cell.replications = effective;
        cell.failures = n_failed;
        for (long r = 0; r < reps; ++r) cell.rejections += rej[r];
        cell.rate = effective > 0 ? static_cast<double>(cell.rejections) / effective : 0.0;
        cell.se = effective > 0 ? std::sqrt(cell.rate * (1.0 - cell.rate) / effective) : 0.0;
        return cell;
    };
    if (study.run_mob) rep_out.cells.push_back(make_cell(Method::mob, rej_mob));
    if (study.run_mob_ds) rep_out.cells.push_back(make_cell(Method::mob_ds, rej_ds));

    if (study.tables != nullptr) {
        // Empirical exceedance of the asymptotic reference quantiles, per
        // covariate, over the non-failed replications.
        const SupLmTable& tab =
            study.tables->get(sc.k - 1, study.trim, study.table_grid, study.table_reps);
        double q90 = tab.quantile_upper(0.10), q95 = tab.quantile_upper(0.05),
               q99 = tab.quantile_upper(0.01);
        rep_out.stat_dim = sc.k - 1;
        rep_out.exceed90.assign(sc.q, 0.0);
        rep_out.exceed95.assign(sc.q, 0.0);
        rep_out.exceed99.assign(sc.q, 0.0);
        for (int v = 0; v < sc.q; ++v) {
            long e90 = 0, e95 = 0, e99 = 0;
            for (long r = 0; r < reps; ++r) {
                if (failed[r]) continue;
                double s = stats[static_cast<std::size_t>(r) * sc.q + v];
                e90 += s > q90;
                e95 += s > q95;
                e99 += s > q99;
            }
            rep_out.exceed90[v] = effective > 0 ? static_cast<double>(e90) / effective : 0.0;
            rep_out.exceed95[v] = effective > 0 ? static_cast<double>(e95) / effective : 0.0;
            rep_out.exceed99[v] = effective > 0 ? static_cast<double>(e99) / effective : 0.0;
        }
    }
    for (int v = 1; v <= sc.q; ++v) rep_out.variables.push_back("z" + std::to_string(v));
    return rep_out;
}

// ---------------------------------------------------------------------------
// report output

inline void write_report_csv(const std::vector<ScenarioReport>& reports,
                             const std::string& path) {
    CsvWriter w(path);
    w.row("k", "shape", "event_rate", "censoring", "rho", "n", "q", "reps", "perms", "alpha",
          "seed", "method", "rejections", "failures", "rate", "se");
    for (const auto& rep : reports) {
        const Scenario& sc = rep.scenario;
        for (const auto& cell : rep.cells) {
            w.field(sc.k);
            w.field(std::string(shape_name(sc.shape)));
            w.field(sc.event_rate);
            w.field(sc.censor_target);
            w.field(sc.rho);
            w.field(scenario_n(sc));
            w.field(sc.q);
            w.field(sc.replications);
            w.field(sc.n_perms);
            w.field(sc.alpha);
            w.field(static_cast<std::size_t>(sc.seed));
            w.field(std::string(method_name(cell.method)));
            w.field(cell.rejections);
            w.field(cell.failures);
            w.field(cell.rate);
            w.field(cell.se);
            w.endrow();
        }
    }
}

inline void write_tails_csv(const std::vector<ScenarioReport>& reports,
                            const std::string& path) {
    CsvWriter w(path);
    w.row("k", "shape", "event_rate", "censoring", "rho", "variable", "d", "exceed90",
          "exceed95", "exceed99");
    for (const auto& rep : reports) {
        if (rep.stat_dim == 0) continue;
        const Scenario& sc = rep.scenario;
        for (int v = 0; v < sc.q; ++v) {
            w.field(sc.k);
            w.field(std::string(shape_name(sc.shape)));
            w.field(sc.event_rate);
            w.field(sc.censor_target);
            w.field(sc.rho);
            w.field(rep.variables[v]);
            w.field(rep.stat_dim);
            w.field(rep.exceed90[v]);
            w.field(rep.exceed95[v]);
            w.field(rep.exceed99[v]);
            w.endrow();
        }
    }
}

// ---------------------------------------------------------------------------
// grids and presets

namespace detail {

template <typename T, typename Parse>
std::vector<T> grid_values(const nlohmann::json& j, const char* key, std::vector<T> fallback,
                           Parse parse) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    std::vector<T> out;
    if (v.is_array())
        for (const auto& e : v) out.push_back(parse(e));
    else
        out.push_back(parse(v));
    if (out.empty()) throw ConfigError(std::string("empty grid for key '") + key + "'");
    return out;
}

}  // namespace detail

// Cartesian product over the array-valued keys; scalar keys apply to every
// cell. Documented keys: k, shape, event_rate, censoring, rho, reps, perms,
// alpha, seed, q, n.
inline std::vector<Scenario> parse_grid(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"k",     "shape", "event_rate", "censoring",
                                                   "rho",   "reps",  "perms",      "alpha",
                                                   "seed",  "q",     "n"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown grid key '" + it.key() + "'");
    auto ks = detail::grid_values<int>(j, "k", {4}, [](const nlohmann::json& e) {
        return e.get<int>();
    });
    auto shapes = detail::grid_values<Shape>(j, "shape", {Shape::A}, [](const nlohmann::json& e) {
        return parse_shape(e.get<std::string>());
    });
    auto rates = detail::grid_values<double>(j, "event_rate", {0.6}, [](const nlohmann::json& e) {
        return e.get<double>();
    });
    auto cens = detail::grid_values<double>(j, "censoring", {0.2}, [](const nlohmann::json& e) {
        return e.get<double>();
    });
    auto rhos = detail::grid_values<double>(j, "rho", {0.1}, [](const nlohmann::json& e) {
        return e.get<double>();
    });
    Scenario base;
    if (j.contains("reps")) base.replications = j.at("reps").get<int>();
    if (j.contains("perms")) base.n_perms = j.at("perms").get<int>();
    if (j.contains("alpha")) base.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("q")) base.q = j.at("q").get<int>();
    if (j.contains("n")) base.n_subjects = j.at("n").get<long>();
    std::vector<Scenario> out;
    for (int k : ks)
        for (Shape sh : shapes)
            for (double er : rates)
                for (double cf : cens)
                    for (double rho : rhos) {
                        Scenario sc = base;
                        sc.k = k;
                        sc.shape = sh;
                        sc.event_rate = er;
                        sc.censor_target = cf;
                        sc.rho = rho;
                        validate(sc);
                        out.push_back(sc);
                    }
    return out;
}

inline nlohmann::json preset_grid(const std::string& name) {
    nlohmann::json j;
    if (name == "desk-typeI") {
        j["k"] = {4, 8, 11};
        j["shape"] = {"A", "B", "C"};
        j["event_rate"] = {0.4, 0.2};
        j["censoring"] = {0.2};
        j["rho"] = {0.1};
        j["reps"] = 500;
        j["perms"] = 200;
    } else if (name == "desk-nocens") {
        j["k"] = {4, 8, 11};
        j["shape"] = {"A", "B", "C"};
        j["event_rate"] = {0.4, 0.2};
        j["censoring"] = {0.0};
        j["rho"] = {0.1};
        j["reps"] = 500;
        j["perms"] = 200;
    } else if (name == "full-typeI") {
        // Full-scale study grid; expect days of CPU time, not a desk run.
        j["k"] = {4, 8, 11};
        j["shape"] = {"A", "B", "C"};
        j["event_rate"] = {0.8, 0.6, 0.4, 0.2};
        j["censoring"] = {0.0, 0.2, 0.5};
        j["rho"] = {0.1, 0.5};
        j["reps"] = 2000;
        j["perms"] = 1000;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return j;
}

}  // namespace mobds
