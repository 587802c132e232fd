#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/fluctuation.hpp"
#include "mobds/glm.hpp"
#include "mobds/parallel.hpp"
#include "mobds/permutation.hpp"
#include "mobds/rng.hpp"
#include "mobds/suplm_table.hpp"

namespace mobds {

enum class Method { mob, mob_ds };

inline std::string method_name(Method m) { return m == Method::mob ? "mob" : "mob-ds"; }

inline Method parse_method(const std::string& s) {
    if (s == "mob") return Method::mob;
    if (s == "mob-ds" || s == "mob_ds" || s == "mobds") return Method::mob_ds;
    throw ConfigError("unknown method '" + s + "' (expected mob or mob-ds)");
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-subject scaled score block sums: row i = (scaler * sum of subject i's
// score rows)^T / sqrt(n). The fluctuation process at a subject boundary is a
// running sum of these rows, which is what makes permutation replicates cheap:
// permuting (t~, delta, x) against z preserves the multiset of augmented rows,
// so the refitted model equals the observed one and only the block sums move.
struct BlockStats {
    RowMat u;                  // N x d
    std::vector<double> rows;  // augmented rows per subject
    double n = 0.0;
};

inline BlockStats block_stats(const FittedHazardModel& model, const AugmentedDataset& aug,
                              const Eigen::MatrixXd& scaler) {
    const std::size_t n_subj = aug.subject_offsets.size() - 1;
    const int d = model.spec.dim();
    BlockStats bs;
    bs.n = static_cast<double>(aug.n);
    bs.rows.resize(n_subj);
    Eigen::MatrixXd raw(n_subj, d);
    for (std::size_t i = 0; i < n_subj; ++i) {
        const std::size_t lo = aug.subject_offsets[i];
        const std::size_t len = aug.subject_offsets[i + 1] - lo;
        raw.row(i) = model.scores.middleRows(lo, len).colwise().sum();
        bs.rows[i] = static_cast<double>(len);
    }
    bs.u = raw * scaler / std::sqrt(bs.n);
    return bs;
}

// Node-local view of one partitioning variable.
struct VariablePrep {
    ZKind kind = ZKind::numeric;
    bool constant = false;
    // numeric: subject slots in ascending z order, tie groups marked by
    // 1-based end positions into `order`.
    std::vector<int> order;
    std::vector<std::size_t> group_ends;
    // categorical: compacted per-slot codes over levels present in the node.
    std::vector<int> category;
    int n_categories = 0;
};

inline VariablePrep prepare_variable(const Dataset& ds, int var) {
    const std::size_t n_subj = ds.size();
    VariablePrep prep;
    prep.kind = ds.z_schema[var].kind;
    if (prep.kind == ZKind::numeric) {
        prep.order.resize(n_subj);
        std::iota(prep.order.begin(), prep.order.end(), 0);
        std::stable_sort(prep.order.begin(), prep.order.end(), [&](int a, int b) {
            return ds.subjects[a].z[var] < ds.subjects[b].z[var];
        });
        for (std::size_t k = 0; k < n_subj; ++k) {
            if (k + 1 == n_subj ||
                ds.subjects[prep.order[k + 1]].z[var] != ds.subjects[prep.order[k]].z[var])
                prep.group_ends.push_back(k + 1);
        }
        prep.constant = prep.group_ends.size() < 2;
    } else {
        const int n_levels = static_cast<int>(ds.z_schema[var].levels.size());
        std::vector<int> remap(n_levels, -1);
        prep.category.resize(n_subj);
        for (std::size_t i = 0; i < n_subj; ++i) {
            int code = static_cast<int>(ds.subjects[i].z[var]);
            if (remap[code] < 0) remap[code] = prep.n_categories++;
            prep.category[i] = remap[code];
        }
        prep.constant = prep.n_categories < 2;
    }
    return prep;
}

namespace detail {

// supLM over tie-group boundaries inside the trimming window. `pi` maps a
// z slot to the subject whose data it carries (empty = identity).
inline double eval_suplm(const BlockStats& bs, const VariablePrep& prep,
                         const std::vector<int>& pi, TrimWindow trim, bool& found) {
    const int d = static_cast<int>(bs.u.cols());
    double cum[64];
    std::fill(cum, cum + d, 0.0);
    double rows_cum = 0.0;
    double best = 0.0;
    found = false;
    std::size_t k = 0;
    for (std::size_t end : prep.group_ends) {
        for (; k < end; ++k) {
            const int slot = prep.order[k];
            const int subj = pi.empty() ? slot : pi[slot];
            const double* up = bs.u.data() + static_cast<std::size_t>(subj) * d;
            for (int j = 0; j < d; ++j) cum[j] += up[j];
            rows_cum += bs.rows[subj];
        }
        const double m = rows_cum / bs.n;
        if (m < trim.lo || m > trim.hi) continue;
        double norm2 = 0.0;
        for (int j = 0; j < d; ++j) norm2 += cum[j] * cum[j];
        const double v = norm2 / (m * (1.0 - m));
        if (!found || v > best) best = v;
        found = true;
    }
    return found ? best : 0.0;
}

inline double eval_cat(const BlockStats& bs, const VariablePrep& prep,
                       const std::vector<int>& pi) {
    const int d = static_cast<int>(bs.u.cols());
    const int nc = prep.n_categories;
    std::vector<double> sums(static_cast<std::size_t>(nc) * d, 0.0);
    std::vector<double> rows(nc, 0.0);
    for (std::size_t slot = 0; slot < prep.category.size(); ++slot) {
        const int subj = pi.empty() ? static_cast<int>(slot) : pi[slot];
        const int c = prep.category[slot];
        const double* up = bs.u.data() + static_cast<std::size_t>(subj) * d;
        double* sp = sums.data() + static_cast<std::size_t>(c) * d;
        for (int j = 0; j < d; ++j) sp[j] += up[j];
        rows[c] += bs.rows[subj];
    }
    double stat = 0.0;
    for (int c = 0; c < nc; ++c) {
        const double* sp = sums.data() + static_cast<std::size_t>(c) * d;
        double norm2 = 0.0;
        for (int j = 0; j < d; ++j) norm2 += sp[j] * sp[j];
        stat += (bs.n / rows[c]) * norm2;
    }
    return stat;
}

}  // namespace detail

struct InstabilityResult {
    std::string variable;
    ZKind kind = ZKind::numeric;
    double statistic = 0.0;
    double p_value = 1.0;
    double p_adjusted = 1.0;
    std::string method;  // "asymptotic" | "permutation"
    int df = 0;          // categorical only
    TrimWindow trim;     // numeric only
    bool degenerate = false;  // untestable in this node; excluded from q
    long n_greater = 0;       // permutation tallies
    long n_equal = 0;
    double u_draw = -1.0;
};

struct BatteryConfig {
    Method method = Method::mob_ds;
    CovEstimator cov = CovEstimator::sandwich;
    TrimWindow trim;
    int n_perms = 1000;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    PEstimator p_estimator = PEstimator::randomized;
    PermMode perm_mode = PermMode::fast;
    int max_attempts = 3;
    double abort_fail_frac = 0.10;
    std::function<bool(int, int)> fail_hook;
    SupLmTableCache* tables = nullptr;
    int table_grid = kTableGrid;
    int table_reps = kTableReps;
    int threads = 1;
    bool keep_nulls = false;
};

struct BatteryResult {
    std::vector<InstabilityResult> tests;
    int q = 0;
    int best_variable = -1;  // index into z_schema, -1 = none selected
    double min_p = 1.0;
    double min_adjusted = 1.0;
    bool reject = false;
    long perm_failures = 0;
    PermutationNull nulls;  // populated when keep_nulls is set
};

struct SelectResult {
    int index = -1;
    double p_min = 1.0;
    double p_adjusted = 1.0;
    bool selected = false;
};

// Step 5: Bonferroni over the q testable variables; strict comparison with
// alpha, ties resolved by input order.
inline SelectResult select_variable(const std::vector<double>& pvalues, double alpha, int q) {
    if (q < 1) throw ConfigError("Bonferroni q must be >= 1");
    SelectResult r;
    if (pvalues.empty()) return r;
    for (std::size_t i = 0; i < pvalues.size(); ++i) {
        if (r.index < 0 || pvalues[i] < r.p_min) {
            r.index = static_cast<int>(i);
            r.p_min = pvalues[i];
        }
    }
    r.p_adjusted = std::min(1.0, static_cast<double>(q) * r.p_min);
    r.selected = r.p_adjusted < alpha;
    if (!r.selected) r.index = -1;
    return r;
}

// Full per-node test battery for either method. The observed statistics are
// evaluated with an identity assignment through the same code path as the
// permuted ones, so the permutation comparison is exact.
inline BatteryResult run_battery(const Dataset& ds, const AugmentedDataset& aug,
                                 const FittedHazardModel& model, const BatteryConfig& cfg) {
    const int n_vars = ds.n_z();
    if (n_vars == 0) throw DataError("no partitioning variables");
    const int d = model.spec.dim();
    if (d > 64) throw ConfigError("parameter dimension above 64 not supported");

    Eigen::MatrixXd scaler = score_scaler(model, cfg.cov);
    BlockStats bs = block_stats(model, aug, scaler);

    std::vector<VariablePrep> preps(n_vars);
    for (int v = 0; v < n_vars; ++v) preps[v] = prepare_variable(ds, v);

    BatteryResult out;
    out.tests.resize(n_vars);
    std::vector<int> identity;  // empty = identity assignment

    for (int v = 0; v < n_vars; ++v) {
        auto& t = out.tests[v];
        t.variable = ds.z_schema[v].name;
        t.kind = preps[v].kind;
        t.trim = cfg.trim;
        t.method = cfg.method == Method::mob ? "asymptotic" : "permutation";
        if (preps[v].constant) {
            t.degenerate = true;
            continue;
        }
        if (preps[v].kind == ZKind::numeric) {
            bool found = false;
            t.statistic = detail::eval_suplm(bs, preps[v], identity, cfg.trim, found);
            if (!found) {
                t.degenerate = true;  // no tie-group boundary inside the window
                continue;
            }
        } else {
            t.statistic = detail::eval_cat(bs, preps[v], identity);
            t.df = d * (preps[v].n_categories - 1);
        }
    }

    if (cfg.method == Method::mob) {
        if (!cfg.tables) throw ConfigError("asymptotic p-values require a supLM table cache");
        for (int v = 0; v < n_vars; ++v) {
            auto& t = out.tests[v];
            if (t.degenerate) continue;
            t.p_value = t.kind == ZKind::numeric
                            ? cfg.tables->get(d, cfg.trim, cfg.table_grid, cfg.table_reps)
                                  .pvalue(t.statistic)
                            : chisq_pvalue(t.statistic, t.df);
        }
    } else {
        const int B = cfg.n_perms;
        if (B < 1) throw ConfigError("n_perms must be >= 1");
        const int N = static_cast<int>(ds.size());
        if (N < 2) throw DataError("need at least 2 subjects to permute");
        std::vector<std::vector<double>> nulls(n_vars);
        for (int v = 0; v < n_vars; ++v)
            if (!out.tests[v].degenerate) nulls[v].assign(B, std::numeric_limits<double>::quiet_NaN());
        std::vector<std::uint8_t> failed(B, 0);

        auto eval_all = [&](const BlockStats& stats, const std::vector<int>& assign, int b) {
            for (int v = 0; v < n_vars; ++v) {
                if (out.tests[v].degenerate) continue;
                if (preps[v].kind == ZKind::numeric) {
                    bool found = false;
                    nulls[v][b] = detail::eval_suplm(stats, preps[v], assign, cfg.trim, found);
                } else {
                    nulls[v][b] = detail::eval_cat(stats, preps[v], assign);
                }
            }
        };

        parallel_for(static_cast<std::size_t>(B), cfg.threads, [&](std::size_t bi) {
            const int b = static_cast<int>(bi);
            for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
                Rng rng(detail::perm_seed(cfg.seed, b, attempt));
                std::vector<int> pi = rng.permutation(N);
                if (cfg.fail_hook && cfg.fail_hook(b, attempt)) continue;
                if (cfg.perm_mode == PermMode::fast) {
                    eval_all(bs, pi, b);
                    return;
                }
                try {
                    Dataset perm_ds = apply_permutation(ds, pi);
                    AugmentedDataset perm_aug = augment(perm_ds);
                    FittedHazardModel perm_fit =
                        fit(perm_aug, perm_ds, model.spec, &model.theta);
                    Eigen::MatrixXd perm_scaler = score_scaler(perm_fit, cfg.cov);
                    BlockStats perm_bs = block_stats(perm_fit, perm_aug, perm_scaler);
                    eval_all(perm_bs, identity, b);
                    return;
                } catch (const NumericError&) {
                    continue;  // resample with a fresh derived seed
                }
            }
            failed[b] = 1;
        });

        long n_failed = std::count(failed.begin(), failed.end(), std::uint8_t{1});
        out.perm_failures = n_failed;
        if (static_cast<double>(n_failed) > cfg.abort_fail_frac * static_cast<double>(B))
            throw NumericError("permutation refits failed for " + std::to_string(n_failed) +
                               " of " + std::to_string(B) + " draws");
        if (n_failed > 0) {
            for (auto& vec : nulls) {
                if (vec.empty()) continue;
                std::vector<double> kept;
                kept.reserve(vec.size());
                for (int b = 0; b < B; ++b)
                    if (!failed[b]) kept.push_back(vec[b]);
                vec = std::move(kept);
            }
        }

        for (int v = 0; v < n_vars; ++v) {
            auto& t = out.tests[v];
            if (t.degenerate) continue;
            const auto& vec = nulls[v];
            for (double x : vec) {
                if (x > t.statistic) ++t.n_greater;
                else if (x == t.statistic) ++t.n_equal;
            }
            if (cfg.p_estimator == PEstimator::randomized) {
                t.u_draw = detail::u_draw(cfg.seed, v);
                t.p_value = perm_pvalue_randomized(t.statistic, vec, t.u_draw);
            } else {
                t.p_value = perm_pvalue_addone(t.statistic, vec);
            }
        }
        if (cfg.keep_nulls) {
            out.nulls.stats = std::move(nulls);
            out.nulls.failures = n_failed;
        }
    }

    // Bonferroni over testable variables.
    for (int v = 0; v < n_vars; ++v)
        if (!out.tests[v].degenerate) ++out.q;
    if (out.q > 0) {
        for (int v = 0; v < n_vars; ++v) {
            auto& t = out.tests[v];
            if (t.degenerate) continue;
            t.p_adjusted = std::min(1.0, static_cast<double>(out.q) * t.p_value);
            if (out.best_variable < 0 || t.p_value < out.min_p) {
                out.best_variable = v;
                out.min_p = t.p_value;
                out.min_adjusted = t.p_adjusted;
            }
        }
        out.reject = out.min_adjusted < cfg.alpha;
        if (!out.reject) out.best_variable = -1;
    }
    return out;
}

}  // namespace mobds
