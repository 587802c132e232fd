#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/glm.hpp"
#include "mobds/instability.hpp"

namespace mobds {

struct SplitRule {
    int var_index = -1;
    std::string variable;
    ZKind kind = ZKind::numeric;
    double cutpoint = 0.0;              // numeric: left = (z <= cutpoint)
    std::vector<int> left_levels;       // categorical: level codes routed left
    std::vector<int> right_levels;      // remaining levels present at the split
    double objective = 0.0;             // sum of child log-likelihoods
};

struct MobNode {
    int id = 0;
    int depth = 1;
    long n_subjects = 0;
    long n_events = 0;
    std::vector<long> subject_ids;
    FittedHazardModel model;
    LifeTable lt;
    std::vector<InstabilityResult> tests;
    int q = 0;
    bool terminal = true;
    SplitRule split;
    int left_child = -1;   // index into MobTree::nodes
    int right_child = -1;
    std::string stop_reason;  // significance | depth | size | fit-failure (terminal only)
};

struct MobConfig {
    Method method = Method::mob_ds;
    Link link = Link::logit;
    double alpha = 0.05;
    int n_perms = 1000;
    int max_depth = 10;
    long min_subjects = 20;
    long min_events = -1;  // -1: 2 (K-1) + 2 p
    TrimWindow trim;
    CovEstimator cov = CovEstimator::sandwich;
    PEstimator p_estimator = PEstimator::randomized;
    PermMode perm_mode = PermMode::fast;
    std::uint64_t seed = 0;
    int threads = 1;
    SupLmTableCache* tables = nullptr;
    int table_grid = kTableGrid;
    int table_reps = kTableReps;
    bool exhaustive_split = true;  // false: coarse quantile grid, refit top 5
    int split_grid = 50;
    int split_refine = 5;
};

struct MobTree {
    std::vector<MobNode> nodes;  // preorder, nodes[0] is the root
    int k_max = 0;
    Link link = Link::logit;
    Method method = Method::mob_ds;
    double alpha = 0.05;
    std::vector<std::string> x_names;
    std::vector<ZVariable> z_schema;

    const MobNode& root() const { return nodes.front(); }
    int n_terminals() const {
        int c = 0;
        for (const auto& n : nodes) c += n.terminal ? 1 : 0;
        return c;
    }
};

namespace detail {

inline constexpr std::uint64_t kTagNode = 0x6e6f64657365656dull;

inline long resolve_min_events(const MobConfig& cfg, int k_max, int p) {
    if (cfg.min_events >= 0) return cfg.min_events;
    return 2L * (k_max - 1) + 2L * p;
}

struct SplitScan {
    bool found = false;
    SplitRule rule;
};

// Objective for one side from its per-time counts (intercept-only models).
inline double side_loglik(const TimeCounts& tc, Link link) {
    return saturated_time_loglik(tc, link);
}

inline double fitted_objective(const Dataset& ds, const std::vector<std::size_t>& subjects,
                               Link link) {
    Dataset side = subset(ds, subjects);
    AugmentedDataset aug = augment(side);
    ModelSpec spec = make_spec(aug, side, link);
    return fit(aug, side, spec).loglik;
}

// Exhaustive numeric scan. With no x covariates the objective is the exact
// per-side saturated log-likelihood, a pure function of integer counts, so
// ties are exact and the ascending scan keeps the smallest cutpoint.
inline SplitScan scan_numeric(const Dataset& ds, int var, long min_subjects, long min_events,
                              Link link, int threads, bool exhaustive, int split_grid,
                              int split_refine) {
    const std::size_t n = ds.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return ds.subjects[a].z[var] < ds.subjects[b].z[var];
    });

    // Tie groups in ascending z order.
    std::vector<std::size_t> group_ends;
    for (std::size_t k = 0; k < n; ++k) {
        if (k + 1 == n || ds.subjects[order[k + 1]].z[var] != ds.subjects[order[k]].z[var])
            group_ends.push_back(k + 1);
    }
    SplitScan out;
    if (group_ends.size() < 2) return out;

    const int p = ds.n_x();
    const int kk = ds.k_max - 1;
    const long total_n = static_cast<long>(n);
    const long total_d = ds.n_events();

    struct Candidate {
        double cutpoint;
        std::size_t n_left;  // subjects in order[0..n_left)
    };
    long left_subj = 0, left_ev = 0, left_hor = 0;
    std::vector<long> left_at_risk(kk, 0), left_events(kk, 0);
    std::vector<Candidate> admissible;
    std::vector<std::vector<long>> left_tc_at_risk, left_tc_events;  // per admissible candidate (p = 0)
    std::vector<long> left_tc_horizon;
    std::size_t k = 0;
    for (std::size_t g = 0; g + 1 < group_ends.size(); ++g) {
        for (; k < group_ends[g]; ++k) {
            const auto& s = ds.subjects[order[k]];
            ++left_subj;
            left_ev += s.status;
            const int top = std::min(s.obs_time, kk);
            for (int t = 1; t <= top; ++t) ++left_at_risk[t - 1];
            if (s.obs_time <= kk && s.status == 1) ++left_events[s.obs_time - 1];
            if (s.obs_time > kk) ++left_hor;
        }
        const long right_subj = total_n - left_subj;
        const long right_ev = total_d - left_ev;
        if (left_subj < min_subjects || right_subj < min_subjects) continue;
        if (left_ev < min_events || right_ev < min_events) continue;
        const double a = ds.subjects[order[group_ends[g] - 1]].z[var];
        const double b = ds.subjects[order[group_ends[g]]].z[var];
        double cut = a + (b - a) / 2.0;
        if (!(cut > a && cut < b)) cut = a;  // adjacent representable values
        admissible.push_back({cut, group_ends[g]});
        if (p == 0) {
            left_tc_at_risk.push_back(left_at_risk);
            left_tc_events.push_back(left_events);
            left_tc_horizon.push_back(left_hor);
        }
    }
    if (admissible.empty()) return out;

    TimeCounts total_tc = time_counts(ds);
    auto objective_p0 = [&](std::size_t ci) {
        TimeCounts lt, rt;
        lt.at_risk = left_tc_at_risk[ci];
        lt.events = left_tc_events[ci];
        lt.at_horizon = left_tc_horizon[ci];
        rt.at_risk.resize(kk);
        rt.events.resize(kk);
        rt.at_horizon = total_tc.at_horizon - lt.at_horizon;
        for (int t = 0; t < kk; ++t) {
            rt.at_risk[t] = total_tc.at_risk[t] - lt.at_risk[t];
            rt.events[t] = total_tc.events[t] - lt.events[t];
        }
        return side_loglik(lt, link) + side_loglik(rt, link);
    };
    auto objective_fit = [&](std::size_t ci) -> double {
        std::vector<std::size_t> left, right;
        for (std::size_t i = 0; i < admissible[ci].n_left; ++i)
            left.push_back(static_cast<std::size_t>(order[i]));
        for (std::size_t i = admissible[ci].n_left; i < n; ++i)
            right.push_back(static_cast<std::size_t>(order[i]));
        try {
            return fitted_objective(ds, left, link) + fitted_objective(ds, right, link);
        } catch (const NumericError&) {
            return -std::numeric_limits<double>::infinity();  // candidate unusable
        }
    };

    std::vector<std::size_t> eval_set(admissible.size());
    std::iota(eval_set.begin(), eval_set.end(), std::size_t{0});
    if (!exhaustive && p > 0 && admissible.size() > static_cast<std::size_t>(split_grid)) {
        // Coarse pass on a quantile-spaced subset, then refit around the best.
        std::vector<std::size_t> coarse;
        for (int i = 0; i < split_grid; ++i)
            coarse.push_back(i * (admissible.size() - 1) / (split_grid - 1));
        coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());
        std::vector<double> obj(coarse.size());
        parallel_for(coarse.size(), threads, [&](std::size_t i) { obj[i] = objective_fit(coarse[i]); });
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < coarse.size(); ++i)
            if (obj[i] > obj[best_i]) best_i = i;
        const std::size_t center = coarse[best_i];
        const std::size_t radius = static_cast<std::size_t>(split_refine);
        eval_set.clear();
        for (std::size_t ci = center >= radius ? center - radius : 0;
             ci < admissible.size() && ci <= center + radius; ++ci)
            eval_set.push_back(ci);
    }

    std::vector<double> objectives(eval_set.size());
    if (p == 0) {
        for (std::size_t i = 0; i < eval_set.size(); ++i) objectives[i] = objective_p0(eval_set[i]);
    } else {
        parallel_for(eval_set.size(), threads,
                     [&](std::size_t i) { objectives[i] = objective_fit(eval_set[i]); });
    }
    std::size_t best = 0;
    bool any = false;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        if (!std::isfinite(objectives[i])) continue;
        if (!any || objectives[i] > objectives[best]) {
            best = i;
            any = true;
        }
    }
    if (!any) return out;
    out.found = true;
    out.rule.var_index = var;
    out.rule.variable = ds.z_schema[var].name;
    out.rule.kind = ZKind::numeric;
    out.rule.cutpoint = admissible[eval_set[best]].cutpoint;
    out.rule.objective = objectives[best];
    return out;
}

inline SplitScan scan_categorical(const Dataset& ds, int var, long min_subjects, long min_events,
                                  Link link, int threads) {
    // Levels present in this node, in input code order.
    const int n_levels = static_cast<int>(ds.z_schema[var].levels.size());
    std::vector<long> level_subj(n_levels, 0);
    for (const auto& s : ds.subjects) ++level_subj[static_cast<int>(s.z[var])];
    std::vector<int> present;
    for (int c = 0; c < n_levels; ++c)
        if (level_subj[c] > 0) present.push_back(c);
    const int C = static_cast<int>(present.size());
    SplitScan out;
    if (C < 2) return out;
    if (C > 12)
        throw ConfigError("categorical variable '" + ds.z_schema[var].name + "' has " +
                          std::to_string(C) + " levels in this node (12 supported)");

    const int p = ds.n_x();
    const int kk = ds.k_max - 1;
    // Per-level sufficient statistics (p = 0) or subject lists (p > 0).
    std::vector<TimeCounts> level_tc(C);
    std::vector<long> level_ev(C, 0), level_n(C, 0);
    std::vector<std::vector<std::size_t>> level_members(C);
    std::vector<int> code_to_slot(n_levels, -1);
    for (int ci = 0; ci < C; ++ci) {
        code_to_slot[present[ci]] = ci;
        level_tc[ci].at_risk.assign(kk, 0);
        level_tc[ci].events.assign(kk, 0);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.subjects[i];
        const int ci = code_to_slot[static_cast<int>(s.z[var])];
        ++level_n[ci];
        level_ev[ci] += s.status;
        level_members[ci].push_back(i);
        const int top = std::min(s.obs_time, kk);
        for (int t = 1; t <= top; ++t) ++level_tc[ci].at_risk[t - 1];
        if (s.obs_time <= kk && s.status == 1) ++level_tc[ci].events[s.obs_time - 1];
        if (s.obs_time > kk) ++level_tc[ci].at_horizon;
    }

    const std::uint32_t n_masks = (1u << (C - 1)) - 1u;
    std::vector<double> objectives(n_masks, -std::numeric_limits<double>::infinity());
    auto eval_mask = [&](std::uint32_t mask) {
        long ln = 0, le = 0;
        for (int ci = 0; ci < C - 1; ++ci)
            if (mask & (1u << ci)) {
                ln += level_n[ci];
                le += level_ev[ci];
            }
        const long rn = static_cast<long>(ds.size()) - ln;
        const long re = ds.n_events() - le;
        if (ln < min_subjects || rn < min_subjects || le < min_events || re < min_events) return;
        if (p == 0) {
            TimeCounts lt, rt;
            lt.at_risk.assign(kk, 0);
            lt.events.assign(kk, 0);
            rt.at_risk.assign(kk, 0);
            rt.events.assign(kk, 0);
            for (int ci = 0; ci < C; ++ci) {
                const bool left = ci < C - 1 && (mask & (1u << ci));
                auto& side = left ? lt : rt;
                side.at_horizon += level_tc[ci].at_horizon;
                for (int t = 0; t < kk; ++t) {
                    side.at_risk[t] += level_tc[ci].at_risk[t];
                    side.events[t] += level_tc[ci].events[t];
                }
            }
            objectives[mask - 1] = side_loglik(lt, link) + side_loglik(rt, link);
        } else {
            std::vector<std::size_t> left, right;
            for (int ci = 0; ci < C; ++ci) {
                const bool is_left = ci < C - 1 && (mask & (1u << ci));
                auto& dst = is_left ? left : right;
                dst.insert(dst.end(), level_members[ci].begin(), level_members[ci].end());
            }
            try {
                objectives[mask - 1] =
                    fitted_objective(ds, left, link) + fitted_objective(ds, right, link);
            } catch (const NumericError&) {
            }
        }
    };
    if (p == 0) {
        for (std::uint32_t mask = 1; mask <= n_masks; ++mask) eval_mask(mask);
    } else {
        parallel_for(n_masks, threads, [&](std::size_t i) { eval_mask(static_cast<std::uint32_t>(i + 1)); });
    }
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 1; mask <= n_masks; ++mask) {
        if (!std::isfinite(objectives[mask - 1])) continue;
        if (best_mask == 0 || objectives[mask - 1] > objectives[best_mask - 1]) best_mask = mask;
    }
    if (best_mask == 0) return out;
    out.found = true;
    out.rule.var_index = var;
    out.rule.variable = ds.z_schema[var].name;
    out.rule.kind = ZKind::categorical;
    out.rule.objective = objectives[best_mask - 1];
    for (int ci = 0; ci < C; ++ci) {
        if (ci < C - 1 && (best_mask & (1u << ci)))
            out.rule.left_levels.push_back(present[ci]);
        else
            out.rule.right_levels.push_back(present[ci]);
    }
    return out;
}

}  // namespace detail

// Step 6: split-point search on the selected variable.
inline bool best_split(const Dataset& ds, int var, const MobConfig& cfg, SplitRule& rule) {
    const long min_ev = detail::resolve_min_events(cfg, ds.k_max, ds.n_x());
    detail::SplitScan scan;
    if (ds.z_schema[var].kind == ZKind::numeric) {
        scan = detail::scan_numeric(ds, var, cfg.min_subjects, min_ev, cfg.link, cfg.threads,
                                    cfg.exhaustive_split, cfg.split_grid, cfg.split_refine);
    } else {
        scan = detail::scan_categorical(ds, var, cfg.min_subjects, min_ev, cfg.link, cfg.threads);
    }
    if (scan.found) rule = scan.rule;
    return scan.found;
}

inline bool route_left(const SplitRule& rule, double z_value) {
    if (rule.kind == ZKind::numeric) return z_value <= rule.cutpoint;
    const int code = static_cast<int>(z_value);
    return std::find(rule.left_levels.begin(), rule.left_levels.end(), code) !=
           rule.left_levels.end();
}

namespace detail {

inline int grow_node(MobTree& tree, const MobConfig& cfg, const Dataset& node_ds,
                     const AugmentedDataset& aug, FittedHazardModel model, int depth) {
    const int idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    {
        MobNode& node = tree.nodes[idx];
        node.id = idx + 1;
        node.depth = depth;
        node.n_subjects = static_cast<long>(node_ds.size());
        node.n_events = node_ds.n_events();
        node.subject_ids.reserve(node_ds.size());
        for (const auto& s : node_ds.subjects) node.subject_ids.push_back(s.id);
        node.model = std::move(model);
        node.lt = life_table(node_ds);
    }

    if (depth >= cfg.max_depth) {
        tree.nodes[idx].stop_reason = "depth";
        return idx;
    }
    const long min_ev = resolve_min_events(cfg, node_ds.k_max, node_ds.n_x());
    if (tree.nodes[idx].n_subjects < 2 * cfg.min_subjects ||
        tree.nodes[idx].n_events < 2 * min_ev) {
        tree.nodes[idx].stop_reason = "size";
        return idx;
    }

    BatteryConfig bat;
    bat.method = cfg.method;
    bat.cov = cfg.cov;
    bat.trim = cfg.trim;
    bat.n_perms = cfg.n_perms;
    bat.seed = derive_seed(cfg.seed, {kTagNode, static_cast<std::uint64_t>(idx + 1)});
    bat.alpha = cfg.alpha;
    bat.p_estimator = cfg.p_estimator;
    bat.perm_mode = cfg.perm_mode;
    bat.tables = cfg.tables;
    bat.table_grid = cfg.table_grid;
    bat.table_reps = cfg.table_reps;
    bat.threads = cfg.threads;
    BatteryResult bres = run_battery(node_ds, aug, tree.nodes[idx].model, bat);
    tree.nodes[idx].tests = bres.tests;
    tree.nodes[idx].q = bres.q;
    if (!bres.reject) {
        tree.nodes[idx].stop_reason = "significance";
        return idx;
    }

    SplitRule rule;
    if (!best_split(node_ds, bres.best_variable, cfg, rule)) {
        tree.nodes[idx].stop_reason = "size";  // no admissible split point
        return idx;
    }

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i = 0; i < node_ds.size(); ++i) {
        if (route_left(rule, node_ds.subjects[i].z[rule.var_index]))
            left_idx.push_back(i);
        else
            right_idx.push_back(i);
    }
    Dataset left_ds = subset(node_ds, left_idx);
    Dataset right_ds = subset(node_ds, right_idx);

    AugmentedDataset left_aug, right_aug;
    FittedHazardModel left_model, right_model;
    try {
        left_aug = augment(left_ds);
        right_aug = augment(right_ds);
        left_model = fit(left_aug, left_ds, make_spec(left_aug, left_ds, cfg.link));
        right_model = fit(right_aug, right_ds, make_spec(right_aug, right_ds, cfg.link));
    } catch (const NumericError&) {
        tree.nodes[idx].stop_reason = "fit-failure";
        return idx;
    }

    tree.nodes[idx].terminal = false;
    tree.nodes[idx].split = rule;
    tree.nodes[idx].stop_reason.clear();
    const int left_node =
        grow_node(tree, cfg, left_ds, left_aug, std::move(left_model), depth + 1);
    const int right_node =
        grow_node(tree, cfg, right_ds, right_aug, std::move(right_model), depth + 1);
    tree.nodes[idx].left_child = left_node;
    tree.nodes[idx].right_child = right_node;
    return idx;
}

}  // namespace detail

inline MobTree grow(const Dataset& dataset, const MobConfig& cfg) {
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
    if (cfg.max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (cfg.min_subjects < 1) throw ConfigError("min_subjects must be >= 1");
    Dataset ds = validate(dataset);
    MobTree tree;
    tree.k_max = ds.k_max;
    tree.link = cfg.link;
    tree.method = cfg.method;
    tree.alpha = cfg.alpha;
    tree.x_names = ds.x_names;
    tree.z_schema = ds.z_schema;
    AugmentedDataset aug = augment(ds);
    ModelSpec spec = make_spec(aug, ds, cfg.link);
    FittedHazardModel root_model = fit(aug, ds, spec);  // root failure is fatal
    detail::grow_node(tree, cfg, ds, aug, std::move(root_model), 1);
    return tree;
}

struct Prediction {
    int node_id = 0;
    std::vector<double> hazard;    // t = 1..k_max-1; 0 where the node has no rows
    std::vector<double> survival;  // S(t) = prod_{s<=t} (1 - hazard_s)
};

inline Prediction predict(const MobTree& tree, const std::vector<double>& z) {
    if (z.size() != tree.z_schema.size()) throw DataError("z vector does not match schema");
    int idx = 0;
    for (;;) {
        const MobNode& node = tree.nodes[idx];
        if (node.terminal) break;
        if (node.split.kind == ZKind::categorical) {
            const int code = static_cast<int>(z[node.split.var_index]);
            const auto& levels = tree.z_schema[node.split.var_index].levels;
            if (code < 0 || code >= static_cast<int>(levels.size()))
                throw DataError("unseen categorical level for '" + node.split.variable + "'");
            // A schema level that never reached this split has no routing rule.
            const bool known =
                std::find(node.split.left_levels.begin(), node.split.left_levels.end(), code) !=
                    node.split.left_levels.end() ||
                std::find(node.split.right_levels.begin(), node.split.right_levels.end(), code) !=
                    node.split.right_levels.end();
            if (!known)
                throw DataError("categorical level '" + levels[code] + "' unseen at split on '" +
                                node.split.variable + "'");
        }
        idx = route_left(node.split, z[node.split.var_index]) ? node.left_child
                                                             : node.right_child;
    }
    const MobNode& leaf = tree.nodes[idx];
    Prediction pred;
    pred.node_id = leaf.id;
    const int kk = tree.k_max - 1;
    pred.hazard.assign(kk, 0.0);
    pred.survival.assign(kk, 1.0);
    double surv = 1.0;
    for (int t = 1; t <= kk; ++t) {
        double h = 0.0;
        if (t <= leaf.model.spec.n_time) h = link_h(tree.link, leaf.model.theta[t - 1]);
        surv *= 1.0 - h;
        pred.hazard[t - 1] = h;
        pred.survival[t - 1] = surv;
    }
    return pred;
}

}  // namespace mobds
