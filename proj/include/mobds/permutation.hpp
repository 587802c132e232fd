#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/rng.hpp"

namespace mobds {

// Step 1*: permute the (t~, delta, x) triples against the z vectors. Slot i
// keeps its z values (and id); the survival data comes from subject pi[i].
inline Dataset apply_permutation(const Dataset& ds, const std::vector<int>& pi) {
    if (pi.size() != ds.size()) throw DataError("permutation length mismatch");
    Dataset out = ds;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        int j = pi[i];
        if (j < 0 || static_cast<std::size_t>(j) >= ds.size())
            throw DataError("permutation index out of range");
        out.subjects[i].obs_time = ds.subjects[j].obs_time;
        out.subjects[i].status = ds.subjects[j].status;
        out.subjects[i].x = ds.subjects[j].x;
    }
    return out;
}

inline Dataset permute_once(const Dataset& ds, std::uint64_t seed) {
    if (ds.size() < 2) throw DataError("need at least 2 subjects to permute");
    Rng rng(seed);
    return apply_permutation(ds, rng.permutation(static_cast<int>(ds.size())));
}

enum class PEstimator { randomized, addone };
enum class PermMode { fast, refit };

inline std::string p_estimator_name(PEstimator e) {
    return e == PEstimator::randomized ? "randomized" : "addone";
}

inline PEstimator parse_p_estimator(const std::string& s) {
    if (s == "randomized") return PEstimator::randomized;
    if (s == "addone") return PEstimator::addone;
    throw ConfigError("unknown p-value estimator '" + s + "'");
}

struct PermutationPlan {
    int n_perms = 1000;
    std::uint64_t base_seed = 0;
    PEstimator estimator = PEstimator::randomized;
    PermMode mode = PermMode::fast;
    int max_attempts = 3;
    double abort_fail_frac = 0.10;
    // Test hook: pretend the refit for (replicate, attempt) failed.
    std::function<bool(int, int)> fail_hook;
};

// Per z-variable null statistics in replicate order (failed draws removed).
struct PermutationNull {
    std::vector<std::vector<double>> stats;
    long failures = 0;
};

// Classic add-one estimator: p = (1 + #{stat_b >= observed}) / (B + 1).
inline double perm_pvalue_addone(double observed, const std::vector<double>& nulls) {
    if (nulls.empty()) throw DataError("empty permutation null");
    long ge = 0;
    for (double v : nulls)
        if (v >= observed) ++ge;
    return static_cast<double>(1 + ge) / static_cast<double>(nulls.size() + 1);
}

// Randomized rank estimator: p = (G + u (1 + E)) / (B + 1) with G = #{> obs},
// E = #{= obs}, u uniform on (0,1). Exactly Uniform(0,1) under exchangeability
// for any B, which keeps Bonferroni-adjusted decisions meaningful at small B.
inline double perm_pvalue_randomized(double observed, const std::vector<double>& nulls, double u) {
    if (nulls.empty()) throw DataError("empty permutation null");
    long g = 0, e = 0;
    for (double v : nulls) {
        if (v > observed) ++g;
        else if (v == observed) ++e;
    }
    return (static_cast<double>(g) + u * (1.0 + static_cast<double>(e))) /
           static_cast<double>(nulls.size() + 1);
}

namespace detail {
inline constexpr std::uint64_t kTagPerm = 0x7065726d75746531ull;
inline constexpr std::uint64_t kTagU = 0x756e69666f726d31ull;

inline std::uint64_t perm_seed(std::uint64_t base, int rep, int attempt) {
    if (attempt == 0)
        return derive_seed(base, {kTagPerm, static_cast<std::uint64_t>(rep)});
    return derive_seed(base, {kTagPerm, static_cast<std::uint64_t>(rep),
                              static_cast<std::uint64_t>(attempt)});
}

inline double u_draw(std::uint64_t base, int variable) {
    Rng rng(derive_seed(base, {kTagU, static_cast<std::uint64_t>(variable)}));
    return rng.uniform();
}
}  // namespace detail

}  // namespace mobds
