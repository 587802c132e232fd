#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mobds/errors.hpp"

namespace mobds {

enum class ZKind { numeric, categorical };

struct ZVariable {
    std::string name;
    ZKind kind = ZKind::numeric;
    std::vector<std::string> levels;  // categorical only; code = index into this

    int code_of(const std::string& label) const {
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (levels[i] == label) return static_cast<int>(i);
        }
        return -1;
    }
};

// One subject: observed discrete time T~ = min(T, C), status delta, model
// covariates x, partitioning covariates z. Categorical z values hold level codes.
struct SubjectRecord {
    long id = 0;
    int obs_time = 0;
    int status = 0;
    std::vector<double> x;
    std::vector<double> z;
};

struct Dataset {
    std::vector<SubjectRecord> subjects;
    int k_max = 0;  // 0 = infer from data in validate()
    std::vector<std::string> x_names;
    std::vector<ZVariable> z_schema;

    std::size_t size() const { return subjects.size(); }
    int n_x() const { return static_cast<int>(x_names.size()); }
    int n_z() const { return static_cast<int>(z_schema.size()); }

    long n_events() const {
        long d = 0;
        for (const auto& s : subjects) d += s.status;
        return d;
    }
};

inline Dataset validate(Dataset ds) {
    if (ds.subjects.empty()) throw DataError("empty dataset");
    const std::size_t p = ds.x_names.size();
    const std::size_t q = ds.z_schema.size();
    int max_time = 0;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& s = ds.subjects[i];
        const std::string where = "subject " + std::to_string(s.id);
        if (s.obs_time < 1) throw DataError("non-positive time (" + where + ")");
        if (s.status != 0 && s.status != 1) throw DataError("invalid status (" + where + ")");
        if (s.x.size() != p || s.z.size() != q)
            throw DataError("ragged covariate vectors (" + where + ")");
        for (double v : s.x)
            if (!std::isfinite(v)) throw DataError("missing or non-finite x value (" + where + ")");
        for (std::size_t l = 0; l < q; ++l) {
            double v = s.z[l];
            if (!std::isfinite(v))
                throw DataError("missing or non-finite z value (" + where + ")");
            if (ds.z_schema[l].kind == ZKind::categorical) {
                double iv = std::floor(v);
                if (iv != v || v < 0 || v >= static_cast<double>(ds.z_schema[l].levels.size()))
                    throw DataError("categorical code out of range for '" +
                                    ds.z_schema[l].name + "' (" + where + ")");
            }
        }
        max_time = std::max(max_time, s.obs_time);
    }
    if (ds.k_max == 0) ds.k_max = max_time;
    if (max_time > ds.k_max)
        throw DataError("obs_time " + std::to_string(max_time) + " exceeds k_max " +
                        std::to_string(ds.k_max));
    return ds;
}

// Person-period expansion, one row per (subject, time at risk), stored as
// struct-of-arrays. Subject blocks are contiguous with t_star = 1..obs_time.
struct AugmentedDataset {
    std::vector<int32_t> subject_idx;   // index into Dataset::subjects
    std::vector<int32_t> t_star;
    std::vector<int8_t> y;
    std::vector<std::size_t> subject_offsets;  // size N+1, row range per subject
    std::size_t n = 0;
    int k_max = 0;

    std::size_t block_rows(std::size_t i) const {
        return subject_offsets[i + 1] - subject_offsets[i];
    }
};

inline AugmentedDataset augment(const Dataset& ds) {
    AugmentedDataset aug;
    aug.k_max = ds.k_max;
    std::size_t n = 0;
    for (const auto& s : ds.subjects) n += static_cast<std::size_t>(s.obs_time);
    aug.subject_idx.reserve(n);
    aug.t_star.reserve(n);
    aug.y.reserve(n);
    aug.subject_offsets.reserve(ds.size() + 1);
    aug.subject_offsets.push_back(0);
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& s = ds.subjects[i];
        for (int t = 1; t <= s.obs_time; ++t) {
            aug.subject_idx.push_back(static_cast<int32_t>(i));
            aug.t_star.push_back(t);
            aug.y.push_back(t == s.obs_time && s.status == 1 ? 1 : 0);
        }
        aug.subject_offsets.push_back(aug.subject_idx.size());
    }
    aug.n = n;
    return aug;
}

struct LifeTable {
    std::vector<int> time;       // 1-based, truncated at the first empty risk set
    std::vector<long> at_risk;   // n_t
    std::vector<long> events;    // d_t
    std::vector<double> hazard;  // d_t / n_t
    std::vector<double> survival;  // prod_{s<=t} (1 - hazard_s), S(0) = 1 implicit
};

inline LifeTable life_table(const Dataset& ds) {
    LifeTable lt;
    double surv = 1.0;
    for (int t = 1; t <= ds.k_max; ++t) {
        long n_t = 0, d_t = 0;
        for (const auto& s : ds.subjects) {
            if (s.obs_time >= t) {
                ++n_t;
                if (s.obs_time == t && s.status == 1) ++d_t;
            }
        }
        if (n_t == 0) break;
        double h = static_cast<double>(d_t) / static_cast<double>(n_t);
        surv *= 1.0 - h;
        lt.time.push_back(t);
        lt.at_risk.push_back(n_t);
        lt.events.push_back(d_t);
        lt.hazard.push_back(h);
        lt.survival.push_back(surv);
    }
    return lt;
}

// Per-time (n_t, d_t) counts up to k_max - 1, the sufficient statistics of the
// intercept-only model. Used by the closed-form split objective.
struct TimeCounts {
    std::vector<long> at_risk;
    std::vector<long> events;
    long at_horizon = 0;  // subjects observed through t = k_max (zero-design rows)
};

inline TimeCounts time_counts(const Dataset& ds) {
    TimeCounts tc;
    int kk = std::max(ds.k_max - 1, 0);
    tc.at_risk.assign(kk, 0);
    tc.events.assign(kk, 0);
    for (const auto& s : ds.subjects) {
        int top = std::min(s.obs_time, kk);
        for (int t = 1; t <= top; ++t) ++tc.at_risk[t - 1];
        if (s.obs_time <= kk && s.status == 1) ++tc.events[s.obs_time - 1];
        if (s.obs_time > kk) ++tc.at_horizon;
    }
    return tc;
}

inline Dataset collapse_tail(Dataset ds, int from_time) {
    if (from_time <= 1 || from_time > ds.k_max)
        throw ConfigError("collapse point " + std::to_string(from_time) +
                          " out of range (2.." + std::to_string(ds.k_max) + ")");
    for (auto& s : ds.subjects) s.obs_time = std::min(s.obs_time, from_time);
    ds.k_max = from_time;
    return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& which) {
    Dataset out;
    out.k_max = ds.k_max;
    out.x_names = ds.x_names;
    out.z_schema = ds.z_schema;
    out.subjects.reserve(which.size());
    for (auto i : which) out.subjects.push_back(ds.subjects[i]);
    return out;
}

}  // namespace mobds
