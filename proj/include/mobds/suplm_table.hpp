#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mobds/errors.hpp"
#include "mobds/fluctuation.hpp"
#include "mobds/parallel.hpp"
#include "mobds/rng.hpp"

namespace mobds {

// Simulated null distribution of the trimmed supLM functional of a
// d-dimensional Brownian bridge. Generation uses a fixed internal seed so the
// table is a pure function of its parameters.
struct SupLmTable {
    int d = 0;
    int trim_lo_milli = 0;
    int trim_hi_milli = 0;
    int grid = 0;
    int reps = 0;
    std::vector<double> sorted_stats;

    double pvalue(double statistic) const {
        if (!(statistic >= 0.0)) throw NumericError("invalid supLM statistic");
        auto it = std::lower_bound(sorted_stats.begin(), sorted_stats.end(), statistic);
        return static_cast<double>(sorted_stats.end() - it) / static_cast<double>(reps);
    }

    // Smallest tabulated value with upper-tail probability <= p.
    double quantile_upper(double p) const {
        std::size_t k = static_cast<std::size_t>(
            std::ceil((1.0 - p) * static_cast<double>(reps)));
        if (k >= sorted_stats.size()) k = sorted_stats.size() - 1;
        return sorted_stats[k];
    }
};

inline constexpr std::uint64_t kSupLmTableSeed = 0x6d6f626474616265ull;
inline constexpr int kTableGrid = 1000;
inline constexpr int kTableReps = 50000;

inline int trim_milli(double t) { return static_cast<int>(std::lround(t * 1000.0)); }

inline SupLmTable generate_suplm_table(int d, TrimWindow trim, int grid = kTableGrid,
                                       int reps = kTableReps, int threads = 0) {
    if (d < 1 || d > 64) throw ConfigError("supLM table dimension out of range (1..64)");
    if (!(0.0 < trim.lo && trim.lo < trim.hi && trim.hi < 1.0))
        throw ConfigError("invalid trimming window");
    SupLmTable table;
    table.d = d;
    table.trim_lo_milli = trim_milli(trim.lo);
    table.trim_hi_milli = trim_milli(trim.hi);
    table.grid = grid;
    table.reps = reps;
    table.sorted_stats.assign(reps, 0.0);

    const double lo = table.trim_lo_milli / 1000.0;
    const double hi = table.trim_hi_milli / 1000.0;
    parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t rep) {
        Rng rng(derive_seed(kSupLmTableSeed,
                            {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(table.trim_lo_milli),
                             static_cast<std::uint64_t>(table.trim_hi_milli), static_cast<std::uint64_t>(grid),
                             static_cast<std::uint64_t>(reps), rep}));
        const double scale = 1.0 / std::sqrt(static_cast<double>(grid));
        std::vector<double> cum(static_cast<std::size_t>(grid) * d);
        std::vector<double> run(d, 0.0);
        for (int g = 0; g < grid; ++g)
            for (int j = 0; j < d; ++j) {
                run[j] += rng.normal() * scale;
                cum[static_cast<std::size_t>(g) * d + j] = run[j];
            }
        double best = 0.0;
        for (int g = 1; g < grid; ++g) {
            const double m = static_cast<double>(g) / static_cast<double>(grid);
            if (m < lo || m > hi) continue;
            double norm2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double b = cum[static_cast<std::size_t>(g - 1) * d + j] - m * run[j];
                norm2 += b * b;
            }
            const double v = norm2 / (m * (1.0 - m));
            if (v > best) best = v;
        }
        table.sorted_stats[rep] = best;
    });
    std::sort(table.sorted_stats.begin(), table.sorted_stats.end());
    return table;
}

namespace detail {
inline constexpr char kTableMagic[9] = "MOBDSTBL";
inline constexpr std::uint32_t kTableVersion = 1;

inline std::string table_filename(int d, int lo_milli, int hi_milli, int grid, int reps) {
    return "suplm_d" + std::to_string(d) + "_t" + std::to_string(lo_milli) + "_" +
           std::to_string(hi_milli) + "_g" + std::to_string(grid) + "_r" + std::to_string(reps) +
           ".bin";
}
}  // namespace detail

inline bool save_suplm_table(const SupLmTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) return false;
    out.write(detail::kTableMagic, 8);
    auto put = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put(detail::kTableVersion);
    put(static_cast<std::uint32_t>(table.d));
    put(static_cast<std::uint32_t>(table.trim_lo_milli));
    put(static_cast<std::uint32_t>(table.trim_hi_milli));
    put(static_cast<std::uint32_t>(table.grid));
    put(static_cast<std::uint32_t>(table.reps));
    out.write(reinterpret_cast<const char*>(table.sorted_stats.data()),
              static_cast<std::streamsize>(table.sorted_stats.size() * sizeof(double)));
    return static_cast<bool>(out);
}

inline bool load_suplm_table(SupLmTable& table, const std::string& path, int d, int lo_milli,
                             int hi_milli, int grid, int reps) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kTableMagic, 8) != 0) return false;
    std::uint32_t fields[6];
    in.read(reinterpret_cast<char*>(fields), sizeof(fields));
    if (!in || fields[0] != detail::kTableVersion) return false;
    if (fields[1] != static_cast<std::uint32_t>(d) ||
        fields[2] != static_cast<std::uint32_t>(lo_milli) ||
        fields[3] != static_cast<std::uint32_t>(hi_milli) ||
        fields[4] != static_cast<std::uint32_t>(grid) ||
        fields[5] != static_cast<std::uint32_t>(reps))
        return false;
    table.d = d;
    table.trim_lo_milli = lo_milli;
    table.trim_hi_milli = hi_milli;
    table.grid = grid;
    table.reps = reps;
    table.sorted_stats.assign(static_cast<std::size_t>(reps), 0.0);
    in.read(reinterpret_cast<char*>(table.sorted_stats.data()),
            static_cast<std::streamsize>(table.sorted_stats.size() * sizeof(double)));
    if (!in) return false;
    return std::is_sorted(table.sorted_stats.begin(), table.sorted_stats.end());
}

// Thread-safe registry of reference tables, backed by an on-disk cache
// directory (empty string = memory only).
class SupLmTableCache {
public:
    explicit SupLmTableCache(std::string dir = "", int threads = 0)
        : dir_(std::move(dir)), threads_(threads) {}

    const SupLmTable& get(int d, TrimWindow trim, int grid = kTableGrid, int reps = kTableReps) {
        const int lo = trim_milli(trim.lo);
        const int hi = trim_milli(trim.hi);
        const Key key{d, lo, hi, grid, reps};
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = tables_.find(key);
        if (it != tables_.end()) return *it->second;
        auto table = std::make_unique<SupLmTable>();
        bool loaded = false;
        std::string path;
        if (!dir_.empty()) {
            std::filesystem::create_directories(dir_);
            path = (std::filesystem::path(dir_) / detail::table_filename(d, lo, hi, grid, reps))
                       .string();
            loaded = load_suplm_table(*table, path, d, lo, hi, grid, reps);
        }
        if (!loaded) {
            *table = generate_suplm_table(d, trim, grid, reps, threads_);
            if (!path.empty()) save_suplm_table(*table, path);
        }
        auto [pos, ok] = tables_.emplace(key, std::move(table));
        (void)ok;
        return *pos->second;
    }

private:
    using Key = std::tuple<int, int, int, int, int>;
    std::string dir_;
    int threads_;
    std::mutex mutex_;
    std::map<Key, std::unique_ptr<SupLmTable>> tables_;
};

}  // namespace mobds
