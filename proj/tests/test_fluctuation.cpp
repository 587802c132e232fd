#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <random>

#include "mobds/data.hpp"
#include "mobds/fluctuation.hpp"
#include "mobds/glm.hpp"
#include "mobds/rng.hpp"
#include "mobds/suplm_table.hpp"

using namespace mobds;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::ContainsSubstring;

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
        ds.subjects.push_back(s);
    }
    return validate(ds);
}

struct FitBundle {
    Dataset ds;
    AugmentedDataset aug;
    FittedHazardModel model;
};

FitBundle fit_random(Rng& rng, long n, int k, int p) {
    FitBundle b;
    b.ds = random_survival(rng, n, k, p);
    b.aug = augment(b.ds);
    ModelSpec spec = make_spec(b.aug, b.ds, Link::logit);
    b.model = fit(b.aug, b.ds, spec);
    return b;
}

// Per-subject values expanded to one entry per augmented row.
std::vector<double> expand_rows(const AugmentedDataset& aug, const std::vector<double>& per_subj) {
    std::vector<double> out(aug.n);
    for (std::size_t r = 0; r < aug.n; ++r) out[r] = per_subj[aug.subject_idx[r]];
    return out;
}

}  // namespace

TEST_CASE("fluctuation process follows the scaled cumulative sums and ends at zero") {
    Rng rng(501);
    FitBundle b = fit_random(rng, 400, 4, 1);
    std::vector<double> zs(b.ds.size());
    for (auto& v : zs) v = rng.normal();
    std::vector<double> z = expand_rows(b.aug, zs);

    for (CovEstimator est : {CovEstimator::opg, CovEstimator::sandwich}) {
        FluctuationProcess proc = efp(b.model, z, est);
        REQUIRE(proc.n == b.model.n_rows);
        REQUIRE(proc.d == b.model.spec.dim());

        // Scores sum to zero at the MLE, so W(1) vanishes coordinatewise.
        REQUIRE(proc.process.row(proc.n - 1).cwiseAbs().maxCoeff() < 1e-6);

        // Boundaries are strictly increasing and close the process.
        REQUIRE(!proc.boundaries.empty());
        for (std::size_t i = 1; i < proc.boundaries.size(); ++i)
            REQUIRE(proc.boundaries[i] > proc.boundaries[i - 1]);
        REQUIRE(proc.boundaries.back() == proc.n);

        // Re-derive the process directly from the definition.
        Eigen::MatrixXd scaler = score_scaler(b.model, est);
        std::vector<std::size_t> order(proc.n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t c) { return z[a] < z[c]; });
        Eigen::VectorXd cum = Eigen::VectorXd::Zero(proc.d);
        const double root_n = std::sqrt(static_cast<double>(proc.n));
        for (std::size_t r = 0; r < proc.n; ++r) {
            cum += b.model.scores.row(order[r]).transpose();
            Eigen::VectorXd expected = scaler * cum / root_n;
            REQUIRE((proc.process.row(r).transpose() - expected).cwiseAbs().maxCoeff() < 1e-10);
        }
    }

    std::vector<double> bad(z.begin(), z.end() - 1);
    REQUIRE_THROWS_AS(efp(b.model, bad), DataError);
}

TEST_CASE("fluctuation process is invariant under increasing transforms and merges ties") {
    Rng rng(502);
    FitBundle b = fit_random(rng, 150, 4, 0);

    SECTION("strictly increasing transform leaves the process unchanged") {
        std::vector<double> zs(b.ds.size());
        for (auto& v : zs) v = rng.normal();
        std::vector<double> z = expand_rows(b.aug, zs);
        std::vector<double> zt = z;
        for (auto& v : zt) v = std::atan(v) * 3.0 + 1.0;
        FluctuationProcess p1 = efp(b.model, z);
        FluctuationProcess p2 = efp(b.model, zt);
        REQUIRE(p1.boundaries == p2.boundaries);
        REQUIRE((p1.process - p2.process).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("tie groups produce one boundary per distinct value") {
        std::vector<double> zs(b.ds.size());
        for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = static_cast<double>(i % 3);
        std::vector<double> z = expand_rows(b.aug, zs);
        FluctuationProcess proc = efp(b.model, z);
        REQUIRE(proc.boundaries.size() == 3);
        std::vector<std::size_t> counts(3, 0);
        for (double v : z) ++counts[static_cast<std::size_t>(v)];
        REQUIRE(proc.boundaries[0] == counts[0]);
        REQUIRE(proc.boundaries[1] == counts[0] + counts[1]);
        REQUIRE(proc.boundaries[2] == proc.n);
    }
}

TEST_CASE("zero scores give a flat fluctuation process") {
    FittedHazardModel m;
    m.spec.link = Link::logit;
    m.spec.n_time = 2;
    m.spec.n_x = 0;
    m.n_rows = 6;
    m.scores = Eigen::MatrixXd::Zero(6, 2);
    m.meat = Eigen::MatrixXd::Zero(2, 2);
    m.bread = Eigen::MatrixXd::Identity(2, 2);
    std::vector<double> z = {3, 1, 2, 5, 4, 6};
    for (CovEstimator est : {CovEstimator::opg, CovEstimator::sandwich}) {
        FluctuationProcess proc = efp(m, z, est);
        REQUIRE(proc.process.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("suplm matches the hand-computed maximum") {
    // n = 4, d = 1, W = (0.1, 0.3, 0.0) at m = 1/4, 1/2, 3/4; the last
    // boundary (m = 1) lies outside the default window. The maximum is
    // 0.3^2 / (0.5 * 0.5) = 0.36 at m = 1/2.
    FluctuationProcess proc;
    proc.n = 4;
    proc.d = 1;
    proc.process.resize(4, 1);
    proc.process << 0.1, 0.3, 0.0, 0.0;
    proc.boundaries = {1, 2, 3, 4};

    REQUIRE_THAT(suplm(proc), WithinAbs(0.36, 1e-12));
    REQUIRE_THAT(suplm(proc, {0.4, 0.6}), WithinAbs(0.36, 1e-12));
    // Window covering only m = 1/4.
    REQUIRE_THAT(suplm(proc, {0.2, 0.3}), WithinAbs(0.01 / (0.25 * 0.75), 1e-12));
    REQUIRE_THROWS_WITH(suplm(proc, {0.26, 0.49}),
                        ContainsSubstring("no evaluation points in trimming window"));
    REQUIRE_THROWS_AS(suplm(proc, {0.9, 0.1}), ConfigError);
    REQUIRE_THROWS_AS(suplm(proc, {0.0, 0.9}), ConfigError);
}

TEST_CASE("suplm keeps evaluation points exactly on the trim boundary") {
    FluctuationProcess proc;
    proc.n = 10;
    proc.d = 1;
    proc.process = Eigen::MatrixXd::Zero(10, 1);
    proc.process(0, 0) = 0.5;  // m = 0.1, the window edge
    proc.boundaries.resize(10);
    std::iota(proc.boundaries.begin(), proc.boundaries.end(), std::size_t{1});
    REQUIRE_THAT(suplm(proc), WithinAbs(0.25 / (0.1 * 0.9), 1e-12));
}

TEST_CASE("categorical statistic matches brute force and is label-invariant") {
    Rng rng(503);
    FitBundle b = fit_random(rng, 300, 4, 1);
    const int d = b.model.spec.dim();
    std::vector<double> codes_subj(b.ds.size());
    for (std::size_t i = 0; i < codes_subj.size(); ++i)
        codes_subj[i] = static_cast<double>(rng.bounded(3));
    std::vector<int> cats(b.model.n_rows);
    for (std::size_t r = 0; r < b.model.n_rows; ++r)
        cats[r] = static_cast<int>(codes_subj[b.aug.subject_idx[r]]);

    CatStatResult res = cat_stat(b.model, cats);
    REQUIRE(res.n_categories == 3);
    REQUIRE(res.df == d * 2);
    REQUIRE(res.statistic >= 0.0);

    SECTION("brute-force recomputation") {
        Eigen::MatrixXd scaler = score_scaler(b.model, CovEstimator::sandwich);
        const double n = static_cast<double>(b.model.n_rows);
        double stat = 0.0;
        for (int c = 0; c < 3; ++c) {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
            long cnt = 0;
            for (std::size_t r = 0; r < b.model.n_rows; ++r)
                if (cats[r] == c) {
                    sum += b.model.scores.row(r).transpose();
                    ++cnt;
                }
            REQUIRE(cnt > 0);
            stat += (n / static_cast<double>(cnt)) * (scaler * sum / std::sqrt(n)).squaredNorm();
        }
        REQUIRE_THAT(res.statistic, WithinAbs(stat, 1e-10));
    }

    SECTION("permuting the label codes changes nothing") {
        std::vector<int> relabeled(cats.size());
        const int map[3] = {2, 0, 1};
        for (std::size_t r = 0; r < cats.size(); ++r) relabeled[r] = map[cats[r]];
        CatStatResult res2 = cat_stat(b.model, relabeled);
        REQUIRE_THAT(res2.statistic, WithinAbs(res.statistic, 1e-12));
        REQUIRE(res2.df == res.df);
    }

    SECTION("gaps in the code range drop out as empty categories") {
        std::vector<int> gapped(cats.size());
        const int map[3] = {0, 4, 7};
        for (std::size_t r = 0; r < cats.size(); ++r) gapped[r] = map[cats[r]];
        CatStatResult res2 = cat_stat(b.model, gapped);
        REQUIRE_THAT(res2.statistic, WithinAbs(res.statistic, 1e-12));
        REQUIRE(res2.n_categories == 3);
        REQUIRE(res2.df == res.df);
    }

    SECTION("degenerate inputs are rejected") {
        std::vector<int> one(b.model.n_rows, 0);
        REQUIRE_THROWS_AS(cat_stat(b.model, one), DataError);
        std::vector<int> neg = cats;
        neg[0] = -1;
        REQUIRE_THROWS_AS(cat_stat(b.model, neg), DataError);
        std::vector<int> short_cats(cats.begin(), cats.end() - 1);
        REQUIRE_THROWS_AS(cat_stat(b.model, short_cats), DataError);
    }
}

TEST_CASE("two-category statistic uses d degrees of freedom") {
    Rng rng(504);
    FitBundle b = fit_random(rng, 200, 3, 0);
    std::vector<int> cats(b.model.n_rows);
    for (std::size_t r = 0; r < cats.size(); ++r)
        cats[r] = b.aug.subject_idx[r] % 2 == 0 ? 0 : 1;
    CatStatResult res = cat_stat(b.model, cats);
    REQUIRE(res.n_categories == 2);
    REQUIRE(res.df == b.model.spec.dim());
}

TEST_CASE("chi-squared p-values match known quantiles") {
    REQUIRE_THAT(chisq_pvalue(3.841459, 1), WithinAbs(0.05, 1e-6));
    REQUIRE_THAT(chisq_pvalue(5.991465, 2), WithinAbs(0.05, 1e-6));
    REQUIRE_THAT(chisq_pvalue(6.634897, 1), WithinAbs(0.01, 1e-6));
    REQUIRE_THAT(chisq_pvalue(0.0, 3), WithinAbs(1.0, 1e-12));
    REQUIRE(chisq_pvalue(5.0, 1) < chisq_pvalue(4.0, 1));
    REQUIRE_THROWS_AS(chisq_pvalue(1.0, 0), ConfigError);
    REQUIRE_THROWS_AS(chisq_pvalue(-0.5, 1), NumericError);
}

TEST_CASE("suplm reference table reproduces chi-squared at a single evaluation point") {
    // With a 10-point grid and window [0.45, 0.55] the functional is evaluated
    // only at m = 1/2, where B(m)^2 / (m(1-m)) is exactly chi-squared(d).
    SupLmTable t1 = generate_suplm_table(1, {0.45, 0.55}, 10, 20000);
    REQUIRE_THAT(t1.pvalue(3.841459), WithinAbs(0.05, 0.008));
    REQUIRE_THAT(t1.pvalue(6.634897), WithinAbs(0.01, 0.004));

    SupLmTable t3 = generate_suplm_table(3, {0.45, 0.55}, 10, 20000);
    REQUIRE_THAT(t3.pvalue(7.814728), WithinAbs(0.05, 0.008));
}

TEST_CASE("suplm reference table is a pure function of its parameters") {
    SupLmTable a = generate_suplm_table(2, {}, 200, 2000, 1);
    SupLmTable b = generate_suplm_table(2, {}, 200, 2000, 4);
    SupLmTable c = generate_suplm_table(2, {}, 200, 2000, 0);
    REQUIRE(a.sorted_stats == b.sorted_stats);
    REQUIRE(a.sorted_stats == c.sorted_stats);
    REQUIRE(std::is_sorted(a.sorted_stats.begin(), a.sorted_stats.end()));
    REQUIRE(a.sorted_stats.front() > 0.0);

    // Self-consistency of quantile and p-value lookups.
    for (double p : {0.10, 0.05, 0.01}) {
        double q = a.quantile_upper(p);
        REQUIRE_THAT(a.pvalue(q), WithinAbs(p, 2.0 / a.reps));
    }
    REQUIRE(a.quantile_upper(0.01) > a.quantile_upper(0.05));
    REQUIRE(a.quantile_upper(0.05) > a.quantile_upper(0.10));
    REQUIRE_THROWS_AS(generate_suplm_table(0, {}), ConfigError);
    REQUIRE_THROWS_AS(generate_suplm_table(65, {}), ConfigError);
}

TEST_CASE("suplm table agrees with an independent finer-grid simulation") {
    const int d = 2, grid = 400, reps = 4000;
    const double lo = 0.1, hi = 0.9;
    SupLmTable table = generate_suplm_table(d, {lo, hi}, 200, 4000);

    std::mt19937_64 gen(987654321);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> stats(reps);
    std::vector<double> w(static_cast<std::size_t>(grid) * d);
    for (int rep = 0; rep < reps; ++rep) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(grid));
        std::vector<double> run(d, 0.0);
        for (int g = 0; g < grid; ++g)
            for (int j = 0; j < d; ++j) {
                run[j] += nd(gen) * scale;
                w[static_cast<std::size_t>(g) * d + j] = run[j];
            }
        double best = 0.0;
        for (int g = 1; g < grid; ++g) {
            const double m = static_cast<double>(g) / grid;
            if (m < lo || m > hi) continue;
            double norm2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double b = w[static_cast<std::size_t>(g - 1) * d + j] - m * run[j];
                norm2 += b * b;
            }
            best = std::max(best, norm2 / (m * (1.0 - m)));
        }
        stats[rep] = best;
    }
    std::sort(stats.begin(), stats.end());
    for (double p : {0.10, 0.05}) {
        double q_ind = stats[static_cast<std::size_t>(std::ceil((1.0 - p) * reps))];
        double q_tab = table.quantile_upper(p);
        REQUIRE(std::abs(q_tab - q_ind) < 0.08 * std::max(q_tab, q_ind));
    }
}

TEST_CASE("suplm table round trips through disk and the cache reuses it") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "mobds_fluct_tbl";
    fs::remove_all(dir);

    SupLmTable t = generate_suplm_table(2, {}, 100, 500);
    fs::create_directories(dir);
    fs::path file = dir / "t.bin";
    REQUIRE(save_suplm_table(t, file.string()));

    SupLmTable loaded;
    REQUIRE(load_suplm_table(loaded, file.string(), 2, 100, 900, 100, 500));
    REQUIRE(loaded.sorted_stats == t.sorted_stats);
    REQUIRE(loaded.d == 2);
    SupLmTable wrong;
    REQUIRE_FALSE(load_suplm_table(wrong, file.string(), 3, 100, 900, 100, 500));
    REQUIRE_FALSE(load_suplm_table(wrong, (dir / "absent.bin").string(), 2, 100, 900, 100, 500));

    SECTION("disk-backed cache persists across instances") {
        fs::path cdir = dir / "cache";
        {
            SupLmTableCache cache(cdir.string());
            const SupLmTable& fresh = cache.get(2, {}, 100, 500);
            REQUIRE(fresh.sorted_stats == t.sorted_stats);
            REQUIRE(fs::exists(cdir / detail::table_filename(2, 100, 900, 100, 500)));
            // Memoized: same object on repeat lookup.
            REQUIRE(&cache.get(2, {}, 100, 500) == &fresh);
        }
        SupLmTableCache second(cdir.string());
        REQUIRE(second.get(2, {}, 100, 500).sorted_stats == t.sorted_stats);
    }

    SECTION("memory-only cache touches no files") {
        SupLmTableCache cache;
        REQUIRE(cache.get(2, {}, 100, 500).sorted_stats == t.sorted_stats);
    }
    fs::remove_all(dir);
}
