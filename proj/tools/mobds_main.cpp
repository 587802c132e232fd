// mobds command line: fit trees on CSV survival data, run simulation grids,
// predict from saved trees. Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric.
#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mobds/csv.hpp"
#include "mobds/data.hpp"
#include "mobds/errors.hpp"
#include "mobds/simulation.hpp"
#include "mobds/suplm_table.hpp"
#include "mobds/tree.hpp"
#include "mobds/tree_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mobds::DataError("cannot read '" + path + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

struct SeedChoice {
    std::uint64_t value = 0;
    bool from_flag = false;
};

SeedChoice resolve_seed(std::int64_t flag_seed, bool seed_given) {
    SeedChoice sc;
    if (seed_given) {
        sc.value = static_cast<std::uint64_t>(flag_seed);
        sc.from_flag = true;
    } else {
        std::random_device rd;
        sc.value = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    return sc;
}

struct Manifest {
    std::string command;
    json config = json::object();
    std::map<std::string, std::string> inputs;   // path -> digest
    std::vector<std::string> outputs;            // file names within out_dir
    SeedChoice seed;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void add_input(const std::string& path) { inputs[path] = hex64(fnv1a64_file(path)); }

    void write(const std::string& out_dir) const {
        json j;
        j["command"] = command;
        j["version"] = kVersion;
        j["config"] = config;
        j["seed"] = seed.value;
        j["seed_source"] = seed.from_flag ? "flag" : "entropy";
        j["inputs"] = json::object();
        for (const auto& [path, digest] : inputs) j["inputs"][path] = digest;
        j["outputs"] = outputs;
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        j["wall_time_seconds"] = secs;
        std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
        if (!out) throw mobds::DataError("cannot write manifest in '" + out_dir + "'");
        out << j.dump(2) << "\n";
    }
};

std::string out_path(const std::string& out_dir, const std::string& name) {
    return (fs::path(out_dir) / name).string();
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw mobds::ConfigError("cannot create output directory '" + out_dir + "'");
}

std::string resolve_table_dir(const std::string& flag, const std::string& out_dir) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MOBDS_TABLE_CACHE")) return env;
    return out_path(out_dir, "tables");
}

// ---------------------------------------------------------------------------
// CSV -> Dataset

struct LoadSpec {
    std::string path;
    std::string time_col = "time";
    std::string status_col = "status";
    std::string id_col;
    std::vector<std::string> x_cols;
    std::vector<std::string> z_cols;
    std::vector<std::string> cat_cols;
};

int require_column(const mobds::CsvTable& table, const std::string& name,
                   const std::string& path) {
    int idx = table.column(name);
    if (idx < 0) throw mobds::DataError("column '" + name + "' not found in " + path);
    return idx;
}

mobds::Dataset load_dataset(const LoadSpec& spec) {
    for (const auto& c : spec.cat_cols)
        if (std::find(spec.z_cols.begin(), spec.z_cols.end(), c) == spec.z_cols.end())
            throw mobds::ConfigError("--categorical column '" + c + "' is not in --z-cols");
    mobds::CsvTable table = mobds::read_csv(spec.path);
    int time_idx = require_column(table, spec.time_col, spec.path);
    int status_idx = require_column(table, spec.status_col, spec.path);
    int id_idx = -1;
    if (!spec.id_col.empty()) id_idx = require_column(table, spec.id_col, spec.path);
    std::vector<int> x_idx, z_idx;
    for (const auto& c : spec.x_cols) x_idx.push_back(require_column(table, c, spec.path));
    for (const auto& c : spec.z_cols) z_idx.push_back(require_column(table, c, spec.path));

    mobds::Dataset ds;
    ds.x_names = spec.x_cols;
    for (const auto& c : spec.z_cols) {
        mobds::ZVariable zv;
        zv.name = c;
        zv.kind = std::find(spec.cat_cols.begin(), spec.cat_cols.end(), c) != spec.cat_cols.end()
                      ? mobds::ZKind::categorical
                      : mobds::ZKind::numeric;
        ds.z_schema.push_back(zv);
    }
    ds.subjects.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = spec.path + " row " + std::to_string(r + 2);
        mobds::SubjectRecord s;
        s.id = id_idx >= 0 ? mobds::parse_int(row[id_idx], where)
                           : static_cast<long>(r + 1);
        s.obs_time = static_cast<int>(mobds::parse_int(row[time_idx], where));
        s.status = static_cast<int>(mobds::parse_int(row[status_idx], where));
        for (int idx : x_idx) s.x.push_back(mobds::parse_double(row[idx], where));
        for (std::size_t l = 0; l < z_idx.size(); ++l) {
            mobds::ZVariable& zv = ds.z_schema[l];
            const std::string& cell = row[z_idx[l]];
            if (zv.kind == mobds::ZKind::categorical) {
                int code = zv.code_of(cell);
                if (code < 0) {  // levels in first-appearance order
                    code = static_cast<int>(zv.levels.size());
                    zv.levels.push_back(cell);
                }
                s.z.push_back(code);
            } else {
                s.z.push_back(mobds::parse_double(cell, where));
            }
        }
        ds.subjects.push_back(std::move(s));
    }
    return ds;
}

void export_augmented(const mobds::Dataset& ds, const mobds::AugmentedDataset& aug,
                      const std::string& path) {
    mobds::CsvWriter w(path);
    w.field(std::string("subject_id"));
    w.field(std::string("t_star"));
    w.field(std::string("y"));
    for (const auto& name : ds.x_names) w.field(name);
    for (const auto& zv : ds.z_schema) w.field(zv.name);
    w.endrow();
    for (std::size_t r = 0; r < aug.n; ++r) {
        const auto& s = ds.subjects[aug.subject_idx[r]];
        w.field(s.id);
        w.field(static_cast<int>(aug.t_star[r]));
        w.field(static_cast<int>(aug.y[r]));
        for (double v : s.x) w.field(v);
        for (std::size_t l = 0; l < s.z.size(); ++l) {
            const auto& zv = ds.z_schema[l];
            if (zv.kind == mobds::ZKind::categorical)
                w.field(zv.levels[static_cast<int>(s.z[l])]);
            else
                w.field(s.z[l]);
        }
        w.endrow();
    }
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
    LoadSpec load;
    std::string link = "logit";
    std::string method = "mob-ds";
    double alpha = 0.05;
    int perms = 1000;
    int max_depth = 10;
    long min_node = 20;
    long min_events = -1;
    int collapse_from = 0;
    std::int64_t seed = 0;
    bool seed_given = false;
    std::string out_dir = "mobds-out";
    std::string table_cache;
    std::string cov = "sandwich";
    std::string p_estimator = "randomized";
    int threads = 0;
    bool do_export_augmented = false;
    bool dump_null = false;
};

void run_fit(const FitOpts& opt) {
    ensure_out_dir(opt.out_dir);
    Manifest man;
    man.command = "fit";
    man.seed = resolve_seed(opt.seed, opt.seed_given);
    man.add_input(opt.load.path);

    mobds::Dataset ds = load_dataset(opt.load);
    ds = mobds::validate(std::move(ds));
    if (opt.collapse_from > 0) ds = mobds::collapse_tail(ds, opt.collapse_from);

    mobds::MobConfig cfg;
    cfg.method = mobds::parse_method(opt.method);
    cfg.link = mobds::parse_link(opt.link);
    cfg.alpha = opt.alpha;
    cfg.n_perms = opt.perms;
    cfg.max_depth = opt.max_depth;
    cfg.min_subjects = opt.min_node;
    cfg.min_events = opt.min_events;
    cfg.cov = mobds::parse_cov(opt.cov);
    cfg.p_estimator = mobds::parse_p_estimator(opt.p_estimator);
    cfg.seed = man.seed.value;
    cfg.threads = mobds::resolve_threads(opt.threads);
    mobds::SupLmTableCache tables(resolve_table_dir(opt.table_cache, opt.out_dir), cfg.threads);
    cfg.tables = &tables;

    man.config = {{"data", opt.load.path},
                  {"time_col", opt.load.time_col},
                  {"status_col", opt.load.status_col},
                  {"id_col", opt.load.id_col},
                  {"x_cols", opt.load.x_cols},
                  {"z_cols", opt.load.z_cols},
                  {"categorical", opt.load.cat_cols},
                  {"link", opt.link},
                  {"method", opt.method},
                  {"alpha", opt.alpha},
                  {"perms", opt.perms},
                  {"max_depth", opt.max_depth},
                  {"min_node", opt.min_node},
                  {"min_events", opt.min_events},
                  {"collapse_from", opt.collapse_from},
                  {"cov", opt.cov},
                  {"p_estimator", opt.p_estimator},
                  {"threads", opt.threads}};

    mobds::MobTree tree = mobds::grow(ds, cfg);

    json tj = mobds::tree_to_json(tree);
    tj["manifest"] = "manifest.json";
    {
        std::ofstream out(out_path(opt.out_dir, "tree.json"), std::ios::binary);
        if (!out) throw mobds::DataError("cannot write tree.json");
        out << tj.dump(2) << "\n";
    }
    {
        std::ofstream out(out_path(opt.out_dir, "tree.txt"), std::ios::binary);
        out << mobds::render_text(tree);
    }
    mobds::write_survival_csv(tree, out_path(opt.out_dir, "survival.csv"));
    mobds::write_pvalue_csv(tree, out_path(opt.out_dir, "pvalues.csv"));
    man.outputs = {"tree.json", "tree.txt", "survival.csv", "pvalues.csv"};

    if (opt.do_export_augmented) {
        mobds::AugmentedDataset aug = mobds::augment(ds);
        export_augmented(ds, aug, out_path(opt.out_dir, "augmented.csv"));
        man.outputs.push_back("augmented.csv");
    }
    if (opt.dump_null && cfg.method == mobds::Method::mob_ds) {
        // Re-run the root battery with null retention; same derived seed as
        // the root node, so the statistics match the tree exactly.
        mobds::AugmentedDataset aug = mobds::augment(ds);
        mobds::ModelSpec spec = mobds::make_spec(aug, ds, cfg.link);
        mobds::FittedHazardModel model = mobds::fit(aug, ds, spec);
        mobds::BatteryConfig bc;
        bc.method = cfg.method;
        bc.cov = cfg.cov;
        bc.n_perms = cfg.n_perms;
        bc.alpha = cfg.alpha;
        bc.p_estimator = cfg.p_estimator;
        bc.threads = cfg.threads;
        bc.tables = cfg.tables;
        bc.seed = mobds::derive_seed(cfg.seed, {mobds::detail::kTagNode, 1});
        bc.keep_nulls = true;
        mobds::BatteryResult br = mobds::run_battery(ds, aug, model, bc);
        mobds::CsvWriter w(out_path(opt.out_dir, "null_stats.csv"));
        w.row("variable", "replicate", "statistic");
        for (std::size_t v = 0; v < br.nulls.stats.size(); ++v)
            for (std::size_t b = 0; b < br.nulls.stats[v].size(); ++b)
                w.row(tree.z_schema[v].name, static_cast<long>(b + 1), br.nulls.stats[v][b]);
        man.outputs.push_back("null_stats.csv");
    }
    man.write(opt.out_dir);
    std::cout << mobds::render_text(tree);
    std::cout << "seed " << man.seed.value << " (" << (man.seed.from_flag ? "flag" : "entropy")
              << "); outputs in " << opt.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// simulate

struct SimOpts {
    std::string preset;
    std::string grid_file;
    std::string method = "both";
    std::string link = "logit";
    std::string cov = "sandwich";
    std::string p_estimator = "randomized";
    int reps = -1;
    int perms = -1;
    double alpha = -1.0;
    std::int64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
    std::string out_dir = "mobds-sim";
    std::string table_cache;
    int table_grid = mobds::kTableGrid;
    int table_reps = mobds::kTableReps;
};

void run_simulate(const SimOpts& opt) {
    if (opt.preset.empty() == opt.grid_file.empty())
        throw mobds::ConfigError("pass exactly one of --preset or --grid");
    ensure_out_dir(opt.out_dir);
    Manifest man;
    man.command = "simulate";
    man.seed = resolve_seed(opt.seed, opt.seed_given);

    json grid;
    if (!opt.preset.empty()) {
        grid = mobds::preset_grid(opt.preset);
    } else {
        man.add_input(opt.grid_file);
        std::ifstream in(opt.grid_file);
        if (!in) throw mobds::DataError("cannot read '" + opt.grid_file + "'");
        try {
            in >> grid;
        } catch (const json::exception& e) {
            throw mobds::ConfigError("bad grid file: " + std::string(e.what()));
        }
    }
    if (opt.reps > 0) grid["reps"] = opt.reps;
    if (opt.perms > 0) grid["perms"] = opt.perms;
    if (opt.alpha > 0) grid["alpha"] = opt.alpha;
    grid["seed"] = man.seed.value;
    std::vector<mobds::Scenario> scenarios = mobds::parse_grid(grid);

    mobds::StudyConfig study;
    study.run_mob = opt.method == "both" || opt.method == "mob";
    study.run_mob_ds = opt.method == "both" || opt.method == "mob-ds" || opt.method == "mob_ds";
    if (!study.run_mob && !study.run_mob_ds)
        throw mobds::ConfigError("--method must be mob, mob-ds or both");
    study.link = mobds::parse_link(opt.link);
    study.cov = mobds::parse_cov(opt.cov);
    study.p_estimator = mobds::parse_p_estimator(opt.p_estimator);
    study.threads = mobds::resolve_threads(opt.threads);
    study.table_grid = opt.table_grid;
    study.table_reps = opt.table_reps;
    mobds::SupLmTableCache tables(resolve_table_dir(opt.table_cache, opt.out_dir),
                                  study.threads);
    study.tables = &tables;

    man.config = {{"preset", opt.preset},
                  {"grid_file", opt.grid_file},
                  {"grid", grid},
                  {"method", opt.method},
                  {"link", opt.link},
                  {"cov", opt.cov},
                  {"p_estimator", opt.p_estimator},
                  {"threads", opt.threads},
                  {"table_grid", opt.table_grid},
                  {"table_reps", opt.table_reps}};

    std::vector<mobds::ScenarioReport> reports;
    for (const auto& sc : scenarios) {
        reports.push_back(mobds::run_scenario(sc, study));
        const auto& r = reports.back();
        std::cout << mobds::scenario_label(sc);
        for (const auto& cell : r.cells)
            std::cout << "  " << mobds::method_name(cell.method) << " rate "
                      << mobds::format_double(cell.rate);
        std::cout << "\n";
    }
    mobds::write_report_csv(reports, out_path(opt.out_dir, "report.csv"));
    mobds::write_tails_csv(reports, out_path(opt.out_dir, "tails.csv"));
    man.outputs = {"report.csv", "tails.csv"};
    man.write(opt.out_dir);
    std::cout << "seed " << man.seed.value << "; outputs in " << opt.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
    std::string tree_file;
    std::string data_file;
    std::string out_file = "predictions.csv";
};

void run_predict(const PredictOpts& opt) {
    std::ifstream in(opt.tree_file);
    if (!in) throw mobds::DataError("cannot read '" + opt.tree_file + "'");
    json tj;
    try {
        in >> tj;
    } catch (const json::exception& e) {
        throw mobds::DataError("bad tree file: " + std::string(e.what()));
    }
    mobds::MobTree tree = mobds::tree_from_json(tj);

    mobds::CsvTable table = mobds::read_csv(opt.data_file);
    std::vector<int> z_idx;
    for (const auto& zv : tree.z_schema)
        z_idx.push_back(require_column(table, zv.name, opt.data_file));

    mobds::CsvWriter w(opt.out_file);
    w.field(std::string("row"));
    w.field(std::string("node_id"));
    for (int t = 1; t <= tree.k_max - 1; ++t) w.field("s" + std::to_string(t));
    w.endrow();
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::string where = opt.data_file + " row " + std::to_string(r + 2);
        std::vector<double> z;
        for (std::size_t l = 0; l < tree.z_schema.size(); ++l) {
            const auto& zv = tree.z_schema[l];
            const std::string& cell = table.rows[r][z_idx[l]];
            if (zv.kind == mobds::ZKind::categorical) {
                int code = zv.code_of(cell);
                if (code < 0)
                    throw mobds::DataError("unseen categorical level '" + cell + "' for '" +
                                           zv.name + "' (" + where + ")");
                z.push_back(code);
            } else {
                z.push_back(mobds::parse_double(cell, where));
            }
        }
        mobds::Prediction pred;
        try {
            pred = mobds::predict(tree, z);
        } catch (const mobds::DataError& e) {
            throw mobds::DataError(std::string(e.what()) + " (" + where + ")");
        }
        w.field(static_cast<std::size_t>(r + 1));
        w.field(pred.node_id);
        for (double s : pred.survival) w.field(s);
        w.endrow();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-based recursive partitioning for discrete time-to-event data"};
    app.require_subcommand(1);

    FitOpts fit;
    CLI::App* cfit = app.add_subcommand("fit", "grow a tree from a CSV dataset");
    cfit->add_option("--data", fit.load.path, "input CSV")->required();
    cfit->add_option("--time-col", fit.load.time_col, "discrete time column");
    cfit->add_option("--status-col", fit.load.status_col, "event indicator column");
    cfit->add_option("--id-col", fit.load.id_col, "subject id column (default: row number)");
    cfit->add_option("--x-cols", fit.load.x_cols, "model covariate columns")->delimiter(',');
    cfit->add_option("--z-cols", fit.load.z_cols, "partitioning covariate columns")
        ->delimiter(',')
        ->required();
    cfit->add_option("--categorical", fit.load.cat_cols, "categorical z columns")->delimiter(',');
    cfit->add_option("--link", fit.link, "logit | gompertz");
    cfit->add_option("--method", fit.method, "mob | mob-ds");
    cfit->add_option("--alpha", fit.alpha, "significance level");
    cfit->add_option("--perms", fit.perms, "permutation draws");
    cfit->add_option("--max-depth", fit.max_depth, "maximum tree depth");
    cfit->add_option("--min-node", fit.min_node, "minimum subjects per node");
    cfit->add_option("--min-events", fit.min_events, "minimum events per node (-1 = auto)");
    cfit->add_option("--collapse-from", fit.collapse_from, "collapse times >= k into k-1");
    auto* fit_seed = cfit->add_option("--seed", fit.seed, "rng seed");
    cfit->add_option("--out-dir", fit.out_dir, "output directory");
    cfit->add_option("--table-cache", fit.table_cache, "reference table cache directory");
    cfit->add_option("--cov", fit.cov, "opg | sandwich");
    cfit->add_option("--p-estimator", fit.p_estimator, "randomized | addone");
    cfit->add_option("--threads", fit.threads, "worker threads (0 = hardware)");
    cfit->add_flag("--export-augmented", fit.do_export_augmented, "write augmented.csv");
    cfit->add_flag("--dump-null", fit.dump_null, "write root null statistics CSV");

    SimOpts sim;
    CLI::App* csim = app.add_subcommand("simulate", "run a type I error scenario grid");
    csim->add_option("--preset", sim.preset, "desk-typeI | desk-nocens | full-typeI");
    csim->add_option("--grid", sim.grid_file, "scenario grid JSON file");
    csim->add_option("--method", sim.method, "mob | mob-ds | both");
    csim->add_option("--link", sim.link, "logit | gompertz");
    csim->add_option("--cov", sim.cov, "opg | sandwich");
    csim->add_option("--p-estimator", sim.p_estimator, "randomized | addone");
    csim->add_option("--reps", sim.reps, "override replications");
    csim->add_option("--perms", sim.perms, "override permutation draws");
    csim->add_option("--alpha", sim.alpha, "override significance level");
    auto* sim_seed = csim->add_option("--seed", sim.seed, "rng seed");
    csim->add_option("--threads", sim.threads, "worker threads (0 = hardware)");
    csim->add_option("--out-dir", sim.out_dir, "output directory");
    csim->add_option("--table-cache", sim.table_cache, "reference table cache directory");
    csim->add_option("--table-grid", sim.table_grid, "reference table grid points");
    csim->add_option("--table-reps", sim.table_reps, "reference table replications");

    PredictOpts pred;
    CLI::App* cpred = app.add_subcommand("predict", "route covariate rows through a saved tree");
    cpred->add_option("--tree", pred.tree_file, "tree JSON from fit")->required();
    cpred->add_option("--data", pred.data_file, "covariate CSV")->required();
    cpred->add_option("--out", pred.out_file, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        fit.seed_given = fit_seed->count() > 0;
        sim.seed_given = sim_seed->count() > 0;
        if (cfit->parsed()) run_fit(fit);
        if (csim->parsed()) run_simulate(sim);
        if (cpred->parsed()) run_predict(pred);
        return 0;
    } catch (const mobds::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mobds::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const mobds::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
