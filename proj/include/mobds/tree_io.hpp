#pragma once
#include <json.hpp>
#include <string>
#include <vector>

#include "mobds/csv.hpp"
#include "mobds/errors.hpp"
#include "mobds/tree.hpp"

namespace mobds {

inline nlohmann::json tree_to_json(const MobTree& tree) {
    nlohmann::json j;
    j["format"] = "mobds-tree";
    j["version"] = 1;
    j["method"] = method_name(tree.method);
    j["link"] = link_name(tree.link);
    j["alpha"] = tree.alpha;
    j["k_max"] = tree.k_max;
    j["x_names"] = tree.x_names;
    j["z_schema"] = nlohmann::json::array();
    for (const auto& zv : tree.z_schema) {
        nlohmann::json z;
        z["name"] = zv.name;
        z["kind"] = zv.kind == ZKind::numeric ? "numeric" : "categorical";
        if (zv.kind == ZKind::categorical) z["levels"] = zv.levels;
        j["z_schema"].push_back(z);
    }
    j["nodes"] = nlohmann::json::array();
    for (const auto& node : tree.nodes) {
        nlohmann::json n;
        n["id"] = node.id;
        n["depth"] = node.depth;
        n["n_subjects"] = node.n_subjects;
        n["n_events"] = node.n_events;
        n["subject_ids"] = node.subject_ids;
        n["terminal"] = node.terminal;
        if (node.terminal) {
            n["stop_reason"] = node.stop_reason;
        } else {
            n["children"] = {tree.nodes[node.left_child].id, tree.nodes[node.right_child].id};
            nlohmann::json s;
            s["variable"] = node.split.variable;
            s["var_index"] = node.split.var_index;
            s["kind"] = node.split.kind == ZKind::numeric ? "numeric" : "categorical";
            if (node.split.kind == ZKind::numeric) {
                s["cutpoint"] = node.split.cutpoint;
            } else {
                s["left_levels"] = node.split.left_levels;
                s["right_levels"] = node.split.right_levels;
            }
            s["objective"] = node.split.objective;
            n["split"] = s;
        }
        nlohmann::json m;
        m["n_time"] = node.model.spec.n_time;
        m["n_x"] = node.model.spec.n_x;
        m["theta"] = std::vector<double>(node.model.theta.data(),
                                         node.model.theta.data() + node.model.theta.size());
        m["loglik"] = node.model.loglik;
        m["converged"] = node.model.converged;
        m["iterations"] = node.model.iterations;
        m["n_rows"] = node.model.n_rows;
        n["model"] = m;
        n["q"] = node.q;
        n["tests"] = nlohmann::json::array();
        for (const auto& t : node.tests) {
            nlohmann::json tj;
            tj["variable"] = t.variable;
            tj["kind"] = t.kind == ZKind::numeric ? "numeric" : "categorical";
            tj["statistic"] = t.statistic;
            tj["p_value"] = t.p_value;
            tj["p_adjusted"] = t.p_adjusted;
            tj["method"] = t.method;
            tj["degenerate"] = t.degenerate;
            if (t.kind == ZKind::categorical) tj["df"] = t.df;
            if (t.method == "permutation") {
                tj["n_greater"] = t.n_greater;
                tj["n_equal"] = t.n_equal;
                tj["u_draw"] = t.u_draw;
            }
            n["tests"].push_back(tj);
        }
        nlohmann::json lt;
        lt["time"] = node.lt.time;
        lt["at_risk"] = node.lt.at_risk;
        lt["events"] = node.lt.events;
        lt["hazard"] = node.lt.hazard;
        lt["survival"] = node.lt.survival;
        n["life_table"] = lt;
        j["nodes"].push_back(n);
    }
    return j;
}

inline MobTree tree_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j["format"] != "mobds-tree")
        throw DataError("not a mobds tree file");
    MobTree tree;
    tree.method = parse_method(j["method"].get<std::string>());
    tree.link = parse_link(j["link"].get<std::string>());
    tree.alpha = j["alpha"].get<double>();
    tree.k_max = j["k_max"].get<int>();
    tree.x_names = j["x_names"].get<std::vector<std::string>>();
    for (const auto& z : j["z_schema"]) {
        ZVariable zv;
        zv.name = z["name"].get<std::string>();
        zv.kind = z["kind"] == "categorical" ? ZKind::categorical : ZKind::numeric;
        if (zv.kind == ZKind::categorical) zv.levels = z["levels"].get<std::vector<std::string>>();
        tree.z_schema.push_back(zv);
    }
    for (const auto& n : j["nodes"]) {
        MobNode node;
        node.id = n["id"].get<int>();
        node.depth = n["depth"].get<int>();
        node.n_subjects = n["n_subjects"].get<long>();
        node.n_events = n["n_events"].get<long>();
        node.subject_ids = n["subject_ids"].get<std::vector<long>>();
        node.terminal = n["terminal"].get<bool>();
        if (node.terminal) {
            node.stop_reason = n["stop_reason"].get<std::string>();
        } else {
            node.left_child = n["children"][0].get<int>() - 1;
            node.right_child = n["children"][1].get<int>() - 1;
            const auto& s = n["split"];
            node.split.variable = s["variable"].get<std::string>();
            node.split.var_index = s["var_index"].get<int>();
            node.split.kind = s["kind"] == "categorical" ? ZKind::categorical : ZKind::numeric;
            if (node.split.kind == ZKind::numeric) {
                node.split.cutpoint = s["cutpoint"].get<double>();
            } else {
                node.split.left_levels = s["left_levels"].get<std::vector<int>>();
                node.split.right_levels = s["right_levels"].get<std::vector<int>>();
            }
            node.split.objective = s["objective"].get<double>();
        }
        const auto& m = n["model"];
        node.model.spec.link = tree.link;
        node.model.spec.n_time = m["n_time"].get<int>();
        node.model.spec.n_x = m["n_x"].get<int>();
        auto theta = m["theta"].get<std::vector<double>>();
        node.model.theta = Eigen::Map<Eigen::VectorXd>(theta.data(), theta.size());
        node.model.loglik = m["loglik"].get<double>();
        node.model.converged = m["converged"].get<bool>();
        node.model.iterations = m["iterations"].get<int>();
        node.model.n_rows = m["n_rows"].get<std::size_t>();
        node.q = n["q"].get<int>();
        for (const auto& tj : n["tests"]) {
            InstabilityResult t;
            t.variable = tj["variable"].get<std::string>();
            t.kind = tj["kind"] == "categorical" ? ZKind::categorical : ZKind::numeric;
            t.statistic = tj["statistic"].get<double>();
            t.p_value = tj["p_value"].get<double>();
            t.p_adjusted = tj["p_adjusted"].get<double>();
            t.method = tj["method"].get<std::string>();
            t.degenerate = tj["degenerate"].get<bool>();
            if (t.kind == ZKind::categorical) t.df = tj["df"].get<int>();
            if (t.method == "permutation") {
                t.n_greater = tj["n_greater"].get<long>();
                t.n_equal = tj["n_equal"].get<long>();
                t.u_draw = tj["u_draw"].get<double>();
            }
            node.tests.push_back(t);
        }
        const auto& lt = n["life_table"];
        node.lt.time = lt["time"].get<std::vector<int>>();
        node.lt.at_risk = lt["at_risk"].get<std::vector<long>>();
        node.lt.events = lt["events"].get<std::vector<long>>();
        node.lt.hazard = lt["hazard"].get<std::vector<double>>();
        node.lt.survival = lt["survival"].get<std::vector<double>>();
        tree.nodes.push_back(std::move(node));
    }
    if (tree.nodes.empty()) throw DataError("tree has no nodes");
    return tree;
}

namespace detail {

inline std::string split_label(const MobTree& tree, const SplitRule& split, bool left) {
    if (split.kind == ZKind::numeric) {
        return split.variable + (left ? " <= " : " > ") + format_double(split.cutpoint);
    }
    const auto& levels = tree.z_schema[split.var_index].levels;
    std::string out = split.variable + " in {";
    const auto& codes = left ? split.left_levels : split.right_levels;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i) out += ", ";
        out += levels[codes[i]];
    }
    return out + "}";
}

inline void render_node(const MobTree& tree, int idx, const std::string& prefix,
                        const std::string& label, std::string& out) {
    const MobNode& node = tree.nodes[idx];
    out += prefix + "[" + std::to_string(node.id) + "] " + label;
    out += " n=" + std::to_string(node.n_subjects) + " events=" + std::to_string(node.n_events);
    if (node.terminal) {
        out += " *(" + node.stop_reason + ")";
    } else {
        double best_p = 1.0;
        for (const auto& t : node.tests)
            if (!t.degenerate) best_p = std::min(best_p, t.p_adjusted);
        out += " | split " + node.split.variable + " (p_adj=" + format_double(best_p) + ")";
    }
    out += "\n";
    if (!node.terminal) {
        render_node(tree, node.left_child, prefix + "|   ",
                    split_label(tree, node.split, true) + ": ", out);
        render_node(tree, node.right_child, prefix + "|   ",
                    split_label(tree, node.split, false) + ": ", out);
    }
}

}  // namespace detail

inline std::string render_text(const MobTree& tree) {
    std::string out = "discrete hazard mob tree (" + method_name(tree.method) + ", " +
                      link_name(tree.link) + " link, alpha " + format_double(tree.alpha) + ")\n";
    detail::render_node(tree, 0, "", "root: ", out);
    return out;
}

// One row per (terminal node, time point): fitted hazard and survival.
inline void write_survival_csv(const MobTree& tree, const std::string& path) {
    CsvWriter w(path);
    w.row("node_id", "t", "hazard", "survival");
    for (const auto& node : tree.nodes) {
        if (!node.terminal) continue;
        double surv = 1.0;
        for (int t = 1; t <= tree.k_max - 1; ++t) {
            double h = 0.0;
            if (t <= node.model.spec.n_time) h = link_h(tree.link, node.model.theta[t - 1]);
            surv *= 1.0 - h;
            w.row(node.id, t, h, surv);
        }
    }
}

// Per-node instability test table.
inline void write_pvalue_csv(const MobTree& tree, const std::string& path) {
    CsvWriter w(path);
    w.row("node_id", "variable", "kind", "statistic", "p_value", "p_adjusted", "method",
          "degenerate");
    for (const auto& node : tree.nodes) {
        for (const auto& t : node.tests) {
            w.field(node.id);
            w.field(t.variable);
            w.field(std::string(t.kind == ZKind::numeric ? "numeric" : "categorical"));
            w.field(t.statistic);
            w.field(t.p_value);
            w.field(t.p_adjusted);
            w.field(t.method);
            w.field(std::string(t.degenerate ? "yes" : "no"));
            w.endrow();
        }
    }
}

}  // namespace mobds
