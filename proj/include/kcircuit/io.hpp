#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "data.hpp"
#include "discovery.hpp"
#include "eval.hpp"
#include "graph.hpp"
#include "lens.hpp"

namespace kc {

inline constexpr const char* k_circuit_schema_version = "1.0";
inline constexpr int k_circuit_schema_major = 1;

// Six significant digits, returned as a double so JSON dumps it in shortest round-trip form.
inline double round_sig6(double v) {
    if (!std::isfinite(v) || v == 0.0) return v == 0.0 ? 0.0 : v;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::strtod(buf, nullptr);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write '" + path.string() + "'");
    out << text;
    require(out.good(), "write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Two-space indent, sorted keys (nlohmann::json objects are ordered maps), trailing newline.
inline std::string dump_json(const nlohmann::json& j) {
    return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

struct CircuitFile {
    Circuit circuit;
    std::string model_id;
};

inline nlohmann::json circuit_to_json(const Circuit& c, const std::string& model_id = {}) {
    const auto& g = c.graph();
    nlohmann::json j;
    j["schema_version"] = k_circuit_schema_version;
    j["model_id"] = model_id;
    j["created_at"] = c.provenance.created_at;
    j["graph"] = {{"n_layers", g.n_layers()}, {"n_heads", g.n_heads()}, {"total_edges", g.edge_count()}};
    j["config"] = {{"tau", round_sig6(c.provenance.tau)},
                   {"ablation", c.provenance.ablation},
                   {"metric", c.provenance.metric},
                   {"dataset_id", c.provenance.dataset_id}};
    auto nodes = nlohmann::json::array();
    for (auto n : c.node_indices()) nodes.push_back(node_name(g.node(n)));
    j["nodes"] = std::move(nodes);
    auto edges = nlohmann::json::array();
    for (auto e : c.kept_edges()) {
        nlohmann::json je{{"src", node_name(g.node(g.edge(e).src))}, {"dst", node_name(g.node(g.edge(e).dst))}};
        je["score"] = c.has_score(e) ? nlohmann::json(round_sig6(c.score(e))) : nlohmann::json(nullptr);
        edges.push_back(std::move(je));
    }
    j["edges"] = std::move(edges);
    return j;
}

inline std::string circuit_to_string(const Circuit& c, const std::string& model_id = {}) {
    return dump_json(circuit_to_json(c, model_id));
}

inline void save_circuit(const Circuit& c, const std::filesystem::path& path, const std::string& model_id = {}) {
    write_text(path, circuit_to_string(c, model_id));
}

namespace detail {

inline std::size_t resolve_node(const ComputationGraph& g, const std::string& name, const std::string& origin) {
    const auto id = parse_node_name(name);
    require(id.has_value() && g.valid(*id), origin + ": unknown node name '" + name + "'");
    return g.index_of(*id);
}

}  // namespace detail

inline CircuitFile circuit_from_json(const nlohmann::json& j, const std::string& origin = "circuit") {
    try {
        const std::string version = j.at("schema_version").get<std::string>();
        const auto dot = version.find('.');
        int major = -1;
        try {
            major = std::stoi(version.substr(0, dot));
        } catch (const std::exception&) {
        }
        require(major == k_circuit_schema_major,
                origin + ": unsupported schema_version '" + version + "' (expected " + k_circuit_schema_version + ")");
        const auto& jg = j.at("graph");
        auto g = build_graph(jg.at("n_layers").get<std::size_t>(), jg.at("n_heads").get<std::size_t>());
        if (jg.contains("total_edges")) {
            require(jg.at("total_edges").get<std::size_t>() == g->edge_count(),
                    origin + ": total_edges does not match a " + std::to_string(g->n_layers()) + "x" +
                        std::to_string(g->n_heads()) + " graph");
        }
        Circuit c = Circuit::empty(g);
        const auto& cfg = j.at("config");
        c.provenance.tau = cfg.at("tau").get<double>();
        c.provenance.metric = cfg.at("metric").get<std::string>();
        const std::string ablation = cfg.at("ablation").get<std::string>();
        require(ablation == "zero" || ablation == "mean", origin + ": unknown ablation '" + ablation + "'");
        c.provenance.ablation = ablation == "mean" ? AblationMode::mean : AblationMode::zero;
        c.provenance.dataset_id = cfg.at("dataset_id").get<std::string>();
        c.provenance.created_at = j.at("created_at").get<std::string>();

        std::set<std::size_t> listed;
        for (const auto& n : j.at("nodes")) listed.insert(detail::resolve_node(*g, n.get<std::string>(), origin));
        for (const auto& e : j.at("edges")) {
            const auto src_name = e.at("src").get<std::string>();
            const auto dst_name = e.at("dst").get<std::string>();
            const auto src = detail::resolve_node(*g, src_name, origin);
            const auto dst = detail::resolve_node(*g, dst_name, origin);
            require(listed.count(src) && listed.count(dst),
                    origin + ": dangling edge endpoint in " + src_name + " -> " + dst_name);
            const auto id = g->find_edge(src, dst);
            require(id.has_value(), origin + ": no edge " + src_name + " -> " + dst_name + " in the full graph");
            c.keep(*id);
            if (e.contains("score") && !e.at("score").is_null()) c.set_score(*id, e.at("score").get<double>());
        }
        return {std::move(c), j.value("model_id", std::string())};
    } catch (const nlohmann::json::exception& ex) {
        throw Error(origin + ": malformed circuit file (" + ex.what() + ")");
    }
}

inline CircuitFile load_circuit(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& ex) {
        throw Error(path.string() + ": invalid JSON (" + ex.what() + ")");
    }
    return circuit_from_json(j, path.string());
}

struct DotOptions {
    bool collapse_mlp_chains = false;
    double score_threshold_display = 0.0;  // kept edges with |score| below this are not drawn
};

namespace detail {

inline std::string dot_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch;
    }
    return out + "\"";
}

inline std::string dot_rank_key(const NodeId& n, std::size_t n_layers) {
    switch (n.kind) {
        case NodeKind::input:
            return "input";
        case NodeKind::output:
            return "output";
        default:
            break;
    }
    (void)n_layers;
    return std::string(n.is_attn() ? "attn" : "mlp") + std::to_string(n.layer);
}

}  // namespace detail

// Graphviz rendering. Heads and MLPs of a layer share a rank. With chain collapsing, an MLP that has
// exactly one drawn input and one drawn output is elided and replaced by a dashed edge.
inline std::string export_dot(const Circuit& c, const DotOptions& opt = {}) {
    const auto& g = c.graph();
    struct DEdge {
        std::size_t src, dst;
        bool dashed;
        double score;
    };
    std::vector<DEdge> edges;
    for (auto e : c.kept_edges()) {
        const double s = c.has_score(e) ? c.score(e) : std::numeric_limits<double>::quiet_NaN();
        if (opt.score_threshold_display > 0.0 && c.has_score(e) && std::fabs(s) < opt.score_threshold_display) continue;
        edges.push_back({g.edge(e).src, g.edge(e).dst, false, s});
    }
    if (opt.collapse_mlp_chains) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t n = 0; n < g.node_count() && !changed; ++n) {
                if (!g.node(n).is_mlp()) continue;
                std::vector<std::size_t> ins, outs;
                for (std::size_t i = 0; i < edges.size(); ++i) {
                    if (edges[i].dst == n) ins.push_back(i);
                    if (edges[i].src == n) outs.push_back(i);
                }
                if (ins.size() != 1 || outs.size() != 1) continue;
                DEdge merged{edges[ins[0]].src, edges[outs[0]].dst, true, std::numeric_limits<double>::quiet_NaN()};
                std::vector<DEdge> next;
                for (std::size_t i = 0; i < edges.size(); ++i) {
                    if (i != ins[0] && i != outs[0]) next.push_back(edges[i]);
                }
                bool dup = false;
                for (const auto& d : next) dup = dup || (d.src == merged.src && d.dst == merged.dst);
                if (!dup) next.push_back(merged);
                edges = std::move(next);
                changed = true;
            }
        }
        std::sort(edges.begin(), edges.end(),
                  [](const DEdge& a, const DEdge& b) { return a.dst != b.dst ? a.dst < b.dst : a.src < b.src; });
    }
    std::set<std::size_t> shown{g.input_index(), g.output_index()};
    for (const auto& e : edges) {
        shown.insert(e.src);
        shown.insert(e.dst);
    }
    std::ostringstream o;
    o << "digraph circuit {\n";
    o << "  rankdir=BT;\n";
    o << "  node [shape=box, fontname=\"Helvetica\"];\n";
    std::map<std::string, std::vector<std::size_t>> ranks;
    std::vector<std::string> rank_order;
    for (auto n : shown) {
        const auto key = detail::dot_rank_key(g.node(n), g.n_layers());
        if (!ranks.count(key)) rank_order.push_back(key);
        ranks[key].push_back(n);
    }
    for (const auto& key : rank_order) {
        o << "  { rank=same;";
        for (auto n : ranks[key]) {
            const NodeId& id = g.node(n);
            o << " " << detail::dot_quote(node_name(id)) << " [label=" << detail::dot_quote(node_label(id));
            if (id.is_mlp()) o << ", style=rounded";
            o << "];";
        }
        o << " }\n";
    }
    for (const auto& e : edges) {
        o << "  " << detail::dot_quote(node_name(g.node(e.src))) << " -> " << detail::dot_quote(node_name(g.node(e.dst)));
        if (e.dashed) {
            o << " [style=dashed]";
        } else if (!std::isnan(e.score)) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3g", e.score);
            o << " [label=" << detail::dot_quote(buf) << "]";
        }
        o << ";\n";
    }
    o << "}\n";
    return o.str();
}

inline std::string trace_csv(const LensTrace& t) {
    std::ostringstream o;
    o << "layer,position,rank,prob\n";
    char buf[64];
    for (const auto& p : t.points) {
        std::snprintf(buf, sizeof buf, "%.9g", p.prob);
        o << p.layer << "," << position_name(p.position) << "," << p.rank << "," << buf << "\n";
    }
    return o.str();
}

// Row-per-line matrix with a header row of column indices.
inline std::string heatmap_csv(const std::vector<std::vector<double>>& m, const std::string& row_label = "row") {
    std::ostringstream o;
    o << row_label;
    const std::size_t cols = m.empty() ? 0 : m.front().size();
    for (std::size_t c = 0; c < cols; ++c) o << "," << c;
    o << "\n";
    char buf[64];
    for (std::size_t r = 0; r < m.size(); ++r) {
        require(m[r].size() == cols, "heatmap_csv: ragged matrix");
        o << r;
        for (double v : m[r]) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            o << "," << buf;
        }
        o << "\n";
    }
    return o.str();
}

inline std::string score_log_jsonl(const ComputationGraph& g, const std::vector<ScoredEdge>& log) {
    std::string out;
    for (const auto& s : log) {
        nlohmann::json j{{"src", node_name(g.node(g.edge(s.edge).src))},
                         {"dst", node_name(g.node(g.edge(s.edge).dst))},
                         {"score", round_sig6(s.score)},
                         {"kept", s.kept},
                         {"order", s.order}};
        out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    }
    return out;
}

inline nlohmann::json to_json(const LensTrace& t) {
    auto pts = nlohmann::json::array();
    for (const auto& p : t.points) {
        pts.push_back({{"layer", p.layer}, {"position", position_name(p.position)}, {"rank", p.rank}, {"prob", p.prob}});
    }
    return {{"target", t.target}, {"points", pts}};
}

inline nlohmann::json to_json(const std::vector<TokenLogit>& v) {
    auto a = nlohmann::json::array();
    for (const auto& t : v) a.push_back({{"token", t.token}, {"logit", t.logit}, {"text", t.text}});
    return a;
}

inline nlohmann::json to_json(const HeadProfile& p) {
    return {{"head", node_name(p.head)},
            {"label", node_label(p.head)},
            {"class", head_class_name(p.cls)},
            {"target", p.target},
            {"span_mass", {{"subject", p.span_mass.subject}, {"relation", p.span_mass.relation}, {"other", p.span_mass.other}}},
            {"top_tokens", to_json(p.top_tokens)}};
}

inline nlohmann::json to_json(const SplitScores& s) {
    return {{"full", s.full}, {"circuit", s.circuit}, {"random", s.random}, {"random_per_seed", s.random_per_seed}};
}

inline nlohmann::json to_json(const CompletenessReport& r) {
    return {{"val", to_json(r.val)},         {"test", to_json(r.test)},   {"edge_count", r.edge_count},
            {"total_edges", r.total_edges},  {"tau", round_sig6(r.tau)},  {"dataset_id", r.dataset_id},
            {"seeds", r.seeds},              {"k", r.k}};
}

inline nlohmann::json edge_list_json(const ComputationGraph& g, const std::vector<std::size_t>& ids) {
    auto a = nlohmann::json::array();
    for (auto e : ids) a.push_back({{"src", node_name(g.node(g.edge(e).src))}, {"dst", node_name(g.node(g.edge(e).dst))}});
    return a;
}

inline nlohmann::json node_list_json(const ComputationGraph& g, const std::vector<std::size_t>& ids) {
    auto a = nlohmann::json::array();
    for (auto n : ids) a.push_back(node_name(g.node(n)));
    return a;
}

inline nlohmann::json to_json(const DiffReport& r) {
    const auto& g = r.before.graph();
    auto classes = nlohmann::json::array();
    for (const auto& h : r.head_classes) {
        classes.push_back({{"head", node_name(h.head)},
                           {"before", head_class_name(h.before)},
                           {"after", head_class_name(h.after)},
                           {"top_before", to_json(h.top_before)},
                           {"top_after", to_json(h.top_after)}});
    }
    auto changed = nlohmann::json::array();
    for (const auto& h : r.head_changes) changed.push_back(node_name(h.head));
    auto unrelated = nlohmann::json::array();
    for (const auto& u : r.unrelated) {
        unrelated.push_back({{"prompt", u.prompt}, {"target", u.target}, {"before", u.before}, {"after", u.after}});
    }
    return {{"edges_before", r.before.kept_count()},
            {"edges_after", r.after.kept_count()},
            {"added", edge_list_json(g, r.added)},
            {"removed", edge_list_json(g, r.removed)},
            {"nodes_added", node_list_json(g, r.nodes_added)},
            {"nodes_removed", node_list_json(g, r.nodes_removed)},
            {"head_classes", classes},
            {"head_changes", changed},
            {"trace_before", to_json(r.trace_before)},
            {"trace_after", to_json(r.trace_after)},
            {"unrelated", unrelated}};
}

inline nlohmann::json to_json(const ICLReport& r) {
    auto heads = nlohmann::json::array();
    for (const auto& h : r.extra_heads) heads.push_back(node_name(h));
    return {{"edges_zero_shot", r.zero_shot.kept_count()},
            {"edges_icl", r.icl.kept_count()},
            {"extra_heads", heads},
            {"no_extra_heads", r.no_extra_heads},
            {"original_percent", r.original},
            {"ablate_extra_percent", r.ablate_extra},
            {"ablate_random_percent", r.ablate_random},
            {"ablate_random_per_seed", r.ablate_random_per_seed},
            {"seeds", r.seeds}};
}

inline nlohmann::json to_json(const FilterReport& r) {
    nlohmann::json by = nlohmann::json::object();
    for (const auto& [rel, c] : r.by_relation) by[rel] = {{"total", c.total}, {"kept", c.kept}};
    return {{"k", r.k}, {"kept", r.kept.size()}, {"by_relation", by}};
}

inline nlohmann::json to_json(const AblationEffect& e) {
    auto deltas = [](const std::vector<TokenDelta>& v) {
        auto a = nlohmann::json::array();
        for (const auto& d : v) a.push_back({{"token", d.token}, {"delta", d.delta}, {"text", d.text}});
        return a;
    };
    return {{"head", node_name(e.head)},
            {"target_before", e.target_before},
            {"target_after", e.target_after},
            {"increases", deltas(e.increases)},
            {"decreases", deltas(e.decreases)},
            {"delta_sum", e.delta_sum}};
}

}  // namespace kc
