#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "weights.hpp"

namespace kc {

enum class NodeKind { input, attn, mlp, output };

struct NodeId {
    NodeKind kind = NodeKind::input;
    std::size_t layer = 0;
    std::size_t head = 0;

    static NodeId input() { return {NodeKind::input, 0, 0}; }
    static NodeId attn(std::size_t l, std::size_t h) { return {NodeKind::attn, l, h}; }
    static NodeId mlp(std::size_t l) { return {NodeKind::mlp, l, 0}; }
    static NodeId output() { return {NodeKind::output, 0, 0}; }

    bool is_attn() const { return kind == NodeKind::attn; }
    bool is_mlp() const { return kind == NodeKind::mlp; }

    friend bool operator==(const NodeId&, const NodeId&) = default;
};

// `input`, `a{l}.h{h}`, `m{l}`, `output`.
inline std::string node_name(const NodeId& n) {
    switch (n.kind) {
        case NodeKind::input:
            return "input";
        case NodeKind::attn:
            return "a" + std::to_string(n.layer) + ".h" + std::to_string(n.head);
        case NodeKind::mlp:
            return "m" + std::to_string(n.layer);
        case NodeKind::output:
            return "output";
    }
    return "?";
}

// Figure-style label: L{l}H{h} / MLP{l}.
inline std::string node_label(const NodeId& n) {
    switch (n.kind) {
        case NodeKind::attn:
            return "L" + std::to_string(n.layer) + "H" + std::to_string(n.head);
        case NodeKind::mlp:
            return "MLP" + std::to_string(n.layer);
        default:
            return node_name(n);
    }
}

namespace detail {

inline bool take_number(std::string_view& s, std::size_t& out) {
    std::size_t i = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
        ++i;
    }
    if (i == 0) {
        return false;
    }
    auto [p, ec] = std::from_chars(s.data(), s.data() + i, out);
    if (ec != std::errc()) {
        return false;
    }
    s.remove_prefix(i);
    return true;
}

inline bool take_literal(std::string_view& s, std::string_view lit) {
    if (s.substr(0, lit.size()) != lit) {
        return false;
    }
    s.remove_prefix(lit.size());
    return true;
}

}  // namespace detail

// Accepts canonical names plus the L{l}H{h} / MLP{l} aliases. Range checks are the graph's job.
inline std::optional<NodeId> parse_node_name(std::string_view s) {
    if (s == "input") return NodeId::input();
    if (s == "output") return NodeId::output();
    std::size_t l = 0, h = 0;
    std::string_view rest = s;
    if (detail::take_literal(rest, "MLP")) {
        if (detail::take_number(rest, l) && rest.empty()) return NodeId::mlp(l);
        return std::nullopt;
    }
    rest = s;
    if (detail::take_literal(rest, "a")) {
        if (detail::take_number(rest, l) && detail::take_literal(rest, ".h") && detail::take_number(rest, h) &&
            rest.empty())
            return NodeId::attn(l, h);
        return std::nullopt;
    }
    rest = s;
    if (detail::take_literal(rest, "m")) {
        if (detail::take_number(rest, l) && rest.empty()) return NodeId::mlp(l);
        return std::nullopt;
    }
    rest = s;
    if (detail::take_literal(rest, "L")) {
        if (detail::take_number(rest, l) && detail::take_literal(rest, "H") && detail::take_number(rest, h) &&
            rest.empty())
            return NodeId::attn(l, h);
    }
    return std::nullopt;
}

struct Edge {
    std::size_t src = 0;  // node index (= topological rank)
    std::size_t dst = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Dense residual-rewrite graph. Node indices are topological ranks:
// input, then per layer its heads followed by its MLP, then output.
class ComputationGraph {
public:
    ComputationGraph(std::size_t n_layers, std::size_t n_heads) : n_layers_(n_layers), n_heads_(n_heads) {
        require(n_heads >= 1, "graph: n_heads must be >= 1");
        nodes_.push_back(NodeId::input());
        for (std::size_t l = 0; l < n_layers; ++l) {
            for (std::size_t h = 0; h < n_heads; ++h) {
                nodes_.push_back(NodeId::attn(l, h));
            }
            nodes_.push_back(NodeId::mlp(l));
        }
        nodes_.push_back(NodeId::output());

        in_edges_.resize(nodes_.size());
        out_edges_.resize(nodes_.size());
        for (std::size_t dst = 1; dst < nodes_.size(); ++dst) {
            for (std::size_t src = 0; src < dst; ++src) {
                if (reads_from(nodes_[dst], nodes_[src])) {
                    const std::size_t id = edges_.size();
                    edges_.push_back({src, dst});
                    in_edges_[dst].push_back(id);
                    out_edges_[src].push_back(id);
                }
            }
        }
    }

    explicit ComputationGraph(const ModelConfig& c) : ComputationGraph(c.n_layers, c.n_heads) {}

    std::size_t n_layers() const { return n_layers_; }
    std::size_t n_heads() const { return n_heads_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<NodeId>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const NodeId& node(std::size_t i) const { return nodes_.at(i); }
    const Edge& edge(std::size_t id) const { return edges_.at(id); }

    std::size_t input_index() const { return 0; }
    std::size_t output_index() const { return nodes_.size() - 1; }

    // Edge ids into `dst`, ordered by ascending source rank.
    const std::vector<std::size_t>& in_edges(std::size_t dst) const { return in_edges_.at(dst); }
    const std::vector<std::size_t>& out_edges(std::size_t src) const { return out_edges_.at(src); }

    std::size_t index_of(const NodeId& n) const {
        switch (n.kind) {
            case NodeKind::input:
                return 0;
            case NodeKind::output:
                return nodes_.size() - 1;
            case NodeKind::attn:
                require(n.layer < n_layers_ && n.head < n_heads_, "graph: node " + node_name(n) + " out of range");
                return 1 + n.layer * (n_heads_ + 1) + n.head;
            case NodeKind::mlp:
                require(n.layer < n_layers_, "graph: node " + node_name(n) + " out of range");
                return 1 + n.layer * (n_heads_ + 1) + n_heads_;
        }
        return 0;
    }

    bool valid(const NodeId& n) const {
        switch (n.kind) {
            case NodeKind::attn:
                return n.layer < n_layers_ && n.head < n_heads_;
            case NodeKind::mlp:
                return n.layer < n_layers_;
            default:
                return true;
        }
    }

    std::optional<std::size_t> find_edge(std::size_t src, std::size_t dst) const {
        if (dst >= nodes_.size()) return std::nullopt;
        const auto& ins = in_edges_[dst];
        auto it = std::lower_bound(ins.begin(), ins.end(), src,
                                   [&](std::size_t id, std::size_t s) { return edges_[id].src < s; });
        if (it != ins.end() && edges_[*it].src == src) return *it;
        return std::nullopt;
    }

    std::size_t edge_id(const NodeId& src, const NodeId& dst) const {
        auto id = find_edge(index_of(src), index_of(dst));
        require(id.has_value(), "graph: no edge " + node_name(src) + " -> " + node_name(dst) + " in the full graph");
        return *id;
    }

    // Upstream relation of the residual rewrite.
    static bool reads_from(const NodeId& dst, const NodeId& src) {
        if (src.kind == NodeKind::output || dst.kind == NodeKind::input) return false;
        if (dst.kind == NodeKind::output) return true;
        if (src.kind == NodeKind::input) return true;
        if (dst.kind == NodeKind::attn) {
            return src.layer < dst.layer;  // no same-layer head -> head, no same-layer MLP -> head
        }
        // dst is an MLP
        if (src.kind == NodeKind::attn) return src.layer <= dst.layer;
        return src.layer < dst.layer;
    }

    // Closed form edge count.
    static std::size_t expected_edge_count(std::size_t L, std::size_t H) {
        const std::size_t pairs = L * (L - (L ? 1 : 0)) / 2;
        return (L * H + L + 1) + H * H * pairs + H * L * (L + 1) / 2 + pairs + H * pairs + L * H + L;
    }

    // Nodes in topological order (identity on indices).
    std::vector<NodeId> topo_order() const { return nodes_; }

    friend bool operator==(const ComputationGraph& a, const ComputationGraph& b) {
        return a.n_layers_ == b.n_layers_ && a.n_heads_ == b.n_heads_;
    }

private:
    std::size_t n_layers_;
    std::size_t n_heads_;
    std::vector<NodeId> nodes_;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> in_edges_;
    std::vector<std::vector<std::size_t>> out_edges_;
};

using GraphPtr = std::shared_ptr<const ComputationGraph>;

inline GraphPtr build_graph(const ModelConfig& c) { return std::make_shared<const ComputationGraph>(c); }
inline GraphPtr build_graph(std::size_t n_layers, std::size_t n_heads) {
    return std::make_shared<const ComputationGraph>(n_layers, n_heads);
}

inline std::vector<NodeId> topo_order(const ComputationGraph& g) { return g.topo_order(); }

enum class AblationMode { zero, mean };

NLOHMANN_JSON_SERIALIZE_ENUM(AblationMode, {{AblationMode::zero, "zero"}, {AblationMode::mean, "mean"}})

struct Provenance {
    double tau = 0.0;
    std::string metric = "match_nll";
    AblationMode ablation = AblationMode::zero;
    std::string dataset_id;
    std::string created_at;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

// A kept-edge subset of a computation graph; the node set is derived from edge endpoints.
class Circuit {
public:
    Circuit() = default;

    explicit Circuit(GraphPtr graph, bool full = true)
        : graph_(std::move(graph)),
          kept_(graph_->edge_count(), full),
          scores_(graph_->edge_count(), std::numeric_limits<double>::quiet_NaN()),
          kept_count_(full ? graph_->edge_count() : 0) {}

    static Circuit full(GraphPtr g) { return Circuit(std::move(g), true); }
    static Circuit empty(GraphPtr g) { return Circuit(std::move(g), false); }

    const ComputationGraph& graph() const { return *graph_; }
    const GraphPtr& graph_ptr() const { return graph_; }

    bool kept(std::size_t edge_id) const { return kept_[edge_id]; }
    std::size_t kept_count() const { return kept_count_; }

    void set_kept(std::size_t edge_id, bool keep) {
        require(edge_id < kept_.size(), "circuit: edge id out of range");
        if (kept_[edge_id] != keep) {
            kept_[edge_id] = keep;
            kept_count_ += keep ? 1 : static_cast<std::size_t>(-1);
        }
    }
    void keep(std::size_t edge_id) { set_kept(edge_id, true); }
    void remove(std::size_t edge_id) { set_kept(edge_id, false); }

    double score(std::size_t edge_id) const { return scores_.at(edge_id); }
    bool has_score(std::size_t edge_id) const { return !std::isnan(scores_.at(edge_id)); }
    void set_score(std::size_t edge_id, double s) { scores_.at(edge_id) = s; }

    std::vector<std::size_t> kept_edges() const {
        std::vector<std::size_t> out;
        out.reserve(kept_count_);
        for (std::size_t i = 0; i < kept_.size(); ++i) {
            if (kept_[i]) out.push_back(i);
        }
        return out;
    }

    // Endpoints of kept edges plus input and output, as sorted node indices.
    std::vector<std::size_t> node_indices() const {
        std::vector<bool> in(graph_->node_count(), false);
        in[graph_->input_index()] = true;
        in[graph_->output_index()] = true;
        for (std::size_t i = 0; i < kept_.size(); ++i) {
            if (kept_[i]) {
                in[graph_->edge(i).src] = true;
                in[graph_->edge(i).dst] = true;
            }
        }
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i]) out.push_back(i);
        }
        return out;
    }

    Provenance provenance;

    // Same graph, same kept edges, same provenance. Scores are metadata and compared separately.
    friend bool operator==(const Circuit& a, const Circuit& b) {
        return a.graph_ && b.graph_ && *a.graph_ == *b.graph_ && a.kept_ == b.kept_ && a.provenance == b.provenance;
    }

private:
    GraphPtr graph_;
    std::vector<bool> kept_;
    std::vector<double> scores_;
    std::size_t kept_count_ = 0;
};

enum class Connectivity {
    any_path,    // some Input -> ... -> Output path exists
    all_on_path  // additionally every kept node lies on an Input -> Output path
};

namespace detail {

inline std::vector<bool> forward_reach(const Circuit& c) {
    const auto& g = c.graph();
    std::vector<bool> reach(g.node_count(), false);
    reach[g.input_index()] = true;
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        if (!reach[n]) continue;
        for (auto id : g.out_edges(n)) {
            if (c.kept(id)) reach[g.edge(id).dst] = true;
        }
    }
    return reach;
}

inline std::vector<bool> backward_reach(const Circuit& c) {
    const auto& g = c.graph();
    std::vector<bool> reach(g.node_count(), false);
    reach[g.output_index()] = true;
    for (std::size_t n = g.node_count(); n-- > 0;) {
        if (!reach[n]) continue;
        for (auto id : g.in_edges(n)) {
            if (c.kept(id)) reach[g.edge(id).src] = true;
        }
    }
    return reach;
}

}  // namespace detail

inline bool is_connected(const Circuit& c, Connectivity mode = Connectivity::any_path) {
    const auto& g = c.graph();
    const auto fwd = detail::forward_reach(c);
    if (!fwd[g.output_index()]) return false;
    if (mode == Connectivity::any_path) return true;
    const auto bwd = detail::backward_reach(c);
    for (auto id : c.kept_edges()) {
        const auto& e = g.edge(id);
        if (!(fwd[e.src] && bwd[e.dst])) return false;
    }
    return true;
}

inline constexpr std::size_t k_default_random_retries = 1000;

// Uniform edge subset of exactly `target_edge_count` edges, rejection-sampled until connected.
inline Circuit random_circuit(GraphPtr g, std::size_t target_edge_count, std::uint64_t seed,
                              std::size_t max_retries = k_default_random_retries,
                              Connectivity mode = Connectivity::any_path) {
    require(target_edge_count >= 1 && target_edge_count <= g->edge_count(),
            "random_circuit: target edge count must be in [1, " + std::to_string(g->edge_count()) + "]");
    Rng rng(seed);
    std::vector<std::size_t> ids(g->edge_count());
    for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        // partial Fisher-Yates: the first k positions are a uniform k-subset
        for (std::size_t i = 0; i < target_edge_count; ++i) {
            std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
        }
        Circuit c = Circuit::empty(g);
        for (std::size_t i = 0; i < target_edge_count; ++i) c.keep(ids[i]);
        if (is_connected(c, mode)) {
            c.provenance.metric = "random";
            return c;
        }
    }
    throw Error("random_circuit: no connected circuit with " + std::to_string(target_edge_count) + " edges after " +
                std::to_string(max_retries) + " attempts");
}

struct Overlap {
    double node_hit = 0.0;
    double edge_hit = 0.0;
};

// `reference` is the denominator circuit (the single-hop circuit in a reuse study).
inline Overlap overlap(const Circuit& reference, const Circuit& other) {
    require(reference.graph() == other.graph(), "overlap: circuits are over different graphs");
    require(reference.kept_count() > 0, "overlap: reference circuit is empty");
    const auto na = reference.node_indices();
    const auto nb = other.node_indices();
    std::vector<std::size_t> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    std::size_t shared_edges = 0;
    for (auto id : reference.kept_edges()) {
        if (other.kept(id)) ++shared_edges;
    }
    return {static_cast<double>(common.size()) / static_cast<double>(na.size()),
            static_cast<double>(shared_edges) / static_cast<double>(reference.kept_count())};
}

}  // namespace kc
