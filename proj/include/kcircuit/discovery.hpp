#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "ops.hpp"

namespace kc {

// Threshold grid used for circuit construction.
inline constexpr double k_tau_grid[] = {0.02, 0.01, 0.005};

struct DiscoveryConfig {
    double tau = 0.01;
    AblationMode ablation = AblationMode::zero;
    std::string metric = "match_nll";
    bool log_scores = true;
    std::size_t threads = 0;  // 0 = hardware concurrency
    std::string dataset_id;

    void validate() const {
        require(tau > 0.0, "discover: tau must be > 0");
        require(metric == "match_nll", "discover: unsupported metric '" + metric + "'");
    }
};

struct ScoredEdge {
    std::size_t edge = 0;  // edge id in the graph
    double score = 0.0;    // batch mean of log p(target | mask) - log p(target | mask - edge)
    bool kept = false;
    std::size_t order = 0;  // evaluation order
};

struct DiscoveryResult {
    Circuit circuit;
    std::vector<ScoredEdge> scored;
    DiscoveryConfig config;
    double wall_seconds = 0.0;
    std::size_t forward_passes = 0;  // prompt evaluations spent on edge scores
    std::size_t evaluated_edges = 0;
    bool connected = false;
};

namespace detail {

inline double target_log_prob(const ActivationCache& cache, std::size_t vocab, TokenId target) {
    require(target >= 0 && static_cast<std::size_t>(target) < vocab,
            "target token " + std::to_string(target) + " out of vocabulary");
    return ops::log_prob(cache.last_logits(), vocab, static_cast<std::size_t>(target));
}

}  // namespace detail

// Mean over the batch of log p(o | mask) - log p(o | mask - edge) at the last position.
inline double edge_score(const Model& model, const Circuit& mask, std::size_t edge,
                         const std::vector<TokenizedPrompt>& batch, const AblationContext& ablation = {}) {
    require(!batch.empty(), "edge_score: empty batch");
    require(edge < mask.graph().edge_count() && mask.kept(edge), "edge_score: edge is not in the mask");
    Circuit without = mask;
    without.remove(edge);
    MaskedRunOptions opts{ablation, true};
    double sum = 0.0;
    for (const auto& p : batch) {
        const auto with_r = run_masked(model, p.tokens, mask, opts);
        const auto without_r = run_masked(model, p.tokens, without, opts);
        sum += detail::target_log_prob(with_r.cache, model.vocab_size(), p.target_first_token) -
               detail::target_log_prob(without_r.cache, model.vocab_size(), p.target_first_token);
    }
    return sum / static_cast<double>(batch.size());
}

namespace detail {

// Per-prompt state under the current pruned mask, with undo for trial ablations.
struct PromptState {
    ActivationCache cache;
    double log_prob = 0.0;
    std::vector<std::pair<std::size_t, Matrix>> undo;  // node index, previous output
    Matrix undo_logits;
};

// Like propagate(), but records overwritten outputs so the trial can be rolled back.
inline void propagate_with_undo(const Model& model, const Circuit& mask, PromptState& st, std::size_t from,
                                const AblationContext& ablation) {
    const auto& g = *model.graph();
    st.undo.clear();
    std::vector<bool> dirty(g.node_count(), false);
    dirty[from] = true;
    for (std::size_t n = from; n < g.node_count(); ++n) {
        if (!dirty[n]) continue;
        const NodeId& id = g.node(n);
        const Matrix in = assemble_input(model, n, mask, st.cache, ablation);
        if (id.kind == NodeKind::output) {
            st.undo_logits = std::move(st.cache.logits);
            st.cache.logits = model.output_logits(in, true);
        } else {
            Matrix out = model.node_forward(id, in);
            st.undo.emplace_back(n, std::move(st.cache.outputs[n]));
            st.cache.outputs[n] = std::move(out);
        }
        for (auto e : g.out_edges(n)) {
            if (mask.kept(e)) dirty[g.edge(e).dst] = true;
        }
    }
}

inline void rollback(PromptState& st) {
    for (auto& [n, m] : st.undo) st.cache.outputs[n] = std::move(m);
    st.undo.clear();
    if (st.undo_logits.size()) st.cache.logits = std::move(st.undo_logits);
    st.undo_logits = Matrix();
}

}  // namespace detail

// Edge-ablation circuit discovery.
//
// Destinations are visited in reverse topological order and, within a destination, incoming edges by
// descending source rank. Each edge is scored against the current (already pruned) mask and removed when
// its score is below tau; removals are cumulative. Edges whose destination no longer reaches the output
// score exactly zero and are removed without a forward pass.
inline DiscoveryResult discover(const Model& model, const std::vector<TokenizedPrompt>& batch,
                                const DiscoveryConfig& config) {
    config.validate();
    require(!batch.empty(), "discover: empty batch");
    const auto start = std::chrono::steady_clock::now();
    const auto& g = *model.graph();
    const std::size_t vocab = model.vocab_size();
    for (const auto& p : batch) {
        require(p.target_first_token >= 0 && static_cast<std::size_t>(p.target_first_token) < vocab,
                "discover: target token out of vocabulary");
    }

    MeanActivations means;
    AblationContext ablation{config.ablation, nullptr};
    if (config.ablation == AblationMode::mean) {
        std::vector<Tokens> ref;
        for (const auto& p : batch) ref.push_back(p.tokens);
        means = compute_means(model, ref);
        ablation.means = &means;
    }

    DiscoveryResult result;
    result.config = config;
    Circuit mask = Circuit::full(model.graph());

    std::vector<detail::PromptState> states(batch.size());
    parallel_for(batch.size(), config.threads, [&](std::size_t i) {
        auto r = run_masked(model, batch[i].tokens, mask, {ablation, true});
        states[i].cache = std::move(r.cache);
        states[i].log_prob = detail::target_log_prob(states[i].cache, vocab, batch[i].target_first_token);
    });

    std::vector<double> trial(batch.size());
    std::size_t order = 0;
    for (std::size_t dst = g.node_count() - 1; dst > 0; --dst) {
        const auto reaches = detail::backward_reach(mask);
        const auto& ins = g.in_edges(dst);
        for (auto it = ins.rbegin(); it != ins.rend(); ++it) {
            const std::size_t edge = *it;
            double score = 0.0;
            mask.remove(edge);
            if (reaches[dst]) {
                parallel_for(batch.size(), config.threads, [&](std::size_t i) {
                    detail::propagate_with_undo(model, mask, states[i], dst, ablation);
                    trial[i] = detail::target_log_prob(states[i].cache, vocab, batch[i].target_first_token);
                });
                double sum = 0.0;
                for (std::size_t i = 0; i < batch.size(); ++i) sum += states[i].log_prob - trial[i];
                score = sum / static_cast<double>(batch.size());
                result.forward_passes += batch.size();
                ++result.evaluated_edges;
            }
            const bool keep = score >= config.tau;
            if (keep) {
                mask.keep(edge);
                if (reaches[dst]) {
                    for (auto& st : states) detail::rollback(st);
                }
            } else if (reaches[dst]) {
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    states[i].log_prob = trial[i];
                    states[i].undo.clear();
                    states[i].undo_logits = Matrix();
                }
            }
            mask.set_score(edge, score);
            if (config.log_scores) result.scored.push_back({edge, score, keep, order});
            ++order;
        }
    }

    mask.provenance.tau = config.tau;
    mask.provenance.metric = config.metric;
    mask.provenance.ablation = config.ablation;
    mask.provenance.dataset_id = config.dataset_id;
    result.circuit = std::move(mask);
    result.connected = is_connected(result.circuit);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// Evaluation-ordered (edge, score, kept) log.
inline const std::vector<ScoredEdge>& discovery_progress(const DiscoveryResult& r) {
    require(r.config.log_scores, "discovery_progress: score logging was disabled");
    return r.scored;
}

// Re-applies logged decisions to the full graph.
inline Circuit replay(const GraphPtr& g, const std::vector<ScoredEdge>& log) {
    Circuit c = Circuit::full(g);
    for (const auto& s : log) {
        if (!s.kept) c.remove(s.edge);
    }
    return c;
}

}  // namespace kc
