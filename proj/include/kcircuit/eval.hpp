#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "discovery.hpp"
#include "graph.hpp"
#include "lens.hpp"
#include "model.hpp"

namespace kc {

// Fraction of prompts whose target first token ranks within the top k at the last position.
// With a circuit the model runs standalone under that circuit (zero ablation elsewhere).
inline double hit_at_k(const Model& model, const std::vector<TokenizedPrompt>& prompts, std::size_t k,
                       const Circuit* circuit = nullptr, std::size_t threads = 0) {
    require(!prompts.empty(), "hit_at_k: empty split");
    std::vector<std::uint8_t> hit(prompts.size(), 0);
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        const auto r = circuit ? run_masked(model, prompts[i].tokens, *circuit, {{}, true})
                               : run_full(model, prompts[i].tokens);
        hit[i] = target_rank(r.cache, model.vocab_size(), prompts[i].target_first_token) <= k ? 1 : 0;
    });
    std::size_t n = 0;
    for (auto h : hit) n += h;
    return static_cast<double>(n) / static_cast<double>(prompts.size());
}

// Mean probability (in percent) of each prompt's target first token at the last position.
inline double mean_target_prob_percent(const Model& model, const std::vector<TokenizedPrompt>& prompts,
                                       const Circuit* circuit = nullptr, std::size_t threads = 0) {
    require(!prompts.empty(), "mean_target_prob: empty prompt list");
    std::vector<double> p(prompts.size());
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        const auto r = circuit ? run_masked(model, prompts[i].tokens, *circuit, {{}, true})
                               : run_full(model, prompts[i].tokens);
        p[i] = std::exp(detail::target_log_prob(r.cache, model.vocab_size(), prompts[i].target_first_token));
    });
    double s = 0.0;
    for (auto v : p) s += v;
    return 100.0 * s / static_cast<double>(prompts.size());
}

struct SplitScores {
    double full = 0.0;
    double circuit = 0.0;
    double random = 0.0;  // mean over random seeds
    std::vector<double> random_per_seed;
};

struct CompletenessReport {
    SplitScores val;
    SplitScores test;
    std::size_t edge_count = 0;
    std::size_t total_edges = 0;
    double tau = 0.0;
    std::string dataset_id;
    std::vector<std::uint64_t> seeds;
    std::size_t k = 10;
};

// Full model vs circuit standalone vs size-matched random circuits, on both splits.
inline CompletenessReport completeness(const Model& model, const Circuit& circuit,
                                       const std::vector<TokenizedPrompt>& val, const std::vector<TokenizedPrompt>& test,
                                       const std::vector<std::uint64_t>& seeds, const std::string& dataset_id = {},
                                       std::size_t k = 10, std::size_t threads = 0) {
    require(circuit.graph() == *model.graph(), "completeness: circuit was built for a different graph");
    require(dataset_id.empty() || circuit.provenance.dataset_id.empty() || dataset_id == circuit.provenance.dataset_id,
            "completeness: circuit was discovered on '" + circuit.provenance.dataset_id + "', not '" + dataset_id + "'");
    require(!seeds.empty(), "completeness: need at least one random seed");
    CompletenessReport rep;
    rep.edge_count = circuit.kept_count();
    rep.total_edges = circuit.graph().edge_count();
    rep.tau = circuit.provenance.tau;
    rep.dataset_id = dataset_id.empty() ? circuit.provenance.dataset_id : dataset_id;
    rep.seeds = seeds;
    rep.k = k;
    std::vector<Circuit> randoms;
    for (auto s : seeds) {
        randoms.push_back(rep.edge_count == 0 ? Circuit::empty(model.graph())
                                              : random_circuit(model.graph(), rep.edge_count, s));
    }
    auto fill = [&](SplitScores& out, const std::vector<TokenizedPrompt>& prompts) {
        if (prompts.empty()) return;
        out.full = hit_at_k(model, prompts, k, nullptr, threads);
        out.circuit = hit_at_k(model, prompts, k, &circuit, threads);
        double sum = 0.0;
        for (const auto& rc : randoms) {
            out.random_per_seed.push_back(hit_at_k(model, prompts, k, &rc, threads));
            sum += out.random_per_seed.back();
        }
        out.random = sum / static_cast<double>(randoms.size());
    };
    fill(rep.val, val);
    fill(rep.test, test);
    return rep;
}

struct ProbePrompt {
    std::string prompt;
    std::string target;
    Tokens tokens;
    TokenId target_token = 0;
};

inline ProbePrompt make_probe(const Tokenizer& tok, const std::string& prompt, const std::string& target) {
    ProbePrompt p{prompt, target, tok.encode(prompt), 0};
    require(!p.tokens.empty(), "probe: empty prompt");
    const Tokens t = tok.encode(" " + detail::trim(target));
    require(!t.empty(), "probe: empty target");
    p.target_token = t.front();
    return p;
}

struct HeadClassChange {
    NodeId head;
    HeadClass before = HeadClass::other;
    HeadClass after = HeadClass::other;
    std::vector<TokenLogit> top_before;
    std::vector<TokenLogit> top_after;
};

struct ProbeProbability {
    std::string prompt;
    std::string target;
    double before = 0.0;  // percent
    double after = 0.0;
};

struct DiffReport {
    Circuit before;
    Circuit after;
    std::vector<std::size_t> added;    // edge ids kept only after editing
    std::vector<std::size_t> removed;  // edge ids kept only before editing
    std::vector<std::size_t> nodes_added;
    std::vector<std::size_t> nodes_removed;
    std::vector<HeadClassChange> head_changes;  // heads present in either circuit whose class differs
    std::vector<HeadClassChange> head_classes;  // every head present in either circuit
    LensTrace trace_before;
    LensTrace trace_after;
    std::vector<ProbeProbability> unrelated;

    bool empty() const { return added.empty() && removed.empty() && head_changes.empty(); }
};

struct DiffConfig {
    DiscoveryConfig discovery;
    ClassifyThresholds thresholds;
};

// Discovers circuits on both checkpoints with one configuration and compares them.
// `batch` holds the edited fact(s); the first prompt is the probe for head classes and lens traces.
inline DiffReport circuit_diff(const Model& before, const Model& after, const std::vector<TokenizedPrompt>& batch,
                               const std::vector<std::string>& relation_hints, const std::vector<ProbePrompt>& unrelated,
                               const DiffConfig& config, const Tokenizer* tok = nullptr) {
    require(before.config() == after.config(), "circuit_diff: checkpoints have different configurations");
    require(!batch.empty(), "circuit_diff: no probe prompts");
    DiffReport rep;
    rep.before = discover(before, batch, config.discovery).circuit;
    // Same topology: evaluate the edited model against the original graph object.
    rep.after = discover(after, batch, config.discovery).circuit;
    const auto& g = *before.graph();
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        if (rep.after.kept(e) && !rep.before.kept(e)) rep.added.push_back(e);
        if (rep.before.kept(e) && !rep.after.kept(e)) rep.removed.push_back(e);
    }
    const auto nb = rep.before.node_indices();
    const auto na = rep.after.node_indices();
    std::set_difference(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(rep.nodes_added));
    std::set_difference(nb.begin(), nb.end(), na.begin(), na.end(), std::back_inserter(rep.nodes_removed));

    const auto& probe = batch.front();
    const auto run_b = run_full(before, probe.tokens);
    const auto run_a = run_full(after, probe.tokens);
    std::vector<std::size_t> heads;
    std::set_union(nb.begin(), nb.end(), na.begin(), na.end(), std::back_inserter(heads));
    for (auto n : heads) {
        const NodeId& id = g.node(n);
        if (!id.is_attn()) continue;
        const auto pb = head_profile(before, run_b.cache, probe, id, probe.target_first_token, config.thresholds,
                                     relation_hints, tok);
        const auto pa = head_profile(after, run_a.cache, probe, id, probe.target_first_token, config.thresholds,
                                     relation_hints, tok);
        HeadClassChange ch{id, pb.cls, pa.cls, pb.top_tokens, pa.top_tokens};
        const bool top_changed = pb.top_tokens.empty() != pa.top_tokens.empty() ||
                                 (!pb.top_tokens.empty() && pb.top_tokens.front().token != pa.top_tokens.front().token);
        if (pb.cls != pa.cls || top_changed) rep.head_changes.push_back(ch);
        rep.head_classes.push_back(std::move(ch));
    }
    rep.trace_before = trace_target(before, run_b.cache, probe, probe.target_first_token);
    rep.trace_after = trace_target(after, run_a.cache, probe, probe.target_first_token);
    for (const auto& u : unrelated) {
        const auto rb = run_full(before, u.tokens);
        const auto ra = run_full(after, u.tokens);
        rep.unrelated.push_back({u.prompt, u.target,
                                 100.0 * std::exp(detail::target_log_prob(rb.cache, before.vocab_size(), u.target_token)),
                                 100.0 * std::exp(detail::target_log_prob(ra.cache, after.vocab_size(), u.target_token))});
    }
    return rep;
}

struct ICLReport {
    Circuit zero_shot;
    Circuit icl;
    std::vector<NodeId> extra_heads;
    double original = 0.0;       // percent, ICL prompts, full model
    double ablate_extra = 0.0;   // percent, extra heads' outgoing edges removed
    double ablate_random = 0.0;  // percent, mean over seeds
    std::vector<double> ablate_random_per_seed;
    std::vector<std::uint64_t> seeds;
    bool no_extra_heads = false;
};

// Removes every outgoing edge of each listed node from the full graph.
inline Circuit ablate_nodes(const GraphPtr& g, const std::vector<NodeId>& nodes) {
    Circuit c = Circuit::full(g);
    for (const auto& n : nodes) c = without_node_outputs(c, g->index_of(n));
    return c;
}

// Heads that appear in the in-context circuit but not in the zero-shot circuit, and how much the
// target probability depends on them compared with equally many uninvolved heads.
inline ICLReport icl_compare(const Model& model, const std::vector<TokenizedPrompt>& zero_shot,
                             const std::vector<TokenizedPrompt>& with_demos, const DiscoveryConfig& config,
                             const std::vector<std::uint64_t>& seeds) {
    require(!zero_shot.empty() && zero_shot.size() == with_demos.size(), "icl_compare: prompt lists must match");
    require(!seeds.empty(), "icl_compare: need at least one random seed");
    ICLReport rep;
    rep.seeds = seeds;
    rep.zero_shot = discover(model, zero_shot, config).circuit;
    rep.icl = discover(model, with_demos, config).circuit;
    const auto& g = *model.graph();
    const auto nz = rep.zero_shot.node_indices();
    const auto ni = rep.icl.node_indices();
    std::vector<std::size_t> extra;
    std::set_difference(ni.begin(), ni.end(), nz.begin(), nz.end(), std::back_inserter(extra));
    for (auto n : extra) {
        if (g.node(n).is_attn()) rep.extra_heads.push_back(g.node(n));
    }
    rep.no_extra_heads = rep.extra_heads.empty();
    rep.original = mean_target_prob_percent(model, with_demos, nullptr, config.threads);
    const Circuit extra_mask = ablate_nodes(model.graph(), rep.extra_heads);
    rep.ablate_extra = mean_target_prob_percent(model, with_demos, &extra_mask, config.threads);

    // control heads: attention heads in neither circuit
    std::vector<NodeId> pool;
    std::set<std::size_t> used(nz.begin(), nz.end());
    used.insert(ni.begin(), ni.end());
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        if (g.node(n).is_attn() && !used.count(n)) pool.push_back(g.node(n));
    }
    const std::size_t count = std::min(rep.extra_heads.size(), pool.size());
    double sum = 0.0;
    for (auto s : seeds) {
        Rng rng(s);
        auto shuffled = pool;
        rng.shuffle(shuffled);
        shuffled.resize(count);
        const Circuit m = ablate_nodes(model.graph(), shuffled);
        rep.ablate_random_per_seed.push_back(mean_target_prob_percent(model, with_demos, &m, config.threads));
        sum += rep.ablate_random_per_seed.back();
    }
    rep.ablate_random = sum / static_cast<double>(seeds.size());
    return rep;
}

struct MoverAudit {
    NodeId head;
    SpanMass span_mass;
    bool has_correct = false;
    bool has_wrong = false;
};

struct HallucinationReport {
    LensTrace correct;
    LensTrace wrong;
    std::vector<MoverAudit> movers;  // heads attending mostly to the subject
};

// Rank/probability traces of two competing answers plus which subject-attending heads surface each.
inline HallucinationReport hallucination_probe(const Model& model, const TokenizedPrompt& prompt, TokenId correct,
                                               TokenId wrong, const ClassifyThresholds& th,
                                               const Tokenizer* tok = nullptr) {
    const auto r = run_full(model, prompt.tokens);
    HallucinationReport rep;
    rep.correct = trace_target(model, r.cache, prompt, correct);
    rep.wrong = trace_target(model, r.cache, prompt, wrong);
    const auto& cfg = model.config();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const NodeId id = NodeId::attn(l, h);
            const auto p = head_profile(model, r.cache, prompt, id, correct, th, {"-"}, tok);
            if (p.span_mass.subject < th.span) continue;
            MoverAudit a{id, p.span_mass, false, false};
            for (const auto& t : p.top_tokens) {
                a.has_correct = a.has_correct || t.token == correct;
                a.has_wrong = a.has_wrong || t.token == wrong;
            }
            rep.movers.push_back(a);
        }
    }
    return rep;
}

}  // namespace kc
