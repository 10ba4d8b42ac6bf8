#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "tokenizer.hpp"

namespace kc {

// W_U . LN_final(state). The final norm is used for every layer.
inline Vector unembed(const Model& model, const Vector& state) {
    if (model.config().norm_kind == NormKind::rmsnorm) {
        require(state.cwiseAbs().maxCoeff() > 0.0f, "unembed: zero state cannot be rms-normalized");
    }
    return model.unembed_normed(model.final_norm(state));
}

inline std::size_t rank_in(const Vector& logits, TokenId token) {
    require(token >= 0 && token < logits.size(), "rank: token out of vocabulary");
    return ops::rank_of(logits.data(), static_cast<std::size_t>(logits.size()), static_cast<std::size_t>(token));
}

inline double prob_in(const Vector& logits, TokenId token) {
    require(token >= 0 && token < logits.size(), "prob: token out of vocabulary");
    return std::exp(ops::log_prob(logits.data(), static_cast<std::size_t>(logits.size()), static_cast<std::size_t>(token)));
}

enum class LensPosition { last_token, last_subject_token };

inline std::string position_name(LensPosition p) {
    return p == LensPosition::last_token ? "last_token" : "last_subject_token";
}

struct LensPoint {
    std::size_t layer = 0;
    LensPosition position = LensPosition::last_token;
    std::size_t rank = 0;
    double prob = 0.0;
};

struct LensTrace {
    TokenId target = 0;
    std::vector<LensPoint> points;  // layer-major, last_token before last_subject_token

    const LensPoint& at(std::size_t layer, LensPosition pos) const {
        for (const auto& p : points) {
            if (p.layer == layer && p.position == pos) return p;
        }
        throw Error("lens: no trace point for layer " + std::to_string(layer));
    }
};

// Per layer, rank and probability of `target` read from the residual after that layer's MLP.
inline LensTrace trace_target(const Model& model, const ActivationCache& full_cache, const TokenizedPrompt& prompt,
                              TokenId target) {
    require(!prompt.subject_span.empty(), "trace_target: prompt has no subject span");
    require(full_cache.residual_after_layer.size() == model.config().n_layers,
            "trace_target: cache must come from run_full");
    LensTrace tr;
    tr.target = target;
    const std::pair<LensPosition, std::size_t> positions[] = {{LensPosition::last_token, prompt.last()},
                                                              {LensPosition::last_subject_token, prompt.last_subject()}};
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        for (const auto& [pos, idx] : positions) {
            const Vector logits = unembed(model, full_cache.residual_after_layer[l].row(static_cast<Eigen::Index>(idx)));
            tr.points.push_back({l, pos, rank_in(logits, target), prob_in(logits, target)});
        }
    }
    return tr;
}

inline LensTrace trace_target(const Model& model, const TokenizedPrompt& prompt, TokenId target) {
    const auto r = run_full(model, prompt.tokens);
    return trace_target(model, r.cache, prompt, target);
}

struct TokenLogit {
    TokenId token = 0;
    float logit = 0.0f;
    std::string text;
};

// Top-k vocabulary reading of one node's output at one position.
inline std::vector<TokenLogit> node_lens(const Model& model, const ActivationCache& cache, std::size_t node,
                                         std::size_t position, std::size_t k, const Tokenizer* tok = nullptr) {
    const Vector logits = unembed(model, cache.outputs.at(node).row(static_cast<Eigen::Index>(position)));
    std::vector<TokenLogit> out;
    for (auto id : ops::top_k(logits.data(), static_cast<std::size_t>(logits.size()), k)) {
        TokenLogit t{static_cast<TokenId>(id), logits[static_cast<Eigen::Index>(id)], {}};
        if (tok && id < tok->vocab_size()) t.text = tok->token_bytes(static_cast<TokenId>(id));
        out.push_back(std::move(t));
    }
    return out;
}

enum class HeadClass { mover, relation, mixture, other };

inline std::string head_class_name(HeadClass c) {
    switch (c) {
        case HeadClass::mover:
            return "Mover";
        case HeadClass::relation:
            return "Relation";
        case HeadClass::mixture:
            return "Mixture";
        case HeadClass::other:
            break;
    }
    return "Other";
}

struct SpanMass {
    double subject = 0.0;
    double relation = 0.0;
    double other = 0.0;
};

struct ClassifyThresholds {
    double span = 0.5;  // single-span attention mass for Mover / Relation
    double mix = 0.3;   // per-span mass for Mixture
    std::size_t k = 10;
};

struct HeadProfile {
    NodeId head;
    TokenId target = 0;
    std::vector<float> attention_from_last;
    SpanMass span_mass;
    std::vector<TokenLogit> top_tokens;
    HeadClass cls = HeadClass::other;
};

inline HeadClass classify_head(const HeadProfile& p, const ClassifyThresholds& th,
                               const std::vector<std::string>& relation_hint_tokens) {
    const std::size_t k = std::min(th.k, p.top_tokens.size());
    const bool target_in_top =
        std::any_of(p.top_tokens.begin(), p.top_tokens.begin() + static_cast<std::ptrdiff_t>(k),
                    [&](const TokenLogit& t) { return t.token == p.target; });
    const bool mover = p.span_mass.subject >= th.span && target_in_top;
    if (mover) return HeadClass::mover;
    bool relation = false;
    if (p.span_mass.relation >= th.span) {
        require(!relation_hint_tokens.empty(), "classify_head: relation verdict needs relation_hint_tokens");
        std::set<std::string> hints;
        for (const auto& h : relation_hint_tokens) hints.insert(detail::trim(h));
        relation = std::any_of(p.top_tokens.begin(), p.top_tokens.begin() + static_cast<std::ptrdiff_t>(k),
                               [&](const TokenLogit& t) { return hints.count(detail::trim(t.text)) > 0; });
    }
    if (relation) return HeadClass::relation;
    if (p.span_mass.subject >= th.mix && p.span_mass.relation >= th.mix) return HeadClass::mixture;
    return HeadClass::other;
}

inline HeadProfile head_profile(const Model& model, const ActivationCache& cache, const TokenizedPrompt& prompt,
                                const NodeId& head, TokenId target, const ClassifyThresholds& th,
                                const std::vector<std::string>& relation_hint_tokens, const Tokenizer* tok = nullptr) {
    require(head.is_attn(), "head_profile: node is not an attention head");
    require(!prompt.subject_span.empty(), "head_profile: prompt has no annotated subject span");
    const auto& cfg = model.config();
    const auto& pattern = cache.attention.at(head.layer * cfg.n_heads + head.head);
    require(pattern.rows() == static_cast<Eigen::Index>(prompt.tokens.size()), "head_profile: cache does not match prompt");
    HeadProfile p;
    p.head = head;
    p.target = target;
    const auto last = static_cast<Eigen::Index>(prompt.last());
    std::vector<bool> is_rel(prompt.tokens.size(), false);
    for (auto r : prompt.relation_positions) is_rel[r] = true;
    for (Eigen::Index c = 0; c < pattern.cols(); ++c) {
        const float a = pattern(last, c);
        p.attention_from_last.push_back(a);
        const auto pos = static_cast<std::size_t>(c);
        if (prompt.subject_span.contains(pos)) {
            p.span_mass.subject += a;
        } else if (is_rel[pos]) {
            p.span_mass.relation += a;
        } else {
            p.span_mass.other += a;
        }
    }
    p.top_tokens = node_lens(model, cache, model.graph()->index_of(head), prompt.last(), th.k, tok);
    p.cls = classify_head(p, th, relation_hint_tokens);
    return p;
}

struct TokenDelta {
    TokenId token = 0;
    double delta = 0.0;  // ablated minus clean probability
    std::string text;
};

struct AblationEffect {
    NodeId head;
    double target_before = 0.0;
    double target_after = 0.0;
    std::vector<TokenDelta> increases;
    std::vector<TokenDelta> decreases;
    double delta_sum = 0.0;
};

// Removes every outgoing edge of `node` from `base`.
inline Circuit without_node_outputs(const Circuit& base, std::size_t node) {
    Circuit c = base;
    for (auto e : base.graph().out_edges(node)) c.remove(e);
    return c;
}

// Next-token distribution shift at the last position from removing all outgoing edges of `head`.
inline AblationEffect head_ablation_effect(const Model& model, const Tokens& tokens, const NodeId& head, std::size_t k,
                                           std::optional<TokenId> target = std::nullopt, const Tokenizer* tok = nullptr) {
    const auto& g = *model.graph();
    const auto clean = run_full(model, tokens);
    const Circuit mask = without_node_outputs(Circuit::full(model.graph()), g.index_of(head));
    const auto ablated = run_masked(model, tokens, mask, {{}, true});
    const std::size_t V = model.vocab_size();
    const auto p0 = ops::softmax(clean.cache.last_logits(), V);
    const auto p1 = ops::softmax(ablated.cache.last_logits(), V);
    AblationEffect eff;
    eff.head = head;
    std::vector<TokenDelta> deltas(V);
    for (std::size_t i = 0; i < V; ++i) {
        deltas[i] = {static_cast<TokenId>(i), p1[i] - p0[i], {}};
        eff.delta_sum += deltas[i].delta;
    }
    if (target) {
        eff.target_before = p0.at(static_cast<std::size_t>(*target));
        eff.target_after = p1.at(static_cast<std::size_t>(*target));
    }
    auto fill_text = [&](std::vector<TokenDelta>& v) {
        if (!tok) return;
        for (auto& d : v) d.text = tok->token_bytes(d.token);
    };
    const std::size_t kk = std::min(k, V);
    std::vector<TokenDelta> inc = deltas;
    std::partial_sort(inc.begin(), inc.begin() + static_cast<std::ptrdiff_t>(kk), inc.end(),
                      [](const TokenDelta& a, const TokenDelta& b) {
                          return a.delta > b.delta || (a.delta == b.delta && a.token < b.token);
                      });
    inc.resize(kk);
    std::vector<TokenDelta> dec = std::move(deltas);
    std::partial_sort(dec.begin(), dec.begin() + static_cast<std::ptrdiff_t>(kk), dec.end(),
                      [](const TokenDelta& a, const TokenDelta& b) {
                          return a.delta < b.delta || (a.delta == b.delta && a.token < b.token);
                      });
    dec.resize(kk);
    fill_text(inc);
    fill_text(dec);
    eff.increases = std::move(inc);
    eff.decreases = std::move(dec);
    return eff;
}

}  // namespace kc
