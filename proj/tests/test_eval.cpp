#include <gtest/gtest.h>

#include "support.hpp"

using kc::NodeId;

namespace {

std::vector<kc::TokenizedPrompt> argmax_prompts(const kc::Model& m, std::vector<kc::TokenizedPrompt> ps) {
    for (auto& p : ps) {
        const auto r = kc::run_full(m, p.tokens);
        p.target_first_token = static_cast<kc::TokenId>(kc::ops::top_k(r.cache.last_logits(), m.vocab_size(), 1)[0]);
    }
    return ps;
}

}  // namespace

TEST(Eval, HitAtKBounds) {
    const auto m = kct::toy_model(2, 2, 11);
    const auto ps = kct::random_prompts(60, 2, 10, m->vocab_size(), 3);
    const double h1 = kc::hit_at_k(*m, ps, 1);
    const double h10 = kc::hit_at_k(*m, ps, 10);
    EXPECT_LE(h1, h10);
    EXPECT_LE(h10, 1.0);
    EXPECT_EQ(kc::hit_at_k(*m, ps, m->vocab_size()), 1.0);
    EXPECT_THROW(kc::hit_at_k(*m, {}, 10), kc::Error);
}

TEST(Eval, ArgmaxTargetsHitAtOne) {
    const auto m = kct::toy_model(2, 2, 12);
    const auto ps = argmax_prompts(*m, kct::random_prompts(30, 2, 8, m->vocab_size(), 4));
    EXPECT_EQ(kc::hit_at_k(*m, ps, 1), 1.0);
    const auto full = kc::Circuit::full(m->graph());
    EXPECT_EQ(kc::hit_at_k(*m, ps, 1, &full), 1.0);
}

TEST(Eval, FullCircuitMatchesModel) {
    const auto m = kct::toy_model(3, 2, 13);
    const auto ps = kct::random_prompts(200, 2, 12, m->vocab_size(), 5);
    const auto full = kc::Circuit::full(m->graph());
    EXPECT_EQ(kc::hit_at_k(*m, ps, 10, &full), kc::hit_at_k(*m, ps, 10));
    EXPECT_NEAR(kc::mean_target_prob_percent(*m, ps, &full), kc::mean_target_prob_percent(*m, ps), 1e-4);
}

TEST(Eval, EmptyCircuitIsNotTheModel) {
    const auto m = kct::toy_model(2, 2, 14);
    const auto ps = argmax_prompts(*m, kct::random_prompts(30, 3, 8, m->vocab_size(), 6));
    const auto none = kc::Circuit::empty(m->graph());
    EXPECT_LT(kc::hit_at_k(*m, ps, 1, &none), 1.0);
}

TEST(Eval, CompletenessReport) {
    const auto m = kct::toy_model(2, 2, 15);
    const auto ps = argmax_prompts(*m, kct::random_prompts(24, 3, 8, m->vocab_size(), 7));
    const std::vector<kc::TokenizedPrompt> val(ps.begin(), ps.begin() + 12), test(ps.begin() + 12, ps.end());
    kc::DiscoveryConfig dc;
    dc.tau = 0.01;
    dc.dataset_id = "toy";
    const auto c = kc::discover(*m, val, dc).circuit;
    const auto rep = kc::completeness(*m, c, val, test, {1, 2, 3}, "toy", 10);
    EXPECT_EQ(rep.edge_count, c.kept_count());
    EXPECT_EQ(rep.total_edges, 26u);
    EXPECT_EQ(rep.tau, 0.01);
    EXPECT_EQ(rep.val.full, 1.0);
    EXPECT_EQ(rep.test.full, 1.0);
    ASSERT_EQ(rep.val.random_per_seed.size(), 3u);
    double s = 0.0;
    for (auto v : rep.val.random_per_seed) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
    }
    EXPECT_NEAR(rep.val.random, s / 3.0, 1e-12);
    EXPECT_THROW(kc::completeness(*m, c, val, test, {1}, "other"), kc::Error);
    EXPECT_THROW(kc::completeness(*m, c, val, test, {}, "toy"), kc::Error);

    const auto full = kc::Circuit::full(m->graph());
    const auto frep = kc::completeness(*m, full, val, test, {4});
    EXPECT_EQ(frep.val.circuit, frep.val.full);
    EXPECT_EQ(frep.val.random, frep.val.full);

    const auto other = kct::toy_model(3, 2, 15);
    EXPECT_THROW(kc::completeness(*other, c, val, test, {1}), kc::Error);
}

TEST(Eval, DiffOfIdenticalCheckpointsIsEmpty) {
    const auto m = kct::toy_model(2, 2, 16);
    const auto ps = argmax_prompts(*m, kct::random_prompts(4, 4, 8, m->vocab_size(), 8));
    kc::ProbePrompt u{"u", "t", ps[1].tokens, 3};
    kc::DiffConfig cfg;
    cfg.discovery.tau = 0.01;
    const auto rep = kc::circuit_diff(*m, *m, ps, {"x"}, {u}, cfg);
    EXPECT_TRUE(rep.empty());
    EXPECT_TRUE(rep.nodes_added.empty());
    EXPECT_TRUE(rep.nodes_removed.empty());
    ASSERT_EQ(rep.unrelated.size(), 1u);
    EXPECT_EQ(rep.unrelated[0].before, rep.unrelated[0].after);
    EXPECT_EQ(rep.trace_before.points.size(), rep.trace_after.points.size());
    for (std::size_t i = 0; i < rep.trace_before.points.size(); ++i) {
        EXPECT_EQ(rep.trace_before.points[i].rank, rep.trace_after.points[i].rank);
    }

    const auto bigger = kct::toy_model(3, 2, 16);
    EXPECT_THROW(kc::circuit_diff(*m, *bigger, ps, {"x"}, {}, cfg), kc::Error);
}

TEST(Eval, DiffSeesAnEditedHead) {
    const auto c = kct::toy_config(2, 2);
    auto w = kc::random_weights(c, 17, 0.4f);
    const auto before = kc::make_model(c, w);
    w.layers[1].w_o[0] *= 25.0f;
    const auto after = kc::make_model(c, w);
    const auto ps = argmax_prompts(*after, kct::random_prompts(4, 4, 8, c.vocab_size, 9));
    kc::DiffConfig cfg;
    cfg.discovery.tau = 0.01;
    const auto rep = kc::circuit_diff(*before, *after, ps, {"x"}, {}, cfg);
    for (auto e : rep.added) EXPECT_TRUE(rep.after.kept(e) && !rep.before.kept(e)) << e;
    for (auto e : rep.removed) EXPECT_TRUE(rep.before.kept(e) && !rep.after.kept(e)) << e;
    EXPECT_FALSE(rep.empty());
}

TEST(Eval, AblateNodesRemovesOutgoingEdges) {
    const auto m = kct::toy_model(2, 2, 18);
    const auto c = kc::ablate_nodes(m->graph(), {NodeId::attn(0, 1)});
    const auto& g = *m->graph();
    const auto n = g.index_of(NodeId::attn(0, 1));
    for (std::size_t e = 0; e < g.edge_count(); ++e) EXPECT_EQ(c.kept(e), g.edge(e).src != n);
}

TEST(Eval, IclWithIdenticalPromptsHasNoExtraHeads) {
    const auto m = kct::toy_model(2, 2, 19);
    const auto ps = argmax_prompts(*m, kct::random_prompts(4, 4, 8, m->vocab_size(), 10));
    kc::DiscoveryConfig dc;
    dc.tau = 0.01;
    const auto rep = kc::icl_compare(*m, ps, ps, dc, {1, 2});
    EXPECT_TRUE(rep.no_extra_heads);
    EXPECT_TRUE(rep.extra_heads.empty());
    EXPECT_NEAR(rep.ablate_extra, rep.original, 1e-4);
    EXPECT_EQ(rep.ablate_random_per_seed.size(), 2u);
    EXPECT_THROW(kc::icl_compare(*m, ps, {}, dc, {1}), kc::Error);
}

TEST(Eval, IclExtraHeadsAreCircuitDifference) {
    const auto m = kct::toy_model(3, 3, 20);
    const auto zs = argmax_prompts(*m, kct::random_prompts(4, 3, 5, m->vocab_size(), 11));
    auto icl = zs;
    kc::Rng rng(12);
    for (auto& p : icl) {
        kc::Tokens demo;
        for (int i = 0; i < 5; ++i) demo.push_back(static_cast<kc::TokenId>(rng.below(m->vocab_size())));
        p.tokens.insert(p.tokens.begin(), demo.begin(), demo.end());
    }
    kc::DiscoveryConfig dc;
    dc.tau = 0.005;
    const auto rep = kc::icl_compare(*m, zs, icl, dc, {1, 2, 3});
    const auto& g = *m->graph();
    for (const auto& h : rep.extra_heads) {
        const auto n = g.index_of(h);
        EXPECT_TRUE(h.is_attn());
        bool in_icl = false, in_zs = false;
        for (auto x : rep.icl.node_indices()) in_icl = in_icl || x == n;
        for (auto x : rep.zero_shot.node_indices()) in_zs = in_zs || x == n;
        EXPECT_TRUE(in_icl && !in_zs) << kc::node_name(h);
    }
    EXPECT_EQ(rep.no_extra_heads, rep.extra_heads.empty());
}

TEST(Eval, FilterKnownKeepsHitAtKFraction) {
    const auto m = kct::toy_model(2, 2, 21);
    auto ps = kct::random_prompts(80, 2, 10, m->vocab_size(), 13);
    std::vector<kc::KnowledgeTriplet> recs(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) recs[i].relation_id = i % 2 ? "a" : "b";
    const auto rep = kc::filter_known(*m, ps, recs, 10);
    EXPECT_DOUBLE_EQ(static_cast<double>(rep.kept.size()) / static_cast<double>(ps.size()), kc::hit_at_k(*m, ps, 10));
    EXPECT_EQ(rep.by_relation.at("a").total + rep.by_relation.at("b").total, ps.size());
    EXPECT_EQ(rep.by_relation.at("a").kept + rep.by_relation.at("b").kept, rep.kept.size());
}

TEST(Eval, HallucinationProbe) {
    const auto m = kct::toy_model(2, 4, 22);
    auto p = kct::random_prompts(1, 8, 8, m->vocab_size(), 14)[0];
    const auto rep = kc::hallucination_probe(*m, p, 3, 5, {});
    EXPECT_EQ(rep.correct.target, 3);
    EXPECT_EQ(rep.wrong.target, 5);
    EXPECT_EQ(rep.correct.points.size(), 4u);
    for (const auto& mv : rep.movers) EXPECT_GE(mv.span_mass.subject, 0.5);
    kc::ClassifyThresholds all;
    all.span = 0.0;
    EXPECT_EQ(kc::hallucination_probe(*m, p, 3, 5, all).movers.size(), 8u);
}
