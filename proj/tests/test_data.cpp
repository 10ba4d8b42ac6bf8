#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace {

const char* k_france =
    R"({"subject":"France","relation_id":"country_language","template":"The official language of {subject} is","object":"French","relation_hint_tokens":["language"]})";

kc::KnowledgeTriplet france() { return kc::triplet_from_json(nlohmann::json::parse(k_france)); }

}  // namespace

TEST(Data, ParseOneRecord) {
    std::istringstream in(std::string(k_france) + "\n\n");
    const auto ds = kc::parse_dataset(in, "x");
    ASSERT_EQ(ds.records.size(), 1u);
    EXPECT_EQ(ds.records[0].object, "French");
    EXPECT_EQ(ds.records[0].relation_hint_tokens, std::vector<std::string>{"language"});
}

TEST(Data, MissingPlaceholderReportsLine) {
    std::istringstream in(std::string(k_france) + "\n" +
                          R"({"subject":"Spain","relation_id":"r","template":"No placeholder","object":"x"})" + "\n");
    try {
        kc::parse_dataset(in, "bad");
        FAIL();
    } catch (const kc::Error& e) {
        EXPECT_NE(std::string(e.what()).find("bad:2"), std::string::npos) << e.what();
    }
}

TEST(Data, MalformedAndDuplicateLines) {
    std::istringstream junk("{not json\n");
    EXPECT_THROW(kc::parse_dataset(junk), kc::Error);
    std::istringstream dup(std::string(k_france) + "\n" + k_france + "\n");
    EXPECT_THROW(kc::parse_dataset(dup), kc::Error);
    auto t = france();
    t.object = "  ";
    EXPECT_THROW(kc::validate_triplet(t), kc::Error);
    t = france();
    t.template_text = "{subject} and {subject}";
    EXPECT_THROW(kc::validate_triplet(t), kc::Error);
}

TEST(Data, RenderPrompt) {
    auto t = france();
    EXPECT_EQ(kc::render_prompt(t), "The official language of France is");
    t.subject = "  France ";
    t.template_text = "The official language of {subject} is ";
    EXPECT_EQ(kc::render_prompt(t), "The official language of France is");
    kc::KnowledgeTriplet a{"big", "adj_comparative", "The comparative form of {subject} is", "bigger", {"more"},
                           {{"The comparative form of small is", "smaller"}}, std::nullopt, "linguistic"};
    EXPECT_EQ(kc::render_prompt(a, true), "The comparative form of small is smaller\nThe comparative form of big is");
    a.demos = {{"", ""}};
    EXPECT_EQ(kc::render_prompt(a, true), kc::render_prompt(a, false));
}

TEST(Data, TokenizeAlignFrance) {
    const auto& tok = kct::gpt2_tokenizer();
    const auto tp = kc::tokenize_align(tok, france());
    // The | official | language | of | France | is
    EXPECT_EQ(tp.tokens.size(), 6u);
    EXPECT_EQ(tp.subject_span.begin, 4u);
    EXPECT_EQ(tp.subject_span.end, 5u);
    EXPECT_EQ(tok.decode({tp.tokens.begin() + 4, tp.tokens.begin() + 5}), " France");
    EXPECT_EQ(tp.target_first_token, tok.encode(" French").front());
    EXPECT_EQ(tp.relation_positions, (std::vector<std::size_t>{1, 2, 3, 5}));
}

TEST(Data, TokenizeAlignIcl) {
    const auto& tok = kct::gpt2_tokenizer();
    kc::KnowledgeTriplet a{"big", "adj_comparative", "The comparative form of {subject} is", "bigger", {"more"},
                           {{"The comparative form of small is", "smaller"}}, std::nullopt, "linguistic"};
    const auto tp = kc::tokenize_align(tok, a, true);
    EXPECT_EQ(tok.decode({tp.tokens.begin() + static_cast<std::ptrdiff_t>(tp.subject_span.begin),
                          tp.tokens.begin() + static_cast<std::ptrdiff_t>(tp.subject_span.end)}),
              " big");
    for (auto p : tp.relation_positions) EXPECT_GT(p, 7u);  // demo tokens are not relation tokens
}

TEST(Data, TokenizeAlignErrors) {
    const auto& tok = kct::gpt2_tokenizer();
    kc::KnowledgeTriplet twice{"is", "r", "This {subject} what it is", "x", {}, {}, std::nullopt, ""};
    EXPECT_THROW(kc::tokenize_align(tok, twice), kc::Error);
    // subject glued into a larger word is not a token span
    kc::KnowledgeTriplet glued{"Fran", "r", "The country {subject}ce is", "x", {}, {}, std::nullopt, ""};
    EXPECT_THROW(kc::tokenize_align(tok, glued), kc::Error);
    kc::WarningSink sink;
    sink.echo = false;
    const auto rep = kc::tokenize_all(tok, {france(), glued}, false, &sink);
    EXPECT_EQ(rep.prompts.size(), 1u);
    EXPECT_EQ(rep.skipped.size(), 1u);
    EXPECT_EQ(sink.messages.size(), 1u);
}

TEST(Data, RelationSpanHint) {
    auto t = france();
    t.relation_span_hint = std::vector<std::size_t>{2};
    EXPECT_EQ(kc::tokenize_align(kct::gpt2_tokenizer(), t).relation_positions, std::vector<std::size_t>{2});
    t.relation_span_hint = std::vector<std::size_t>{4};
    EXPECT_THROW(kc::tokenize_align(kct::gpt2_tokenizer(), t), kc::Error);
}

TEST(Data, ShippedDatasetsAlign) {
    const auto& tok = kct::gpt2_tokenizer();
    for (const char* name : {"country_capital_city", "country_language", "adj_comparative"}) {
        const auto ds = kc::load_dataset((kct::source_dir() / "data/datasets" / (std::string(name) + ".jsonl")).string());
        EXPECT_EQ(ds.id, name);
        const bool icl = std::string(name) == "adj_comparative";
        const auto rep = kc::tokenize_all(tok, ds.records, icl);
        EXPECT_TRUE(rep.skipped.empty()) << name;
        for (const auto& p : rep.prompts) {
            const auto& subject = ds.records[p.source_index].subject;
            const auto text = tok.decode({p.tokens.begin() + static_cast<std::ptrdiff_t>(p.subject_span.begin),
                                          p.tokens.begin() + static_cast<std::ptrdiff_t>(p.subject_span.end)});
            EXPECT_TRUE(text == subject || text == " " + subject) << text;
            for (auto r : p.relation_positions) EXPECT_FALSE(p.subject_span.contains(r));
        }
    }
}

TEST(Data, DatasetSaveLoadRoundTrip) {
    const auto ds = kc::load_dataset((kct::source_dir() / "data/datasets/adj_comparative.jsonl").string());
    const auto path = kct::scratch_dir("dataset") / "copy.jsonl";
    kc::save_dataset(ds.records, path.string());
    const auto back = kc::load_dataset(path.string());
    ASSERT_EQ(back.records.size(), ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        EXPECT_EQ(kc::triplet_to_json(back.records[i]), kc::triplet_to_json(ds.records[i]));
    }
    EXPECT_EQ(back.category, "linguistic");
}

TEST(Data, Splits) {
    for (std::size_t n : {0u, 1u, 2u, 7u, 30u}) {
        const auto s = kc::make_splits(n, 5);
        EXPECT_EQ(s.d_val.size() + s.d_test.size(), n);
        EXPECT_LE(s.d_val.size() - s.d_test.size(), 1u);
        std::vector<std::size_t> common;
        std::set_intersection(s.d_val.begin(), s.d_val.end(), s.d_test.begin(), s.d_test.end(),
                              std::back_inserter(common));
        EXPECT_TRUE(common.empty());
        const auto again = kc::make_splits(n, 5);
        EXPECT_EQ(again.d_val, s.d_val);
        const auto back = kc::splits_from_json(kc::splits_to_json(s));
        EXPECT_EQ(back.d_test, s.d_test);
        EXPECT_EQ(back.seed, 5u);
    }
    EXPECT_NE(kc::make_splits(30, 1).d_val, kc::make_splits(30, 2).d_val);
}

TEST(Data, FilterKnownUniformLogits) {
    const auto& tok = kct::gpt2_tokenizer();
    auto c = kct::toy_config(1, 1, 4, tok.vocab_size(), 64);
    auto w = kc::random_weights(c, 1);
    w.w_u_t.setZero();
    const auto m = kc::make_model(c, w);
    const auto ds = kc::load_dataset((kct::source_dir() / "data/datasets/country_capital_city.jsonl").string());
    const auto prompts = kc::tokenize_all(tok, ds.records).prompts;
    const auto rep = kc::filter_known(*m, prompts, ds.records, 10);
    EXPECT_LT(static_cast<double>(rep.kept.size()) / static_cast<double>(prompts.size()), 0.05);
    EXPECT_EQ(rep.by_relation.at("country_capital_city").total, prompts.size());
    const auto all = kc::filter_known(*m, prompts, ds.records, m->vocab_size());
    EXPECT_EQ(all.kept.size(), prompts.size());
}
