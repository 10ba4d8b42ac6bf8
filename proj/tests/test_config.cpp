#include <gtest/gtest.h>

#include "support.hpp"

using kc::ModelConfig;

TEST(Config, Gpt2SmallNodeCount) {
    const auto c = kc::gpt2_small_config();
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.node_count(), 158u);
}

TEST(Config, RejectsKvHeadsThatDoNotDivide) {
    auto c = kc::gpt2_small_config();
    c.n_kv_heads = 5;
    EXPECT_THROW(c.validate(), kc::Error);
}

TEST(Config, RejectsBadWidths) {
    auto c = kct::toy_config(2, 2);
    c.d_model += 1;
    EXPECT_THROW(c.validate(), kc::Error);
    c = kct::toy_config(2, 2);
    c.vocab_size = 1;
    EXPECT_THROW(c.validate(), kc::Error);
    c = kct::toy_config(2, 2);
    c.n_ctx = 0;
    EXPECT_THROW(c.validate(), kc::Error);
    c = kct::toy_config(2, 2, 3);
    c.positional = kc::Positional::rotary;
    EXPECT_THROW(c.validate(), kc::Error);
}

TEST(Config, JsonRoundTrip) {
    auto c = kct::toy_config(3, 4);
    c.norm_kind = kc::NormKind::rmsnorm;
    c.activation = kc::Activation::swiglu;
    c.positional = kc::Positional::rotary;
    c.n_kv_heads = 2;
    c.biases = false;
    const nlohmann::json j = c;
    EXPECT_EQ(j.at("positional"), "rotary");
    EXPECT_EQ(kc::config_from_json(j), c);
}

TEST(Config, UnknownEnumRejected) {
    nlohmann::json j = kct::toy_config(1, 1);
    j["norm_kind"] = "batchnorm";
    EXPECT_THROW(kc::config_from_json(j), kc::Error);
}

TEST(Config, MissingFieldNamed) {
    nlohmann::json j = kct::toy_config(1, 1);
    j.erase("d_mlp");
    try {
        kc::config_from_json(j);
        FAIL();
    } catch (const kc::Error& e) {
        EXPECT_NE(std::string(e.what()).find("d_mlp"), std::string::npos);
    }
}

TEST(Config, HuggingFaceLayouts) {
    const auto g = kc::load_config(kct::fixture("hf_gpt2/config.json").string());
    EXPECT_EQ(g.n_layers, 2u);
    EXPECT_EQ(g.d_mlp, 64u);
    EXPECT_EQ(g.norm_kind, kc::NormKind::layernorm);
    const auto l = kc::load_config(kct::fixture("hf_llama_gqa/config.json").string());
    EXPECT_EQ(l.n_kv_heads, 2u);
    EXPECT_EQ(l.group_size(), 2u);
    EXPECT_EQ(l.positional, kc::Positional::rotary);
    EXPECT_EQ(l.activation, kc::Activation::swiglu);
    EXPECT_FALSE(l.biases);
}

TEST(Config, ZeroLayersAllowed) {
    auto c = kct::toy_config(0, 1);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.node_count(), 2u);
}
