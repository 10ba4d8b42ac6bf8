#pragma once

#include <cstddef>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace kc {

enum class NormKind { layernorm, rmsnorm };
enum class Activation { gelu, swiglu };
enum class Positional { learned_absolute, rotary };

NLOHMANN_JSON_SERIALIZE_ENUM(NormKind, {{NormKind::layernorm, "layernorm"}, {NormKind::rmsnorm, "rmsnorm"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::gelu, "gelu"}, {Activation::swiglu, "swiglu"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Positional,
                             {{Positional::learned_absolute, "learned-absolute"}, {Positional::rotary, "rotary"}})

struct ModelConfig {
    std::size_t n_layers = 0;
    std::size_t n_heads = 1;
    std::size_t n_kv_heads = 1;
    std::size_t d_model = 1;
    std::size_t d_head = 1;
    std::size_t d_mlp = 1;
    std::size_t vocab_size = 2;
    std::size_t n_ctx = 1;
    NormKind norm_kind = NormKind::layernorm;
    float norm_eps = 1e-5f;
    Activation activation = Activation::gelu;
    Positional positional = Positional::learned_absolute;
    // Attention q/k/v/o and MLP biases present (GPT-2 family) or absent (LLaMA family).
    bool biases = true;
    float rope_theta = 10000.0f;

    std::size_t group_size() const { return n_heads / n_kv_heads; }
    std::size_t node_count() const { return 1 + n_layers * n_heads + n_layers + 1; }

    void validate() const {
        require(n_heads >= 1, "config: n_heads must be >= 1");
        require(n_kv_heads >= 1, "config: n_kv_heads must be >= 1");
        require(n_heads % n_kv_heads == 0, "config: n_heads (" + std::to_string(n_heads) +
                                               ") is not divisible by n_kv_heads (" + std::to_string(n_kv_heads) + ")");
        require(d_head * n_heads == d_model, "config: d_head * n_heads must equal d_model");
        require(n_ctx >= 1, "config: n_ctx must be >= 1");
        require(vocab_size >= 2, "config: vocab_size must be >= 2");
        require(d_mlp >= 1, "config: d_mlp must be >= 1");
        require(norm_eps > 0.0f, "config: norm_eps must be positive");
        require(positional != Positional::rotary || d_head % 2 == 0, "config: rotary embedding needs an even d_head");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                       {"n_kv_heads", c.n_kv_heads}, {"d_model", c.d_model},
                       {"d_head", c.d_head},         {"d_mlp", c.d_mlp},
                       {"vocab_size", c.vocab_size}, {"n_ctx", c.n_ctx},
                       {"norm_kind", c.norm_kind},   {"norm_eps", c.norm_eps},
                       {"activation", c.activation}, {"positional", c.positional},
                       {"biases", c.biases},         {"rope_theta", c.rope_theta}};
}

namespace detail {

inline std::size_t get_count(const nlohmann::json& j, const char* key) {
    require(j.contains(key), std::string("config: missing field '") + key + "'");
    const auto& v = j.at(key);
    require(v.is_number_integer() && v.get<long long>() >= 0,
            std::string("config: field '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

template <typename E>
E get_enum(const nlohmann::json& j, const char* key, E fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto& v = j.at(key);
    require(v.is_string(), std::string("config: field '") + key + "' must be a string");
    // nlohmann maps unknown strings to the first enumerator, so round-trip to detect them.
    E e = v.get<E>();
    require(nlohmann::json(e) == v, std::string("config: unsupported value for '") + key + "': " + v.dump());
    return e;
}

inline ModelConfig from_hf_gpt2(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = get_count(j, "n_layer");
    c.n_heads = get_count(j, "n_head");
    c.n_kv_heads = c.n_heads;
    c.d_model = get_count(j, "n_embd");
    c.d_head = c.n_heads ? c.d_model / c.n_heads : 0;
    c.d_mlp = j.contains("n_inner") && !j.at("n_inner").is_null() ? get_count(j, "n_inner") : 4 * c.d_model;
    c.vocab_size = get_count(j, "vocab_size");
    c.n_ctx = get_count(j, "n_positions");
    c.norm_eps = j.value("layer_norm_epsilon", 1e-5f);
    return c;
}

inline ModelConfig from_hf_llama(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = get_count(j, "num_hidden_layers");
    c.n_heads = get_count(j, "num_attention_heads");
    c.n_kv_heads = j.contains("num_key_value_heads") ? get_count(j, "num_key_value_heads") : c.n_heads;
    c.d_model = get_count(j, "hidden_size");
    c.d_head = j.contains("head_dim") ? get_count(j, "head_dim") : (c.n_heads ? c.d_model / c.n_heads : 0);
    c.d_mlp = get_count(j, "intermediate_size");
    c.vocab_size = get_count(j, "vocab_size");
    c.n_ctx = get_count(j, "max_position_embeddings");
    c.norm_kind = NormKind::rmsnorm;
    c.norm_eps = j.value("rms_norm_eps", 1e-6f);
    c.activation = Activation::swiglu;
    c.positional = Positional::rotary;
    c.biases = j.value("attention_bias", false);
    c.rope_theta = j.value("rope_theta", 10000.0f);
    if (j.contains("rope_parameters") && j.at("rope_parameters").is_object()) {
        c.rope_theta = j.at("rope_parameters").value("rope_theta", c.rope_theta);
    }
    return c;
}

}  // namespace detail

// Accepts the native field names, or a Hugging Face GPT-2 / LLaMA config.json.
inline ModelConfig config_from_json(const nlohmann::json& j) {
    require(j.is_object(), "config: expected a JSON object");
    ModelConfig c;
    if (j.contains("n_layers")) {
        c.n_layers = detail::get_count(j, "n_layers");
        c.n_heads = detail::get_count(j, "n_heads");
        c.n_kv_heads = j.contains("n_kv_heads") ? detail::get_count(j, "n_kv_heads") : c.n_heads;
        c.d_model = detail::get_count(j, "d_model");
        c.d_head = j.contains("d_head") ? detail::get_count(j, "d_head") : (c.n_heads ? c.d_model / c.n_heads : 0);
        c.d_mlp = detail::get_count(j, "d_mlp");
        c.vocab_size = detail::get_count(j, "vocab_size");
        c.n_ctx = detail::get_count(j, "n_ctx");
        c.norm_kind = detail::get_enum(j, "norm_kind", NormKind::layernorm);
        c.norm_eps = j.value("norm_eps", 1e-5f);
        c.activation = detail::get_enum(j, "activation", Activation::gelu);
        c.positional = detail::get_enum(j, "positional", Positional::learned_absolute);
        c.biases = j.value("biases", c.norm_kind == NormKind::layernorm);
        c.rope_theta = j.value("rope_theta", 10000.0f);
    } else if (j.contains("n_layer")) {
        c = detail::from_hf_gpt2(j);
    } else if (j.contains("num_hidden_layers")) {
        c = detail::from_hf_llama(j);
    } else {
        throw Error("config: unrecognized config layout (expected n_layers, n_layer or num_hidden_layers)");
    }
    c.validate();
    return c;
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

// GPT-2 small (124M) layout.
inline ModelConfig gpt2_small_config() {
    ModelConfig c;
    c.n_layers = 12;
    c.n_heads = 12;
    c.n_kv_heads = 12;
    c.d_model = 768;
    c.d_head = 64;
    c.d_mlp = 3072;
    c.vocab_size = 50257;
    c.n_ctx = 1024;
    return c;
}

}  // namespace kc
