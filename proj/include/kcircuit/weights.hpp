#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "safetensors.hpp"

namespace kc {

struct LayerWeights {
    Vector ln1_w, ln1_b;
    std::vector<Matrix> w_q;  // [n_heads] d_model x d_head
    std::vector<Matrix> w_k;  // [n_kv_heads] d_model x d_head
    std::vector<Matrix> w_v;  // [n_kv_heads] d_model x d_head
    std::vector<Vector> b_q, b_k, b_v;
    std::vector<Matrix> w_o;  // [n_heads] d_head x d_model
    Vector b_o;
    Vector ln2_w, ln2_b;
    Matrix w_in;    // d_model x d_mlp
    Matrix w_gate;  // d_model x d_mlp, swiglu only
    Vector b_in;
    Matrix w_out;  // d_mlp x d_model
    Vector b_out;
};

struct Weights {
    Matrix w_e;    // vocab x d_model
    Matrix w_pos;  // n_ctx x d_model, learned-absolute only
    std::vector<LayerWeights> layers;
    Vector ln_final_w, ln_final_b;
    Matrix w_u_t;  // vocab x d_model (unembedding stored transposed for row-wise dot products)
};

// Canonical tensor names:
//   embed.w_e                [vocab, d_model]
//   pos_embed.w_pos          [n_ctx, d_model]            (learned-absolute)
//   blocks.{l}.ln1.w / .b    [d_model]                   (.b for layernorm only)
//   blocks.{l}.attn.w_q      [n_heads, d_model, d_head]
//   blocks.{l}.attn.w_k/w_v  [n_kv_heads, d_model, d_head]
//   blocks.{l}.attn.b_q      [n_heads, d_head]           (biases)
//   blocks.{l}.attn.b_k/b_v  [n_kv_heads, d_head]        (biases)
//   blocks.{l}.attn.w_o      [n_heads, d_head, d_model]
//   blocks.{l}.attn.b_o      [d_model]                   (biases)
//   blocks.{l}.ln2.w / .b    [d_model]
//   blocks.{l}.mlp.w_in      [d_model, d_mlp]
//   blocks.{l}.mlp.w_gate    [d_model, d_mlp]            (swiglu)
//   blocks.{l}.mlp.b_in      [d_mlp]                     (biases)
//   blocks.{l}.mlp.w_out     [d_mlp, d_model]
//   blocks.{l}.mlp.b_out     [d_model]                   (biases)
//   ln_final.w / .b          [d_model]
//   unembed.w_u              [d_model, vocab]
namespace names {

inline std::string block(std::size_t l, const std::string& rest) { return "blocks." + std::to_string(l) + "." + rest; }

}  // namespace names

using TensorMap = safetensors::TensorMap;
using Shape = std::vector<std::size_t>;

// Every canonical tensor the config implies, with its shape.
inline std::vector<std::pair<std::string, Shape>> expected_tensors(const ModelConfig& c) {
    std::vector<std::pair<std::string, Shape>> out;
    const bool ln = c.norm_kind == NormKind::layernorm;
    out.push_back({"embed.w_e", {c.vocab_size, c.d_model}});
    if (c.positional == Positional::learned_absolute) {
        out.push_back({"pos_embed.w_pos", {c.n_ctx, c.d_model}});
    }
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        using names::block;
        out.push_back({block(l, "ln1.w"), {c.d_model}});
        if (ln) out.push_back({block(l, "ln1.b"), {c.d_model}});
        out.push_back({block(l, "attn.w_q"), {c.n_heads, c.d_model, c.d_head}});
        out.push_back({block(l, "attn.w_k"), {c.n_kv_heads, c.d_model, c.d_head}});
        out.push_back({block(l, "attn.w_v"), {c.n_kv_heads, c.d_model, c.d_head}});
        if (c.biases) {
            out.push_back({block(l, "attn.b_q"), {c.n_heads, c.d_head}});
            out.push_back({block(l, "attn.b_k"), {c.n_kv_heads, c.d_head}});
            out.push_back({block(l, "attn.b_v"), {c.n_kv_heads, c.d_head}});
        }
        out.push_back({block(l, "attn.w_o"), {c.n_heads, c.d_head, c.d_model}});
        if (c.biases) out.push_back({block(l, "attn.b_o"), {c.d_model}});
        out.push_back({block(l, "ln2.w"), {c.d_model}});
        if (ln) out.push_back({block(l, "ln2.b"), {c.d_model}});
        out.push_back({block(l, "mlp.w_in"), {c.d_model, c.d_mlp}});
        if (c.activation == Activation::swiglu) out.push_back({block(l, "mlp.w_gate"), {c.d_model, c.d_mlp}});
        if (c.biases) out.push_back({block(l, "mlp.b_in"), {c.d_mlp}});
        out.push_back({block(l, "mlp.w_out"), {c.d_mlp, c.d_model}});
        if (c.biases) out.push_back({block(l, "mlp.b_out"), {c.d_model}});
    }
    out.push_back({"ln_final.w", {c.d_model}});
    if (ln) out.push_back({"ln_final.b", {c.d_model}});
    out.push_back({"unembed.w_u", {c.d_model, c.vocab_size}});
    return out;
}

namespace detail {

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? ", " : "") + std::to_string(s[i]);
    }
    return out + "]";
}

inline const safetensors::Tensor& fetch(const TensorMap& m, const std::string& name, const Shape& shape) {
    auto it = m.find(name);
    require(it != m.end(), "weights: missing tensor '" + name + "'");
    require(it->second.shape == shape, "weights: shape mismatch for '" + name + "': expected " + shape_str(shape) +
                                           ", got " + shape_str(it->second.shape));
    return it->second;
}

inline Matrix to_matrix(const float* p, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Vector to_vector(const float* p, std::size_t n) {
    return Eigen::Map<const Vector>(p, static_cast<Eigen::Index>(n));
}

inline std::vector<Matrix> split_heads(const safetensors::Tensor& t) {
    std::vector<Matrix> out;
    const std::size_t rows = t.shape[1], cols = t.shape[2];
    for (std::size_t h = 0; h < t.shape[0]; ++h) {
        out.push_back(to_matrix(t.data.data() + h * rows * cols, rows, cols));
    }
    return out;
}

inline std::vector<Vector> split_rows(const safetensors::Tensor& t) {
    std::vector<Vector> out;
    for (std::size_t h = 0; h < t.shape[0]; ++h) {
        out.push_back(to_vector(t.data.data() + h * t.shape[1], t.shape[1]));
    }
    return out;
}

inline safetensors::Tensor make_tensor(Shape shape, std::vector<float> data) {
    safetensors::Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(data);
    return t;
}

inline safetensors::Tensor column_block(const safetensors::Tensor& src, std::size_t col0, std::size_t ncols) {
    const std::size_t rows = src.shape[0], cols = src.shape[1];
    std::vector<float> out(rows * ncols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ncols; ++c) {
            out[r * ncols + c] = src.data[r * cols + col0 + c];
        }
    }
    return make_tensor({rows, ncols}, std::move(out));
}

inline safetensors::Tensor transpose2d(const safetensors::Tensor& src) {
    const std::size_t rows = src.shape[0], cols = src.shape[1];
    std::vector<float> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = src.data[r * cols + c];
        }
    }
    return make_tensor({cols, rows}, std::move(out));
}

// [d_model, n*d_head] -> [n, d_model, d_head]
inline safetensors::Tensor heads_from_columns(const safetensors::Tensor& src, std::size_t n, std::size_t d_head) {
    const std::size_t rows = src.shape[0], cols = src.shape[1];
    require(cols == n * d_head, "weights: cannot split " + detail::shape_str(src.shape) + " into heads");
    std::vector<float> out(n * rows * d_head);
    for (std::size_t h = 0; h < n; ++h) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < d_head; ++k) {
                out[(h * rows + r) * d_head + k] = src.data[r * cols + h * d_head + k];
            }
        }
    }
    return make_tensor({n, rows, d_head}, std::move(out));
}

// [n*d_head, d_model] -> [n, d_head, d_model]
inline safetensors::Tensor heads_from_rows(const safetensors::Tensor& src, std::size_t n, std::size_t d_head) {
    require(src.shape[0] == n * d_head, "weights: cannot split " + detail::shape_str(src.shape) + " into heads");
    auto t = src;
    t.shape = {n, d_head, src.shape[1]};
    return t;
}

inline safetensors::Tensor reshape(safetensors::Tensor t, Shape shape) {
    t.shape = std::move(shape);
    require(t.numel() == t.data.size(), "weights: bad reshape");
    return t;
}

inline const safetensors::Tensor& need(const TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    require(it != m.end(), "weights: missing tensor '" + name + "'");
    return it->second;
}

inline std::size_t dim(const safetensors::Tensor& t, std::size_t i, const std::string& name) {
    require(t.shape.size() > i, "weights: tensor '" + name + "' has too few dimensions");
    return t.shape[i];
}

inline std::string strip_prefix(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0 ? s.substr(prefix.size()) : s;
}

}  // namespace detail

// Maps a Hugging Face GPT-2 checkpoint onto canonical names.
//   wte.weight                    -> embed.w_e, and unembed.w_u (transposed; tied unless lm_head.weight exists)
//   wpe.weight                    -> pos_embed.w_pos
//   h.{l}.ln_1.{weight,bias}      -> blocks.{l}.ln1.{w,b}
//   h.{l}.attn.c_attn.weight      -> [d_model, 3*d_model] Conv1D layout (x @ W); columns split into q|k|v,
//                                    each split per head into blocks.{l}.attn.w_{q,k,v}
//   h.{l}.attn.c_attn.bias        -> blocks.{l}.attn.b_{q,k,v}
//   h.{l}.attn.c_proj.weight      -> rows split per head into blocks.{l}.attn.w_o
//   h.{l}.attn.c_proj.bias        -> blocks.{l}.attn.b_o
//   h.{l}.ln_2.{weight,bias}      -> blocks.{l}.ln2.{w,b}
//   h.{l}.mlp.c_fc.{weight,bias}  -> blocks.{l}.mlp.{w_in,b_in}
//   h.{l}.mlp.c_proj.{weight,bias}-> blocks.{l}.mlp.{w_out,b_out}
//   ln_f.{weight,bias}            -> ln_final.{w,b}
// A leading "transformer." prefix is accepted. Unmapped tensors pass through unchanged.
inline TensorMap map_hf_gpt2(const TensorMap& src, const ModelConfig& c) {
    using namespace detail;
    TensorMap in;
    for (const auto& [k, v] : src) {
        in.emplace(strip_prefix(k, "transformer."), v);
    }
    TensorMap out;
    std::set<std::string> used;
    auto take = [&](const std::string& name) -> const safetensors::Tensor& {
        used.insert(name);
        return need(in, name);
    };
    const std::size_t D = c.d_model, dh = c.d_head, H = c.n_heads;
    out["embed.w_e"] = take("wte.weight");
    if (in.count("lm_head.weight")) {
        out["unembed.w_u"] = transpose2d(take("lm_head.weight"));
    } else {
        out["unembed.w_u"] = transpose2d(out["embed.w_e"]);
    }
    out["pos_embed.w_pos"] = take("wpe.weight");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        using names::block;
        out[block(l, "ln1.w")] = take(p + "ln_1.weight");
        out[block(l, "ln1.b")] = take(p + "ln_1.bias");
        const auto& qkv = take(p + "attn.c_attn.weight");
        require(qkv.shape == Shape{D, 3 * D}, "weights: shape mismatch for '" + p + "attn.c_attn.weight': expected " +
                                                   shape_str({D, 3 * D}) + ", got " + shape_str(qkv.shape));
        out[block(l, "attn.w_q")] = heads_from_columns(column_block(qkv, 0, D), H, dh);
        out[block(l, "attn.w_k")] = heads_from_columns(column_block(qkv, D, D), H, dh);
        out[block(l, "attn.w_v")] = heads_from_columns(column_block(qkv, 2 * D, D), H, dh);
        const auto& qkv_b = take(p + "attn.c_attn.bias");
        require(qkv_b.numel() == 3 * D, "weights: shape mismatch for '" + p + "attn.c_attn.bias'");
        for (int part = 0; part < 3; ++part) {
            std::vector<float> b(qkv_b.data.begin() + part * D, qkv_b.data.begin() + (part + 1) * D);
            static const char* bn[] = {"attn.b_q", "attn.b_k", "attn.b_v"};
            out[block(l, bn[part])] = make_tensor({H, dh}, std::move(b));
        }
        out[block(l, "attn.w_o")] = heads_from_rows(take(p + "attn.c_proj.weight"), H, dh);
        out[block(l, "attn.b_o")] = take(p + "attn.c_proj.bias");
        out[block(l, "ln2.w")] = take(p + "ln_2.weight");
        out[block(l, "ln2.b")] = take(p + "ln_2.bias");
        out[block(l, "mlp.w_in")] = take(p + "mlp.c_fc.weight");
        out[block(l, "mlp.b_in")] = take(p + "mlp.c_fc.bias");
        out[block(l, "mlp.w_out")] = take(p + "mlp.c_proj.weight");
        out[block(l, "mlp.b_out")] = take(p + "mlp.c_proj.bias");
    }
    out["ln_final.w"] = take("ln_f.weight");
    out["ln_final.b"] = take("ln_f.bias");
    for (const auto& [k, v] : in) {
        if (!used.count(k)) {
            out.emplace(k, v);
        }
    }
    return out;
}

// Maps a Hugging Face LLaMA checkpoint (Linear weights stored out x in) onto canonical names.
inline TensorMap map_hf_llama(const TensorMap& in, const ModelConfig& c) {
    using namespace detail;
    TensorMap out;
    std::set<std::string> used;
    auto take = [&](const std::string& name) -> const safetensors::Tensor& {
        used.insert(name);
        return need(in, name);
    };
    const std::size_t dh = c.d_head;
    out["embed.w_e"] = take("model.embed_tokens.weight");
    out["unembed.w_u"] = transpose2d(in.count("lm_head.weight") ? take("lm_head.weight") : out["embed.w_e"]);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "model.layers." + std::to_string(l) + ".";
        using names::block;
        out[block(l, "ln1.w")] = take(p + "input_layernorm.weight");
        out[block(l, "attn.w_q")] = heads_from_columns(transpose2d(take(p + "self_attn.q_proj.weight")), c.n_heads, dh);
        out[block(l, "attn.w_k")] =
            heads_from_columns(transpose2d(take(p + "self_attn.k_proj.weight")), c.n_kv_heads, dh);
        out[block(l, "attn.w_v")] =
            heads_from_columns(transpose2d(take(p + "self_attn.v_proj.weight")), c.n_kv_heads, dh);
        out[block(l, "attn.w_o")] = heads_from_rows(transpose2d(take(p + "self_attn.o_proj.weight")), c.n_heads, dh);
        if (c.biases) {
            out[block(l, "attn.b_q")] = reshape(take(p + "self_attn.q_proj.bias"), {c.n_heads, dh});
            out[block(l, "attn.b_k")] = reshape(take(p + "self_attn.k_proj.bias"), {c.n_kv_heads, dh});
            out[block(l, "attn.b_v")] = reshape(take(p + "self_attn.v_proj.bias"), {c.n_kv_heads, dh});
            out[block(l, "attn.b_o")] = take(p + "self_attn.o_proj.bias");
        }
        out[block(l, "ln2.w")] = take(p + "post_attention_layernorm.weight");
        out[block(l, "mlp.w_gate")] = transpose2d(take(p + "mlp.gate_proj.weight"));
        out[block(l, "mlp.w_in")] = transpose2d(take(p + "mlp.up_proj.weight"));
        out[block(l, "mlp.w_out")] = transpose2d(take(p + "mlp.down_proj.weight"));
    }
    out["ln_final.w"] = take("model.norm.weight");
    for (const auto& [k, v] : in) {
        if (!used.count(k)) {
            out.emplace(k, v);
        }
    }
    return out;
}

// Builds Weights from canonical tensors. Accepts Hugging Face GPT-2/LLaMA naming too.
inline Weights weights_from_tensors(const ModelConfig& c, const TensorMap& raw, WarningSink* warnings = nullptr) {
    c.validate();
    using namespace detail;
    TensorMap mapped;
    const TensorMap* src = &raw;
    if (!raw.count("embed.w_e")) {
        if (raw.count("wte.weight") || raw.count("transformer.wte.weight")) {
            mapped = map_hf_gpt2(raw, c);
            src = &mapped;
        } else if (raw.count("model.embed_tokens.weight")) {
            mapped = map_hf_llama(raw, c);
            src = &mapped;
        }
    }
    const TensorMap& m = *src;

    const auto expected = expected_tensors(c);
    std::set<std::string> known;
    for (const auto& [name, shape] : expected) {
        fetch(m, name, shape);
        known.insert(name);
    }
    for (const auto& [name, t] : m) {
        if (!known.count(name)) {
            if (warnings) {
                warnings->warn("weights: ignoring unexpected tensor '" + name + "'");
            } else {
                std::cerr << "warning: weights: ignoring unexpected tensor '" << name << "'\n";
            }
        }
    }

    const std::size_t D = c.d_model;
    auto vec = [&](const std::string& n, std::size_t len) { return to_vector(m.at(n).data.data(), len); };
    auto mat = [&](const std::string& n) {
        const auto& t = m.at(n);
        return to_matrix(t.data.data(), t.shape[0], t.shape[1]);
    };

    Weights w;
    w.w_e = mat("embed.w_e");
    if (c.positional == Positional::learned_absolute) {
        w.w_pos = mat("pos_embed.w_pos");
    }
    const bool ln = c.norm_kind == NormKind::layernorm;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        using names::block;
        LayerWeights lw;
        lw.ln1_w = vec(block(l, "ln1.w"), D);
        lw.ln1_b = ln ? vec(block(l, "ln1.b"), D) : Vector::Zero(D);
        lw.w_q = split_heads(m.at(block(l, "attn.w_q")));
        lw.w_k = split_heads(m.at(block(l, "attn.w_k")));
        lw.w_v = split_heads(m.at(block(l, "attn.w_v")));
        if (c.biases) {
            lw.b_q = split_rows(m.at(block(l, "attn.b_q")));
            lw.b_k = split_rows(m.at(block(l, "attn.b_k")));
            lw.b_v = split_rows(m.at(block(l, "attn.b_v")));
            lw.b_o = vec(block(l, "attn.b_o"), D);
            lw.b_in = vec(block(l, "mlp.b_in"), c.d_mlp);
            lw.b_out = vec(block(l, "mlp.b_out"), D);
        } else {
            lw.b_q.assign(c.n_heads, Vector::Zero(c.d_head));
            lw.b_k.assign(c.n_kv_heads, Vector::Zero(c.d_head));
            lw.b_v.assign(c.n_kv_heads, Vector::Zero(c.d_head));
            lw.b_o = Vector::Zero(D);
            lw.b_in = Vector::Zero(c.d_mlp);
            lw.b_out = Vector::Zero(D);
        }
        lw.w_o = split_heads(m.at(block(l, "attn.w_o")));
        lw.ln2_w = vec(block(l, "ln2.w"), D);
        lw.ln2_b = ln ? vec(block(l, "ln2.b"), D) : Vector::Zero(D);
        lw.w_in = mat(block(l, "mlp.w_in"));
        if (c.activation == Activation::swiglu) {
            lw.w_gate = mat(block(l, "mlp.w_gate"));
        }
        lw.w_out = mat(block(l, "mlp.w_out"));
        w.layers.push_back(std::move(lw));
    }
    w.ln_final_w = vec("ln_final.w", D);
    w.ln_final_b = ln ? vec("ln_final.b", D) : Vector::Zero(D);
    w.w_u_t = mat("unembed.w_u").transpose();
    return w;
}

// Inverse of weights_from_tensors for canonical names.
inline TensorMap weights_to_tensors(const ModelConfig& c, const Weights& w) {
    using detail::make_tensor;
    TensorMap out;
    auto put_mat = [&](const std::string& n, const Matrix& m) {
        out[n] = make_tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                             std::vector<float>(m.data(), m.data() + m.size()));
    };
    auto put_vec = [&](const std::string& n, const Vector& v) {
        out[n] = make_tensor({static_cast<std::size_t>(v.size())}, std::vector<float>(v.data(), v.data() + v.size()));
    };
    auto put_heads = [&](const std::string& n, const std::vector<Matrix>& hs) {
        std::vector<float> data;
        for (const auto& h : hs) {
            data.insert(data.end(), h.data(), h.data() + h.size());
        }
        out[n] = make_tensor({hs.size(), static_cast<std::size_t>(hs[0].rows()), static_cast<std::size_t>(hs[0].cols())},
                             std::move(data));
    };
    auto put_rows = [&](const std::string& n, const std::vector<Vector>& rs) {
        std::vector<float> data;
        for (const auto& r : rs) {
            data.insert(data.end(), r.data(), r.data() + r.size());
        }
        out[n] = make_tensor({rs.size(), static_cast<std::size_t>(rs[0].size())}, std::move(data));
    };
    const bool ln = c.norm_kind == NormKind::layernorm;
    put_mat("embed.w_e", w.w_e);
    if (c.positional == Positional::learned_absolute) put_mat("pos_embed.w_pos", w.w_pos);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        using names::block;
        const auto& lw = w.layers[l];
        put_vec(block(l, "ln1.w"), lw.ln1_w);
        if (ln) put_vec(block(l, "ln1.b"), lw.ln1_b);
        put_heads(block(l, "attn.w_q"), lw.w_q);
        put_heads(block(l, "attn.w_k"), lw.w_k);
        put_heads(block(l, "attn.w_v"), lw.w_v);
        put_heads(block(l, "attn.w_o"), lw.w_o);
        if (c.biases) {
            put_rows(block(l, "attn.b_q"), lw.b_q);
            put_rows(block(l, "attn.b_k"), lw.b_k);
            put_rows(block(l, "attn.b_v"), lw.b_v);
            put_vec(block(l, "attn.b_o"), lw.b_o);
            put_vec(block(l, "mlp.b_in"), lw.b_in);
            put_vec(block(l, "mlp.b_out"), lw.b_out);
        }
        put_vec(block(l, "ln2.w"), lw.ln2_w);
        if (ln) put_vec(block(l, "ln2.b"), lw.ln2_b);
        put_mat(block(l, "mlp.w_in"), lw.w_in);
        if (c.activation == Activation::swiglu) put_mat(block(l, "mlp.w_gate"), lw.w_gate);
        put_mat(block(l, "mlp.w_out"), lw.w_out);
    }
    put_vec("ln_final.w", w.ln_final_w);
    if (ln) put_vec("ln_final.b", w.ln_final_b);
    put_mat("unembed.w_u", w.w_u_t.transpose());
    return out;
}

// Portable seeded generator: mt19937_64 output is fixed by the standard, the
// distributions below are hand-rolled so results do not depend on the library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Gaussian weights with standard deviation `scale`; norm gains near 1.
inline Weights random_weights(const ModelConfig& c, std::uint64_t seed, float scale = 0.2f) {
    c.validate();
    Rng rng(seed);
    TensorMap t;
    for (const auto& [name, shape] : expected_tensors(c)) {
        safetensors::Tensor x;
        x.shape = shape;
        x.data.resize(x.numel());
        const bool gain = name.ends_with(".w") && (name.find("ln") != std::string::npos);
        for (auto& v : x.data) {
            v = gain ? static_cast<float>(1.0 + 0.1 * rng.normal()) : static_cast<float>(scale * rng.normal());
        }
        t.emplace(name, std::move(x));
    }
    return weights_from_tensors(c, t);
}

}  // namespace kc
