#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "graph.hpp"
#include "ops.hpp"
#include "safetensors.hpp"
#include "weights.hpp"

namespace kc {

struct ActivationCache {
    std::size_t seq_len = 0;
    // Indexed by graph node index. Input/attention/MLP entries are seq_len x d_model; output's entry is unused.
    std::vector<Matrix> outputs;
    // Attention pattern per head, indexed layer * n_heads + head; seq_len x seq_len.
    std::vector<Matrix> attention;
    // Sum of every always-on bias (attention output biases and MLP output biases), one row per position.
    Matrix bias_stream;
    // Residual after each layer (post-MLP); filled by run_full only.
    std::vector<Matrix> residual_after_layer;
    // seq_len x vocab, or 1 x vocab when only the last position was requested.
    Matrix logits;
    bool logits_last_only = false;

    const float* last_logits() const { return logits.row(logits.rows() - 1).data(); }
};

// Per-position mean node outputs over a reference batch (for mean ablation).
struct MeanActivations {
    std::vector<Matrix> mean;       // per node index: max_len x d_model
    std::vector<std::size_t> count;  // prompts covering each position

    std::size_t max_len() const { return count.size(); }
};

struct AblationContext {
    AblationMode mode = AblationMode::zero;
    const MeanActivations* means = nullptr;
};

class Model {
public:
    Model(ModelConfig config, Weights weights) : config_(std::move(config)), weights_(std::move(weights)) {
        config_.validate();
        check_weights();
        graph_ = build_graph(config_);
        // bias_before_[n] is the bias stream visible to node n.
        const std::size_t D = config_.d_model;
        bias_before_.assign(graph_->node_count(), Vector::Zero(D));
        Vector acc = Vector::Zero(D);
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            for (std::size_t h = 0; h < config_.n_heads; ++h) {
                bias_before_[graph_->index_of(NodeId::attn(l, h))] = acc;
            }
            acc += weights_.layers[l].b_o;
            bias_before_[graph_->index_of(NodeId::mlp(l))] = acc;
            acc += weights_.layers[l].b_out;
        }
        bias_before_[graph_->output_index()] = acc;
    }

    const ModelConfig& config() const { return config_; }
    const Weights& weights() const { return weights_; }
    const GraphPtr& graph() const { return graph_; }
    std::size_t vocab_size() const { return config_.vocab_size; }

    const Vector& bias_before(std::size_t node) const { return bias_before_.at(node); }

    void check_tokens(const Tokens& tokens) const {
        require(!tokens.empty(), "model: empty prompt");
        require(tokens.size() <= config_.n_ctx, "model: sequence of length " + std::to_string(tokens.size()) +
                                                     " exceeds n_ctx " + std::to_string(config_.n_ctx));
        for (auto t : tokens) {
            require(t >= 0 && static_cast<std::size_t>(t) < config_.vocab_size,
                    "model: token id " + std::to_string(t) + " out of vocabulary");
        }
    }

    Matrix embed(const Tokens& tokens) const {
        check_tokens(tokens);
        Matrix x(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(config_.d_model));
        for (std::size_t p = 0; p < tokens.size(); ++p) {
            x.row(static_cast<Eigen::Index>(p)) = weights_.w_e.row(tokens[p]);
            if (config_.positional == Positional::learned_absolute) {
                x.row(static_cast<Eigen::Index>(p)) += weights_.w_pos.row(static_cast<Eigen::Index>(p));
            }
        }
        return x;
    }

    // One attention head on an already-assembled input. Excludes the shared output bias.
    Matrix attn_head(std::size_t layer, std::size_t head, const Matrix& input, Matrix* pattern = nullptr) const {
        const auto& lw = weights_.layers.at(layer);
        const Matrix x = ops::norm(input, config_.norm_kind, lw.ln1_w, lw.ln1_b, config_.norm_eps);
        return attn_head_normed(layer, head, x, pattern);
    }

    Matrix attn_head_normed(std::size_t layer, std::size_t head, const Matrix& x, Matrix* pattern = nullptr) const {
        const auto& lw = weights_.layers.at(layer);
        const std::size_t kv = head / config_.group_size();
        Matrix q = x * lw.w_q[head];
        q.rowwise() += lw.b_q[head];
        Matrix k = x * lw.w_k[kv];
        k.rowwise() += lw.b_k[kv];
        Matrix v = x * lw.w_v[kv];
        v.rowwise() += lw.b_v[kv];
        if (config_.positional == Positional::rotary) {
            ops::apply_rotary(q, config_.rope_theta);
            ops::apply_rotary(k, config_.rope_theta);
        }
        Matrix scores = (q * k.transpose()) * (1.0f / std::sqrt(static_cast<float>(config_.d_head)));
        ops::softmax_rows_causal(scores);
        Matrix out = (scores * v) * lw.w_o[head];
        if (pattern) *pattern = std::move(scores);
        return out;
    }

    // One MLP on an assembled input. Excludes the output bias.
    Matrix mlp(std::size_t layer, const Matrix& input) const {
        const auto& lw = weights_.layers.at(layer);
        const Matrix x = ops::norm(input, config_.norm_kind, lw.ln2_w, lw.ln2_b, config_.norm_eps);
        Matrix hidden = x * lw.w_in;
        hidden.rowwise() += lw.b_in;
        if (config_.activation == Activation::gelu) {
            hidden = hidden.unaryExpr([](float v) { return ops::gelu(v); });
        } else {
            const Matrix gate = x * lw.w_gate;
            hidden = hidden.cwiseProduct(gate.unaryExpr([](float v) { return ops::silu(v); }));
        }
        return hidden * lw.w_out;
    }

    Vector final_norm(const Vector& state) const {
        Matrix m = state;
        return ops::norm(m, config_.norm_kind, weights_.ln_final_w, weights_.ln_final_b, config_.norm_eps).row(0);
    }

    // W_U applied to an already normalized row; the single unembedding kernel used everywhere.
    Vector unembed_normed(const Vector& normed) const { return (weights_.w_u_t * normed.transpose()).transpose(); }

    // Output node on an assembled residual: final norm then unembedding, row by row.
    Matrix output_logits(const Matrix& residual, bool last_only) const {
        const Eigen::Index first = last_only ? residual.rows() - 1 : 0;
        Matrix logits(residual.rows() - first, static_cast<Eigen::Index>(config_.vocab_size));
        for (Eigen::Index r = first; r < residual.rows(); ++r) {
            logits.row(r - first) = unembed_normed(final_norm(residual.row(r)));
        }
        return logits;
    }

    // Node output for an assembled input. For the output node the result is the logits.
    Matrix node_forward(const NodeId& node, const Matrix& input, Matrix* pattern = nullptr) const {
        require(input.cols() == static_cast<Eigen::Index>(config_.d_model), "model: node input has wrong width");
        switch (node.kind) {
            case NodeKind::attn:
                return attn_head(node.layer, node.head, input, pattern);
            case NodeKind::mlp:
                return mlp(node.layer, input);
            case NodeKind::output:
                return output_logits(input, false);
            case NodeKind::input:
                break;
        }
        throw Error("model: the input node has no forward function");
    }

private:
    void check_weights() const {
        require(weights_.layers.size() == config_.n_layers, "model: weights have " +
                                                                std::to_string(weights_.layers.size()) +
                                                                " layers, config says " + std::to_string(config_.n_layers));
        require(weights_.w_e.rows() == static_cast<Eigen::Index>(config_.vocab_size) &&
                    weights_.w_e.cols() == static_cast<Eigen::Index>(config_.d_model),
                "model: embedding shape does not match config");
        require(weights_.w_u_t.rows() == static_cast<Eigen::Index>(config_.vocab_size) &&
                    weights_.w_u_t.cols() == static_cast<Eigen::Index>(config_.d_model),
                "model: unembedding shape does not match config");
    }

    ModelConfig config_;
    Weights weights_;
    GraphPtr graph_;
    std::vector<Vector> bias_before_;
};

using ModelPtr = std::shared_ptr<const Model>;

inline ModelPtr make_model(ModelConfig c, Weights w) { return std::make_shared<const Model>(std::move(c), std::move(w)); }

inline ModelPtr load_model(const std::string& config_path, const std::string& weights_path,
                           WarningSink* warnings = nullptr) {
    ModelConfig c = load_config(config_path);
    const auto tensors = safetensors::load(weights_path);
    return make_model(c, weights_from_tensors(c, tensors, warnings));
}

// A model directory holds config.json and model.safetensors.
inline ModelPtr load_model_dir(const std::string& dir, WarningSink* warnings = nullptr) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), "model: not a directory: " + dir);
    return load_model((fs::path(dir) / "config.json").string(), (fs::path(dir) / "model.safetensors").string(),
                      warnings);
}

// Writes config.json + model.safetensors in canonical naming.
inline void save_model_dir(const Model& m, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream cfg(fs::path(dir) / "config.json");
    require(cfg.good(), "model: cannot write config into " + dir);
    cfg << nlohmann::json(m.config()).dump(2) << "\n";
    safetensors::save(weights_to_tensors(m.config(), m.weights()), (fs::path(dir) / "model.safetensors").string());
}

// ---------------------------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------------------------

inline Matrix broadcast_rows(const Vector& v, std::size_t rows) {
    return v.replicate(static_cast<Eigen::Index>(rows), 1);
}

// Input of `node` under `mask`: bias stream to date plus the outputs of upstream nodes whose edge is kept.
// In mean mode removed edges contribute the upstream node's mean output instead of zero.
inline Matrix assemble_input(const Model& model, std::size_t node, const Circuit& mask, const ActivationCache& cache,
                             const AblationContext& ablation = {}) {
    const auto& g = *model.graph();
    require(node > 0 && node < g.node_count(), "assemble_input: the input node has no input");
    require(mask.graph() == g, "assemble_input: mask belongs to a different graph");
    const std::size_t seq = cache.seq_len;
    Matrix x = broadcast_rows(model.bias_before(node), seq);
    const bool mean = ablation.mode == AblationMode::mean;
    if (mean) {
        require(ablation.means != nullptr, "assemble_input: mean ablation requires reference activations");
        require(seq <= ablation.means->max_len(), "assemble_input: prompt longer than every mean-ablation reference");
    }
    for (auto id : g.in_edges(node)) {
        const std::size_t src = g.edge(id).src;
        if (mask.kept(id)) {
            x += cache.outputs[src];
        } else if (mean) {
            x += ablation.means->mean[src].topRows(static_cast<Eigen::Index>(seq));
        }
    }
    return x;
}

inline Matrix assemble_input(const Model& model, const NodeId& node, const Circuit& mask, const ActivationCache& cache,
                             const AblationContext& ablation = {}) {
    return assemble_input(model, model.graph()->index_of(node), mask, cache, ablation);
}

struct ForwardResult {
    Matrix logits;
    ActivationCache cache;
};

namespace detail {

inline ActivationCache empty_cache(const Model& model, std::size_t seq) {
    ActivationCache c;
    c.seq_len = seq;
    c.outputs.assign(model.graph()->node_count(), Matrix());
    c.attention.assign(model.config().n_layers * model.config().n_heads, Matrix());
    c.bias_stream = broadcast_rows(model.bias_before(model.graph()->output_index()), seq);
    return c;
}

}  // namespace detail

// Standard layer-by-layer forward over the residual stream; records every node output on the way.
inline ForwardResult run_full(const Model& model, const Tokens& tokens) {
    const auto& cfg = model.config();
    const auto& g = *model.graph();
    ActivationCache cache = detail::empty_cache(model, tokens.size());
    Matrix resid = model.embed(tokens);
    cache.outputs[g.input_index()] = resid;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = model.weights().layers[l];
        const Matrix x = ops::norm(resid, cfg.norm_kind, lw.ln1_w, lw.ln1_b, cfg.norm_eps);
        Matrix attn_out = broadcast_rows(lw.b_o, tokens.size());
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            Matrix out = model.attn_head_normed(l, h, x, &cache.attention[l * cfg.n_heads + h]);
            attn_out += out;
            cache.outputs[g.index_of(NodeId::attn(l, h))] = std::move(out);
        }
        resid += attn_out;
        Matrix m = model.mlp(l, resid);
        resid += m;
        resid.rowwise() += lw.b_out;
        cache.outputs[g.index_of(NodeId::mlp(l))] = std::move(m);
        cache.residual_after_layer.push_back(resid);
    }
    cache.logits = model.output_logits(resid, false);
    ForwardResult r{cache.logits, std::move(cache)};
    return r;
}

struct MaskedRunOptions {
    AblationContext ablation;
    bool last_logits_only = false;
};

// Recomputes, in topological order, every node at or after `from` whose input can have changed:
// `from` itself and anything reachable from it through kept edges.
inline void propagate(const Model& model, const Circuit& mask, ActivationCache& cache, std::size_t from,
                      const MaskedRunOptions& opts) {
    const auto& g = *model.graph();
    std::vector<bool> dirty(g.node_count(), false);
    dirty[from] = true;
    for (std::size_t n = from; n < g.node_count(); ++n) {
        if (!dirty[n]) continue;
        const NodeId& id = g.node(n);
        if (id.kind == NodeKind::output) {
            const Matrix in = assemble_input(model, n, mask, cache, opts.ablation);
            cache.logits = model.output_logits(in, opts.last_logits_only);
            cache.logits_last_only = opts.last_logits_only;
        } else if (id.kind != NodeKind::input) {
            const Matrix in = assemble_input(model, n, mask, cache, opts.ablation);
            Matrix* pattern = id.is_attn() ? &cache.attention[id.layer * model.config().n_heads + id.head] : nullptr;
            cache.outputs[n] = model.node_forward(id, in, pattern);
        }
        for (auto e : g.out_edges(n)) {
            if (mask.kept(e)) dirty[g.edge(e).dst] = true;
        }
    }
}

// Graph execution: every node consumes assemble_input under `mask`.
inline ForwardResult run_masked(const Model& model, const Tokens& tokens, const Circuit& mask,
                                const MaskedRunOptions& opts = {}) {
    const auto& g = *model.graph();
    require(mask.graph() == g, "run_masked: mask belongs to a different graph");
    if (opts.ablation.mode == AblationMode::mean) {
        require(opts.ablation.means != nullptr, "run_masked: mean ablation requested without a reference batch");
    }
    ActivationCache cache = detail::empty_cache(model, tokens.size());
    cache.outputs[g.input_index()] = model.embed(tokens);
    // Evaluate every node (not only those reachable through kept edges) so the cache is complete.
    for (std::size_t n = 1; n < g.node_count(); ++n) {
        const NodeId& id = g.node(n);
        const Matrix in = assemble_input(model, n, mask, cache, opts.ablation);
        if (id.kind == NodeKind::output) {
            cache.logits = model.output_logits(in, opts.last_logits_only);
            cache.logits_last_only = opts.last_logits_only;
        } else {
            Matrix* pattern = id.is_attn() ? &cache.attention[id.layer * model.config().n_heads + id.head] : nullptr;
            cache.outputs[n] = model.node_forward(id, in, pattern);
        }
    }
    ForwardResult r{cache.logits, std::move(cache)};
    return r;
}

// Per-position means of every node output over a reference batch, from clean runs.
inline MeanActivations compute_means(const Model& model, const std::vector<Tokens>& batch) {
    require(!batch.empty(), "mean ablation: empty reference batch");
    std::size_t max_len = 0;
    for (const auto& t : batch) max_len = std::max(max_len, t.size());
    const auto& g = *model.graph();
    MeanActivations m;
    m.count.assign(max_len, 0);
    m.mean.assign(g.node_count(), Matrix::Zero(static_cast<Eigen::Index>(max_len),
                                               static_cast<Eigen::Index>(model.config().d_model)));
    for (const auto& t : batch) {
        const auto r = run_full(model, t);
        for (std::size_t p = 0; p < t.size(); ++p) ++m.count[p];
        for (std::size_t n = 0; n + 1 < g.node_count(); ++n) {
            m.mean[n].topRows(static_cast<Eigen::Index>(t.size())) += r.cache.outputs[n];
        }
    }
    for (std::size_t n = 0; n + 1 < g.node_count(); ++n) {
        for (std::size_t p = 0; p < max_len; ++p) {
            m.mean[n].row(static_cast<Eigen::Index>(p)) /= static_cast<float>(m.count[p]);
        }
    }
    return m;
}

// Static-partition parallel loop. Results must be written to per-index slots by the caller.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace kc
