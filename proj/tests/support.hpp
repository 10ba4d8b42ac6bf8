#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kcircuit/kcircuit.hpp"

namespace kct {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(KC_SOURCE_DIR); }
inline fs::path fixture(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }

inline fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("kc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline const kc::Tokenizer& gpt2_tokenizer() {
    static const kc::Tokenizer tok = kc::Tokenizer::from_files((source_dir() / "data/gpt2/vocab.json").string(),
                                                               (source_dir() / "data/gpt2/merges.txt").string());
    return tok;
}

inline kc::ModelConfig toy_config(std::size_t layers, std::size_t heads, std::size_t d_head = 4,
                                  std::size_t vocab = 40, std::size_t n_ctx = 32) {
    kc::ModelConfig c;
    c.n_layers = layers;
    c.n_heads = heads;
    c.n_kv_heads = heads;
    c.d_head = d_head;
    c.d_model = d_head * heads;
    c.d_mlp = 4 * c.d_model;
    c.vocab_size = vocab;
    c.n_ctx = n_ctx;
    return c;
}

inline kc::ModelPtr toy_model(std::size_t layers, std::size_t heads, std::uint64_t seed, std::size_t d_head = 4,
                              std::size_t vocab = 40, float scale = 0.4f) {
    auto c = toy_config(layers, heads, d_head, vocab);
    return kc::make_model(c, kc::random_weights(c, seed, scale));
}

// Random prompts with a random target; spans are filled in so lens/classify helpers accept them.
inline std::vector<kc::TokenizedPrompt> random_prompts(std::size_t n, std::size_t min_len, std::size_t max_len,
                                                       std::size_t vocab, std::uint64_t seed) {
    kc::Rng rng(seed);
    std::vector<kc::TokenizedPrompt> out;
    for (std::size_t i = 0; i < n; ++i) {
        kc::TokenizedPrompt p;
        const std::size_t len = min_len + rng.below(max_len - min_len + 1);
        for (std::size_t t = 0; t < len; ++t) p.tokens.push_back(static_cast<kc::TokenId>(rng.below(vocab)));
        p.target_first_token = static_cast<kc::TokenId>(rng.below(vocab));
        p.subject_span = {0, std::max<std::size_t>(1, len / 2)};
        for (std::size_t t = p.subject_span.end; t < len; ++t) p.relation_positions.push_back(t);
        p.source_index = i;
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<std::uint64_t> seed_range(std::size_t n, std::uint64_t first = 0) {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(first + i);
    return s;
}

inline std::string random_utf8(kc::Rng& rng, std::size_t max_cps) {
    // ranges: ASCII, whitespace, Latin-1/extended, Greek/Cyrillic, kana, CJK, emoji
    static const std::pair<std::uint32_t, std::uint32_t> k_ranges[] = {
        {0x20, 0x7e}, {0x09, 0x0d}, {0xa0, 0x24f}, {0x370, 0x4ff}, {0x3040, 0x30ff}, {0x4e00, 0x4fff}, {0x1f300, 0x1f64f},
    };
    std::string s;
    const std::size_t n = rng.below(max_cps + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [lo, hi] = k_ranges[rng.below(std::size(k_ranges))];
        kc::unicode::append_utf8(s, lo + static_cast<std::uint32_t>(rng.below(hi - lo + 1)));
    }
    return s;
}

inline kc::Circuit from_edges(const kc::GraphPtr& g, const std::vector<std::pair<kc::NodeId, kc::NodeId>>& edges) {
    auto c = kc::Circuit::empty(g);
    for (const auto& [s, d] : edges) c.keep(g->edge_id(s, d));
    return c;
}

// ------------------------------------------------------------------------------------------
// Naive oracle: double precision, recomputes the whole graph from scratch for every query.
// Learned-absolute positions, layernorm, gelu (the toy/GPT-2 family).
// ------------------------------------------------------------------------------------------

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowD = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Oracle {
    const kc::Model& model;

    MatD ln(const MatD& x, const kc::Vector& g, const kc::Vector& b) const {
        MatD out(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double mu = x.row(r).mean();
            const double var = (x.row(r).array() - mu).square().mean();
            const double inv = 1.0 / std::sqrt(var + static_cast<double>(model.config().norm_eps));
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                out(r, c) = (x(r, c) - mu) * inv * g[c] + b[c];
            }
        }
        return out;
    }

    static double gelu(double x) {
        return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    }

    MatD node(const kc::NodeId& id, const MatD& in) const {
        const auto& c = model.config();
        const auto& w = model.weights();
        if (id.is_attn()) {
            const auto& lw = w.layers[id.layer];
            const MatD x = ln(in, lw.ln1_w, lw.ln1_b);
            const std::size_t kv = id.head / c.group_size();
            MatD q = x * lw.w_q[id.head].cast<double>();
            MatD k = x * lw.w_k[kv].cast<double>();
            MatD v = x * lw.w_v[kv].cast<double>();
            q.rowwise() += lw.b_q[id.head].cast<double>();
            k.rowwise() += lw.b_k[kv].cast<double>();
            v.rowwise() += lw.b_v[kv].cast<double>();
            const auto T = in.rows();
            MatD a = MatD::Zero(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                double mx = -1e300;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    a(i, j) = q.row(i).dot(k.row(j)) / std::sqrt(static_cast<double>(c.d_head));
                    mx = std::max(mx, a(i, j));
                }
                double s = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) s += (a(i, j) = std::exp(a(i, j) - mx));
                for (Eigen::Index j = 0; j <= i; ++j) a(i, j) /= s;
            }
            return a * v * lw.w_o[id.head].cast<double>();
        }
        const auto& lw = w.layers[id.layer];
        MatD h = ln(in, lw.ln2_w, lw.ln2_b) * lw.w_in.cast<double>();
        h.rowwise() += lw.b_in.cast<double>();
        h = h.unaryExpr([](double v) { return gelu(v); });
        return h * lw.w_out.cast<double>();
    }

    RowD bias(std::size_t n) const {
        const auto& g = *model.graph();
        const auto& id = g.node(n);
        RowD b = RowD::Zero(static_cast<Eigen::Index>(model.config().d_model));
        for (std::size_t l = 0; l < model.config().n_layers; ++l) {
            const bool out = id.kind == kc::NodeKind::output;
            if (out || l < id.layer || (id.is_mlp() && l == id.layer)) b += model.weights().layers[l].b_o.cast<double>();
            if (out || l < id.layer) b += model.weights().layers[l].b_out.cast<double>();
        }
        return b;
    }

    // Last-position log-softmax under `mask`, zero or mean ablation.
    std::vector<double> last_log_probs(const kc::Tokens& toks, const kc::Circuit& mask,
                                       const std::vector<MatD>* means = nullptr) const {
        const auto& g = *model.graph();
        const auto T = static_cast<Eigen::Index>(toks.size());
        std::vector<MatD> out(g.node_count());
        out[0] = model.embed(toks).cast<double>();
        for (std::size_t n = 1; n < g.node_count(); ++n) {
            MatD in = bias(n).replicate(T, 1);
            for (auto e : g.in_edges(n)) {
                const auto src = g.edge(e).src;
                if (mask.kept(e)) {
                    in += out[src];
                } else if (means) {
                    in += (*means)[src].topRows(T);
                }
            }
            if (g.node(n).kind == kc::NodeKind::output) {
                const auto& w = model.weights();
                const MatD x = ln(in.bottomRows(1), w.ln_final_w, w.ln_final_b);
                const RowD logits = x * w.w_u_t.cast<double>().transpose();
                const double mx = logits.maxCoeff();
                const double lse = mx + std::log((logits.array() - mx).exp().sum());
                std::vector<double> lp(static_cast<std::size_t>(logits.size()));
                for (Eigen::Index i = 0; i < logits.size(); ++i) lp[static_cast<std::size_t>(i)] = logits[i] - lse;
                return lp;
            }
            out[n] = node(g.node(n), in);
        }
        return {};
    }

    std::vector<MatD> means(const std::vector<kc::Tokens>& batch) const {
        const auto& g = *model.graph();
        std::size_t max_len = 0;
        for (const auto& t : batch) max_len = std::max(max_len, t.size());
        const auto D = static_cast<Eigen::Index>(model.config().d_model);
        std::vector<MatD> sum(g.node_count(), MatD::Zero(static_cast<Eigen::Index>(max_len), D));
        std::vector<double> cnt(max_len, 0.0);
        const auto full = kc::Circuit::full(model.graph());
        for (const auto& t : batch) {
            const auto T = static_cast<Eigen::Index>(t.size());
            std::vector<MatD> out(g.node_count());
            out[0] = model.embed(t).cast<double>();
            for (std::size_t n = 1; n + 1 < g.node_count(); ++n) {
                MatD in = bias(n).replicate(T, 1);
                for (auto e : g.in_edges(n)) in += out[g.edge(e).src];
                out[n] = node(g.node(n), in);
            }
            for (std::size_t n = 0; n + 1 < g.node_count(); ++n) sum[n].topRows(T) += out[n];
            for (std::size_t p = 0; p < t.size(); ++p) cnt[p] += 1.0;
        }
        for (auto& m : sum) {
            for (std::size_t p = 0; p < max_len; ++p) m.row(static_cast<Eigen::Index>(p)) /= cnt[p];
        }
        return sum;
    }
};

struct OracleStep {
    std::size_t edge;
    double score;
    bool kept;
};

// Recompute-from-scratch discovery: same visiting order, two full masked runs per edge per prompt.
inline std::vector<OracleStep> naive_discover(const kc::Model& model, const std::vector<kc::TokenizedPrompt>& batch,
                                              double tau, kc::AblationMode mode = kc::AblationMode::zero) {
    const Oracle o{model};
    const auto& g = *model.graph();
    std::vector<MatD> means;
    if (mode == kc::AblationMode::mean) {
        std::vector<kc::Tokens> ref;
        for (const auto& p : batch) ref.push_back(p.tokens);
        means = o.means(ref);
    }
    const auto* mp = mode == kc::AblationMode::mean ? &means : nullptr;
    kc::Circuit mask = kc::Circuit::full(model.graph());
    std::vector<OracleStep> steps;
    for (std::size_t dst = g.node_count() - 1; dst > 0; --dst) {
        const auto& ins = g.in_edges(dst);
        for (auto it = ins.rbegin(); it != ins.rend(); ++it) {
            kc::Circuit without = mask;
            without.remove(*it);
            double sum = 0.0;
            for (const auto& p : batch) {
                const auto t = static_cast<std::size_t>(p.target_first_token);
                sum += o.last_log_probs(p.tokens, mask, mp)[t] - o.last_log_probs(p.tokens, without, mp)[t];
            }
            const double s = sum / static_cast<double>(batch.size());
            const bool keep = s >= tau;
            if (!keep) mask = without;
            steps.push_back({*it, s, keep});
        }
    }
    return steps;
}

}  // namespace kct
