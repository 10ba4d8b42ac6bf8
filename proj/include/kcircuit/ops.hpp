#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "common.hpp"
#include "config.hpp"

// Dense kernels shared by every execution path.
namespace kc::ops {

inline Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, float eps) {
    Matrix out(x.rows(), x.cols());
    const auto n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
        mean /= n;
        double var = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double d = x(r, c) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            out(r, c) = static_cast<float>((x(r, c) - mean) * inv) * gain[c] + bias[c];
        }
    }
    return out;
}

inline Matrix rms_norm(const Matrix& x, const Vector& gain, float eps) {
    Matrix out(x.rows(), x.cols());
    const auto n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double ss = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) ss += static_cast<double>(x(r, c)) * x(r, c);
        const double inv = 1.0 / std::sqrt(ss / n + static_cast<double>(eps));
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            out(r, c) = static_cast<float>(x(r, c) * inv) * gain[c];
        }
    }
    return out;
}

inline Matrix norm(const Matrix& x, NormKind kind, const Vector& gain, const Vector& bias, float eps) {
    return kind == NormKind::layernorm ? layer_norm(x, gain, bias, eps) : rms_norm(x, gain, eps);
}

// tanh approximation used by GPT-2
inline float gelu(float x) {
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

inline void softmax_rows_causal(Matrix& scores) {
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        float mx = -std::numeric_limits<float>::infinity();
        for (Eigen::Index c = 0; c <= r; ++c) mx = std::max(mx, scores(r, c));
        float sum = 0.0f;
        for (Eigen::Index c = 0; c < scores.cols(); ++c) {
            if (c <= r) {
                scores(r, c) = std::exp(scores(r, c) - mx);
                sum += scores(r, c);
            } else {
                scores(r, c) = 0.0f;
            }
        }
        for (Eigen::Index c = 0; c <= r; ++c) scores(r, c) /= sum;
    }
}

// Rotate-half rotary embedding on a seq x d_head block, in place.
inline void apply_rotary(Matrix& x, float theta) {
    const Eigen::Index d = x.cols();
    const Eigen::Index half = d / 2;
    for (Eigen::Index p = 0; p < x.rows(); ++p) {
        for (Eigen::Index i = 0; i < half; ++i) {
            const float inv_freq = 1.0f / std::pow(theta, static_cast<float>(2 * i) / static_cast<float>(d));
            const float angle = static_cast<float>(p) * inv_freq;
            const float c = std::cos(angle), s = std::sin(angle);
            const float a = x(p, i), b = x(p, i + half);
            x(p, i) = a * c - b * s;
            x(p, i + half) = b * c + a * s;
        }
    }
}

// Log-softmax entry for one token, accumulated in double.
inline double log_prob(const float* logits, std::size_t n, std::size_t token) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
    return static_cast<double>(logits[token]) - mx - std::log(sum);
}

inline std::vector<double> softmax(const float* logits, std::size_t n) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
    std::vector<double> p(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// 1 + number of strictly larger logits + number of equal logits with a lower token id.
inline std::size_t rank_of(const float* logits, std::size_t n, std::size_t token) {
    const float t = logits[token];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (logits[i] > t || (logits[i] == t && i < token)) ++rank;
    }
    return rank;
}

// Token ids of the k largest logits, ties to the lower id.
inline std::vector<std::size_t> top_k(const float* logits, std::size_t n, std::size_t k) {
    k = std::min(k, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    auto better = [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

}  // namespace kc::ops
