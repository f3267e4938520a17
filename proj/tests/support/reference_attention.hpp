#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "llre/tensor.hpp"

// Test-only reference: conventional dot-product self-attention with full
// query-key pairwise interactions. Used to contrast its quadratic MAC growth
// against the linear siamese path; never part of the shipped network.

namespace llre::testing {

// single-head, projections Wq/Wk/Wv/Wo of size [C,C]
inline Tensor<double> dot_product_attention(const Tensor<double>& x, const Tensor<double>& wq,
                                            const Tensor<double>& wk, const Tensor<double>& wv,
                                            const Tensor<double>& wo) {
    const std::size_t n = x.extent(0), c = x.extent(1);
    auto matmul = [&](const Tensor<double>& a, const Tensor<double>& b) {
        Tensor<double> out({a.extent(0), b.extent(1)});
        for (std::size_t i = 0; i < a.extent(0); ++i)
            for (std::size_t k = 0; k < a.extent(1); ++k) {
                const double av = a.data()[i * a.extent(1) + k];
                for (std::size_t j = 0; j < b.extent(1); ++j)
                    out.data()[i * b.extent(1) + j] += av * b.data()[k * b.extent(1) + j];
            }
        return out;
    };
    Tensor<double> q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
    Tensor<double> scores({n, n});
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t d = 0; d < c; ++d) acc += q.data()[i * c + d] * k.data()[j * c + d];
            scores.data()[i * n + j] = acc * scale;
        }
    for (std::size_t i = 0; i < n; ++i) {
        double m = scores.data()[i * n];
        for (std::size_t j = 1; j < n; ++j) m = std::max(m, scores.data()[i * n + j]);
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) {
            scores.data()[i * n + j] = std::exp(scores.data()[i * n + j] - m);
            s += scores.data()[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) scores.data()[i * n + j] /= s;
    }
    Tensor<double> mixed = matmul(scores, v);
    return matmul(mixed, wo);
}

// MAC model of the same computation; the 2*N^2*C term is the pairwise part
inline std::uint64_t dot_product_attention_macs(std::uint64_t n, std::uint64_t c) {
    return 4 * n * c * c   // Q, K, V and output projections
           + 2 * n * n * c; // score matrix and its application to V
}

} // namespace llre::testing
