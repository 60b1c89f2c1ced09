#pragma once

// Unified multi-modal fusion: latent, image-condition and text tokens share one attention
// sequence. Weights are random or zero; the block is exercised through structural checks.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "rng.hpp"

namespace ttsflow::umf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Modality : std::uint8_t { latent = 0, image = 1, text = 2 };

struct SequenceBatch {
    Matrix tokens;                         // rows = tokens, cols = d_model
    std::array<Eigen::Index, 3> lengths{}; // latent, image, text
    std::vector<std::int64_t> positions;
    std::vector<Modality> modalities;

    [[nodiscard]] Eigen::Index size() const { return tokens.rows(); }
    [[nodiscard]] Eigen::Index width() const { return tokens.cols(); }

    void validate() const {
        require(tokens.rows() == lengths[0] + lengths[1] + lengths[2],
                "SequenceBatch: row count must equal the segment lengths");
        require(positions.size() == static_cast<std::size_t>(tokens.rows()) &&
                    modalities.size() == static_cast<std::size_t>(tokens.rows()),
                "SequenceBatch: every token needs one position and one modality id");
    }
};

/// [z; image; text] with sequential positions.
inline SequenceBatch build_sequence(const Matrix& latent, const Matrix& image, const Matrix& text) {
    const Eigen::Index d = latent.cols();
    require(image.cols() == d || image.rows() == 0, "build_sequence: image width mismatch");
    require(text.cols() == d || text.rows() == 0, "build_sequence: text width mismatch");
    require(d > 0, "build_sequence: latent tokens must have positive width");
    SequenceBatch seq;
    seq.lengths = {latent.rows(), image.rows(), text.rows()};
    seq.tokens.resize(latent.rows() + image.rows() + text.rows(), d);
    seq.tokens.topRows(latent.rows()) = latent;
    if (image.rows() > 0) seq.tokens.middleRows(latent.rows(), image.rows()) = image;
    if (text.rows() > 0) seq.tokens.bottomRows(text.rows()) = text;
    const std::array<Modality, 3> kinds{Modality::latent, Modality::image, Modality::text};
    std::int64_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s)
        for (Eigen::Index i = 0; i < seq.lengths[s]; ++i) {
            seq.positions.push_back(pos++);
            seq.modalities.push_back(kinds[s]);
        }
    return seq;
}

/// Inverse of build_sequence on an unpermuted batch.
inline std::array<Matrix, 3> split_sequence(const SequenceBatch& seq) {
    seq.validate();
    return {Matrix(seq.tokens.topRows(seq.lengths[0])),
            Matrix(seq.tokens.middleRows(seq.lengths[0], seq.lengths[1])),
            Matrix(seq.tokens.bottomRows(seq.lengths[2]))};
}

/// Rotary positions plus additive modality embeddings (one row per modality).
struct PositionEncoding {
    double base = 10000.0;
    Matrix modality_embedding;  // 3 x d_model

    static PositionEncoding random(Eigen::Index d_model, std::uint64_t seed) {
        RngStream rng(SeedKey(seed, Substream::weights).child(0));
        PositionEncoding enc;
        enc.modality_embedding.resize(3, d_model);
        for (Eigen::Index r = 0; r < 3; ++r)
            enc.modality_embedding.row(r) = 0.1 * rng.normal_vector(d_model).transpose();
        return enc;
    }
};

/// Rotates feature pairs (2i, 2i+1) of each token by position * base^(-2i/d).
inline Matrix apply_rotary(const Matrix& tokens, const std::vector<std::int64_t>& positions,
                           double base = 10000.0) {
    const Eigen::Index d = tokens.cols();
    require(d % 2 == 0, "rotary encoding needs an even model width");
    Matrix out = tokens;
    for (Eigen::Index r = 0; r < tokens.rows(); ++r) {
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(r)]);
        for (Eigen::Index i = 0; i < d / 2; ++i) {
            const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / d);
            const double c = std::cos(theta), s = std::sin(theta);
            const double x0 = tokens(r, 2 * i), x1 = tokens(r, 2 * i + 1);
            out(r, 2 * i) = c * x0 - s * x1;
            out(r, 2 * i + 1) = s * x0 + c * x1;
        }
    }
    return out;
}

inline SequenceBatch encode_positions(const SequenceBatch& seq, const PositionEncoding& enc) {
    seq.validate();
    require(seq.width() % 2 == 0, "encode_positions: d_model must be even");
    require(enc.modality_embedding.rows() == 3 && enc.modality_embedding.cols() == seq.width(),
            "encode_positions: modality embedding shape mismatch");
    SequenceBatch out = seq;
    out.tokens = apply_rotary(seq.tokens, seq.positions, enc.base);
    for (Eigen::Index r = 0; r < out.size(); ++r)
        out.tokens.row(r) +=
            enc.modality_embedding.row(static_cast<Eigen::Index>(seq.modalities[static_cast<std::size_t>(r)]));
    return out;
}

struct BlockWeights {
    int heads = 1;
    Vector ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Matrix wq, wk, wv, wo;
    Vector bo;
    Matrix w1, w2;
    Vector b1, b2;

    static BlockWeights random(Eigen::Index d_model, Eigen::Index d_ff, int heads,
                               std::uint64_t seed) {
        require(heads >= 1 && d_model % heads == 0, "BlockWeights: heads must divide d_model");
        RngStream rng(SeedKey(seed, Substream::weights).child(1));
        auto mat = [&](Eigen::Index r, Eigen::Index c) {
            Matrix m(r, c);
            const double s = 1.0 / std::sqrt(static_cast<double>(r));
            for (Eigen::Index i = 0; i < r; ++i)
                for (Eigen::Index j = 0; j < c; ++j) m(i, j) = s * rng.normal();
            return m;
        };
        BlockWeights w;
        w.heads = heads;
        w.ln1_gamma = Vector::Ones(d_model);
        w.ln1_beta = Vector::Zero(d_model);
        w.ln2_gamma = Vector::Ones(d_model);
        w.ln2_beta = Vector::Zero(d_model);
        w.wq = mat(d_model, d_model);
        w.wk = mat(d_model, d_model);
        w.wv = mat(d_model, d_model);
        w.wo = mat(d_model, d_model);
        w.bo = 0.01 * rng.normal_vector(d_model);
        w.w1 = mat(d_model, d_ff);
        w.b1 = 0.01 * rng.normal_vector(d_ff);
        w.w2 = mat(d_ff, d_model);
        w.b2 = 0.01 * rng.normal_vector(d_model);
        return w;
    }

    /// Zeroes the attention output projection and the MLP output layer.
    void zero_outputs() {
        wo.setZero();
        bo.setZero();
        w2.setZero();
        b2.setZero();
    }

    void validate(Eigen::Index d) const {
        const auto ff = w1.cols();
        const bool ok = heads >= 1 && d % heads == 0 && ln1_gamma.size() == d &&
                        ln1_beta.size() == d && ln2_gamma.size() == d && ln2_beta.size() == d &&
                        wq.rows() == d && wq.cols() == d && wk.rows() == d && wk.cols() == d &&
                        wv.rows() == d && wv.cols() == d && wo.rows() == d && wo.cols() == d &&
                        bo.size() == d && w1.rows() == d && b1.size() == ff && w2.rows() == ff &&
                        w2.cols() == d && b2.size() == d;
        require(ok, "BlockWeights: shapes do not match the sequence width");
    }
};

inline Matrix layer_norm(const Matrix& x, const Vector& gamma, const Vector& beta,
                         double eps = 1e-5) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().mean();
        out.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + eps)).matrix();
        out.row(r) = out.row(r).cwiseProduct(gamma.transpose()) + beta.transpose();
    }
    return out;
}

/// Row-softmax attention kernels, one L x L matrix per head, for already-normalized input.
inline std::vector<Matrix> attention_weights(const Matrix& normed, const BlockWeights& w) {
    const Eigen::Index d = normed.cols();
    const Eigen::Index dh = d / w.heads;
    const Matrix q = normed * w.wq;
    const Matrix k = normed * w.wk;
    std::vector<Matrix> out;
    for (int h = 0; h < w.heads; ++h) {
        Matrix logits = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() /
                        std::sqrt(static_cast<double>(dh));
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const double hi = logits.row(r).maxCoeff();
            logits.row(r) = (logits.row(r).array() - hi).exp().matrix();
            logits.row(r) /= logits.row(r).sum();
        }
        out.push_back(std::move(logits));
    }
    return out;
}

inline Matrix self_attention(const Matrix& normed, const BlockWeights& w) {
    const Eigen::Index d = normed.cols();
    const Eigen::Index dh = d / w.heads;
    const Matrix v = normed * w.wv;
    const auto kernels = attention_weights(normed, w);
    Matrix heads(normed.rows(), d);
    for (int h = 0; h < w.heads; ++h) heads.middleCols(h * dh, dh) = kernels[h] * v.middleCols(h * dh, dh);
    return (heads * w.wo).rowwise() + w.bo.transpose();
}

inline double gelu(double x) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Matrix mlp(const Matrix& x, const BlockWeights& w) {
    Matrix hidden = (x * w.w1).rowwise() + w.b1.transpose();
    hidden = hidden.unaryExpr([](double v) { return gelu(v); });
    return (hidden * w.w2).rowwise() + w.b2.transpose();
}

/// Pre-LN block: A = S + Attn(LN(S)), out = A + MLP(LN(A)).
inline SequenceBatch block_forward(const SequenceBatch& seq, const BlockWeights& w) {
    seq.validate();
    w.validate(seq.width());
    const Matrix attended =
        seq.tokens + self_attention(layer_norm(seq.tokens, w.ln1_gamma, w.ln1_beta), w);
    SequenceBatch out = seq;
    out.tokens = attended + mlp(layer_norm(attended, w.ln2_gamma, w.ln2_beta), w);
    require(out.tokens.allFinite(), "block_forward: non-finite output");
    return out;
}

} // namespace ttsflow::umf
