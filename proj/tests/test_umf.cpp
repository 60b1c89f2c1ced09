#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "ttsflow/umf.hpp"

using namespace ttsflow;
using namespace ttsflow::umf;

namespace {

Matrix random_tokens(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    RngStream rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = rng.normal_vector(cols).transpose();
    return m;
}

SequenceBatch permuted(const SequenceBatch& s, const std::vector<std::size_t>& perm) {
    SequenceBatch p = s;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        p.tokens.row(static_cast<Eigen::Index>(i)) = s.tokens.row(static_cast<Eigen::Index>(perm[i]));
        p.positions[i] = s.positions[perm[i]];
        p.modalities[i] = s.modalities[perm[i]];
    }
    return p;
}

} // namespace

TEST(BuildSequence, ShapesAndRoundTrip) {
    const Matrix z = random_tokens(2, 8, 1), img = random_tokens(3, 8, 2), txt = random_tokens(4, 8, 3);
    const auto seq = build_sequence(z, img, txt);
    EXPECT_EQ(seq.size(), 9);
    EXPECT_EQ(seq.width(), 8);
    EXPECT_EQ(seq.modalities[2], Modality::image);
    EXPECT_EQ(seq.positions.back(), 8);
    const auto parts = split_sequence(seq);
    EXPECT_EQ(parts[0], z);
    EXPECT_EQ(parts[1], img);
    EXPECT_EQ(parts[2], txt);

    const auto no_text = build_sequence(z, img, Matrix(0, 8));
    EXPECT_EQ(no_text.size(), 5);
    EXPECT_THROW(build_sequence(z, random_tokens(3, 6, 4), txt), Error);
}

TEST(EncodePositions, RotaryIsNormPreserving) {
    const Matrix x = random_tokens(1, 8, 5);
    EXPECT_EQ(apply_rotary(x, {0}), x);
    const Matrix many = random_tokens(20, 8, 6);
    std::vector<std::int64_t> pos(20);
    std::mt19937_64 gen(7);
    for (auto& p : pos) p = static_cast<std::int64_t>(gen() % 5000);
    const Matrix rot = apply_rotary(many, pos);
    for (Eigen::Index r = 0; r < 20; ++r) EXPECT_NEAR(rot.row(r).norm(), many.row(r).norm(), 1e-9);
    EXPECT_THROW(apply_rotary(random_tokens(2, 7, 1), {0, 1}), Error);
}

TEST(EncodePositions, ModalityEmbeddingIsAdditive) {
    const Matrix tok = random_tokens(1, 8, 9);
    auto seq = build_sequence(tok, tok, Matrix(0, 8));
    seq.positions = {4, 4};
    const auto enc = PositionEncoding::random(8, 3);
    const auto out = encode_positions(seq, enc);
    const Matrix diff = out.tokens.row(0) - out.tokens.row(1);
    const Matrix expect = enc.modality_embedding.row(0) - enc.modality_embedding.row(1);
    EXPECT_LT((diff - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BlockForward, ResidualIdentityWithZeroOutputs) {
    const auto seq = build_sequence(random_tokens(2, 8, 1), random_tokens(3, 8, 2), random_tokens(4, 8, 3));
    auto w = BlockWeights::random(8, 32, 2, 11);
    w.zero_outputs();
    EXPECT_EQ(block_forward(seq, w).tokens, seq.tokens);
}

TEST(BlockForward, PermutationEquivariance) {
    std::mt19937_64 gen(12);
    for (int rep = 0; rep < 20; ++rep) {
        const auto seq = encode_positions(
            build_sequence(random_tokens(3, 8, 100 + rep), random_tokens(3, 8, 200 + rep), random_tokens(2, 8, 300 + rep)),
            PositionEncoding::random(8, static_cast<std::uint64_t>(rep)));
        const auto w = BlockWeights::random(8, 16, rep % 2 ? 2 : 1, static_cast<std::uint64_t>(rep));
        std::vector<std::size_t> perm(8);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), gen);
        const auto out = block_forward(seq, w);
        const auto pout = block_forward(permuted(seq, perm), w);
        for (std::size_t i = 0; i < perm.size(); ++i)
            EXPECT_LE((pout.tokens.row(static_cast<Eigen::Index>(i)) - out.tokens.row(static_cast<Eigen::Index>(perm[i])))
                          .cwiseAbs()
                          .maxCoeff(),
                      1e-9);
    }
}

TEST(BlockForward, AttentionRowsSumToOne) {
    const auto seq = build_sequence(random_tokens(2, 8, 1), random_tokens(3, 8, 2), random_tokens(4, 8, 3));
    const auto w = BlockWeights::random(8, 32, 4, 2);
    for (const auto& k : attention_weights(layer_norm(seq.tokens, w.ln1_gamma, w.ln1_beta), w)) {
        EXPECT_EQ(k.rows(), 9);
        for (Eigen::Index r = 0; r < k.rows(); ++r) EXPECT_NEAR(k.row(r).sum(), 1.0, 1e-12);
        EXPECT_GE(k.minCoeff(), 0.0);
    }
}

TEST(BlockForward, StackedShapesAndCrossModalReach) {
    auto seq = build_sequence(random_tokens(2, 8, 1), random_tokens(3, 8, 2), random_tokens(4, 8, 3));
    const auto w = BlockWeights::random(8, 32, 2, 5);
    SequenceBatch bumped = seq;
    bumped.tokens.row(8) += random_tokens(1, 8, 77);
    auto a = seq, b = bumped;
    for (int layer = 0; layer < 3; ++layer) {
        a = block_forward(a, w);
        b = block_forward(b, w);
        EXPECT_EQ(a.size(), 9);
        EXPECT_EQ(a.width(), 8);
    }
    EXPECT_GT((a.tokens.topRows(2) - b.tokens.topRows(2)).cwiseAbs().maxCoeff(), 1e-6);

    BlockWeights bad = w;
    bad.wq = Matrix::Zero(6, 6);
    EXPECT_THROW(block_forward(seq, bad), Error);
}
