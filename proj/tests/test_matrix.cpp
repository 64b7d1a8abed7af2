// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>

#include "deltattn/matrix.hpp"
#include "deltattn/synthetic.hpp"
#include "oracles.hpp"

using namespace deltattn;

TEST(Dot, AccumulatesInAscendingIndexOrder) {
    const std::vector<float> a{0.1f, 0.2f, 0.3f, 0.7f};
    const std::vector<float> b{1.0f, 10.0f, 100.0f, -3.0f};
    float expect = 0.0f;
    for (std::size_t e = 0; e < a.size(); ++e)
        expect += a[e] * b[e];
    EXPECT_EQ(dot(std::span<const float>(a), std::span<const float>(b)), expect);
}

TEST(Dot, LengthMismatchThrows) {
    const std::vector<float> a{1.0f, 2.0f};
    const std::vector<float> b{1.0f};
    EXPECT_THROW(dot(std::span<const float>(a), std::span<const float>(b)), ShapeError);
}

TEST(Matmul, MatchesNaiveTripleLoop) {
    const MatrixF a = gen_gaussian_matrix(3, 0, detail::TensorRole::Query, 5, 7);
    const MatrixF b = gen_gaussian_matrix(3, 0, detail::TensorRole::Key, 7, 4);
    const MatrixF c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            float acc = 0.0f;
            for (std::size_t k = 0; k < 7; ++k)
                acc += a(i, k) * b(k, j);
            EXPECT_EQ(c(i, j), acc) << "entry (" << i << ", " << j << ")";
        }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    EXPECT_THROW(matmul(MatrixF(2, 3), MatrixF(4, 2)), ShapeError);
}

TEST(Softmax, MatchesFrozenReference) {
    std::vector<double> x{1.0, 2.0, 3.0};
    softmax_inplace(std::span<double>(x));
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(x[i], oracle::kSoftmax123[i], 1e-15);

    std::vector<float> xf{1.0f, 2.0f, 3.0f};
    softmax_inplace(std::span<float>(xf));
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(static_cast<double>(xf[i]), oracle::kSoftmax123[i], 1e-6);
}

TEST(Softmax, RowsSumToOne) {
    MatrixF s = gen_gaussian_matrix(5, 0, detail::TensorRole::Query, 6, 6);
    const MatrixF p = row_softmax(s);
    for (std::size_t i = 0; i < 6; ++i) {
        float sum = 0.0f;
        for (std::size_t j = 0; j < 6; ++j) {
            EXPECT_GE(p(i, j), 0.0f);
            sum += p(i, j);
        }
        EXPECT_NEAR(sum, 1.0f, 1e-5f);
    }
}

TEST(Softmax, LargeInputsDoNotOverflow) {
    std::vector<float> x{500.0f, 501.0f, 499.0f};
    softmax_inplace(std::span<float>(x));
    for (float v : x)
        EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(x[1], x[0]);
    EXPECT_GT(x[0], x[2]);
}

TEST(Softmax, EmptyActiveSetThrows) {
    std::vector<float> x;
    EXPECT_THROW(softmax_inplace(std::span<float>(x)), InvariantError);
}

TEST(CausalSoftmax, MaskedRegionIsExactlyZero) {
    MatrixF s = gen_gaussian_matrix(7, 0, detail::TensorRole::Query, 5, 5);
    const MatrixF p = row_softmax(s, CausalMask{5});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j)
            EXPECT_EQ(p(i, j), 0.0f);
}

TEST(CausalSoftmax, PrefixMatchesPlainSoftmaxOfPrefix) {
    MatrixF s = gen_gaussian_matrix(11, 0, detail::TensorRole::Query, 6, 6);
    const MatrixF p = row_softmax(s, CausalMask{6});
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<float> prefix(s.row(i).begin(), s.row(i).begin() + i + 1);
        softmax_inplace(std::span<float>(prefix));
        for (std::size_t j = 0; j <= i; ++j)
            EXPECT_EQ(p(i, j), prefix[j]);
    }
}

TEST(CausalSoftmax, RequiresSquareScores) {
    EXPECT_THROW(row_softmax(MatrixF(3, 4), CausalMask{3}), ShapeError);
    EXPECT_THROW(row_softmax(MatrixF(3, 3), CausalMask{4}), ShapeError);
}

TEST(DenseScores, ScaleAppliedPerEntryAfterRawDot) {
    const MatrixF q = gen_gaussian_matrix(13, 0, detail::TensorRole::Query, 4, 16);
    const MatrixF k = gen_gaussian_matrix(13, 0, detail::TensorRole::Key, 6, 16);
    const MatrixF s = dense_scores(q, k);
    const float scale = 1.0f / std::sqrt(16.0f);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_EQ(s(i, j), dot(q.row(i), k.row(j)) * scale);
}

TEST(DenseAttention, MatchesDoubleOracle) {
    const std::size_t n = 16, d = 8;
    const MatrixF q = gen_gaussian_matrix(17, 0, detail::TensorRole::Query, n, d);
    const MatrixF k = gen_gaussian_matrix(17, 0, detail::TensorRole::Key, n, d);
    const MatrixF v = gen_gaussian_matrix(17, 0, detail::TensorRole::Value, n, d);
    const MatrixF out = dense_attention(q, k, v, true);
    const oracle::Rows64 ref =
        oracle::attention_ref(oracle::to_rows64(q), oracle::to_rows64(k), oracle::to_rows64(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t e = 0; e < d; ++e)
            EXPECT_NEAR(static_cast<double>(out(i, e)), ref[i][e], 1e-5);
}

TEST(DenseAttention, SingleRowPathMatchesFullMatrixBitExactly) {
    const std::size_t n = 12, d = 8;
    const MatrixF q = gen_gaussian_matrix(19, 0, detail::TensorRole::Query, n, d);
    const MatrixF k = gen_gaussian_matrix(19, 0, detail::TensorRole::Key, n, d);
    const MatrixF v = gen_gaussian_matrix(19, 0, detail::TensorRole::Value, n, d);
    const MatrixF full = dense_attention(q, k, v, true);
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<float> row = dense_attention_row(q.row(i), k, v, i + 1);
        for (std::size_t e = 0; e < d; ++e)
            EXPECT_EQ(row[e], full(i, e)) << "row " << i << " elem " << e;
    }
}

TEST(DenseAttentionRow, ValidatesPositions) {
    const MatrixF k = gen_gaussian_matrix(23, 0, detail::TensorRole::Key, 4, 8);
    const MatrixF v = gen_gaussian_matrix(23, 0, detail::TensorRole::Value, 4, 8);
    const MatrixF q = gen_gaussian_matrix(23, 0, detail::TensorRole::Query, 1, 8);
    EXPECT_THROW(dense_attention_row(q.row(0), k, v, 0), BoundsError);
    EXPECT_THROW(dense_attention_row(q.row(0), k, v, 5), BoundsError);
}

TEST(Matrix, FromRowsRejectsRaggedInput) {
    EXPECT_THROW(MatrixF::from_rows({{1.0f, 2.0f}, {3.0f}}), ShapeError);
}

TEST(Matrix, AllFiniteDetectsBadEntries) {
    MatrixF m(2, 2, 1.0f);
    EXPECT_TRUE(m.all_finite());
    m(0, 1) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_FALSE(m.all_finite());
    m(0, 1) = std::numeric_limits<float>::infinity();
    EXPECT_FALSE(m.all_finite());
}
