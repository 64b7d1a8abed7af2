// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "deltattn/delta_matmul.hpp"
#include "deltattn/synthetic.hpp"
#include "oracles.hpp"

using namespace deltattn;

TEST(DeltaScores, ConstantKeysCollapseToBasisScore) {
    const MatrixF k = gen_random_walk_keys(3, 0, 16, 8, 0.0); // every row == row 0
    const MatrixF q = gen_gaussian_matrix(3, 0, detail::TensorRole::Query, 4, 8);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    EXPECT_EQ(enc.total_nnz(), 0u);
    MacCounter mc;
    const ScoreMatrix<float> s = delta_score_columns(q, enc, mc);
    for (std::size_t i = 0; i < 4; ++i) {
        const float basis_score = dot(q.row(i), k.row(0));
        for (std::size_t t = 0; t < 16; ++t)
            EXPECT_EQ(s.scores(i, t), basis_score);
    }
    EXPECT_EQ(mc.mac, 4u * 8u);            // four basis dots, no delta work
    EXPECT_EQ(mc.skipped, 4u * 15u * 8u);  // fifteen all-zero columns per query
}

TEST(DeltaScores, ZeroThresholdTracksDenseDots) {
    const MatrixF k = gen_random_walk_keys(5, 0, 32, 16, 0.05);
    const MatrixF q = gen_gaussian_matrix(5, 0, detail::TensorRole::Query, 6, 16);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.0f);
    MacCounter mc;
    const ScoreMatrix<float> s = delta_score_columns(q, enc, mc);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t t = 0; t < 32; ++t)
            EXPECT_NEAR(s.scores(i, t), dot(q.row(i), k.row(t)), 1e-4f);
}

TEST(DeltaScores, ErrorBoundedByThetaTimesQueryNorm) {
    const float theta = 0.1f;
    const MatrixF k = gen_random_walk_keys(7, 0, 48, 16, 0.05);
    const MatrixF q = gen_gaussian_matrix(7, 0, detail::TensorRole::Query, 8, 16);
    const DeltaEncoding<float> enc = build_delta_encoding(k, theta);
    MacCounter mc;
    const ScoreMatrix<float> s = delta_score_columns(q, enc, mc);
    for (std::size_t i = 0; i < 8; ++i) {
        double norm1 = 0.0;
        for (float v : q.row(i))
            norm1 += std::abs(static_cast<double>(v));
        const double bound = static_cast<double>(theta) * norm1;
        for (std::size_t t = 0; t < 48; ++t) {
            const double exact = static_cast<double>(dot(q.row(i), k.row(t)));
            EXPECT_LE(std::abs(static_cast<double>(s.scores(i, t)) - exact), bound)
                << "entry (" << i << ", " << t << ")";
        }
    }
}

TEST(DeltaScores, BasisColumnIsExactAndFlaggedFull) {
    const MatrixF k = gen_random_walk_keys(11, 0, 24, 8, 0.05);
    const MatrixF q = gen_gaussian_matrix(11, 0, detail::TensorRole::Query, 5, 8);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.2f);
    MacCounter mc;
    const ScoreMatrix<float> s = delta_score_columns(q, enc, mc);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(s.scores(i, 0), dot(q.row(i), k.row(0)));
        EXPECT_EQ(s.flag(i, 0), Exactness::Full);
        for (std::size_t t = 1; t < 24; ++t)
            EXPECT_EQ(s.flag(i, t), Exactness::Approximate);
    }
}

TEST(DeltaScores, SingleQueryMatchesMatrixPathBitExactly) {
    const MatrixF k = gen_random_walk_keys(13, 0, 40, 16, 0.05);
    const MatrixF q = gen_gaussian_matrix(13, 0, detail::TensorRole::Query, 4, 16);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    MacCounter m1, m2;
    const ScoreMatrix<float> full = delta_score_columns(q, enc, m1);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::vector<float> one = delta_score_single_query(q.row(i), enc, 25, m2);
        ASSERT_EQ(one.size(), 26u);
        for (std::size_t t = 0; t <= 25; ++t)
            EXPECT_EQ(one[t], full.scores(i, t)) << "query " << i << " column " << t;
    }
}

TEST(DeltaScores, SingleQueryValidatesColumnRange) {
    const MatrixF k = gen_random_walk_keys(17, 0, 8, 4, 0.05);
    const MatrixF q = gen_gaussian_matrix(17, 0, detail::TensorRole::Query, 1, 4);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    MacCounter mc;
    EXPECT_THROW(delta_score_single_query(q.row(0), enc, 8, mc), BoundsError);
    EXPECT_NO_THROW(delta_score_single_query(q.row(0), enc, 7, mc));
}

TEST(DeltaScores, WidthMismatchThrows) {
    const MatrixF k = gen_random_walk_keys(19, 0, 8, 4, 0.05);
    const MatrixF q = gen_gaussian_matrix(19, 0, detail::TensorRole::Query, 2, 6);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    MacCounter mc;
    EXPECT_THROW(delta_score_columns(q, enc, mc), ShapeError);
    EXPECT_THROW(delta_score_single_query(q.row(0), enc, 3, mc), ShapeError);
}

TEST(MacCounter, CountsProductsAndSkipsPerColumn) {
    const MatrixF k = gen_random_walk_keys(23, 0, 32, 16, 0.05);
    const MatrixF q = gen_gaussian_matrix(23, 0, detail::TensorRole::Query, 7, 16);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    MacCounter mc;
    delta_score_columns(q, enc, mc);
    const std::uint64_t nnz = enc.total_nnz();
    EXPECT_EQ(mc.mac, 7u * (16u + nnz));
    EXPECT_EQ(mc.skipped, 7u * (31u * 16u - nnz));
    EXPECT_EQ(mc.dense_equivalent(), 7u * 32u * 16u);
}

TEST(MacCounter, SkippedFractionOverDeltaRegionEqualsElementSparsity) {
    const MatrixF k = gen_random_walk_keys(29, 0, 64, 32, 0.05);
    const MatrixF q = gen_gaussian_matrix(29, 0, detail::TensorRole::Query, 5, 32);
    const DeltaEncoding<float> enc = build_delta_encoding(k, 0.1f);
    MacCounter mc;
    delta_score_columns(q, enc, mc);
    const std::uint64_t delta_mac = mc.mac - 5u * 32u; // subtract the dense basis dots
    const double fraction =
        static_cast<double>(mc.skipped) / static_cast<double>(delta_mac + mc.skipped);
    EXPECT_NEAR(fraction, static_cast<double>(element_sparsity(enc)), 1e-6);
}

TEST(MacCounter, AccumulatesAcrossCalls) {
    MacCounter a{10, 20};
    const MacCounter b{1, 2};
    a += b;
    EXPECT_EQ(a.mac, 11u);
    EXPECT_EQ(a.skipped, 22u);
}
