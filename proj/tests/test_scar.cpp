#include "gem/scar.hpp"

#include "property.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace gem;
using namespace gem::scar;
using gem::testing::for_each_case;
using gem::testing::uniform;
using gem::testing::uniform_int;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    fill_normal(m, rng, scale);
    return m;
}

// Plain softmax attention, no mask.
Matrix dense_weights(const Matrix& q, const Matrix& k) {
    const std::size_t n = q.rows();
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
            w(i, j) = std::exp(s / std::sqrt(static_cast<double>(q.cols())));
            z += w(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) w(i, j) /= z;
    }
    return w;
}

double objective_of(const Matrix& pts, const std::vector<std::size_t>& assign, std::size_t k) {
    // Best centroid of each group is its normalized mean direction.
    const std::size_t d = pts.cols();
    Matrix sums(k, d);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const double n = norm(pts.row(i));
        for (std::size_t c = 0; c < d; ++c) sums(assign[i], c) += pts(i, c) / n;
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i) obj += cosine_distance(pts.row(i), sums.row(assign[i]));
    return obj;
}

}  // namespace

TEST(CosineDistance, Examples) {
    const std::vector<double> v{0.3, -1.2, 2.0};
    EXPECT_NEAR(cosine_distance(v, v), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{-1, 0}), 2.0);
    EXPECT_THROW_WITH(cosine_distance(std::vector<double>{0, 0}, std::vector<double>{1, 0}), "zero-norm vector");
}

TEST(KMeans, KEqualsN) {
    std::mt19937_64 rng(1);
    const Matrix pts = random_matrix(rng, 7, 4);
    const auto plan = kmeans_cosine(pts, 7, 20, 3);
    std::vector<std::size_t> sorted = plan.assignments;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(sorted[i], i);
    EXPECT_NEAR(plan.objective, 0.0, 1e-12);
}

TEST(KMeans, SingleClusterCentroidIsMean) {
    // Unit-length points, so the mean of the points is the mean of their directions.
    const Matrix pts = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0.6, 0.8, 0}, {0, 0.6, 0.8}});
    const auto plan = kmeans_cosine(pts, 1, 10, 0);
    for (auto a : plan.assignments) EXPECT_EQ(a, 0u);
    const std::vector<double> mean{1.6 / 4, 2.4 / 4, 0.8 / 4};
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(plan.centroids(0, c), mean[c], 1e-12);
}

TEST(KMeans, MatchesBruteForceTwoPartition) {
    const double a = std::sqrt(0.995 * 0.995 + 0.01);
    const Matrix pts = Matrix::from_rows({{1, 0}, {0.995 / a, 0.1 / a}, {0, 1}, {-0.1 / a, 0.995 / a}});
    // Brute force: every assignment of 4 points to 2 non-empty groups.
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_assign;
    for (unsigned mask = 1; mask < 15; ++mask) {
        std::vector<std::size_t> as(4);
        for (std::size_t i = 0; i < 4; ++i) as[i] = (mask >> i) & 1u;
        const double obj = objective_of(pts, as, 2);
        if (obj < best) {
            best = obj;
            best_assign = as;
        }
    }
    EXPECT_EQ(best_assign[0], best_assign[1]);
    EXPECT_EQ(best_assign[2], best_assign[3]);
    EXPECT_NE(best_assign[0], best_assign[2]);

    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto plan = kmeans_cosine(pts, 2, 20, seed);
        EXPECT_EQ(plan.assignments[0], plan.assignments[1]) << "seed " << seed;
        EXPECT_EQ(plan.assignments[2], plan.assignments[3]) << "seed " << seed;
        EXPECT_NE(plan.assignments[0], plan.assignments[2]) << "seed " << seed;
        EXPECT_NEAR(plan.objective, best, 1e-12);
    }
}

TEST(KMeans, Errors) {
    std::mt19937_64 rng(1);
    const Matrix pts = random_matrix(rng, 3, 2);
    EXPECT_THROW_WITH(kmeans_cosine(pts, 4, 10, 0), "more clusters than points");
    Matrix zero = pts;
    zero(1, 0) = zero(1, 1) = 0.0;
    EXPECT_THROW_WITH(kmeans_cosine(zero, 2, 10, 0), "zero-norm vector");
}

TEST(KMeans, DeterministicForSeed) {
    std::mt19937_64 rng(4);
    const Matrix pts = random_matrix(rng, 40, 6);
    const auto a = kmeans_cosine(pts, 5, 25, 9);
    const auto b = kmeans_cosine(pts, 5, 25, 9);
    EXPECT_EQ(a.assignments, b.assignments);
    EXPECT_EQ(a.centroids, b.centroids);
    EXPECT_EQ(a.objective_history, b.objective_history);
}

TEST(KMeans, DuplicatePointsKeepKClusters) {
    // Farthest-point seeding hits distance 0; empty clusters are repaired.
    const Matrix pts = Matrix::from_rows({{1, 0}, {1, 0}, {1, 0}, {0, 1}});
    const auto plan = kmeans_cosine(pts, 3, 10, 0);
    EXPECT_EQ(plan.k, 3u);
    for (auto a : plan.assignments) EXPECT_LT(a, 3u);
}

TEST(BuildMask, Examples) {
    const std::vector<std::size_t> a{0, 0, 1};
    const auto m = build_mask(a);
    const int expected[3][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m.at(i, j), expected[i][j] == 1);
    EXPECT_EQ(build_mask(std::vector<std::size_t>(5, 2)).set_count(), 25u);
    const auto id = build_mask(std::vector<std::size_t>{0, 1, 2, 3});
    EXPECT_EQ(id.set_count(), 4u);
    EXPECT_DOUBLE_EQ(id.density(), 0.25);
}

TEST(BuildMask, Pbm) {
    EXPECT_EQ(to_pbm(build_mask(std::vector<std::size_t>{0, 0, 1})), "P1\n3 3\n1 1 0\n1 1 0\n0 0 1\n");
}

TEST(MaskedAttention, SingletonIsOneHot) {
    std::mt19937_64 rng(2);
    const Matrix q = random_matrix(rng, 3, 2);
    const Matrix k = random_matrix(rng, 3, 2);
    const Matrix v = random_matrix(rng, 3, 2);
    const auto r = masked_attention(q, k, v, build_mask(std::vector<std::size_t>{0, 0, 1}));
    EXPECT_EQ(r.weights(2, 0), 0.0);
    EXPECT_EQ(r.weights(2, 1), 0.0);
    EXPECT_EQ(r.weights(2, 2), 1.0);
    EXPECT_EQ(r.outputs(2, 0), v(2, 0));
    EXPECT_EQ(r.outputs(2, 1), v(2, 1));
}

TEST(MaskedAttention, EqualLogitsSplitEvenly) {
    const Matrix q = Matrix::from_rows({{1, 0}, {1, 0}});
    const Matrix k = Matrix::from_rows({{0, 1}, {0, 1}});
    const Matrix v = Matrix::from_rows({{2, 0}, {0, 4}});
    const auto r = masked_attention(q, k, v, build_mask(std::vector<std::size_t>{0, 0}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(r.weights(i, j), 0.5);
    EXPECT_DOUBLE_EQ(r.outputs(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(r.outputs(0, 1), 2.0);
}

TEST(MaskedAttention, BlockRestrictedDenseOracle) {
    const Matrix q = Matrix::from_rows({{1.0, 0.5}, {-0.3, 0.8}, {0.2, -1.0}});
    const Matrix k = Matrix::from_rows({{0.4, 0.1}, {1.2, -0.7}, {-0.5, 0.9}});
    const Matrix v = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const auto r = masked_attention(q, k, v, build_mask(std::vector<std::size_t>{0, 0, 1}));
    // Dense softmax over the block {0, 1}, renormalized by hand.
    const Matrix dense = dense_weights(q, k);
    for (std::size_t i = 0; i < 2; ++i) {
        const double z = dense(i, 0) + dense(i, 1);
        EXPECT_NEAR(r.weights(i, 0), dense(i, 0) / z, 1e-15);
        EXPECT_NEAR(r.weights(i, 1), dense(i, 1) / z, 1e-15);
        EXPECT_EQ(r.weights(i, 2), 0.0);
    }
    EXPECT_EQ(r.weights(2, 2), 1.0);
}

TEST(MaskedAttention, LiteralZeroKeepsMaskedWeight) {
    const Matrix q = Matrix::from_rows({{1.0, 0.5}, {-0.3, 0.8}, {0.2, -1.0}});
    const Matrix k = q;
    const Matrix v = q;
    const auto mask = build_mask(std::vector<std::size_t>{0, 0, 1});
    const auto r = masked_attention(q, k, v, mask, MaskMode::literal_zero);
    // Row 2: masked logits are 0, so they still receive exp(0)/Z.
    const double s22 = (0.04 + 1.0) / std::sqrt(2.0);
    const double z = 2.0 + std::exp(s22);
    EXPECT_NEAR(r.weights(2, 0), 1.0 / z, 1e-15);
    EXPECT_NEAR(r.weights(2, 2), std::exp(s22) / z, 1e-15);
}

TEST(MaskedAttention, DimensionMismatch) {
    const Matrix q(3, 2);
    const Matrix k(3, 3);
    EXPECT_THROW_WITH(masked_attention(q, k, q, build_mask(std::vector<std::size_t>{0, 0, 0})),
                      "dimension mismatch");
    EXPECT_THROW_WITH(masked_attention(q, q, q, build_mask(std::vector<std::size_t>{0, 0})),
                      "dimension mismatch");
}

TEST(OpCounts, Examples) {
    EXPECT_EQ(scar_ops(128, 16), 2176u);
    EXPECT_EQ(scar_ops(128, 8), 1152u);
    EXPECT_EQ(scar_ops(50, 0), 50u);
    EXPECT_EQ(dense_ops(128), 16384u);
    EXPECT_EQ(dense_ops(1), 1u);
    EXPECT_EQ(dense_ops(256), 65536u);
    EXPECT_DOUBLE_EQ(reduction(16384, 2176), 0.8671875);
    EXPECT_NEAR(reduction(2176, 1152), 0.4706, 5e-5);
    EXPECT_DOUBLE_EQ(reduction(77, 77), 0.0);
}

// ---------------------------------------------------------------------------
// Properties

TEST(ScarProperty, KMeansObjectiveNonIncreasing) {
    for_each_case(gem::testing::kSeedScar, [](std::mt19937_64& rng, int i) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 40));
        const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        const auto k = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<int>(n)));
        const Matrix pts = random_matrix(rng, n, d);
        const auto plan = kmeans_cosine(pts, k, 30, static_cast<std::uint64_t>(i));
        ASSERT_EQ(plan.assignments.size(), n);
        for (auto a : plan.assignments) ASSERT_LT(a, k);
        const auto& h = plan.objective_history;
        ASSERT_FALSE(h.empty());
        for (std::size_t t = 1; t < h.size(); ++t) ASSERT_LE(h[t], h[t - 1] + 1e-12) << "iteration " << t;
        ASSERT_LE(plan.objective, h.back() + 1e-12);
        ASSERT_GE(plan.objective, -1e-12);
    });
}

TEST(ScarProperty, MaskSymmetricReflexiveCoMembership) {
    for_each_case(gem::testing::kSeedScar + 1, [](std::mt19937_64& rng, int) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 30));
        const int k = uniform_int(rng, 1, 6);
        std::vector<std::size_t> a(n);
        for (auto& x : a) x = static_cast<std::size_t>(uniform_int(rng, 0, k - 1));
        const auto m = build_mask(a);
        double size_sq = 0.0;
        for (int c = 0; c < k; ++c) {
            const auto cnt = static_cast<double>(std::count(a.begin(), a.end(), static_cast<std::size_t>(c)));
            size_sq += cnt * cnt;
        }
        ASSERT_DOUBLE_EQ(m.density(), size_sq / static_cast<double>(n * n));
        for (std::size_t i = 0; i < n; ++i) {
            ASSERT_TRUE(m.at(i, i));
            for (std::size_t j = 0; j < n; ++j) {
                ASSERT_EQ(m.at(i, j), m.at(j, i));
                ASSERT_EQ(m.at(i, j), a[i] == a[j]);
            }
        }
    });
}

TEST(ScarProperty, AttentionRowStochasticAndZeroOffMask) {
    for_each_case(gem::testing::kSeedScar + 2, [](std::mt19937_64& rng, int) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 24));
        const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        const Matrix q = random_matrix(rng, n, d, 2.0);
        const Matrix k = random_matrix(rng, n, d, 2.0);
        const Matrix v = random_matrix(rng, n, d);
        std::vector<std::size_t> a(n);
        for (auto& x : a) x = static_cast<std::size_t>(uniform_int(rng, 0, 4));
        const auto mask = build_mask(a);
        const auto r = masked_attention(q, k, v, mask);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                ASSERT_GE(r.weights(i, j), 0.0);
                if (!mask.at(i, j)) ASSERT_EQ(r.weights(i, j), 0.0);
                sum += r.weights(i, j);
            }
            ASSERT_NEAR(sum, 1.0, 1e-9);
        }
    });
}

TEST(ScarProperty, AllOnesMaskEqualsDenseAttention) {
    for_each_case(gem::testing::kSeedScar + 3, [](std::mt19937_64& rng, int) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        const auto d = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        const Matrix q = random_matrix(rng, n, d);
        const Matrix k = random_matrix(rng, n, d);
        const Matrix v = random_matrix(rng, n, d);
        const auto r = masked_attention(q, k, v, build_mask(std::vector<std::size_t>(n, 0)));
        const Matrix w = dense_weights(q, k);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) ASSERT_NEAR(r.weights(i, j), w(i, j), 1e-9);
            for (std::size_t c = 0; c < d; ++c) {
                double o = 0.0;
                for (std::size_t j = 0; j < n; ++j) o += w(i, j) * v(j, c);
                ASSERT_NEAR(r.outputs(i, c), o, 1e-9);
            }
        }
    });
}

TEST(ScarProperty, PermutationEquivariance) {
    for_each_case(gem::testing::kSeedScar + 4, [](std::mt19937_64& rng, int) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 12));
        const std::size_t d = 3;
        const Matrix q = random_matrix(rng, n, d);
        const Matrix k = random_matrix(rng, n, d);
        const Matrix v = random_matrix(rng, n, d);
        std::vector<std::size_t> a(n);
        for (auto& x : a) x = static_cast<std::size_t>(uniform_int(rng, 0, 3));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);

        Matrix pq(n, d), pk(n, d), pv(n, d);
        std::vector<std::size_t> pa(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                pq(i, c) = q(perm[i], c);
                pk(i, c) = k(perm[i], c);
                pv(i, c) = v(perm[i], c);
            }
            pa[i] = a[perm[i]];
        }
        const auto mask = build_mask(a);
        const auto pmask = build_mask(pa);
        const auto r = masked_attention(q, k, v, mask);
        const auto pr = masked_attention(pq, pk, pv, pmask);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ASSERT_EQ(pmask.at(i, j), mask.at(perm[i], perm[j]));
                ASSERT_NEAR(pr.weights(i, j), r.weights(perm[i], perm[j]), 1e-12);
            }
            for (std::size_t c = 0; c < d; ++c) ASSERT_NEAR(pr.outputs(i, c), r.outputs(perm[i], c), 1e-12);
        }
    });
}

TEST(ScarProperty, ClusteredOpsBelowDense) {
    for_each_case(gem::testing::kSeedScar + 5, [](std::mt19937_64& rng, int) {
        const auto n = static_cast<std::uint64_t>(uniform_int(rng, 3, 5000));
        const auto k = static_cast<std::uint64_t>(uniform_int(rng, 0, static_cast<int>(n) - 2));
        ASSERT_LT(scar_ops(n, k), dense_ops(n));
    });
}
