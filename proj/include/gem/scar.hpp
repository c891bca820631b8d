#pragma once

#include "gem/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gem::scar {

/// Result of k-means over token representations.
///
/// Points are clustered by direction: each point is scaled to unit length
/// before clustering (cosine distance ignores magnitude), and every centroid
/// of a non-empty cluster is the mean of its members' unit vectors.
struct ClusterPlan {
    std::size_t k = 0;
    Matrix centroids;                       // k x d
    std::vector<std::size_t> assignments;   // one per point, each in [0, k)
    double objective = 0.0;                 // sum of cosine distances to the assigned centroid
    std::size_t iterations_run = 0;
    std::vector<double> objective_history;  // objective after each assignment step
};

/// n x n co-membership mask. Symmetric with an all-ones diagonal.
class SparsityMask {
public:
    SparsityMask() = default;
    explicit SparsityMask(std::size_t n) : n_(n), bits_(n * n, 0) {}

    std::size_t size() const { return n_; }
    bool at(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool on) { bits_[i * n_ + j] = on ? 1 : 0; }

    std::size_t set_count() const;
    /// Fraction of set entries, set_count / n^2.
    double density() const;

    bool operator==(const SparsityMask&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct AttentionResult {
    Matrix weights;  // n x n, row-stochastic
    Matrix outputs;  // n x d_v
};

/// How masked-out positions enter the softmax.
enum class MaskMode {
    exclude,       // masked logits are -inf: zero weight outside the cluster
    literal_zero,  // elementwise M * (QK^T): masked logits become 0 and still get weight
};

/// 1 - a.b / (|a| |b|), in [0, 2].
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Lloyd-style spherical k-means with farthest-point seeding from a seeded first pick.
/// Ties in assignment go to the lowest cluster index; an empty cluster is reseeded
/// with the point farthest from its current centroid.
ClusterPlan kmeans_cosine(const Matrix& points, std::size_t k, std::size_t max_iters, std::uint64_t seed);

SparsityMask build_mask(std::span<const std::size_t> assignments);

AttentionResult masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const SparsityMask& mask,
                                 MaskMode mode = MaskMode::exclude);

/// Abstract operation counts: k*n + n for clustered attention, n^2 for dense.
std::uint64_t scar_ops(std::uint64_t n, std::uint64_t k);
std::uint64_t dense_ops(std::uint64_t n);
/// 1 - new/baseline.
double reduction(double baseline_ops, double new_ops);

/// Plain (P1) PBM rendering of the mask, one row per line.
std::string to_pbm(const SparsityMask& mask);

}  // namespace gem::scar
