#include "gem/scar.hpp"

#include "gem/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace gem::scar {

namespace {

Matrix unit_rows(const Matrix& points) {
    Matrix out = points;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double nrm = norm(r);
        if (!std::isfinite(nrm)) throw std::invalid_argument("non-finite vector");
        if (!(nrm > 0.0)) throw std::invalid_argument("zero-norm vector");
        for (double& v : r) v /= nrm;
    }
    return out;
}

// Nearest centroid by cosine distance, ties to the lowest index.
std::size_t nearest(std::span<const double> x, const Matrix& centroids, double& best_dist) {
    std::size_t best = 0;
    best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = cosine_distance(x, centroids.row(c));
        if (d < best_dist) {
            best_dist = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

std::size_t SparsityMask::set_count() const {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
}

double SparsityMask::density() const {
    if (n_ == 0) return 0.0;
    return static_cast<double>(set_count()) / static_cast<double>(n_ * n_);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("zero-norm vector");
    const double cos = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    return 1.0 - cos;
}

ClusterPlan kmeans_cosine(const Matrix& points, std::size_t k, std::size_t max_iters, std::uint64_t seed) {
    const std::size_t n = points.rows();
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (k > n) throw std::invalid_argument("more clusters than points");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
    const Matrix x = unit_rows(points);
    const std::size_t d = x.cols();

    // Farthest-point seeding.
    ClusterPlan plan;
    plan.k = k;
    plan.centroids = Matrix(k, d);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(splitmix64(seed) % n);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy(x.row(pick).begin(), x.row(pick).end(), plan.centroids.row(c).begin());
        std::size_t next = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            min_dist[i] = std::min(min_dist[i], cosine_distance(x.row(i), plan.centroids.row(c)));
            if (min_dist[i] > far) {
                far = min_dist[i];
                next = i;
            }
        }
        pick = next;
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<double> dist(n, 0.0);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = iter == 0;
        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = nearest(x.row(i), plan.centroids, dist[i]);
            if (a != assign[i]) changed = true;
            assign[i] = a;
            objective += dist[i];
        }
        plan.objective_history.push_back(objective);
        plan.iterations_run = iter + 1;

        // Centroid update: mean of members. A zero mean leaves every direction
        // equally good, so the previous centroid is kept.
        Matrix sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto s = sums.row(assign[i]);
            const auto xi = x.row(i);
            for (std::size_t j = 0; j < d; ++j) s[j] += xi[j];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            auto s = sums.row(c);
            for (double& v : s) v /= static_cast<double>(counts[c]);
            if (norm(s) > 1e-12) std::copy(s.begin(), s.end(), plan.centroids.row(c).begin());
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far_i = 0;
            double far = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double di = cosine_distance(x.row(i), plan.centroids.row(assign[i]));
                if (di > far) {
                    far = di;
                    far_i = i;
                }
            }
            std::copy(x.row(far_i).begin(), x.row(far_i).end(), plan.centroids.row(c).begin());
        }
        if (!changed) break;
    }

    plan.assignments = std::move(assign);
    plan.objective = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        plan.objective += cosine_distance(x.row(i), plan.centroids.row(plan.assignments[i]));
    return plan;
}

SparsityMask build_mask(std::span<const std::size_t> assignments) {
    const std::size_t n = assignments.size();
    SparsityMask m(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m.set(i, j, assignments[i] == assignments[j]);
    return m;
}

AttentionResult masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const SparsityMask& mask,
                                 MaskMode mode) {
    const std::size_t n = q.rows();
    if (k.rows() != n || v.rows() != n || mask.size() != n || q.cols() != k.cols())
        throw std::invalid_argument("dimension mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));

    AttentionResult out{Matrix(n, n), Matrix(n, v.cols())};
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            const double s = dot(q.row(i), k.row(j));
            if (mask.at(i, j)) {
                logits[j] = s * scale;
            } else {
                logits[j] = mode == MaskMode::exclude ? -std::numeric_limits<double>::infinity() : 0.0;
            }
            mx = std::max(mx, logits[j]);
        }
        double sum = 0.0;
        auto w = out.weights.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            w[j] = std::isinf(logits[j]) ? 0.0 : std::exp(logits[j] - mx);
            sum += w[j];
        }
        auto o = out.outputs.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            w[j] /= sum;
            if (w[j] == 0.0) continue;
            const auto vj = v.row(j);
            for (std::size_t c = 0; c < o.size(); ++c) o[c] += w[j] * vj[c];
        }
    }
    return out;
}

std::uint64_t scar_ops(std::uint64_t n, std::uint64_t k) { return k * n + n; }

std::uint64_t dense_ops(std::uint64_t n) { return n * n; }

double reduction(double baseline_ops, double new_ops) {
    require(baseline_ops > 0.0, "baseline_ops must be positive");
    return 1.0 - new_ops / baseline_ops;
}

std::string to_pbm(const SparsityMask& mask) {
    std::ostringstream os;
    os << "P1\n" << mask.size() << ' ' << mask.size() << '\n';
    for (std::size_t i = 0; i < mask.size(); ++i) {
        for (std::size_t j = 0; j < mask.size(); ++j) {
            if (j) os << ' ';
            os << (mask.at(i, j) ? '1' : '0');
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace gem::scar
