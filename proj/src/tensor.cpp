#include "gem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gem {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == m.cols(), "ragged matrix rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> matvec(const Matrix& w, std::span<const double> x) {
    require(w.cols() == x.size(), "dimension mismatch");
    std::vector<double> y(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) y[r] = dot(w.row(r), x);
    return y;
}

std::vector<double> matvec_transposed(const Matrix& w, std::span<const double> y) {
    require(w.rows() == y.size(), "dimension mismatch");
    std::vector<double> x(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto row = w.row(r);
        for (std::size_t c = 0; c < w.cols(); ++c) x[c] += row[c] * y[r];
    }
    return x;
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
    require(!logits.empty(), "softmax of empty vector");
    require(temperature > 0.0, "temperature must be positive");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v / temperature);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v / temperature - mx);
    const double log_z = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - log_z;
    return out;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    require(!logits.empty(), "softmax of empty vector");
    require(temperature > 0.0, "temperature must be positive");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v / temperature);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] / temperature - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::size_t argmax(std::span<const double> values) {
    require(!values.empty(), "argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace gem
