#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gem {

/// Dense row-major matrix of doubles. Rows are contiguous, so `row(i)` is a span.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// y = W x, W is (out x in).
std::vector<double> matvec(const Matrix& w, std::span<const double> x);
/// x^T W, i.e. the backward of matvec w.r.t. its input.
std::vector<double> matvec_transposed(const Matrix& w, std::span<const double> y);

/// Numerically stable softmax; `temperature` divides the logits.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

inline void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

/// Runs `fn`; an invalid_argument whose message starts with `prefix` + "." is
/// rethrown with that prefix replaced by `path`, so nested validation errors
/// name the field where it actually lives in a config.
template <typename Fn>
void with_field_path(const std::string& prefix, const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        if (msg.compare(0, prefix.size() + 1, prefix + ".") == 0)
            throw std::invalid_argument(path + msg.substr(prefix.size()));
        throw;
    }
}

}  // namespace gem
