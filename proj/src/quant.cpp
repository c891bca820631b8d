#include "gem/quant.hpp"

#include "gem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gem::quant {

void Quantizer::validate() const {
    if (bits < 1 || bits > 32) throw std::invalid_argument("invalid bit-width");
    if (!(range_max > 0.0) || !std::isfinite(range_max))
        throw std::invalid_argument("invalid range_max");
}

double Quantizer::step() const {
    const double levels = std::ldexp(1.0, bits) - 1.0;
    return 2.0 * range_max / levels;
}

std::int64_t Quantizer::max_index() const { return (std::int64_t{1} << (bits - 1)) - 1; }

Quantizer Quantizer::calibrated(std::span<const double> values, int bits) {
    double r = 0.0;
    for (double v : values) r = std::max(r, std::abs(v));
    Quantizer q{bits, r > 0.0 ? r : 1.0};
    q.validate();
    return q;
}

double quantize_value(double v, const Quantizer& q) {
    const double step = q.step();
    const auto m = static_cast<double>(q.max_index());
    const double index = std::clamp(std::round(v / step), -m, m);
    return index * step;
}

std::vector<double> uniform_quantize(std::span<const double> values, const Quantizer& q) {
    q.validate();
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw std::invalid_argument("non-finite value");
        out[i] = quantize_value(values[i], q);
    }
    return out;
}

double quant_penalty(std::span<const double> values, const Quantizer& q) {
    q.validate();
    double s = 0.0;
    for (double v : values) {
        const double d = v - quantize_value(v, q);
        s += d * d;
    }
    return s;
}

std::string_view to_string(LayerClass c) {
    switch (c) {
        case LayerClass::domain_specific: return "domain_specific";
        case LayerClass::router: return "router";
        case LayerClass::general: return "general";
    }
    return "general";
}

LayerClass parse_layer_class(std::string_view name) {
    if (name == "domain_specific" || name == "domain") return LayerClass::domain_specific;
    if (name == "router") return LayerClass::router;
    if (name == "general") return LayerClass::general;
    throw std::invalid_argument("precision_map.class: unknown layer class '" + std::string(name) + "'");
}

PrecisionMap PrecisionMap::hybrid_default() {
    return {{{LayerClass::domain_specific, 0, 4}, {LayerClass::router, 0, 6}, {LayerClass::general, 0, 8}}};
}

int PrecisionMap::bits_for(LayerClass c) const {
    for (const auto& e : entries)
        if (e.layer_class == c) return e.bits;
    switch (c) {
        case LayerClass::domain_specific: return 4;
        case LayerClass::router: return 6;
        case LayerClass::general: return 8;
    }
    return 8;
}

std::int64_t PrecisionMap::total_params() const {
    std::int64_t total = 0;
    for (const auto& e : entries) total += e.param_count;
    return total;
}

void PrecisionMap::validate(bool allow_any_bits, std::optional<std::int64_t> expected_total) const {
    for (const auto& e : entries) {
        if (e.param_count < 0) throw std::invalid_argument("precision_map.params: must be non-negative");
        if (allow_any_bits) {
            if (e.bits < 1 || e.bits > 32) throw std::invalid_argument("precision_map.bits: invalid bit-width");
        } else if (e.bits != 4 && e.bits != 6 && e.bits != 8) {
            throw std::invalid_argument("precision_map.bits: must be one of 4, 6, 8");
        }
    }
    if (expected_total && total_params() != *expected_total)
        throw std::invalid_argument("precision_map.params: entries do not sum to the model total");
}

double memory_bytes(std::int64_t param_count, int bits) {
    require(param_count >= 0, "param_count must be non-negative");
    require(bits >= 1, "invalid bit-width");
    // Exact in double for any realistic model size (< 2^53 bits).
    return static_cast<double>(param_count * bits) / 8.0;
}

double hybrid_memory(const PrecisionMap& pm) {
    double total = 0.0;
    for (const auto& e : pm.entries) total += memory_bytes(e.param_count, e.bits);
    return total;
}

double qakp_loss(const QakpLossParts& parts) {
    if (parts.task_loss < 0.0 || parts.quant_penalty < 0.0 || parts.kd_loss < 0.0)
        throw std::invalid_argument("negative loss component");
    return parts.task_loss + parts.lambda_quant * parts.quant_penalty + parts.lambda_kd * parts.kd_loss;
}

double quant_noise_model(double sigma, int bits) {
    if (bits < 1) throw std::invalid_argument("invalid bit-width");
    const double b = bits;
    return sigma * sigma / (b * b);
}

double gg_lower_bound(double c, double compression_ratio, std::uint64_t capacity) {
    if (capacity == 0) throw std::invalid_argument("zero capacity");
    return c * compression_ratio / std::sqrt(static_cast<double>(capacity));
}

double empirical_quant_mse(int bits, std::size_t sample_count, std::uint64_t seed) {
    if (sample_count == 0) throw std::invalid_argument("sample_count must be positive");
    const Quantizer q{bits, 1.0};
    q.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const double v = dist(rng);
        const double d = v - quantize_value(v, q);
        sum += d * d;
    }
    return sum / static_cast<double>(sample_count);
}

double uniform_noise_mse(int bits) {
    const Quantizer q{bits, 1.0};
    q.validate();
    const double step = q.step();
    return step * step / 12.0;
}

}  // namespace gem::quant
