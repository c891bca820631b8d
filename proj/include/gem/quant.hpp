#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gem::quant {

/// Symmetric mid-tread uniform quantizer over [-range_max, range_max].
///
/// The grid has 2^bits - 1 levels k * step for k in [-max_index, max_index],
/// with step = 2 * range_max / (2^bits - 1). Zero is always a level.
struct Quantizer {
    int bits = 8;
    double range_max = 1.0;

    void validate() const;
    double step() const;
    std::int64_t max_index() const;
    std::int64_t level_count() const { return 2 * max_index() + 1; }

    /// Per-tensor calibration: range_max = max |v| (1.0 for an all-zero tensor).
    static Quantizer calibrated(std::span<const double> values, int bits);
};

/// Fake-quantizes a single value. The caller guarantees `q` is valid and `v` finite.
double quantize_value(double v, const Quantizer& q);

std::vector<double> uniform_quantize(std::span<const double> values, const Quantizer& q);

/// Sum of squared quantization residuals, sum (w - Q(w))^2.
double quant_penalty(std::span<const double> values, const Quantizer& q);

enum class LayerClass { domain_specific, router, general };

std::string_view to_string(LayerClass c);
LayerClass parse_layer_class(std::string_view name);

struct PrecisionEntry {
    LayerClass layer_class = LayerClass::general;
    std::int64_t param_count = 0;
    int bits = 8;

    bool operator==(const PrecisionEntry&) const = default;
};

/// Per-layer-class bit-width assignment. Defaults to 4-bit domain-specific,
/// 6-bit router and 8-bit general layers.
struct PrecisionMap {
    std::vector<PrecisionEntry> entries;

    static PrecisionMap hybrid_default();

    /// Bit-width of the first entry of the given class, or the hybrid default.
    int bits_for(LayerClass c) const;
    std::int64_t total_params() const;

    /// Throws if a bit-width is outside {4, 6, 8} (unless `allow_any_bits`),
    /// a count is negative, or `expected_total` disagrees with the sum.
    void validate(bool allow_any_bits = false,
                  std::optional<std::int64_t> expected_total = std::nullopt) const;

    bool operator==(const PrecisionMap&) const = default;
};

/// Storage size in bytes of `param_count` weights at `bits` each.
double memory_bytes(std::int64_t param_count, int bits);
double hybrid_memory(const PrecisionMap& pm);

struct QakpLossParts {
    double task_loss = 0.0;
    double quant_penalty = 0.0;
    double kd_loss = 0.0;
    double lambda_quant = 0.1;
    double lambda_kd = 0.5;
};

/// task + lambda_quant * quant_penalty + lambda_kd * kd.
double qakp_loss(const QakpLossParts& parts);

/// Analytic perturbation model: sigma^2 / bits^2 (unit proportionality constant).
double quant_noise_model(double sigma, int bits);

/// Lower bound on the generalization gap, c * CR / sqrt(capacity).
double gg_lower_bound(double c, double compression_ratio, std::uint64_t capacity);

/// Mean squared error of quantizing `sample_count` uniform draws on [-1, 1]
/// with a range-1 quantizer. Deterministic in `seed`.
double empirical_quant_mse(int bits, std::size_t sample_count, std::uint64_t seed);

/// The uniform-noise prediction step^2 / 12 for a range-1 quantizer.
double uniform_noise_mse(int bits);

}  // namespace gem::quant
