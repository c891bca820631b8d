#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gem::metrics {

/// In-domain score and per-domain out-of-domain scores for one model.
struct MetricRecord {
    std::string model;
    std::string source_domain;
    double in_domain_perf = 0.0;
    std::map<std::string, double> out_domain_perfs;
    /// Out-of-domain entry used for the pairwise transfer ratio; when empty,
    /// the first entry in key order.
    std::string pair_domain;

    void validate() const;
    double out_domain_mean() const;
};

struct PlatformProfile {
    std::string name;
    double ram_bytes = 0.0;
    double peak_flops = 0.0;
    double typical_power_watts = 0.0;

    void validate() const;
};

/// Built-in device constants: raspberry_pi_4, pixel_6, iphone_13, custom_npu.
const std::vector<PlatformProfile>& builtin_platforms();
const PlatformProfile& find_platform(const std::string& name);

struct CostReport {
    double flops_per_token = 0.0;
    double latency_s_per_token = 0.0;
    double power_w = 0.0;
    double energy_j_per_token = 0.0;
    double memory_bytes = 0.0;
};

struct SessionCost {
    double total_latency_s = 0.0;
    double total_energy_j = 0.0;
};

/// (in - out) / in.
double generalization_gap(double in_perf, double out_perf);
/// target / source.
double cdtr(double perf_target, double perf_source);
/// in-domain / mean out-of-domain.
double dsi(const MetricRecord& record);

double energy_per_token(double power_w, double latency_s);
/// layers * hidden^2 * 2.
double flops_per_token(std::int64_t layers, std::int64_t hidden);
/// (bits_a / bits_b)^2.
double energy_ratio(int bits_a, int bits_b);
SessionCost session_cost(std::int64_t tokens, double latency_s_per_token, double energy_j_per_token);

struct MetricRow {
    std::string model;
    double in_domain = 0.0;
    double out_domain_avg = 0.0;
    double gg = 0.0;
    double cdtr = 0.0;
    double dsi = 0.0;
    std::string domain_pair;  // "source-target"
};

/// One row per record, in table column order. GG is taken against the
/// out-of-domain mean; CDTR against the record's pair domain.
std::vector<MetricRow> compute_all(const std::vector<MetricRecord>& records);

std::string to_csv(const std::vector<MetricRow>& rows);

}  // namespace gem::metrics
