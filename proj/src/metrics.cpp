#include "gem/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace gem::metrics {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void MetricRecord::validate() const {
    if (!in_unit(in_domain_perf)) throw std::invalid_argument("in_domain_perf: must lie in [0, 1]");
    if (out_domain_perfs.empty()) throw std::invalid_argument("out_domain_perfs: at least one entry required");
    for (const auto& [name, v] : out_domain_perfs)
        if (!in_unit(v)) throw std::invalid_argument("out_domain_perfs." + name + ": must lie in [0, 1]");
    if (!pair_domain.empty() && !out_domain_perfs.contains(pair_domain))
        throw std::invalid_argument("pair_domain: '" + pair_domain + "' has no out-of-domain score");
}

double MetricRecord::out_domain_mean() const {
    if (out_domain_perfs.empty()) throw std::invalid_argument("out_domain_perfs: at least one entry required");
    double s = 0.0;
    for (const auto& [_, v] : out_domain_perfs) s += v;
    return s / static_cast<double>(out_domain_perfs.size());
}

void PlatformProfile::validate() const {
    if (!(ram_bytes > 0.0)) throw std::invalid_argument("platform.ram_bytes: must be positive");
    if (!(peak_flops > 0.0)) throw std::invalid_argument("platform.peak_flops: must be positive");
    if (!(typical_power_watts > 0.0)) throw std::invalid_argument("platform.typical_power_watts: must be positive");
}

const std::vector<PlatformProfile>& builtin_platforms() {
    // Typical power is the per-device draw reported alongside the domain results.
    static const std::vector<PlatformProfile> platforms = {
        {"raspberry_pi_4", 4e9, 12e9, 2.7},
        {"pixel_6", 8e9, 20e12, 2.8},
        {"iphone_13", 6e9, 15.8e12, 2.9},
        {"custom_npu", 8e9, 20e12, 2.6},
    };
    return platforms;
}

const PlatformProfile& find_platform(const std::string& name) {
    for (const auto& p : builtin_platforms())
        if (p.name == name) return p;
    throw std::invalid_argument("platform: unknown platform '" + name + "'");
}

double generalization_gap(double in_perf, double out_perf) {
    if (in_perf == 0.0) throw std::invalid_argument("undefined gap");
    return (in_perf - out_perf) / in_perf;
}

double cdtr(double perf_target, double perf_source) {
    if (perf_source == 0.0) throw std::invalid_argument("undefined transfer ratio");
    return perf_target / perf_source;
}

double dsi(const MetricRecord& record) {
    const double mean = record.out_domain_mean();
    if (mean == 0.0) throw std::invalid_argument("undefined specialization index");
    return record.in_domain_perf / mean;
}

double energy_per_token(double power_w, double latency_s) { return power_w * latency_s; }

double flops_per_token(std::int64_t layers, std::int64_t hidden) {
    const double h = static_cast<double>(hidden);
    return static_cast<double>(layers) * h * h * 2.0;
}

double energy_ratio(int bits_a, int bits_b) {
    if (bits_b == 0) throw std::invalid_argument("invalid bit-width");
    const double r = static_cast<double>(bits_a) / static_cast<double>(bits_b);
    return r * r;
}

SessionCost session_cost(std::int64_t tokens, double latency_s_per_token, double energy_j_per_token) {
    if (tokens < 0) throw std::invalid_argument("tokens: must be non-negative");
    const double t = static_cast<double>(tokens);
    return {t * latency_s_per_token, t * energy_j_per_token};
}

std::vector<MetricRow> compute_all(const std::vector<MetricRecord>& records) {
    std::vector<MetricRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records) {
        r.validate();
        const std::string& pair = r.pair_domain.empty() ? r.out_domain_perfs.begin()->first : r.pair_domain;
        MetricRow row;
        row.model = r.model;
        row.in_domain = r.in_domain_perf;
        row.out_domain_avg = r.out_domain_mean();
        row.gg = generalization_gap(r.in_domain_perf, row.out_domain_avg);
        row.cdtr = cdtr(r.out_domain_perfs.at(pair), r.in_domain_perf);
        row.dsi = dsi(r);
        row.domain_pair = r.source_domain + "-" + pair;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string to_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "model,in_domain,out_domain_avg,gg,cdtr,dsi,domain_pair\n";
    for (const auto& r : rows)
        os << r.model << ',' << r.in_domain << ',' << r.out_domain_avg << ',' << r.gg << ',' << r.cdtr << ','
           << r.dsi << ',' << r.domain_pair << '\n';
    return os.str();
}

}  // namespace gem::metrics
