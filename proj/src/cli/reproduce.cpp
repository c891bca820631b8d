#include "gem/cli/reproduce.hpp"

#include "gem/cli/config.hpp"
#include "gem/metrics.hpp"
#include "gem/quant.hpp"
#include "gem/router.hpp"
#include "gem/scar.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace gem::cli {

namespace {

constexpr double kRelTol = 1e-6;
constexpr double kMB = 1e6;

class TableBuilder {
public:
    /// Relative tolerance kRelTol.
    void add(std::string label, double published, double computed) {
        add_abs(std::move(label), published, computed, std::max(kRelTol * std::abs(published), 1e-12));
    }

    void add_abs(std::string label, double published, double computed, double tol, bool known_inconsistent = false,
                 std::string note = {}) {
        ReproRow r;
        r.label = std::move(label);
        r.published_value = published;
        r.computed_value = computed;
        r.abs_diff = std::abs(computed - published);
        r.tolerance = tol;
        if (r.abs_diff <= tol) {
            r.status = ReproStatus::match;
        } else {
            r.status = known_inconsistent ? ReproStatus::noted_inconsistency : ReproStatus::mismatch;
        }
        r.note = std::move(note);
        rows_.push_back(std::move(r));
    }

    std::vector<ReproRow> take() { return std::move(rows_); }

private:
    std::vector<ReproRow> rows_;
};

double route_index(double p_top, std::size_t top_index, double tau) {
    // Remaining mass spread evenly over the other seven domains.
    router::DomainProbabilities probs{std::vector<double>(8, (1.0 - p_top) / 7.0)};
    probs.probs[top_index] = p_top;
    const auto d = router::route(probs, tau);
    return d.domain ? static_cast<double>(*d.domain) : -1.0;
}

}  // namespace

const char* to_string(ReproStatus s) {
    switch (s) {
        case ReproStatus::match: return "match";
        case ReproStatus::mismatch: return "mismatch";
        case ReproStatus::noted_inconsistency: return "noted_inconsistency";
    }
    return "mismatch";
}

std::vector<ReproRow> build_repro_table() {
    TableBuilder t;

    // Memory and quantization.
    const std::int64_t chatbot_params = 10'500'000;
    t.add("chatbot FP32 footprint (MB)", 42.0, quant::memory_bytes(chatbot_params, 32) / kMB);
    t.add("compression ratio 32-bit -> 4-bit", 8.0, 32.0 / 4.0);
    t.add_abs("chatbot savings display, left side (MB)", 336.0, quant::memory_bytes(chatbot_params, 32) / kMB,
              1e-6, true, "336 MB is 8x the FP32 size, not a stored footprint");
    t.add_abs("chatbot savings display, right side as 4-bit size (MB)", 42.0,
              quant::memory_bytes(chatbot_params, 4) / kMB, 1e-6, true,
              "42 MB is the FP32 size; 4-bit storage is 5.25 MB");
    const quant::PrecisionMap gem_map{{{quant::LayerClass::domain_specific, 40'000'000, 4},
                                       {quant::LayerClass::general, 20'000'000, 8},
                                       {quant::LayerClass::router, 20'000'000, 6}}};
    t.add("hybrid memory 40M@4 + 20M@8 + 20M@6 (MB)", 55.0, quant::hybrid_memory(gem_map) / kMB);
    t.add("composite loss, task 2 + quant 1 + kd 4", 4.1, quant::qakp_loss({2.0, 1.0, 4.0}));
    t.add("quantization perturbation ratio, 4-bit vs 8-bit", 4.0,
          quant::quant_noise_model(1.0, 4) / quant::quant_noise_model(1.0, 8));

    // Router.
    const router::RouterConfig reference_router;
    const double rflops = router::router_flops(reference_router);
    t.add("router FLOPs per token, 6 x 256^2 x 12 x 2", 9'437'184.0, rflops);
    t.add_abs("router MFLOPs as displayed", 9.4, rflops / kMB, 0.05);
    t.add_abs("pruned router MFLOPs, 7.4M -> 5M params", 6.35,
              router::pruned_router_flops(9.4e6, 7.4e6, 5e6) / kMB, 0.01);
    t.add_abs("pruned router FLOPs reduction", 0.32, 1.0 - router::pruned_router_flops(1.0, 7.4e6, 5e6), 0.005);
    {
        const router::RouterEncoder encoder(reference_router, 42);
        t.add_abs("router parameters, reference shape (M)", 7.4, static_cast<double>(encoder.param_count()) / kMB,
                  0.05, true, "stated count is not reachable from the stated shape without embeddings");
    }
    t.add_abs("route P(healthcare)=0.85, tau=0.7 -> domain 0", 0.0, route_index(0.85, 0, 0.7), 0.0);
    t.add_abs("route max P=0.62, tau=0.7 -> general (-1)", -1.0, route_index(0.62, 0, 0.7), 0.0);

    // Clustered attention.
    t.add("dense attention ops, n=128", 16'384.0, static_cast<double>(scar::dense_ops(128)));
    t.add("clustered attention ops, n=128, k=16", 2'176.0, static_cast<double>(scar::scar_ops(128, 16)));
    t.add("clustered reduction vs dense, k=16", 0.8671875,
          scar::reduction(static_cast<double>(scar::dense_ops(128)), static_cast<double>(scar::scar_ops(128, 16))));
    t.add_abs("clustered reduction vs dense as displayed (%)", 86.7,
              100.0 * scar::reduction(16384.0, 2176.0), 0.05);
    t.add("clustered attention ops, n=128, k=8", 1'152.0, static_cast<double>(scar::scar_ops(128, 8)));
    t.add_abs("k=8 reduction vs k=16", 0.4706,
              scar::reduction(static_cast<double>(scar::scar_ops(128, 16)),
                              static_cast<double>(scar::scar_ops(128, 8))),
              5e-5);

    // Metrics.
    t.add_abs("GG healthcare chatbot (0.95, 0.40)", 0.578947368, metrics::generalization_gap(0.95, 0.40), 1e-9);
    t.add_abs("GG legal model (0.90, 0.62)", 0.311111111, metrics::generalization_gap(0.90, 0.62), 1e-9);
    t.add_abs("CDTR finance -> legal (0.60 / 0.90)", 0.666666667, metrics::cdtr(0.60, 0.90), 1e-9);
    t.add_abs("CDTR healthcare -> general (0.40 / 0.95)", 0.421052632, metrics::cdtr(0.40, 0.95), 1e-9);
    {
        metrics::MetricRecord finance{"Finance Model", "Finance", 0.90, {{"mean", 0.30}}, ""};
        t.add_abs("DSI finance (0.90 / 0.30)", 3.0, metrics::dsi(finance), 1e-9);
        metrics::MetricRecord chatbot{"Healthcare Chatbot", "Health", 0.95, {{"a", 0.40}, {"b", 0.45}, {"c", 0.50}}, ""};
        t.add_abs("DSI chatbot (0.95 / mean 0.40, 0.45, 0.50)", 2.111111111, metrics::dsi(chatbot), 1e-9);
    }
    {
        const auto rows = metrics::compute_all(ExperimentConfig::default_metric_records());
        const double table_gg[] = {0.5789, 0.6667, 0.3111};
        const double table_cdtr[] = {0.4211, 0.6667, 0.6889};
        const double table_dsi[] = {2.1111, 3.0, 1.4516};
        const double table_out[] = {0.45, 0.30, 0.62};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string name = rows[i].model;
            t.add_abs("metric table out-domain avg, " + name, table_out[i], rows[i].out_domain_avg, 5e-5);
            // The chatbot's GG uses its 0.40 general score, not the 0.45 mean the row lists.
            t.add_abs("metric table GG, " + name, table_gg[i], rows[i].gg, 5e-5, i == 0,
                      i == 0 ? "row GG uses the 0.40 general score; the listed mean 0.45 gives 0.5263" : "");
            t.add_abs("metric table CDTR, " + name, table_cdtr[i], rows[i].cdtr, 5e-5);
            t.add_abs("metric table DSI, " + name, table_dsi[i], rows[i].dsi, i == 2 ? 1e-4 : 5e-5);
        }
        t.add_abs("chatbot out-of-domain F1 vs listed out-domain mean", 0.40, rows[0].out_domain_avg, 1e-9, true,
                  "single out-of-domain F1 0.40 vs three-domain mean 0.45");
    }

    // Energy and compute.
    const double e_in = metrics::energy_per_token(2.5, 0.050);
    const double e_out = metrics::energy_per_token(2.7, 0.070);
    t.add("energy per token in-domain (J)", 0.125, e_in);
    t.add("energy per token out-of-domain (J)", 0.189, e_out);
    t.add_abs("energy change, absolute (J)", 0.064, e_out - e_in, 1e-9);
    t.add_abs("energy change, relative (%)", 51.2, 100.0 * (e_out - e_in) / e_in, 1e-6);
    t.add_abs("latency change, relative (%)", 40.0, 100.0 * (0.070 - 0.050) / 0.050, 1e-6);
    t.add_abs("power change, relative (%)", 8.0, 100.0 * (2.7 - 2.5) / 2.5, 1e-6);
    t.add("FLOPs per token, 12 layers x 128^2 x 2", 393'216.0, metrics::flops_per_token(12, 128));
    t.add("ALU energy ratio 4-bit vs 8-bit", 0.25, metrics::energy_ratio(4, 8));
    const auto session = metrics::session_cost(10, 0.0824, 0.23);
    t.add("session latency, 10 tokens x 82.4 ms (s)", 0.824, session.total_latency_s);
    t.add("session energy, 10 tokens x 0.23 J (J)", 2.3, session.total_energy_j);
    return t.take();
}

bool has_unexpected_mismatch(const std::vector<ReproRow>& rows) {
    for (const auto& r : rows)
        if (r.status == ReproStatus::mismatch) return true;
    return false;
}

std::string format_repro_table(const std::vector<ReproRow>& rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "label" << "  " << std::right << std::setw(16)
       << "published" << "  " << std::setw(16) << "computed" << "  " << std::setw(11) << "abs_diff" << "  "
       << "status\n";
    os << std::string(width + 2 + 16 + 2 + 16 + 2 + 11 + 2 + 19, '-') << '\n';
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.label << "  " << std::right
           << std::setw(16) << std::setprecision(10) << r.published_value << "  " << std::setw(16) << r.computed_value
           << "  " << std::setw(11) << std::setprecision(3) << r.abs_diff << "  " << to_string(r.status) << '\n';
        ++counts[static_cast<int>(r.status)];
    }
    os << '\n'
       << rows.size() << " rows: " << counts[0] << " match, " << counts[1] << " mismatch, " << counts[2]
       << " noted_inconsistency\n";
    return os.str();
}

std::string repro_csv(const std::vector<ReproRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "label,published_value,computed_value,abs_diff,tolerance,status,note\n";
    for (const auto& r : rows)
        os << '"' << r.label << "\"," << r.published_value << ',' << r.computed_value << ',' << r.abs_diff << ','
           << r.tolerance << ',' << to_string(r.status) << ",\"" << r.note << "\"\n";
    return os.str();
}

}  // namespace gem::cli
