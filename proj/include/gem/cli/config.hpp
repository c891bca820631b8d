#pragma once

#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/router.hpp"
#include "gem/serialization.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gem::cli {

struct RouteSettings {
    router::RouterConfig router;  // defaults to the reference 6 x 256 x 12 shape
    std::vector<int> tokens{101, 7, 512, 15, 999};
};

struct ScarSettings {
    int n = 128;
    int k = 16;
    int dim = 32;
    int source_clusters = 16;  // directions the synthetic embeddings are drawn around
    double noise = 0.3;
    int max_iters = 25;
    bool dump_mask = true;
    std::vector<std::vector<double>> embeddings;  // overrides the synthetic draw when non-empty
};

struct QuantizeSettings {
    std::vector<int> bits{1, 2, 3, 4, 5, 6, 7, 8};
    std::size_t samples = 100000;
    double sigma = 1.0;
    quant::PrecisionMap precision_map{{{quant::LayerClass::domain_specific, 40000000, 4},
                                       {quant::LayerClass::general, 20000000, 8},
                                       {quant::LayerClass::router, 20000000, 6}}};
};

struct CostSettings {
    std::string platform = "raspberry_pi_4";
    int layers = 12;
    int hidden = 128;
    std::int64_t params = 10500000;
    int bits = 4;
    std::int64_t tokens = 10;
    std::optional<double> latency_s;  // measured latency; derived from peak FLOPs when absent
    std::optional<double> power_w;    // measured power; platform typical power when absent
    bool include_router = false;
    router::RouterConfig router;
    int seq_len = 128;
    std::vector<int> scar_k{16, 8};
    std::vector<metrics::PlatformProfile> platforms;  // extra or overriding profiles
};

struct TrainSettings {
    model::TaskSpec task;
    model::TrainConfig train;
    bool save_checkpoint = false;
};

struct ForgetSettings {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::optional<model::TaskSpec> base_task;
    std::optional<model::TaskSpec> new_task;
    std::optional<model::TrainConfig> base_train;
    std::optional<model::TrainConfig> finetune_train;
};

/// Every command's parameters. A run is fully determined by this plus the seed.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    model::GemConfig model;
    RouteSettings route;
    ScarSettings scar;
    QuantizeSettings quantize;
    CostSettings cost;
    TrainSettings train;
    ForgetSettings forget;
    std::vector<metrics::MetricRecord> metric_records = default_metric_records();

    static std::vector<metrics::MetricRecord> default_metric_records();
    /// Propagates `seed` into the model and task generators.
    void apply_seed(std::uint64_t s);
    void validate() const;
};

Json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace gem::cli
