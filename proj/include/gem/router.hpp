#pragma once

#include "gem/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace gem::router {

struct RouterConfig {
    int layers = 6;
    int hidden = 256;
    int heads = 12;
    int domains = 8;
    double tau = 0.7;
    int vocab_size = 1024;
    int weight_bits = 4;  // fake-quantization width of encoder and projection weights

    void validate() const;
};

/// Softmax output over the domains for one token.
struct DomainProbabilities {
    std::vector<double> probs;
};

/// A routing target: a domain pathway index, or the general pathway when empty.
struct RoutingDecision {
    std::optional<std::size_t> domain;
    double max_prob = 0.0;
    std::size_t token_index = 0;

    bool is_general() const { return !domain.has_value(); }
    bool operator==(const RoutingDecision&) const = default;
};

/// Per-token encoder standing in for the quantized BERT router: a transformer
/// stack of RouterConfig shape over hash-derived token embeddings, with every
/// weight matrix fake-quantized at construction. Immutable once built.
class RouterEncoder {
public:
    RouterEncoder(const RouterConfig& config, std::uint64_t seed);

    const RouterConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    /// Input embedding of a token before the encoder layers.
    std::vector<double> token_embedding(int token_id) const;
    std::vector<double> encode(int token_id) const;

    /// Domain projection W_r (domains x hidden), no bias.
    const Matrix& projection() const { return projection_; }

    /// Number of parameters actually constructed (layers + projection).
    std::int64_t param_count() const;

private:
    struct Layer {
        Matrix wq, wk, wv, wo;  // hidden x hidden
        Matrix w_up;            // ffn x hidden
        Matrix w_down;          // hidden x ffn
    };

    RouterConfig config_;
    std::uint64_t seed_;
    std::vector<Layer> layers_;
    Matrix projection_;
};

std::vector<double> encode_token(int token_id, const RouterEncoder& encoder);

/// softmax(projection * embedding).
DomainProbabilities domain_probs(std::span<const double> embedding, const Matrix& projection);

/// Argmax domain when its probability strictly exceeds tau, otherwise general.
RoutingDecision route(const DomainProbabilities& probs, double tau, std::size_t token_index = 0);

using RoutingLog = std::function<void(const RoutingDecision&)>;

/// Routes every token independently, in input order. `log`, when set, receives
/// each decision as it is made.
std::vector<RoutingDecision> route_sequence(std::span<const int> tokens, const RouterEncoder& encoder,
                                            const RoutingLog& log = {});

/// layers * hidden^2 * heads * 2.
double router_flops(const RouterConfig& config);
double pruned_router_flops(double base_flops, double params_before, double params_after);

}  // namespace gem::router
