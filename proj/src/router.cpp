#include "gem/router.hpp"

#include "gem/quant.hpp"
#include "gem/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace gem::router {

namespace {

constexpr double kNormEps = 1e-6;

void rms_normalize(std::vector<double>& x) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
    for (double& v : x) v *= inv;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

void quantize_in_place(Matrix& m, int bits) {
    const auto q = quant::Quantizer::calibrated(m.data(), bits);
    m.data() = quant::uniform_quantize(m.data(), q);
}

Matrix make_weight(std::size_t rows, std::size_t cols, std::mt19937_64& rng, int bits) {
    Matrix m(rows, cols);
    fill_normal(m, rng, 1.0 / std::sqrt(static_cast<double>(cols)));
    quantize_in_place(m, bits);
    return m;
}

}  // namespace

void RouterConfig::validate() const {
    // heads only enters the FLOPs formula: the encoder attends over a single
    // position, so hidden need not split evenly (the reference 256/12 does not).
    if (layers < 0) throw std::invalid_argument("router.layers: must be non-negative");
    if (hidden < 1) throw std::invalid_argument("router.hidden: must be positive");
    if (heads < 1) throw std::invalid_argument("router.heads: must be positive");
    if (domains < 2) throw std::invalid_argument("router.domains: must be at least 2");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("router.tau: must lie in (0, 1]");
    if (vocab_size < 1) throw std::invalid_argument("router.vocab_size: must be positive");
    if (weight_bits < 1 || weight_bits > 32) throw std::invalid_argument("router.weight_bits: invalid bit-width");
}

RouterEncoder::RouterEncoder(const RouterConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
    config_.validate();
    std::mt19937_64 rng(splitmix64(seed));
    const auto h = static_cast<std::size_t>(config_.hidden);
    const std::size_t ffn = 4 * h;
    const int bits = config_.weight_bits;
    layers_.reserve(static_cast<std::size_t>(config_.layers));
    for (int l = 0; l < config_.layers; ++l) {
        Layer layer;
        layer.wq = make_weight(h, h, rng, bits);
        layer.wk = make_weight(h, h, rng, bits);
        layer.wv = make_weight(h, h, rng, bits);
        layer.wo = make_weight(h, h, rng, bits);
        layer.w_up = make_weight(ffn, h, rng, bits);
        layer.w_down = make_weight(h, ffn, rng, bits);
        layers_.push_back(std::move(layer));
    }
    projection_ = make_weight(static_cast<std::size_t>(config_.domains), h, rng, bits);
}

std::int64_t RouterEncoder::param_count() const {
    std::int64_t total = static_cast<std::int64_t>(projection_.size());
    for (const auto& l : layers_)
        total += static_cast<std::int64_t>(l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size() +
                                           l.w_up.size() + l.w_down.size());
    return total;
}

std::vector<double> RouterEncoder::token_embedding(int token_id) const {
    if (token_id < 0 || token_id >= config_.vocab_size) throw std::invalid_argument("out-of-vocabulary");
    std::vector<double> e(static_cast<std::size_t>(config_.hidden));
    for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = hash_unit(seed_, static_cast<std::uint64_t>(token_id), i);
    rms_normalize(e);
    return e;
}

std::vector<double> RouterEncoder::encode(int token_id) const {
    auto x = token_embedding(token_id);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    for (const auto& layer : layers_) {
        // Self-attention over the token's own position: one key, so the
        // softmax weight is exp(s - s) = 1 and the value passes through.
        const auto q = matvec(layer.wq, x);
        const auto k = matvec(layer.wk, x);
        const double score = dot(q, k) * scale;
        const double weight = std::exp(score - score);
        auto v = matvec(layer.wv, x);
        for (double& vi : v) vi *= weight;
        const auto attn = matvec(layer.wo, v);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];
        rms_normalize(x);

        auto up = matvec(layer.w_up, x);
        for (double& u : up) u = gelu(u);
        const auto down = matvec(layer.w_down, up);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += down[i];
        rms_normalize(x);
    }
    return x;
}

std::vector<double> encode_token(int token_id, const RouterEncoder& encoder) { return encoder.encode(token_id); }

DomainProbabilities domain_probs(std::span<const double> embedding, const Matrix& projection) {
    if (projection.cols() != embedding.size()) throw std::invalid_argument("dimension mismatch");
    const auto logits = matvec(projection, embedding);
    return {softmax(logits)};
}

RoutingDecision route(const DomainProbabilities& probs, double tau, std::size_t token_index) {
    const std::size_t best = argmax(probs.probs);
    RoutingDecision d;
    d.max_prob = probs.probs[best];
    d.token_index = token_index;
    if (d.max_prob > tau) d.domain = best;
    return d;
}

std::vector<RoutingDecision> route_sequence(std::span<const int> tokens, const RouterEncoder& encoder,
                                            const RoutingLog& log) {
    if (tokens.empty()) throw std::invalid_argument("empty input");
    std::vector<RoutingDecision> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto e = encoder.encode(tokens[i]);
        out.push_back(route(domain_probs(e, encoder.projection()), encoder.config().tau, i));
        if (log) log(out.back());
    }
    return out;
}

double router_flops(const RouterConfig& config) {
    const double h = config.hidden;
    return static_cast<double>(config.layers) * h * h * static_cast<double>(config.heads) * 2.0;
}

double pruned_router_flops(double base_flops, double params_before, double params_after) {
    require(params_before > 0.0, "params_before must be positive");
    return base_flops * (params_after / params_before);
}

}  // namespace gem::router
