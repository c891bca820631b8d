#include "gem/model.hpp"

#include "gem/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace gem::model {

using quant::LayerClass;

// ---------------------------------------------------------------------------
// Configuration

const char* to_string(ScarSource s) {
    return s == ScarSource::hidden_states ? "hidden_states" : "input_embeddings";
}

ScarSource parse_scar_source(const std::string& s) {
    if (s == "hidden_states") return ScarSource::hidden_states;
    if (s == "input_embeddings") return ScarSource::input_embeddings;
    throw std::invalid_argument("expected 'hidden_states' or 'input_embeddings'");
}

router::RouterConfig GemConfig::effective_router() const {
    router::RouterConfig r = router;
    r.domains = domains;
    r.tau = tau;
    r.vocab_size = vocab_size;
    r.weight_bits = precision_map.bits_for(LayerClass::router);
    return r;
}

void GemConfig::validate() const {
    if (vocab_size < 1) throw std::invalid_argument("model.vocab_size: must be positive");
    if (embed_dim < 1) throw std::invalid_argument("model.embed_dim: must be positive");
    if (ffn_dim < 1) throw std::invalid_argument("model.ffn_dim: must be positive");
    if (pathway_layers < 0) throw std::invalid_argument("model.pathway_layers: must be non-negative");
    if (domains < 2) throw std::invalid_argument("model.domains: must be at least 2");
    if (num_labels < 2) throw std::invalid_argument("model.num_labels: must be at least 2");
    if (max_seq_len < 1) throw std::invalid_argument("model.max_seq_len: must be positive");
    if (scar_k < 1 || scar_k > max_seq_len)
        throw std::invalid_argument("model.scar_k: must lie in [1, max_seq_len]");
    if (scar_iters < 1) throw std::invalid_argument("model.scar_iters: must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("model.tau: must lie in (0, 1]");
    with_field_path("precision_map", "model.precision_map", [&] { precision_map.validate(true); });
    with_field_path("router", "model.router", [&] { effective_router().validate(); });
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("train.learning_rate: must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be at least 1");
    if (epochs < 0) throw std::invalid_argument("train.epochs: must be non-negative");
    if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay: must be non-negative");
    if (!(kd_temperature > 0.0)) throw std::invalid_argument("train.kd_temperature: must be positive");
    if (lambda_quant < 0.0) throw std::invalid_argument("train.lambda_quant: must be non-negative");
    if (lambda_kd < 0.0) throw std::invalid_argument("train.lambda_kd: must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("train.beta1: must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("train.beta2: must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Synthetic tasks

void TaskSpec::validate() const {
    require(domains >= 1, "task.domains: must be positive");
    require(domain_id >= 0 && domain_id < domains, "task.domain_id: out of range");
    require(label_offset >= 0, "task.label_offset: must be non-negative");
    require(label_count >= 1 && 2 * label_count <= tokens_per_domain,
            "task.label_count: needs two signature tokens per label");
    require(seq_len >= 1, "task.seq_len: must be positive");
    require(sample_count >= 0, "task.sample_count: must be non-negative");
    require(signal > 0.0 && signal <= 1.0, "task.signal: must lie in (0, 1]");
    require(vocab_size - domains * tokens_per_domain >= 1, "task.vocab_size: no room for background tokens");
}

SyntheticTask make_synthetic_task(const TaskSpec& spec) {
    spec.validate();
    const int background_start = spec.domains * spec.tokens_per_domain;
    const int background = spec.vocab_size - background_start;

    SyntheticTask task;
    task.domain_id = spec.domain_id;
    task.generator_seed = spec.seed;
    std::mt19937_64 rng(splitmix64(spec.seed) ^ static_cast<std::uint64_t>(spec.domain_id));
    std::uniform_int_distribution<int> label_dist(0, spec.label_count - 1);
    std::uniform_int_distribution<int> bg_dist(0, background - 1);
    std::uniform_int_distribution<int> pos_dist(0, spec.seq_len - 1);
    std::bernoulli_distribution is_signal(spec.signal);
    std::bernoulli_distribution coin(0.5);

    const int region = spec.domain_id * spec.tokens_per_domain;
    task.samples.reserve(static_cast<std::size_t>(spec.sample_count));
    for (int s = 0; s < spec.sample_count; ++s) {
        const int c = label_dist(rng);
        auto signature = [&] { return region + 2 * c + (coin(rng) ? 1 : 0); };
        Sample sample;
        sample.label = spec.label_offset + c;
        bool any = false;
        for (int p = 0; p < spec.seq_len; ++p) {
            if (is_signal(rng)) {
                sample.tokens.push_back(signature());
                any = true;
            } else {
                sample.tokens.push_back(background_start + bg_dist(rng));
            }
        }
        if (!any) sample.tokens[static_cast<std::size_t>(pos_dist(rng))] = signature();
        task.samples.push_back(std::move(sample));
    }
    return task;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double stddev) {
    Matrix m(rows, cols);
    fill_normal(m, rng, stddev);
    return m;
}

}  // namespace

std::vector<Parameters::TensorRef> Parameters::tensors() {
    std::vector<TensorRef> out;
    out.push_back({"embedding", LayerClass::general, &embedding});
    const std::size_t general = pathways.empty() ? 0 : pathways.size() - 1;
    for (std::size_t p = 0; p < pathways.size(); ++p) {
        const LayerClass cls = p == general ? LayerClass::general : LayerClass::domain_specific;
        const std::string prefix = p == general ? "general" : "domain" + std::to_string(p);
        for (std::size_t l = 0; l < pathways[p].layers.size(); ++l) {
            auto& L = pathways[p].layers[l];
            const std::string lp = prefix + ".layer" + std::to_string(l) + ".";
            out.push_back({lp + "wq", cls, &L.wq});
            out.push_back({lp + "wk", cls, &L.wk});
            out.push_back({lp + "wv", cls, &L.wv});
            out.push_back({lp + "wo", cls, &L.wo});
            out.push_back({lp + "w_up", cls, &L.w_up});
            out.push_back({lp + "b_up", cls, &L.b_up});
            out.push_back({lp + "w_down", cls, &L.w_down});
            out.push_back({lp + "b_down", cls, &L.b_down});
        }
    }
    out.push_back({"head.w", LayerClass::general, &head_w});
    out.push_back({"head.b", LayerClass::general, &head_b});
    return out;
}

std::vector<Parameters::ConstTensorRef> Parameters::tensors() const {
    auto refs = const_cast<Parameters*>(this)->tensors();
    std::vector<ConstTensorRef> out;
    out.reserve(refs.size());
    for (auto& r : refs) out.push_back({std::move(r.name), r.layer_class, r.tensor});
    return out;
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    for (auto& t : z.tensors()) std::fill(t.tensor->data().begin(), t.tensor->data().end(), 0.0);
    return z;
}

std::int64_t Parameters::count() const {
    std::int64_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::int64_t>(t.tensor->size());
    return n;
}

bool Parameters::operator==(const Parameters& other) const {
    const auto a = tensors();
    const auto b = other.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(*a[i].tensor == *b[i].tensor)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Model

namespace {

Parameters init_params(const GemConfig& c) {
    std::mt19937_64 rng(splitmix64(c.seed ^ 0x6a09e667f3bcc908ULL));
    const auto d = static_cast<std::size_t>(c.embed_dim);
    const auto f = static_cast<std::size_t>(c.ffn_dim);
    const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double sd_f = 1.0 / std::sqrt(static_cast<double>(f));

    Parameters p;
    p.embedding = normal_matrix(static_cast<std::size_t>(c.vocab_size), d, rng, 1.0);
    p.pathways.resize(static_cast<std::size_t>(c.domains) + 1);
    for (auto& path : p.pathways) {
        for (int l = 0; l < c.pathway_layers; ++l) {
            TransformerLayer L;
            L.wq = normal_matrix(d, d, rng, sd_d);
            L.wk = normal_matrix(d, d, rng, sd_d);
            L.wv = normal_matrix(d, d, rng, sd_d);
            L.wo = normal_matrix(d, d, rng, 0.5 * sd_d);
            L.w_up = normal_matrix(f, d, rng, sd_d);
            L.b_up = Matrix(1, f);
            L.w_down = normal_matrix(d, f, rng, 0.5 * sd_f);
            L.b_down = Matrix(1, d);
            path.layers.push_back(std::move(L));
        }
    }
    p.head_w = normal_matrix(static_cast<std::size_t>(c.num_labels), d, rng, sd_d);
    p.head_b = Matrix(1, static_cast<std::size_t>(c.num_labels));
    return p;
}

void check_shapes(const GemConfig& c, const Parameters& p) {
    const auto d = static_cast<std::size_t>(c.embed_dim);
    const auto f = static_cast<std::size_t>(c.ffn_dim);
    auto expect = [](const Matrix& m, std::size_t r, std::size_t cols, const char* what) {
        if (m.rows() != r || m.cols() != cols)
            throw std::invalid_argument(std::string("checkpoint: tensor shape mismatch for ") + what);
    };
    expect(p.embedding, static_cast<std::size_t>(c.vocab_size), d, "embedding");
    if (p.pathways.size() != static_cast<std::size_t>(c.domains) + 1)
        throw std::invalid_argument("checkpoint: pathway count mismatch");
    for (const auto& path : p.pathways) {
        if (path.layers.size() != static_cast<std::size_t>(c.pathway_layers))
            throw std::invalid_argument("checkpoint: layer count mismatch");
        for (const auto& L : path.layers) {
            expect(L.wq, d, d, "wq");
            expect(L.wk, d, d, "wk");
            expect(L.wv, d, d, "wv");
            expect(L.wo, d, d, "wo");
            expect(L.w_up, f, d, "w_up");
            expect(L.b_up, 1, f, "b_up");
            expect(L.w_down, d, f, "w_down");
            expect(L.b_down, 1, d, "b_down");
        }
    }
    expect(p.head_w, static_cast<std::size_t>(c.num_labels), d, "head.w");
    expect(p.head_b, 1, static_cast<std::size_t>(c.num_labels), "head.b");
}

}  // namespace

GemModel::GemModel(const GemConfig& config) : GemModel(config, init_params(config)) {}

GemModel::GemModel(const GemConfig& config, Parameters params) : config_(config), params_(std::move(params)) {
    config_.validate();
    check_shapes(config_, params_);
    router_ = std::make_shared<const router::RouterEncoder>(config_.effective_router(), config_.seed);
}

std::vector<std::size_t> GemModel::pathways_for(std::span<const int> tokens,
                                                std::vector<router::RoutingDecision>* decisions) const {
    const auto general = static_cast<std::size_t>(config_.domains);
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    auto ds = router::route_sequence(tokens, *router_);
    for (const auto& d : ds) out.push_back(d.domain.value_or(general));
    if (decisions) *decisions = std::move(ds);
    return out;
}

Parameters GemModel::effective_params() const {
    Parameters eff = params_;
    if (!config_.quantize) return eff;
    for (auto& t : eff.tensors()) {
        const int bits = config_.precision_map.bits_for(t.layer_class);
        const auto q = quant::Quantizer::calibrated(t.tensor->data(), bits);
        t.tensor->data() = quant::uniform_quantize(t.tensor->data(), q);
    }
    return eff;
}

void GemModel::tie_pathways() {
    const auto& general = params_.pathways.back();
    for (std::size_t p = 0; p + 1 < params_.pathways.size(); ++p) params_.pathways[p] = general;
}

quant::PrecisionMap GemModel::precision_accounting() const {
    std::int64_t domain = 0;
    std::int64_t general = 0;
    for (const auto& t : params_.tensors()) {
        const auto n = static_cast<std::int64_t>(t.tensor->size());
        (t.layer_class == LayerClass::domain_specific ? domain : general) += n;
    }
    const auto& pm = config_.precision_map;
    return {{{LayerClass::domain_specific, domain, pm.bits_for(LayerClass::domain_specific)},
             {LayerClass::router, router_->param_count(), pm.bits_for(LayerClass::router)},
             {LayerClass::general, general, pm.bits_for(LayerClass::general)}}};
}

// ---------------------------------------------------------------------------
// Forward / backward over one sequence

namespace {

struct LayerCache {
    scar::SparsityMask mask;
    Matrix x;  // layer input, n x d
    Matrix q, k, v;
    Matrix a;  // n x n attention weights
    Matrix c;  // attention context, n x d
    Matrix h;  // after attention residual
    Matrix g;  // tanh activations, n x f
};

struct SequenceCache {
    std::vector<LayerCache> layers;
    Matrix x_final;  // n x d
};

struct SequenceOutput {
    Matrix token_logits;  // n x labels
    std::vector<double> sequence_logits;
};

void add_outer(Matrix& grad, std::span<const double> dy, std::span<const double> x) {
    for (std::size_t r = 0; r < dy.size(); ++r) {
        if (dy[r] == 0.0) continue;
        auto g = grad.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) g[c] += dy[r] * x[c];
    }
}

void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

scar::ClusterPlan cluster(const GemConfig& config, const Matrix& points) {
    // Hidden states that overflowed can only come from a blown-up update.
    for (std::size_t i = 0; i < points.rows(); ++i)
        if (!std::isfinite(norm(points.row(i)))) throw DivergenceError();
    const std::size_t k = std::min(static_cast<std::size_t>(config.scar_k), points.rows());
    return scar::kmeans_cosine(points, k, static_cast<std::size_t>(config.scar_iters), config.seed);
}

/// `plans` receives one cluster plan per layer; when `fixed` is given its
/// plans are used instead of clustering.
SequenceOutput run_sequence(const GemConfig& config, const Parameters& eff, std::span<const int> tokens,
                            std::span<const std::size_t> pathway, const LayerPlans* fixed, LayerPlans& plans,
                            SequenceCache* cache) {
    const std::size_t n = tokens.size();
    const std::size_t d = eff.embedding.cols();

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = eff.embedding.row(static_cast<std::size_t>(tokens[i]));
        std::copy(row.begin(), row.end(), x.row(i).begin());
    }
    if (cache) cache->layers.clear();
    if (fixed && fixed->size() != static_cast<std::size_t>(config.pathway_layers))
        throw std::invalid_argument("cluster plans do not match layers");
    plans.clear();

    for (int l = 0; l < config.pathway_layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        if (fixed) {
            if ((*fixed)[li].assignments.size() != n) throw std::invalid_argument("cluster plan does not match sequence");
            plans.push_back((*fixed)[li]);
        } else if (l == 0 || config.scar_source == ScarSource::hidden_states) {
            plans.push_back(cluster(config, x));
        } else {
            plans.push_back(plans.front());
        }
        LayerCache lc;
        lc.mask = scar::build_mask(plans.back().assignments);
        const auto& mask = lc.mask;
        lc.x = x;
        lc.q = Matrix(n, d);
        lc.k = Matrix(n, d);
        lc.v = Matrix(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& L = eff.pathways[pathway[i]].layers[li];
            const auto q = matvec(L.wq, x.row(i));
            const auto k = matvec(L.wk, x.row(i));
            const auto v = matvec(L.wv, x.row(i));
            std::copy(q.begin(), q.end(), lc.q.row(i).begin());
            std::copy(k.begin(), k.end(), lc.k.row(i).begin());
            std::copy(v.begin(), v.end(), lc.v.row(i).begin());
        }
        auto att = scar::masked_attention(lc.q, lc.k, lc.v, mask, config.mask_mode);
        lc.a = std::move(att.weights);
        lc.c = std::move(att.outputs);

        lc.h = Matrix(n, d);
        lc.g = Matrix(n, eff.pathways[0].layers[li].w_up.rows());
        Matrix next(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& L = eff.pathways[pathway[i]].layers[li];
            const auto o = matvec(L.wo, lc.c.row(i));
            auto h = lc.h.row(i);
            for (std::size_t j = 0; j < d; ++j) h[j] = x(i, j) + o[j];
            auto u = matvec(L.w_up, h);
            auto g = lc.g.row(i);
            for (std::size_t j = 0; j < u.size(); ++j) g[j] = std::tanh(u[j] + L.b_up(0, j));
            const auto f = matvec(L.w_down, g);
            auto out = next.row(i);
            for (std::size_t j = 0; j < d; ++j) out[j] = h[j] + f[j] + L.b_down(0, j);
        }
        x = std::move(next);
        if (cache) cache->layers.push_back(std::move(lc));
    }

    const std::size_t labels = eff.head_w.rows();
    SequenceOutput out{Matrix(n, labels), std::vector<double>(labels, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = matvec(eff.head_w, x.row(i));
        auto row = out.token_logits.row(i);
        for (std::size_t c = 0; c < labels; ++c) {
            row[c] = z[c] + eff.head_b(0, c);
            out.sequence_logits[c] += row[c] / static_cast<double>(n);
        }
    }
    if (cache) cache->x_final = std::move(x);
    return out;
}

void backward_sequence(const GemConfig& config, const Parameters& eff, std::span<const int> tokens,
                       std::span<const std::size_t> pathway, const SequenceCache& cache,
                       std::span<const double> d_seq_logits, Parameters& grads) {
    const std::size_t n = tokens.size();
    const std::size_t d = eff.embedding.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const bool exclude = config.mask_mode == scar::MaskMode::exclude;

    // Head: every token's logits carry 1/n of the sequence gradient.
    std::vector<double> dz(d_seq_logits.begin(), d_seq_logits.end());
    for (double& v : dz) v /= static_cast<double>(n);
    Matrix dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        add_outer(grads.head_w, dz, cache.x_final.row(i));
        add_into(grads.head_b.row(0), dz);
        const auto back = matvec_transposed(eff.head_w, dz);
        add_into(dx.row(i), back);
    }

    for (int l = config.pathway_layers - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const LayerCache& lc = cache.layers[li];
        const auto& mask = lc.mask;
        Matrix dh(n, d);
        Matrix dc(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& L = eff.pathways[pathway[i]].layers[li];
            auto& G = grads.pathways[pathway[i]].layers[li];
            const auto dout = dx.row(i);
            // out = h + W_down g + b_down, g = tanh(W_up h + b_up)
            add_outer(G.w_down, dout, lc.g.row(i));
            add_into(G.b_down.row(0), dout);
            auto dg = matvec_transposed(L.w_down, dout);
            const auto g = lc.g.row(i);
            for (std::size_t j = 0; j < dg.size(); ++j) dg[j] *= 1.0 - g[j] * g[j];
            add_outer(G.w_up, dg, lc.h.row(i));
            add_into(G.b_up.row(0), dg);
            const auto dh_ffn = matvec_transposed(L.w_up, dg);
            auto dhi = dh.row(i);
            for (std::size_t j = 0; j < d; ++j) dhi[j] = dout[j] + dh_ffn[j];
            // h = x + W_o c
            add_outer(G.wo, dhi, lc.c.row(i));
            const auto dci = matvec_transposed(L.wo, dhi);
            std::copy(dci.begin(), dci.end(), dc.row(i).begin());
        }

        // c_i = sum_j a_ij v_j; a_i = softmax over s_ij = q_i . k_j / sqrt(d)
        Matrix dq(n, d);
        Matrix dk(n, d);
        Matrix dv(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto a = lc.a.row(i);
            std::vector<double> da(n, 0.0);
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (a[j] == 0.0) continue;
                da[j] = dot(dc.row(i), lc.v.row(j));
                weighted += a[j] * da[j];
                auto dvj = dv.row(j);
                const auto dci = dc.row(i);
                for (std::size_t c = 0; c < d; ++c) dvj[c] += a[j] * dci[c];
            }
            for (std::size_t j = 0; j < n; ++j) {
                if (a[j] == 0.0) continue;
                // Literal-zero masking feeds a constant logit: no gradient to q, k.
                if (!exclude && !mask.at(i, j)) continue;
                const double ds = a[j] * (da[j] - weighted) * scale;
                auto dqi = dq.row(i);
                auto dkj = dk.row(j);
                const auto kj = lc.k.row(j);
                const auto qi = lc.q.row(i);
                for (std::size_t c = 0; c < d; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }

        Matrix dx_prev(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& L = eff.pathways[pathway[i]].layers[li];
            auto& G = grads.pathways[pathway[i]].layers[li];
            const auto xi = lc.x.row(i);
            add_outer(G.wq, dq.row(i), xi);
            add_outer(G.wk, dk.row(i), xi);
            add_outer(G.wv, dv.row(i), xi);
            auto dxi = dx_prev.row(i);
            add_into(dxi, dh.row(i));
            add_into(dxi, matvec_transposed(L.wq, dq.row(i)));
            add_into(dxi, matvec_transposed(L.wk, dk.row(i)));
            add_into(dxi, matvec_transposed(L.wv, dv.row(i)));
        }
        dx = std::move(dx_prev);
    }

    for (std::size_t i = 0; i < n; ++i)
        add_into(grads.embedding.row(static_cast<std::size_t>(tokens[i])), dx.row(i));
}

void check_tokens(const GemConfig& config, std::span<const int> tokens) {
    if (tokens.empty()) throw std::invalid_argument("empty input");
    if (tokens.size() > static_cast<std::size_t>(config.max_seq_len))
        throw std::invalid_argument("sequence longer than max_seq_len");
    for (int t : tokens)
        if (t < 0 || t >= config.vocab_size) throw std::invalid_argument("out-of-vocabulary");
}

}  // namespace

ForwardResult GemModel::forward(std::span<const int> tokens, const LayerPlans* fixed_plans) const {
    return forward_with(effective_params(), tokens, fixed_plans);
}

ForwardResult GemModel::forward_with(const Parameters& eff, std::span<const int> tokens,
                                     const LayerPlans* fixed_plans) const {
    check_tokens(config_, tokens);
    ForwardResult r;
    const auto pathway = pathways_for(tokens, &r.decisions);
    auto out = run_sequence(config_, eff, tokens, pathway, fixed_plans, r.plans, nullptr);
    r.token_probs = Matrix(tokens.size(), out.token_logits.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto p = softmax(out.token_logits.row(i));
        std::copy(p.begin(), p.end(), r.token_probs.row(i).begin());
    }
    r.sequence_logits = std::move(out.sequence_logits);
    return r;
}

// ---------------------------------------------------------------------------
// Losses and training

double distill_loss(std::span<const double> student_logits, std::span<const double> teacher_logits,
                    double temperature) {
    if (student_logits.size() != teacher_logits.size()) throw std::invalid_argument("dimension mismatch");
    const auto log_q = log_softmax(student_logits, temperature);
    const auto log_p = log_softmax(teacher_logits, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) {
        const double p = std::exp(log_p[i]);
        if (p > 0.0) kl += p * (log_p[i] - log_q[i]);
    }
    return std::max(kl, 0.0);
}

BatchGradient loss_and_gradient(const GemModel& model, std::span<const Sample> batch, const LossOptions& options) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    if (options.fixed_plans && options.fixed_plans->size() != batch.size())
        throw std::invalid_argument("cluster plans do not match batch");
    const GemConfig& config = model.config();
    const Parameters eff = model.effective_params();
    std::optional<Parameters> teacher_eff;
    if (options.teacher) teacher_eff = options.teacher->effective_params();

    BatchGradient out;
    out.grads = eff.zeros_like();
    out.parts.lambda_quant = options.lambda_quant;
    out.parts.lambda_kd = options.lambda_kd;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& sample = batch[b];
        check_tokens(config, sample.tokens);
        if (sample.label < 0 || sample.label >= config.num_labels) throw std::invalid_argument("label out of range");
        const auto pathway = model.pathways_for(sample.tokens);
        LayerPlans plans;
        const auto* fixed = options.fixed_plans ? &(*options.fixed_plans)[b] : nullptr;
        SequenceCache cache;
        const auto out_seq = run_sequence(config, eff, sample.tokens, pathway, fixed, plans, &cache);
        const auto& z = out_seq.sequence_logits;

        const auto log_p = log_softmax(z);
        out.parts.task_loss += -log_p[static_cast<std::size_t>(sample.label)] * inv_b;
        std::vector<double> dz(z.size());
        for (std::size_t c = 0; c < z.size(); ++c) dz[c] = std::exp(log_p[c]) * inv_b;
        dz[static_cast<std::size_t>(sample.label)] -= inv_b;

        if (options.teacher) {
            const auto& tc = options.teacher->config();
            const auto t_path = options.teacher->pathways_for(sample.tokens);
            LayerPlans t_plans;
            const auto tz =
                run_sequence(tc, *teacher_eff, sample.tokens, t_path, nullptr, t_plans, nullptr).sequence_logits;
            const double temp = options.kd_temperature;
            out.parts.kd_loss += distill_loss(z, tz, temp) * inv_b;
            const auto q = softmax(z, temp);
            const auto p = softmax(tz, temp);
            for (std::size_t c = 0; c < z.size(); ++c)
                dz[c] += options.lambda_kd * (q[c] - p[c]) / temp * inv_b;
        }
        backward_sequence(config, eff, sample.tokens, pathway, cache, dz, out.grads);
    }

    if (config.quantize && options.include_quant_penalty) {
        // Mean of (W - Q(W))^2 over all weights, Q(W) held fixed in the gradient.
        const double inv_n = 1.0 / static_cast<double>(model.params().count());
        const auto master = model.params().tensors();
        const auto quantized = eff.tensors();
        auto grads = out.grads.tensors();
        for (std::size_t t = 0; t < master.size(); ++t) {
            const auto& w = master[t].tensor->data();
            const auto& qw = quantized[t].tensor->data();
            auto& g = grads[t].tensor->data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double r = w[i] - qw[i];
                out.parts.quant_penalty += r * r * inv_n;
                g[i] += options.lambda_quant * 2.0 * r * inv_n;
            }
        }
    }
    return out;
}

AdamState make_adam_state(const GemModel& model) {
    return {model.params().zeros_like(), model.params().zeros_like(), 0};
}

quant::QakpLossParts train_step(GemModel& model, AdamState& opt, std::span<const Sample> batch,
                                const TrainConfig& train, const GemModel* teacher) {
    train.validate();
    LossOptions options;
    options.teacher = train.kd_enabled ? teacher : nullptr;
    options.kd_temperature = train.kd_temperature;
    options.lambda_quant = train.lambda_quant;
    options.lambda_kd = train.lambda_kd;
    auto bg = loss_and_gradient(model, batch, options);
    const double total = quant::qakp_loss(bg.parts);
    if (!std::isfinite(total)) throw DivergenceError();

    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double bc1 = 1.0 - std::pow(train.beta1, t);
    const double bc2 = 1.0 - std::pow(train.beta2, t);
    auto params = model.params().tensors();
    auto grads = bg.grads.tensors();
    auto ms = opt.m.tensors();
    auto vs = opt.v.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].tensor->data();
        const auto& g = grads[k].tensor->data();
        auto& m = ms[k].tensor->data();
        auto& v = vs[k].tensor->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = train.beta1 * m[i] + (1.0 - train.beta1) * g[i];
            v[i] = train.beta2 * v[i] + (1.0 - train.beta2) * g[i] * g[i];
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + train.adam_eps);
            p[i] -= train.learning_rate * (update + train.weight_decay * p[i]);
            if (!std::isfinite(p[i])) throw DivergenceError();
        }
    }
    return bg.parts;
}

double accuracy(const GemModel& model, std::span<const Sample> samples) {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    const Parameters eff = model.effective_params();
    for (const auto& s : samples) {
        const auto r = model.forward_with(eff, s.tokens);
        if (argmax(r.sequence_logits) == static_cast<std::size_t>(s.label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::vector<EpochStats> train(GemModel& model, const SyntheticTask& task, const TrainConfig& train,
                              const GemModel* teacher) {
    train.validate();
    if (task.samples.empty()) throw std::invalid_argument("empty task");
    AdamState opt = make_adam_state(model);
    std::vector<std::size_t> order(task.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochStats> curve;
    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        std::mt19937_64 rng(splitmix64(train.shuffle_seed + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch + 1;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
            std::vector<Sample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(task.samples[order[i]]);
            const auto parts = train_step(model, opt, batch, train, teacher);
            stats.mean_loss += quant::qakp_loss(parts);
            stats.mean_task_loss += parts.task_loss;
            ++batches;
        }
        stats.mean_loss /= static_cast<double>(batches);
        stats.mean_task_loss /= static_cast<double>(batches);
        stats.accuracy = accuracy(model, task.samples);
        curve.push_back(stats);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult gradient_check(const GemModel& model, std::span<const Sample> batch, double epsilon,
                               const GradCheckOptions& options) {
    GradCheckResult result;
    if (model.config().quantize) {
        result.status = GradCheckResult::Status::skipped_non_smooth;
        return result;
    }
    if (batch.empty()) throw std::invalid_argument("empty batch");
    require(epsilon > 0.0, "epsilon must be positive");

    std::vector<LayerPlans> plans;
    for (const auto& s : batch) plans.push_back(model.forward(s.tokens).plans);
    LossOptions lo;
    lo.include_quant_penalty = false;
    lo.fixed_plans = &plans;
    const auto analytic = loss_and_gradient(model, batch, lo);

    struct Entry {
        std::size_t tensor;
        std::size_t index;
    };
    // Candidate entries: tensors the batch touches, or every tensor when none is.
    std::vector<Entry> active;
    std::vector<Entry> all;
    const auto grad_tensors = analytic.grads.tensors();
    for (std::size_t t = 0; t < grad_tensors.size(); ++t) {
        if (!options.include_head && grad_tensors[t].name.starts_with("head.")) continue;
        const auto& g = grad_tensors[t].tensor->data();
        const bool touched = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
        for (std::size_t i = 0; i < g.size(); ++i) {
            all.push_back({t, i});
            if (touched) active.push_back({t, i});
        }
    }
    std::vector<Entry> candidates = active.empty() ? std::move(all) : std::move(active);
    std::mt19937_64 rng(splitmix64(options.seed));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (candidates.size() > options.sample_params) candidates.resize(options.sample_params);

    auto task_loss = [&](const GemModel& m) { return loss_and_gradient(m, batch, lo).parts.task_loss; };
    GemModel probe = model;
    for (const auto& e : candidates) {
        auto probe_tensors = probe.params().tensors();
        double& w = probe_tensors[e.tensor].tensor->data()[e.index];
        const double saved = w;
        w = saved + epsilon;
        const double up = task_loss(probe);
        w = saved - epsilon;
        const double down = task_loss(probe);
        w = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = grad_tensors[e.tensor].tensor->data()[e.index];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        result.max_rel_deviation = std::max(result.max_rel_deviation, std::abs(a - numeric) / denom);
        result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
        result.max_abs_numeric = std::max(result.max_abs_numeric, std::abs(numeric));
        ++result.checked;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Forgetting experiment

ForgettingReport forgetting_experiment(const GemConfig& config, const SyntheticTask& base_task,
                                       const SyntheticTask& new_task, const TrainConfig& base_train,
                                       const TrainConfig& finetune_train) {
    if (base_task.samples.empty() || new_task.samples.empty()) throw std::invalid_argument("empty task");
    ForgettingReport report;
    GemModel base(config);
    if (base_train.epochs > 0) report.base_curve = train(base, base_task, base_train);
    report.general_acc_before = accuracy(base, base_task.samples);

    const GemModel teacher = base;
    GemModel plain = base;
    GemModel distilled = base;
    TrainConfig plain_cfg = finetune_train;
    plain_cfg.kd_enabled = false;
    TrainConfig kd_cfg = finetune_train;
    kd_cfg.kd_enabled = true;
    if (finetune_train.epochs > 0) {
        report.plain_curve = train(plain, new_task, plain_cfg);
        report.kd_curve = train(distilled, new_task, kd_cfg, &teacher);
    }
    report.general_acc_after_plain = accuracy(plain, base_task.samples);
    report.general_acc_after_kd = accuracy(distilled, base_task.samples);
    report.new_task_acc_plain = accuracy(plain, new_task.samples);
    report.new_task_acc_kd = accuracy(distilled, new_task.samples);
    return report;
}

ForgettingSetup ForgettingSetup::reference(std::uint64_t seed) {
    ForgettingSetup s;
    s.model.seed = seed;
    s.base = TaskSpec{};
    s.base.domain_id = 0;
    s.base.label_offset = 0;
    s.base.seed = seed * 2 + 1;
    s.next = s.base;
    s.next.domain_id = 1;
    s.next.label_offset = 4;
    s.next.seed = seed * 2 + 2;

    s.base_train.learning_rate = 5e-3;
    s.base_train.batch_size = 16;
    s.base_train.epochs = 8;
    s.base_train.shuffle_seed = seed;
    s.finetune_train = s.base_train;
    s.finetune_train.epochs = 6;
    return s;
}

}  // namespace gem::model
