#pragma once

#include "gem/quant.hpp"
#include "gem/router.hpp"
#include "gem/scar.hpp"
#include "gem/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gem::model {

/// Reference dimensions of the full-size model; nothing here builds them by default.
struct ReferenceDims {
    static constexpr int pathway_layers = 8;
    static constexpr int pathway_hidden = 512;
    static constexpr int scar_clusters = 16;
    static constexpr int pubmedqa_batch_size = 128;
};

/// What the attention clusters are computed from.
enum class ScarSource {
    hidden_states,     // each layer clusters its own pre-attention input
    input_embeddings,  // one plan from the token embeddings, shared by all layers
};

const char* to_string(ScarSource s);
ScarSource parse_scar_source(const std::string& s);

struct GemConfig {
    int vocab_size = 96;
    int embed_dim = 32;
    int ffn_dim = 64;
    int pathway_layers = 2;
    int domains = 8;
    int num_labels = 8;
    int scar_k = 4;
    int scar_iters = 10;
    int max_seq_len = 32;
    double tau = 0.7;
    bool quantize = true;
    scar::MaskMode mask_mode = scar::MaskMode::exclude;
    ScarSource scar_source = ScarSource::hidden_states;
    quant::PrecisionMap precision_map = quant::PrecisionMap::hybrid_default();
    router::RouterConfig router{1, 32, 4, 8, 0.7, 96, 6};
    std::uint64_t seed = 42;

    /// Router fields that must mirror the model (domains, tau, vocabulary, bits).
    router::RouterConfig effective_router() const;
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 5e-5;
    int batch_size = 64;
    int epochs = 10;
    double weight_decay = 0.01;
    bool kd_enabled = false;
    double kd_temperature = 2.0;
    double lambda_quant = 0.1;
    double lambda_kd = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t shuffle_seed = 7;

    void validate() const;
};

struct Sample {
    std::vector<int> tokens;
    int label = 0;
};

struct SyntheticTask {
    int domain_id = 0;
    std::vector<Sample> samples;
    std::uint64_t generator_seed = 0;
};

/// Generation parameters for a synthetic single-domain classification task.
///
/// The vocabulary holds `domains` regions of `tokens_per_domain` tokens followed
/// by a shared background region. Label c of a task owns two signature tokens
/// in the task's region; each position carries a signature token of the sample's
/// label with probability `signal`, otherwise a background token.
struct TaskSpec {
    int domain_id = 0;
    int label_offset = 0;
    int label_count = 4;
    int sample_count = 200;
    int seq_len = 8;
    double signal = 0.5;
    int domains = 8;
    int tokens_per_domain = 8;
    int vocab_size = 96;
    std::uint64_t seed = 1;

    void validate() const;
};

SyntheticTask make_synthetic_task(const TaskSpec& spec);

class DivergenceError : public std::runtime_error {
public:
    DivergenceError() : std::runtime_error("divergence") {}
};

struct TransformerLayer {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix w_up;            // f x d
    Matrix b_up;            // 1 x f
    Matrix w_down;          // d x f
    Matrix b_down;          // 1 x d
};

struct Pathway {
    std::vector<TransformerLayer> layers;
};

/// Every trainable tensor. Pathway `domains` (the last) is the general pathway.
struct Parameters {
    Matrix embedding;  // vocab x d
    std::vector<Pathway> pathways;
    Matrix head_w;  // labels x d
    Matrix head_b;  // 1 x labels

    struct TensorRef {
        std::string name;
        quant::LayerClass layer_class;
        Matrix* tensor;
    };
    struct ConstTensorRef {
        std::string name;
        quant::LayerClass layer_class;
        const Matrix* tensor;
    };
    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;

    /// Same shapes, all zeros.
    Parameters zeros_like() const;
    std::int64_t count() const;

    bool operator==(const Parameters&) const;
};

struct ForwardResult {
    Matrix token_probs;                   // n x labels, one distribution per token
    std::vector<double> sequence_logits;  // mean of per-token logits
    std::vector<router::RoutingDecision> decisions;
    std::vector<scar::ClusterPlan> plans;  // one per pathway layer
};

/// Cluster plans of one sequence, one per pathway layer.
using LayerPlans = std::vector<scar::ClusterPlan>;

/// Toy-scale model: embeddings, a frozen token router, per-domain and general
/// transformer pathways with cluster-masked attention, and a label head.
class GemModel {
public:
    explicit GemModel(const GemConfig& config);
    GemModel(const GemConfig& config, Parameters params);

    const GemConfig& config() const { return config_; }
    const Parameters& params() const { return params_; }
    Parameters& params() { return params_; }
    const router::RouterEncoder& router() const { return *router_; }

    /// Pathway index per token: a domain index, or `domains` for general.
    std::vector<std::size_t> pathways_for(std::span<const int> tokens,
                                          std::vector<router::RoutingDecision>* decisions = nullptr) const;

    /// Parameters as the forward pass sees them (fake-quantized when enabled).
    Parameters effective_params() const;

    /// `fixed_plans` pins the attention clusters instead of recomputing them.
    ForwardResult forward(std::span<const int> tokens, const LayerPlans* fixed_plans = nullptr) const;
    /// Same, with `eff` from effective_params() computed once by the caller.
    ForwardResult forward_with(const Parameters& eff, std::span<const int> tokens,
                               const LayerPlans* fixed_plans = nullptr) const;

    /// Copies the general pathway into every domain pathway.
    void tie_pathways();

    std::int64_t param_count() const { return params_.count(); }
    /// Parameter counts per layer class (router = frozen router encoder).
    quant::PrecisionMap precision_accounting() const;

private:
    GemConfig config_;
    Parameters params_;
    std::shared_ptr<const router::RouterEncoder> router_;
};

/// Loss value and gradients of one batch w.r.t. the effective parameters.
struct BatchGradient {
    quant::QakpLossParts parts;
    Parameters grads;
};

struct LossOptions {
    bool include_quant_penalty = true;
    const GemModel* teacher = nullptr;  // enables the distillation term
    double kd_temperature = 2.0;
    double lambda_quant = 0.1;
    double lambda_kd = 0.5;
    /// Per-sample cluster plans to reuse instead of recomputing.
    const std::vector<LayerPlans>* fixed_plans = nullptr;
};

BatchGradient loss_and_gradient(const GemModel& model, std::span<const Sample> batch, const LossOptions& options);

/// Cross-entropy of the teacher's temperature-softened distribution against
/// the student's, minus the teacher entropy (a KL divergence). Zero when equal.
double distill_loss(std::span<const double> student_logits, std::span<const double> teacher_logits,
                    double temperature);

struct AdamState {
    Parameters m;
    Parameters v;
    std::int64_t step = 0;
};

AdamState make_adam_state(const GemModel& model);

/// One AdamW step on the composite loss. Gradients pass straight through the
/// quantizers; the quantization penalty contributes 2 (W - Q(W)).
quant::QakpLossParts train_step(GemModel& model, AdamState& opt, std::span<const Sample> batch,
                                const TrainConfig& train, const GemModel* teacher = nullptr);

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_task_loss = 0.0;
    double accuracy = 0.0;
};

std::vector<EpochStats> train(GemModel& model, const SyntheticTask& task, const TrainConfig& train,
                              const GemModel* teacher = nullptr);

double accuracy(const GemModel& model, std::span<const Sample> samples);

struct GradCheckOptions {
    std::size_t sample_params = 100;
    std::uint64_t seed = 3;
    bool include_head = true;
};

struct GradCheckResult {
    enum class Status { ok, skipped_non_smooth } status = Status::ok;
    double max_rel_deviation = 0.0;
    double max_abs_analytic = 0.0;
    double max_abs_numeric = 0.0;
    std::size_t checked = 0;
};

/// Analytic task-loss gradients vs central differences on a random parameter
/// subset. Deviation per entry is |a - f| / max(|a|, |f|, 1e-6). Cluster plans
/// are pinned at the unperturbed point. Skipped when quantization is on.
GradCheckResult gradient_check(const GemModel& model, std::span<const Sample> batch, double epsilon,
                               const GradCheckOptions& options = {});

struct ForgettingReport {
    double general_acc_before = 0.0;
    double general_acc_after_plain = 0.0;
    double general_acc_after_kd = 0.0;
    double new_task_acc_plain = 0.0;
    double new_task_acc_kd = 0.0;
    std::vector<EpochStats> base_curve;
    std::vector<EpochStats> plain_curve;
    std::vector<EpochStats> kd_curve;
};

/// Trains on `base_task`, then fine-tunes two copies on `new_task`: one plain,
/// one distilling from the pre-fine-tune snapshot.
ForgettingReport forgetting_experiment(const GemConfig& config, const SyntheticTask& base_task,
                                       const SyntheticTask& new_task, const TrainConfig& base_train,
                                       const TrainConfig& finetune_train);

/// Desk-scale defaults for the two-domain forgetting comparison.
struct ForgettingSetup {
    GemConfig model;
    TaskSpec base;
    TaskSpec next;
    TrainConfig base_train;
    TrainConfig finetune_train;

    static ForgettingSetup reference(std::uint64_t seed);
};

}  // namespace gem::model
