#include "gem/serialization.hpp"

#include <fstream>

namespace gem {

JsonReader::JsonReader(const Json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw std::invalid_argument((path_.empty() ? "config" : path_) + ": expected object");
}

std::string JsonReader::field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

const Json* JsonReader::child(const char* key) {
    seen_.emplace_back(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
}

void JsonReader::finish() const {
    for (const auto& [key, _] : object_.items())
        if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
            throw std::invalid_argument(field(key.c_str()) + ": unknown field");
}

namespace quant {

void to_json(Json& j, const PrecisionMap& pm) {
    j = Json::array();
    for (const auto& e : pm.entries)
        j.push_back({{"class", std::string(to_string(e.layer_class))}, {"params", e.param_count}, {"bits", e.bits}});
}

void from_json_at(const Json& j, PrecisionMap& pm, const std::string& path) {
    if (!j.is_array()) throw std::invalid_argument(path + ": expected a list of {class, params, bits}");
    pm.entries.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
        JsonReader r(j[i], path + "[" + std::to_string(i) + "]");
        PrecisionEntry e;
        std::string cls = "general";
        r.read("class", cls);
        r.read("params", e.param_count);
        r.read("bits", e.bits);
        r.finish();
        try {
            e.layer_class = parse_layer_class(cls);
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument(r.field("class") + ": unknown layer class '" + cls + "'");
        }
        if (e.param_count < 0) throw std::invalid_argument(r.field("params") + ": must be non-negative");
        if (e.bits < 1 || e.bits > 32) throw std::invalid_argument(r.field("bits") + ": invalid bit-width");
        pm.entries.push_back(e);
    }
}

}  // namespace quant

namespace router {

void to_json(Json& j, const RouterConfig& c) {
    j = Json{{"layers", c.layers},         {"hidden", c.hidden}, {"heads", c.heads},
             {"domains", c.domains},       {"tau", c.tau},       {"vocab_size", c.vocab_size},
             {"weight_bits", c.weight_bits}};
}

void from_json_at(const Json& j, RouterConfig& c, const std::string& path) {
    JsonReader r(j, path);
    r.read("layers", c.layers);
    r.read("hidden", c.hidden);
    r.read("heads", c.heads);
    r.read("domains", c.domains);
    r.read("tau", c.tau);
    r.read("vocab_size", c.vocab_size);
    r.read("weight_bits", c.weight_bits);
    r.finish();
}

}  // namespace router

namespace model {

namespace {

std::string mask_mode_name(scar::MaskMode m) { return m == scar::MaskMode::exclude ? "exclude" : "literal_zero"; }

}  // namespace

void to_json(Json& j, const GemConfig& c) {
    Json pm;
    quant::to_json(pm, c.precision_map);
    Json rc;
    router::to_json(rc, c.router);
    j = Json{{"vocab_size", c.vocab_size},
             {"embed_dim", c.embed_dim},
             {"ffn_dim", c.ffn_dim},
             {"pathway_layers", c.pathway_layers},
             {"domains", c.domains},
             {"num_labels", c.num_labels},
             {"scar_k", c.scar_k},
             {"scar_iters", c.scar_iters},
             {"max_seq_len", c.max_seq_len},
             {"tau", c.tau},
             {"quantize", c.quantize},
             {"mask_mode", mask_mode_name(c.mask_mode)},
             {"scar_source", to_string(c.scar_source)},
             {"precision_map", pm},
             {"router", rc},
             {"seed", c.seed}};
}

void from_json_at(const Json& j, GemConfig& c, const std::string& path) {
    JsonReader r(j, path);
    r.read("vocab_size", c.vocab_size);
    r.read("embed_dim", c.embed_dim);
    r.read("ffn_dim", c.ffn_dim);
    r.read("pathway_layers", c.pathway_layers);
    r.read("domains", c.domains);
    r.read("num_labels", c.num_labels);
    r.read("scar_k", c.scar_k);
    r.read("scar_iters", c.scar_iters);
    r.read("max_seq_len", c.max_seq_len);
    r.read("tau", c.tau);
    r.read("quantize", c.quantize);
    std::string mode = mask_mode_name(c.mask_mode);
    r.read("mask_mode", mode);
    if (mode == "exclude") {
        c.mask_mode = scar::MaskMode::exclude;
    } else if (mode == "literal_zero") {
        c.mask_mode = scar::MaskMode::literal_zero;
    } else {
        throw std::invalid_argument(r.field("mask_mode") + ": expected 'exclude' or 'literal_zero'");
    }
    std::string source = to_string(c.scar_source);
    r.read("scar_source", source);
    try {
        c.scar_source = parse_scar_source(source);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(r.field("scar_source") + ": " + e.what());
    }
    if (const Json* pm = r.child("precision_map")) quant::from_json_at(*pm, c.precision_map, r.field("precision_map"));
    if (const Json* rc = r.child("router")) router::from_json_at(*rc, c.router, r.field("router"));
    r.read("seed", c.seed);
    r.finish();
}

void to_json(Json& j, const TrainConfig& c) {
    j = Json{{"learning_rate", c.learning_rate},
             {"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"weight_decay", c.weight_decay},
             {"kd_enabled", c.kd_enabled},
             {"kd_temperature", c.kd_temperature},
             {"lambda_quant", c.lambda_quant},
             {"lambda_kd", c.lambda_kd},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps},
             {"shuffle_seed", c.shuffle_seed}};
}

void from_json_at(const Json& j, TrainConfig& c, const std::string& path) {
    JsonReader r(j, path);
    r.read("learning_rate", c.learning_rate);
    r.read("batch_size", c.batch_size);
    r.read("epochs", c.epochs);
    r.read("weight_decay", c.weight_decay);
    r.read("kd_enabled", c.kd_enabled);
    r.read("kd_temperature", c.kd_temperature);
    r.read("lambda_quant", c.lambda_quant);
    r.read("lambda_kd", c.lambda_kd);
    r.read("beta1", c.beta1);
    r.read("beta2", c.beta2);
    r.read("adam_eps", c.adam_eps);
    r.read("shuffle_seed", c.shuffle_seed);
    r.finish();
}

void to_json(Json& j, const TaskSpec& t) {
    j = Json{{"domain_id", t.domain_id},
             {"label_offset", t.label_offset},
             {"label_count", t.label_count},
             {"sample_count", t.sample_count},
             {"seq_len", t.seq_len},
             {"signal", t.signal},
             {"domains", t.domains},
             {"tokens_per_domain", t.tokens_per_domain},
             {"vocab_size", t.vocab_size},
             {"seed", t.seed}};
}

void from_json_at(const Json& j, TaskSpec& t, const std::string& path) {
    JsonReader r(j, path);
    r.read("domain_id", t.domain_id);
    r.read("label_offset", t.label_offset);
    r.read("label_count", t.label_count);
    r.read("sample_count", t.sample_count);
    r.read("seq_len", t.seq_len);
    r.read("signal", t.signal);
    r.read("domains", t.domains);
    r.read("tokens_per_domain", t.tokens_per_domain);
    r.read("vocab_size", t.vocab_size);
    r.read("seed", t.seed);
    r.finish();
}

Json checkpoint_to_json(const GemModel& model) {
    Json config;
    to_json(config, model.config());
    Json tensors = Json::array();
    for (const auto& t : model.params().tensors()) {
        tensors.push_back({{"name", t.name},
                           {"class", std::string(quant::to_string(t.layer_class))},
                           {"shape", {t.tensor->rows(), t.tensor->cols()}},
                           {"values", t.tensor->data()}});
    }
    return Json{{"format", "gem-checkpoint"},
                {"version", 1},
                {"seed", model.config().seed},
                {"config", config},
                {"tensors", tensors}};
}

GemModel checkpoint_from_json(const Json& j) {
    if (!j.is_object() || j.value("format", "") != "gem-checkpoint")
        throw std::invalid_argument("checkpoint: not a gem checkpoint");
    if (j.value("version", 0) != 1) throw std::invalid_argument("checkpoint: unsupported version");
    GemConfig config;
    from_json_at(j.at("config"), config, "checkpoint.config");
    config.validate();

    // Shapes come from a freshly built model; values are copied by name.
    GemModel shaped(config);
    Parameters params = shaped.params();
    auto refs = params.tensors();
    const Json& tensors = j.at("tensors");
    if (!tensors.is_array() || tensors.size() != refs.size())
        throw std::invalid_argument("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Json& t = tensors[i];
        if (t.at("name").get<std::string>() != refs[i].name)
            throw std::invalid_argument("checkpoint: unexpected tensor '" + t.at("name").get<std::string>() + "'");
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != refs[i].tensor->rows() || shape[1] != refs[i].tensor->cols())
            throw std::invalid_argument("checkpoint: tensor shape mismatch for " + refs[i].name);
        auto values = t.at("values").get<std::vector<double>>();
        if (values.size() != refs[i].tensor->size())
            throw std::invalid_argument("checkpoint: tensor size mismatch for " + refs[i].name);
        refs[i].tensor->data() = std::move(values);
    }
    return GemModel(config, std::move(params));
}

void save_checkpoint(const GemModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << checkpoint_to_json(model).dump() << '\n';
}

GemModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return checkpoint_from_json(Json::parse(in));
}

}  // namespace model

namespace metrics {

void to_json(Json& j, const MetricRecord& r) {
    Json outs = Json::object();
    for (const auto& [k, v] : r.out_domain_perfs) outs[k] = v;
    j = Json{{"model", r.model},
             {"source_domain", r.source_domain},
             {"in_domain_perf", r.in_domain_perf},
             {"out_domain_perfs", outs},
             {"pair_domain", r.pair_domain}};
}

void from_json_at(const Json& j, MetricRecord& r, const std::string& path) {
    JsonReader reader(j, path);
    reader.read("model", r.model);
    reader.read("source_domain", r.source_domain);
    reader.read("in_domain_perf", r.in_domain_perf);
    reader.read("pair_domain", r.pair_domain);
    if (const Json* outs = reader.child("out_domain_perfs")) {
        if (!outs->is_object()) throw std::invalid_argument(reader.field("out_domain_perfs") + ": expected object");
        r.out_domain_perfs.clear();
        for (const auto& [k, v] : outs->items()) {
            if (!v.is_number()) throw std::invalid_argument(reader.field("out_domain_perfs") + "." + k + ": expected number");
            r.out_domain_perfs[k] = v.get<double>();
        }
    }
    reader.finish();
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + "." + e.what());
    }
}

void to_json(Json& j, const PlatformProfile& p) {
    j = Json{{"name", p.name},
             {"ram_bytes", p.ram_bytes},
             {"peak_flops", p.peak_flops},
             {"typical_power_watts", p.typical_power_watts}};
}

void from_json_at(const Json& j, PlatformProfile& p, const std::string& path) {
    JsonReader r(j, path);
    r.read("name", p.name);
    r.read("ram_bytes", p.ram_bytes);
    r.read("peak_flops", p.peak_flops);
    r.read("typical_power_watts", p.typical_power_watts);
    r.finish();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + "." + std::string(e.what()).substr(std::string("platform.").size()));
    }
}

void to_json(Json& j, const CostReport& c) {
    j = Json{{"flops_per_token", c.flops_per_token},
             {"latency_s_per_token", c.latency_s_per_token},
             {"power_w", c.power_w},
             {"energy_j_per_token", c.energy_j_per_token},
             {"memory_bytes", c.memory_bytes}};
}

void to_json(Json& j, const MetricRow& r) {
    j = Json{{"model", r.model}, {"in_domain", r.in_domain}, {"out_domain_avg", r.out_domain_avg},
             {"gg", r.gg},       {"cdtr", r.cdtr},           {"dsi", r.dsi},
             {"domain_pair", r.domain_pair}};
}

}  // namespace metrics

}  // namespace gem
