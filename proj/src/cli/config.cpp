#include "gem/cli/config.hpp"

#include <fstream>
#include <stdexcept>

namespace gem::cli {

std::vector<metrics::MetricRecord> ExperimentConfig::default_metric_records() {
    // Finance's healthcare/STEM scores are unspecified beyond a 0.30 mean with
    // legal at 0.60; 0.15 each is the split consistent with both.
    return {
        {"Healthcare Chatbot", "Health", 0.95, {{"General", 0.40}, {"Legal", 0.45}, {"Finance", 0.50}}, "General"},
        {"Finance Model", "Finance", 0.90, {{"Legal", 0.60}, {"Healthcare", 0.15}, {"STEM", 0.15}}, "Legal"},
        {"Legal Model", "Legal", 0.90, {{"Finance", 0.62}}, "Finance"},
    };
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    train.task.seed = s;
    train.train.shuffle_seed = s;
}

namespace {

// Task labels must fit the model head and task tokens its vocabulary.
void validate_task(const model::TaskSpec& t, const model::GemConfig& m, const std::string& path) {
    with_field_path("task", path, [&] { t.validate(); });
    if (t.label_offset + t.label_count > m.num_labels)
        throw std::invalid_argument(path + ".label_count: labels exceed model.num_labels");
    if (t.seq_len > m.max_seq_len) throw std::invalid_argument(path + ".seq_len: exceeds model.max_seq_len");
    if (t.vocab_size > m.vocab_size) throw std::invalid_argument(path + ".vocab_size: exceeds model.vocab_size");
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    with_field_path("router", "route.router", [&] { route.router.validate(); });
    if (route.tokens.empty()) throw std::invalid_argument("route.tokens: must be non-empty");
    for (int t : route.tokens)
        if (t < 0 || t >= route.router.vocab_size)
            throw std::invalid_argument("route.tokens: token " + std::to_string(t) + " is out of vocabulary");
    if (scar.n < 1) throw std::invalid_argument("scar.n: must be positive");
    if (scar.k < 1 || scar.k > scar.n) throw std::invalid_argument("scar.k: must lie in [1, n]");
    if (scar.dim < 1) throw std::invalid_argument("scar.dim: must be positive");
    if (scar.source_clusters < 1) throw std::invalid_argument("scar.source_clusters: must be positive");
    if (scar.noise < 0.0) throw std::invalid_argument("scar.noise: must be non-negative");
    if (scar.max_iters < 1) throw std::invalid_argument("scar.max_iters: must be positive");
    for (int b : quantize.bits)
        if (b < 1 || b > 32) throw std::invalid_argument("quantize.bits: invalid bit-width " + std::to_string(b));
    if (quantize.samples == 0) throw std::invalid_argument("quantize.samples: must be positive");
    with_field_path("precision_map", "quantize.precision_map", [&] { quantize.precision_map.validate(true); });
    if (cost.layers < 0) throw std::invalid_argument("cost.layers: must be non-negative");
    if (cost.hidden < 1) throw std::invalid_argument("cost.hidden: must be positive");
    if (cost.params < 0) throw std::invalid_argument("cost.params: must be non-negative");
    if (cost.bits < 1 || cost.bits > 32) throw std::invalid_argument("cost.bits: invalid bit-width");
    if (cost.tokens < 0) throw std::invalid_argument("cost.tokens: must be non-negative");
    if (cost.latency_s && *cost.latency_s < 0.0) throw std::invalid_argument("cost.latency_s: must be non-negative");
    if (cost.power_w && *cost.power_w < 0.0) throw std::invalid_argument("cost.power_w: must be non-negative");
    if (cost.seq_len < 1) throw std::invalid_argument("cost.seq_len: must be positive");
    for (int k : cost.scar_k)
        if (k < 1) throw std::invalid_argument("cost.scar_k: must be positive");
    with_field_path("router", "cost.router", [&] { cost.router.validate(); });
    for (std::size_t i = 0; i < cost.platforms.size(); ++i)
        with_field_path("platform", "cost.platforms[" + std::to_string(i) + "]", [&] { cost.platforms[i].validate(); });
    validate_task(train.task, model, "train.task");
    with_field_path("train", "train.train", [&] { train.train.validate(); });
    if (forget.seeds.empty()) throw std::invalid_argument("forget.seeds: must be non-empty");
    if (forget.base_task) validate_task(*forget.base_task, model, "forget.base_task");
    if (forget.new_task) validate_task(*forget.new_task, model, "forget.new_task");
    if (forget.base_train) with_field_path("train", "forget.base_train", [&] { forget.base_train->validate(); });
    if (forget.finetune_train)
        with_field_path("train", "forget.finetune_train", [&] { forget.finetune_train->validate(); });
    for (std::size_t i = 0; i < metric_records.size(); ++i) {
        try {
            metric_records[i].validate();
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("metrics.records[" + std::to_string(i) + "]." + e.what());
        }
    }
}

Json to_json(const ExperimentConfig& c) {
    Json j;
    j["seed"] = c.seed;
    model::to_json(j["model"], c.model);

    Json route;
    router::to_json(route["router"], c.route.router);
    route["tokens"] = c.route.tokens;
    j["route"] = route;

    j["scar"] = Json{{"n", c.scar.n},
                     {"k", c.scar.k},
                     {"dim", c.scar.dim},
                     {"source_clusters", c.scar.source_clusters},
                     {"noise", c.scar.noise},
                     {"max_iters", c.scar.max_iters},
                     {"dump_mask", c.scar.dump_mask},
                     {"embeddings", c.scar.embeddings}};

    Json q{{"bits", c.quantize.bits}, {"samples", c.quantize.samples}, {"sigma", c.quantize.sigma}};
    quant::to_json(q["precision_map"], c.quantize.precision_map);
    j["quantize"] = q;

    Json cost{{"platform", c.cost.platform}, {"layers", c.cost.layers}, {"hidden", c.cost.hidden},
              {"params", c.cost.params},     {"bits", c.cost.bits},     {"tokens", c.cost.tokens}};
    if (c.cost.latency_s) cost["latency_s"] = *c.cost.latency_s;
    if (c.cost.power_w) cost["power_w"] = *c.cost.power_w;
    cost["include_router"] = c.cost.include_router;
    router::to_json(cost["router"], c.cost.router);
    cost["seq_len"] = c.cost.seq_len;
    cost["scar_k"] = c.cost.scar_k;
    cost["platforms"] = Json::array();
    for (const auto& p : c.cost.platforms) {
        Json pj;
        metrics::to_json(pj, p);
        cost["platforms"].push_back(pj);
    }
    j["cost"] = cost;

    Json train;
    model::to_json(train["task"], c.train.task);
    model::to_json(train["train"], c.train.train);
    train["save_checkpoint"] = c.train.save_checkpoint;
    j["train"] = train;

    Json forget;
    forget["seeds"] = c.forget.seeds;
    if (c.forget.base_task) model::to_json(forget["base_task"], *c.forget.base_task);
    if (c.forget.new_task) model::to_json(forget["new_task"], *c.forget.new_task);
    if (c.forget.base_train) model::to_json(forget["base_train"], *c.forget.base_train);
    if (c.forget.finetune_train) model::to_json(forget["finetune_train"], *c.forget.finetune_train);
    j["forget"] = forget;

    Json records = Json::array();
    for (const auto& r : c.metric_records) {
        Json rj;
        metrics::to_json(rj, r);
        records.push_back(rj);
    }
    j["metrics"] = Json{{"records", records}};
    return j;
}

ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c;
    JsonReader root(j, "");
    std::uint64_t seed = c.seed;
    root.read("seed", seed);
    c.apply_seed(seed);
    if (const Json* m = root.child("model")) model::from_json_at(*m, c.model, "model");

    if (const Json* r = root.child("route")) {
        JsonReader rr(*r, "route");
        if (const Json* rc = rr.child("router")) router::from_json_at(*rc, c.route.router, "route.router");
        rr.read("tokens", c.route.tokens);
        rr.finish();
    }
    if (const Json* s = root.child("scar")) {
        JsonReader sr(*s, "scar");
        sr.read("n", c.scar.n);
        sr.read("k", c.scar.k);
        sr.read("dim", c.scar.dim);
        sr.read("source_clusters", c.scar.source_clusters);
        sr.read("noise", c.scar.noise);
        sr.read("max_iters", c.scar.max_iters);
        sr.read("dump_mask", c.scar.dump_mask);
        sr.read("embeddings", c.scar.embeddings);
        sr.finish();
    }
    if (const Json* q = root.child("quantize")) {
        JsonReader qr(*q, "quantize");
        qr.read("bits", c.quantize.bits);
        qr.read("samples", c.quantize.samples);
        qr.read("sigma", c.quantize.sigma);
        if (const Json* pm = qr.child("precision_map"))
            quant::from_json_at(*pm, c.quantize.precision_map, "quantize.precision_map");
        qr.finish();
    }
    if (const Json* k = root.child("cost")) {
        JsonReader kr(*k, "cost");
        kr.read("platform", c.cost.platform);
        kr.read("layers", c.cost.layers);
        kr.read("hidden", c.cost.hidden);
        kr.read("params", c.cost.params);
        kr.read("bits", c.cost.bits);
        kr.read("tokens", c.cost.tokens);
        double v = 0.0;
        if (k->contains("latency_s")) {
            kr.read("latency_s", v);
            c.cost.latency_s = v;
        }
        if (k->contains("power_w")) {
            kr.read("power_w", v);
            c.cost.power_w = v;
        }
        kr.read("include_router", c.cost.include_router);
        if (const Json* rc = kr.child("router")) router::from_json_at(*rc, c.cost.router, "cost.router");
        kr.read("seq_len", c.cost.seq_len);
        kr.read("scar_k", c.cost.scar_k);
        if (const Json* ps = kr.child("platforms")) {
            if (!ps->is_array()) throw std::invalid_argument("cost.platforms: expected list");
            c.cost.platforms.clear();
            for (std::size_t i = 0; i < ps->size(); ++i) {
                metrics::PlatformProfile p;
                metrics::from_json_at((*ps)[i], p, "cost.platforms[" + std::to_string(i) + "]");
                c.cost.platforms.push_back(p);
            }
        }
        kr.finish();
    }
    if (const Json* t = root.child("train")) {
        JsonReader tr(*t, "train");
        if (const Json* task = tr.child("task")) model::from_json_at(*task, c.train.task, "train.task");
        if (const Json* tc = tr.child("train")) model::from_json_at(*tc, c.train.train, "train.train");
        tr.read("save_checkpoint", c.train.save_checkpoint);
        tr.finish();
    }
    if (const Json* f = root.child("forget")) {
        JsonReader fr(*f, "forget");
        fr.read("seeds", c.forget.seeds);
        if (const Json* x = fr.child("base_task")) {
            model::TaskSpec t;
            model::from_json_at(*x, t, "forget.base_task");
            c.forget.base_task = t;
        }
        if (const Json* x = fr.child("new_task")) {
            model::TaskSpec t;
            model::from_json_at(*x, t, "forget.new_task");
            c.forget.new_task = t;
        }
        if (const Json* x = fr.child("base_train")) {
            model::TrainConfig t;
            model::from_json_at(*x, t, "forget.base_train");
            c.forget.base_train = t;
        }
        if (const Json* x = fr.child("finetune_train")) {
            model::TrainConfig t;
            model::from_json_at(*x, t, "forget.finetune_train");
            c.forget.finetune_train = t;
        }
        fr.finish();
    }
    if (const Json* m = root.child("metrics")) {
        JsonReader mr(*m, "metrics");
        if (const Json* recs = mr.child("records")) {
            if (!recs->is_array()) throw std::invalid_argument("metrics.records: expected list");
            c.metric_records.clear();
            for (std::size_t i = 0; i < recs->size(); ++i) {
                metrics::MetricRecord r;
                metrics::from_json_at((*recs)[i], r, "metrics.records[" + std::to_string(i) + "]");
                c.metric_records.push_back(r);
            }
        }
        mr.finish();
    }
    root.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot read " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw std::invalid_argument("config: " + std::string(e.what()));
    }
    return config_from_json(j);
}

}  // namespace gem::cli
