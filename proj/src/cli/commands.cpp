#include "gem/cli/commands.hpp"

#include "gem/cli/reproduce.hpp"
#include "gem/metrics.hpp"
#include "gem/quant.hpp"
#include "gem/rng.hpp"
#include "gem/scar.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace gem::cli {

namespace {

const char* const kDomainNames[] = {"healthcare", "law",           "finance",      "stem",
                                    "commonsense", "conversational", "multilingual", "domain_adaptive"};

std::string target_name(const router::RoutingDecision& d, int domains) {
    if (d.is_general()) return "general";
    if (domains == 8) return kDomainNames[*d.domain];
    return "domain_" + std::to_string(*d.domain);
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

Json curve_json(const std::vector<model::EpochStats>& curve) {
    Json a = Json::array();
    for (const auto& e : curve)
        a.push_back({{"epoch", e.epoch},
                     {"mean_loss", e.mean_loss},
                     {"mean_task_loss", e.mean_task_loss},
                     {"accuracy", e.accuracy}});
    return a;
}

std::string curve_dat(const std::vector<model::EpochStats>& curve) {
    std::ostringstream os;
    os << std::setprecision(10) << "# epoch mean_loss\n";
    for (const auto& e : curve) os << e.epoch << ' ' << e.mean_loss << '\n';
    return os.str();
}

}  // namespace

std::string CommandOutput::render(OutputFormat format) const {
    switch (format) {
        case OutputFormat::csv: return csv;
        case OutputFormat::table: return table;
        case OutputFormat::json: {
            std::string out;
            for (const auto& line : json_lines) out += line.dump() + '\n';
            out += (json_lines.empty() ? json.dump(2) : json.dump()) + '\n';
            return out;
        }
    }
    return {};
}

// ---------------------------------------------------------------------------

CommandOutput cmd_reproduce(const ExperimentConfig&) {
    CommandOutput out;
    const auto rows = build_repro_table();
    Json rows_json = Json::array();
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& r : rows) {
        rows_json.push_back({{"label", r.label},
                             {"published_value", r.published_value},
                             {"computed_value", r.computed_value},
                             {"abs_diff", r.abs_diff},
                             {"tolerance", r.tolerance},
                             {"status", to_string(r.status)},
                             {"note", r.note}});
        ++counts[static_cast<int>(r.status)];
    }
    out.json = {{"command", "reproduce"},
                {"rows", rows_json},
                {"summary", {{"match", counts[0]}, {"mismatch", counts[1]}, {"noted_inconsistency", counts[2]}}}};
    out.table = format_repro_table(rows);
    out.csv = repro_csv(rows);
    out.files["reproduce.csv"] = out.csv;
    out.exit_code = has_unexpected_mismatch(rows) ? kReproMismatch : kSuccess;
    return out;
}

CommandOutput cmd_route(const ExperimentConfig& config) {
    CommandOutput out;
    const auto& rc = config.route.router;
    const router::RouterEncoder encoder(rc, config.seed);
    const auto& tokens = config.route.tokens;

    std::map<std::string, int> histogram;
    std::ostringstream table;
    std::ostringstream csv;
    csv << std::setprecision(17) << "token_index,token,max_prob,target\n";
    table << "token_index  token     max_prob  target\n";
    router::route_sequence(tokens, encoder, [&](const router::RoutingDecision& d) {
        const std::string target = target_name(d, rc.domains);
        out.json_lines.push_back({{"token_index", d.token_index},
                                  {"token", tokens[d.token_index]},
                                  {"max_prob", d.max_prob},
                                  {"target", target}});
        ++histogram[target];
        csv << d.token_index << ',' << tokens[d.token_index] << ',' << d.max_prob << ',' << target << '\n';
        table << std::setw(11) << d.token_index << "  " << std::setw(5) << tokens[d.token_index] << "  "
              << std::setw(11) << std::fixed << std::setprecision(6) << d.max_prob << std::defaultfloat << "  "
              << target << '\n';
    });

    Json hist = Json::object();
    for (const auto& [k, v] : histogram) hist[k] = v;
    out.json = {{"command", "route"},
                {"tokens", tokens.size()},
                {"tau", rc.tau},
                {"router_params", encoder.param_count()},
                {"router_flops_per_token", router::router_flops(rc)},
                {"histogram", hist}};
    table << "\nhistogram:";
    for (const auto& [k, v] : histogram) table << ' ' << k << '=' << v;
    table << '\n';
    out.table = table.str();
    out.csv = csv.str();
    out.files["routing_log.csv"] = out.csv;
    return out;
}

Matrix synthetic_embeddings(const ScarSettings& s, std::uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed ^ 0x5ca7ULL));
    Matrix centers(static_cast<std::size_t>(s.source_clusters), static_cast<std::size_t>(s.dim));
    fill_normal(centers, rng, 1.0);
    for (std::size_t c = 0; c < centers.rows(); ++c) {
        auto row = centers.row(c);
        const double nrm = norm(row);
        for (double& v : row) v /= nrm;
    }
    Matrix points(static_cast<std::size_t>(s.n), static_cast<std::size_t>(s.dim));
    std::normal_distribution<double> noise(0.0, s.noise / std::sqrt(static_cast<double>(s.dim)));
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto center = centers.row(i % centers.rows());
        auto row = points.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = center[j] + noise(rng);
    }
    return points;
}

CommandOutput cmd_scar(const ExperimentConfig& config) {
    const auto& s = config.scar;
    const Matrix points = s.embeddings.empty() ? synthetic_embeddings(s, config.seed)
                                               : Matrix::from_rows(s.embeddings);
    const std::size_t n = points.rows();
    const auto k = static_cast<std::size_t>(s.k);
    if (k > n) throw std::invalid_argument("scar.k: more clusters than points");
    const auto plan = scar::kmeans_cosine(points, k, static_cast<std::size_t>(s.max_iters), config.seed);
    const auto mask = scar::build_mask(plan.assignments);
    const auto att = scar::masked_attention(points, points, points, mask);

    std::vector<std::size_t> sizes(k, 0);
    for (auto a : plan.assignments) ++sizes[a];
    double size_sq = 0.0;
    for (auto c : sizes) size_sq += static_cast<double>(c * c);
    double max_row_dev = 0.0;
    double max_off_mask = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            sum += att.weights(i, j);
            if (!mask.at(i, j)) max_off_mask = std::max(max_off_mask, att.weights(i, j));
        }
        max_row_dev = std::max(max_row_dev, std::abs(sum - 1.0));
    }

    const auto dense = scar::dense_ops(n);
    const auto sparse = scar::scar_ops(n, k);
    const double red = scar::reduction(static_cast<double>(dense), static_cast<double>(sparse));

    CommandOutput out;
    out.json = {{"command", "scar"},
                {"n", n},
                {"k", k},
                {"dim", points.cols()},
                {"dense_ops", dense},
                {"scar_ops", sparse},
                {"reduction", red},
                {"mask_density", mask.density()},
                {"mask_density_from_cluster_sizes", size_sq / static_cast<double>(n * n)},
                {"cluster_sizes", sizes},
                {"objective", plan.objective},
                {"objective_history", plan.objective_history},
                {"iterations_run", plan.iterations_run},
                {"attention_max_row_sum_deviation", max_row_dev},
                {"attention_max_off_mask_weight", max_off_mask}};

    std::ostringstream csv;
    csv << std::setprecision(17) << "iteration,objective\n";
    std::ostringstream dat;
    dat << std::setprecision(17) << "# iteration objective\n";
    for (std::size_t i = 0; i < plan.objective_history.size(); ++i) {
        csv << i + 1 << ',' << plan.objective_history[i] << '\n';
        dat << i + 1 << ' ' << plan.objective_history[i] << '\n';
    }
    out.csv = csv.str();
    out.files["kmeans_objective.dat"] = dat.str();
    if (s.dump_mask) out.files["mask.pbm"] = scar::to_pbm(mask);

    std::ostringstream t;
    t << "points            " << n << " x " << points.cols() << '\n'
      << "clusters          " << k << " (" << plan.iterations_run << " iterations, objective "
      << fmt(plan.objective) << ")\n"
      << "dense ops         " << dense << '\n'
      << "clustered ops     " << sparse << '\n'
      << "reduction         " << fmt(red, 10) << '\n'
      << "mask density      " << fmt(mask.density(), 10) << '\n'
      << "cluster sizes    ";
    for (auto c : sizes) t << ' ' << c;
    t << '\n';
    out.table = t.str();
    return out;
}

CommandOutput cmd_quantize(const ExperimentConfig& config) {
    const auto& q = config.quantize;
    CommandOutput out;
    Json rows = Json::array();
    std::ostringstream csv;
    std::ostringstream dat;
    std::ostringstream t;
    csv << std::setprecision(17) << "bits,empirical_mse,uniform_noise_mse,ratio,noise_model\n";
    dat << std::setprecision(17) << "# bits empirical_mse\n";
    t << "bits  empirical_mse   step^2/12       ratio     sigma^2/b^2\n";
    for (int b : q.bits) {
        const double mse = quant::empirical_quant_mse(b, q.samples, config.seed);
        const double pred = quant::uniform_noise_mse(b);
        const double model = quant::quant_noise_model(q.sigma, b);
        rows.push_back({{"bits", b},
                        {"empirical_mse", mse},
                        {"uniform_noise_mse", pred},
                        {"ratio", mse / pred},
                        {"noise_model", model}});
        csv << b << ',' << mse << ',' << pred << ',' << mse / pred << ',' << model << '\n';
        dat << b << ' ' << mse << '\n';
        t << std::setw(4) << b << "  " << std::setw(14) << fmt(mse) << "  " << std::setw(14) << fmt(pred) << "  "
          << std::setw(8) << fmt(mse / pred, 4) << "  " << fmt(model) << '\n';
    }
    Json pm;
    quant::to_json(pm, q.precision_map);
    const double mem = quant::hybrid_memory(q.precision_map);
    out.json = {{"command", "quantize"},
                {"samples", q.samples},
                {"rows", rows},
                {"precision_map", pm},
                {"hybrid_memory_bytes", mem}};
    t << "\nhybrid memory: " << fmt(mem / 1e6, 10) << " MB\n";
    out.csv = csv.str();
    out.table = t.str();
    out.files["quant_mse.dat"] = dat.str();
    return out;
}

CommandOutput cmd_metrics(const ExperimentConfig& config) {
    const auto rows = metrics::compute_all(config.metric_records);
    CommandOutput out;
    Json a = Json::array();
    std::ostringstream t;
    t << std::left << std::setw(20) << "model" << std::right << std::setw(10) << "in" << std::setw(10) << "out_avg"
      << std::setw(10) << "GG" << std::setw(10) << "CDTR" << std::setw(10) << "DSI" << "  pair\n";
    for (const auto& r : rows) {
        Json j;
        metrics::to_json(j, r);
        a.push_back(j);
        t << std::left << std::setw(20) << r.model << std::right << std::fixed << std::setprecision(4)
          << std::setw(10) << r.in_domain << std::setw(10) << r.out_domain_avg << std::setw(10) << r.gg
          << std::setw(10) << r.cdtr << std::setw(10) << r.dsi << std::defaultfloat << "  " << r.domain_pair
          << '\n';
    }
    out.json = {{"command", "metrics"}, {"rows", a}};
    out.csv = metrics::to_csv(rows);
    out.table = t.str();
    out.files["metrics.csv"] = out.csv;
    return out;
}

CommandOutput cmd_cost(const ExperimentConfig& config) {
    const auto& c = config.cost;
    metrics::PlatformProfile platform;
    bool found = false;
    for (const auto& p : c.platforms)
        if (p.name == c.platform) {
            platform = p;
            found = true;
        }
    if (!found) platform = metrics::find_platform(c.platform);

    metrics::CostReport report;
    report.flops_per_token = metrics::flops_per_token(c.layers, c.hidden);
    if (c.include_router) report.flops_per_token += router::router_flops(c.router);
    report.latency_s_per_token = c.latency_s.value_or(report.flops_per_token / platform.peak_flops);
    report.power_w = c.power_w.value_or(platform.typical_power_watts);
    report.energy_j_per_token = metrics::energy_per_token(report.power_w, report.latency_s_per_token);
    report.memory_bytes = quant::memory_bytes(c.params, c.bits);
    const auto session = metrics::session_cost(c.tokens, report.latency_s_per_token, report.energy_j_per_token);

    const auto n = static_cast<std::uint64_t>(c.seq_len);
    Json sweep = Json::array();
    const double first_ops =
        c.scar_k.empty() ? 0.0 : static_cast<double>(scar::scar_ops(n, static_cast<std::uint64_t>(c.scar_k[0])));
    for (int k : c.scar_k) {
        const double ops = static_cast<double>(scar::scar_ops(n, static_cast<std::uint64_t>(k)));
        sweep.push_back({{"k", k},
                         {"scar_ops", ops},
                         {"reduction_vs_dense", scar::reduction(static_cast<double>(scar::dense_ops(n)), ops)},
                         {"reduction_vs_first", scar::reduction(first_ops, ops)}});
    }

    Json rj;
    metrics::to_json(rj, report);
    Json pj;
    metrics::to_json(pj, platform);
    CommandOutput out;
    out.json = {{"command", "cost"},
                {"platform", pj},
                {"report", rj},
                {"memory_fraction_of_ram", report.memory_bytes / platform.ram_bytes},
                {"alu_energy_ratio_vs_8bit", metrics::energy_ratio(c.bits, 8)},
                {"session", {{"tokens", c.tokens},
                             {"total_latency_s", session.total_latency_s},
                             {"total_energy_j", session.total_energy_j}}},
                {"scar_sweep", sweep}};
    std::ostringstream csv;
    csv << std::setprecision(17)
        << "platform,flops_per_token,latency_s_per_token,power_w,energy_j_per_token,memory_bytes,tokens,"
           "total_latency_s,total_energy_j\n"
        << platform.name << ',' << report.flops_per_token << ',' << report.latency_s_per_token << ','
        << report.power_w << ',' << report.energy_j_per_token << ',' << report.memory_bytes << ',' << c.tokens
        << ',' << session.total_latency_s << ',' << session.total_energy_j << '\n';
    out.csv = csv.str();
    std::ostringstream t;
    t << "platform          " << platform.name << '\n'
      << "FLOPs/token       " << fmt(report.flops_per_token, 10) << '\n'
      << "latency/token     " << fmt(report.latency_s_per_token, 10) << " s\n"
      << "power             " << fmt(report.power_w) << " W\n"
      << "energy/token      " << fmt(report.energy_j_per_token, 10) << " J\n"
      << "weight memory     " << fmt(report.memory_bytes / 1e6, 10) << " MB\n"
      << "session           " << c.tokens << " tokens, " << fmt(session.total_latency_s, 10) << " s, "
      << fmt(session.total_energy_j, 10) << " J\n";
    for (const auto& s : sweep)
        t << "clustered k=" << s["k"].get<int>() << "      ops " << s["scar_ops"].get<double>() << ", reduction vs dense "
          << fmt(s["reduction_vs_dense"].get<double>(), 7) << ", vs first " << fmt(s["reduction_vs_first"].get<double>(), 4)
          << '\n';
    out.table = t.str();
    return out;
}

CommandOutput cmd_train(const ExperimentConfig& config) {
    model::GemModel m(config.model);
    const model::TaskSpec& spec = config.train.task;
    const auto task = model::make_synthetic_task(spec);
    const double before = model::accuracy(m, task.samples);
    const auto curve = model::train(m, task, config.train.train);
    const double after = model::accuracy(m, task.samples);

    Json model_json;
    model::to_json(model_json, config.model);
    Json train_json;
    model::to_json(train_json, config.train.train);
    Json task_json;
    model::to_json(task_json, spec);
    CommandOutput out;
    out.json = {{"command", "train"},
                {"model", model_json},
                {"train", train_json},
                {"task", task_json},
                {"param_count", m.param_count()},
                {"accuracy_before", before},
                {"accuracy_after", after},
                {"curve", curve_json(curve)}};
    std::ostringstream csv;
    csv << std::setprecision(17) << "epoch,mean_loss,mean_task_loss,accuracy\n";
    for (const auto& e : curve) csv << e.epoch << ',' << e.mean_loss << ',' << e.mean_task_loss << ',' << e.accuracy << '\n';
    out.csv = csv.str();
    std::ostringstream t;
    t << "epoch   mean_loss   task_loss   accuracy\n";
    for (const auto& e : curve)
        t << std::setw(5) << e.epoch << "  " << std::setw(10) << fmt(e.mean_loss) << "  " << std::setw(10)
          << fmt(e.mean_task_loss) << "  " << std::setw(9) << fmt(e.accuracy, 4) << '\n';
    t << "accuracy " << fmt(before, 4) << " -> " << fmt(after, 4) << '\n';
    out.table = t.str();
    out.files["learning_curve.csv"] = out.csv;
    out.files["learning_curve.dat"] = curve_dat(curve);
    if (config.train.save_checkpoint) out.files["checkpoint.json"] = model::checkpoint_to_json(m).dump() + '\n';
    return out;
}

CommandOutput cmd_forget(const ExperimentConfig& config) {
    Json runs = Json::array();
    std::ostringstream csv;
    csv << std::setprecision(17)
        << "seed,general_acc_before,general_acc_after_plain,general_acc_after_kd,new_task_acc_plain,new_task_acc_kd\n";
    std::ostringstream curves;
    curves << std::setprecision(17) << "seed,phase,epoch,mean_loss,mean_task_loss,accuracy\n";
    std::ostringstream t;
    t << "seed   before   plain     kd   new(plain)  new(kd)\n";
    int kd_not_worse = 0;
    double advantage = 0.0;
    for (auto seed : config.forget.seeds) {
        auto setup = model::ForgettingSetup::reference(seed);
        setup.model = config.model;
        setup.model.seed = seed;
        if (config.forget.base_task) setup.base = *config.forget.base_task;
        if (config.forget.new_task) setup.next = *config.forget.new_task;
        if (config.forget.base_train) setup.base_train = *config.forget.base_train;
        if (config.forget.finetune_train) setup.finetune_train = *config.forget.finetune_train;
        const auto base = model::make_synthetic_task(setup.base);
        const auto next = model::make_synthetic_task(setup.next);
        const auto r = model::forgetting_experiment(setup.model, base, next, setup.base_train, setup.finetune_train);

        if (r.general_acc_after_kd >= r.general_acc_after_plain) ++kd_not_worse;
        advantage += r.general_acc_after_kd - r.general_acc_after_plain;
        runs.push_back({{"seed", seed},
                        {"general_acc_before", r.general_acc_before},
                        {"general_acc_after_plain", r.general_acc_after_plain},
                        {"general_acc_after_kd", r.general_acc_after_kd},
                        {"new_task_acc_plain", r.new_task_acc_plain},
                        {"new_task_acc_kd", r.new_task_acc_kd},
                        {"base_curve", curve_json(r.base_curve)},
                        {"plain_curve", curve_json(r.plain_curve)},
                        {"kd_curve", curve_json(r.kd_curve)}});
        csv << seed << ',' << r.general_acc_before << ',' << r.general_acc_after_plain << ','
            << r.general_acc_after_kd << ',' << r.new_task_acc_plain << ',' << r.new_task_acc_kd << '\n';
        const std::pair<const char*, const std::vector<model::EpochStats>*> phases[] = {
            {"base", &r.base_curve}, {"plain", &r.plain_curve}, {"kd", &r.kd_curve}};
        for (const auto& [name, curve] : phases)
            for (const auto& e : *curve)
                curves << seed << ',' << name << ',' << e.epoch << ',' << e.mean_loss << ',' << e.mean_task_loss
                       << ',' << e.accuracy << '\n';
        t << std::setw(4) << seed << std::fixed << std::setprecision(3) << std::setw(9) << r.general_acc_before
          << std::setw(8) << r.general_acc_after_plain << std::setw(7) << r.general_acc_after_kd << std::setw(12)
          << r.new_task_acc_plain << std::setw(9) << r.new_task_acc_kd << std::defaultfloat << '\n';
    }
    const double mean_adv = advantage / static_cast<double>(config.forget.seeds.size());
    CommandOutput out;
    out.json = {{"command", "forget"},
                {"runs", runs},
                {"summary", {{"seeds", config.forget.seeds.size()},
                             {"kd_not_worse", kd_not_worse},
                             {"mean_retention_advantage", mean_adv}}}};
    out.csv = csv.str();
    t << "\nkd >= plain in " << kd_not_worse << " of " << config.forget.seeds.size()
      << " seeds, mean retention advantage " << fmt(mean_adv, 4) << '\n';
    out.table = t.str();
    out.files["forgetting.csv"] = out.csv;
    out.files["forgetting_curves.csv"] = curves.str();
    return out;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
    CLI::App app{"Desk-scale GEM mechanisms: routing, clustered attention, hybrid quantization, metrics"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<OutputFormat> format;
    const std::map<std::string, OutputFormat> formats{
        {"json", OutputFormat::json}, {"csv", OutputFormat::csv}, {"table", OutputFormat::table}};
    app.add_option("--config", config_path, "experiment config file (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "directory for report, CSV and data files");
    app.add_option("--format", format, "stdout format (default: table for reproduce, json otherwise)")->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));

    using Command = CommandOutput (*)(const ExperimentConfig&);
    const std::vector<std::tuple<const char*, const char*, Command>> commands = {
        {"reproduce", "recompute every published closed-form number", cmd_reproduce},
        {"route", "route a token sequence and log each decision", cmd_route},
        {"scar", "cluster embeddings and report attention sparsity", cmd_scar},
        {"quantize", "empirical quantization error and hybrid memory", cmd_quantize},
        {"metrics", "GG / CDTR / DSI table", cmd_metrics},
        {"cost", "FLOPs, latency, energy and memory on a platform", cmd_cost},
        {"train", "train the toy model on a synthetic task", cmd_train},
        {"forget", "plain vs distillation fine-tuning retention", cmd_forget},
    };
    std::map<std::string, Command> by_name;
    for (const auto& [name, help, fn] : commands) {
        app.add_subcommand(name, help)->fallthrough();
        by_name[name] = fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kSuccess : kUsageError;
    }

    try {
        ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed) config.apply_seed(*seed);
        config.validate();
        const std::string name = app.get_subcommands().front()->get_name();
        const CommandOutput out = by_name.at(name)(config);
        std::cout << out.render(format.value_or(name == "reproduce" ? OutputFormat::table : OutputFormat::json));
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            const std::filesystem::path dir(out_dir);
            std::ofstream(dir / (name + ".json")) << out.render(OutputFormat::json);
            for (const auto& [file, content] : out.files) std::ofstream(dir / file) << content;
        }
        return out.exit_code;
    } catch (const model::DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    }
}

}  // namespace gem::cli
