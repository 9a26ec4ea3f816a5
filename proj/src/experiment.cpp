#include "fairtrain/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

namespace fairtrain {

namespace {

using nlohmann::json;

Dataset generate_split(const ExperimentConfig& config, std::size_t n, double skew, std::uint64_t stream) {
    SyntheticConfig c = config.data.synthetic;
    c.n = n;
    c.skew = skew;
    c.seed = derive_seed(config.data.synthetic.seed, stream);
    return generate_synthetic(c);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

EvalRecord record_of(const std::vector<int>& predictions, const Dataset& data) {
    return {predictions, data.labels, data.groups, data.label_count, data.group_count};
}

GatePolicy resolved_gate(const GatePolicy& gate, int group_count) {
    GatePolicy g = gate;
    if (g.kind == GatePolicy::Kind::bayes && g.prior.empty()) {
        g.prior.assign(static_cast<std::size_t>(group_count), 1.0 / group_count);
    }
    return g;
}

json probe_to_json(const LinearProbe& p) {
    json rows = json::array();
    for (std::size_t r = 0; r < p.weight.rows(); ++r) {
        rows.push_back(std::vector<double>(p.weight.row(r).begin(), p.weight.row(r).end()));
    }
    return {{"class_count", p.class_count},
            {"weight", rows},
            {"bias", p.bias},
            {"train_accuracy", p.train_accuracy},
            {"iterations", p.iterations}};
}

LinearProbe probe_from_json(const json& j) {
    LinearProbe p;
    p.class_count = j.at("class_count").get<int>();
    const auto rows = j.at("weight").get<std::vector<std::vector<double>>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    if (rows.empty() || rows.size() != p.bias.size()) throw std::runtime_error("malformed classifier");
    p.weight = Matrix(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != p.weight.cols()) throw std::runtime_error("malformed classifier");
        std::copy(rows[r].begin(), rows[r].end(), p.weight.row(r).begin());
    }
    p.train_accuracy = j.at("train_accuracy").get<double>();
    p.iterations = j.at("iterations").get<std::size_t>();
    return p;
}

}  // namespace

Splits load_data(const ExperimentConfig& config) {
    const auto& d = config.data;
    Splits s;
    if (d.train_path) {
        s.train = load_dataset(*d.train_path);
        s.dev = load_dataset(*d.dev_path);
        s.test = load_dataset(*d.test_path);
        if (s.dev.dim() != s.train.dim() || s.test.dim() != s.train.dim()) {
            throw std::invalid_argument("data splits differ in feature width");
        }
        if (s.dev.label_count != s.train.label_count || s.test.label_count != s.train.label_count ||
            s.dev.group_count != s.train.group_count || s.test.group_count != s.train.group_count) {
            throw std::invalid_argument("data splits differ in label or group count");
        }
        return s;
    }
    if (d.split_sizes) {
        const double eval_skew = d.eval_skew.value_or(d.synthetic.skew);
        s.train = generate_split(config, d.split_sizes->train, d.synthetic.skew, 0);
        s.dev = generate_split(config, d.split_sizes->dev, eval_skew, 1);
        s.test = generate_split(config, d.split_sizes->test, eval_skew, 2);
        return s;
    }
    auto parts = split(generate_synthetic(d.synthetic), d.fractions, d.synthetic.seed);
    s.train = std::move(parts.train);
    s.dev = std::move(parts.dev);
    s.test = std::move(parts.test);
    return s;
}

std::vector<int> run_predictions(const ExperimentConfig& config, const Model& model,
                                 const ProjectionStack* projection, const LinearProbe* classifier,
                                 const Dataset& dataset) {
    if (projection != nullptr && classifier != nullptr) {
        const auto hidden = last_hidden(std::get<Mlp>(model), dataset.features);
        return classifier->predict(apply_projection(*projection, hidden));
    }
    return predict(model, dataset.features, dataset.groups, resolved_gate(config.gating, dataset.group_count));
}

RunOutcome run_experiment(const ExperimentConfig& config, const Splits& data, std::uint64_t seed) {
    RunOutcome out;
    ModelSpec spec = config.model;
    spec.input_dim = data.train.dim();
    spec.label_count = data.train.label_count;
    spec.group_count = data.train.group_count;
    TrainConfig tc = config.train;
    tc.seed = seed;

    const auto start = std::chrono::steady_clock::now();
    if (config.inlp.enabled) {
        InlpPipelineConfig pc;
        pc.base = config.balance.method == BalanceMethod::rw   ? InlpBase::rw
                  : config.balance.method == BalanceMethod::ds ? InlpBase::ds
                                                               : InlpBase::standard;
        pc.objective = config.balance.objective;
        pc.spec = spec;
        pc.train = tc;
        pc.inlp = config.inlp.config;
        auto result = inlp_pipeline(data.train, data.dev, data.test, pc);
        out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.history = std::move(result.base.history);
        out.selected_epoch = result.base.selected_epoch;
        out.weights = std::move(result.weights);
        out.train_size = pc.base == InlpBase::ds ? downsample_indices(data.train, pc.objective, seed).size()
                                                 : data.train.size();
        out.checkpoint = {std::move(result.base.model), spec, seed};
        out.projection = std::move(result.stack);
        out.inlp_classifier = std::move(result.classifier);
        out.dev_report = evaluate(record_of(result.dev_predictions, data.dev), seed);
        out.test_report = evaluate(record_of(result.test_predictions, data.test), seed);
        return out;
    }

    const Dataset* train_set = &data.train;
    Dataset sampled;
    if (config.balance.method == BalanceMethod::rw) {
        out.weights = compute_weights(data.train, config.balance.objective, config.balance.convention);
    } else if (config.balance.method == BalanceMethod::ds) {
        sampled = downsample(data.train, config.balance.objective, seed);
        train_set = &sampled;
    }
    out.train_size = train_set->size();
    // gated models always train with the 1-hot gate; the configured policy is
    // an inference-time choice
    auto result = train(spec, *train_set, data.dev, out.weights, GatePolicy::onehot(), tc);
    out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.history = std::move(result.history);
    out.selected_epoch = result.selected_epoch;
    out.checkpoint = {std::move(result.model), spec, seed};
    out.dev_report = evaluate(record_of(run_predictions(config, out.checkpoint.model, nullptr, nullptr, data.dev), data.dev), seed);
    out.test_report = evaluate(record_of(run_predictions(config, out.checkpoint.model, nullptr, nullptr, data.test), data.test), seed);
    return out;
}

std::filesystem::path output_root(const ExperimentConfig& config,
                                  const std::optional<std::filesystem::path>& override_root) {
    if (override_root) return *override_root;
    if (config.output) return *config.output;
    if (const char* env = std::getenv("FAIRTRAIN_OUT"); env != nullptr && *env != '\0') return env;
    return "runs";
}

std::filesystem::path run_directory(const std::filesystem::path& root, const ExperimentConfig& config,
                                    std::uint64_t seed) {
    return root / (config_hash(config) + "-seed" + std::to_string(seed));
}

void write_run(const std::filesystem::path& dir, const ExperimentConfig& config, std::uint64_t seed,
               const RunOutcome& outcome) {
    std::filesystem::create_directories(dir);
    save_checkpoint(outcome.checkpoint, dir / "checkpoint.bin");

    // wall-clock values live in timing.json only, so every other file is
    // reproducible bit for bit
    std::string history;
    json epoch_seconds = json::array();
    for (const auto& r : outcome.history) {
        json j = to_json(r);
        j.erase("seconds");
        history += j.dump() + "\n";
        epoch_seconds.push_back(r.seconds);
    }
    write_text(dir / "history.jsonl", history);
    write_text(dir / "report_dev.json", to_json(outcome.dev_report).dump(2) + "\n");
    write_text(dir / "report_test.json", to_json(outcome.test_report).dump(2) + "\n");
    if (!outcome.weights.empty()) save_weights(outcome.weights, dir / "weights.txt");
    if (outcome.projection) save_projection(*outcome.projection, dir / "projection.bin");
    if (outcome.inlp_classifier) {
        json c = probe_to_json(*outcome.inlp_classifier);
        c["probe_accuracy"] = outcome.projection->probe_accuracy;
        c["majority"] = outcome.projection->majority;
        write_text(dir / "classifier.json", c.dump(2) + "\n");
    }
    const bool standard_baseline = config.model.kind == ModelKind::standard &&
                                   config.balance.method == BalanceMethod::none && !config.inlp.enabled;
    json run = {{"label", config.label},
                {"seed", seed},
                {"config_hash", config_hash(config)},
                {"config", config.source},
                {"selected_epoch", outcome.selected_epoch},
                {"train_size", outcome.train_size},
                {"parameters", parameter_count(outcome.checkpoint.model)},
                {"standard_baseline", standard_baseline}};
    write_text(dir / "run.json", run.dump(2) + "\n");
    write_text(dir / "timing.json",
               json({{"train_seconds", outcome.train_seconds}, {"epoch_seconds", epoch_seconds}}).dump(2) + "\n");
}

StoredRun load_run(const std::filesystem::path& dir) {
    StoredRun run;
    run.checkpoint = load_checkpoint(dir / "checkpoint.bin");
    if (std::filesystem::exists(dir / "projection.bin")) {
        run.projection = load_projection(dir / "projection.bin");
        run.inlp_classifier = probe_from_json(read_json(dir / "classifier.json"));
    }
    return run;
}

SweepOutcome run_sweep(const ExperimentConfig& config, const Splits& data, const Checkpoint& checkpoint) {
    const auto* gated = std::get_if<GatedModel>(&checkpoint.model);
    if (gated == nullptr) throw std::invalid_argument("checkpoint/model mismatch: the sweep needs a gated checkpoint");
    if (gated->input_dim() != data.dev.dim() || gated->group_count() != data.dev.group_count ||
        gated->output_dim() != static_cast<std::size_t>(data.dev.label_count)) {
        throw std::invalid_argument("checkpoint/model mismatch: checkpoint shape does not fit the configured data");
    }
    SweepOutcome out;
    out.matrix = alpha_beta_sweep(*gated, data.dev, config.sweep_resolution);
    out.selected = select_coefficients(out.matrix, config.sweep_rule);
    const auto& cell = out.matrix.cells[out.selected];
    const auto predictions =
        predict(checkpoint.model, data.test.features, data.test.groups, GatePolicy::soft(cell.alpha, cell.beta));
    out.test_report = evaluate(record_of(predictions, data.test), checkpoint.seed);
    return out;
}

void write_sweep(const std::filesystem::path& dir, const SweepOutcome& outcome, const SelectionRule& rule) {
    std::filesystem::create_directories(dir);
    write_text(dir / "sweep.csv", sweep_csv(outcome.matrix));
    const auto& cell = outcome.matrix.cells[outcome.selected];
    json selection = {{"alpha", cell.alpha},
                      {"beta", cell.beta},
                      {"rule", to_string(rule.mode)},
                      {"threshold_offset", rule.threshold_offset},
                      {"dev_accuracy", cell.accuracy},
                      {"test", to_json(outcome.test_report)}};
    selection["dev_rms_gap"] = std::isfinite(cell.rms_gap) ? json(cell.rms_gap) : json(nullptr);
    write_text(dir / "sweep_selection.json", selection.dump(2) + "\n");
}

std::vector<SummaryRow> summarize_runs(const std::vector<std::filesystem::path>& run_dirs) {
    if (run_dirs.empty()) throw std::invalid_argument("no run directories given");
    std::vector<std::string> missing;
    for (const auto& dir : run_dirs) {
        for (const char* file : {"run.json", "report_test.json", "timing.json"}) {
            if (!std::filesystem::exists(dir / file)) missing.push_back((dir / file).string());
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing run artifacts:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw std::runtime_error(msg);
    }

    struct Group {
        std::vector<FairnessReport> reports;
        std::vector<double> seconds;
        std::vector<std::uint64_t> seeds;
        bool standard = false;
    };
    std::vector<std::string> order;
    std::map<std::string, Group> groups;
    for (const auto& dir : run_dirs) {
        const json run = read_json(dir / "run.json");
        const auto label = run.at("label").get<std::string>();
        const auto seed = run.at("seed").get<std::uint64_t>();
        auto [it, inserted] = groups.try_emplace(label);
        if (inserted) order.push_back(label);
        auto& g = it->second;
        if (std::find(g.seeds.begin(), g.seeds.end(), seed) != g.seeds.end()) {
            throw std::runtime_error("duplicate run for '" + label + "' seed " + std::to_string(seed));
        }
        g.seeds.push_back(seed);
        g.reports.push_back(report_from_json(read_json(dir / "report_test.json")));
        g.seconds.push_back(read_json(dir / "timing.json").at("train_seconds").get<double>());
        g.standard = g.standard || run.value("standard_baseline", false);
    }
    std::string thin;
    for (const auto& label : order) {
        if (groups[label].reports.size() < 2) {
            thin += "\n  '" + label + "' has " + std::to_string(groups[label].reports.size()) + " seed run(s)";
        }
    }
    if (!thin.empty()) throw std::runtime_error("every model needs at least two seed runs:" + thin);

    std::vector<SummaryRow> rows;
    double standard_seconds = 0.0;
    std::size_t standard_runs = 0;
    for (const auto& label : order) {
        auto& g = groups[label];
        rows.push_back({label, g.reports.size(), aggregate(g.reports), 0.0, std::nullopt});
        if (g.standard) {
            for (double s : g.seconds) standard_seconds += s;
            standard_runs += g.seconds.size();
        }
    }
    double best_accuracy = 0.0, best_gap = 1.0;
    for (const auto& r : rows) {
        best_accuracy = std::max(best_accuracy, r.test.mean.at("accuracy"));
        best_gap = std::min(best_gap, r.test.mean.at("rms_gap"));
    }
    for (auto& r : rows) {
        r.tradeoff = tradeoff(r.test.mean.at("accuracy"), r.test.mean.at("rms_gap"), best_accuracy, best_gap);
        if (standard_runs > 0) {
            const auto& g = groups[r.label];
            double mean = 0.0;
            for (double s : g.seconds) mean += s;
            mean /= static_cast<double>(g.seconds.size());
            r.relative_time = mean / (standard_seconds / static_cast<double>(standard_runs));
        }
    }
    return rows;
}

json summary_json(const std::vector<SummaryRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        json j = {{"label", r.label}, {"runs", r.runs}, {"test", to_json(r.test)}, {"tradeoff", r.tradeoff}};
        j["relative_time"] = r.relative_time ? json(*r.relative_time) : json(nullptr);
        out.push_back(j);
    }
    return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "model,runs,accuracy_mean,accuracy_std,rms_gap_mean,rms_gap_std,tradeoff,relative_time\n";
    for (const auto& r : rows) {
        out += r.label + "," + std::to_string(r.runs) + "," + format_real(r.test.mean.at("accuracy")) + "," +
               format_real(r.test.std.at("accuracy")) + "," + format_real(r.test.mean.at("rms_gap")) + "," +
               format_real(r.test.std.at("rms_gap")) + "," + format_real(r.tradeoff) + "," +
               (r.relative_time ? format_real(*r.relative_time) : "") + "\n";
    }
    return out;
}

}  // namespace fairtrain
