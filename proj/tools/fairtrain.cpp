#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fairtrain/experiment.hpp"
#include "fairtrain/log.hpp"

namespace {

using namespace fairtrain;
using nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::string format = "json";
    std::string split = "test";
    std::string run_dir;
    std::vector<std::string> runs;
};

std::vector<std::uint64_t> seeds_for(const ExperimentConfig& config, const Options& o) {
    return o.seed ? std::vector<std::uint64_t>{*o.seed} : config.seeds;
}

std::optional<std::filesystem::path> out_override(const Options& o) {
    if (o.out) return std::filesystem::path(*o.out);
    return std::nullopt;
}

json cell_counts(const Dataset& d) {
    const auto joint = empirical_joint(d);
    json cells = json::array();
    for (int y = 0; y < d.label_count; ++y)
        for (int g = 0; g < d.group_count; ++g) cells.push_back({{"y", y}, {"g", g}, {"count", joint.count(y, g)}});
    return cells;
}

int cmd_gen(const Options& o) {
    const auto config = load_config(o.config);
    const auto data = load_data(config);
    auto root = output_root(config, out_override(o));
    if (!o.out) root /= "data-" + config_hash(config);
    std::filesystem::create_directories(root);
    const char* ext = config.data.format == DatasetFormat::text ? ".txt" : ".bin";
    const std::pair<const char*, const Dataset*> parts[] = {{"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}};
    json summary = json::object();
    for (const auto& [name, ds] : parts) {
        const auto path = root / (std::string(name) + ext);
        save_dataset(*ds, path, config.data.format);
        summary[name] = {{"path", path.string()}, {"size", ds->size()}, {"cells", cell_counts(*ds)}};
    }
    if (o.format == "csv") {
        std::cout << "split,y,g,count\n";
        for (const auto& [name, ds] : parts) {
            for (const auto& c : summary[name]["cells"]) {
                std::cout << name << "," << c["y"] << "," << c["g"] << "," << c["count"] << "\n";
            }
        }
    } else {
        std::cout << summary.dump(2) << "\n";
    }
    return 0;
}

void print_reports(const std::string& label, const std::vector<std::pair<std::uint64_t, FairnessReport>>& reports,
                   const std::string& format) {
    if (format == "csv") {
        std::cout << csv_header() << "\n";
        for (const auto& [seed, r] : reports) std::cout << csv_row(label, r) << "\n";
        return;
    }
    json out = json::array();
    for (const auto& [seed, r] : reports) out.push_back({{"model", label}, {"report", to_json(r)}});
    std::cout << out.dump(2) << "\n";
}

int cmd_train(const Options& o, bool force_inlp) {
    auto config = load_config(o.config);
    if (force_inlp && !config.inlp.enabled) {
        std::ifstream is(o.config);
        json doc = json::parse(is);
        doc["inlp"]["enabled"] = true;
        config = parse_config(doc, std::filesystem::path(o.config).parent_path());
    }
    const auto data = load_data(config);
    const auto root = output_root(config, out_override(o));
    std::vector<std::pair<std::uint64_t, FairnessReport>> reports;
    for (auto seed : seeds_for(config, o)) {
        const auto outcome = run_experiment(config, data, seed);
        const auto dir = run_directory(root, config, seed);
        write_run(dir, config, seed, outcome);
        std::cerr << "wrote " << dir.string() << "\n";
        reports.emplace_back(seed, outcome.test_report);
    }
    print_reports(config.label, reports, o.format);
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto config = load_config(o.config);
    const auto data = load_data(config);
    const auto root = output_root(config, out_override(o));
    for (auto seed : seeds_for(config, o)) {
        const auto dir = run_directory(root, config, seed);
        if (!std::filesystem::exists(dir / "checkpoint.bin")) {
            throw std::runtime_error("no checkpoint at " + dir.string() + "; run `train` first");
        }
        const auto checkpoint = load_checkpoint(dir / "checkpoint.bin");
        const auto outcome = run_sweep(config, data, checkpoint);
        write_sweep(dir, outcome, config.sweep_rule);
        const auto& cell = outcome.matrix.cells[outcome.selected];
        if (o.format == "csv") {
            std::cout << "seed,alpha,beta,dev_accuracy,dev_rms_gap,test_accuracy,test_rms_gap\n"
                      << seed << "," << format_real(cell.alpha) << "," << format_real(cell.beta) << ","
                      << format_real(cell.accuracy) << "," << format_real(cell.rms_gap) << ","
                      << format_real(outcome.test_report.accuracy) << "," << format_real(outcome.test_report.rms_gap)
                      << "\n";
        } else {
            std::cout << json({{"seed", seed},
                               {"alpha", cell.alpha},
                               {"beta", cell.beta},
                               {"dev_accuracy", cell.accuracy},
                               {"test", to_json(outcome.test_report)}})
                             .dump(2)
                      << "\n";
        }
    }
    return 0;
}

int cmd_eval(const Options& o) {
    const auto config = load_config(o.config);
    const auto data = load_data(config);
    const auto root = output_root(config, out_override(o));
    std::vector<std::pair<std::uint64_t, FairnessReport>> reports;
    for (auto seed : seeds_for(config, o)) {
        const auto dir = o.run_dir.empty() ? run_directory(root, config, seed) : std::filesystem::path(o.run_dir);
        const auto run = load_run(dir);
        const Dataset& target = o.split == "dev" ? data.dev : data.test;
        const auto predictions = run_predictions(config, run.checkpoint.model, run.projection ? &*run.projection : nullptr,
                                                 run.inlp_classifier ? &*run.inlp_classifier : nullptr, target);
        reports.emplace_back(run.checkpoint.seed,
                             evaluate({predictions, target.labels, target.groups, target.label_count, target.group_count},
                                      run.checkpoint.seed));
        if (!o.run_dir.empty()) break;
    }
    print_reports(config.label, reports, o.format);
    return 0;
}

int cmd_report(const Options& o) {
    std::vector<std::filesystem::path> dirs;
    for (const auto& r : o.runs) {
        const std::filesystem::path p(r);
        if (std::filesystem::exists(p / "run.json") || !std::filesystem::is_directory(p)) {
            dirs.push_back(p);
            continue;
        }
        // a root holding several run directories
        std::vector<std::filesystem::path> found;
        for (const auto& entry : std::filesystem::directory_iterator(p)) {
            if (entry.is_directory() && std::filesystem::exists(entry.path() / "run.json")) found.push_back(entry.path());
        }
        std::sort(found.begin(), found.end());
        if (found.empty()) dirs.push_back(p);
        dirs.insert(dirs.end(), found.begin(), found.end());
    }
    const auto rows = summarize_runs(dirs);
    if (o.format == "csv") {
        std::cout << summary_csv(rows);
    } else {
        std::cout << summary_json(rows).dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fairness-aware training toolkit"};
    app.require_subcommand(1);
    Options o;
    bool quiet = false;
    app.add_flag("--quiet", quiet, "Suppress warnings");

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* c = sub->add_option("--config", o.config, "Experiment config (JSON)");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Run a single seed instead of eval.seeds");
        sub->add_option("--out", o.out, "Output root (default: config output, $FAIRTRAIN_OUT, or ./runs)");
        sub->add_option("--format", o.format, "Printed output format")->check(CLI::IsMember({"json", "csv"}));
    };

    auto* gen = app.add_subcommand("gen", "Write train/dev/test dataset files");
    add_common(gen);
    auto* train = app.add_subcommand("train", "Balance, train, evaluate and write run artifacts");
    add_common(train);
    auto* sweep = app.add_subcommand("sweep", "Alpha/beta soft-gating sweep over a trained gated run");
    add_common(sweep);
    auto* inlp = app.add_subcommand("inlp", "Train with nullspace projection of the last hidden layer");
    add_common(inlp);
    auto* eval = app.add_subcommand("eval", "Re-evaluate a stored run");
    add_common(eval);
    eval->add_option("--split", o.split, "Split to evaluate")->check(CLI::IsMember({"dev", "test"}));
    eval->add_option("--run", o.run_dir, "Run directory (default: derived from config and seed)");
    auto* report = app.add_subcommand("report", "Aggregate seed runs into a summary table");
    report->add_option("runs", o.runs, "Run directories or roots containing them")->required();
    report->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "csv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }
    set_warnings_enabled(!quiet);

    try {
        if (gen->parsed()) return cmd_gen(o);
        if (train->parsed()) return cmd_train(o, false);
        if (inlp->parsed()) return cmd_train(o, true);
        if (sweep->parsed()) return cmd_sweep(o);
        if (eval->parsed()) return cmd_eval(o);
        if (report->parsed()) return cmd_report(o);
    } catch (const ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
