#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fairtrain/experiment.hpp"

namespace fairtrain {

namespace {

using nlohmann::json;

// Reads one JSON object, tracking which keys were consumed so that unknown
// keys can be reported with their full path.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
        if (j_ != nullptr && !j_->is_object()) throw ConfigError(path_, "must be an object");
    }

    bool has(const std::string& key) const { return j_ != nullptr && j_->contains(key) && !(*j_)[key].is_null(); }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* raw(const std::string& key) {
        seen_.insert(key);
        return has(key) ? &(*j_)[key] : nullptr;
    }

    Section child(const std::string& key) { return Section(raw(key), field(key)); }

    double real(const std::string& key, double fallback) {
        const json* v = raw(key);
        if (v == nullptr) return fallback;
        if (!v->is_number()) throw ConfigError(field(key), "must be a number");
        return v->get<double>();
    }

    std::uint64_t count(const std::string& key, std::uint64_t fallback) {
        const json* v = raw(key);
        if (v == nullptr) return fallback;
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer()) {
            const auto i = v->get<std::int64_t>();
            if (i < 0) throw ConfigError(field(key), "must be a non-negative integer");
            return static_cast<std::uint64_t>(i);
        }
        if (v->is_number_float()) {
            const double d = v->get<double>();
            if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
        }
        throw ConfigError(field(key), "must be a non-negative integer");
    }

    bool boolean(const std::string& key, bool fallback) {
        const json* v = raw(key);
        if (v == nullptr) return fallback;
        if (!v->is_boolean()) throw ConfigError(field(key), "must be true or false");
        return v->get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback,
                     std::initializer_list<const char*> allowed = {}) {
        const json* v = raw(key);
        if (v == nullptr) return fallback;
        if (!v->is_string()) throw ConfigError(field(key), "must be a string");
        auto s = v->get<std::string>();
        if (allowed.size() != 0) {
            std::string options;
            for (const char* a : allowed) {
                if (s == a) return s;
                options += options.empty() ? a : std::string(", ") + a;
            }
            throw ConfigError(field(key), "'" + s + "' is not one of: " + options);
        }
        return s;
    }

    void finish() const {
        if (j_ == nullptr) return;
        for (const auto& [key, value] : j_->items()) {
            if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check(const Section& s, const std::string& key, bool ok, const std::string& requirement) {
    if (!ok) throw ConfigError(s.field(key), requirement);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_data(Section s, const std::filesystem::path& base, DataConfig& data) {
    data.format = s.text("format", "binary", {"text", "binary"}) == "text" ? DatasetFormat::text
                                                                          : DatasetFormat::binary;
    const bool has_files = s.has("files"), has_synthetic = s.has("synthetic");
    if (has_files == has_synthetic) {
        throw ConfigError(s.field("files"), "exactly one of data.files and data.synthetic is required");
    }
    if (has_files) {
        Section f = s.child("files");
        for (const char* split : {"train", "dev", "test"}) {
            if (!f.has(split)) throw ConfigError(f.field(split), "missing path");
        }
        data.train_path = resolve(base, f.text("train", ""));
        data.dev_path = resolve(base, f.text("dev", ""));
        data.test_path = resolve(base, f.text("test", ""));
        f.finish();
        s.raw("synthetic");
        s.finish();
        return;
    }
    Section g = s.child("synthetic");
    auto& c = data.synthetic;
    c.n = g.count("n", c.n);
    c.d = g.count("d", c.d);
    check(g, "d", c.d >= 2, "must be at least 2");
    c.skew = g.real("skew", c.skew);
    check(g, "skew", c.skew > 0.0 && c.skew < 1.0, "must lie strictly between 0 and 1");
    c.class_separation = g.real("class_separation", c.class_separation);
    check(g, "class_separation", c.class_separation > 0.0, "must be positive");
    c.group_shift = g.real("group_shift", c.group_shift);
    check(g, "group_shift", c.group_shift >= 0.0, "must be >= 0");
    c.noise_std = g.real("noise_std", c.noise_std);
    check(g, "noise_std", c.noise_std > 0.0, "must be positive");
    c.seed = g.count("seed", c.seed);
    if (g.has("eval_skew")) {
        data.eval_skew = g.real("eval_skew", 0.5);
        check(g, "eval_skew", *data.eval_skew > 0.0 && *data.eval_skew < 1.0,
              "must lie strictly between 0 and 1");
        check(g, "eval_skew", g.has("split_sizes"), "requires split_sizes");
    }
    if (g.has("split_sizes")) {
        Section z = g.child("split_sizes");
        SplitSizes sizes{z.count("train", 0), z.count("dev", 0), z.count("test", 0)};
        check(z, "train", sizes.train > 0, "must be positive");
        check(z, "dev", sizes.dev > 0, "must be positive");
        check(z, "test", sizes.test > 0, "must be positive");
        z.finish();
        data.split_sizes = sizes;
        g.raw("n");
    } else {
        check(g, "n", c.n >= 3, "must be at least 3");
    }
    if (g.has("fractions")) {
        check(g, "fractions", !g.has("split_sizes"), "cannot be combined with split_sizes");
        Section fr = g.child("fractions");
        data.fractions = {fr.real("train", 0.65), fr.real("dev", 0.10), fr.real("test", 0.25)};
        const double total = data.fractions.train + data.fractions.dev + data.fractions.test;
        check(fr, "train", data.fractions.train > 0.0, "must be positive");
        check(fr, "dev", data.fractions.dev > 0.0, "must be positive");
        check(fr, "test", data.fractions.test > 0.0, "must be positive");
        check(fr, "test", std::abs(total - 1.0) < 1e-9, "fractions must sum to 1");
        fr.finish();
    }
    g.finish();
    s.raw("files");
    s.finish();
}

BalanceKind kind_from(const std::string& name) {
    if (name == "group") return BalanceKind::group;
    if (name == "group_given_label") return BalanceKind::group_given_label;
    return BalanceKind::joint;
}

std::string kind_name(BalanceKind kind) {
    switch (kind) {
        case BalanceKind::group: return "group";
        case BalanceKind::group_given_label: return "group_given_label";
        case BalanceKind::joint: return "joint";
    }
    return "joint";
}

std::string method_name(BalanceMethod m) {
    switch (m) {
        case BalanceMethod::none: return "none";
        case BalanceMethod::rw: return "rw";
        case BalanceMethod::ds: return "ds";
    }
    return "none";
}

std::string short_real(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::string default_label(const ExperimentConfig& c) {
    std::string base = c.inlp.enabled ? "INLP" : c.model.kind == ModelKind::gated ? "Gate" : "";
    std::string balance = c.balance.method == BalanceMethod::rw   ? "RW"
                          : c.balance.method == BalanceMethod::ds ? "DS"
                                                                  : "";
    std::string label = base.empty() ? (balance.empty() ? "Standard" : balance)
                                     : (balance.empty() ? base : base + "+" + balance);
    if (c.balance.method != BalanceMethod::none) {
        if (c.balance.objective.kind == BalanceKind::group) label += " (group)";
        if (c.balance.objective.kind == BalanceKind::group_given_label) label += " (group|label)";
        if (c.balance.target_skew) label += " (skew " + short_real(*c.balance.target_skew) + ")";
    }
    if (c.gating.kind == GatePolicy::Kind::uniform) label += " (soft)";
    if (c.gating.kind == GatePolicy::Kind::soft) {
        label += " (soft " + short_real(c.gating.alpha) + "/" + short_real(c.gating.beta) + ")";
    }
    if (c.gating.kind == GatePolicy::Kind::bayes) label += " (bayes)";
    return label;
}

json canonical(const ExperimentConfig& c) {
    json data;
    data["format"] = c.data.format == DatasetFormat::text ? "text" : "binary";
    if (c.data.train_path) {
        data["files"] = {{"train", c.data.train_path->string()},
                         {"dev", c.data.dev_path->string()},
                         {"test", c.data.test_path->string()}};
    } else {
        const auto& g = c.data.synthetic;
        json syn = {{"d", g.d},
                    {"skew", g.skew},
                    {"class_separation", g.class_separation},
                    {"group_shift", g.group_shift},
                    {"noise_std", g.noise_std},
                    {"seed", g.seed}};
        if (c.data.split_sizes) {
            syn["split_sizes"] = {{"train", c.data.split_sizes->train},
                                  {"dev", c.data.split_sizes->dev},
                                  {"test", c.data.split_sizes->test}};
            syn["eval_skew"] = c.data.eval_skew.value_or(g.skew);
        } else {
            syn["n"] = g.n;
            syn["fractions"] = {{"train", c.data.fractions.train},
                                {"dev", c.data.fractions.dev},
                                {"test", c.data.fractions.test}};
        }
        data["synthetic"] = syn;
    }
    json gating = {{"policy", to_string(c.gating.kind)}};
    if (c.gating.kind == GatePolicy::Kind::soft) {
        gating["alpha"] = c.gating.alpha;
        gating["beta"] = c.gating.beta;
    }
    if (c.gating.kind == GatePolicy::Kind::bayes) gating["prior"] = c.gating.prior;
    json balance = {{"method", method_name(c.balance.method)},
                    {"objective", kind_name(c.balance.objective.kind)},
                    {"convention", c.balance.convention == WeightConvention::normalized
                                       ? "normalized"
                                       : "inverse_propensity"}};
    if (c.balance.target_skew) balance["target_skew"] = *c.balance.target_skew;
    return {
        {"label", c.label},
        {"data", data},
        {"model",
         {{"kind", c.model.kind == ModelKind::gated ? "gated" : "standard"},
          {"hidden_width", c.model.hidden_width},
          {"standard_layers", c.model.standard_layers},
          {"encoder_layers", c.model.encoder_layers},
          {"classifier_layers", c.model.classifier_layers},
          {"activation", to_string(c.model.activation)}}},
        {"balance", balance},
        {"gating", gating},
        {"inlp",
         {{"enabled", c.inlp.enabled},
          {"iterations", c.inlp.config.iterations},
          {"stop_margin", c.inlp.config.stop_margin},
          {"l2", c.inlp.config.probe.l2}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"epsilon", c.train.epsilon},
          {"optimizer", c.train.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"dev_selection", to_string(c.train.dev_selection)},
          {"selection_offset", c.train.selection_offset}}},
        {"sweep",
         {{"resolution", c.sweep_resolution},
          {"mode", to_string(c.sweep_rule.mode)},
          {"threshold_offset", c.sweep_rule.threshold_offset}}},
        {"eval", {{"seeds", c.seeds}}},
    };
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    Section root(&document, "");
    c.label = root.text("label", "");

    if (!root.has("data")) throw ConfigError("data", "missing section");
    parse_data(root.child("data"), base_dir, c.data);

    {
        Section m = root.child("model");
        c.model.kind = m.text("kind", "standard", {"standard", "gated"}) == "gated" ? ModelKind::gated
                                                                                  : ModelKind::standard;
        c.model.hidden_width = m.count("hidden_width", c.model.hidden_width);
        check(m, "hidden_width", c.model.hidden_width >= 1, "must be positive");
        c.model.standard_layers = m.count("standard_layers", c.model.standard_layers);
        check(m, "standard_layers", c.model.standard_layers >= 2, "must be at least 2");
        c.model.encoder_layers = m.count("encoder_layers", c.model.encoder_layers);
        check(m, "encoder_layers", c.model.encoder_layers >= 1, "must be positive");
        c.model.classifier_layers = m.count("classifier_layers", c.model.classifier_layers);
        check(m, "classifier_layers", c.model.classifier_layers >= 1, "must be positive");
        c.model.activation = activation_from_string(m.text("activation", "tanh", {"identity", "tanh", "relu"}));
        m.finish();
    }

    {
        Section b = root.child("balance");
        const auto method = b.text("method", "none", {"none", "rw", "ds"});
        c.balance.method = method == "rw" ? BalanceMethod::rw
                           : method == "ds" ? BalanceMethod::ds
                                            : BalanceMethod::none;
        c.balance.objective.kind = kind_from(b.text("objective", "joint", {"group", "group_given_label", "joint"}));
        c.balance.convention = b.text("convention", "normalized", {"normalized", "inverse_propensity"}) == "normalized"
                                   ? WeightConvention::normalized
                                   : WeightConvention::inverse_propensity;
        if (b.has("target_skew")) {
            const double skew = b.real("target_skew", 0.5);
            check(b, "target_skew", skew > 0.0 && skew < 1.0, "must lie strictly between 0 and 1");
            check(b, "target_skew", c.balance.method != BalanceMethod::none, "requires method rw or ds");
            c.balance.target_skew = skew;
            c.balance.objective.target = skew_target(skew);
        }
        b.finish();
    }

    {
        Section g = root.child("gating");
        const auto policy = g.text("policy", "onehot", {"onehot", "uniform", "soft", "bayes"});
        if (g.has("policy") && c.model.kind != ModelKind::gated) {
            throw ConfigError(g.field("policy"), "gating requires model.kind = gated");
        }
        if (policy == "uniform") c.gating = GatePolicy::uniform();
        if (policy == "soft") {
            const double alpha = g.real("alpha", 0.0), beta = g.real("beta", 0.0);
            check(g, "alpha", alpha >= 0.0 && alpha <= 1.0, "must lie in [0, 1]");
            check(g, "beta", beta >= 0.0 && beta <= 1.0, "must lie in [0, 1]");
            c.gating = GatePolicy::soft(alpha, beta);
        }
        if (policy == "bayes") {
            std::vector<double> prior;
            if (const json* p = g.raw("prior")) {
                if (!p->is_array()) throw ConfigError(g.field("prior"), "must be an array of probabilities");
                double total = 0.0;
                for (const auto& v : *p) {
                    if (!v.is_number() || v.get<double>() < 0.0) {
                        throw ConfigError(g.field("prior"), "entries must be non-negative numbers");
                    }
                    prior.push_back(v.get<double>());
                    total += prior.back();
                }
                check(g, "prior", std::abs(total - 1.0) < 1e-9, "must sum to 1");
            }
            c.gating = GatePolicy::bayes(prior);
        }
        g.finish();
    }

    {
        Section s = root.child("inlp");
        c.inlp.enabled = s.boolean("enabled", false);
        c.inlp.config.iterations = s.count("iterations", c.inlp.config.iterations);
        check(s, "iterations", c.inlp.config.iterations >= 1, "must be at least 1");
        c.inlp.config.stop_margin = s.real("stop_margin", c.inlp.config.stop_margin);
        check(s, "stop_margin", c.inlp.config.stop_margin >= 0.0, "must be >= 0");
        c.inlp.config.probe.l2 = s.real("l2", c.inlp.config.probe.l2);
        check(s, "l2", c.inlp.config.probe.l2 > 0.0, "must be positive");
        if (c.inlp.enabled && c.model.kind != ModelKind::standard) {
            throw ConfigError(s.field("enabled"), "INLP requires model.kind = standard");
        }
        s.finish();
    }

    {
        Section t = root.child("train");
        auto& tc = c.train;
        tc.epochs = t.count("epochs", tc.epochs);
        check(t, "epochs", tc.epochs >= 1, "must be positive");
        tc.batch_size = t.count("batch_size", tc.batch_size);
        check(t, "batch_size", tc.batch_size >= 1, "must be positive");
        tc.learning_rate = t.real("learning_rate", tc.learning_rate);
        check(t, "learning_rate", tc.learning_rate > 0.0, "must be positive");
        tc.beta1 = t.real("beta1", tc.beta1);
        check(t, "beta1", tc.beta1 > 0.0 && tc.beta1 < 1.0, "must lie in (0, 1)");
        tc.beta2 = t.real("beta2", tc.beta2);
        check(t, "beta2", tc.beta2 > 0.0 && tc.beta2 < 1.0, "must lie in (0, 1)");
        tc.epsilon = t.real("epsilon", tc.epsilon);
        check(t, "epsilon", tc.epsilon > 0.0, "must be positive");
        tc.optimizer = t.text("optimizer", "adam", {"adam", "sgd"}) == "adam" ? OptimizerKind::adam
                                                                             : OptimizerKind::sgd;
        // debiased runs select epochs by dev gap, baselines by dev accuracy
        const bool debiased = c.balance.method != BalanceMethod::none || c.inlp.enabled;
        tc.dev_selection = dev_selection_from_string(
            t.text("dev_selection", debiased ? "best_dev_gap_at_threshold" : "best_dev_accuracy",
                   {"final_epoch", "best_dev_accuracy", "best_dev_gap_at_threshold"}));
        tc.selection_offset = t.real("selection_offset", tc.selection_offset);
        check(t, "selection_offset", tc.selection_offset >= 0.0, "must be >= 0");
        t.finish();
    }

    {
        Section s = root.child("sweep");
        c.sweep_resolution = s.count("resolution", c.sweep_resolution);
        check(s, "resolution", c.sweep_resolution >= 2, "must be at least 2");
        c.sweep_rule.mode = selection_mode_from_string(
            s.text("mode", "max_accuracy", {"max_accuracy", "min_gap_at_threshold"}));
        c.sweep_rule.threshold_offset = s.real("threshold_offset", c.sweep_rule.threshold_offset);
        check(s, "threshold_offset", c.sweep_rule.threshold_offset >= 0.0, "must be >= 0");
        s.finish();
    }

    {
        Section e = root.child("eval");
        if (const json* seeds = e.raw("seeds")) {
            if (!seeds->is_array() || seeds->empty()) {
                throw ConfigError(e.field("seeds"), "must be a non-empty array of integers");
            }
            c.seeds.clear();
            for (const auto& s : *seeds) {
                if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0)) {
                    throw ConfigError(e.field("seeds"), "entries must be non-negative integers");
                }
                c.seeds.push_back(s.get<std::uint64_t>());
            }
            if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
                throw ConfigError(e.field("seeds"), "seeds must be distinct");
            }
        }
        e.finish();
    }

    if (const json* out = root.raw("output")) {
        if (!out->is_string()) throw ConfigError("output", "must be a path string");
        c.output = resolve(base_dir, out->get<std::string>());
    }
    root.finish();
    if (c.label.empty()) c.label = default_label(c);
    c.source = canonical(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path.string());
    json document;
    try {
        document = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("malformed JSON: ") + e.what());
    }
    return parse_config(document, path.parent_path());
}

std::string config_hash(const ExperimentConfig& config) {
    // sections that do not change a run's artifacts stay out of the hash
    json doc = config.source;
    doc.erase("sweep");
    doc.erase("eval");
    const std::string text = doc.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace fairtrain
