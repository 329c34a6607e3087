#include "hypood/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hypood/datagen.hpp"
#include "hypood/errors.hpp"
#include "hypood/objectives.hpp"

namespace hypood {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

long parse_long(const std::string& field, const std::string& value) {
    size_t pos = 0;
    long v;
    try {
        v = std::stol(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError(field + ": expected an integer, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError(field + ": expected an integer, got '" + value + "'");
    return v;
}

int parse_int(const std::string& field, const std::string& value) {
    return static_cast<int>(parse_long(field, value));
}

uint64_t parse_u64(const std::string& field, const std::string& value) {
    size_t pos = 0;
    unsigned long long v;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError(field + ": expected a non-negative integer, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError(field + ": expected a non-negative integer, got '" + value + "'");
    return v;
}

double parse_real(const std::string& field, const std::string& value) {
    size_t pos = 0;
    double v;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError(field + ": expected a number, got '" + value + "'");
    }
    if (pos != value.size()) throw ConfigError(field + ": expected a number, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& field, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(field + ": expected true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& field, const std::string& value) {
    std::vector<int> out;
    for (const auto& item : split_list(value)) out.push_back(parse_int(field, item));
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (data.source != "synthetic" && data.source != "csv")
        throw ConfigError("data.source: must be 'synthetic' or 'csv', got '" + data.source + "'");
    if (data.source == "synthetic") {
        if (data.classes < 2) throw ConfigError("data.classes: need >= 2");
        if (data.train_per_class < 1) throw ConfigError("data.train_per_class: need >= 1");
        if (data.test_per_class < 1) throw ConfigError("data.test_per_class: need >= 1");
        if (data.input_dim < 2) throw ConfigError("data.input_dim: need >= 2");
        if (!(data.separation > 0.0)) throw ConfigError("data.separation: need > 0");
        if (data.noise_sigma < 0.0) throw ConfigError("data.noise_sigma: need >= 0");
        if (data.ood_samples < 1) throw ConfigError("data.ood_samples: need >= 1");
        if (data.ood_noise_sigma < 0.0) throw ConfigError("data.ood_noise_sigma: need >= 0");
        if (data.ood_modes.empty()) throw ConfigError("data.ood: need at least one OOD set");
        for (const auto& mode : data.ood_modes)
            parse_ood_mode(mode);  // throws InvalidParam on bad names
    } else {
        if (data.train_csv.empty()) throw ConfigError("data.train_csv: required for csv source");
        if (data.test_csv.empty()) throw ConfigError("data.test_csv: required for csv source");
        if (data.ood_csv.empty())
            throw ConfigError("data.ood_csv_<name>: at least one OOD csv required");
    }

    try {
        model.validate();
    } catch (const InvalidParam& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    train.validate();

    if (eval.scorers.empty()) throw ConfigError("eval.scorers: need at least one scorer");
    for (const auto& s : eval.scorers)
        if (s != "mahalanobis" && s != "max_cosine" && s != "msp")
            throw ConfigError("eval.scorers: unknown scorer '" + s + "'");
    if (eval.feature_space != "projection" && eval.feature_space != "penultimate")
        throw ConfigError("eval.feature_space: must be 'projection' or 'penultimate'");
    if (eval.separability != "angles" && eval.separability != "cosine")
        throw ConfigError("eval.separability: must be 'angles' or 'cosine'");
    if (eval.compactness != "literal" && eval.compactness != "per_class")
        throw ConfigError("eval.compactness: must be 'literal' or 'per_class'");
    if (eval.prototype_source != "empirical" && eval.prototype_source != "ema")
        throw ConfigError("eval.prototype_source: must be 'empirical' or 'ema'");
    if (eval.prototype_source == "ema" && eval.feature_space != "projection")
        throw ConfigError("eval.prototype_source: ema prototypes live in projection space");
    if (output_dir.empty()) throw ConfigError("output.dir: must not be empty");
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& source_name) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    size_t line_no = 0;

    auto fail = [&](const std::string& msg) {
        throw ConfigError(source_name + ":" + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail("malformed section header '" + s + "'");
            section = s.substr(1, s.size() - 2);
            if (section != "data" && section != "model" && section != "train" &&
                section != "eval" && section != "output")
                fail("unknown section [" + section + "]");
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos) fail("expected key = value, got '" + s + "'");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (section.empty()) fail("key '" + key + "' outside any section");
        const std::string field = section + "." + key;

        if (section == "data") {
            if (key == "source") cfg.data.source = value;
            else if (key == "classes") cfg.data.classes = parse_int(field, value);
            else if (key == "train_per_class") cfg.data.train_per_class = parse_int(field, value);
            else if (key == "test_per_class") cfg.data.test_per_class = parse_int(field, value);
            else if (key == "input_dim") cfg.data.input_dim = parse_int(field, value);
            else if (key == "separation") cfg.data.separation = parse_real(field, value);
            else if (key == "noise_sigma") cfg.data.noise_sigma = parse_real(field, value);
            else if (key == "ood") cfg.data.ood_modes = split_list(value);
            else if (key == "ood_samples") cfg.data.ood_samples = parse_int(field, value);
            else if (key == "ood_noise_sigma") cfg.data.ood_noise_sigma = parse_real(field, value);
            else if (key == "seed") cfg.data.seed = parse_u64(field, value);
            else if (key == "train_csv") cfg.data.train_csv = value;
            else if (key == "test_csv") cfg.data.test_csv = value;
            else if (key.rfind("ood_csv_", 0) == 0) {
                const std::string name = key.substr(8);
                if (name.empty()) fail("data.ood_csv_<name>: empty set name");
                cfg.data.ood_csv.push_back({name, value});
            } else fail("unknown key '" + field + "'");
        } else if (section == "model") {
            if (key == "input_dim") {
                if (value == "auto") {
                    cfg.model_input_dim_auto = true;
                } else {
                    cfg.model_input_dim_auto = false;
                    cfg.model.input_dim = parse_int(field, value);
                }
            } else if (key == "hidden_dims") cfg.model.hidden_dims = parse_int_list(field, value);
            else if (key == "penultimate_dim") cfg.model.penultimate_dim = parse_int(field, value);
            else if (key == "proj_hidden_dims")
                cfg.model.proj_hidden_dims = parse_int_list(field, value);
            else if (key == "proj_dim") cfg.model.proj_dim = parse_int(field, value);
            else if (key == "activation") cfg.model.activation = value;
            else fail("unknown key '" + field + "'");
        } else if (section == "train") {
            if (key == "epochs") cfg.train.epochs = parse_int(field, value);
            else if (key == "batch_size") cfg.train.batch_size = parse_int(field, value);
            else if (key == "lr0") cfg.train.lr0 = parse_real(field, value);
            else if (key == "momentum") cfg.train.momentum = parse_real(field, value);
            else if (key == "weight_decay") cfg.train.weight_decay = parse_real(field, value);
            else if (key == "schedule") cfg.train.schedule = parse_schedule(value);
            else if (key == "seed") cfg.train.seed = parse_u64(field, value);
            else if (key == "prototype_alpha")
                cfg.train.prototype_alpha = parse_real(field, value);
            else if (key == "prototype_update")
                cfg.train.prototype_update = parse_prototype_update(value);
            else if (key == "prototype_init")
                cfg.train.prototype_init = parse_prototype_init(value);
            else if (key == "loss") cfg.train.loss.kind = parse_loss_kind(value);
            else if (key == "tau") cfg.train.loss.tau = parse_real(field, value);
            else if (key == "lambda_c") cfg.train.loss.lambda_c = parse_real(field, value);
            else if (key == "lambda_d") cfg.train.loss.lambda_d = parse_real(field, value);
            else if (key == "mean_reduce") cfg.train.loss.mean_reduce = parse_bool(field, value);
            else if (key == "detach_prototypes")
                cfg.train.loss.detach_prototypes = parse_bool(field, value);
            else if (key == "augment_noise_sigma")
                cfg.train.augment_noise_sigma = parse_real(field, value);
            else if (key == "augment_scale_lo")
                cfg.train.augment_scale_lo = parse_real(field, value);
            else if (key == "augment_scale_hi")
                cfg.train.augment_scale_hi = parse_real(field, value);
            else if (key == "probe_l2") cfg.train.probe_l2 = parse_real(field, value);
            else if (key == "probe_iters") cfg.train.probe_iters = parse_int(field, value);
            else fail("unknown key '" + field + "'");
        } else if (section == "eval") {
            if (key == "scorers") cfg.eval.scorers = split_list(value);
            else if (key == "subsample_seed") cfg.eval.subsample_seed = parse_u64(field, value);
            else if (key == "feature_space") cfg.eval.feature_space = value;
            else if (key == "separability") cfg.eval.separability = value;
            else if (key == "compactness") cfg.eval.compactness = value;
            else if (key == "prototype_source") cfg.eval.prototype_source = value;
            else fail("unknown key '" + field + "'");
        } else {  // output
            if (key == "dir") cfg.output_dir = value;
            else fail("unknown key '" + field + "'");
        }
    }

    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source_name + ": " + e.what());
    } catch (const InvalidParam& e) {
        throw ConfigError(source_name + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str(), path);
}

std::string resolved_config_ini(const ExperimentConfig& cfg) {
    std::ostringstream out;
    auto real = [](double v) { return format_double17(v); };
    auto join = [](const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(v[i]);
        }
        return s;
    };
    auto join_str = [](const std::vector<std::string>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            s += v[i];
        }
        return s;
    };

    out << "[data]\n";
    out << "source = " << cfg.data.source << "\n";
    if (cfg.data.source == "synthetic") {
        out << "classes = " << cfg.data.classes << "\n";
        out << "train_per_class = " << cfg.data.train_per_class << "\n";
        out << "test_per_class = " << cfg.data.test_per_class << "\n";
        out << "input_dim = " << cfg.data.input_dim << "\n";
        out << "separation = " << real(cfg.data.separation) << "\n";
        out << "noise_sigma = " << real(cfg.data.noise_sigma) << "\n";
        out << "ood = " << join_str(cfg.data.ood_modes) << "\n";
        out << "ood_samples = " << cfg.data.ood_samples << "\n";
        out << "ood_noise_sigma = " << real(cfg.data.ood_noise_sigma) << "\n";
        out << "seed = " << cfg.data.seed << "\n";
    } else {
        out << "train_csv = " << cfg.data.train_csv << "\n";
        out << "test_csv = " << cfg.data.test_csv << "\n";
        for (const auto& [name, path] : cfg.data.ood_csv)
            out << "ood_csv_" << name << " = " << path << "\n";
    }
    out << "\n[model]\n";
    out << "input_dim = " << (cfg.model_input_dim_auto ? "auto" : std::to_string(cfg.model.input_dim))
        << "\n";
    out << "hidden_dims = " << join(cfg.model.hidden_dims) << "\n";
    out << "penultimate_dim = " << cfg.model.penultimate_dim << "\n";
    out << "proj_hidden_dims = " << join(cfg.model.proj_hidden_dims) << "\n";
    out << "proj_dim = " << cfg.model.proj_dim << "\n";
    out << "activation = " << cfg.model.activation << "\n";

    out << "\n[train]\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "batch_size = " << cfg.train.batch_size << "\n";
    out << "lr0 = " << real(cfg.train.lr0) << "\n";
    out << "momentum = " << real(cfg.train.momentum) << "\n";
    out << "weight_decay = " << real(cfg.train.weight_decay) << "\n";
    out << "schedule = " << (cfg.train.schedule == LrSchedule::Cosine ? "cosine" : "constant")
        << "\n";
    out << "seed = " << cfg.train.seed << "\n";
    out << "prototype_alpha = " << real(cfg.train.prototype_alpha) << "\n";
    out << "prototype_update = "
        << (cfg.train.prototype_update == PrototypeUpdateMode::PerSample ? "per_sample"
                                                                         : "per_batch")
        << "\n";
    out << "prototype_init = "
        << (cfg.train.prototype_init == PrototypeInit::FromData ? "data" : "random") << "\n";
    out << "loss = " << loss_kind_name(cfg.train.loss.kind) << "\n";
    out << "tau = " << real(cfg.train.loss.tau) << "\n";
    out << "lambda_c = " << real(cfg.train.loss.lambda_c) << "\n";
    out << "lambda_d = " << real(cfg.train.loss.lambda_d) << "\n";
    out << "mean_reduce = " << (cfg.train.loss.mean_reduce ? "true" : "false") << "\n";
    out << "detach_prototypes = " << (cfg.train.loss.detach_prototypes ? "true" : "false") << "\n";
    out << "augment_noise_sigma = " << real(cfg.train.augment_noise_sigma) << "\n";
    out << "augment_scale_lo = " << real(cfg.train.augment_scale_lo) << "\n";
    out << "augment_scale_hi = " << real(cfg.train.augment_scale_hi) << "\n";
    out << "probe_l2 = " << real(cfg.train.probe_l2) << "\n";
    out << "probe_iters = " << cfg.train.probe_iters << "\n";

    out << "\n[eval]\n";
    out << "scorers = " << join_str(cfg.eval.scorers) << "\n";
    out << "subsample_seed = " << cfg.eval.subsample_seed << "\n";
    out << "feature_space = " << cfg.eval.feature_space << "\n";
    out << "separability = " << cfg.eval.separability << "\n";
    out << "compactness = " << cfg.eval.compactness << "\n";
    out << "prototype_source = " << cfg.eval.prototype_source << "\n";

    out << "\n[output]\n";
    out << "dir = " << cfg.output_dir << "\n";
    return out.str();
}

}  // namespace hypood
