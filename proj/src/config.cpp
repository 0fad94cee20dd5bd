#include "pcn/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pcn/error.hpp"
#include "pcn/io_util.hpp"

namespace pcn {

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    std::size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& v) {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

uint64_t parse_u64(const std::string& v) {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw std::invalid_argument(v);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"k", [](RunConfig& c, const std::string& v) { c.k = parse_int(v); }},
        {"modes", [](RunConfig& c, const std::string& v) { c.modes = parse_int_list(v); }},
        {"dim", [](RunConfig& c, const std::string& v) { c.dim = parse_int(v); }},
        {"tail_exponent",
         [](RunConfig& c, const std::string& v) { c.tail_exponent = parse_double(v); }},
        {"head_count", [](RunConfig& c, const std::string& v) { c.head_count = parse_int(v); }},
        {"mode_separation",
         [](RunConfig& c, const std::string& v) { c.mode_separation = parse_double(v); }},
        {"noise_scale",
         [](RunConfig& c, const std::string& v) { c.noise_scale = parse_double(v); }},
        {"warp", [](RunConfig& c, const std::string& v) { c.warp = parse_bool(v); }},
        {"k_base", [](RunConfig& c, const std::string& v) { c.k_base = parse_int(v); }},
        {"val_frac", [](RunConfig& c, const std::string& v) { c.val_frac = parse_double(v); }},
        {"layer_dims",
         [](RunConfig& c, const std::string& v) { c.layer_dims = parse_int_list(v); }},
        {"n_way", [](RunConfig& c, const std::string& v) { c.n_way = parse_int(v); }},
        {"n_support", [](RunConfig& c, const std::string& v) { c.n_support = parse_int(v); }},
        {"n_query", [](RunConfig& c, const std::string& v) { c.n_query = parse_int(v); }},
        {"episodes_per_epoch",
         [](RunConfig& c, const std::string& v) { c.episodes_per_epoch = parse_int(v); }},
        {"tau_train", [](RunConfig& c, const std::string& v) { c.tau_train = parse_double(v); }},
        {"alpha", [](RunConfig& c, const std::string& v) { c.alpha = parse_double(v); }},
        {"stop_grad_q",
         [](RunConfig& c, const std::string& v) { c.stop_grad_q = parse_bool(v); }},
        {"m_base", [](RunConfig& c, const std::string& v) { c.m_base = parse_int(v); }},
        {"m_novel", [](RunConfig& c, const std::string& v) { c.m_novel = parse_int(v); }},
        {"lr", [](RunConfig& c, const std::string& v) { c.lr = parse_double(v); }},
        {"beta1", [](RunConfig& c, const std::string& v) { c.beta1 = parse_double(v); }},
        {"beta2", [](RunConfig& c, const std::string& v) { c.beta2 = parse_double(v); }},
        {"eps", [](RunConfig& c, const std::string& v) { c.eps = parse_double(v); }},
        {"weight_decay",
         [](RunConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
        {"patience", [](RunConfig& c, const std::string& v) { c.patience = parse_int(v); }},
        {"max_epochs", [](RunConfig& c, const std::string& v) { c.max_epochs = parse_int(v); }},
        {"n_train_shot",
         [](RunConfig& c, const std::string& v) { c.n_train_shot = parse_int(v); }},
        {"n_test_shot", [](RunConfig& c, const std::string& v) { c.n_test_shot = parse_int(v); }},
        {"folds", [](RunConfig& c, const std::string& v) { c.folds = parse_int(v); }},
        {"recall_ks",
         [](RunConfig& c, const std::string& v) { c.recall_ks = parse_int_list(v); }},
        {"tau_test", [](RunConfig& c, const std::string& v) { c.tau_test = parse_double(v); }},
        {"delta_tau_grid",
         [](RunConfig& c, const std::string& v) { c.delta_tau_grid = parse_double_list(v); }},
        {"alpha_grid",
         [](RunConfig& c, const std::string& v) { c.alpha_grid = parse_double_list(v); }},
        {"shot_sweep",
         [](RunConfig& c, const std::string& v) { c.shot_sweep = parse_int_list(v); }},
        {"novel_sweep",
         [](RunConfig& c, const std::string& v) { c.novel_sweep = parse_int_list(v); }},
        {"method", [](RunConfig& c, const std::string& v) { c.method = v; }},
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
        {"dataset", [](RunConfig& c, const std::string& v) { c.dataset = v; }},
        {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
        {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
        {"pn_checkpoint", [](RunConfig& c, const std::string& v) { c.pn_checkpoint = v; }},
        {"pcn_checkpoint", [](RunConfig& c, const std::string& v) { c.pcn_checkpoint = v; }},
    };
    return table;
}

void apply_assignment(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where) {
    auto it = setters().find(key);
    if (it == setters().end()) {
        throw ConfigError(where + ": unknown config key '" + key + "'");
    }
    try {
        it->second(cfg, value);
    } catch (const std::exception&) {
        throw ConfigError(where + ": bad value '" + value + "' for key '" + key + "'");
    }
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_int(item));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_double(item));
    }
    return out;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string cleaned = trim(line);
        if (cleaned.empty() || cleaned.front() == '#') continue;
        std::size_t eq = cleaned.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
        }
        apply_assignment(base, trim(cleaned.substr(0, eq)), trim(cleaned.substr(eq + 1)),
                         path + ":" + std::to_string(line_no));
    }
    return base;
}

void apply_config_override(RunConfig& cfg, const std::string& assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    }
    apply_assignment(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)),
                     "--set " + assignment);
}

namespace {

template <typename T>
std::string join_list(const std::vector<T>& items) {
    std::ostringstream ss;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) ss << ',';
        if constexpr (std::is_same_v<T, double>) {
            ss << format_g17(items[i]);
        } else {
            ss << items[i];
        }
    }
    return ss.str();
}

}  // namespace

std::string dump_config(const RunConfig& c) {
    std::ostringstream out;
    out << "k=" << c.k << "\n";
    out << "modes=" << join_list(c.modes) << "\n";
    out << "dim=" << c.dim << "\n";
    out << "tail_exponent=" << format_g17(c.tail_exponent) << "\n";
    out << "head_count=" << c.head_count << "\n";
    out << "mode_separation=" << format_g17(c.mode_separation) << "\n";
    out << "noise_scale=" << format_g17(c.noise_scale) << "\n";
    out << "warp=" << (c.warp ? 1 : 0) << "\n";
    out << "k_base=" << c.k_base << "\n";
    out << "val_frac=" << format_g17(c.val_frac) << "\n";
    out << "layer_dims=" << join_list(c.layer_dims) << "\n";
    out << "n_way=" << c.n_way << "\n";
    out << "n_support=" << c.n_support << "\n";
    out << "n_query=" << c.n_query << "\n";
    out << "episodes_per_epoch=" << c.episodes_per_epoch << "\n";
    out << "tau_train=" << format_g17(c.tau_train) << "\n";
    out << "alpha=" << format_g17(c.alpha) << "\n";
    out << "stop_grad_q=" << (c.stop_grad_q ? 1 : 0) << "\n";
    out << "m_base=" << c.m_base << "\n";
    out << "m_novel=" << c.m_novel << "\n";
    out << "lr=" << format_g17(c.lr) << "\n";
    out << "beta1=" << format_g17(c.beta1) << "\n";
    out << "beta2=" << format_g17(c.beta2) << "\n";
    out << "eps=" << format_g17(c.eps) << "\n";
    out << "weight_decay=" << format_g17(c.weight_decay) << "\n";
    out << "patience=" << c.patience << "\n";
    out << "max_epochs=" << c.max_epochs << "\n";
    out << "n_train_shot=" << c.n_train_shot << "\n";
    out << "n_test_shot=" << c.n_test_shot << "\n";
    out << "folds=" << c.folds << "\n";
    out << "recall_ks=" << join_list(c.recall_ks) << "\n";
    out << "tau_test=" << format_g17(c.tau_test) << "\n";
    out << "delta_tau_grid=" << join_list(c.delta_tau_grid) << "\n";
    out << "alpha_grid=" << join_list(c.alpha_grid) << "\n";
    out << "shot_sweep=" << join_list(c.shot_sweep) << "\n";
    out << "novel_sweep=" << join_list(c.novel_sweep) << "\n";
    out << "method=" << c.method << "\n";
    out << "seed=" << c.seed << "\n";
    out << "dataset=" << c.dataset << "\n";
    out << "checkpoint=" << c.checkpoint << "\n";
    out << "out=" << c.out << "\n";
    out << "pn_checkpoint=" << c.pn_checkpoint << "\n";
    out << "pcn_checkpoint=" << c.pcn_checkpoint << "\n";
    return out.str();
}

}  // namespace pcn
