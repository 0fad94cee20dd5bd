#ifndef PCN_CONFIG_HPP
#define PCN_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace pcn {

// One flat bag of settings for every CLI command. Precedence: CLI flag >
// config file > the defaults below.
struct RunConfig {
    // datagen
    int k = 20;
    std::vector<int> modes = {3};
    int dim = 12;
    double tail_exponent = 1.0;
    int head_count = 200;
    double mode_separation = 5.0;
    double noise_scale = 1.0;
    bool warp = true;
    int k_base = 15;
    double val_frac = 0.2;

    // trunk: hidden dims then embedding dim; the dataset input dim is
    // prepended at train time.
    std::vector<int> layer_dims = {32, 32, 16};

    // episodes
    int n_way = 10;
    int n_support = 10;
    int n_query = 10;
    int episodes_per_epoch = 200;
    double tau_train = 1.0;
    double alpha = 0.5;
    bool stop_grad_q = false;
    int m_base = 10;
    int m_novel = 4;

    // optimizer
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    int patience = 10;
    int max_epochs = 30;

    // low-shot protocol
    int n_train_shot = 5;
    int n_test_shot = 5;
    int folds = 10;
    std::vector<int> recall_ks = {5, 10};
    double tau_test = -1.0;  // < 0 means "use tau_train"
    std::vector<double> delta_tau_grid = {-0.5, 0.0, 0.5, 1.0};
    std::vector<double> alpha_grid = {0.0, 0.5};
    std::vector<int> shot_sweep;   // empty: single run at n_train_shot
    std::vector<int> novel_sweep;  // empty: all novel classes

    // run
    std::string method = "pcn";  // pcn | pn
    uint64_t seed = 0;
    std::string dataset;
    std::string checkpoint;
    std::string out;
    std::string pn_checkpoint;
    std::string pcn_checkpoint;

    double effective_tau_test() const { return tau_test < 0.0 ? tau_train : tau_test; }
};

// Parses "key=value" lines ('#' comments and blank lines allowed). Unknown
// keys and unparsable values raise ConfigError with the line number.
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Applies one "key=value" override.
void apply_config_override(RunConfig& cfg, const std::string& assignment);

// The key=value serialization of every setting (used by `--dump-config`).
std::string dump_config(const RunConfig& cfg);

std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace pcn

#endif  // PCN_CONFIG_HPP
