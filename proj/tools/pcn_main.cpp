#include <algorithm>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcn/baselines.hpp"
#include "pcn/config.hpp"
#include "pcn/datagen.hpp"
#include "pcn/episodic.hpp"
#include "pcn/error.hpp"
#include "pcn/evaluate.hpp"
#include "pcn/io_util.hpp"
#include "pcn/metrics.hpp"

namespace {

using namespace pcn;

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    std::string out, dataset, checkpoint;
    bool dump = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* dataset_opt = nullptr;
    CLI::Option* checkpoint_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--set", overrides, "override one config key (key=value), repeatable");
        seed_opt = cmd->add_option("--seed", seed, "master seed");
        out_opt = cmd->add_option("--out", out, "output path prefix");
        dataset_opt = cmd->add_option("--dataset", dataset, "dataset file");
        checkpoint_opt = cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
        cmd->add_flag("--dump-config", dump, "print the resolved config and exit");
    }

    // flag > file > default
    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        for (const std::string& assignment : overrides) apply_config_override(cfg, assignment);
        if (seed_opt && seed_opt->count()) cfg.seed = seed;
        if (out_opt && out_opt->count()) cfg.out = out;
        if (dataset_opt && dataset_opt->count()) cfg.dataset = dataset;
        if (checkpoint_opt && checkpoint_opt->count()) cfg.checkpoint = checkpoint;
        return cfg;
    }
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

GenConfig to_gen_config(const RunConfig& cfg) {
    GenConfig gen;
    gen.n_classes = cfg.k;
    gen.modes_per_class = cfg.modes;
    gen.ambient_dim = cfg.dim;
    gen.tail_exponent = cfg.tail_exponent;
    gen.head_count = cfg.head_count;
    gen.mode_separation = cfg.mode_separation;
    gen.noise_scale = cfg.noise_scale;
    gen.warp = cfg.warp;
    gen.seed = cfg.seed;
    return gen;
}

std::vector<std::size_t> trunk_dims(const RunConfig& cfg, const Dataset& ds) {
    std::vector<std::size_t> dims;
    dims.push_back(ds.dim);
    for (int d : cfg.layer_dims) {
        require(d >= 1, "layer_dims entries must be >= 1");
        dims.push_back(static_cast<std::size_t>(d));
    }
    require(dims.size() >= 2, "layer_dims must name at least the embedding dim");
    return dims;
}

TrainOptions to_train_options(const RunConfig& cfg) {
    TrainOptions opts;
    opts.episode.n_way = cfg.n_way;
    opts.episode.n_support = cfg.n_support;
    opts.episode.n_query = cfg.n_query;
    opts.episode.episodes_per_epoch = cfg.episodes_per_epoch;
    opts.episode.tau_train = cfg.tau_train;
    opts.episode.alpha = cfg.alpha;
    opts.episode.stop_grad_q = cfg.stop_grad_q;
    opts.m_base = cfg.m_base;
    opts.patience = cfg.patience;
    opts.max_epochs = cfg.max_epochs;
    opts.adam.learning_rate = cfg.lr;
    opts.adam.beta1 = cfg.beta1;
    opts.adam.beta2 = cfg.beta2;
    opts.adam.epsilon = cfg.eps;
    opts.adam.weight_decay = cfg.weight_decay;
    opts.seed = cfg.seed;
    return opts;
}

// Applies the method to the config: pn forces a single prototype per class
// and no episodic memory.
void apply_method(RunConfig& cfg) {
    require(cfg.method == "pcn" || cfg.method == "pn",
            "method must be 'pcn' or 'pn', got '" + cfg.method + "'");
    if (cfg.method == "pn") {
        MethodSetup setup = pn_config(EpisodeConfig{});
        cfg.m_base = setup.m_base;
        cfg.m_novel = setup.m_novel;
        cfg.alpha = setup.episode.alpha;
    }
}

// Novel classes ranked by size (ties to lower id), largest first; the
// novel-count sweep extends into the tail by taking prefixes of this order.
std::vector<int> novel_by_size(const Dataset& ds) {
    std::vector<int> novel;
    for (int c = 0; c < ds.n_classes; ++c) {
        if (!ds.is_base(c)) novel.push_back(c);
    }
    std::vector<std::size_t> sizes = ds.class_sizes();
    std::stable_sort(novel.begin(), novel.end(), [&](int a, int b) {
        if (sizes[static_cast<std::size_t>(a)] != sizes[static_cast<std::size_t>(b)]) {
            return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
        }
        return a < b;
    });
    return novel;
}

std::vector<LowshotFold> restrict_folds(const std::vector<LowshotFold>& folds,
                                        const std::vector<int>& active) {
    std::vector<LowshotFold> out = folds;
    for (LowshotFold& fold : out) {
        auto keep = [&](auto& m) {
            for (auto it = m.begin(); it != m.end();) {
                if (std::find(active.begin(), active.end(), it->first) == active.end()) {
                    it = m.erase(it);
                } else {
                    ++it;
                }
            }
        };
        keep(fold.support);
        keep(fold.test);
    }
    return out;
}

LowshotOptions to_lowshot_options(const RunConfig& cfg) {
    LowshotOptions opts;
    opts.m_base = cfg.m_base;
    opts.m_novel = cfg.m_novel;
    opts.tau = cfg.effective_tau_test();
    opts.recall_ks = cfg.recall_ks;
    return opts;
}

int cmd_gen(const RunConfig& cfg) {
    require(!cfg.out.empty(), "gen: out path required");
    require(cfg.tail_exponent > 0.0, "gen: tail_exponent must be > 0");
    Dataset ds = gen_synthetic(to_gen_config(cfg));
    if (cfg.k_base >= 1) {
        ds = split_base_novel(ds, cfg.k_base, cfg.val_frac, cfg.seed);
    }
    save_dataset(cfg.out, ds);

    std::ostringstream meta;
    meta << "pcn-meta v1\n";
    meta << "seed " << cfg.seed << "\n";
    std::vector<std::size_t> sizes = ds.class_sizes();
    for (int c = 0; c < ds.n_classes; ++c) {
        meta << "class " << c << " size " << sizes[static_cast<std::size_t>(c)] << " modes "
             << to_gen_config(cfg).modes_for(c) << " partition "
             << (ds.is_base(c) ? "base" : "novel") << "\n";
    }
    atomic_write_text(cfg.out + ".meta", meta.str());
    std::cout << "wrote " << cfg.out << " (" << ds.size() << " examples, " << ds.n_classes
              << " classes)\n";
    return 0;
}

int cmd_train(RunConfig cfg) {
    require(!cfg.dataset.empty(), "train: dataset path required");
    require(!cfg.out.empty(), "train: out path required");
    apply_method(cfg);
    Dataset ds = load_dataset(cfg.dataset);
    TrainResult result = train(ds, trunk_dims(cfg, ds), to_train_options(cfg));
    save_checkpoint(cfg.out + ".ckpt", result.net, result.bank);

    std::ostringstream history;
    history << "epoch,train_loss,val_mca\n";
    for (const EpochStats& row : result.history) {
        history << row.epoch << ',' << format_g17(row.train_loss) << ','
                << format_g17(row.val_mca) << "\n";
    }
    atomic_write_text(cfg.out + ".history.csv", history.str());
    std::cout << "best epoch " << result.best_epoch << ", val mca "
              << result.history[static_cast<std::size_t>(result.best_epoch)].val_mca << "\n";
    return 0;
}

int cmd_lowshot(RunConfig cfg) {
    require(!cfg.dataset.empty(), "lowshot: dataset path required");
    require(!cfg.checkpoint.empty(), "lowshot: checkpoint path required");
    require(!cfg.out.empty(), "lowshot: out path required");
    apply_method(cfg);
    Dataset ds = load_dataset(cfg.dataset);
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    LowshotOptions opts = to_lowshot_options(cfg);

    if (!cfg.shot_sweep.empty()) {
        std::ostringstream csv;
        csv << "method,shot,metric,mean,std\n";
        for (int shot : cfg.shot_sweep) {
            std::vector<LowshotFold> folds =
                lowshot_folds(ds, shot, cfg.n_test_shot, cfg.folds, cfg.seed);
            LowshotOutcome outcome = lowshot_evaluate(ckpt.net, ds, folds, opts, cfg.seed);
            for (const MetricRow& row : metric_rows(outcome.aggregate)) {
                csv << cfg.method << ',' << shot << ',' << row.name << ','
                    << format_g17(row.mean) << ',' << format_g17(row.std_dev) << "\n";
            }
        }
        atomic_write_text(cfg.out + ".shot_sweep.csv", csv.str());
        std::cout << "wrote " << cfg.out << ".shot_sweep.csv\n";
        return 0;
    }
    if (!cfg.novel_sweep.empty()) {
        std::vector<int> ranked_novel = novel_by_size(ds);
        std::vector<LowshotFold> all_folds =
            lowshot_folds(ds, cfg.n_train_shot, cfg.n_test_shot, cfg.folds, cfg.seed);
        std::ostringstream csv;
        csv << "method,n_novel,metric,mean,std\n";
        for (int n_novel : cfg.novel_sweep) {
            require(n_novel >= 1 && n_novel <= static_cast<int>(ranked_novel.size()),
                    "novel_sweep entries must be in [1, number of novel classes]");
            std::vector<int> active(ranked_novel.begin(), ranked_novel.begin() + n_novel);
            LowshotOutcome outcome = lowshot_evaluate(
                ckpt.net, ds, restrict_folds(all_folds, active), opts, cfg.seed);
            for (const MetricRow& row : metric_rows(outcome.aggregate)) {
                csv << cfg.method << ',' << n_novel << ',' << row.name << ','
                    << format_g17(row.mean) << ',' << format_g17(row.std_dev) << "\n";
            }
        }
        atomic_write_text(cfg.out + ".novel_sweep.csv", csv.str());
        std::cout << "wrote " << cfg.out << ".novel_sweep.csv\n";
        return 0;
    }

    std::vector<LowshotFold> folds =
        lowshot_folds(ds, cfg.n_train_shot, cfg.n_test_shot, cfg.folds, cfg.seed);
    LowshotOutcome outcome = lowshot_evaluate(ckpt.net, ds, folds, opts, cfg.seed);
    atomic_write_text(cfg.out + ".metrics.csv", metrics_csv(outcome.aggregate));
    atomic_write_text(cfg.out + ".per_class.csv", per_class_csv(outcome.aggregate, ds));
    std::cout << "mca_combined " << outcome.aggregate.mca_combined << ", mca_base "
              << outcome.aggregate.mca_base << ", mca_novel " << outcome.aggregate.mca_novel
              << "\n";
    return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& kind) {
    require(!cfg.dataset.empty(), "ablate: dataset path required");
    require(!cfg.out.empty(), "ablate: out path required");
    Dataset ds = load_dataset(cfg.dataset);
    std::vector<LowshotFold> folds =
        lowshot_folds(ds, cfg.n_train_shot, cfg.n_test_shot, cfg.folds, cfg.seed);

    if (kind == "temperature") {
        require(!cfg.checkpoint.empty(), "ablate temperature: checkpoint path required");
        Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
        std::ostringstream csv;
        csv << "delta_tau,metric,mean,std\n";
        for (double delta : cfg.delta_tau_grid) {
            double tau_test = cfg.tau_train + delta;
            require(tau_test > 0.0, "ablate temperature: tau_train + delta must be > 0");
            LowshotOptions opts = to_lowshot_options(cfg);
            opts.tau = tau_test;
            LowshotOutcome outcome = lowshot_evaluate(ckpt.net, ds, folds, opts, cfg.seed);
            for (const MetricRow& row : metric_rows(outcome.aggregate)) {
                csv << format_g17(delta) << ',' << row.name << ',' << format_g17(row.mean)
                    << ',' << format_g17(row.std_dev) << "\n";
            }
        }
        atomic_write_text(cfg.out + ".temperature.csv", csv.str());
        std::cout << "wrote " << cfg.out << ".temperature.csv\n";
        return 0;
    }

    if (kind == "alpha") {
        std::ostringstream csv;
        csv << "method,alpha,metric,mean,std\n";
        for (const std::string& method : {std::string("pcn"), std::string("pn")}) {
            for (double alpha : cfg.alpha_grid) {
                RunConfig run = cfg;
                run.method = method;
                apply_method(run);
                run.alpha = alpha;  // the swept value overrides the method default
                TrainResult result = train(ds, trunk_dims(run, ds), to_train_options(run));
                LowshotOutcome outcome =
                    lowshot_evaluate(result.net, ds, folds, to_lowshot_options(run), run.seed);
                for (const MetricRow& row : metric_rows(outcome.aggregate)) {
                    csv << method << ',' << format_g17(alpha) << ',' << row.name << ','
                        << format_g17(row.mean) << ',' << format_g17(row.std_dev) << "\n";
                }
            }
        }
        atomic_write_text(cfg.out + ".alpha.csv", csv.str());
        std::cout << "wrote " << cfg.out << ".alpha.csv\n";
        return 0;
    }

    if (kind == "posthoc") {
        require(!cfg.pn_checkpoint.empty(), "ablate posthoc: pn_checkpoint required");
        require(!cfg.pcn_checkpoint.empty(), "ablate posthoc: pcn_checkpoint required");
        Checkpoint pn = load_checkpoint(cfg.pn_checkpoint);
        Checkpoint pcn = load_checkpoint(cfg.pcn_checkpoint);
        std::ostringstream csv;
        csv << "model,m_base,m_novel,metric,mean,std\n";
        auto emit = [&](const std::string& model, const EmbedNet& net, int m_base, int m_novel) {
            LowshotOptions opts = to_lowshot_options(cfg);
            opts.m_base = m_base;
            opts.m_novel = m_novel;
            LowshotOutcome outcome = lowshot_evaluate(net, ds, folds, opts, cfg.seed);
            for (const MetricRow& row : metric_rows(outcome.aggregate)) {
                csv << model << ',' << m_base << ',' << m_novel << ',' << row.name << ','
                    << format_g17(row.mean) << ',' << format_g17(row.std_dev) << "\n";
            }
        };
        emit("pn", pn.net, 1, 1);
        emit("pn", pn.net, 1, cfg.m_novel);
        emit("pn", pn.net, cfg.m_base, cfg.m_novel);
        emit("pcn", pcn.net, cfg.m_base, cfg.m_novel);
        atomic_write_text(cfg.out + ".posthoc.csv", csv.str());
        std::cout << "wrote " << cfg.out << ".posthoc.csv\n";
        return 0;
    }

    throw ConfigError("ablate: kind must be temperature, alpha or posthoc, got '" + kind + "'");
}

int cmd_protos(const RunConfig& cfg) {
    require(!cfg.dataset.empty(), "protos: dataset path required");
    require(!cfg.checkpoint.empty(), "protos: checkpoint path required");
    require(!cfg.out.empty(), "protos: out path required");
    Dataset ds = load_dataset(cfg.dataset);
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    const double tau = cfg.effective_tau_test();

    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] == Split::train) train_idx.push_back(i);
    }
    require(!train_idx.empty(), "protos: dataset has no train examples");
    Matrix train_in(train_idx.size(), ds.dim);
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
        auto src = ds.examples.row(train_idx[i]);
        std::copy(src.begin(), src.end(), train_in.row(i).begin());
    }
    Matrix train_embs = net_forward(ckpt.net, train_in);

    std::ostringstream protos_csv;
    protos_csv << "class_id,z,nn_train_index,nn_distance\n";
    for (std::size_t k = 0; k < ckpt.bank.n_classes(); ++k) {
        const Matrix& protos = ckpt.bank.prototypes[k];
        for (std::size_t z = 0; z < protos.rows(); ++z) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < train_idx.size(); ++i) {
                double d = sq_dist(train_embs.row(i), protos.row(z));
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            protos_csv << ckpt.bank.class_ids[k] << ',' << z << ',' << train_idx[best] << ','
                       << format_g17(best_d) << "\n";
        }
    }
    atomic_write_text(cfg.out + ".protos.csv", protos_csv.str());

    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] == Split::test) test_idx.push_back(i);
    }
    std::ostringstream resp_csv;
    resp_csv << "example_index,true_label,pred_label,z,q\n";
    if (!test_idx.empty()) {
        Matrix test_in(test_idx.size(), ds.dim);
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            auto src = ds.examples.row(test_idx[i]);
            std::copy(src.begin(), src.end(), test_in.row(i).begin());
        }
        Matrix test_embs = net_forward(ckpt.net, test_in);
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            std::vector<int> ranking = posterior_ranking(
                class_posterior(test_embs.row(i), ckpt.bank, tau), ckpt.bank.class_ids);
            int pred = ranking.front();
            int bank_idx = ckpt.bank.index_of(pred);
            std::vector<double> q = responsibilities(
                test_embs.row(i), ckpt.bank.prototypes[static_cast<std::size_t>(bank_idx)], tau);
            for (std::size_t z = 0; z < q.size(); ++z) {
                resp_csv << test_idx[i] << ',' << ds.labels[test_idx[i]] << ',' << pred << ','
                         << z << ',' << format_g17(q[z]) << "\n";
            }
        }
    }
    atomic_write_text(cfg.out + ".responsibilities.csv", resp_csv.str());
    std::cout << "wrote " << cfg.out << ".protos.csv and " << cfg.out
              << ".responsibilities.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototypical clustering networks: synthetic benchmark harness"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, lowshot_flags, ablate_flags, protos_flags;
    std::string ablate_kind;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic long-tailed dataset");
    gen_flags.attach(gen);
    CLI::App* train_cmd = app.add_subcommand("train", "episodic training on base classes");
    train_flags.attach(train_cmd);
    CLI::App* lowshot = app.add_subcommand("lowshot", "low-shot cross-validated evaluation");
    lowshot_flags.attach(lowshot);
    CLI::App* ablate = app.add_subcommand("ablate", "temperature / alpha / posthoc ablations");
    ablate_flags.attach(ablate);
    ablate->add_option("--kind", ablate_kind, "temperature | alpha | posthoc")->required();
    CLI::App* protos = app.add_subcommand("protos", "prototype nearest-neighbor dump");
    protos_flags.attach(protos);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        for (const CommonFlags* flags :
             {&gen_flags, &train_flags, &lowshot_flags, &ablate_flags, &protos_flags}) {
            if (flags->dump) {
                std::cout << dump_config(flags->resolve());
                return 0;
            }
        }
        if (gen->parsed()) return cmd_gen(gen_flags.resolve());
        if (train_cmd->parsed()) return cmd_train(train_flags.resolve());
        if (lowshot->parsed()) return cmd_lowshot(lowshot_flags.resolve());
        if (ablate->parsed()) return cmd_ablate(ablate_flags.resolve(), ablate_kind);
        if (protos->parsed()) return cmd_protos(protos_flags.resolve());
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
