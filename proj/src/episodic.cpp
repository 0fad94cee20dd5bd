#include "pcn/episodic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pcn/error.hpp"
#include "pcn/io_util.hpp"
#include "pcn/metrics.hpp"

namespace pcn {

namespace {

constexpr double kDegenerateMass = 1e-12;

void partial_shuffle(std::vector<int>& items, std::size_t take, Pcg32& rng) {
    for (std::size_t i = 0; i < take && i + 1 < items.size(); ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.bounded(items.size() - i));
        std::swap(items[i], items[j]);
    }
}

void shuffle_sizes(std::vector<std::size_t>& idx, Pcg32& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

Matrix gather_rows(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Matrix out(indices.size(), ds.dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto dst = out.row(i);
        auto src = ds.examples.row(indices[i]);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, const EpisodeConfig& cfg, Pcg32& rng) {
    if (cfg.n_way < 1) throw ConfigError("sample_episode: n_way must be >= 1");
    if (cfg.n_support < 1) throw ConfigError("sample_episode: n_support must be >= 1");
    if (cfg.n_query < 1) throw ConfigError("sample_episode: n_query must be >= 1");

    std::vector<int> eligible;
    std::vector<std::vector<std::size_t>> eligible_train;
    for (int c = 0; c < dataset.n_classes; ++c) {
        if (!dataset.is_base(c)) continue;
        std::vector<std::size_t> idx = dataset.indices_of(c, Split::train);
        if (idx.size() >= static_cast<std::size_t>(cfg.n_support) + 1) {
            eligible.push_back(c);
            eligible_train.push_back(std::move(idx));
        }
    }
    if (eligible.size() < static_cast<std::size_t>(cfg.n_way)) {
        throw SamplingError("sample_episode: only " + std::to_string(eligible.size()) +
                            " classes have >= n_support + 1 train examples, need " +
                            std::to_string(cfg.n_way));
    }

    std::vector<int> positions(eligible.size());
    std::iota(positions.begin(), positions.end(), 0);
    partial_shuffle(positions, static_cast<std::size_t>(cfg.n_way), rng);

    Episode ep;
    for (int s = 0; s < cfg.n_way; ++s) {
        int pos = positions[static_cast<std::size_t>(s)];
        std::vector<std::size_t> idx = eligible_train[static_cast<std::size_t>(pos)];
        shuffle_sizes(idx, rng);
        std::size_t n_sup = static_cast<std::size_t>(cfg.n_support);
        std::size_t n_qry = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_query),
                                                  idx.size() - n_sup);
        ep.class_ids.push_back(eligible[static_cast<std::size_t>(pos)]);
        ep.support.emplace_back(idx.begin(), idx.begin() + static_cast<long>(n_sup));
        ep.query.emplace_back(idx.begin() + static_cast<long>(n_sup),
                              idx.begin() + static_cast<long>(n_sup + n_qry));
    }
    return ep;
}

EpisodeResult episode_loss(const EmbedNet& net, PrototypeBank& bank, const Dataset& dataset,
                           const Episode& episode, const EpisodeConfig& cfg) {
    if (cfg.tau_train <= 0.0) throw ConfigError("episode_loss: tau_train must be > 0");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ConfigError("episode_loss: alpha in [0, 1]");
    const std::size_t n_way = episode.class_ids.size();
    if (n_way == 0) throw StateError("episode_loss: empty episode");
    const double tau = cfg.tau_train;
    const double alpha = cfg.alpha;

    // Flatten support and query indices, grouped by class.
    std::vector<std::size_t> sup_indices, qry_indices;
    std::vector<std::size_t> sup_offset(n_way), qry_offset(n_way);
    std::vector<std::size_t> sup_count(n_way), qry_count(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        if (episode.support[k].empty()) {
            throw StateError("episode_loss: class " + std::to_string(episode.class_ids[k]) +
                             " has no support examples");
        }
        sup_offset[k] = sup_indices.size();
        sup_count[k] = episode.support[k].size();
        sup_indices.insert(sup_indices.end(), episode.support[k].begin(),
                           episode.support[k].end());
        qry_offset[k] = qry_indices.size();
        qry_count[k] = episode.query[k].size();
        qry_indices.insert(qry_indices.end(), episode.query[k].begin(), episode.query[k].end());
    }
    const std::size_t n_sup_total = sup_indices.size();
    const std::size_t n_qry_total = qry_indices.size();
    if (n_qry_total == 0) throw StateError("episode_loss: episode has no query examples");

    ForwardTape tape_sup, tape_qry;
    Matrix sup_embs = net_forward(net, gather_rows(dataset, sup_indices), &tape_sup);
    const std::size_t dim = sup_embs.cols();

    // Support responsibilities against the current (old) prototypes, then the
    // EMA update. Old prototypes stay around as constants for the backward
    // pass; a cluster with vanishing support mass keeps its old value.
    struct ClassWork {
        int bank_index = -1;
        Matrix old_protos;
        Matrix resp;                   // sup_count x M
        std::vector<double> mass;      // per cluster
        Matrix fresh_mean;             // per cluster, valid where !degenerate
        std::vector<char> degenerate;  // per cluster
    };
    std::vector<ClassWork> work(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        ClassWork& w = work[k];
        w.bank_index = bank.index_of(episode.class_ids[k]);
        if (w.bank_index < 0) {
            throw StateError("episode_loss: class " + std::to_string(episode.class_ids[k]) +
                             " missing from prototype bank");
        }
        w.old_protos = bank.prototypes[static_cast<std::size_t>(w.bank_index)];
        const std::size_t m = w.old_protos.rows();
        w.resp = Matrix(sup_count[k], m);
        w.mass.assign(m, 0.0);
        w.fresh_mean = Matrix(m, dim);
        w.degenerate.assign(m, 0);
        for (std::size_t i = 0; i < sup_count[k]; ++i) {
            std::vector<double> q =
                responsibilities(sup_embs.row(sup_offset[k] + i), w.old_protos, tau);
            for (std::size_t z = 0; z < m; ++z) {
                w.resp(i, z) = q[z];
                w.mass[z] += q[z];
                auto fresh = w.fresh_mean.row(z);
                auto emb = sup_embs.row(sup_offset[k] + i);
                for (std::size_t c = 0; c < dim; ++c) fresh[c] += q[z] * emb[c];
            }
        }
        Matrix updated = w.old_protos;
        for (std::size_t z = 0; z < m; ++z) {
            if (w.mass[z] < kDegenerateMass) {
                w.degenerate[z] = 1;
                continue;
            }
            auto fresh = w.fresh_mean.row(z);
            for (std::size_t c = 0; c < dim; ++c) fresh[c] /= w.mass[z];
            auto out = updated.row(z);
            auto old = w.old_protos.row(z);
            for (std::size_t c = 0; c < dim; ++c) {
                out[c] = alpha * old[c] + (1.0 - alpha) * fresh[c];
            }
        }
        bank.prototypes[static_cast<std::size_t>(w.bank_index)] = std::move(updated);
    }

    Matrix qry_embs = net_forward(net, gather_rows(dataset, qry_indices), &tape_qry);

    // Query pass: for each query, mixture scores against every episode class's
    // updated prototypes, the episode-scoped log-softmax loss, and the
    // cotangents w.r.t. query embeddings and updated prototypes.
    Matrix d_qry(n_qry_total, dim);
    std::vector<Matrix> proto_grad(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        proto_grad[k] =
            Matrix(bank.prototypes[static_cast<std::size_t>(work[k].bank_index)].rows(), dim);
    }
    double loss_sum = 0.0;
    std::vector<double> scores(n_way);
    std::vector<std::vector<double>> dists(n_way), resp_q(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        std::size_t m = proto_grad[k].rows();
        dists[k].resize(m);
        resp_q[k].resize(m);
    }
    for (std::size_t k_true = 0; k_true < n_way; ++k_true) {
        for (std::size_t j = 0; j < qry_count[k_true]; ++j) {
            const std::size_t row = qry_offset[k_true] + j;
            auto emb = qry_embs.row(row);
            for (std::size_t k = 0; k < n_way; ++k) {
                const Matrix& protos =
                    bank.prototypes[static_cast<std::size_t>(work[k].bank_index)];
                double max_logit = -std::numeric_limits<double>::infinity();
                for (std::size_t z = 0; z < protos.rows(); ++z) {
                    dists[k][z] = sq_dist(emb, protos.row(z));
                    max_logit = std::max(max_logit, -dists[k][z] / tau);
                }
                double total = 0.0;
                for (std::size_t z = 0; z < protos.rows(); ++z) {
                    resp_q[k][z] = std::exp(-dists[k][z] / tau - max_logit);
                    total += resp_q[k][z];
                }
                double s = 0.0;
                for (std::size_t z = 0; z < protos.rows(); ++z) {
                    resp_q[k][z] /= total;
                    s -= resp_q[k][z] * dists[k][z];
                }
                scores[k] = s;
            }
            double max_score = *std::max_element(scores.begin(), scores.end());
            double lse = 0.0;
            for (double s : scores) lse += std::exp(s - max_score);
            loss_sum += -scores[k_true] + max_score + std::log(lse);
            for (std::size_t k = 0; k < n_way; ++k) {
                double p = std::exp(scores[k] - max_score) / lse;
                double coef = (p - (k == k_true ? 1.0 : 0.0)) /
                              static_cast<double>(n_qry_total);
                if (coef == 0.0) continue;
                const Matrix& protos =
                    bank.prototypes[static_cast<std::size_t>(work[k].bank_index)];
                const double mean_dist = -scores[k];
                for (std::size_t z = 0; z < protos.rows(); ++z) {
                    double phi = -resp_q[k][z];
                    if (!cfg.stop_grad_q) {
                        phi += resp_q[k][z] / tau * (dists[k][z] - mean_dist);
                    }
                    double cphi = 2.0 * coef * phi;
                    auto mu = protos.row(z);
                    auto dv = d_qry.row(row);
                    auto gp = proto_grad[k].row(z);
                    for (std::size_t c = 0; c < dim; ++c) {
                        double diff = emb[c] - mu[c];
                        dv[c] += cphi * diff;
                        gp[c] -= cphi * diff;
                    }
                }
            }
        }
    }

    const double loss = loss_sum / static_cast<double>(n_qry_total);
    if (!std::isfinite(loss)) throw OptimizationError("episode_loss: non-finite loss");

    // Support pass: prototype cotangents reach support embeddings directly
    // through the weighted mean and, unless stop_grad_q, through the support
    // responsibilities.
    Matrix d_sup(n_sup_total, dim);
    if (alpha < 1.0) {
        std::vector<double> h;
        for (std::size_t k = 0; k < n_way; ++k) {
            const ClassWork& w = work[k];
            const std::size_t m = w.old_protos.rows();
            h.resize(m);
            for (std::size_t i = 0; i < sup_count[k]; ++i) {
                const std::size_t row = sup_offset[k] + i;
                auto du = d_sup.row(row);
                auto emb = sup_embs.row(row);
                for (std::size_t z = 0; z < m; ++z) {
                    if (w.degenerate[z]) {
                        h[z] = 0.0;
                        continue;
                    }
                    double weight = (1.0 - alpha) * w.resp(i, z) / w.mass[z];
                    auto gp = proto_grad[k].row(z);
                    for (std::size_t c = 0; c < dim; ++c) du[c] += weight * gp[c];
                    if (!cfg.stop_grad_q) {
                        double acc = 0.0;
                        auto fresh = w.fresh_mean.row(z);
                        for (std::size_t c = 0; c < dim; ++c) {
                            acc += gp[c] * (emb[c] - fresh[c]);
                        }
                        h[z] = (1.0 - alpha) / w.mass[z] * acc;
                    }
                }
                if (cfg.stop_grad_q) continue;
                double h_mean = 0.0;
                for (std::size_t z = 0; z < m; ++z) h_mean += w.resp(i, z) * h[z];
                for (std::size_t z = 0; z < m; ++z) {
                    double factor = -2.0 * w.resp(i, z) / tau * (h[z] - h_mean);
                    auto old = w.old_protos.row(z);
                    for (std::size_t c = 0; c < dim; ++c) {
                        du[c] += factor * (emb[c] - old[c]);
                    }
                }
            }
        }
    }

    EpisodeResult result;
    result.loss = loss;
    result.grads = net_gradients(tape_qry, d_qry);
    result.grads.add(net_gradients(tape_sup, d_sup));
    return result;
}

namespace {

std::vector<int> base_class_ids(const Dataset& ds) {
    std::vector<int> out;
    for (int c = 0; c < ds.n_classes; ++c) {
        if (ds.is_base(c)) out.push_back(c);
    }
    return out;
}

Matrix embed_indices(const EmbedNet& net, const Dataset& ds,
                     const std::vector<std::size_t>& indices) {
    return net_forward(net, gather_rows(ds, indices));
}

double validation_mca(const EmbedNet& net, const PrototypeBank& bank, const Dataset& ds,
                      double tau) {
    std::vector<std::size_t> val_idx;
    std::vector<int> val_labels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] == Split::val && ds.is_base(ds.labels[i])) {
            val_idx.push_back(i);
            val_labels.push_back(ds.labels[i]);
        }
    }
    if (val_idx.empty()) throw StateError("train: dataset has no validation examples");
    Matrix embs = embed_indices(net, ds, val_idx);
    std::vector<std::vector<int>> rankings(val_idx.size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) {
        rankings[i] = posterior_ranking(class_posterior(embs.row(i), bank, tau), bank.class_ids);
    }
    return mca(rankings, val_labels, bank.class_ids);
}

}  // namespace

PrototypeBank build_test_prototypes(const EmbedNet& net, const Dataset& dataset, int m_base,
                                    int m_novel, uint64_t seed,
                                    const std::map<int, std::vector<std::size_t>>* novel_support) {
    if (m_base < 1) throw ConfigError("build_test_prototypes: m_base must be >= 1");
    if (novel_support && m_novel < 1) {
        throw ConfigError("build_test_prototypes: m_novel must be >= 1");
    }
    PrototypeBank bank;
    for (int c = 0; c < dataset.n_classes; ++c) {
        std::vector<std::size_t> indices;
        int m = 0;
        if (dataset.is_base(c)) {
            indices = dataset.indices_of(c, Split::train);
            m = m_base;
        } else {
            if (!novel_support) continue;
            auto it = novel_support->find(c);
            if (it == novel_support->end()) continue;
            indices = it->second;
            m = m_novel;
        }
        if (indices.empty()) {
            throw StateError("build_test_prototypes: class " + std::to_string(c) +
                             " has no examples");
        }
        Matrix embs = embed_indices(net, dataset, indices);
        std::size_t m_eff = std::min<std::size_t>(static_cast<std::size_t>(m), embs.rows());
        bank.class_ids.push_back(c);
        bank.prototypes.push_back(
            kmeans(embs, m_eff, mix_seed(seed, static_cast<uint64_t>(c))).centers);
    }
    if (bank.class_ids.empty()) throw StateError("build_test_prototypes: no classes to build");
    return bank;
}

TrainResult train(const Dataset& dataset, const std::vector<std::size_t>& layer_dims,
                  const TrainOptions& opts) {
    const EpisodeConfig& cfg = opts.episode;
    if (cfg.n_way < 2) throw ConfigError("train: n_way must be >= 2");
    if (cfg.episodes_per_epoch < 1) throw ConfigError("train: episodes_per_epoch must be >= 1");
    if (opts.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (opts.patience < 0) throw ConfigError("train: patience must be >= 0");
    if (opts.m_base < 1) throw ConfigError("train: m_base must be >= 1");
    if (layer_dims.empty() || layer_dims.front() != dataset.dim) {
        throw ConfigError("train: layer_dims[0] must equal the dataset dim");
    }

    EmbedNet net = net_init(layer_dims, opts.seed);
    AdamState adam(net, opts.adam);

    std::vector<int> bases = base_class_ids(dataset);
    std::map<int, int> m_config;
    for (int c : bases) m_config[c] = opts.m_base;

    PrototypeBank bank;
    bank.tau = cfg.tau_train;
    bank.alpha = cfg.alpha;
    bank.class_ids = bases;
    bank.prototypes.assign(bases.size(), Matrix(1, net.embed_dim()));

    Pcg32 episode_rng(opts.seed, rng_stream::episodes);
    TrainResult result;
    double best_val = -1.0;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
        std::map<int, Matrix> per_class_embs;
        for (int c : bases) {
            std::vector<std::size_t> idx = dataset.indices_of(c, Split::train);
            if (idx.empty()) {
                throw StateError("train: base class " + std::to_string(c) +
                                 " has no train examples");
            }
            per_class_embs[c] = embed_indices(net, dataset, idx);
        }
        bank = reinit_epoch(bank, per_class_embs, m_config,
                            mix_seed(opts.seed, 0x10000ULL + static_cast<uint64_t>(epoch)));

        double loss_sum = 0.0;
        for (int e = 0; e < cfg.episodes_per_epoch; ++e) {
            Episode ep = sample_episode(dataset, cfg, episode_rng);
            EpisodeResult res = episode_loss(net, bank, dataset, ep, cfg);
            adam_step(net, res.grads, adam);
            loss_sum += res.loss;
        }

        PrototypeBank eval_bank = build_test_prototypes(
            net, dataset, opts.m_base, 1,
            mix_seed(opts.seed, 0x20000ULL + static_cast<uint64_t>(epoch)));
        double val = validation_mca(net, eval_bank, dataset, cfg.tau_train);
        result.history.push_back({epoch, loss_sum / cfg.episodes_per_epoch, val});

        if (val > best_val) {
            best_val = val;
            result.net = net;
            result.bank = eval_bank;
            result.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if (epochs_since_best > opts.patience) break;
        }
    }
    result.bank.tau = cfg.tau_train;
    result.bank.alpha = cfg.alpha;
    return result;
}

void save_checkpoint(const std::string& path, const EmbedNet& net, const PrototypeBank& bank) {
    std::ostringstream out;
    out << "pcn-net v1 " << net.layer_dims.size();
    for (std::size_t d : net.layer_dims) out << ' ' << d;
    out << "\n";
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const Matrix& w = net.weights[l];
        for (std::size_t r = 0; r < w.rows(); ++r) {
            auto row = w.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                out << (c ? " " : "") << format_g17(row[c]);
            }
            out << "\n";
        }
        const auto& b = net.biases[l];
        for (std::size_t c = 0; c < b.size(); ++c) out << (c ? " " : "") << format_g17(b[c]);
        out << "\n";
    }
    save_bank(out, bank);
    atomic_write_text(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint: " + path);
    std::size_t line_no = 0;
    std::string line;
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError(path + ":" + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
    ++line_no;
    std::istringstream header(line);
    std::string magic, version;
    std::size_t n_dims = 0;
    if (!(header >> magic >> version >> n_dims) || magic != "pcn-net") {
        throw fail("expected 'pcn-net v1 <n_dims> <dims...>' header");
    }
    if (version != "v1") throw fail("unsupported checkpoint version '" + version + "'");
    if (n_dims < 2) throw fail("need at least 2 layer dims");
    std::vector<std::size_t> dims(n_dims);
    for (std::size_t i = 0; i < n_dims; ++i) {
        if (!(header >> dims[i]) || dims[i] < 1) throw fail("malformed layer dims");
    }

    Checkpoint ckpt;
    ckpt.net.layer_dims = dims;
    auto read_values = [&](std::span<double> out) {
        if (!std::getline(in, line)) throw fail("checkpoint truncated");
        ++line_no;
        std::istringstream ls(line);
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!(ls >> out[i])) throw fail("expected " + std::to_string(out.size()) + " values");
            if (!std::isfinite(out[i])) throw fail("non-finite parameter");
        }
    };
    for (std::size_t l = 0; l + 1 < n_dims; ++l) {
        Matrix w(dims[l + 1], dims[l]);
        for (std::size_t r = 0; r < w.rows(); ++r) read_values(w.row(r));
        ckpt.net.weights.push_back(std::move(w));
        std::vector<double> b(dims[l + 1]);
        read_values(b);
        ckpt.net.biases.push_back(std::move(b));
    }
    ckpt.bank = load_bank(in, line_no);
    if (ckpt.bank.embed_dim() != 0 && ckpt.bank.embed_dim() != ckpt.net.embed_dim()) {
        throw ParseError(path + ": bank dim " + std::to_string(ckpt.bank.embed_dim()) +
                         " != net embed dim " + std::to_string(ckpt.net.embed_dim()));
    }
    return ckpt;
}

}  // namespace pcn
