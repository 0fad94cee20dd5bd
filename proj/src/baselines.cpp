#include "pcn/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pcn/error.hpp"
#include "pcn/metrics.hpp"
#include "pcn/rng.hpp"

namespace pcn {

MethodSetup pn_config(const EpisodeConfig& base) {
    MethodSetup setup;
    setup.episode = base;
    setup.episode.alpha = 0.0;
    setup.m_base = 1;
    setup.m_novel = 1;
    return setup;
}

PrototypeBank posthoc_protos(const EmbedNet& pn_net, const Dataset& dataset, int m_base,
                             int m_novel, uint64_t seed,
                             const std::map<int, std::vector<std::size_t>>* novel_support) {
    return build_test_prototypes(pn_net, dataset, m_base, m_novel, seed, novel_support);
}

KnnResult knn_classify(const Matrix& train_embs, const std::vector<int>& train_labels,
                       std::span<const double> query_emb, int k) {
    if (train_embs.rows() == 0) throw StateError("knn_classify: empty training set");
    if (train_embs.rows() != train_labels.size()) {
        throw ShapeError("knn_classify: embedding/label count mismatch");
    }
    if (k < 1) throw ConfigError("knn_classify: k must be >= 1");
    const std::size_t n = train_embs.rows();
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist[i] = std::sqrt(sq_dist(query_emb, train_embs.row(i)));
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (dist[a] != dist[b]) return dist[a] < dist[b];
                          return a < b;
                      });

    struct ClassStat {
        std::size_t count = 0;
        double dist_sum = 0.0;
    };
    std::map<int, ClassStat> stats;
    for (int label : train_labels) stats[label];  // every train class gets a ranking slot
    for (std::size_t r = 0; r < kk; ++r) {
        ClassStat& s = stats[train_labels[order[r]]];
        s.count += 1;
        s.dist_sum += dist[order[r]];
    }

    std::vector<int> classes;
    classes.reserve(stats.size());
    for (const auto& [c, _] : stats) classes.push_back(c);
    std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) {
        const ClassStat& sa = stats.at(a);
        const ClassStat& sb = stats.at(b);
        if (sa.count != sb.count) return sa.count > sb.count;
        double ma = sa.count ? sa.dist_sum / static_cast<double>(sa.count)
                             : std::numeric_limits<double>::infinity();
        double mb = sb.count ? sb.dist_sum / static_cast<double>(sb.count)
                             : std::numeric_limits<double>::infinity();
        if (ma != mb) return ma < mb;
        return a < b;
    });

    KnnResult result;
    result.ranking = classes;
    result.predicted = classes.front();
    result.scores.reserve(classes.size());
    for (int c : classes) result.scores.push_back(static_cast<double>(stats.at(c).count));
    return result;
}

int CEHead::row_of(int class_id) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        if (class_ids[i] == class_id) return static_cast<int>(i);
    }
    return -1;
}

CEHead make_ce_head(const std::vector<int>& class_ids, std::size_t embed_dim, uint64_t seed) {
    if (class_ids.empty()) throw ConfigError("make_ce_head: no classes");
    CEHead head;
    head.class_ids = class_ids;
    head.weight = Matrix(class_ids.size(), embed_dim);
    head.bias.assign(class_ids.size(), 0.0);
    Pcg32 rng(seed, rng_stream::baselines);
    double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    for (double& v : head.weight.values()) v = (2.0 * rng.next_double() - 1.0) * scale;
    return head;
}

std::vector<double> ce_logits(const CEHead& head, std::span<const double> emb) {
    if (emb.size() != head.weight.cols()) {
        throw ShapeError("ce_logits: embedding dim != head dim");
    }
    std::vector<double> logits(head.class_ids.size());
    for (std::size_t r = 0; r < logits.size(); ++r) {
        logits[r] = head.bias[r] + dot(head.weight.row(r), emb);
    }
    return logits;
}

std::vector<double> ce_posterior(const CEHead& head, std::span<const double> emb) {
    std::vector<double> p = ce_logits(head, emb);
    double max_logit = *std::max_element(p.begin(), p.end());
    double total = 0.0;
    for (double& v : p) {
        v = std::exp(v - max_logit);
        total += v;
    }
    for (double& v : p) v /= total;
    return p;
}

std::vector<int> ce_ranking(const CEHead& head, std::span<const double> emb) {
    return posterior_ranking(ce_posterior(head, emb), head.class_ids);
}

std::vector<std::size_t> sample_training_batch(
    const std::map<int, std::vector<std::size_t>>& train_indices, bool class_balanced,
    std::size_t n, Pcg32& rng) {
    if (train_indices.empty()) throw ConfigError("sample_training_batch: no classes");
    std::vector<const std::vector<std::size_t>*> per_class;
    std::vector<std::size_t> pooled;
    for (const auto& [c, idx] : train_indices) {
        if (idx.empty()) {
            throw StateError("sample_training_batch: class " + std::to_string(c) + " is empty");
        }
        per_class.push_back(&idx);
        pooled.insert(pooled.end(), idx.begin(), idx.end());
    }
    std::vector<std::size_t> batch(n);
    for (std::size_t b = 0; b < n; ++b) {
        if (class_balanced) {
            const auto& idx = *per_class[static_cast<std::size_t>(rng.bounded(per_class.size()))];
            batch[b] = idx[static_cast<std::size_t>(rng.bounded(idx.size()))];
        } else {
            batch[b] = pooled[static_cast<std::size_t>(rng.bounded(pooled.size()))];
        }
    }
    return batch;
}

std::vector<CeHistoryEntry> ce_train(EmbedNet& net, CEHead& head, const Dataset& dataset,
                                     const std::map<int, std::vector<std::size_t>>& train_indices,
                                     bool class_balanced, const CeTrainOptions& opts) {
    if (train_indices.empty()) throw ConfigError("ce_train: no training classes");
    for (const auto& [c, idx] : train_indices) {
        if (idx.empty()) {
            throw StateError("ce_train: class " + std::to_string(c) + " has no train examples");
        }
    }
    if (head.class_ids.size() != train_indices.size()) {
        throw ShapeError("ce_train: head class count != training class count");
    }
    std::vector<int> classes;
    for (const auto& [c, idx] : train_indices) {
        (void)idx;
        if (head.row_of(c) < 0) {
            throw StateError("ce_train: head is missing class " + std::to_string(c));
        }
        classes.push_back(c);
    }

    AdamState trunk_adam(net, opts.adam);
    Matrix head_mw(head.weight.rows(), head.weight.cols());
    Matrix head_vw(head.weight.rows(), head.weight.cols());
    std::vector<double> head_mb(head.bias.size(), 0.0), head_vb(head.bias.size(), 0.0);
    long head_step = 0;

    Pcg32 rng(opts.seed, rng_stream::baselines);
    std::vector<CeHistoryEntry> history;

    std::vector<std::size_t> val_idx;
    std::vector<int> val_labels;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.split[i] == Split::val && dataset.is_base(dataset.labels[i])) {
            val_idx.push_back(i);
            val_labels.push_back(dataset.labels[i]);
        }
    }
    if (val_idx.empty()) throw StateError("ce_train: dataset has no validation examples");
    std::vector<int> base_filter;
    for (int c : classes) {
        if (dataset.is_base(c)) base_filter.push_back(c);
    }

    EmbedNet best_net = net;
    CEHead best_head = head;
    double best_val = -1.0;
    int epochs_since_best = 0;

    const std::size_t batch = static_cast<std::size_t>(std::max(1, opts.batch_size));
    for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (int step = 0; step < opts.steps_per_epoch; ++step) {
            std::vector<std::size_t> rows =
                sample_training_batch(train_indices, class_balanced, batch, rng);
            std::vector<int> target_rows(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                target_rows[b] = head.row_of(dataset.labels[rows[b]]);
            }
            Matrix inputs(batch, dataset.dim);
            for (std::size_t b = 0; b < batch; ++b) {
                auto src = dataset.examples.row(rows[b]);
                std::copy(src.begin(), src.end(), inputs.row(b).begin());
            }
            ForwardTape tape;
            Matrix embs = net_forward(net, inputs, &tape);

            Matrix d_embs(batch, embs.cols());
            Matrix gw(head.weight.rows(), head.weight.cols());
            std::vector<double> gb(head.bias.size(), 0.0);
            double loss = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                std::vector<double> p = ce_posterior(head, embs.row(b));
                std::size_t target = static_cast<std::size_t>(target_rows[b]);
                loss -= std::log(std::max(p[target], 1e-300));
                for (std::size_t r = 0; r < p.size(); ++r) {
                    double d = (p[r] - (r == target ? 1.0 : 0.0)) / static_cast<double>(batch);
                    gb[r] += d;
                    auto gwr = gw.row(r);
                    auto emb = embs.row(b);
                    auto de = d_embs.row(b);
                    auto wr = head.weight.row(r);
                    for (std::size_t c = 0; c < emb.size(); ++c) {
                        gwr[c] += d * emb[c];
                        de[c] += d * wr[c];
                    }
                }
            }
            loss /= static_cast<double>(batch);
            if (!std::isfinite(loss)) throw OptimizationError("ce_train: non-finite loss");
            loss_sum += loss;

            NetGradients trunk_grads = net_gradients(tape, d_embs);
            adam_step(net, trunk_grads, trunk_adam);
            head_step += 1;
            adam_update_flat(head.weight.values(), gw.values(), head_mw.values(),
                             head_vw.values(), head_step, opts.adam);
            adam_update_flat(head.bias, gb, head_mb, head_vb, head_step, opts.adam);
        }

        Matrix val_inputs(val_idx.size(), dataset.dim);
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            auto src = dataset.examples.row(val_idx[i]);
            std::copy(src.begin(), src.end(), val_inputs.row(i).begin());
        }
        Matrix val_embs = net_forward(net, val_inputs);
        std::vector<Ranking> rankings(val_idx.size());
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            rankings[i] = ce_ranking(head, val_embs.row(i));
        }
        double val = mca(rankings, val_labels, base_filter);
        history.push_back({epoch, loss_sum / opts.steps_per_epoch, val});

        if (val > best_val) {
            best_val = val;
            best_net = net;
            best_head = head;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if (epochs_since_best > opts.patience) break;
        }
    }
    net = best_net;
    head = best_head;
    return history;
}

}  // namespace pcn
