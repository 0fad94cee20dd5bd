#ifndef PCN_TESTS_FROZEN_Q_LOSS_HPP
#define PCN_TESTS_FROZEN_Q_LOSS_HPP

// The objective a stop_grad_q gradient differentiates: the episode loss with
// every responsibility frozen at its base-net value. Straight-line evaluator,
// independent of the library's episodic internals; used as the finite
// difference oracle for stop_grad_q gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pcn/datagen.hpp"
#include "pcn/embed_net.hpp"
#include "pcn/episodic.hpp"
#include "pcn/protobank.hpp"

namespace frozen_q {

inline pcn::Matrix gather(const pcn::Dataset& ds, const std::vector<std::size_t>& rows) {
    pcn::Matrix out(rows.size(), ds.dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = ds.examples.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline std::vector<double> softmax_neg_dist(std::span<const double> emb,
                                            const pcn::Matrix& protos, double tau) {
    std::vector<double> logits(protos.rows());
    for (std::size_t z = 0; z < protos.rows(); ++z) {
        double d = 0.0;
        auto mu = protos.row(z);
        for (std::size_t c = 0; c < mu.size(); ++c) {
            d += (emb[c] - mu[c]) * (emb[c] - mu[c]);
        }
        logits[z] = -d / tau;
    }
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        total += v;
    }
    for (double& v : logits) v /= total;
    return logits;
}

// Per-class EMA update with a fixed responsibility matrix.
inline pcn::Matrix ema_with_fixed_q(const pcn::Matrix& old_protos, const pcn::Matrix& sup_embs,
                                    const pcn::Matrix& q, double alpha) {
    pcn::Matrix out = old_protos;
    for (std::size_t z = 0; z < old_protos.rows(); ++z) {
        double mass = 0.0;
        for (std::size_t i = 0; i < sup_embs.rows(); ++i) mass += q(i, z);
        if (mass < 1e-12) continue;
        for (std::size_t c = 0; c < old_protos.cols(); ++c) {
            double weighted = 0.0;
            for (std::size_t i = 0; i < sup_embs.rows(); ++i) {
                weighted += q(i, z) * sup_embs(i, c);
            }
            out(z, c) = alpha * old_protos(z, c) + (1.0 - alpha) * weighted / mass;
        }
    }
    return out;
}

// Returns loss(candidate) with all q factors pinned to base_net's values.
inline std::function<double(const pcn::EmbedNet&)> make_loss(const pcn::EmbedNet& base_net,
                                                             const pcn::PrototypeBank& bank,
                                                             const pcn::Dataset& ds,
                                                             const pcn::Episode& ep,
                                                             const pcn::EpisodeConfig& cfg) {
    const double tau = cfg.tau_train;
    const double alpha = cfg.alpha;
    const std::size_t n_way = ep.class_ids.size();

    // Base-point pass: support responsibilities against the old prototypes,
    // the updated prototypes, then query responsibilities against those.
    std::vector<pcn::Matrix> old_protos(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        old_protos[k] = bank.prototypes[static_cast<std::size_t>(
            bank.index_of(ep.class_ids[k]))];
    }
    std::vector<pcn::Matrix> sup_q(n_way);
    std::vector<pcn::Matrix> base_updated(n_way);
    for (std::size_t k = 0; k < n_way; ++k) {
        pcn::Matrix sup_embs = pcn::net_forward(base_net, gather(ds, ep.support[k]));
        sup_q[k] = pcn::Matrix(sup_embs.rows(), old_protos[k].rows());
        for (std::size_t i = 0; i < sup_embs.rows(); ++i) {
            std::vector<double> q = softmax_neg_dist(sup_embs.row(i), old_protos[k], tau);
            for (std::size_t z = 0; z < q.size(); ++z) sup_q[k](i, z) = q[z];
        }
        base_updated[k] = ema_with_fixed_q(old_protos[k], sup_embs, sup_q[k], alpha);
    }
    // qry_q[k_true][j][k] is the frozen responsibility vector of query j of
    // class k_true against class k's updated prototypes.
    std::vector<std::vector<std::vector<std::vector<double>>>> qry_q(n_way);
    for (std::size_t kt = 0; kt < n_way; ++kt) {
        pcn::Matrix qry_embs = pcn::net_forward(base_net, gather(ds, ep.query[kt]));
        qry_q[kt].resize(qry_embs.rows());
        for (std::size_t j = 0; j < qry_embs.rows(); ++j) {
            qry_q[kt][j].resize(n_way);
            for (std::size_t k = 0; k < n_way; ++k) {
                qry_q[kt][j][k] = softmax_neg_dist(qry_embs.row(j), base_updated[k], tau);
            }
        }
    }

    return [=, &ds](const pcn::EmbedNet& candidate) {
        std::vector<pcn::Matrix> updated(n_way);
        for (std::size_t k = 0; k < n_way; ++k) {
            pcn::Matrix sup_embs = pcn::net_forward(candidate, gather(ds, ep.support[k]));
            updated[k] = ema_with_fixed_q(old_protos[k], sup_embs, sup_q[k], alpha);
        }
        double loss = 0.0;
        std::size_t n_query = 0;
        for (std::size_t kt = 0; kt < n_way; ++kt) {
            pcn::Matrix qry_embs = pcn::net_forward(candidate, gather(ds, ep.query[kt]));
            for (std::size_t j = 0; j < qry_embs.rows(); ++j) {
                std::vector<double> scores(n_way);
                for (std::size_t k = 0; k < n_way; ++k) {
                    double s = 0.0;
                    for (std::size_t z = 0; z < updated[k].rows(); ++z) {
                        double d = 0.0;
                        auto mu = updated[k].row(z);
                        auto emb = qry_embs.row(j);
                        for (std::size_t c = 0; c < mu.size(); ++c) {
                            d += (emb[c] - mu[c]) * (emb[c] - mu[c]);
                        }
                        s -= qry_q[kt][j][k][z] * d;
                    }
                    scores[k] = s;
                }
                double max_score = *std::max_element(scores.begin(), scores.end());
                double lse = 0.0;
                for (double s : scores) lse += std::exp(s - max_score);
                loss += -scores[kt] + max_score + std::log(lse);
                n_query += 1;
            }
        }
        return loss / static_cast<double>(n_query);
    };
}

}  // namespace frozen_q

#endif
