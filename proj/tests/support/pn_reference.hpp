#ifndef PCN_TESTS_PN_REFERENCE_HPP
#define PCN_TESTS_PN_REFERENCE_HPP

// Straight-line Prototypical Networks reference, independent of the library's
// protobank/episodic code paths. Used as the oracle for the M_k = 1 special
// case.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "pcn/embed_net.hpp"
#include "pcn/matrix.hpp"

namespace pn_ref {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// softmax over -||emb - proto_k||^2, one prototype per class.
inline std::vector<double> posterior(std::span<const double> emb,
                                     const std::vector<std::vector<double>>& prototypes) {
    std::vector<double> logits(prototypes.size());
    for (std::size_t k = 0; k < prototypes.size(); ++k) {
        logits[k] = -squared_distance(emb, prototypes[k]);
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

// Standard PN episodic loss: per-class prototypes are the support means; the
// loss is the mean over queries of d(query, proto_true) + log sum_k
// exp(-d(query, proto_k)).
inline double episode_loss(const pcn::EmbedNet& net, const pcn::Matrix& inputs,
                           const std::vector<std::vector<std::size_t>>& support_rows,
                           const std::vector<std::vector<std::size_t>>& query_rows) {
    pcn::Matrix embs = pcn::net_forward(net, inputs);
    const std::size_t dim = embs.cols();
    const std::size_t n_class = support_rows.size();
    std::vector<std::vector<double>> protos(n_class, std::vector<double>(dim, 0.0));
    for (std::size_t k = 0; k < n_class; ++k) {
        for (std::size_t r : support_rows[k]) {
            for (std::size_t c = 0; c < dim; ++c) protos[k][c] += embs(r, c);
        }
        for (std::size_t c = 0; c < dim; ++c) {
            protos[k][c] /= static_cast<double>(support_rows[k].size());
        }
    }
    double loss = 0.0;
    std::size_t n_query = 0;
    for (std::size_t k = 0; k < n_class; ++k) {
        for (std::size_t r : query_rows[k]) {
            std::vector<double> neg_d(n_class);
            for (std::size_t k2 = 0; k2 < n_class; ++k2) {
                neg_d[k2] = -squared_distance(embs.row(r), protos[k2]);
            }
            double max_nd = *std::max_element(neg_d.begin(), neg_d.end());
            double lse = 0.0;
            for (double v : neg_d) lse += std::exp(v - max_nd);
            loss += -neg_d[k] + max_nd + std::log(lse);
            n_query += 1;
        }
    }
    return loss / static_cast<double>(n_query);
}

}  // namespace pn_ref

#endif
