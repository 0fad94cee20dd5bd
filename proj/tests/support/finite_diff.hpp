#ifndef PCN_TESTS_FINITE_DIFF_HPP
#define PCN_TESTS_FINITE_DIFF_HPP

// Central finite differences over every net parameter, the oracle for all
// analytic-gradient checks.

#include <algorithm>
#include <cmath>
#include <functional>

#include "pcn/embed_net.hpp"

namespace fd {

using LossFn = std::function<double(const pcn::EmbedNet&)>;

struct CheckResult {
    double max_rel_error = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

// Compares analytic to (f(theta+h) - f(theta-h)) / 2h for every parameter.
inline CheckResult check_gradients(const pcn::EmbedNet& net, const LossFn& loss,
                                   const pcn::NetGradients& analytic, double step = 1e-5) {
    CheckResult result;
    pcn::EmbedNet work = net;
    auto probe = [&](double& param, double analytic_grad) {
        const double saved = param;
        param = saved + step;
        double up = loss(work);
        param = saved - step;
        double down = loss(work);
        param = saved;
        double numeric = (up - down) / (2.0 * step);
        double rel = relative_error(analytic_grad, numeric);
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_analytic = analytic_grad;
            result.worst_numeric = numeric;
        }
    };
    for (std::size_t l = 0; l < work.n_layers(); ++l) {
        auto& w = work.weights[l].values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            probe(w[i], analytic.weights[l].values()[i]);
        }
        for (std::size_t i = 0; i < work.biases[l].size(); ++i) {
            probe(work.biases[l][i], analytic.biases[l][i]);
        }
    }
    return result;
}

}  // namespace fd

#endif
