#ifndef PCN_EVALUATE_HPP
#define PCN_EVALUATE_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "pcn/datagen.hpp"
#include "pcn/embed_net.hpp"
#include "pcn/episodic.hpp"
#include "pcn/metrics.hpp"
#include "pcn/protobank.hpp"

namespace pcn {

// Full class rankings for the given dataset rows under a frozen net + bank.
// Parallel over examples when PCN_THREADS allows; results are index-ordered
// and therefore deterministic either way.
std::vector<Ranking> rank_with_bank(const EmbedNet& net, const PrototypeBank& bank,
                                    const Dataset& dataset,
                                    const std::vector<std::size_t>& indices, double tau);

// Scores one fold's rankings: mca over combined/base/novel class filters,
// micro and balanced recall@k, and per-class accuracy with test counts.
MetricsReport score_rankings(const std::vector<Ranking>& rankings,
                             const std::vector<int>& labels, const Dataset& dataset,
                             const std::vector<int>& recall_ks);

struct LowshotOptions {
    int m_base = 10;
    int m_novel = 4;
    double tau = 1.0;
    std::vector<int> recall_ks = {5, 10};
};

struct LowshotOutcome {
    MetricsReport aggregate;
    std::vector<MetricsReport> per_fold;
};

// The cross-validated low-shot protocol: per fold, build base prototypes from
// the full train split and novel prototypes from the fold support, then run
// (base + novel)-way classification of the base test split plus the fold's
// novel test examples.
LowshotOutcome lowshot_evaluate(const EmbedNet& net, const Dataset& dataset,
                                const std::vector<LowshotFold>& folds,
                                const LowshotOptions& opts, uint64_t seed);

// Same protocol with a caller-supplied bank builder (used for post-hoc
// clustering ablations where the bank does not come from the trained method).
using BankBuilder = std::function<PrototypeBank(const LowshotFold&, uint64_t fold_seed)>;
LowshotOutcome lowshot_evaluate_with(const BankBuilder& builder, const EmbedNet& net,
                                     const Dataset& dataset,
                                     const std::vector<LowshotFold>& folds,
                                     const LowshotOptions& opts, uint64_t seed);

}  // namespace pcn

#endif  // PCN_EVALUATE_HPP
