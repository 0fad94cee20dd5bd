#include "pcn/evaluate.hpp"

#include <algorithm>

#include "pcn/error.hpp"
#include "pcn/io_util.hpp"

namespace pcn {

std::vector<Ranking> rank_with_bank(const EmbedNet& net, const PrototypeBank& bank,
                                    const Dataset& dataset,
                                    const std::vector<std::size_t>& indices, double tau) {
    Matrix batch(indices.size(), dataset.dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = dataset.examples.row(indices[i]);
        auto dst = batch.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    Matrix embs = net_forward(net, batch);
    std::vector<Ranking> rankings(indices.size());
    parallel_for(indices.size(), [&](std::size_t i) {
        rankings[i] = posterior_ranking(class_posterior(embs.row(i), bank, tau), bank.class_ids);
    });
    return rankings;
}

MetricsReport score_rankings(const std::vector<Ranking>& rankings,
                             const std::vector<int>& labels, const Dataset& dataset,
                             const std::vector<int>& recall_ks) {
    if (rankings.empty()) throw MetricError("score_rankings: no examples");
    std::vector<int> seen_classes, base_filter, novel_filter;
    {
        std::vector<int> sorted = labels;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        seen_classes = sorted;
        for (int c : sorted) {
            (dataset.is_base(c) ? base_filter : novel_filter).push_back(c);
        }
    }
    MetricsReport report;
    report.mca_combined = mca(rankings, labels, seen_classes);
    report.mca_base = base_filter.empty() ? 0.0 : mca(rankings, labels, base_filter);
    report.mca_novel = novel_filter.empty() ? 0.0 : mca(rankings, labels, novel_filter);
    for (int k : recall_ks) {
        report.recall_at[k] = recall_at_k(rankings, labels, k);
        report.balanced_recall_at[k] = balanced_recall_at_k(rankings, labels, k);
    }
    for (int c : seen_classes) {
        std::size_t hits = 0, total = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != c) continue;
            total += 1;
            if (!rankings[i].empty() && rankings[i].front() == c) hits += 1;
        }
        report.per_class_accuracy[c] =
            static_cast<double>(hits) / static_cast<double>(total);
        report.per_class_n[c] = static_cast<double>(total);
    }
    return report;
}

LowshotOutcome lowshot_evaluate_with(const BankBuilder& builder, const EmbedNet& net,
                                     const Dataset& dataset,
                                     const std::vector<LowshotFold>& folds,
                                     const LowshotOptions& opts, uint64_t seed) {
    if (folds.empty()) throw ConfigError("lowshot_evaluate: no folds");
    std::vector<std::size_t> base_test;
    std::vector<int> base_labels;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.split[i] == Split::test && dataset.is_base(dataset.labels[i])) {
            base_test.push_back(i);
            base_labels.push_back(dataset.labels[i]);
        }
    }
    LowshotOutcome outcome;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        uint64_t fold_seed = mix_seed(seed, 0x30000ULL + f);
        PrototypeBank bank = builder(folds[f], fold_seed);
        std::vector<std::size_t> indices = base_test;
        std::vector<int> labels = base_labels;
        for (const auto& [c, test_idx] : folds[f].test) {
            for (std::size_t i : test_idx) {
                indices.push_back(i);
                labels.push_back(c);
            }
        }
        std::vector<Ranking> rankings = rank_with_bank(net, bank, dataset, indices, opts.tau);
        outcome.per_fold.push_back(score_rankings(rankings, labels, dataset, opts.recall_ks));
    }
    outcome.aggregate = aggregate_folds(outcome.per_fold);
    return outcome;
}

LowshotOutcome lowshot_evaluate(const EmbedNet& net, const Dataset& dataset,
                                const std::vector<LowshotFold>& folds,
                                const LowshotOptions& opts, uint64_t seed) {
    BankBuilder builder = [&](const LowshotFold& fold, uint64_t fold_seed) {
        return build_test_prototypes(net, dataset, opts.m_base, opts.m_novel, fold_seed,
                                     &fold.support);
    };
    return lowshot_evaluate_with(builder, net, dataset, folds, opts, seed);
}

}  // namespace pcn
