#include "pcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pcn/datagen.hpp"
#include "pcn/error.hpp"
#include "pcn/io_util.hpp"

namespace pcn {

namespace {

void check_sizes(const std::vector<Ranking>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) {
        throw MetricError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw MetricError("metrics: no examples");
}

bool in_top_k(const Ranking& ranking, int label, int k) {
    std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (ranking[i] == label) return true;
    }
    return false;
}

// Per-class hit counts at depth k (k = 1 gives top-1 accuracy).
std::map<int, std::pair<std::size_t, std::size_t>> per_class_hits(
    const std::vector<Ranking>& preds, const std::vector<int>& labels, int k) {
    std::map<int, std::pair<std::size_t, std::size_t>> stats;  // class -> (hits, total)
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto& s = stats[labels[i]];
        s.second += 1;
        if (in_top_k(preds[i], labels[i], k)) s.first += 1;
    }
    return stats;
}

}  // namespace

double mca(const std::vector<Ranking>& ranked_preds, const std::vector<int>& labels,
           const std::vector<int>& class_filter, std::vector<int>* excluded) {
    check_sizes(ranked_preds, labels);
    auto stats = per_class_hits(ranked_preds, labels, 1);
    double total = 0.0;
    std::size_t counted = 0;
    for (int c : class_filter) {
        auto it = stats.find(c);
        if (it == stats.end()) {
            if (excluded) excluded->push_back(c);
            continue;
        }
        total += static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        counted += 1;
    }
    if (counted == 0) throw MetricError("mca: no class in the filter has test examples");
    return total / static_cast<double>(counted);
}

double recall_at_k(const std::vector<Ranking>& ranked_preds, const std::vector<int>& labels,
                   int k) {
    check_sizes(ranked_preds, labels);
    if (k < 1) throw MetricError("recall_at_k: k must be >= 1");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked_preds.size(); ++i) {
        if (in_top_k(ranked_preds[i], labels[i], k)) hits += 1;
    }
    return static_cast<double>(hits) / static_cast<double>(ranked_preds.size());
}

double balanced_recall_at_k(const std::vector<Ranking>& ranked_preds,
                            const std::vector<int>& labels, int k) {
    check_sizes(ranked_preds, labels);
    if (k < 1) throw MetricError("balanced_recall_at_k: k must be >= 1");
    auto stats = per_class_hits(ranked_preds, labels, k);
    double total = 0.0;
    for (const auto& [c, s] : stats) {
        total += static_cast<double>(s.first) / static_cast<double>(s.second);
    }
    return total / static_cast<double>(stats.size());
}

namespace {

template <typename Get>
void mean_std(const std::vector<MetricsReport>& reports, const Get& get, double& mean_out,
              double& std_out) {
    double sum = 0.0;
    for (const auto& r : reports) sum += get(r);
    double mean = sum / static_cast<double>(reports.size());
    double var = 0.0;
    for (const auto& r : reports) {
        double d = get(r) - mean;
        var += d * d;
    }
    mean_out = mean;
    std_out = std::sqrt(var / static_cast<double>(reports.size()));
}

std::vector<int> map_keys(const std::map<int, double>& m) {
    std::vector<int> keys;
    keys.reserve(m.size());
    for (const auto& [k, _] : m) keys.push_back(k);
    return keys;
}

void aggregate_map(const std::vector<MetricsReport>& reports,
                   std::map<int, double> MetricsReport::*field, std::map<int, double>& mean_out,
                   std::map<int, double>& std_out) {
    std::vector<int> keys = map_keys(reports.front().*field);
    for (const auto& r : reports) {
        if (map_keys(r.*field) != keys) {
            throw MetricError("aggregate_folds: metric keys differ across folds");
        }
    }
    for (int key : keys) {
        double mean = 0.0, dev = 0.0;
        mean_std(reports, [&](const MetricsReport& r) { return (r.*field).at(key); }, mean, dev);
        mean_out[key] = mean;
        std_out[key] = dev;
    }
}

}  // namespace

MetricsReport aggregate_folds(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw MetricError("aggregate_folds: no reports");
    MetricsReport out;
    out.n_folds = static_cast<int>(reports.size());
    mean_std(reports, [](const MetricsReport& r) { return r.mca_combined; }, out.mca_combined,
             out.mca_combined_std);
    mean_std(reports, [](const MetricsReport& r) { return r.mca_base; }, out.mca_base,
             out.mca_base_std);
    mean_std(reports, [](const MetricsReport& r) { return r.mca_novel; }, out.mca_novel,
             out.mca_novel_std);
    aggregate_map(reports, &MetricsReport::recall_at, out.recall_at, out.recall_at_std);
    aggregate_map(reports, &MetricsReport::balanced_recall_at, out.balanced_recall_at,
                  out.balanced_recall_at_std);
    aggregate_map(reports, &MetricsReport::per_class_accuracy, out.per_class_accuracy,
                  out.per_class_accuracy_std);
    std::map<int, double> unused;
    aggregate_map(reports, &MetricsReport::per_class_n, out.per_class_n, unused);
    return out;
}

namespace {

double value_or_zero(const std::map<int, double>& m, int key) {
    auto it = m.find(key);
    return it == m.end() ? 0.0 : it->second;
}

}  // namespace

std::vector<MetricRow> metric_rows(const MetricsReport& report) {
    std::vector<MetricRow> rows;
    rows.push_back({"mca_combined", report.mca_combined, report.mca_combined_std});
    rows.push_back({"mca_base", report.mca_base, report.mca_base_std});
    rows.push_back({"mca_novel", report.mca_novel, report.mca_novel_std});
    for (const auto& [k, v] : report.recall_at) {
        rows.push_back({"recall_at_" + std::to_string(k), v,
                        value_or_zero(report.recall_at_std, k)});
    }
    for (const auto& [k, v] : report.balanced_recall_at) {
        rows.push_back({"balanced_recall_at_" + std::to_string(k), v,
                        value_or_zero(report.balanced_recall_at_std, k)});
    }
    return rows;
}

std::string metrics_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "metric,mean,std\n";
    for (const MetricRow& row : metric_rows(report)) {
        out << row.name << ',' << format_g17(row.mean) << ',' << format_g17(row.std_dev) << "\n";
    }
    return out.str();
}

std::string per_class_csv(const MetricsReport& report, const Dataset& dataset) {
    std::ostringstream out;
    out << "class_id,partition,n_test,accuracy\n";
    for (const auto& [c, acc] : report.per_class_accuracy) {
        out << c << ',' << (dataset.is_base(c) ? "base" : "novel") << ','
            << format_g17(value_or_zero(report.per_class_n, c)) << ',' << format_g17(acc)
            << "\n";
    }
    return out.str();
}

}  // namespace pcn
