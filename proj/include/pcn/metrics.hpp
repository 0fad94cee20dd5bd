#ifndef PCN_METRICS_HPP
#define PCN_METRICS_HPP

#include <map>
#include <string>
#include <vector>

namespace pcn {

struct Dataset;

// A prediction is a full class ranking, best first. All metrics consume
// rankings so PCN, PN, k-NN and CE heads plug in uniformly.
using Ranking = std::vector<int>;

struct MetricsReport {
    double mca_combined = 0.0, mca_base = 0.0, mca_novel = 0.0;
    std::map<int, double> recall_at;           // k -> micro recall@k
    std::map<int, double> balanced_recall_at;  // k -> macro recall@k
    std::map<int, double> per_class_accuracy;
    std::map<int, double> per_class_n;  // test examples per class (mean over folds)
    int n_folds = 1;
    double mca_combined_std = 0.0, mca_base_std = 0.0, mca_novel_std = 0.0;
    std::map<int, double> recall_at_std, balanced_recall_at_std, per_class_accuracy_std;
};

// Mean per-class top-1 accuracy over the classes in class_filter. Classes
// with zero test examples are excluded (reported via *excluded when given).
double mca(const std::vector<Ranking>& ranked_preds, const std::vector<int>& labels,
           const std::vector<int>& class_filter, std::vector<int>* excluded = nullptr);

// Fraction of examples whose true label is in the top k (micro average).
// k larger than a ranking is clamped to its length.
double recall_at_k(const std::vector<Ranking>& ranked_preds, const std::vector<int>& labels,
                   int k);

// Per-class recall@k averaged uniformly over the classes present in labels.
double balanced_recall_at_k(const std::vector<Ranking>& ranked_preds,
                            const std::vector<int>& labels, int k);

// Arithmetic mean and population standard deviation per field, summed in
// fold-index order. All reports must carry identical metric keys.
MetricsReport aggregate_folds(const std::vector<MetricsReport>& reports);

struct MetricRow {
    std::string name;
    double mean = 0.0;
    double std_dev = 0.0;
};

// The scalar metrics of a report in a fixed order (mca_* then recall@k then
// balanced recall@k).
std::vector<MetricRow> metric_rows(const MetricsReport& report);

// CSV with header "metric,mean,std", one row per scalar metric.
std::string metrics_csv(const MetricsReport& report);
// CSV with header "class_id,partition,n_test,accuracy".
std::string per_class_csv(const MetricsReport& report, const Dataset& dataset);

}  // namespace pcn

#endif  // PCN_METRICS_HPP
