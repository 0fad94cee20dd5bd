#ifndef PCN_BASELINES_HPP
#define PCN_BASELINES_HPP

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "pcn/datagen.hpp"
#include "pcn/embed_net.hpp"
#include "pcn/episodic.hpp"
#include "pcn/protobank.hpp"

namespace pcn {

// PN is PCN run with a single prototype per class and no episodic memory.
struct MethodSetup {
    EpisodeConfig episode;
    int m_base = 10;
    int m_novel = 4;
};

MethodSetup pn_config(const EpisodeConfig& base);

// Post-hoc clustering of a single-prototype model's embeddings into
// m_base/m_novel prototypes per class; evaluation uses class_posterior
// unchanged.
PrototypeBank posthoc_protos(const EmbedNet& pn_net, const Dataset& dataset, int m_base,
                             int m_novel, uint64_t seed,
                             const std::map<int, std::vector<std::size_t>>* novel_support =
                                 nullptr);

struct KnnResult {
    int predicted = -1;
    std::vector<int> ranking;      // all train classes, best first
    std::vector<double> scores;    // neighbor counts, aligned with ranking
};

// Euclidean k-NN over embeddings. Class score is the neighbor count; ties
// break on smaller mean neighbor distance, then lower class id. k is clamped
// to the training-set size.
KnnResult knn_classify(const Matrix& train_embs, const std::vector<int>& train_labels,
                       std::span<const double> query_emb, int k);

// Linear softmax head over the trunk's embedding space.
struct CEHead {
    std::vector<int> class_ids;  // row order
    Matrix weight;               // n_classes x embed_dim
    std::vector<double> bias;

    int row_of(int class_id) const;
};

CEHead make_ce_head(const std::vector<int>& class_ids, std::size_t embed_dim, uint64_t seed);

std::vector<double> ce_logits(const CEHead& head, std::span<const double> emb);
std::vector<double> ce_posterior(const CEHead& head, std::span<const double> emb);
std::vector<int> ce_ranking(const CEHead& head, std::span<const double> emb);

struct CeTrainOptions {
    int batch_size = 32;
    int steps_per_epoch = 200;
    int max_epochs = 30;
    int patience = 10;
    AdamConfig adam;
    uint64_t seed = 0;
};

struct CeHistoryEntry {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mca = 0.0;
};

// Draws n dataset indices for one minibatch. Balanced mode picks a class
// uniformly and then an example uniformly within it (oversampling analog);
// unbalanced mode draws uniformly from the pooled examples.
std::vector<std::size_t> sample_training_batch(
    const std::map<int, std::vector<std::size_t>>& train_indices, bool class_balanced,
    std::size_t n, Pcg32& rng);

// Minibatch softmax cross entropy over trunk + head. class_balanced draws a
// class uniformly, then an example uniformly within it; otherwise examples
// are drawn uniformly from the pooled training set. Early-stops on the base
// validation mca and keeps the best snapshot. The class set in
// train_indices picks between base-only and base+novel regimes.
std::vector<CeHistoryEntry> ce_train(EmbedNet& net, CEHead& head, const Dataset& dataset,
                                     const std::map<int, std::vector<std::size_t>>& train_indices,
                                     bool class_balanced, const CeTrainOptions& opts);

}  // namespace pcn

#endif  // PCN_BASELINES_HPP
