#ifndef PCN_EPISODIC_HPP
#define PCN_EPISODIC_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcn/datagen.hpp"
#include "pcn/embed_net.hpp"
#include "pcn/protobank.hpp"
#include "pcn/rng.hpp"

namespace pcn {

struct EpisodeConfig {
    int n_way = 10;
    int n_support = 10;
    int n_query = 10;
    int episodes_per_epoch = 200;
    double tau_train = 1.0;
    double alpha = 0.5;
    bool stop_grad_q = false;
};

struct Episode {
    std::vector<int> class_ids;                     // distinct classes, one episode
    std::vector<std::vector<std::size_t>> support;  // per class, dataset indices
    std::vector<std::vector<std::size_t>> query;    // per class, disjoint from support
};

// Uniformly samples n_way base classes with at least n_support + 1 train
// examples, then disjoint support/query sets per class. A class short of
// n_support + n_query examples gets its query count reduced (never below 1).
Episode sample_episode(const Dataset& dataset, const EpisodeConfig& cfg, Pcg32& rng);

struct EpisodeResult {
    double loss = 0.0;
    NetGradients grads;
};

// One episode of Algorithm-style training: embeds the support set, computes
// support responsibilities against the current prototypes, EMA-updates the
// episode classes' prototypes in the bank, then scores queries against the
// updated prototypes. Gradients flow through query embeddings and through
// support embeddings via the (1 - alpha) term; the alpha-weighted old
// prototypes are constants; stop_grad_q additionally freezes the q factors.
EpisodeResult episode_loss(const EmbedNet& net, PrototypeBank& bank, const Dataset& dataset,
                           const Episode& episode, const EpisodeConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mca = 0.0;
};

struct TrainOptions {
    EpisodeConfig episode;
    int m_base = 10;
    int patience = 10;
    int max_epochs = 30;
    AdamConfig adam;
    uint64_t seed = 0;
};

struct TrainResult {
    EmbedNet net;
    PrototypeBank bank;
    std::vector<EpochStats> history;
    int best_epoch = 0;
};

// Episodic training over the base classes: per epoch, k-means prototype
// re-initialization from the full train split, then episodes_per_epoch
// episode steps, then validation mca; keeps the best-validation snapshot and
// stops after `patience` epochs without improvement or at max_epochs.
TrainResult train(const Dataset& dataset, const std::vector<std::size_t>& layer_dims,
                  const TrainOptions& opts);

// Frozen bank for K_base+novel-way classification: base classes cluster their
// full train split with m_base prototypes; when novel_support is given, each
// novel class clusters its support embeddings with m_novel prototypes. M is
// always clamped to the example count.
PrototypeBank build_test_prototypes(const EmbedNet& net, const Dataset& dataset, int m_base,
                                    int m_novel, uint64_t seed,
                                    const std::map<int, std::vector<std::size_t>>* novel_support =
                                        nullptr);

// Checkpoint: "pcn-net v1 <n_dims> <dims...>" header, per layer the weight
// matrix row-major then one bias line (%.17g), followed by the bank section
// in the pcn-bank format.
void save_checkpoint(const std::string& path, const EmbedNet& net, const PrototypeBank& bank);
struct Checkpoint {
    EmbedNet net;
    PrototypeBank bank;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pcn

#endif  // PCN_EPISODIC_HPP
