#include <doctest.h>

#include <cmath>
#include <set>

#include "pcn/episodic.hpp"
#include "pcn/error.hpp"
#include "pcn/evaluate.hpp"
#include "pcn/io_util.hpp"
#include "support/finite_diff.hpp"
#include "support/frozen_q_loss.hpp"
#include "support/pn_reference.hpp"
#include "support/test_util.hpp"

using namespace pcn;

namespace {

// All-base dataset with the same number of examples per class, random
// features, everything in the train split.
Dataset uniform_dataset(int n_classes, std::size_t per_class, std::size_t dim, uint64_t seed) {
    Dataset ds;
    ds.dim = dim;
    ds.n_classes = n_classes;
    ds.n_base = 0;
    ds.partition.assign(static_cast<std::size_t>(n_classes), Partition::base);
    std::size_t total = static_cast<std::size_t>(n_classes) * per_class;
    Pcg32 rng(seed);
    ds.examples = test_util::random_matrix(total, dim, rng, 1.5);
    for (int c = 0; c < n_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) ds.labels.push_back(c);
    }
    ds.split.assign(total, Split::train);
    return ds;
}

// Two tight, well-separated classes with explicit train/val/test splits.
Dataset separable_dataset(std::size_t per_class, std::size_t dim, uint64_t seed) {
    Dataset ds;
    ds.dim = dim;
    ds.n_classes = 2;
    ds.n_base = 0;
    ds.partition.assign(2, Partition::base);
    Pcg32 rng(seed);
    ds.examples = Matrix(2 * per_class, dim);
    for (int c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            std::size_t row = static_cast<std::size_t>(c) * per_class + i;
            for (std::size_t d = 0; d < dim; ++d) {
                ds.examples(row, d) = (c == 0 ? -2.0 : 2.0) + 0.1 * rng.normal();
            }
            ds.labels.push_back(c);
            if (i < per_class - 10) {
                ds.split.push_back(Split::train);
            } else if (i < per_class - 5) {
                ds.split.push_back(Split::val);
            } else {
                ds.split.push_back(Split::test);
            }
        }
    }
    return ds;
}

PrototypeBank bank_for(const Dataset& ds, const EmbedNet& net, int m, uint64_t seed) {
    std::map<int, Matrix> embs;
    std::map<int, int> m_config;
    PrototypeBank bank;
    for (int c = 0; c < ds.n_classes; ++c) {
        std::vector<std::size_t> idx = ds.indices_of(c, Split::train);
        Matrix batch(idx.size(), ds.dim);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = ds.examples.row(idx[i]);
            std::copy(src.begin(), src.end(), batch.row(i).begin());
        }
        embs[c] = net_forward(net, batch);
        m_config[c] = m;
        bank.class_ids.push_back(c);
        bank.prototypes.push_back(Matrix(1, net.embed_dim()));
    }
    return reinit_epoch(bank, embs, m_config, seed);
}

}  // namespace

TEST_CASE("sample_episode draws disjoint support and query sets") {
    Dataset ds = uniform_dataset(10, 30, 4, 3);
    EpisodeConfig cfg;
    cfg.n_way = 10;
    cfg.n_support = 10;
    cfg.n_query = 10;
    Pcg32 rng(5, rng_stream::episodes);
    Episode ep = sample_episode(ds, cfg, rng);
    REQUIRE(ep.class_ids.size() == 10);
    std::set<int> classes(ep.class_ids.begin(), ep.class_ids.end());
    CHECK(classes.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
        CHECK(ep.support[k].size() == 10);
        CHECK(ep.query[k].size() == 10);
        std::set<std::size_t> seen(ep.support[k].begin(), ep.support[k].end());
        for (std::size_t i : ep.query[k]) CHECK(seen.insert(i).second);
        CHECK(seen.size() == 20);
        for (std::size_t i : ep.support[k]) CHECK(ds.labels[i] == ep.class_ids[k]);
    }
}

TEST_CASE("sample_episode reduces the query count for short classes") {
    Dataset ds = uniform_dataset(3, 30, 4, 7);
    // shrink class 2 to 11 examples
    Dataset small = ds;
    small.labels.clear();
    small.split.clear();
    std::vector<std::size_t> keep;
    std::size_t class2_kept = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] == 2 && class2_kept >= 11) continue;
        if (ds.labels[i] == 2) ++class2_kept;
        keep.push_back(i);
    }
    small.examples = Matrix(keep.size(), ds.dim);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        auto src = ds.examples.row(keep[i]);
        std::copy(src.begin(), src.end(), small.examples.row(i).begin());
        small.labels.push_back(ds.labels[keep[i]]);
        small.split.push_back(Split::train);
    }

    EpisodeConfig cfg;
    cfg.n_way = 3;
    cfg.n_support = 10;
    cfg.n_query = 10;
    Pcg32 rng(1, rng_stream::episodes);
    Episode ep = sample_episode(small, cfg, rng);
    for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
        if (ep.class_ids[k] == 2) {
            CHECK(ep.support[k].size() == 10);
            CHECK(ep.query[k].size() == 1);
        } else {
            CHECK(ep.query[k].size() == 10);
        }
    }
}

TEST_CASE("sample_episode is deterministic and rejects thin datasets") {
    Dataset ds = uniform_dataset(5, 20, 3, 11);
    EpisodeConfig cfg;
    cfg.n_way = 4;
    cfg.n_support = 5;
    cfg.n_query = 5;
    Pcg32 a(9, rng_stream::episodes), b(9, rng_stream::episodes);
    Episode ea = sample_episode(ds, cfg, a);
    Episode eb = sample_episode(ds, cfg, b);
    CHECK(ea.class_ids == eb.class_ids);
    CHECK(ea.support == eb.support);
    CHECK(ea.query == eb.query);

    cfg.n_support = 50;
    Pcg32 c(9);
    CHECK_THROWS_AS(sample_episode(ds, cfg, c), SamplingError);
}

TEST_CASE("single-class episode loss cancels to exactly zero") {
    Dataset ds = uniform_dataset(1, 12, 3, 13);
    EmbedNet net = net_init({3, 6, 4}, 1);
    PrototypeBank bank = bank_for(ds, net, 3, 2);
    Episode ep;
    ep.class_ids = {0};
    ep.support = {{0, 1, 2, 3}};
    ep.query = {{4, 5, 6}};
    EpisodeConfig cfg;
    cfg.tau_train = 0.8;
    cfg.alpha = 0.5;
    EpisodeResult res = episode_loss(net, bank, ds, ep, cfg);
    CHECK(res.loss == 0.0);
}

TEST_CASE("two-class episode loss matches the closed form log(1 + exp(-1))") {
    // Identity trunk, so dataset rows are the embeddings. With alpha = 0 the
    // updated prototypes are the support means: (0,0) for class 0, (1,0) for
    // class 1. The single query sits on its own prototype, distance 1 from
    // the other.
    Dataset ds;
    ds.dim = 2;
    ds.n_classes = 2;
    ds.n_base = 0;
    ds.partition.assign(2, Partition::base);
    ds.examples = Matrix(3, 2);
    ds.examples(1, 0) = 1.0;  // class 1 support
    ds.labels = {0, 1, 0};
    ds.split.assign(3, Split::train);

    EmbedNet net;
    net.layer_dims = {2, 2};
    net.weights.emplace_back(2, 2);
    net.weights[0](0, 0) = 1.0;
    net.weights[0](1, 1) = 1.0;
    net.biases.emplace_back(2, 0.0);

    PrototypeBank bank;
    bank.class_ids = {0, 1};
    bank.prototypes = {Matrix(1, 2, 9.0), Matrix(1, 2, -9.0)};  // overwritten at alpha 0

    Episode ep;
    ep.class_ids = {0, 1};
    ep.support = {{0}, {1}};
    ep.query = {{2}, {}};

    EpisodeConfig cfg;
    cfg.tau_train = 1.0;
    cfg.alpha = 0.0;
    EpisodeResult res = episode_loss(net, bank, ds, ep, cfg);
    double expected = std::log1p(std::exp(-1.0));
    CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("episode loss gradients match finite differences in every mode") {
    Pcg32 rng(17);
    int checked = 0;
    for (int trial = 0; trial < 6; ++trial) {
        const int n_way = 2 + static_cast<int>(rng.bounded(2));
        const std::size_t dim_in = 3;
        Dataset ds = uniform_dataset(n_way, 10, dim_in, 100 + trial);
        EmbedNet net = net_init({dim_in, 5, 4}, 200 + trial);
        const double alpha_grid[3] = {0.0, 0.5, 1.0};
        EpisodeConfig cfg;
        cfg.n_way = n_way;
        cfg.n_support = 3;
        cfg.n_query = 3;
        cfg.tau_train = 0.5 + rng.next_double();
        cfg.alpha = alpha_grid[trial % 3];
        cfg.stop_grad_q = (trial % 2 == 1);

        Pcg32 ep_rng(300 + trial, rng_stream::episodes);
        Episode ep = sample_episode(ds, cfg, ep_rng);
        PrototypeBank bank = bank_for(ds, net, 2, 400 + trial);

        PrototypeBank work = bank;
        EpisodeResult res = episode_loss(net, work, ds, ep, cfg);
        // With stop_grad_q the gradient differentiates the loss with all
        // responsibilities held at their current values, so that surrogate is
        // what finite differences must probe.
        fd::LossFn loss_fn;
        if (cfg.stop_grad_q) {
            loss_fn = frozen_q::make_loss(net, bank, ds, ep, cfg);
            CHECK(loss_fn(net) == doctest::Approx(res.loss).epsilon(1e-12));
        } else {
            loss_fn = [&](const EmbedNet& candidate) {
                PrototypeBank fresh = bank;
                return episode_loss(candidate, fresh, ds, ep, cfg).loss;
            };
        }
        fd::CheckResult check = fd::check_gradients(net, loss_fn, res.grads);
        INFO("trial ", trial, " alpha ", cfg.alpha, " stop_grad_q ", cfg.stop_grad_q,
             " rel err ", check.max_rel_error);
        CHECK(check.max_rel_error < 1e-4);
        ++checked;
    }
    CHECK(checked == 6);
}

TEST_CASE("episode loss leaves non-episode prototypes bitwise unchanged") {
    Dataset ds = uniform_dataset(4, 10, 3, 23);
    EmbedNet net = net_init({3, 4}, 5);
    PrototypeBank bank = bank_for(ds, net, 2, 6);
    Matrix before2 = bank.prototypes[2];
    Matrix before3 = bank.prototypes[3];

    Episode ep;
    ep.class_ids = {0, 1};
    ep.support = {{0, 1}, {10, 11}};
    ep.query = {{2}, {12}};
    EpisodeConfig cfg;
    episode_loss(net, bank, ds, ep, cfg);
    CHECK(bank.prototypes[2] == before2);
    CHECK(bank.prototypes[3] == before3);
}

TEST_CASE("episode loss requires known classes and valid config") {
    Dataset ds = uniform_dataset(2, 10, 3, 29);
    EmbedNet net = net_init({3, 4}, 5);
    PrototypeBank bank;
    bank.class_ids = {0};
    bank.prototypes = {Matrix(1, 4)};
    Episode ep;
    ep.class_ids = {0, 1};
    ep.support = {{0}, {10}};
    ep.query = {{1}, {11}};
    EpisodeConfig cfg;
    CHECK_THROWS_AS(episode_loss(net, bank, ds, ep, cfg), StateError);
    cfg.tau_train = 0.0;
    CHECK_THROWS_AS(episode_loss(net, bank, ds, ep, cfg), ConfigError);
}

TEST_CASE("with single prototypes and no memory the loss is the PN loss") {
    Pcg32 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const int n_way = 2 + static_cast<int>(rng.bounded(3));
        Dataset ds = uniform_dataset(n_way, 12, 4, 500 + trial);
        EmbedNet net = net_init({4, 6, 5}, 600 + trial);
        EpisodeConfig cfg;
        cfg.n_way = n_way;
        cfg.n_support = 4;
        cfg.n_query = 4;
        cfg.tau_train = 1.0;
        cfg.alpha = 0.0;
        Pcg32 ep_rng(700 + trial, rng_stream::episodes);
        Episode ep = sample_episode(ds, cfg, ep_rng);
        PrototypeBank bank = bank_for(ds, net, 1, 800 + trial);
        EpisodeResult res = episode_loss(net, bank, ds, ep, cfg);

        // independent PN loss over the same episode
        std::vector<std::size_t> all_rows;
        std::vector<std::vector<std::size_t>> sup_rows(ep.class_ids.size()),
            qry_rows(ep.class_ids.size());
        Matrix inputs(0, 0);
        {
            std::size_t total = 0;
            for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
                total += ep.support[k].size() + ep.query[k].size();
            }
            inputs = Matrix(total, ds.dim);
            std::size_t row = 0;
            for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
                for (std::size_t i : ep.support[k]) {
                    auto src = ds.examples.row(i);
                    std::copy(src.begin(), src.end(), inputs.row(row).begin());
                    sup_rows[k].push_back(row++);
                }
                for (std::size_t i : ep.query[k]) {
                    auto src = ds.examples.row(i);
                    std::copy(src.begin(), src.end(), inputs.row(row).begin());
                    qry_rows[k].push_back(row++);
                }
            }
        }
        double reference = pn_ref::episode_loss(net, inputs, sup_rows, qry_rows);
        CHECK(res.loss == doctest::Approx(reference).epsilon(1e-10));
    }
}

TEST_CASE("episode loss is invariant to translating embeddings and prototypes") {
    // Identity trunk makes dataset rows the embeddings, so translating the
    // data and the bank together must leave the loss untouched.
    Pcg32 rng(61);
    const std::size_t dim = 3;
    Dataset ds = uniform_dataset(3, 8, dim, 67);

    EmbedNet net;
    net.layer_dims = {dim, dim};
    net.weights.emplace_back(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) net.weights[0](i, i) = 1.0;
    net.biases.emplace_back(dim, 0.0);

    PrototypeBank bank = bank_for(ds, net, 2, 5);
    Episode ep;
    ep.class_ids = {0, 1, 2};
    ep.support = {{0, 1, 2}, {8, 9, 10}, {16, 17, 18}};
    ep.query = {{3, 4}, {11, 12}, {19, 20}};
    EpisodeConfig cfg;
    cfg.tau_train = 0.7;
    cfg.alpha = 0.4;

    PrototypeBank work = bank;
    double base_loss = episode_loss(net, work, ds, ep, cfg).loss;

    auto shift = test_util::random_vector(dim, rng, 4.0);
    Dataset moved = ds;
    for (std::size_t i = 0; i < moved.size(); ++i) {
        auto row = moved.examples.row(i);
        for (std::size_t c = 0; c < dim; ++c) row[c] += shift[c];
    }
    PrototypeBank moved_bank = bank;
    for (auto& protos : moved_bank.prototypes) {
        for (std::size_t z = 0; z < protos.rows(); ++z) {
            auto row = protos.row(z);
            for (std::size_t c = 0; c < dim; ++c) row[c] += shift[c];
        }
    }
    double moved_loss = episode_loss(net, moved_bank, moved, ep, cfg).loss;
    CHECK(moved_loss == doctest::Approx(base_loss).epsilon(1e-10));
}

TEST_CASE("train runs exactly one epoch when capped") {
    Dataset ds = separable_dataset(30, 3, 37);
    TrainOptions opts;
    opts.episode.n_way = 2;
    opts.episode.n_support = 5;
    opts.episode.n_query = 5;
    opts.episode.episodes_per_epoch = 5;
    opts.m_base = 2;
    opts.patience = 0;
    opts.max_epochs = 1;
    opts.seed = 1;
    TrainResult result = train(ds, {3, 8, 4}, opts);
    CHECK(result.history.size() == 1);
}

TEST_CASE("train separates two easy classes within five epochs") {
    Dataset ds = separable_dataset(40, 3, 41);
    TrainOptions opts;
    opts.episode.n_way = 2;
    opts.episode.n_support = 5;
    opts.episode.n_query = 5;
    opts.episode.episodes_per_epoch = 20;
    opts.m_base = 2;
    opts.patience = 10;
    opts.max_epochs = 5;
    opts.adam.learning_rate = 3e-3;
    opts.seed = 2;
    TrainResult result = train(ds, {3, 8, 4}, opts);
    double best = 0.0;
    for (const EpochStats& row : result.history) best = std::max(best, row.val_mca);
    CHECK(best == 1.0);
}

TEST_CASE("train is deterministic given the seed") {
    Dataset ds = separable_dataset(30, 3, 43);
    TrainOptions opts;
    opts.episode.n_way = 2;
    opts.episode.n_support = 4;
    opts.episode.n_query = 4;
    opts.episode.episodes_per_epoch = 8;
    opts.m_base = 2;
    opts.max_epochs = 3;
    opts.seed = 5;
    TrainResult a = train(ds, {3, 6, 4}, opts);
    TrainResult b = train(ds, {3, 6, 4}, opts);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_mca == b.history[i].val_mca);
    }
    for (std::size_t l = 0; l < a.net.n_layers(); ++l) {
        CHECK(a.net.weights[l] == b.net.weights[l]);
    }
}

TEST_CASE("build_test_prototypes clamps novel clusters to the shot count") {
    Dataset ds = uniform_dataset(3, 20, 3, 47);
    ds.n_base = 2;
    ds.partition = {Partition::base, Partition::base, Partition::novel};
    EmbedNet net = net_init({3, 4}, 7);

    std::map<int, std::vector<std::size_t>> support5{{2, {40, 41, 42, 43, 44}}};
    PrototypeBank five = build_test_prototypes(net, ds, 2, 4, 1, &support5);
    CHECK(five.prototypes[five.index_of(2)].rows() == 4);

    std::map<int, std::vector<std::size_t>> support2{{2, {40, 41}}};
    PrototypeBank two = build_test_prototypes(net, ds, 2, 4, 1, &support2);
    CHECK(two.prototypes[two.index_of(2)].rows() == 2);

    // without novel support only base classes are present
    PrototypeBank base_only = build_test_prototypes(net, ds, 2, 4, 1);
    CHECK(base_only.n_classes() == 2);
}

TEST_CASE("single-cluster test prototypes are the class means") {
    Dataset ds = uniform_dataset(3, 8, 3, 53);
    EmbedNet net = net_init({3, 5}, 9);
    PrototypeBank bank = build_test_prototypes(net, ds, 1, 1, 3);
    for (int c = 0; c < 3; ++c) {
        std::vector<std::size_t> idx = ds.indices_of(c, Split::train);
        Matrix batch(idx.size(), 3);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = ds.examples.row(idx[i]);
            std::copy(src.begin(), src.end(), batch.row(i).begin());
        }
        Matrix embs = net_forward(net, batch);
        const Matrix& proto = bank.prototypes[static_cast<std::size_t>(bank.index_of(c))];
        REQUIRE(proto.rows() == 1);
        for (std::size_t d = 0; d < embs.cols(); ++d) {
            double mean = 0.0;
            for (std::size_t i = 0; i < embs.rows(); ++i) mean += embs(i, d);
            mean /= static_cast<double>(embs.rows());
            CHECK(proto(0, d) == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("checkpoints round trip through the text format") {
    Dataset ds = uniform_dataset(3, 10, 4, 59);
    EmbedNet net = net_init({4, 7, 5}, 11);
    PrototypeBank bank = bank_for(ds, net, 2, 13);
    test_util::TempDir tmp;
    save_checkpoint(tmp.file("model.ckpt"), net, bank);
    Checkpoint loaded = load_checkpoint(tmp.file("model.ckpt"));
    CHECK(loaded.net.layer_dims == net.layer_dims);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        CHECK(loaded.net.weights[l] == net.weights[l]);
        CHECK(loaded.net.biases[l] == net.biases[l]);
    }
    CHECK(loaded.bank.class_ids == bank.class_ids);
    for (std::size_t k = 0; k < bank.n_classes(); ++k) {
        CHECK(loaded.bank.prototypes[k] == bank.prototypes[k]);
    }
}
