#include <doctest.h>

#include <cmath>

#include "pcn/embed_net.hpp"
#include "pcn/error.hpp"
#include "pcn/rng.hpp"
#include "support/finite_diff.hpp"
#include "support/test_util.hpp"

using namespace pcn;

namespace {

EmbedNet identity_net(std::size_t dim) {
    EmbedNet net;
    net.layer_dims = {dim, dim};
    net.weights.emplace_back(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) net.weights[0](i, i) = 1.0;
    net.biases.emplace_back(dim, 0.0);
    return net;
}

}  // namespace

TEST_CASE("net_init is seed-determined and zero-biased") {
    EmbedNet a = net_init({4, 8, 2}, 7);
    EmbedNet b = net_init({4, 8, 2}, 7);
    REQUIRE(a.n_layers() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(a.weights[l].values() == b.weights[l].values());
        for (double v : a.biases[l]) CHECK(v == 0.0);
    }
    CHECK(a.weights[0].rows() == 8);
    CHECK(a.weights[0].cols() == 4);
    CHECK(a.weights[1].rows() == 2);
    CHECK(a.weights[1].cols() == 8);
}

TEST_CASE("net_init scales weights by 1/sqrt(fan_in)") {
    EmbedNet net = net_init({16, 4}, 3);
    double bound = 1.0 / std::sqrt(16.0);
    for (double v : net.weights[0].values()) {
        CHECK(std::fabs(v) <= bound);
    }
}

TEST_CASE("net_init rejects bad dims") {
    CHECK_THROWS_AS(net_init({3}, 0), ConfigError);
    CHECK_THROWS_AS(net_init({}, 0), ConfigError);
    CHECK_THROWS_AS(net_init({4, 0, 2}, 0), ConfigError);
}

TEST_CASE("all-zero parameters embed everything to zero") {
    EmbedNet net = net_init({3, 5, 2}, 1);
    for (auto& w : net.weights) {
        for (double& v : w.values()) v = 0.0;
    }
    Pcg32 rng(5);
    Matrix batch = test_util::random_matrix(4, 3, rng);
    Matrix out = net_forward(net, batch);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("identity-structured single layer reproduces the input") {
    EmbedNet net = identity_net(3);
    Pcg32 rng(9);
    Matrix batch = test_util::random_matrix(6, 3, rng);
    Matrix out = net_forward(net, batch);
    CHECK(out == batch);
}

TEST_CASE("forward shape contract and purity") {
    EmbedNet net = net_init({4, 8, 2}, 11);
    Pcg32 rng(2);
    Matrix batch = test_util::random_matrix(5, 4, rng);
    Matrix a = net_forward(net, batch);
    Matrix b = net_forward(net, batch);
    CHECK(a.rows() == 5);
    CHECK(a.cols() == 2);
    CHECK(a == b);
}

TEST_CASE("forward rejects bad input") {
    EmbedNet net = net_init({4, 2}, 0);
    Matrix wrong(3, 5);
    CHECK_THROWS_AS(net_forward(net, wrong), ShapeError);
    Matrix bad(2, 4);
    bad(1, 2) = std::nan("");
    CHECK_THROWS_AS(net_forward(net, bad), DataError);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    EmbedNet net = net_init({4, 6, 3}, 13);
    Pcg32 rng(3);
    Matrix batch = test_util::random_matrix(5, 4, rng);
    ForwardTape tape;
    net_forward(net, batch, &tape);
    NetGradients grads = net_gradients(tape, Matrix(5, 3));
    for (const auto& w : grads.weights) {
        for (double v : w.values()) CHECK(v == 0.0);
    }
    for (const auto& b : grads.biases) {
        for (double v : b) CHECK(v == 0.0);
    }
}

TEST_CASE("sum-of-embeddings loss on an identity net has bias gradient N") {
    const std::size_t n = 6;
    EmbedNet net = identity_net(3);
    Pcg32 rng(17);
    Matrix batch = test_util::random_matrix(n, 3, rng);
    ForwardTape tape;
    net_forward(net, batch, &tape);
    NetGradients grads = net_gradients(tape, Matrix(n, 3, 1.0));
    for (double v : grads.biases[0]) CHECK(v == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
    EmbedNet net = net_init({4, 6, 3}, 21);
    Pcg32 rng(23);
    Matrix batch = test_util::random_matrix(5, 4, rng);
    Matrix weight = test_util::random_matrix(5, 3, rng);

    ForwardTape tape;
    net_forward(net, batch, &tape);
    NetGradients analytic = net_gradients(tape, weight);

    auto loss = [&](const EmbedNet& candidate) {
        Matrix out = net_forward(candidate, batch);
        double total = 0.0;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) total += weight(i, j) * out(i, j);
        }
        return total;
    };
    fd::CheckResult check = fd::check_gradients(net, loss, analytic);
    CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("gradient shape mismatch is rejected") {
    EmbedNet net = net_init({4, 2}, 1);
    Matrix batch(3, 4);
    ForwardTape tape;
    net_forward(net, batch, &tape);
    CHECK_THROWS_AS(net_gradients(tape, Matrix(3, 5)), ShapeError);
    CHECK_THROWS_AS(net_gradients(ForwardTape{}, Matrix(3, 2)), StateError);
}

TEST_CASE("adam with zero gradients and no decay is a fixed point") {
    EmbedNet net = net_init({3, 4, 2}, 5);
    EmbedNet before = net;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    AdamState state(net, cfg);
    adam_step(net, NetGradients(net), state);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        CHECK(net.weights[l].values() == before.weights[l].values());
        CHECK(net.biases[l] == before.biases[l]);
    }
    CHECK(state.step_count == 1);
}

TEST_CASE("first adam step moves against the gradient by about the learning rate") {
    EmbedNet net = net_init({2, 2}, 5);
    EmbedNet before = net;
    AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.weight_decay = 0.0;
    AdamState state(net, cfg);
    NetGradients grads(net);
    for (double& v : grads.weights[0].values()) v = 0.5;
    adam_step(net, grads, state);
    for (std::size_t i = 0; i < net.weights[0].values().size(); ++i) {
        double delta = net.weights[0].values()[i] - before.weights[0].values()[i];
        CHECK(delta < 0.0);
        CHECK(std::fabs(delta) > 0.999 * cfg.learning_rate);
        CHECK(std::fabs(delta) <= cfg.learning_rate);
    }
}

TEST_CASE("adam counts steps") {
    EmbedNet net = net_init({2, 2}, 5);
    AdamState state(net, AdamConfig{});
    NetGradients grads(net);
    for (int i = 0; i < 3; ++i) adam_step(net, grads, state);
    CHECK(state.step_count == 3);
}

TEST_CASE("non-finite gradients name the offending layer") {
    EmbedNet net = net_init({2, 3, 2}, 5);
    AdamState state(net, AdamConfig{});
    NetGradients grads(net);
    grads.weights[1](0, 0) = std::nan("");
    try {
        adam_step(net, grads, state);
        FAIL("expected OptimizationError");
    } catch (const OptimizationError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}
