#include "pcn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pcn/error.hpp"
#include "pcn/io_util.hpp"
#include "pcn/rng.hpp"

namespace pcn {

namespace {

// Anchor spread relative to the mode ball radius. Chosen so that modes of
// different classes interleave: single-prototype class means are then a poor
// summary while per-mode prototypes remain informative.
constexpr double kAnchorScaleRatio = 0.25;

// Fisher-Yates using the supplied generator.
void shuffle_indices(std::vector<std::size_t>& idx, Pcg32& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

// Smooth invertible residual map x -> x + A tanh(Bx + c), contraction by
// construction: A and B are rescaled so the product of their Frobenius norms
// is 0.9, keeping the residual Lipschitz constant below 1.
struct WarpLayer {
    Matrix a, b;
    std::vector<double> c;

    static WarpLayer random(std::size_t dim, Pcg32& rng) {
        WarpLayer layer;
        layer.a = Matrix(dim, dim);
        layer.b = Matrix(dim, dim);
        layer.c.resize(dim);
        for (double& v : layer.a.values()) v = rng.normal();
        for (double& v : layer.b.values()) v = rng.normal();
        for (double& v : layer.c) v = rng.normal();
        auto frob = [](const Matrix& m) {
            double s = 0.0;
            for (double v : m.values()) s += v * v;
            return std::sqrt(s);
        };
        double norm_product = frob(layer.a) * frob(layer.b);
        double scale = std::sqrt(0.9 / norm_product);
        for (double& v : layer.a.values()) v *= scale;
        for (double& v : layer.b.values()) v *= scale;
        return layer;
    }

    void apply(std::span<double> x) const {
        std::vector<double> hidden(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
            hidden[j] = std::tanh(c[j] + dot(b.row(j), x));
        }
        for (std::size_t j = 0; j < x.size(); ++j) {
            x[j] += dot(a.row(j), std::span<const double>(hidden));
        }
    }
};

}  // namespace

std::vector<std::size_t> Dataset::class_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(n_classes), 0);
    for (int label : labels) sizes[static_cast<std::size_t>(label)] += 1;
    return sizes;
}

std::vector<std::size_t> Dataset::indices_of(int class_id, Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == class_id && split[i] == s) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::indices_of(int class_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == class_id) out.push_back(i);
    }
    return out;
}

int GenConfig::modes_for(int class_id) const {
    if (modes_per_class.empty()) return 1;
    if (modes_per_class.size() == 1) return modes_per_class.front();
    return modes_per_class[static_cast<std::size_t>(class_id)];
}

std::vector<std::size_t> zipf_sizes(int n_classes, int head_count, double tail_exponent) {
    std::vector<std::size_t> sizes;
    sizes.reserve(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        double raw = head_count * std::pow(static_cast<double>(c + 1), -tail_exponent);
        auto n = static_cast<long long>(std::floor(raw));
        if (n < 1) {
            throw ConfigError("zipf_sizes: class " + std::to_string(c) +
                              " would get " + std::to_string(n) + " examples");
        }
        sizes.push_back(static_cast<std::size_t>(n));
    }
    return sizes;
}

Dataset gen_synthetic(const GenConfig& cfg) {
    if (cfg.n_classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
    if (cfg.ambient_dim < 1) throw ConfigError("gen_synthetic: ambient_dim must be >= 1");
    if (cfg.tail_exponent < 0.0) throw ConfigError("gen_synthetic: tail_exponent must be >= 0");
    if (cfg.noise_scale < 0.0) throw ConfigError("gen_synthetic: noise_scale must be >= 0");
    if (cfg.mode_separation <= 0.0) throw ConfigError("gen_synthetic: mode_separation must be > 0");
    if (!cfg.modes_per_class.empty() && cfg.modes_per_class.size() != 1 &&
        cfg.modes_per_class.size() != static_cast<std::size_t>(cfg.n_classes)) {
        throw ConfigError("gen_synthetic: modes_per_class must have 1 or n_classes entries");
    }
    int max_modes = 1;
    for (int c = 0; c < cfg.n_classes; ++c) {
        int g = cfg.modes_for(c);
        if (g < 1) throw ConfigError("gen_synthetic: modes_per_class entries must be >= 1");
        max_modes = std::max(max_modes, g);
    }
    if (cfg.head_count < max_modes) {
        throw ConfigError("gen_synthetic: head_count must be >= modes_per_class");
    }

    const std::size_t dim = static_cast<std::size_t>(cfg.ambient_dim);
    std::vector<std::size_t> sizes = zipf_sizes(cfg.n_classes, cfg.head_count, cfg.tail_exponent);
    std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});

    Pcg32 rng(cfg.seed, rng_stream::data);
    const double anchor_scale = kAnchorScaleRatio * cfg.mode_separation;

    Dataset ds;
    ds.dim = dim;
    ds.n_classes = cfg.n_classes;
    ds.n_base = 0;
    ds.partition.assign(static_cast<std::size_t>(cfg.n_classes), Partition::base);
    ds.examples = Matrix(total, dim);
    ds.labels.reserve(total);
    ds.split.assign(total, Split::train);

    std::size_t row = 0;
    for (int c = 0; c < cfg.n_classes; ++c) {
        std::vector<double> anchor(dim);
        for (double& v : anchor) v = anchor_scale * rng.normal();
        const int n_modes = cfg.modes_for(c);
        Matrix modes(static_cast<std::size_t>(n_modes), dim);
        for (int g = 0; g < n_modes; ++g) {
            // Uniform in the ball of radius mode_separation around the anchor.
            std::vector<double> dir(dim);
            double norm = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            double radius = cfg.mode_separation *
                            std::pow(rng.next_double(), 1.0 / static_cast<double>(dim));
            auto m = modes.row(static_cast<std::size_t>(g));
            for (std::size_t j = 0; j < dim; ++j) m[j] = anchor[j] + radius * dir[j] / norm;
        }
        for (std::size_t i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) {
            std::size_t g = static_cast<std::size_t>(rng.bounded(static_cast<uint64_t>(n_modes)));
            auto x = ds.examples.row(row);
            auto m = modes.row(g);
            for (std::size_t j = 0; j < dim; ++j) x[j] = m[j] + cfg.noise_scale * rng.normal();
            ds.labels.push_back(c);
            ++row;
        }
    }

    if (cfg.warp) {
        WarpLayer first = WarpLayer::random(dim, rng);
        WarpLayer second = WarpLayer::random(dim, rng);
        for (std::size_t i = 0; i < total; ++i) {
            first.apply(ds.examples.row(i));
            second.apply(ds.examples.row(i));
        }
    }

    // Rescale to unit coordinate RMS so downstream tanh trunks see inputs at
    // a trainable scale regardless of mode_separation.
    double sum_sq = 0.0;
    for (double v : ds.examples.values()) sum_sq += v * v;
    double rms = std::sqrt(sum_sq / static_cast<double>(ds.examples.values().size()));
    if (rms > 0.0) {
        for (double& v : ds.examples.values()) v /= rms;
    }
    return ds;
}

Dataset split_base_novel(const Dataset& dataset, int k_base, double val_frac, uint64_t seed) {
    if (k_base < 1 || k_base >= dataset.n_classes) {
        throw ConfigError("split_base_novel: k_base must be in [1, n_classes)");
    }
    if (val_frac < 0.0 || val_frac >= 1.0) {
        throw ConfigError("split_base_novel: val_frac must be in [0, 1)");
    }
    Dataset out = dataset;
    std::vector<std::size_t> sizes = dataset.class_sizes();
    std::vector<int> order(static_cast<std::size_t>(dataset.n_classes));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sizes[static_cast<std::size_t>(a)] != sizes[static_cast<std::size_t>(b)]) {
            return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
        }
        return a < b;
    });
    out.partition.assign(static_cast<std::size_t>(dataset.n_classes), Partition::novel);
    for (int r = 0; r < k_base; ++r) {
        out.partition[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
            Partition::base;
    }
    out.n_base = k_base;
    std::fill(out.split.begin(), out.split.end(), Split::train);

    for (int c = 0; c < dataset.n_classes; ++c) {
        if (out.partition[static_cast<std::size_t>(c)] != Partition::base) continue;
        std::vector<std::size_t> idx = dataset.indices_of(c);
        std::size_t n = idx.size();
        std::size_t held = std::max<std::size_t>(
            5, static_cast<std::size_t>(std::ceil(val_frac * static_cast<double>(n))));
        if (n < 2 * held + 1) {
            throw SplitError("split_base_novel: base class " + std::to_string(c) + " has " +
                             std::to_string(n) + " examples, needs " +
                             std::to_string(2 * held + 1) + " for val/test/train");
        }
        Pcg32 rng(mix_seed(seed, static_cast<uint64_t>(c)), rng_stream::data);
        shuffle_indices(idx, rng);
        for (std::size_t i = 0; i < held; ++i) out.split[idx[i]] = Split::val;
        for (std::size_t i = held; i < 2 * held; ++i) out.split[idx[i]] = Split::test;
    }
    return out;
}

std::vector<LowshotFold> lowshot_folds(const Dataset& dataset, int n_train, int n_test,
                                       int folds, uint64_t seed) {
    if (n_train < 1 || n_test < 1) throw ConfigError("lowshot_folds: shots must be >= 1");
    if (folds < 1) throw ConfigError("lowshot_folds: folds must be >= 1");
    std::vector<int> novel_classes;
    for (int c = 0; c < dataset.n_classes; ++c) {
        if (!dataset.is_base(c)) novel_classes.push_back(c);
    }
    if (novel_classes.empty()) throw FoldError("lowshot_folds: dataset has no novel classes");

    std::vector<LowshotFold> out(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        LowshotFold& fold = out[static_cast<std::size_t>(f)];
        for (int c : novel_classes) {
            std::vector<std::size_t> pool = dataset.indices_of(c);
            if (pool.size() < 2) {
                throw FoldError("lowshot_folds: novel class " + std::to_string(c) +
                                " has fewer than 2 examples");
            }
            // Support is funded first but test always keeps at least one example.
            std::size_t support_n = std::min<std::size_t>(static_cast<std::size_t>(n_train),
                                                          pool.size() - 1);
            std::size_t test_n = std::min<std::size_t>(static_cast<std::size_t>(n_test),
                                                       pool.size() - support_n);
            Pcg32 rng(mix_seed(seed, static_cast<uint64_t>(f) * 1000003ULL +
                                         static_cast<uint64_t>(c)),
                      rng_stream::folds);
            shuffle_indices(pool, rng);
            fold.support[c].assign(pool.begin(), pool.begin() + static_cast<long>(support_n));
            fold.test[c].assign(pool.begin() + static_cast<long>(support_n),
                                pool.begin() + static_cast<long>(support_n + test_n));
        }
    }
    return out;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    std::ostringstream out;
    out << "pcn-dataset v1 " << dataset.size() << ' ' << dataset.dim << ' ' << dataset.n_classes
        << ' ' << dataset.n_base << "\n";
    out << "sizes";
    for (std::size_t s : dataset.class_sizes()) out << ' ' << s;
    out << "\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.labels[i] << ' ' << static_cast<int>(dataset.split[i]);
        for (double v : dataset.examples.row(i)) out << ' ' << format_g17(v);
        out << "\n";
    }
    atomic_write_text(path, out.str());
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file: " + path);
    std::size_t line_no = 0;
    std::string line;
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError(path + ":" + std::to_string(line_no) + ": " + what);
    };

    if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
    ++line_no;
    std::istringstream header(line);
    std::string magic, version;
    std::size_t n = 0, dim = 0;
    int k = 0, k_base = 0;
    if (!(header >> magic >> version) || magic != "pcn-dataset") {
        throw fail("expected 'pcn-dataset v1 <N> <D_in> <K> <K_base>' header");
    }
    if (version != "v1") throw fail("unsupported dataset version '" + version + "'");
    if (!(header >> n >> dim >> k >> k_base) || k < 1 || k_base < 0 || k_base > k) {
        throw fail("malformed header counts");
    }

    if (!std::getline(in, line)) throw fail("missing sizes line");
    ++line_no;
    std::istringstream sizes_line(line);
    std::string sizes_tag;
    if (!(sizes_line >> sizes_tag) || sizes_tag != "sizes") throw fail("expected 'sizes <K ints>'");
    std::vector<std::size_t> declared_sizes(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        if (!(sizes_line >> declared_sizes[static_cast<std::size_t>(c)])) {
            throw fail("expected " + std::to_string(k) + " class sizes");
        }
    }

    Dataset ds;
    ds.dim = dim;
    ds.n_classes = k;
    ds.n_base = k_base;
    ds.examples = Matrix(n, dim);
    ds.labels.reserve(n);
    ds.split.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) {
            ++line_no;
            throw fail("file truncated: expected " + std::to_string(n) + " example lines");
        }
        ++line_no;
        std::istringstream ls(line);
        int label = 0, split_raw = 0;
        if (!(ls >> label >> split_raw)) throw fail("expected '<label> <split> <values>'");
        if (label < 0 || label >= k) throw fail("label out of range");
        if (split_raw < 0 || split_raw > 2) throw fail("split must be 0, 1 or 2");
        ds.labels.push_back(label);
        ds.split.push_back(static_cast<Split>(split_raw));
        auto xrow = ds.examples.row(i);
        std::string token;
        for (std::size_t j = 0; j < dim; ++j) {
            if (!(ls >> token)) throw fail("expected " + std::to_string(dim) + " values");
            char* end = nullptr;
            xrow[j] = std::strtod(token.c_str(), &end);
            if (end != token.c_str() + token.size()) throw fail("bad number '" + token + "'");
            if (!std::isfinite(xrow[j])) throw fail("non-finite value");
        }
    }

    std::vector<std::size_t> actual_sizes = ds.class_sizes();
    line_no = 2;
    if (actual_sizes != declared_sizes) throw fail("sizes line does not match example labels");

    // Partition is derived, not stored: rank by size (ties to lower id), the
    // largest k_base classes are base. Matches split_base_novel's rule.
    ds.partition.assign(static_cast<std::size_t>(k), Partition::base);
    if (k_base > 0) {
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (actual_sizes[static_cast<std::size_t>(a)] !=
                actual_sizes[static_cast<std::size_t>(b)]) {
                return actual_sizes[static_cast<std::size_t>(a)] >
                       actual_sizes[static_cast<std::size_t>(b)];
            }
            return a < b;
        });
        ds.partition.assign(static_cast<std::size_t>(k), Partition::novel);
        for (int r = 0; r < k_base; ++r) {
            ds.partition[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
                Partition::base;
        }
    }
    return ds;
}

}  // namespace pcn
