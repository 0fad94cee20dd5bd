#include "pcn/protobank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "pcn/error.hpp"
#include "pcn/io_util.hpp"
#include "pcn/rng.hpp"

namespace pcn {

namespace {

constexpr double kDegenerateMass = 1e-12;

void softmax_inplace(std::vector<double>& logits) {
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        total += v;
    }
    for (double& v : logits) v /= total;
}

}  // namespace

int PrototypeBank::index_of(int class_id) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        if (class_ids[i] == class_id) return static_cast<int>(i);
    }
    return -1;
}

std::vector<double> responsibilities(std::span<const double> emb, const Matrix& class_protos,
                                     double tau) {
    if (class_protos.rows() == 0) {
        throw StateError("responsibilities: class has no prototypes");
    }
    if (tau <= 0.0) throw ConfigError("responsibilities: tau must be > 0");
    std::vector<double> logits(class_protos.rows());
    for (std::size_t z = 0; z < class_protos.rows(); ++z) {
        logits[z] = -sq_dist(emb, class_protos.row(z)) / tau;
    }
    softmax_inplace(logits);
    return logits;
}

std::vector<double> class_scores(std::span<const double> emb, const PrototypeBank& bank,
                                 double tau) {
    if (bank.class_ids.empty()) throw StateError("class_scores: empty prototype bank");
    std::vector<double> scores(bank.n_classes());
    for (std::size_t k = 0; k < bank.n_classes(); ++k) {
        const Matrix& protos = bank.prototypes[k];
        std::vector<double> q = responsibilities(emb, protos, tau);
        double s = 0.0;
        for (std::size_t z = 0; z < protos.rows(); ++z) {
            s -= q[z] * sq_dist(emb, protos.row(z));
        }
        scores[k] = s;
    }
    return scores;
}

std::vector<double> class_posterior(std::span<const double> emb, const PrototypeBank& bank,
                                    double tau) {
    std::vector<double> scores = class_scores(emb, bank, tau);
    softmax_inplace(scores);
    return scores;
}

std::vector<int> posterior_ranking(const std::vector<double>& posterior,
                                   const std::vector<int>& class_ids) {
    if (posterior.size() != class_ids.size()) {
        throw ShapeError("posterior_ranking: posterior length != class count");
    }
    std::vector<std::size_t> order(class_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (posterior[a] != posterior[b]) return posterior[a] > posterior[b];
        return class_ids[a] < class_ids[b];
    });
    std::vector<int> ranking(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) ranking[i] = class_ids[order[i]];
    return ranking;
}

namespace {

// Nearest center index with ties going to the lowest index.
std::size_t nearest_center(const Matrix& points, std::size_t i, const Matrix& centers) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.rows(); ++j) {
        double d = sq_dist(points.row(i), centers.row(j));
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

Matrix kmeanspp_seed(const Matrix& points, std::size_t m, Pcg32& rng) {
    const std::size_t n = points.rows();
    Matrix centers(m, points.cols());
    std::size_t first = static_cast<std::size_t>(rng.bounded(n));
    for (std::size_t c = 0; c < points.cols(); ++c) centers(0, c) = points(first, c);
    std::vector<double> dist2(n);
    for (std::size_t i = 0; i < n; ++i) dist2[i] = sq_dist(points.row(i), centers.row(0));
    for (std::size_t j = 1; j < m; ++j) {
        double total = 0.0;
        for (double d : dist2) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.next_double() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            // All points coincide with chosen centers.
            pick = static_cast<std::size_t>(rng.bounded(n));
        }
        for (std::size_t c = 0; c < points.cols(); ++c) centers(j, c) = points(pick, c);
        for (std::size_t i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], sq_dist(points.row(i), centers.row(j)));
        }
    }
    return centers;
}

}  // namespace

KmeansResult kmeans(const Matrix& points, std::size_t m, uint64_t seed) {
    const std::size_t n = points.rows();
    if (n < 1) throw StateError("kmeans: no points");
    if (m < 1) throw ConfigError("kmeans: m must be >= 1");
    const std::size_t m_eff = std::min(m, n);

    Pcg32 rng(seed, rng_stream::clustering);
    KmeansResult result;
    result.centers = kmeanspp_seed(points, m_eff, rng);
    result.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        result.assignment[i] = static_cast<int>(nearest_center(points, i, result.centers));
    }

    constexpr int kMaxIters = 100;
    std::vector<int> new_assign(n);
    for (int iter = 0; iter < kMaxIters; ++iter) {
        // Move each center to the mean of its members.
        std::vector<std::size_t> counts(m_eff, 0);
        Matrix sums(m_eff, points.cols());
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = static_cast<std::size_t>(result.assignment[i]);
            counts[j] += 1;
            auto s = sums.row(j);
            auto p = points.row(i);
            for (std::size_t c = 0; c < p.size(); ++c) s[c] += p[c];
        }
        for (std::size_t j = 0; j < m_eff; ++j) {
            if (counts[j] == 0) continue;
            auto s = sums.row(j);
            auto ctr = result.centers.row(j);
            for (std::size_t c = 0; c < ctr.size(); ++c) ctr[c] = s[c] / counts[j];
        }
        // Re-seed empty clusters to the point farthest from its current center.
        for (std::size_t j = 0; j < m_eff; ++j) {
            if (counts[j] != 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t owner = static_cast<std::size_t>(result.assignment[i]);
                double d = sq_dist(points.row(i), result.centers.row(owner));
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            auto ctr = result.centers.row(j);
            auto p = points.row(worst);
            for (std::size_t c = 0; c < ctr.size(); ++c) ctr[c] = p[c];
            result.assignment[worst] = static_cast<int>(j);
            counts[j] = 1;
        }
        // Reassign and measure.
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = nearest_center(points, i, result.centers);
            new_assign[i] = static_cast<int>(j);
            sse += sq_dist(points.row(i), result.centers.row(j));
        }
        result.sse = sse;
        result.sse_history.push_back(sse);
        if (new_assign == result.assignment) break;
        result.assignment = new_assign;
    }
    return result;
}

Matrix ema_update(const Matrix& old_protos, const Matrix& support_embs,
                  const Matrix& q_per_example, double alpha) {
    if (support_embs.rows() == 0) throw StateError("ema_update: no support examples");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("ema_update: alpha must be in [0, 1]");
    if (support_embs.cols() != old_protos.cols()) {
        throw ShapeError("ema_update: embedding dim != prototype dim");
    }
    if (q_per_example.rows() != support_embs.rows() ||
        q_per_example.cols() != old_protos.rows()) {
        throw ShapeError("ema_update: q matrix must be n_support x n_prototypes");
    }
    const std::size_t m = old_protos.rows();
    const std::size_t dim = old_protos.cols();
    Matrix updated = old_protos;
    for (std::size_t z = 0; z < m; ++z) {
        double mass = 0.0;
        for (std::size_t i = 0; i < support_embs.rows(); ++i) mass += q_per_example(i, z);
        if (mass < kDegenerateMass) continue;  // keep the old prototype
        auto out = updated.row(z);
        auto old = old_protos.row(z);
        for (std::size_t c = 0; c < dim; ++c) {
            double weighted = 0.0;
            for (std::size_t i = 0; i < support_embs.rows(); ++i) {
                weighted += q_per_example(i, z) * support_embs(i, c);
            }
            out[c] = alpha * old[c] + (1.0 - alpha) * weighted / mass;
        }
    }
    return updated;
}

LinearFormWitness linear_form(std::span<const double> emb, const Matrix& class_protos,
                              const std::vector<double>& q) {
    if (q.size() != class_protos.rows()) {
        throw ShapeError("linear_form: q length != prototype count");
    }
    if (class_protos.cols() != emb.size()) {
        throw ShapeError("linear_form: embedding dim != prototype dim");
    }
    LinearFormWitness witness;
    witness.w.assign(emb.size(), 0.0);
    for (std::size_t z = 0; z < class_protos.rows(); ++z) {
        auto mu = class_protos.row(z);
        for (std::size_t c = 0; c < mu.size(); ++c) witness.w[c] += 2.0 * q[z] * mu[c];
        witness.b += q[z] * dot(mu, mu);
    }
    witness.constant = -dot(emb, emb);
    return witness;
}

PrototypeBank reinit_epoch(const PrototypeBank& bank,
                           const std::map<int, Matrix>& per_class_embeddings,
                           const std::map<int, int>& m_config, uint64_t seed) {
    PrototypeBank updated = bank;
    for (std::size_t k = 0; k < bank.class_ids.size(); ++k) {
        int class_id = bank.class_ids[k];
        auto embs_it = per_class_embeddings.find(class_id);
        if (embs_it == per_class_embeddings.end()) {
            throw StateError("reinit_epoch: no embeddings for class " + std::to_string(class_id));
        }
        auto m_it = m_config.find(class_id);
        if (m_it == m_config.end()) {
            throw StateError("reinit_epoch: no cluster count for class " + std::to_string(class_id));
        }
        const Matrix& embs = embs_it->second;
        if (embs.rows() == 0) {
            throw StateError("reinit_epoch: class " + std::to_string(class_id) + " has no examples");
        }
        std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, m_it->second)),
                                              embs.rows());
        updated.prototypes[k] = kmeans(embs, m, mix_seed(seed, static_cast<uint64_t>(class_id)))
                                    .centers;
    }
    return updated;
}

void save_bank(std::ostream& out, const PrototypeBank& bank) {
    out << "pcn-bank v1 " << bank.embed_dim() << "\n";
    for (std::size_t k = 0; k < bank.n_classes(); ++k) {
        const Matrix& protos = bank.prototypes[k];
        for (std::size_t z = 0; z < protos.rows(); ++z) {
            out << bank.class_ids[k] << ' ' << z;
            for (double v : protos.row(z)) out << ' ' << format_g17(v);
            out << "\n";
        }
    }
}

void save_bank(const std::string& path, const PrototypeBank& bank) {
    std::ostringstream ss;
    save_bank(ss, bank);
    atomic_write_text(path, ss.str());
}

PrototypeBank load_bank(std::istream& in, std::size_t line_offset) {
    std::size_t line_no = line_offset;
    std::string line;
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError("bank line " + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(in, line)) throw ParseError("bank: missing header");
    ++line_no;
    std::istringstream header(line);
    std::string magic, version;
    std::size_t dim = 0;
    if (!(header >> magic >> version >> dim) || magic != "pcn-bank") {
        throw fail("expected 'pcn-bank v1 <dim>' header");
    }
    if (version != "v1") throw fail("unsupported bank version '" + version + "'");

    PrototypeBank bank;
    std::vector<std::vector<double>> rows_for_current;
    int current_class = 0;
    bool have_class = false;
    auto flush_class = [&]() {
        if (!have_class) return;
        if (bank.index_of(current_class) >= 0) {
            throw fail("class " + std::to_string(current_class) + " appears twice");
        }
        Matrix protos(rows_for_current.size(), dim);
        for (std::size_t z = 0; z < rows_for_current.size(); ++z) {
            for (std::size_t c = 0; c < dim; ++c) protos(z, c) = rows_for_current[z][c];
        }
        bank.class_ids.push_back(current_class);
        bank.prototypes.push_back(std::move(protos));
        rows_for_current.clear();
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int class_id = 0;
        std::size_t z = 0;
        if (!(ls >> class_id >> z)) throw fail("expected '<class_id> <z> <values>'");
        if (!have_class || class_id != current_class) {
            flush_class();
            if (z != 0) throw fail("prototype index must restart at 0 for a new class");
            current_class = class_id;
            have_class = true;
        } else if (z != rows_for_current.size()) {
            throw fail("prototype index out of order");
        }
        std::vector<double> values(dim);
        std::string token;
        for (std::size_t c = 0; c < dim; ++c) {
            if (!(ls >> token)) throw fail("expected " + std::to_string(dim) + " values");
            char* end = nullptr;
            values[c] = std::strtod(token.c_str(), &end);
            if (end != token.c_str() + token.size()) throw fail("bad number '" + token + "'");
            if (!std::isfinite(values[c])) throw fail("non-finite prototype value");
        }
        rows_for_current.push_back(std::move(values));
    }
    flush_class();
    return bank;
}

PrototypeBank load_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open bank file: " + path);
    return load_bank(in);
}

}  // namespace pcn
