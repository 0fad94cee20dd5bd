#ifndef PCN_PROTOBANK_HPP
#define PCN_PROTOBANK_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pcn/matrix.hpp"

namespace pcn {

// Per-class mixtures of prototypes plus the temperature and EMA memory that
// govern how they are queried and updated.
struct PrototypeBank {
    std::vector<int> class_ids;      // ordered
    std::vector<Matrix> prototypes;  // prototypes[i]: M_k x embed_dim for class_ids[i]
    double tau = 1.0;
    double alpha = 0.5;

    std::size_t n_classes() const { return class_ids.size(); }
    std::size_t embed_dim() const { return prototypes.empty() ? 0 : prototypes.front().cols(); }

    // Index into class_ids/prototypes, or -1 when the class is absent.
    int index_of(int class_id) const;
    bool has_class(int class_id) const { return index_of(class_id) >= 0; }
};

// The squared-distance -> linear-form expansion of one class's score:
// -sum_z q_z * d(emb, mu_z) == constant + dot(w, emb) - b for the fixed q.
struct LinearFormWitness {
    std::vector<double> w;
    double b = 0.0;
    double constant = 0.0;
};

struct KmeansResult {
    Matrix centers;               // m_effective x dim
    std::vector<int> assignment;  // length n
    double sse = 0.0;
    std::vector<double> sse_history;  // one entry per Lloyd iteration
};

// Soft assignment of an embedding over one class's prototypes:
// softmax_z(-d(emb, mu_z) / tau), max-subtracted for stability.
std::vector<double> responsibilities(std::span<const double> emb, const Matrix& class_protos,
                                     double tau);

// Per-class mixture scores s_k = -sum_z q(z|k) * d(emb, mu_{z,k}); the class
// posterior is softmax over these with no temperature at the class level.
std::vector<double> class_scores(std::span<const double> emb, const PrototypeBank& bank,
                                 double tau);
std::vector<double> class_posterior(std::span<const double> emb, const PrototypeBank& bank,
                                    double tau);

// Class ids sorted by descending posterior, ties to the lower class id.
std::vector<int> posterior_ranking(const std::vector<double>& posterior,
                                   const std::vector<int>& class_ids);

// Lloyd's algorithm with k-means++ seeding. Runs to an assignment fixpoint or
// 100 iterations; m is clamped to the point count; empty clusters are
// re-seeded to the point farthest from its current center; nearest-center
// ties go to the lowest center index.
KmeansResult kmeans(const Matrix& points, std::size_t m, uint64_t seed);

// mu_z <- alpha * mu_z + (1 - alpha) * weighted support mean. A prototype
// whose total responsibility mass falls below 1e-12 keeps its old value.
Matrix ema_update(const Matrix& old_protos, const Matrix& support_embs,
                  const Matrix& q_per_example, double alpha);

LinearFormWitness linear_form(std::span<const double> emb, const Matrix& class_protos,
                              const std::vector<double>& q);

// Replaces every class's prototypes with k-means centers over that class's
// embeddings, M clamped to the example count. Deterministic given seed.
PrototypeBank reinit_epoch(const PrototypeBank& bank,
                           const std::map<int, Matrix>& per_class_embeddings,
                           const std::map<int, int>& m_config, uint64_t seed);

// Text persistence: header "pcn-bank v1 <D_emb>", then one line per prototype
// "<class_id> <z> <D_emb reals %.17g>". tau/alpha are runtime config and are
// not stored.
void save_bank(std::ostream& out, const PrototypeBank& bank);
void save_bank(const std::string& path, const PrototypeBank& bank);
// line_offset is added to reported line numbers (for embedded sections).
PrototypeBank load_bank(std::istream& in, std::size_t line_offset = 0);
PrototypeBank load_bank(const std::string& path);

}  // namespace pcn

#endif  // PCN_PROTOBANK_HPP
