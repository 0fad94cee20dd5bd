#ifndef PCN_DATAGEN_HPP
#define PCN_DATAGEN_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcn/matrix.hpp"

namespace pcn {

enum class Split : uint8_t { train = 0, val = 1, test = 2 };
enum class Partition : uint8_t { base = 0, novel = 1 };

struct Dataset {
    std::size_t dim = 0;
    Matrix examples;                    // n x dim
    std::vector<int> labels;            // n, values in [0, n_classes)
    std::vector<Split> split;           // n
    std::vector<Partition> partition;   // n_classes
    int n_classes = 0;
    int n_base = 0;  // 0 means not yet partitioned (all classes treated as base)

    std::size_t size() const { return labels.size(); }
    bool is_base(int class_id) const {
        return partition.empty() || partition[static_cast<std::size_t>(class_id)] == Partition::base;
    }
    std::vector<std::size_t> class_sizes() const;
    // Example indices of one class restricted to a split.
    std::vector<std::size_t> indices_of(int class_id, Split s) const;
    std::vector<std::size_t> indices_of(int class_id) const;
};

struct GenConfig {
    int n_classes = 20;
    std::vector<int> modes_per_class = {3};  // one entry broadcasts to all classes
    int ambient_dim = 12;
    double tail_exponent = 1.0;
    int head_count = 200;
    double mode_separation = 5.0;
    double noise_scale = 1.0;
    bool warp = true;
    uint64_t seed = 0;

    int modes_for(int class_id) const;
};

// One low-shot cross-validation fold: per novel class, disjoint support and
// test example indices.
struct LowshotFold {
    std::map<int, std::vector<std::size_t>> support;
    std::map<int, std::vector<std::size_t>> test;
};

// Class c gets floor(head_count * (c+1)^(-tail_exponent)) examples.
std::vector<std::size_t> zipf_sizes(int n_classes, int head_count, double tail_exponent);

// Long-tailed multimodal blobs: per class, modes_per_class centers drawn
// uniformly in a ball of radius mode_separation around a Gaussian class
// anchor; examples are mode + isotropic noise; an optional fixed smooth
// invertible two-layer map warps the ambient space. Fully seed-determined.
Dataset gen_synthetic(const GenConfig& cfg);

// Ranks classes by size (ties to the lower id); the largest k_base become
// base classes and get val/test/train splits: max(5, ceil(val_frac * size))
// examples each to val and test, remainder to train. Novel-class examples
// stay in the pool (stored as split=train) until lowshot_folds samples them.
Dataset split_base_novel(const Dataset& dataset, int k_base, double val_frac, uint64_t seed);

std::vector<LowshotFold> lowshot_folds(const Dataset& dataset, int n_train, int n_test,
                                       int folds, uint64_t seed);

// Text format, UTF-8, LF endings:
//   line 1: pcn-dataset v1 <N> <D_in> <K> <K_base>
//   line 2: sizes <K ints>
//   then N lines: <label> <split:0|1|2> <D_in reals %.17g>
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

}  // namespace pcn

#endif  // PCN_DATAGEN_HPP
