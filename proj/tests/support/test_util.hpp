#ifndef PCN_TESTS_TEST_UTIL_HPP
#define PCN_TESTS_TEST_UTIL_HPP

#include <cstdlib>
#include <filesystem>
#include <string>

#include "pcn/matrix.hpp"
#include "pcn/rng.hpp"

namespace test_util {

// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "pcn_test_XXXXXX").string();
        path_ = mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return path_ + "/" + name; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

inline pcn::Matrix random_matrix(std::size_t rows, std::size_t cols, pcn::Pcg32& rng,
                                 double scale = 1.0) {
    pcn::Matrix m(rows, cols);
    for (double& v : m.values()) v = scale * (2.0 * rng.next_double() - 1.0);
    return m;
}

inline std::vector<double> random_vector(std::size_t n, pcn::Pcg32& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * (2.0 * rng.next_double() - 1.0);
    return v;
}

}  // namespace test_util

#endif
