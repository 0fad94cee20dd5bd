#ifndef PCN_IO_UTIL_HPP
#define PCN_IO_UTIL_HPP

#include <cstddef>
#include <functional>
#include <string>

namespace pcn {

// Shortest round-trippable decimal form of a double (%.17g).
std::string format_g17(double v);

// Writes content to path via a temp file + rename so readers never observe a
// partial file.
void atomic_write_text(const std::string& path, const std::string& content);

std::string read_text_file(const std::string& path);

// Evaluation-side parallelism cap: PCN_THREADS env var, default 1.
unsigned eval_threads();

// Runs fn(i) for i in [0, n); chunked across eval_threads() threads when the
// cap allows, otherwise serial. fn must write only to disjoint slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pcn

#endif  // PCN_IO_UTIL_HPP
