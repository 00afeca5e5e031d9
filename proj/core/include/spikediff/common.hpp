#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikediff {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
inline void str_append(std::ostringstream&) {}
template <typename A, typename... Rest>
void str_append(std::ostringstream& os, A&& a, Rest&&... rest) {
  os << std::forward<A>(a);
  str_append(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  detail::str_append(os, std::forward<Args>(args)...);
  return os.str();
}

[[noreturn]] void raise(const std::string& msg);

#define SPD_REQUIRE(cond, ...)                        \
  do {                                                \
    if (!(cond)) ::spikediff::raise(::spikediff::str(__VA_ARGS__)); \
  } while (0)

// Runs fn(i) for i in [0, n). Iterations must be independent; the worker
// partition is fixed so results never depend on scheduling.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Runs fn(chunk, lo, hi) over a fixed contiguous partition of [0, n).
// Callers that reduce per-chunk partials in chunk order stay deterministic.
int parallel_chunks(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn);

int worker_count();

}  // namespace spikediff
