#include "spikediff/common.hpp"

#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace spikediff {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    SPD_REQUIRE(d >= 0, "shape has negative extent ", d);
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

void raise(const std::string& msg) { throw std::runtime_error(msg); }

int worker_count() {
  static int n = [] {
    if (const char* env = std::getenv("SPIKEDIFF_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(hw == 0 ? 1 : (hw > 8 ? 8 : hw));
  }();
  return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int workers = worker_count();
  if (n <= 1 || workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  // fixed contiguous partition: worker w owns [w*n/W, (w+1)*n/W)
  for (int w = 0; w < workers; ++w) {
    int64_t lo = n * w / workers;
    int64_t hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

int parallel_chunks(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn) {
  int workers = worker_count();
  if (workers > n) workers = static_cast<int>(n < 1 ? 1 : n);
  if (n <= 0) return 0;
  if (workers <= 1) {
    fn(0, 0, n);
    return 1;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    int64_t lo = n * w / workers;
    int64_t hi = n * (w + 1) / workers;
    pool.emplace_back([w, lo, hi, &fn] { fn(w, lo, hi); });
  }
  for (auto& t : pool) t.join();
  return workers;
}

}  // namespace spikediff
