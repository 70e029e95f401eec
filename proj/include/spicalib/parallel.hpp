#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace spicalib {

// Worker cap from SPICALIB_THREADS; 0 or unset means hardware concurrency.
inline int thread_limit() {
  if (const char* env = std::getenv("SPICALIB_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// Static row partition. fn(begin, end) must touch only rows in [begin, end),
// which keeps results identical for any worker count.
template <class Fn>
inline void parallel_for_rows(int rows, Fn fn) {
  int workers = std::min(thread_limit(), std::max(rows, 1));
  if (workers <= 1 || rows <= 1) {
    fn(0, rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  int chunk = (rows + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int begin = w * chunk;
    int end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace spicalib
