#include "hnseg/exec.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hnseg::exec {

namespace {
std::atomic<bool> g_parallel{true};
std::atomic<int> g_threads{0};
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void set_parallel(bool enabled) { g_parallel.store(enabled); }

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_thread_count(int n) {
  g_threads.store(n);
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

}  // namespace hnseg::exec
