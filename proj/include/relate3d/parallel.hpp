#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace relate3d {

// Worker cap: min(hardware, RELATE3D_THREADS when set), at least 1.
inline int thread_budget() {
  int budget = static_cast<int>(std::thread::hardware_concurrency());
  if (budget < 1) budget = 1;
  if (const char* env = std::getenv("RELATE3D_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < budget) budget = cap;
  }
  return budget;
}

// Run fn(i) for i in [0, n) on up to thread_budget() threads. Work items are
// independent; callers keep determinism by writing into index i slots.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (std::thread& t : threads) t.join();
}

}  // namespace relate3d
