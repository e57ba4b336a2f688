#pragma once

#include <chrono>
#include <exception>
#include <functional>
#include <mutex>

#ifdef COVREG_HAVE_OPENMP
#include <omp.h>
#endif

namespace covreg {

/// Runs body(i) for i in [0, n) one at a time. Reference path: results must
/// be bit-identical to parallel_for for any thread count.
template <typename Body>
void serial_for(int n, Body&& body) {
  for (int i = 0; i < n; ++i) body(i);
}

/// Runs body(i) for i in [0, n) on up to `threads` OpenMP threads.
///
/// Each job must be independent and write only to its own slot, so results
/// are identical to serial_for regardless of scheduling. The first exception
/// thrown by any job is captured and rethrown on the calling thread.
template <typename Body>
void parallel_for(int n, int threads, Body&& body) {
  if (threads <= 1 || n <= 1) {
    serial_for(n, body);
    return;
  }
#ifdef COVREG_HAVE_OPENMP
  std::exception_ptr first_error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
#else
  serial_for(n, body);
#endif
}

inline int hardware_threads() {
#ifdef COVREG_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline double wall_time_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace covreg
