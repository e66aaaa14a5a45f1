#pragma once

#include <cstddef>
#include <functional>

namespace bp {

// Worker count used by path-parallel loops. Defaults to BENCHMARK_PRICER_THREADS
// when set, otherwise std::thread::hardware_concurrency().
std::size_t worker_count();

// Overrides the worker count for the whole process; 0 restores the default.
void set_worker_count(std::size_t n);

// Runs body(begin, end) over disjoint contiguous path ranges covering [0, n).
// Bodies must only write state owned by their own range.
void parallel_for_paths(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace bp
