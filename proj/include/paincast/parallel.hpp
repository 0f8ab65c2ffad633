#pragma once

#include <cstddef>
#include <functional>

namespace paincast {

/// Worker cap used by every parallel loop; 0 means "all available cores".
void set_thread_count(unsigned threads) noexcept;
unsigned thread_count() noexcept;

/// Runs body(i) for i in [0, n). Each index is visited exactly once and
/// callers write results into index-addressed slots, so output never depends
/// on the number of threads or on scheduling. Calls made from inside a
/// worker run inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace paincast
