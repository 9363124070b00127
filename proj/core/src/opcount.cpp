#include "mdcn/opcount.hpp"

#include <atomic>

namespace mdcn {
namespace {

std::atomic<int> g_active{0};
std::atomic<std::int64_t> g_total{0};

}  // namespace

MacCounter::MacCounter() : start_(g_total.load()) { ++g_active; }

MacCounter::~MacCounter() { --g_active; }

std::int64_t MacCounter::count() const { return g_total.load() - start_; }

namespace detail {

void record_macs(std::int64_t macs) {
  if (g_active.load(std::memory_order_relaxed) > 0) g_total += macs;
}

}  // namespace detail
}  // namespace mdcn
