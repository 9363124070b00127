#pragma once

#include <cstdint>

namespace mdcn {

/// Counts the multiply-adds executed by conv3d_forward and linear_apply
/// while at least one counter is alive. Counters nest; each reports the
/// work done since its own construction.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::int64_t count() const;

 private:
  std::int64_t start_;
};

namespace detail {
void record_macs(std::int64_t macs);
}

}  // namespace mdcn
