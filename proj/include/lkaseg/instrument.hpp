#pragma once

#include <cstdint>

namespace lkaseg::instrument {

/// Adds to the runtime FLOP counter while a FlopScope is open. Called by the
/// forward kernels, never by backward passes.
void add_flops(std::int64_t flops);

/// Counts forward FLOPs executed between construction and total(). Scopes do
/// not nest.
class FlopScope {
 public:
  FlopScope();
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::int64_t total() const;
};

}  // namespace lkaseg::instrument
