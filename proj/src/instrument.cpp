#include "lkaseg/instrument.hpp"

#include <atomic>
#include <stdexcept>

namespace lkaseg::instrument {
namespace {

std::atomic<std::int64_t> g_flops{0};
std::atomic<bool> g_active{false};

}  // namespace

void add_flops(std::int64_t flops) {
  if (g_active.load(std::memory_order_relaxed)) {
    g_flops.fetch_add(flops, std::memory_order_relaxed);
  }
}

FlopScope::FlopScope() {
  if (g_active.exchange(true)) {
    throw std::logic_error("FlopScope instances cannot nest");
  }
  g_flops.store(0);
}

FlopScope::~FlopScope() { g_active.store(false); }

std::int64_t FlopScope::total() const { return g_flops.load(); }

}  // namespace lkaseg::instrument
