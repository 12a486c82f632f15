#include "lkaseg/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>

namespace lkaseg::log {
namespace {

std::mutex g_mutex;
std::set<std::string> g_seen;
std::atomic<bool> g_quiet{false};

}  // namespace

void notice_once(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (!g_seen.insert(message).second || g_quiet) return;
  std::cerr << "notice: " << message << '\n';
}

void set_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace lkaseg::log
