#pragma once

#include <string>

namespace lkaseg::log {

/// Writes "notice: <message>" to stderr the first time a given message is seen.
void notice_once(const std::string& message);
void set_quiet(bool quiet);

}  // namespace lkaseg::log
