#include "faultguard/core.hpp"

#include <cstdio>
#include <iostream>
#include <mutex>
#include <set>

namespace faultguard {

std::string Fingerprint::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

void warn(const std::string& message) {
  static std::mutex mu;
  static std::set<std::string> seen;
  const std::lock_guard lock(mu);
  if (seen.insert(message).second) std::cerr << "warning: " << message << '\n';
}

}  // namespace faultguard
