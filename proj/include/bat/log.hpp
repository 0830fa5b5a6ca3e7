#pragma once

#include <functional>
#include <string>
#include <vector>

namespace bat::log {

enum class Level { kInfo, kWarn };

using Sink = std::function<void(Level, const std::string&)>;

void info(const std::string& msg);
void warn(const std::string& msg);

/// Replaces the process-wide sink; returns the previous one.
Sink set_sink(Sink sink);

/// Collects warnings emitted while alive (used by tests and the run log).
class Capture {
 public:
  Capture();
  ~Capture();
  Capture(const Capture&) = delete;
  Capture& operator=(const Capture&) = delete;

  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::vector<std::string>& infos() const { return infos_; }
  bool contains(const std::string& needle) const;

 private:
  Sink previous_;
  std::vector<std::string> warnings_;
  std::vector<std::string> infos_;
};

}  // namespace bat::log
