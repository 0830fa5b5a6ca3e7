#include "bat/log.hpp"

#include <iostream>
#include <mutex>

namespace bat::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](Level level, const std::string& msg) {
    if (level == Level::kWarn) {
      std::cerr << "warning: " << msg << '\n';
    }
  };
  return sink;
}

void emit(Level level, const std::string& msg) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(level, msg);
}

}  // namespace

void info(const std::string& msg) { emit(Level::kInfo, msg); }
void warn(const std::string& msg) { emit(Level::kWarn, msg); }

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

Capture::Capture() {
  previous_ = set_sink([this](Level level, const std::string& msg) {
    (level == Level::kWarn ? warnings_ : infos_).push_back(msg);
  });
}

Capture::~Capture() { set_sink(std::move(previous_)); }

bool Capture::contains(const std::string& needle) const {
  for (const auto& w : warnings_) {
    if (w.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace bat::log
