#include "graphgp/log.hpp"

#include <iostream>
#include <mutex>

namespace graphgp {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink() {
  static WarningSink s = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}

}  // namespace

WarningSink set_warning_sink(WarningSink next) {
  std::lock_guard lock(sink_mutex());
  WarningSink prev = std::move(sink());
  sink() = std::move(next);
  return prev;
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(message);
}

ScopedWarningCapture::ScopedWarningCapture()
    : previous_(set_warning_sink([this](const std::string& m) { messages_.push_back(m); })) {}

ScopedWarningCapture::~ScopedWarningCapture() { set_warning_sink(std::move(previous_)); }

}  // namespace graphgp
