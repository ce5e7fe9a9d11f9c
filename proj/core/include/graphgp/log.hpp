#pragma once

#include <functional>
#include <string>
#include <vector>

namespace graphgp {

using WarningSink = std::function<void(const std::string&)>;

// Replaces the process-wide warning sink and returns the previous one.
// The default sink writes "warning: <msg>" to stderr.
WarningSink set_warning_sink(WarningSink sink);

void warn(const std::string& message);

/// RAII helper that collects warnings for the lifetime of the object.
class ScopedWarningCapture {
 public:
  ScopedWarningCapture();
  ~ScopedWarningCapture();
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  WarningSink previous_;
};

}  // namespace graphgp
