#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace segqc {

// Malformed or inconsistent input data (files, headers, shapes, ranges).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using WarningSink = std::function<void(std::string_view)>;

namespace detail {
inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) { std::clog << "warning: " << msg << '\n'; };
  return sink;
}
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// Replaces the process-wide warning sink; returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  auto prev = std::move(detail::warning_sink());
  detail::warning_sink() = std::move(sink);
  return prev;
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

// Collects warnings for the lifetime of the object (tests, CLI reports).
class ScopedWarningCapture {
 public:
  ScopedWarningCapture()
      : prev_(set_warning_sink([this](std::string_view m) { messages_.emplace_back(m); })) {}
  ~ScopedWarningCapture() { set_warning_sink(std::move(prev_)); }
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  WarningSink prev_;
};

}  // namespace segqc
