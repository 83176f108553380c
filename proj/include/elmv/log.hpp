#pragma once

#include <memory>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace elmv {

/// Library logger ("elmv"), writing to stderr at warn level by default.
inline std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto existing = spdlog::get("elmv");
    if (existing) return existing;
    auto l = spdlog::stderr_logger_mt("elmv");
    l->set_level(spdlog::level::warn);
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

}  // namespace elmv
