// Copyright 2026 The dpro Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
#include "dpro/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace dpro {
namespace {

LogLevel parse_env_level() {
  const char* raw = std::getenv("DPRO_LOG");
  if (raw == nullptr) return LogLevel::kWarn;
  if (std::strcmp(raw, "silent") == 0) return LogLevel::kSilent;
  if (std::strcmp(raw, "error") == 0) return LogLevel::kError;
  if (std::strcmp(raw, "warn") == 0) return LogLevel::kWarn;
  if (std::strcmp(raw, "info") == 0) return LogLevel::kInfo;
  if (std::strcmp(raw, "debug") == 0) return LogLevel::kDebug;
  return LogLevel::kWarn;
}

LogLevel& level_ref() {
  static LogLevel level = parse_env_level();
  return level;
}

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::kError:
      return "E";
    case LogLevel::kWarn:
      return "W";
    case LogLevel::kInfo:
      return "I";
    case LogLevel::kDebug:
      return "D";
    default:
      return "?";
  }
}

}  // namespace

LogLevel log_level() { return level_ref(); }

void set_log_level(LogLevel level) { level_ref() = level; }

void log(LogLevel level, const std::string& message) {
  if (level == LogLevel::kSilent || level > level_ref()) return;
  std::fprintf(stderr, "[dpro %s] %s\n", tag(level), message.c_str());
}

}  // namespace dpro
