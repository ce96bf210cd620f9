/* Copyright 2026 The Memseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef MEMSEG_LOG_HPP_
#define MEMSEG_LOG_HPP_

#include <string>

#include <spdlog/spdlog.h>

namespace memseg {

// Reads MEMSEG_LOG (trace|debug|info|warn|error|off) and configures the
// default stderr logger. Safe to call more than once.
void init_logging(const std::string& fallback_level = "warn");

// Emits `message` at warn level the first time `key` is seen in this
// process; later calls with the same key are dropped.
void warn_once(const std::string& key, const std::string& message);

}  // namespace memseg

#endif  // MEMSEG_LOG_HPP_
