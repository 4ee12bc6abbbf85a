// Copyright (c) 2026 The dsprobe Authors
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

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "dsprobe/error.hpp"

namespace dsprobe::detail {

/// Rejects fields outside `allowed`.
inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown field '" + key + "'");
    }
  }
}

template <typename V>
V get_or(const nlohmann::json& j, const char* key, V fallback) {
  return j.contains(key) ? j.at(key).get<V>() : fallback;
}

template <typename V>
V get_required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace dsprobe::detail
