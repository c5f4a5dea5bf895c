/* Copyright 2026 The fhvae Authors. All Rights Reserved.

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
#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace fhvae {

// Plain-text key=value configuration. '#' starts a comment; blank lines are
// ignored. Keys are unique; parse errors carry line numbers (ConfigError).
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

// Canonical rendering: sorted key=value lines, one per line.
std::string render_kv(const KvMap& kv);

// Typed access; ConfigError on unparsable values.
std::string kv_get(const KvMap& kv, const std::string& key,
                   const std::string& fallback);
uint64_t kv_get_u64(const KvMap& kv, const std::string& key,
                    uint64_t fallback);
double kv_get_f64(const KvMap& kv, const std::string& key, double fallback);
bool kv_get_bool(const KvMap& kv, const std::string& key, bool fallback);

// FNV-1a hash of the canonical rendering (used by run manifests).
uint64_t kv_hash(const KvMap& kv);

}  // namespace fhvae
