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

#include "fhvae/kernels.hpp"

#include <cstdlib>

#include "fhvae/errors.hpp"

namespace fhvae::kernels {
namespace {

const Kernels* g_active = nullptr;

const Kernels* pick_default() {
  if (const char* env = std::getenv("FHVAE_KERNELS")) {
    const std::string want = env;
    if (want == "scalar") return &scalar_table();
    if (want == "avx2") {
      if (const Kernels* t = avx2_table()) return t;
      throw Error("FHVAE_KERNELS=avx2 requested but AVX2 is unavailable");
    }
    throw Error("unknown FHVAE_KERNELS value: " + want);
  }
  if (const Kernels* t = avx2_table()) return t;
  return &scalar_table();
}

}  // namespace

const Kernels& active() {
  if (!g_active) g_active = pick_default();
  return *g_active;
}

void force(const std::string& name) {
  if (name == "scalar") {
    g_active = &scalar_table();
    return;
  }
  if (name == "avx2") {
    if (const Kernels* t = avx2_table()) {
      g_active = t;
      return;
    }
    throw Error("AVX2 kernels not available on this host");
  }
  throw Error("unknown kernel variant: " + name);
}

std::vector<std::string> available() {
  std::vector<std::string> out = {"scalar"};
  if (avx2_table()) out.emplace_back("avx2");
  return out;
}

}  // namespace fhvae::kernels
