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
#include <cstdio>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fhvae/errors.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// Little-endian binary I/O (explicit byte packing; format files are LE on
// every host).
// ---------------------------------------------------------------------------

inline void write_u8(std::ostream& os, uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void write_u16le(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void write_u32le(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void write_u64le(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void write_f64le(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64le(os, bits);
}

inline void write_f32le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32le(os, bits);
}

inline uint8_t read_u8(std::istream& is) {
  int c = is.get();
  if (c < 0) throw DataError("unexpected end of stream");
  return static_cast<uint8_t>(c);
}

inline uint16_t read_u16le(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw DataError("unexpected end of stream");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError("unexpected end of stream");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline uint64_t read_u64le(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw DataError("unexpected end of stream");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double read_f64le(std::istream& is) {
  uint64_t bits = read_u64le(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline float read_f32le(std::istream& is) {
  uint32_t bits = read_u32le(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// ---------------------------------------------------------------------------
// Deterministic text formatting for CSV output. %.17g round-trips doubles.
// ---------------------------------------------------------------------------

inline std::string fmt_f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_f64_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Worker-thread cap: FHVAE_THREADS, default = hardware concurrency.
// ---------------------------------------------------------------------------

size_t worker_threads();

// Runs fn(i) for i in [0, n); may use up to worker_threads() threads. The
// work partition is deterministic; fn must write only to disjoint outputs.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace fhvae
