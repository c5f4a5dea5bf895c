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

#include "fhvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fhvae/util.hpp"

namespace fs = std::filesystem;

namespace fhvae {

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

std::vector<Segment> segment_sequence(const SequenceRecord& seq, size_t T,
                                      size_t shift) {
  if (T < 1 || shift < 1)
    throw ConfigError("segment_sequence: T and shift must be >= 1");
  std::vector<Segment> out;
  if (seq.n_frames < T) return out;
  for (size_t start = 0; start + T <= seq.n_frames; start += shift) {
    Segment s;
    s.frames = Tensor::from_data(
        {T, seq.dim},
        std::vector<double>(seq.feats.begin() + start * seq.dim,
                            seq.feats.begin() + (start + T) * seq.dim));
    s.seq_id = seq.seq_id;
    s.index = out.size();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SegRef> sequence_segment_refs(const Dataset& data, size_t seq,
                                          size_t T, size_t shift) {
  const SequenceRecord& r = data.seqs.at(seq);
  std::vector<SegRef> out;
  if (r.n_frames < T) return out;
  uint32_t index = 0;
  for (size_t start = 0; start + T <= r.n_frames; start += shift)
    out.push_back({static_cast<uint32_t>(seq), index++,
                   static_cast<uint32_t>(start)});
  return out;
}

std::vector<SegRef> build_segment_index(const Dataset& data, size_t T,
                                        size_t shift) {
  std::vector<SegRef> out;
  for (size_t i = 0; i < data.seqs.size(); ++i) {
    auto refs = sequence_segment_refs(data, i, T, shift);
    out.insert(out.end(), refs.begin(), refs.end());
  }
  return out;
}

Segment materialize(const Dataset& data, const SegRef& ref, size_t T) {
  const SequenceRecord& r = data.seq(ref.seq);
  Segment s;
  s.frames = Tensor::from_data(
      {T, r.dim},
      std::vector<double>(r.feats.begin() + ref.frame_begin * r.dim,
                          r.feats.begin() + (ref.frame_begin + T) * r.dim));
  s.seq_id = r.seq_id;
  s.index = ref.index;
  return s;
}

// ---------------------------------------------------------------------------
// WAV I/O (RIFF PCM16 mono)
// ---------------------------------------------------------------------------

WavData wav_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open wav: " + path);
  char riff[4], wave[4];
  is.read(riff, 4);
  read_u32le(is);  // riff size
  is.read(wave, 4);
  if (!is || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<double> samples;
  bool got_fmt = false, got_data = false;
  while (is && !(got_fmt && got_data)) {
    char id[4];
    if (!is.read(id, 4)) break;
    const uint32_t size = read_u32le(is);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16le(is);
      channels = read_u16le(is);
      rate = read_u32le(is);
      read_u32le(is);  // byte rate
      read_u16le(is);  // block align
      bits = read_u16le(is);
      if (size > 16) is.ignore(size - 16);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!got_fmt) throw DataError("wav data chunk before fmt: " + path);
      if (format != 1 || bits != 16)
        throw DataError("unsupported wav encoding in " + path +
                        " (need 16-bit PCM)");
      if (channels != 1)
        throw DataError("unsupported channel count " +
                        std::to_string(channels) + " in " + path +
                        " (need mono)");
      const size_t n = size / 2;
      samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const uint16_t raw = read_u16le(is);
        samples[i] = static_cast<int16_t>(raw) / 32768.0;
      }
      got_data = true;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  if (!got_fmt || !got_data) throw DataError("incomplete wav file: " + path);
  if (samples.empty()) throw DataError("empty audio in " + path);
  return {std::move(samples), rate};
}

void wav_write(const std::string& path, const WavData& wav) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(wav.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32le(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32le(os, 16);
  write_u16le(os, 1);  // PCM
  write_u16le(os, 1);  // mono
  write_u32le(os, static_cast<uint32_t>(wav.rate));
  write_u32le(os, static_cast<uint32_t>(wav.rate * 2));
  write_u16le(os, 2);
  write_u16le(os, 16);
  os.write("data", 4);
  write_u32le(os, data_bytes);
  for (double s : wav.samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    write_u16le(os, static_cast<uint16_t>(
                        static_cast<int16_t>(std::lrint(clamped * 32768.0))));
  }
}

// ---------------------------------------------------------------------------
// FFT and Mel filterbank
// ---------------------------------------------------------------------------

namespace fbank_detail {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace {

// Iterative radix-2 complex FFT, in place.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

std::vector<double> power_spectrum(const double* frame, size_t win,
                                   size_t n_fft) {
  std::vector<std::complex<double>> buf(n_fft, {0.0, 0.0});
  for (size_t i = 0; i < win; ++i) buf[i] = frame[i];
  fft(buf);
  std::vector<double> power(n_fft / 2 + 1);
  for (size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

}  // namespace fbank_detail

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Edge frequencies of the triangular filters: n_mels + 2 points equally
// spaced on the Mel scale from 0 to Nyquist.
std::vector<double> mel_points(size_t n_mels, double rate) {
  const double mel_max = hz_to_mel(rate / 2.0);
  std::vector<double> pts(n_mels + 2);
  for (size_t i = 0; i < pts.size(); ++i)
    pts[i] = mel_to_hz(mel_max * static_cast<double>(i) /
                       static_cast<double>(n_mels + 1));
  return pts;
}

}  // namespace

double mel_filter_weight(size_t m, double freq_hz, size_t n_mels,
                         double rate) {
  const auto pts = mel_points(n_mels, rate);
  const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
  if (freq_hz <= left || freq_hz >= right) return 0.0;
  if (freq_hz <= center) return (freq_hz - left) / (center - left);
  return (right - freq_hz) / (right - center);
}

std::vector<double> mel_filter_matrix(size_t n_mels, size_t n_fft,
                                      double rate) {
  const size_t bins = n_fft / 2 + 1;
  std::vector<double> mat(n_mels * bins, 0.0);
  for (size_t m = 0; m < n_mels; ++m)
    for (size_t k = 0; k < bins; ++k) {
      const double f = rate * static_cast<double>(k) /
                       static_cast<double>(n_fft);
      mat[m * bins + k] = mel_filter_weight(m, f, n_mels, rate);
    }
  return mat;
}

std::vector<double> fbank(const std::vector<double>& samples, size_t rate,
                          const FbankConfig& cfg, size_t* n_frames_out) {
  if (samples.empty()) throw DataError("fbank: empty audio");
  if (rate == 0) throw DataError("fbank: sample rate unknown");
  const size_t win =
      static_cast<size_t>(std::lround(cfg.win_ms * 1e-3 * rate));
  const size_t hop =
      static_cast<size_t>(std::lround(cfg.hop_ms * 1e-3 * rate));
  if (win == 0 || hop == 0) throw ConfigError("fbank: window too short");
  const size_t n_frames =
      samples.size() >= win ? (samples.size() - win) / hop + 1 : 0;
  if (n_frames_out) *n_frames_out = n_frames;

  const size_t n_fft = fbank_detail::next_pow2(win);
  const size_t bins = n_fft / 2 + 1;
  const auto filters = mel_filter_matrix(cfg.n_mels, n_fft, rate);

  std::vector<double> hann(win);
  for (size_t i = 0; i < win; ++i)
    hann[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (win - 1)));

  std::vector<double> out(n_frames * cfg.n_mels);
  std::vector<double> frame(win);
  for (size_t f = 0; f < n_frames; ++f) {
    const double* src = samples.data() + f * hop;
    for (size_t i = 0; i < win; ++i) frame[i] = src[i] * hann[i];
    const auto power = fbank_detail::power_spectrum(frame.data(), win, n_fft);
    for (size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const double* row = filters.data() + m * bins;
      for (size_t k = 0; k < bins; ++k) e += row[k] * power[k];
      out[f * cfg.n_mels + m] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

SynthSpec SynthSpec::from_kv(const KvMap& kv) {
  SynthSpec s;
  s.n_seqs = kv_get_u64(kv, "synth_m", s.n_seqs);
  s.segs_per_seq = kv_get_u64(kv, "synth_segs", s.segs_per_seq);
  s.d_z1 = kv_get_u64(kv, "synth_d_z1", s.d_z1);
  s.d_z2 = kv_get_u64(kv, "synth_d_z2", s.d_z2);
  s.d_x = kv_get_u64(kv, "synth_d_x", s.d_x);
  s.seg_len = kv_get_u64(kv, "synth_seg_len", s.seg_len);
  s.n_factors = kv_get_u64(kv, "synth_factors", s.n_factors);
  s.n_classes = kv_get_u64(kv, "synth_classes", s.n_classes);
  s.sigma_sq_z2 = kv_get_f64(kv, "synth_sigma_sq_z2", s.sigma_sq_z2);
  s.mu2_spread = kv_get_f64(kv, "synth_mu2_spread", s.mu2_spread);
  s.anchor_scale = kv_get_f64(kv, "synth_anchor_scale", s.anchor_scale);
  s.noise_scale = kv_get_f64(kv, "synth_noise", s.noise_scale);
  s.seed = kv_get_u64(kv, "seed", s.seed);
  s.identity_map = kv_get_bool(kv, "synth_identity_map", s.identity_map);
  s.validate();
  return s;
}

void SynthSpec::validate() const {
  if (n_seqs < 1 || segs_per_seq < 1 || d_z1 < 1 || d_z2 < 1 || d_x < 1 ||
      seg_len < 1 || n_factors < 1 || n_classes < 1)
    throw ConfigError("synth spec: all sizes must be >= 1");
  if (n_factors > n_seqs)
    throw ConfigError("synth spec: factors must not exceed sequence count");
  if (identity_map && d_x != d_z1 + d_z2)
    throw ConfigError("synth spec: identity map needs d_x == d_z1 + d_z2");
  if (noise_scale < 0.0) throw ConfigError("synth spec: negative noise");
}

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, "synth");
  SynthDataset out;
  const size_t dz = spec.d_z1 + spec.d_z2;

  // Well-separated factor anchors: unit directions scaled by anchor_scale.
  auto draw_anchor = [&](size_t d, double s) {
    auto v = rng.normal_vec(d);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x = s * x / norm;
    return v;
  };
  std::vector<std::vector<double>> f_anchors, c_anchors;
  for (size_t f = 0; f < spec.n_factors; ++f)
    f_anchors.push_back(draw_anchor(spec.d_z2, spec.anchor_scale));
  for (size_t c = 0; c < spec.n_classes; ++c)
    c_anchors.push_back(draw_anchor(spec.d_z1, spec.class_scale));

  // Fixed random linear map from [z1 || z2] to frames.
  std::vector<double> w(spec.d_x * dz, 0.0);
  if (spec.identity_map) {
    for (size_t i = 0; i < spec.d_x; ++i) w[i * dz + i] = 1.0;
  } else {
    const double s = 1.0 / std::sqrt(static_cast<double>(dz));
    for (auto& x : w) x = s * rng.normal();
  }

  out.data.dim = spec.d_x;
  for (size_t i = 0; i < spec.n_seqs; ++i) {
    const size_t factor = i % spec.n_factors;
    out.seq_factor.push_back(factor);
    std::vector<double> mu2(spec.d_z2);
    for (size_t k = 0; k < spec.d_z2; ++k)
      mu2[k] = f_anchors[factor][k] +
               std::sqrt(spec.mu2_spread) * rng.normal();
    out.mu2_true.insert(out.mu2_true.end(), mu2.begin(), mu2.end());

    SequenceRecord rec;
    rec.seq_id = "synth" + std::to_string(i);
    rec.dim = spec.d_x;
    rec.n_frames = spec.segs_per_seq * spec.seg_len;
    rec.feats.resize(rec.n_frames * spec.d_x);
    rec.labels["factor"] = std::to_string(factor);

    std::vector<size_t> classes;
    std::vector<double> z(dz);
    for (size_t n = 0; n < spec.segs_per_seq; ++n) {
      const size_t cls = rng.uniform_below(spec.n_classes);
      classes.push_back(cls);
      for (size_t k = 0; k < spec.d_z1; ++k)
        z[k] = c_anchors[cls][k] + std::sqrt(spec.class_spread) * rng.normal();
      for (size_t k = 0; k < spec.d_z2; ++k)
        z[spec.d_z1 + k] = mu2[k] + std::sqrt(spec.sigma_sq_z2) * rng.normal();
      std::vector<double> base(spec.d_x, 0.0);
      for (size_t r = 0; r < spec.d_x; ++r)
        for (size_t k = 0; k < dz; ++k) base[r] += w[r * dz + k] * z[k];
      for (size_t t = 0; t < spec.seg_len; ++t) {
        double* dst =
            rec.feats.data() + (n * spec.seg_len + t) * spec.d_x;
        for (size_t r = 0; r < spec.d_x; ++r)
          dst[r] = base[r] + spec.noise_scale * rng.normal();
      }
    }
    out.seg_class.push_back(std::move(classes));
    out.data.seqs.push_back(std::move(rec));
  }
  for (const auto& a : f_anchors)
    out.factor_anchors.insert(out.factor_anchors.end(), a.begin(), a.end());
  return out;
}

// ---------------------------------------------------------------------------
// FBNK files
// ---------------------------------------------------------------------------

void fbnk_write(const std::string& path, const double* data, size_t n_frames,
                size_t dim) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  os.write("FBNK", 4);
  write_u32le(os, static_cast<uint32_t>(n_frames));
  write_u32le(os, static_cast<uint32_t>(dim));
  for (size_t i = 0; i < n_frames * dim; ++i)
    write_f32le(os, static_cast<float>(data[i]));
  if (!os) throw DataError("write failed: " + path);
}

FbnkData fbnk_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FBNK", 4) != 0)
    throw DataError("not an FBNK file: " + path);
  FbnkData out;
  out.n_frames = read_u32le(is);
  out.dim = read_u32le(is);
  out.feats.resize(out.n_frames * out.dim);
  for (auto& v : out.feats) v = static_cast<double>(read_f32le(is));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& data,
                  bool standardize) {
  fs::create_directories(fs::path(dir) / "features");

  // Union of label keys, sorted, as extra manifest columns.
  std::set<std::string> label_keys;
  for (const auto& s : data.seqs)
    for (const auto& [k, v] : s.labels) label_keys.insert(k);

  std::vector<double> mean(data.dim, 0.0), inv_std(data.dim, 1.0);
  if (standardize) {
    size_t total = 0;
    std::vector<double> sq(data.dim, 0.0);
    for (const auto& s : data.seqs) {
      total += s.n_frames;
      for (size_t t = 0; t < s.n_frames; ++t)
        for (size_t k = 0; k < data.dim; ++k) {
          mean[k] += s.feats[t * data.dim + k];
          sq[k] += s.feats[t * data.dim + k] * s.feats[t * data.dim + k];
        }
    }
    for (size_t k = 0; k < data.dim; ++k) {
      mean[k] /= static_cast<double>(total);
      const double var = sq[k] / static_cast<double>(total) - mean[k] * mean[k];
      inv_std[k] = 1.0 / std::sqrt(std::max(var, 1e-12));
    }
  }

  std::ofstream os(fs::path(dir) / "manifest.csv");
  if (!os) throw DataError("cannot write manifest in " + dir);
  if (standardize) os << "#standardized=true\n";
  os << "seq_id,feature_path,n_frames";
  for (const auto& k : label_keys) os << "," << k;
  os << "\n";
  for (const auto& s : data.seqs) {
    const std::string rel = "features/" + s.seq_id + ".fbnk";
    std::vector<double> feats = s.feats;
    if (standardize)
      for (size_t t = 0; t < s.n_frames; ++t)
        for (size_t k = 0; k < data.dim; ++k)
          feats[t * data.dim + k] =
              (feats[t * data.dim + k] - mean[k]) * inv_std[k];
    fbnk_write((fs::path(dir) / rel).string(), feats.data(), s.n_frames,
               s.dim);
    os << csv_escape(s.seq_id) << "," << rel << "," << s.n_frames;
    for (const auto& k : label_keys) {
      auto it = s.labels.find(k);
      os << "," << csv_escape(it == s.labels.end() ? "" : it->second);
    }
    os << "\n";
  }
}

Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset out;
  std::string line;
  std::vector<std::string> header;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("standardized=true") != std::string::npos)
        out.standardized = true;
      continue;
    }
    auto cells = split_csv_line(line);
    if (header.empty()) {
      header = cells;
      if (header.size() < 3 || header[0] != "seq_id" ||
          header[1] != "feature_path" || header[2] != "n_frames")
        throw DataError("manifest header must start with "
                        "seq_id,feature_path,n_frames");
      continue;
    }
    if (cells.size() != header.size())
      throw DataError("manifest line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    SequenceRecord rec;
    rec.seq_id = cells[0];
    FbnkData fb = fbnk_read((base / cells[1]).string());
    rec.n_frames = fb.n_frames;
    rec.dim = fb.dim;
    rec.feats = std::move(fb.feats);
    if (rec.n_frames != std::stoull(cells[2]))
      throw DataError("manifest frame count mismatch for " + rec.seq_id);
    for (size_t c = 3; c < cells.size(); ++c)
      if (!cells[c].empty()) rec.labels[header[c]] = cells[c];
    if (out.dim == 0) out.dim = rec.dim;
    if (rec.dim != out.dim)
      throw DataError("inconsistent feature dims in dataset (" +
                      std::to_string(rec.dim) + " vs " +
                      std::to_string(out.dim) + ")");
    out.seqs.push_back(std::move(rec));
  }
  if (out.seqs.empty())
    throw DataError("manifest lists no sequences: " + manifest_path);
  return out;
}

void save_synth_truth(const std::string& dir, const SynthDataset& synth) {
  {
    std::ofstream os(fs::path(dir) / "segment_labels.csv");
    os << "seq_id,segment_index,class\n";
    for (size_t i = 0; i < synth.data.seqs.size(); ++i)
      for (size_t n = 0; n < synth.seg_class[i].size(); ++n)
        os << synth.data.seqs[i].seq_id << "," << n << ","
           << synth.seg_class[i][n] << "\n";
  }
  {
    const size_t f_count =
        1 + *std::max_element(synth.seq_factor.begin(), synth.seq_factor.end());
    const size_t d = synth.factor_anchors.size() / f_count;
    std::ofstream os(fs::path(dir) / "anchors.csv");
    os << "factor";
    for (size_t k = 0; k < d; ++k) os << ",a" << k;
    os << "\n";
    for (size_t f = 0; f < f_count; ++f) {
      os << f;
      for (size_t k = 0; k < d; ++k)
        os << "," << fmt_f64(synth.factor_anchors[f * d + k]);
      os << "\n";
    }
  }
}

}  // namespace fhvae
