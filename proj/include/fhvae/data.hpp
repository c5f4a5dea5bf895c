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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fhvae/model.hpp"

namespace fhvae {

// One feature sequence (utterance) with optional per-sequence labels.
struct SequenceRecord {
  std::string seq_id;
  size_t n_frames = 0;
  size_t dim = 0;
  std::vector<double> feats;  // row-major n_frames x dim
  std::map<std::string, std::string> labels;

  std::span<const double> frame(size_t t) const {
    return {feats.data() + t * dim, dim};
  }
};

// In-memory dataset. Sequence reads go through seq() so the training loop's
// data access can be audited.
struct Dataset {
  std::vector<SequenceRecord> seqs;
  size_t dim = 0;
  bool standardized = false;

  mutable std::function<void(size_t)> access_observer;

  const SequenceRecord& seq(size_t i) const {
    if (access_observer) access_observer(i);
    return seqs.at(i);
  }
  size_t size() const { return seqs.size(); }
};

// Lightweight handle on one training window.
struct SegRef {
  uint32_t seq = 0;
  uint32_t index = 0;
  uint32_t frame_begin = 0;
};

// Fully contained windows [i*shift, i*shift + T); short sequences yield none.
std::vector<Segment> segment_sequence(const SequenceRecord& seq, size_t T,
                                      size_t shift);
std::vector<SegRef> build_segment_index(const Dataset& data, size_t T,
                                        size_t shift);
// Windows of one sequence only.
std::vector<SegRef> sequence_segment_refs(const Dataset& data, size_t seq,
                                          size_t T, size_t shift);
Segment materialize(const Dataset& data, const SegRef& ref, size_t T);

// ---------------------------------------------------------------------------
// WAV (RIFF PCM16 mono) and log-Mel filter-bank features
// ---------------------------------------------------------------------------

struct WavData {
  std::vector<double> samples;  // in [-1, 1)
  size_t rate = 0;
};

WavData wav_read(const std::string& path);
void wav_write(const std::string& path, const WavData& wav);

struct FbankConfig {
  size_t n_mels = 80;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  double log_floor = 1e-10;
};

// Frames via win/hop, Hann window, magnitude-squared spectrum, triangular
// Mel filters spanning 0..Nyquist, natural log with floor. Returns row-major
// n_frames x n_mels.
std::vector<double> fbank(const std::vector<double>& samples, size_t rate,
                          const FbankConfig& cfg, size_t* n_frames_out);

// Filter matrix [n_mels x (n_fft/2 + 1)] as used by fbank; exposed for
// inspection.
std::vector<double> mel_filter_matrix(size_t n_mels, size_t n_fft,
                                      double rate);
// Continuous triangular weight of filter m at freq_hz.
double mel_filter_weight(size_t m, double freq_hz, size_t n_mels, double rate);

namespace fbank_detail {
// Magnitude-squared spectrum of one windowed frame zero-padded to n_fft
// (power of two); returns n_fft/2 + 1 bins.
std::vector<double> power_spectrum(const double* frame, size_t win,
                                   size_t n_fft);
size_t next_pow2(size_t n);
}  // namespace fbank_detail

// ---------------------------------------------------------------------------
// Synthetic hierarchical data
// ---------------------------------------------------------------------------

// Instantiates the model's generative story with known factors: sequence
// mu2 around one of n_factors anchors, per-segment z2 ~ N(mu2, sigma^2 I),
// per-segment z1 around one of n_classes anchors, frames through a fixed
// linear map plus noise.
struct SynthSpec {
  size_t n_seqs = 60;
  size_t segs_per_seq = 25;
  size_t d_z1 = 8;
  size_t d_z2 = 8;
  size_t d_x = 8;
  size_t seg_len = 10;
  size_t n_factors = 4;
  size_t n_classes = 3;
  double sigma_sq_z2 = 0.25;
  double mu2_spread = 0.1;    // covariance of mu2 around its anchor
  double anchor_scale = 3.0;
  double class_scale = 1.5;
  double class_spread = 0.5;
  double noise_scale = 0.1;
  uint64_t seed = 0;
  bool identity_map = false;  // requires d_x == d_z1 + d_z2

  static SynthSpec from_kv(const KvMap& kv);
  void validate() const;
};

struct SynthDataset {
  Dataset data;                                 // labels carry "factor"
  std::vector<size_t> seq_factor;               // per sequence
  std::vector<std::vector<size_t>> seg_class;   // per sequence, per segment
  std::vector<double> factor_anchors;           // [n_factors x d_z2]
  std::vector<double> mu2_true;                 // [n_seqs x d_z2]
};

SynthDataset synth_generate(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// On-disk formats: FBNK feature files and CSV manifests
// ---------------------------------------------------------------------------

// FBNK: magic "FBNK", u32 frame count, u32 dim, f32 LE row-major payload.
void fbnk_write(const std::string& path, const double* data, size_t n_frames,
                size_t dim);
struct FbnkData {
  size_t n_frames = 0, dim = 0;
  std::vector<double> feats;
};
FbnkData fbnk_read(const std::string& path);

// Writes features/<seq_id>.fbnk plus manifest.csv (seq_id, feature_path,
// n_frames, label columns). Optional per-dim standardization is recorded in
// the manifest header.
void save_dataset(const std::string& dir, const Dataset& data,
                  bool standardize = false);
Dataset load_dataset(const std::string& manifest_path);

// Synthetic ground truth next to the manifest: segment_labels.csv and
// anchors.csv.
void save_synth_truth(const std::string& dir, const SynthDataset& synth);

}  // namespace fhvae
