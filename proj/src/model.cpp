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

#include "fhvae/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "fhvae/util.hpp"

namespace fhvae {

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 256;
  c.d_z1 = 32;
  c.d_z2 = 32;
  c.d_x = 80;
  c.seg_len = 20;
  return c;
}

ModelConfig ModelConfig::from_kv(const KvMap& kv) {
  ModelConfig c;
  if (kv_get(kv, "preset", "") == "paper") c = paper_scale();
  c.layers = kv_get_u64(kv, "layers", c.layers);
  c.hidden = kv_get_u64(kv, "hidden", c.hidden);
  c.d_z1 = kv_get_u64(kv, "d_z1", c.d_z1);
  c.d_z2 = kv_get_u64(kv, "d_z2", c.d_z2);
  c.d_x = kv_get_u64(kv, "d_x", c.d_x);
  c.seg_len = kv_get_u64(kv, "seg_len", c.seg_len);
  c.sigma_sq_z2 = kv_get_f64(kv, "sigma_sq_z2", c.sigma_sq_z2);
  c.var_floor = kv_get_f64(kv, "var_floor", c.var_floor);
  c.validate();
  return c;
}

void ModelConfig::to_kv(KvMap& kv) const {
  kv["layers"] = std::to_string(layers);
  kv["hidden"] = std::to_string(hidden);
  kv["d_z1"] = std::to_string(d_z1);
  kv["d_z2"] = std::to_string(d_z2);
  kv["d_x"] = std::to_string(d_x);
  kv["seg_len"] = std::to_string(seg_len);
  kv["sigma_sq_z2"] = fmt_f64(sigma_sq_z2);
  kv["var_floor"] = fmt_f64(var_floor);
}

void ModelConfig::validate() const {
  if (layers < 1 || hidden < 1 || d_z1 < 1 || d_z2 < 1 || d_x < 1 ||
      seg_len < 1)
    throw ConfigError("model dimensions must all be >= 1");
  if (!(sigma_sq_z2 > 0.0))
    throw ConfigError("sigma_sq_z2 must be positive");
  if (var_floor < 0.0) throw ConfigError("var_floor must be >= 0");
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

namespace {

Tensor uniform_fanin(Rng& rng, size_t rows, size_t cols) {
  Tensor t = Tensor::zeros({rows, cols}, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : t.data_mut()) v = rng.uniform(-bound, bound);
  return t;
}

LstmLayer shaped_lstm(size_t in, size_t hidden) {
  LstmLayer l;
  l.w_x = Tensor::zeros({in, 4 * hidden}, true);
  l.w_h = Tensor::zeros({hidden, 4 * hidden}, true);
  l.b = Tensor::zeros({4 * hidden}, true);
  return l;
}

Affine shaped_affine(size_t in, size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

std::vector<LstmLayer> shaped_stack(size_t in, size_t hidden, size_t layers) {
  std::vector<LstmLayer> v;
  v.reserve(layers);
  for (size_t l = 0; l < layers; ++l)
    v.push_back(shaped_lstm(l == 0 ? in : hidden, hidden));
  return v;
}

FhvaeParams shaped_params(const ModelConfig& cfg) {
  cfg.validate();
  FhvaeParams p;
  p.cfg = cfg;
  p.z2_pre = shaped_stack(cfg.d_x, cfg.hidden, cfg.layers);
  p.z1_pre = shaped_stack(cfg.d_x + cfg.d_z2, cfg.hidden, cfg.layers);
  p.dec_pre = shaped_stack(cfg.d_z1 + cfg.d_z2, cfg.hidden, cfg.layers);
  const size_t feat = cfg.layers * cfg.hidden;
  p.z2_head = shaped_affine(feat, 2 * cfg.d_z2);
  p.z1_head = shaped_affine(feat, 2 * cfg.d_z1);
  p.x_head = shaped_affine(cfg.hidden, 2 * cfg.d_x);
  return p;
}

void randomize_lstm(LstmLayer& l, size_t hidden, Rng& rng) {
  const double bx = 1.0 / std::sqrt(static_cast<double>(l.w_x.dim(0)));
  for (auto& v : l.w_x.data_mut()) v = rng.uniform(-bx, bx);
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& v : l.w_h.data_mut()) v = rng.uniform(-bh, bh);
  // Forget-gate bias block (second quarter) starts at 1.
  auto b = l.b.data_mut();
  for (size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
}

}  // namespace

FhvaeParams FhvaeParams::init(const ModelConfig& cfg, Rng& rng) {
  FhvaeParams p = shaped_params(cfg);
  for (auto* stack : {&p.z2_pre, &p.z1_pre, &p.dec_pre})
    for (LstmLayer& l : *stack) randomize_lstm(l, cfg.hidden, rng);
  for (auto* head : {&p.z2_head, &p.z1_head, &p.x_head}) {
    head->w = uniform_fanin(rng, head->w.dim(0), head->w.dim(1));
    // Bias stays zero: standard-normal posteriors at initialization.
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> FhvaeParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_stack = [&](const char* prefix, const std::vector<LstmLayer>& s) {
    for (size_t l = 0; l < s.size(); ++l) {
      const std::string base = std::string(prefix) + std::to_string(l);
      out.emplace_back(base + ".w_x", s[l].w_x);
      out.emplace_back(base + ".w_h", s[l].w_h);
      out.emplace_back(base + ".b", s[l].b);
    }
  };
  add_stack("z2_pre", z2_pre);
  add_stack("z1_pre", z1_pre);
  add_stack("dec_pre", dec_pre);
  out.emplace_back("z2_head.w", z2_head.w);
  out.emplace_back("z2_head.b", z2_head.b);
  out.emplace_back("z1_head.w", z1_head.w);
  out.emplace_back("z1_head.b", z1_head.b);
  out.emplace_back("x_head.w", x_head.w);
  out.emplace_back("x_head.b", x_head.b);
  return out;
}

std::vector<Tensor> FhvaeParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

FhvaeParams FhvaeParams::clone() const {
  FhvaeParams p = shaped_params(cfg);
  auto src = named();
  auto dst = p.named();
  for (size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].second.data();
    std::memcpy(dst[i].second.data_mut().data(), s.data(),
                s.size() * sizeof(double));
  }
  return p;
}

void FhvaeParams::zero_grad() {
  for (Tensor& t : tensors()) t.zero_grad();
}

size_t FhvaeParams::param_count() const {
  size_t n = 0;
  for (const Tensor& t : tensors()) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

struct LstmState {
  Tensor h, c;
};

LstmState lstm_step(Graph& g, const LstmLayer& layer, const Tensor& x,
                    const LstmState& s, size_t hidden) {
  Tensor gates = ops::add(g, ops::matmul(g, x, layer.w_x),
                          ops::matmul(g, s.h, layer.w_h));
  gates = ops::add(g, gates, layer.b);
  Tensor gi = ops::sigmoid(g, ops::slice(g, gates, 1, 0, hidden));
  Tensor gf = ops::sigmoid(g, ops::slice(g, gates, 1, hidden, hidden));
  Tensor gc = ops::tanh(g, ops::slice(g, gates, 1, 2 * hidden, hidden));
  Tensor go = ops::sigmoid(g, ops::slice(g, gates, 1, 3 * hidden, hidden));
  Tensor c = ops::add(g, ops::mul(g, gf, s.c), ops::mul(g, gi, gc));
  Tensor h = ops::mul(g, go, ops::tanh(g, c));
  return {h, c};
}

// Runs a stacked LSTM over time-major inputs. Fills `top_per_step` (top-layer
// hidden state per step) when requested; returns the last-step hidden state
// of every layer.
std::vector<Tensor> run_stack(Graph& g, const std::vector<LstmLayer>& stack,
                              const std::vector<Tensor>& inputs, size_t batch,
                              size_t hidden,
                              std::vector<Tensor>* top_per_step) {
  std::vector<LstmState> states(stack.size());
  for (auto& s : states) {
    s.h = Tensor::zeros({batch, hidden});
    s.c = Tensor::zeros({batch, hidden});
  }
  for (const Tensor& x_t : inputs) {
    Tensor layer_in = x_t;
    for (size_t l = 0; l < stack.size(); ++l) {
      states[l] = lstm_step(g, stack[l], layer_in, states[l], hidden);
      layer_in = states[l].h;
    }
    if (top_per_step) top_per_step->push_back(states.back().h);
  }
  std::vector<Tensor> last;
  last.reserve(states.size());
  for (auto& s : states) last.push_back(s.h);
  return last;
}

// Last-step hidden states of all layers fused into the head feature.
Tensor stack_feature(Graph& g, std::vector<Tensor> last_h) {
  if (last_h.size() == 1) return last_h[0];
  return ops::concat(g, last_h, 1);
}

GaussBatch apply_head(Graph& g, const Affine& head, const Tensor& feat,
                      size_t d, double var_floor) {
  Tensor out = ops::add(g, ops::matmul(g, feat, head.w), head.b);
  Tensor mean = ops::slice(g, out, 1, 0, d);
  Tensor logvar = ops::slice(g, out, 1, d, d);
  Tensor var = ops::add_scalar(g, ops::exp(g, logvar), var_floor);
  return {mean, var};
}

void check_frame_batch(const FhvaeParams& p, const FrameBatch& x) {
  if (x.frames.size() != p.cfg.seg_len)
    throw ShapeError("frame batch has " + std::to_string(x.frames.size()) +
                     " steps, config wants " + std::to_string(p.cfg.seg_len));
  for (const Tensor& f : x.frames)
    if (f.rank() != 2 || f.dim(0) != x.batch || f.dim(1) != p.cfg.d_x)
      throw ShapeError("frame tensor " + f.shape_str() + " does not match [" +
                       std::to_string(x.batch) + " x " +
                       std::to_string(p.cfg.d_x) + "]");
}

}  // namespace

FrameBatch make_frame_batch(const std::vector<const Segment*>& segs,
                            const ModelConfig& cfg, bool requires_grad) {
  if (segs.empty()) throw DataError("make_frame_batch: empty segment list");
  const size_t B = segs.size();
  for (const Segment* s : segs)
    if (s->frames.rank() != 2 || s->frames.dim(0) != cfg.seg_len ||
        s->frames.dim(1) != cfg.d_x)
      throw ShapeError("segment frames " + s->frames.shape_str() +
                       " do not match configured [" +
                       std::to_string(cfg.seg_len) + " x " +
                       std::to_string(cfg.d_x) + "]");
  FrameBatch fb;
  fb.batch = B;
  fb.frames.reserve(cfg.seg_len);
  for (size_t t = 0; t < cfg.seg_len; ++t) {
    Tensor ft = Tensor::zeros({B, cfg.d_x}, requires_grad);
    double* out = ft.data_mut().data();
    for (size_t b = 0; b < B; ++b)
      std::memcpy(out + b * cfg.d_x,
                  segs[b]->frames.data().data() + t * cfg.d_x,
                  cfg.d_x * sizeof(double));
    fb.frames.push_back(ft);
  }
  return fb;
}

GaussBatch encode_z2(Graph& g, const FhvaeParams& p, const FrameBatch& x) {
  check_frame_batch(p, x);
  auto last = run_stack(g, p.z2_pre, x.frames, x.batch, p.cfg.hidden, nullptr);
  Tensor feat = stack_feature(g, std::move(last));
  return apply_head(g, p.z2_head, feat, p.cfg.d_z2, p.cfg.var_floor);
}

GaussBatch encode_z1(Graph& g, const FhvaeParams& p, const FrameBatch& x,
                     const Tensor& z2_rows) {
  check_frame_batch(p, x);
  if (z2_rows.rank() != 2 || z2_rows.dim(0) != x.batch ||
      z2_rows.dim(1) != p.cfg.d_z2)
    throw ShapeError("encode_z1: z2 rows " + z2_rows.shape_str());
  for (double v : z2_rows.data())
    if (!std::isfinite(v))
      throw NumericError("encode_z1: non-finite z2 sample");
  std::vector<Tensor> joined;
  joined.reserve(x.frames.size());
  for (const Tensor& f : x.frames)
    joined.push_back(ops::concat(g, {f, z2_rows}, 1));
  auto last = run_stack(g, p.z1_pre, joined, x.batch, p.cfg.hidden, nullptr);
  Tensor feat = stack_feature(g, std::move(last));
  return apply_head(g, p.z1_head, feat, p.cfg.d_z1, p.cfg.var_floor);
}

std::vector<GaussBatch> decode_x_rows(Graph& g, const FhvaeParams& p,
                                 const Tensor& z1_rows,
                                 const Tensor& z2_rows) {
  if (z1_rows.rank() != 2 || z2_rows.rank() != 2 ||
      z1_rows.dim(0) != z2_rows.dim(0) || z1_rows.dim(1) != p.cfg.d_z1 ||
      z2_rows.dim(1) != p.cfg.d_z2)
    throw ShapeError("decode_x: latent rows " + z1_rows.shape_str() + ", " +
                     z2_rows.shape_str());
  const size_t B = z1_rows.dim(0);
  Tensor dec_in = ops::concat(g, {z1_rows, z2_rows}, 1);
  std::vector<Tensor> inputs(p.cfg.seg_len, dec_in);
  std::vector<Tensor> top;
  top.reserve(p.cfg.seg_len);
  run_stack(g, p.dec_pre, inputs, B, p.cfg.hidden, &top);
  std::vector<GaussBatch> out;
  out.reserve(top.size());
  for (const Tensor& h : top)
    out.push_back(apply_head(g, p.x_head, h, p.cfg.d_x, p.cfg.var_floor));
  return out;
}

// ---------------------------------------------------------------------------
// Single-segment wrappers
// ---------------------------------------------------------------------------

namespace {

DiagGaussian to_vector_gaussian(Graph& g, const GaussBatch& gb, size_t d) {
  return {ops::reshape(g, gb.mean, {d}), ops::reshape(g, gb.var, {d})};
}

}  // namespace

DiagGaussian encode_z2(Graph& g, const FhvaeParams& p, const Segment& x) {
  FrameBatch fb = make_frame_batch({&x}, p.cfg);
  return to_vector_gaussian(g, encode_z2(g, p, fb), p.cfg.d_z2);
}

DiagGaussian encode_z1(Graph& g, const FhvaeParams& p, const Segment& x,
                       const Tensor& z2_sample) {
  if (z2_sample.numel() != p.cfg.d_z2)
    throw ShapeError("encode_z1: z2 sample " + z2_sample.shape_str());
  FrameBatch fb = make_frame_batch({&x}, p.cfg);
  Tensor rows = ops::reshape(g, z2_sample, {1, p.cfg.d_z2});
  return to_vector_gaussian(g, encode_z1(g, p, fb, rows), p.cfg.d_z1);
}

std::vector<DiagGaussian> decode_x(Graph& g, const FhvaeParams& p,
                                   const Tensor& z1, const Tensor& z2) {
  if (z1.numel() != p.cfg.d_z1 || z2.numel() != p.cfg.d_z2)
    throw ShapeError("decode_x: latent dims " + z1.shape_str() + ", " +
                     z2.shape_str());
  Tensor r1 = ops::reshape(g, z1, {1, p.cfg.d_z1});
  Tensor r2 = ops::reshape(g, z2, {1, p.cfg.d_z2});
  auto rows = decode_x_rows(g, p, r1, r2);
  std::vector<DiagGaussian> out;
  out.reserve(rows.size());
  for (auto& gb : rows) out.push_back(to_vector_gaussian(g, gb, p.cfg.d_x));
  return out;
}

// ---------------------------------------------------------------------------
// MAP s-vector inference
// ---------------------------------------------------------------------------

std::vector<double> svector_from_means(const std::vector<double>& mean_rows,
                                       size_t n_rows, size_t d,
                                       double sigma_sq_z2) {
  if (n_rows == 0) throw DataError("svector_from_means: no segments");
  std::vector<double> out(d, 0.0);
  for (size_t r = 0; r < n_rows; ++r)
    for (size_t i = 0; i < d; ++i) out[i] += mean_rows[r * d + i];
  const double denom = static_cast<double>(n_rows) + sigma_sq_z2;
  for (double& v : out) v /= denom;
  return out;
}

std::vector<double> infer_svector_map(const FhvaeParams& p,
                                      const std::vector<Segment>& segments) {
  if (segments.empty())
    throw DataError("infer_svector_map: empty segment list");
  for (const Segment& s : segments)
    if (s.seq_id != segments.front().seq_id)
      throw DataError("infer_svector_map: mixed seq_ids (" +
                      segments.front().seq_id + " vs " + s.seq_id + ")");
  const size_t d = p.cfg.d_z2;
  std::vector<double> means;
  means.reserve(segments.size() * d);
  Graph g;
  g.recording = false;
  constexpr size_t kChunk = 128;
  for (size_t begin = 0; begin < segments.size(); begin += kChunk) {
    const size_t end = std::min(begin + kChunk, segments.size());
    std::vector<const Segment*> chunk;
    chunk.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) chunk.push_back(&segments[i]);
    GaussBatch gb = encode_z2(g, p, make_frame_batch(chunk, p.cfg));
    means.insert(means.end(), gb.mean.data().begin(), gb.mean.data().end());
  }
  return svector_from_means(means, segments.size(), d, p.cfg.sigma_sq_z2);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'F', 'H', 'V', 'C'};
constexpr uint8_t kCkptVersion = 1;

size_t tnsr_size(const Tensor& t) {
  return 4 + 1 + 1 + 4 * t.rank() + 8 * t.numel();
}
}  // namespace

void save_checkpoint(const std::string& path, const FhvaeParams& params,
                     const KvMap& config_echo) {
  KvMap echo = config_echo;
  params.cfg.to_kv(echo);  // the model geometry always rides along
  const std::string cfg_text = render_kv(echo);
  const auto entries = params.named();

  size_t header = 4 + 1 + 4 + cfg_text.size() + 4;
  for (const auto& [name, t] : entries) header += 2 + name.size() + 8;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for write: " + path);
  os.write(kCkptMagic, 4);
  write_u8(os, kCkptVersion);
  write_u32le(os, static_cast<uint32_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_u32le(os, static_cast<uint32_t>(entries.size()));
  size_t offset = header;
  for (const auto& [name, t] : entries) {
    write_u16le(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64le(os, offset);
    offset += tnsr_size(t);
  }
  for (const auto& [name, t] : entries) tensor_write(os, t);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (read_u8(is) != kCkptVersion)
    throw DataError("unsupported checkpoint version in " + path);
  const uint32_t cfg_len = read_u32le(is);
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len))
    throw DataError("truncated checkpoint: " + path);
  KvMap echo = parse_kv_text(cfg_text);

  Checkpoint ck{shaped_params(ModelConfig::from_kv(echo)), std::move(echo)};
  const uint32_t count = read_u32le(is);
  std::vector<std::pair<std::string, uint64_t>> manifest(count);
  for (auto& [name, off] : manifest) {
    const uint16_t len = read_u16le(is);
    name.resize(len);
    if (!is.read(name.data(), len)) throw DataError("truncated manifest");
    off = read_u64le(is);
  }

  std::unordered_map<std::string, Tensor> by_name;
  for (auto& [name, t] : ck.params.named()) by_name.emplace(name, t);
  if (by_name.size() != manifest.size())
    throw DataError("checkpoint manifest has " +
                    std::to_string(manifest.size()) + " tensors, model wants " +
                    std::to_string(by_name.size()));
  for (const auto& [name, off] : manifest) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint tensor not in model: " + name);
    is.seekg(static_cast<std::streamoff>(off));
    Tensor loaded = tensor_read(is);
    if (loaded.shape() != it->second.shape())
      throw DataError("checkpoint tensor " + name + " has shape " +
                      loaded.shape_str() + ", model wants " +
                      it->second.shape_str());
    std::memcpy(it->second.data_mut().data(), loaded.data().data(),
                loaded.numel() * sizeof(double));
  }
  return ck;
}

}  // namespace fhvae
