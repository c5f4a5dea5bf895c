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

// fhvae: train and evaluate factorized hierarchical VAEs with hierarchical
// sampling, plus the scaling and step-time experiments.
//
// Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fhvae/eval.hpp"
#include "fhvae/kernels.hpp"
#include "fhvae/util.hpp"

namespace fs = std::filesystem;
using namespace fhvae;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "fhvae 0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=value
  uint64_t seed = 0;
  bool seed_set = false;
};

KvMap resolve_config(const CommonArgs& c) {
  KvMap kv;
  if (!c.config_path.empty()) kv = parse_kv_file(c.config_path);
  for (const std::string& kvpair : c.overrides) {
    const size_t eq = kvpair.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got \"" + kvpair + "\"");
    kv[kvpair.substr(0, eq)] = kvpair.substr(eq + 1);
  }
  if (c.seed_set) kv["seed"] = std::to_string(c.seed);
  return kv;
}

void write_run_manifest(const std::string& out_dir, const std::string& cmd,
                        const KvMap& kv) {
  json j;
  j["subcommand"] = cmd;
  j["version"] = kVersion;
  j["kernels"] = kernels::active().name;
  j["seed"] = kv_get_u64(kv, "seed", 0);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(kv_hash(kv)));
  j["config_hash"] = hash;
  j["config"] = render_kv(kv);
  // The one artifact allowed to carry wall-clock state.
  j["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  std::ofstream os(fs::path(out_dir) / "run_manifest.json");
  os << j.dump(2) << "\n";
}

void write_train_log(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream os(path);
  os << LossBreakdown::csv_header() << "\n";
  for (const LogRow& row : log) os << row.bd.csv_row(row.step) << "\n";
}

Dataset load_manifest_or_throw(const std::string& manifest) {
  if (manifest.empty())
    throw DataError("no --manifest given and the config names none");
  return load_dataset(manifest);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonArgs common;
  std::string manifest;
  bool flat = false;
  bool force = false;
  // Spec-level convenience flags; all map onto config keys.
  uint64_t K = 0, bs = 0, bseg = 0, max_steps = 0, patience = 0;
  double alpha = -1.0, lr = 0.0;
  bool k_set = false, bs_set = false, bseg_set = false, steps_set = false,
       patience_set = false, alpha_set = false, lr_set = false;
};

int cmd_train(const TrainArgs& a) {
  KvMap kv = resolve_config(a.common);
  if (a.k_set) kv["K"] = std::to_string(a.K);
  if (a.bs_set) kv["bs"] = std::to_string(a.bs);
  if (a.bseg_set) kv["b_seg"] = std::to_string(a.bseg);
  if (a.steps_set) kv["max_steps"] = std::to_string(a.max_steps);
  if (a.patience_set) kv["patience"] = std::to_string(a.patience);
  if (a.alpha_set) kv["alpha"] = fmt_f64(a.alpha);
  if (a.lr_set) kv["lr"] = fmt_f64(a.lr);

  ModelConfig mcfg = ModelConfig::from_kv(kv);
  TrainConfig tcfg = TrainConfig::from_kv(kv);

  const fs::path out(a.common.out_dir);
  const fs::path ckpt = out / "checkpoint.fhvc";
  if (fs::exists(ckpt) && !a.force)
    throw ConfigError("checkpoint exists: " + ckpt.string() +
                      " (use --force to overwrite)");

  const std::string manifest =
      a.manifest.empty() ? kv_get(kv, "manifest", "") : a.manifest;
  Dataset full = load_manifest_or_throw(manifest);

  Dataset train = full, val;
  if (tcfg.early_stopping) {
    auto parts = split_dataset(full, tcfg.val_frac, tcfg.seed);
    train = std::move(parts.first);
    val = std::move(parts.second);
    if (val.size() == 0)
      throw DataError("validation split is empty; lower val_frac or disable "
                      "early_stopping");
  }

  TrainResult result =
      a.flat ? train_flat(train, tcfg.early_stopping ? &val : nullptr, mcfg,
                          tcfg)
             : train_hierarchical(train,
                                  tcfg.early_stopping ? &val : nullptr, mcfg,
                                  tcfg);

  fs::create_directories(out);
  KvMap echo = kv;
  mcfg.to_kv(echo);
  tcfg.to_kv(echo);
  echo["sampling"] = a.flat ? "flat" : "hierarchical";
  if (!manifest.empty()) echo["manifest"] = manifest;
  save_checkpoint(ckpt.string(), result.params, echo);
  write_train_log((out / "train_log.csv").string(), result.log);
  write_run_manifest(a.common.out_dir, "train", echo);

  std::cout << "steps=" << result.steps_run
            << " best_val_bound=" << fmt_f64_short(result.best_val_bound)
            << " best_step=" << result.best_step
            << " cache_bytes=" << result.peak_cache_bytes
            << (result.early_stopped ? " (early stop)" : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

struct SynthArgs {
  CommonArgs common;
  uint64_t m = 0, segs = 0;
  bool m_set = false, segs_set = false;
};

int cmd_synth_data(const SynthArgs& a) {
  KvMap kv = resolve_config(a.common);
  if (a.m_set) kv["synth_m"] = std::to_string(a.m);
  if (a.segs_set) kv["synth_segs"] = std::to_string(a.segs);
  SynthSpec spec = SynthSpec::from_kv(kv);
  SynthDataset ds = synth_generate(spec);
  fs::create_directories(a.common.out_dir);
  save_dataset(a.common.out_dir, ds.data);
  save_synth_truth(a.common.out_dir, ds);
  write_run_manifest(a.common.out_dir, "synth-data", kv);
  std::cout << "sequences=" << ds.data.size()
            << " segments_per_seq=" << spec.segs_per_seq
            << " manifest=" << (fs::path(a.common.out_dir) / "manifest.csv").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-sv
// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonArgs common;
  std::string ckpt;
  std::string manifest;
  std::string split = "val";  // val | train | none
};

// Reconstructs the training-time split so evaluation sees the same held-out
// sequences the trainer did.
Dataset eval_split(const Dataset& full, const KvMap& echo,
                   const std::string& split) {
  if (split == "none") return full;
  const double val_frac = kv_get_f64(echo, "val_frac", 0.1);
  const uint64_t seed = kv_get_u64(echo, "seed", 0);
  auto parts = split_dataset(full, val_frac, seed);
  if (split == "train") return std::move(parts.first);
  if (split == "val") return std::move(parts.second);
  throw ConfigError("unknown --split value: " + split);
}

int cmd_eval_sv(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  KvMap kv = resolve_config(a.common);
  const std::string manifest =
      a.manifest.empty() ? kv_get(ck.config_echo, "manifest", "") : a.manifest;
  Dataset full = load_manifest_or_throw(manifest);
  Dataset heldout = eval_split(full, ck.config_echo, a.split);
  if (heldout.size() < 2) throw DataError("eval split has < 2 sequences");

  TrialSpec spec;
  spec.seed = kv_get_u64(ck.config_echo, "seed", 0);
  spec.label_key = kv_get(kv, "label_key", "factor");
  spec.max_trials = kv_get_u64(kv, "max_trials", spec.max_trials);
  TrialSet trials = score_trials(ck.params, heldout, spec);
  const double rate = eer(trials);

  fs::create_directories(a.common.out_dir);
  std::ofstream os(fs::path(a.common.out_dir) / "trials.csv");
  os << "id_a,id_b,same,score\n";
  for (const Trial& t : trials)
    os << t.id_a << "," << t.id_b << "," << (t.same_source ? 1 : 0) << ","
       << fmt_f64(t.score) << "\n";
  os.close();
  KvMap echo = kv;
  echo["ckpt"] = a.ckpt;
  echo["split"] = a.split;
  write_run_manifest(a.common.out_dir, "eval-sv", echo);

  std::cout << "eer=" << fmt_f64(rate) << " trials=" << trials.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// embed-tsne
// ---------------------------------------------------------------------------

struct TsneArgs {
  CommonArgs common;
  std::string ckpt;
  std::string manifest;
  std::string split = "val";
  uint64_t max_segments = 2000;
  double perplexity = 30.0;
  uint64_t iterations = 1000;
};

int cmd_embed_tsne(const TsneArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  KvMap kv = resolve_config(a.common);
  const std::string manifest =
      a.manifest.empty() ? kv_get(ck.config_echo, "manifest", "") : a.manifest;
  Dataset full = load_manifest_or_throw(manifest);
  Dataset data = eval_split(full, ck.config_echo, a.split);

  EmbeddingDump dump =
      embed_segments(ck.params, data, /*seg_shift=*/0, a.max_segments);

  // Optional per-segment class labels written by synth-data.
  std::map<std::pair<std::string, size_t>, std::string> seg_labels;
  const fs::path label_file =
      fs::path(manifest).parent_path() / "segment_labels.csv";
  if (fs::exists(label_file)) {
    std::ifstream ls(label_file);
    std::string line;
    std::getline(ls, line);  // header
    while (std::getline(ls, line)) {
      const size_t c1 = line.find(','), c2 = line.rfind(',');
      if (c1 == std::string::npos || c2 <= c1) continue;
      seg_labels[{line.substr(0, c1),
                  std::stoull(line.substr(c1 + 1, c2 - c1 - 1))}] =
          line.substr(c2 + 1);
    }
  }
  auto seq_label = [&](size_t row) {
    const auto& labels = data.seqs[dump.dataset_seq[row]].labels;
    auto it = labels.find("factor");
    return it == labels.end() ? std::string() : it->second;
  };

  fs::create_directories(a.common.out_dir);
  {
    std::ofstream os(fs::path(a.common.out_dir) / "embeddings.csv");
    os << "seq_id,segment_index";
    for (size_t k = 0; k < dump.d_z1; ++k) os << ",z1_" << k;
    for (size_t k = 0; k < dump.d_z2; ++k) os << ",z2_" << k;
    os << ",factor,class\n";
    for (size_t i = 0; i < dump.n; ++i) {
      os << dump.seq_id[i] << "," << dump.seg_index[i];
      for (size_t k = 0; k < dump.d_z1; ++k)
        os << "," << fmt_f64(dump.z1_bar[i * dump.d_z1 + k]);
      for (size_t k = 0; k < dump.d_z2; ++k)
        os << "," << fmt_f64(dump.z2_bar[i * dump.d_z2 + k]);
      auto sit = seg_labels.find({dump.seq_id[i], dump.seg_index[i]});
      os << "," << seq_label(i) << ","
         << (sit == seg_labels.end() ? "" : sit->second) << "\n";
    }
  }

  TsneConfig tc;
  tc.perplexity = a.perplexity;
  tc.iterations = a.iterations;
  tc.seed = kv_get_u64(kv, "seed", 0);
  TsneResult t1 = tsne_embed(dump.z1_bar, dump.n, dump.d_z1, tc);
  TsneResult t2 = tsne_embed(dump.z2_bar, dump.n, dump.d_z2, tc);
  {
    std::ofstream os(fs::path(a.common.out_dir) / "tsne.csv");
    os << "seq_id,segment_index,z1_y1,z1_y2,z2_y1,z2_y2,factor,class\n";
    for (size_t i = 0; i < dump.n; ++i) {
      auto sit = seg_labels.find({dump.seq_id[i], dump.seg_index[i]});
      os << dump.seq_id[i] << "," << dump.seg_index[i] << ","
         << fmt_f64(t1.coords[i * 2]) << "," << fmt_f64(t1.coords[i * 2 + 1])
         << "," << fmt_f64(t2.coords[i * 2]) << ","
         << fmt_f64(t2.coords[i * 2 + 1]) << "," << seq_label(i) << ","
         << (sit == seg_labels.end() ? "" : sit->second) << "\n";
    }
  }
  KvMap echo = kv;
  echo["ckpt"] = a.ckpt;
  write_run_manifest(a.common.out_dir, "embed-tsne", echo);
  std::cout << "segments=" << dump.n << " z1_kl=" << fmt_f64_short(t1.final_kl)
            << " z2_kl=" << fmt_f64_short(t2.final_kl) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// recombine
// ---------------------------------------------------------------------------

struct RecombineArgs {
  CommonArgs common;
  std::string ckpt;
  std::string manifest;
  std::string split = "val";
  uint64_t pairs = 16;
};

int cmd_recombine(const RecombineArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  KvMap kv = resolve_config(a.common);
  const std::string manifest =
      a.manifest.empty() ? kv_get(ck.config_echo, "manifest", "") : a.manifest;
  Dataset full = load_manifest_or_throw(manifest);
  Dataset data = eval_split(full, ck.config_echo, a.split);
  const ModelConfig& mcfg = ck.params.cfg;
  auto refs = build_segment_index(data, mcfg.seg_len, mcfg.seg_len);
  if (refs.size() < 2) throw DataError("recombine: need at least 2 segments");

  const uint64_t seed = kv_get_u64(kv, "seed",
                                   kv_get_u64(ck.config_echo, "seed", 0));
  Rng pick(seed, "recombine-pick");
  Rng eps(seed, "recombine-eps");
  fs::create_directories(a.common.out_dir);
  std::ofstream os(fs::path(a.common.out_dir) / "pairs.csv");
  os << "pair,seq_a,index_a,seq_b,index_b,path\n";
  for (uint64_t i = 0; i < a.pairs; ++i) {
    const SegRef& ra = refs[pick.uniform_below(refs.size())];
    const SegRef& rb = refs[pick.uniform_below(refs.size())];
    Segment xa = materialize(data, ra, mcfg.seg_len);
    Segment xb = materialize(data, rb, mcfg.seg_len);
    Tensor frames = recombine(ck.params, xa, xb, eps);
    const std::string rel = "recomb_" + std::to_string(i) + ".fbnk";
    fbnk_write((fs::path(a.common.out_dir) / rel).string(),
               frames.data().data(), mcfg.seg_len, mcfg.d_x);
    os << i << "," << xa.seq_id << "," << xa.index << "," << xb.seq_id << ","
       << xb.index << "," << rel << "\n";
  }
  KvMap echo = kv;
  echo["ckpt"] = a.ckpt;
  write_run_manifest(a.common.out_dir, "recombine", echo);
  std::cout << "pairs=" << a.pairs << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  CommonArgs common;
  std::string k_csv = "10,100,1000";
  std::string manifest;
  uint64_t warmup = 3, reps = 20;
};

int cmd_bench(const BenchArgs& a) {
  KvMap kv = resolve_config(a.common);
  ModelConfig mcfg = ModelConfig::from_kv(kv);
  TrainConfig tcfg = TrainConfig::from_kv(kv);
  tcfg.early_stopping = false;

  std::vector<size_t> k_list;
  std::stringstream ss(a.k_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) k_list.push_back(std::stoull(tok));
  if (k_list.empty()) throw ConfigError("bench: empty --K list");

  Dataset data;
  if (!a.manifest.empty()) {
    data = load_dataset(a.manifest);
  } else {
    // Synthetic corpus sized to fill the largest K.
    SynthSpec spec = SynthSpec::from_kv(kv);
    spec.n_seqs = *std::max_element(k_list.begin(), k_list.end());
    spec.segs_per_seq = kv_get_u64(kv, "synth_segs", 3);
    spec.d_x = mcfg.d_x;
    spec.seg_len = mcfg.seg_len;
    data = synth_generate(spec).data;
  }

  auto rows = bench_step_time(data, mcfg, tcfg, k_list, a.warmup, a.reps);
  fs::create_directories(a.common.out_dir);
  std::ofstream os(fs::path(a.common.out_dir) / "bench.csv");
  os << bench_csv(rows);
  write_run_manifest(a.common.out_dir, "bench", kv);
  std::cout << bench_csv(rows);
  return 0;
}

// ---------------------------------------------------------------------------
// denom-scaling
// ---------------------------------------------------------------------------

struct DenomArgs {
  CommonArgs common;
  uint64_t dim = 32;
  std::string m_csv = "100,1000,10000";
  uint64_t draws = 1000;
  double kernel_var = 2.0;
};

int cmd_denom_scaling(const DenomArgs& a) {
  KvMap kv = resolve_config(a.common);
  std::vector<size_t> m_list;
  std::stringstream ss(a.m_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) m_list.push_back(std::stoull(tok));
  auto res = denominator_scaling(a.dim, m_list, a.draws,
                                 kv_get_u64(kv, "seed", 0), a.kernel_var);
  fs::create_directories(a.common.out_dir);
  {
    std::ofstream os(fs::path(a.common.out_dir) / "denom_mean.csv");
    os << "M,mean_log_denominator\n";
    for (size_t i = 0; i < res.m_list.size(); ++i)
      os << res.m_list[i] << "," << fmt_f64(res.mean_log_denominator[i])
         << "\n";
  }
  {
    // Shared-range histogram so the per-M distributions are comparable.
    double lo = res.samples[0][0], hi = lo;
    for (const auto& bucket : res.samples)
      for (double v : bucket) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    const size_t bins = 40;
    const double width = (hi - lo) / bins;
    std::ofstream os(fs::path(a.common.out_dir) / "denom_hist.csv");
    os << "M,bin_lo,bin_hi,count\n";
    for (size_t i = 0; i < res.m_list.size(); ++i) {
      std::vector<size_t> counts(bins, 0);
      for (double v : res.samples[i]) {
        size_t b = width > 0 ? static_cast<size_t>((v - lo) / width) : 0;
        if (b >= bins) b = bins - 1;
        ++counts[b];
      }
      for (size_t b = 0; b < bins; ++b)
        os << res.m_list[i] << "," << fmt_f64_short(lo + b * width) << ","
           << fmt_f64_short(lo + (b + 1) * width) << "," << counts[b] << "\n";
    }
  }
  write_run_manifest(a.common.out_dir, "denom-scaling", kv);
  std::cout << "slope=" << fmt_f64_short(res.slope) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// prep-wav
// ---------------------------------------------------------------------------

struct PrepArgs {
  CommonArgs common;
  std::string in_dir;
  uint64_t rate = 16000;
};

int cmd_prep_wav(const PrepArgs& a) {
  KvMap kv = resolve_config(a.common);
  FbankConfig fcfg;
  fcfg.n_mels = kv_get_u64(kv, "n_mels", fcfg.n_mels);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.in_dir))
    if (e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .wav files in " + a.in_dir);

  Dataset out;
  out.dim = fcfg.n_mels;
  out.seqs.resize(files.size());
  parallel_for(files.size(), [&](size_t i) {
    WavData wav = wav_read(files[i].string());
    if (wav.rate != a.rate)
      throw DataError(files[i].string() + ": sample rate " +
                      std::to_string(wav.rate) + ", expected " +
                      std::to_string(a.rate));
    SequenceRecord rec;
    rec.seq_id = files[i].stem().string();
    rec.dim = fcfg.n_mels;
    rec.feats = fbank(wav.samples, wav.rate, fcfg, &rec.n_frames);
    out.seqs[i] = std::move(rec);
  });
  fs::create_directories(a.common.out_dir);
  save_dataset(a.common.out_dir, out,
               kv_get_bool(kv, "standardize", false));
  write_run_manifest(a.common.out_dir, "prep-wav", kv);
  std::cout << "sequences=" << out.size() << "\n";
  return 0;
}

void add_common(CLI::App* cmd, CommonArgs& c, bool out_required = true) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  auto* out = cmd->add_option("--out", c.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--set", c.overrides, "override config key=value")
      ->take_all();
  cmd->add_option("--seed", c.seed, "root RNG seed")
      ->each([&c](const std::string&) { c.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) +
               " - factorized hierarchical VAE training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args.common);
  train->add_option("--manifest", train_args.manifest, "dataset manifest");
  train->add_flag("--flat", train_args.flat, "flat (M-entry cache) baseline");
  train->add_flag("--force", train_args.force, "overwrite checkpoint");
  train->add_option("--K", train_args.K)->each([&](const std::string&) {
    train_args.k_set = true;
  });
  train->add_option("--bs", train_args.bs)->each([&](const std::string&) {
    train_args.bs_set = true;
  });
  train->add_option("--bseg", train_args.bseg)->each([&](const std::string&) {
    train_args.bseg_set = true;
  });
  train->add_option("--alpha", train_args.alpha)
      ->each([&](const std::string&) { train_args.alpha_set = true; });
  train->add_option("--lr", train_args.lr)->each([&](const std::string&) {
    train_args.lr_set = true;
  });
  train->add_option("--max-steps", train_args.max_steps)
      ->each([&](const std::string&) { train_args.steps_set = true; });
  train->add_option("--patience", train_args.patience)
      ->each([&](const std::string&) { train_args.patience_set = true; });

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth-data", "generate synthetic data");
  add_common(synth, synth_args.common);
  synth->add_option("--M", synth_args.m)->each([&](const std::string&) {
    synth_args.m_set = true;
  });
  synth->add_option("--segs", synth_args.segs)->each([&](const std::string&) {
    synth_args.segs_set = true;
  });

  EvalArgs eval_args;
  auto* evalsv = app.add_subcommand("eval-sv", "verification EER from "
                                               "s-vectors");
  add_common(evalsv, eval_args.common);
  evalsv->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  evalsv->add_option("--manifest", eval_args.manifest);
  evalsv->add_option("--split", eval_args.split, "val | train | none");

  TsneArgs tsne_args;
  auto* tsne = app.add_subcommand("embed-tsne", "dump embeddings + t-SNE");
  add_common(tsne, tsne_args.common);
  tsne->add_option("--ckpt", tsne_args.ckpt)->required();
  tsne->add_option("--manifest", tsne_args.manifest);
  tsne->add_option("--split", tsne_args.split);
  tsne->add_option("--max-segments", tsne_args.max_segments);
  tsne->add_option("--perplexity", tsne_args.perplexity);
  tsne->add_option("--iterations", tsne_args.iterations);

  RecombineArgs rec_args;
  auto* rec = app.add_subcommand("recombine", "decode re-combined latents");
  add_common(rec, rec_args.common);
  rec->add_option("--ckpt", rec_args.ckpt)->required();
  rec->add_option("--manifest", rec_args.manifest);
  rec->add_option("--split", rec_args.split);
  rec->add_option("--pairs", rec_args.pairs);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "step-time vs K benchmark");
  add_common(bench, bench_args.common);
  bench->add_option("--K", bench_args.k_csv, "comma-separated K grid");
  bench->add_option("--manifest", bench_args.manifest);
  bench->add_option("--warmup", bench_args.warmup);
  bench->add_option("--reps", bench_args.reps);

  DenomArgs denom_args;
  auto* denom = app.add_subcommand("denom-scaling",
                                   "log-denominator scaling experiment");
  add_common(denom, denom_args.common);
  denom->add_option("--dim", denom_args.dim);
  denom->add_option("--M", denom_args.m_csv, "comma-separated entry counts");
  denom->add_option("--draws", denom_args.draws);
  denom->add_option("--kernel-var", denom_args.kernel_var);

  PrepArgs prep_args;
  auto* prep = app.add_subcommand("prep-wav", "wav directory to features");
  add_common(prep, prep_args.common);
  prep->add_option("--in", prep_args.in_dir, "directory of .wav files")
      ->required();
  prep->add_option("--rate", prep_args.rate, "expected sample rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*synth) return cmd_synth_data(synth_args);
    if (*evalsv) return cmd_eval_sv(eval_args);
    if (*tsne) return cmd_embed_tsne(tsne_args);
    if (*rec) return cmd_recombine(rec_args);
    if (*bench) return cmd_bench(bench_args);
    if (*denom) return cmd_denom_scaling(denom_args);
    if (*prep) return cmd_prep_wav(prep_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
