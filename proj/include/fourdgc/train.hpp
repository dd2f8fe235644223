#pragma once

#include "fourdgc/pipeline.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// Frame records.

namespace detail {

inline std::vector<float> pack_attrs(const GaussianFrameSet& set) {
  std::vector<float> out;
  out.reserve(set.size() * 11);
  for (const auto& g : set.primitives) {
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(g.center[k]));
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>(g.rotation[k]));
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(g.log_scale[k]));
    out.push_back(static_cast<float>(g.opacity));
  }
  return out;
}

inline void unpack_attrs(std::span<const float> attrs, GaussianFrameSet& set) {
  if (attrs.size() != set.size() * 11) throw FormatError("attribute block size mismatch");
  size_t p = 0;
  for (auto& g : set.primitives) {
    for (int k = 0; k < 3; ++k) g.center[k] = attrs[p++];
    for (int k = 0; k < 4; ++k) g.rotation[k] = attrs[p++];
    for (int k = 0; k < 3; ++k) g.log_scale[k] = attrs[p++];
    g.opacity = attrs[p++];
  }
}

inline void unpack_sh(std::span<const double> sh_values, GaussianFrameSet& set, int sh_degree) {
  const size_t shn = static_cast<size_t>(3 * sh_coeff_count(sh_degree));
  if (sh_values.size() != set.size() * shn) throw FormatError("sh block size mismatch");
  for (size_t i = 0; i < set.size(); ++i)
    set.primitives[i].sh.assign(sh_values.begin() + i * shn, sh_values.begin() + (i + 1) * shn);
}

}  // namespace detail

/// Keyframe payload: meta, coded SH, raw attributes, raw MLP weights (added
/// when the stream is finalized).
inline FrameBitstream make_keyframe_record(const StreamMeta& meta, const GaussianFrameSet& set,
                                           const QuantizedTensor& sh_symbols) {
  FrameBitstream f;
  f.frame_type = kFrameKey;
  f.frame_index = 1;
  Block mb;
  mb.id = kBlockMeta;
  mb.raw = meta.serialize();
  f.blocks.push_back(std::move(mb));
  f.blocks.push_back(make_coded_block(kBlockCodedSh, encode_quantized(sh_symbols)));
  f.blocks.push_back(make_raw_block(kBlockRawAttrs, detail::pack_attrs(set)));
  return f;
}

/// Inter-frame payload: meta, coded grid, optional coded delta SH + raw delta
/// attributes.
inline FrameBitstream make_inter_record(uint32_t frame_index, const QuantizedTensor& grid_symbols,
                                        const GaussianFrameSet* delta,
                                        const QuantizedTensor* delta_sh) {
  FrameBitstream f;
  f.frame_type = kFrameInter;
  f.frame_index = frame_index;
  Block mb;
  mb.id = kBlockMeta;
  ByteWriter w;
  w.u32(delta ? static_cast<uint32_t>(delta->size()) : 0);
  w.u8(delta && delta->size() > 0 ? 1 : 0);
  mb.raw = w.take();
  f.blocks.push_back(std::move(mb));
  f.blocks.push_back(make_coded_block(kBlockCodedGrid, encode_quantized(grid_symbols)));
  if (delta && delta->size() > 0) {
    f.blocks.push_back(make_coded_block(kBlockCodedSh, encode_quantized(*delta_sh)));
    f.blocks.push_back(make_raw_block(kBlockRawAttrs, detail::pack_attrs(*delta)));
  }
  return f;
}

struct DecodedKeyframe {
  StreamMeta meta;
  GaussianFrameSet set;
  bool has_mlps = false;
  std::vector<float> mlp_weights;
};

inline DecodedKeyframe decode_keyframe(const FrameBitstream& record) {
  if (record.frame_type != kFrameKey) throw FormatError("not a keyframe record");
  DecodedKeyframe out;
  out.meta = StreamMeta::deserialize(record.require(kBlockMeta).raw);
  out.set.frame_index = static_cast<int>(record.frame_index);
  out.set.sh_degree = out.meta.sh_degree;
  out.set.primitives.resize(out.meta.prim_count);
  const auto attrs = raw_block_values(record.require(kBlockRawAttrs));
  detail::unpack_attrs(attrs, out.set);
  const auto& shb = record.require(kBlockCodedSh);
  const uint32_t sh_count =
      out.meta.prim_count * static_cast<uint32_t>(3 * sh_coeff_count(out.meta.sh_degree));
  const auto sh_values = decode_tensor(block_to_coded(shb, sh_count));
  detail::unpack_sh(sh_values, out.set, out.meta.sh_degree);
  if (const Block* mlp = record.find(kBlockRawMlp)) {
    out.has_mlps = true;
    out.mlp_weights = raw_block_values(*mlp);
  }
  return out;
}

struct DecodedInter {
  MotionGrid grid;
  GaussianFrameSet delta;  // may be empty
};

inline DecodedInter decode_inter(const FrameBitstream& record, const StreamMeta& meta) {
  if (record.frame_type != kFrameInter) throw FormatError("not an inter-frame record");
  DecodedInter out;
  ByteReader mr(std::span<const uint8_t>(record.require(kBlockMeta).raw));
  const uint32_t delta_count = mr.u32();
  const uint8_t flags = mr.u8();
  if (!mr.done()) throw FormatError("trailing bytes in inter meta");

  const auto& gb = record.require(kBlockCodedGrid);
  const auto grid_values =
      decode_tensor(block_to_coded(gb, static_cast<uint32_t>(meta.grid_flat_size())));
  out.grid = MotionGrid::make(meta.grid_res, meta.grid_channels, meta.bbox_min, meta.bbox_max);
  out.grid.load_flat(grid_values);

  out.delta.sh_degree = meta.sh_degree;
  out.delta.frame_index = static_cast<int>(record.frame_index);
  if (flags & 1) {
    out.delta.primitives.resize(delta_count);
    detail::unpack_attrs(raw_block_values(record.require(kBlockRawAttrs)), out.delta);
    const uint32_t sh_count =
        delta_count * static_cast<uint32_t>(3 * sh_coeff_count(meta.sh_degree));
    const auto sh_values = decode_tensor(block_to_coded(record.require(kBlockCodedSh), sh_count));
    detail::unpack_sh(sh_values, out.delta, meta.sh_degree);
  } else if (delta_count != 0) {
    throw FormatError("inter meta declares deltas but flag is clear");
  }
  return out;
}

/// G_hat_t = transformed previous frame plus decoded compensated set; replaces
/// the reference buffer content.
inline GaussianFrameSet reconstruct_frame(ReferenceBuffer& buffer, const MotionGrid& grid,
                                          const GaussianFrameSet& delta) {
  GaussianFrameSet out = apply_motion(buffer.frame, grid, buffer.mlps);
  out.primitives.insert(out.primitives.end(), delta.primitives.begin(), delta.primitives.end());
  buffer.frame = out;
  return out;
}

/// Applies one decoded frame record to the reference buffer (used identically
/// by the encoder and the decoder).
inline GaussianFrameSet decode_frame(const FrameBitstream& record, ReferenceBuffer& buffer,
                                     const StreamMeta& meta) {
  if (record.frame_type == kFrameKey) {
    auto dec = decode_keyframe(record);
    buffer.frame = dec.set;
    buffer.bbox_min = dec.meta.bbox_min;
    buffer.bbox_max = dec.meta.bbox_max;
    if (dec.has_mlps) {
      int total_channels = 0;
      for (int ch : dec.meta.grid_channels) total_channels += ch;
      buffer.mlps = MotionMlps(2 * total_channels, 0);
      buffer.mlps.from_f32(dec.mlp_weights);
      buffer.mlps_ready = true;
    }
    return buffer.frame;
  }
  auto dec = decode_inter(record, meta);
  const int expected = static_cast<int>(record.frame_index);
  if (expected != buffer.frame.frame_index + 1)
    throw FormatError("inter frame index does not follow the reference buffer");
  return reconstruct_frame(buffer, dec.grid, dec.delta);
}

// ---------------------------------------------------------------------------
// Training loops.

struct KeyframeResult {
  FrameBitstream record;
  GaussianFrameSet decoded;
  StreamMeta meta;
  double final_loss = 0;
};

inline KeyframeResult train_keyframe(const std::vector<Image>& images,
                                     const std::vector<Camera>& cameras,
                                     const GaussianFrameSet& init, const TrainConfig& cfg) {
  if (images.size() < 2 || images.size() != cameras.size())
    throw std::invalid_argument("train_keyframe: need at least 2 training views");
  if (init.primitives.empty()) throw std::invalid_argument("train_keyframe: empty init set");

  PrimParamSet params = PrimParamSet::from_set(init, "key");
  FactorizedEntropyModel model(3 * sh_coeff_count(init.sh_degree), derive_seed(cfg.seed, 0xe0));
  KeyframeEvaluator evaluator(&params, &model, &images, &cameras, &cfg);

  // scene extent scales the center learning rate (3DGS convention)
  Vec3 lo = init.primitives[0].center, hi = lo;
  for (const auto& g : init.primitives)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], g.center[k]);
      hi[k] = std::max(hi[k], g.center[k]);
    }
  const double extent = std::max(norm(hi - lo), 1e-3);

  AdamOptimizer opt;
  opt.add(&params.center, cfg.lr_center * extent);
  opt.add(&params.rotation, cfg.lr_rotation);
  opt.add(&params.log_scale, cfg.lr_log_scale);
  opt.add(&params.opacity_logit, cfg.lr_opacity);
  opt.add(&params.sh, cfg.lr_sh);
  for (auto* t : model.tensors()) opt.add(t, cfg.lr_entropy);

  Rng rng(derive_seed(cfg.seed, 0x1f, 1));
  double last_loss = 0;
  for (int it = 0; it < cfg.iters_keyframe; ++it) {
    const int view = static_cast<int>(rng.index(images.size()));
    const bool hard = it >= cfg.iters_keyframe - cfg.hard_tail;
    std::vector<double> noise;
    if (!hard) {
      noise.resize(params.sh.size());
      for (auto& u : noise) u = rng.uniform() - 0.5;
    }
    opt.zero_grads();
    const int views[1] = {view};
    last_loss = evaluator.eval(noise, views, true);
    if (!std::isfinite(last_loss))
      throw NumericalError("keyframe training diverged (" + cfg.describe() + ")");
    opt.step();
    model.invalidate_cache();
  }

  KeyframeResult out;
  out.final_loss = last_loss;
  // final hard symbols and the transmitted record
  const auto final_set = params.build(params.sh.value, 1);
  const auto sh_symbols = quantize_hard(params.sh.value, cfg.q_sh);

  StreamMeta meta;
  meta.prim_count = static_cast<uint32_t>(final_set.size());
  meta.sh_degree = init.sh_degree;
  meta.grid_res = cfg.grid_res;
  meta.grid_channels = cfg.grid_channels;
  // bounding box from the f32 decoded centers, dilated 10% per side
  {
    Vec3 bmin{1e30, 1e30, 1e30}, bmax{-1e30, -1e30, -1e30};
    for (const auto& g : final_set.primitives)
      for (int k = 0; k < 3; ++k) {
        const double c = static_cast<float>(g.center[k]);
        bmin[k] = std::min(bmin[k], c);
        bmax[k] = std::max(bmax[k], c);
      }
    for (int k = 0; k < 3; ++k) {
      double ext = bmax[k] - bmin[k];
      if (ext <= 0) ext = 1.0;
      bmin[k] -= 0.1 * ext;
      bmax[k] += 0.1 * ext;
    }
    meta.bbox_min = bmin;
    meta.bbox_max = bmax;
  }
  out.meta = meta;
  out.record = make_keyframe_record(meta, final_set, sh_symbols);
  out.decoded = decode_keyframe(out.record).set;
  out.meta = StreamMeta::deserialize(out.record.require(kBlockMeta).raw);  // f32-rounded bbox
  return out;
}

struct Stage1Result {
  QuantizedTensor grid_symbols;
  MotionGrid decoded_grid;
  GradientStats stats;
  double final_loss = 0;
};

inline Stage1Result train_stage1(ReferenceBuffer& buffer, const std::vector<Image>& images,
                                 const std::vector<Camera>& cameras, const TrainConfig& cfg,
                                 const StreamMeta& meta, uint32_t frame_index) {
  const bool train_mlps = !buffer.mlps_ready;
  ParamTensor grid_param("grid", {meta.grid_flat_size()});
  int total_channels = 0;
  for (int c : meta.grid_channels) total_channels += c;
  FactorizedEntropyModel model(total_channels, derive_seed(cfg.seed, 0xe1, frame_index));
  if (train_mlps && buffer.mlps.input_width() == 0)
    buffer.mlps = MotionMlps(2 * total_channels, derive_seed(cfg.seed, 0x31));

  Stage1Evaluator evaluator(&buffer.frame, &grid_param, &buffer.mlps, &model, &images, &cameras,
                            &cfg, meta);
  evaluator.train_mlps = train_mlps;

  AdamOptimizer opt;
  opt.add(&grid_param, cfg.lr_grid);
  for (auto* t : model.tensors()) opt.add(t, cfg.lr_entropy);
  if (train_mlps)
    for (auto* t : buffer.mlps.tensors()) opt.add(t, cfg.lr_mlp);

  Stage1Result out;
  out.stats = GradientStats(buffer.frame.size());
  Rng rng(derive_seed(cfg.seed, 0x51, frame_index));
  for (int it = 0; it < cfg.iters_stage1; ++it) {
    const int view = static_cast<int>(rng.index(images.size()));
    const bool hard = it >= cfg.iters_stage1 - cfg.hard_tail;
    std::vector<double> noise;
    if (!hard) {
      noise.resize(grid_param.size());
      for (auto& u : noise) u = rng.uniform() - 0.5;
    }
    opt.zero_grads();
    const int views[1] = {view};
    out.final_loss = evaluator.eval(noise, views, true);
    if (!std::isfinite(out.final_loss))
      throw NumericalError("stage-1 training diverged at frame " + std::to_string(frame_index) +
                           " (" + cfg.describe() + ")");
    out.stats.accumulate(evaluator.last_grad2d);
    opt.step();
    model.invalidate_cache();
  }

  out.grid_symbols = quantize_hard(grid_param.value, cfg.q_grid);
  out.decoded_grid = MotionGrid::make(meta.grid_res, meta.grid_channels, meta.bbox_min,
                                      meta.bbox_max);
  out.decoded_grid.load_flat(dequantize(out.grid_symbols));
  if (train_mlps) {
    buffer.mlps.round_to_f32();
    buffer.mlps_ready = true;
  }
  return out;
}

struct Stage2Result {
  GaussianFrameSet delta;  // final compensated primitives (post-prune)
  QuantizedTensor sh_symbols;
  std::vector<CloneKind> provenance;
  double final_loss = 0;
};

inline Stage2Result train_stage2(const ReferenceBuffer& buffer, const MotionGrid& decoded_grid,
                                 const GradientStats& stats, const std::vector<Image>& images,
                                 const std::vector<Camera>& cameras, const TrainConfig& cfg,
                                 uint32_t frame_index) {
  Stage2Result out;
  out.delta.sh_degree = buffer.frame.sh_degree;
  out.delta.frame_index = static_cast<int>(frame_index);
  if (!cfg.enable_compensation) return out;

  const GaussianFrameSet transformed = apply_motion(buffer.frame, decoded_grid, buffer.mlps);

  // suboptimal-region selection
  const auto averages = stats.averages();
  const auto grad_idx = select_gradient_clones(averages, cfg.tau_g);
  std::vector<MotionSample> motions(buffer.frame.size());
  std::vector<Vec3> scales(buffer.frame.size());
  for (size_t i = 0; i < buffer.frame.size(); ++i) {
    motions[i] = predict_motion(buffer.frame.primitives[i].center, decoded_grid, buffer.mlps);
    scales[i] = buffer.frame.primitives[i].log_scale;
  }
  const auto motion_idx =
      select_motion_clones(motions, scales, cfg.tau_mu, cfg.tau_r, cfg.scale_floor);

  // candidate order: gradient clones by descending stat, then motion clones
  std::vector<std::pair<CloneKind, size_t>> candidates;
  {
    auto sorted = grad_idx;
    std::sort(sorted.begin(), sorted.end(), [&](size_t a, size_t b) {
      if (averages[a] != averages[b]) return averages[a] > averages[b];
      return a < b;
    });
    for (size_t i : sorted) candidates.emplace_back(CloneKind::gradient, i);
    for (size_t i : motion_idx) candidates.emplace_back(CloneKind::motion, i);
  }
  if (candidates.empty()) return out;

  const size_t cap = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(cfg.clone_cap_frac * buffer.frame.size())));
  CompensatedSet comp;
  for (const auto& [kind, idx] : candidates) {
    if (comp.size() >= cap) break;
    Rng rng(derive_seed(cfg.seed ^ (static_cast<uint64_t>(frame_index) << 20), 0x5a, idx));
    auto clones = spawn_compensated(buffer.frame.primitives[idx], kind, rng);
    for (auto& c : clones) {
      comp.primitives.push_back(std::move(c));
      comp.provenance.push_back(kind);
    }
  }

  GaussianFrameSet init;
  init.sh_degree = buffer.frame.sh_degree;
  init.frame_index = static_cast<int>(frame_index);
  init.primitives = comp.primitives;
  PrimParamSet params = PrimParamSet::from_set(init, "delta");
  FactorizedEntropyModel model(3 * sh_coeff_count(init.sh_degree),
                               derive_seed(cfg.seed, 0xe2, frame_index));
  Stage2Evaluator evaluator(&transformed, &params, &model, &images, &cameras, &cfg);

  Vec3 lo = buffer.bbox_min, hi = buffer.bbox_max;
  const double extent = std::max(norm(hi - lo), 1e-3);
  AdamOptimizer opt;
  opt.add(&params.center, cfg.lr_center * extent);
  opt.add(&params.rotation, cfg.lr_rotation);
  opt.add(&params.log_scale, cfg.lr_log_scale);
  opt.add(&params.opacity_logit, cfg.lr_opacity);
  opt.add(&params.sh, cfg.lr_sh);
  for (auto* t : model.tensors()) opt.add(t, cfg.lr_entropy);

  Rng rng(derive_seed(cfg.seed, 0x52, frame_index));
  for (int it = 0; it < cfg.iters_stage2; ++it) {
    const int view = static_cast<int>(rng.index(images.size()));
    const bool hard = it >= cfg.iters_stage2 - cfg.hard_tail;
    std::vector<double> noise;
    if (!hard) {
      noise.resize(params.sh.size());
      for (auto& u : noise) u = rng.uniform() - 0.5;
    }
    opt.zero_grads();
    const int views[1] = {view};
    out.final_loss = evaluator.eval(noise, views, true);
    if (!std::isfinite(out.final_loss))
      throw NumericalError("stage-2 training diverged at frame " + std::to_string(frame_index) +
                           " (" + cfg.describe() + ")");
    opt.step();
    model.invalidate_cache();
  }

  // prune, then freeze the survivors' final values
  CompensatedSet trained;
  const auto trained_set = params.build(params.sh.value, static_cast<int>(frame_index));
  trained.primitives = trained_set.primitives;
  trained.provenance = comp.provenance;
  const CompensatedSet survivors = prune_low_opacity(trained, cfg.prune_opacity);
  out.delta.primitives = survivors.primitives;
  out.provenance = survivors.provenance;
  if (!out.delta.primitives.empty()) {
    std::vector<double> sh_flat;
    for (const auto& g : out.delta.primitives)
      sh_flat.insert(sh_flat.end(), g.sh.begin(), g.sh.end());
    out.sh_symbols = quantize_hard(sh_flat, cfg.q_sh);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence-level orchestration shared by the CLI and the tests.

struct SequenceEncoder {
  TrainConfig cfg;
  StreamMeta meta;
  ReferenceBuffer buffer;
  std::vector<FrameBitstream> frames;

  /// Trains and encodes the keyframe from the initial primitive set.
  static SequenceEncoder start(const std::vector<Image>& images,
                               const std::vector<Camera>& cameras, const GaussianFrameSet& init,
                               const TrainConfig& cfg) {
    SequenceEncoder enc;
    enc.cfg = cfg;
    auto key = train_keyframe(images, cameras, init, cfg);
    enc.meta = key.meta;
    enc.frames.push_back(std::move(key.record));
    enc.buffer.frame = key.decoded;
    enc.buffer.bbox_min = enc.meta.bbox_min;
    enc.buffer.bbox_max = enc.meta.bbox_max;
    return enc;
  }

  /// Runs stage 1 + stage 2 on the next frame and appends its record. The
  /// reference buffer advances by decoding the freshly encoded record, the
  /// same path the decoder runs.
  void add_frame(const std::vector<Image>& images, const std::vector<Camera>& cameras) {
    const uint32_t frame_index = static_cast<uint32_t>(buffer.frame.frame_index + 1);
    auto s1 = train_stage1(buffer, images, cameras, cfg, meta, frame_index);
    auto s2 = train_stage2(buffer, s1.decoded_grid, s1.stats, images, cameras, cfg, frame_index);
    FrameBitstream record = make_inter_record(
        frame_index, s1.grid_symbols, s2.delta.primitives.empty() ? nullptr : &s2.delta,
        s2.delta.primitives.empty() ? nullptr : &s2.sh_symbols);
    // round-trip through the serialized bytes before reconstructing
    const auto bytes = serialize_frame(record);
    size_t pos = 0;
    const FrameBitstream replay = parse_frame(bytes, pos);
    decode_frame(replay, buffer, meta);
    frames.push_back(std::move(record));
  }

  /// Injects the trained MLP weights into the keyframe record and writes the
  /// stream. Returns total bytes.
  size_t finalize(const std::string& path) {
    if (buffer.mlps_ready && !frames.empty() && !frames.front().find(kBlockRawMlp)) {
      const auto w = buffer.mlps.to_f32();
      frames.front().blocks.push_back(make_raw_block(kBlockRawMlp, w));
    }
    return write_stream(frames, path);
  }
};

struct SequenceDecoder {
  StreamMeta meta;
  ReferenceBuffer buffer;
  std::vector<GaussianFrameSet> decoded;

  static SequenceDecoder run(const std::vector<FrameBitstream>& frames) {
    SequenceDecoder dec;
    if (frames.empty() || frames.front().frame_type != kFrameKey)
      throw FormatError("stream must start with a keyframe");
    dec.meta = StreamMeta::deserialize(frames.front().require(kBlockMeta).raw);
    for (const auto& f : frames) dec.decoded.push_back(decode_frame(f, dec.buffer, dec.meta));
    return dec;
  }
};

}  // namespace fourdgc
