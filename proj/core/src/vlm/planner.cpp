#include "stpi/vlm/planner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stpi/nn/fourier.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::vlm {

using nn::Tensor;
using nn::Var;

namespace {

constexpr std::size_t kObjectSlots = 6;
constexpr double kEmbedStd = 0.1;
constexpr double kMaxDuration = 60.0;

Var param_normal(nn::ParameterSet& ps, const std::string& path, nn::Shape shape, nn::Rng& rng, double std) {
  return ps.add(path, rng.normal_tensor(shape, std));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Grid2D: return "2D";
    case Modality::Geometry3D: return "3D";
    case Modality::Full4D: return "4D";
  }
  return "?";
}

std::optional<Modality> parse_modality(const std::string& s) {
  for (Modality m : {Modality::Grid2D, Modality::Geometry3D, Modality::Full4D})
    if (modality_name(m) == s) return m;
  return std::nullopt;
}

std::string mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::None: return "none";
    case MaskMode::Bidirectional: return "bidirectional";
    case MaskMode::Causal: return "causal";
  }
  return "?";
}

std::optional<MaskMode> parse_mask_mode(const std::string& s) {
  for (MaskMode m : {MaskMode::None, MaskMode::Bidirectional, MaskMode::Causal})
    if (mask_mode_name(m) == s) return m;
  return std::nullopt;
}

void PlannerConfig::validate() const {
  if (horizon < 1 || semantic_tokens < 1 || window < 1) throw std::invalid_argument("planner: K, M and W must be >= 1");
  if (horizon > max_horizon) throw std::invalid_argument("planner: horizon exceeds max_horizon");
  if (heads == 0 || d_model % heads != 0) throw std::invalid_argument("planner: heads must divide d_model");
  if (fourier < 1) throw std::invalid_argument("planner: fourier must be >= 1");
  if (window_stride < 1) throw std::invalid_argument("planner: window_stride must be >= 1");
  if (!(time_span > 0.0)) throw std::invalid_argument("planner: time_span must be positive");
}

nn::AttentionMask build_block_causal_mask(std::size_t context_len, std::size_t K, std::size_t M, MaskMode mode) {
  const std::size_t block = M + 2;
  const std::size_t n = context_len + K * block;
  nn::AttentionMask mask(n, n, false);
  mask.set_block(0, context_len, 0, context_len, true);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t base = context_len + k * block;
    for (std::size_t r = base; r < base + block; ++r) {
      mask.set_block(r, r + 1, 0, context_len, true);
      mask.set_block(r, r + 1, base, base + M, true);  // own semantic tokens
      if (r >= base + M) mask.set(r, r, true);
      for (std::size_t j = 0; j < K; ++j) {
        const bool visible = mode == MaskMode::Bidirectional ? j != k : (mode == MaskMode::Causal && j < k);
        if (visible) {
          const std::size_t other = context_len + j * block;
          mask.set_block(r, r + 1, other, other + block, true);
        }
      }
      if (mode == MaskMode::Bidirectional) mask.set_block(r, r + 1, base, base + block, true);
    }
  }
  return mask;
}

std::vector<world::RawObservation> observation_window(const std::vector<world::RawObservation>& history,
                                                      std::size_t current, std::size_t frames, std::size_t stride) {
  if (history.empty() || current >= history.size()) throw std::invalid_argument("observation_window: bad index");
  constexpr double kNominalDt = 0.1;
  std::vector<world::RawObservation> out;
  for (std::size_t j = frames; j-- > 0;) {
    const std::size_t back = j * stride;
    if (back <= current) {
      out.push_back(history[current - back]);
    } else {
      world::RawObservation o = history.front();
      o.t = history.front().t - static_cast<double>(back - current) * kNominalDt;
      out.push_back(std::move(o));
    }
  }
  return out;
}

Planner::Planner(nn::ParameterSet& ps, const PlannerConfig& cfg, nn::Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, V = world::kVocabSize;
  const std::string p = prefix_;
  patch_ = nn::Linear::create(ps, p + ".vision.patch", kPatchRows * kPatchCols, d, rng);
  patch_pos_ = param_normal(ps, p + ".vision.pos", {kTokensPerFrame, d}, rng, kEmbedStd);
  obj_fc1_ = nn::Linear::create(ps, p + ".geometry.encoder.obj1", world::kGeometryDims, d, rng);
  obj_fc2_ = nn::Linear::create(ps, p + ".geometry.encoder.obj2", d, d, rng);
  proprio_fc_ = nn::Linear::create(ps, p + ".geometry.encoder.proprio", world::kProprioDims, d, rng);
  adapter_ = nn::Linear::create(ps, p + ".geometry.adapter", d, d, rng);
  fusion_ = nn::Linear::create(ps, p + ".fusion.wf", 2 * d + 2 * cfg_.fourier, d, rng);

  token_embed_ = param_normal(ps, p + ".embed.token", {V, d}, rng, kEmbedStd);
  instr_pos_ = param_normal(ps, p + ".embed.instr_pos", {world::kMaxInstruction, d}, rng, kEmbedStd);
  history_pos_ = param_normal(ps, p + ".embed.history_pos", {std::max<std::size_t>(cfg_.history, 1), d}, rng, kEmbedStd);

  q_semantic_ = param_normal(ps, p + ".query.semantic", {cfg_.semantic_tokens, d}, rng, kEmbedStd);
  q_spatial_ = param_normal(ps, p + ".query.spatial", {1, d}, rng, kEmbedStd);
  q_temporal_ = param_normal(ps, p + ".query.temporal", {1, d}, rng, kEmbedStd);
  q_prompt_pos_ = param_normal(ps, p + ".query.prompt_pos", {cfg_.max_horizon, d}, rng, kEmbedStd);

  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const std::string bp = p + ".backbone." + std::to_string(i);
    blocks_.push_back(nn::TransformerBlock::create(ps, bp, d, cfg_.heads, cfg_.mlp_ratio, rng));
    if (cfg_.lora_rank > 0) blocks_.back().attach_lora(ps, bp, cfg_.lora_rank, rng);
  }
  ln_f_ = nn::LayerNorm::create(ps, p + ".backbone.ln_f", d);

  head_language_ = nn::Linear::create(ps, p + ".head.language", cfg_.semantic_tokens * d, world::kMaxDescription * V, rng);
  head_spatial_ = nn::Linear::create(ps, p + ".head.spatial", d, 6, rng, 0.1);
  pointer_q_ = nn::Linear::create(ps, p + ".head.spatial.pointer_q", d, d, rng);
  pointer_k_ = nn::Linear::create(ps, p + ".head.spatial.pointer_k", d, d, rng);
  head_temporal_ = nn::Linear::create(ps, p + ".head.temporal", d, 1, rng, 0.1);

  // centre = pointer + residual; extent regressed directly
  box_scale_ = Var(Tensor({1, 6}, std::vector<double>{0.2, 0.2, 0.1, 0.05, 0.05, 0.05}));
  box_offset_ = Var(Tensor({1, 6}, std::vector<double>{0.0, 0.0, 0.0, 0.05, 0.05, 0.05}));
}

Observation4D Planner::encode_4d(const std::vector<world::RawObservation>& window) const {
  const std::size_t W = cfg_.frames(), P = kTokensPerFrame, d = cfg_.d_model;
  if (window.size() != W)
    throw std::invalid_argument("encode_4d: window has " + std::to_string(window.size()) + " frames, expected " +
                                std::to_string(W));
  for (std::size_t i = 1; i < window.size(); ++i)
    if (!(window[i].t > window[i - 1].t)) throw std::invalid_argument("encode_4d: timestamps must strictly increase");

  const std::size_t pixels = kPatchRows * kPatchCols;
  Tensor patches({W * P, pixels}, 0.0);
  Tensor objects({W * kObjectSlots, world::kGeometryDims}, 0.0);
  Tensor proprio({W, world::kProprioDims}, 0.0);
  Tensor phi({W * P, 2 * cfg_.fourier}, 0.0);
  const double t_now = window.back().t;
  for (std::size_t f = 0; f < W; ++f) {
    const auto& o = window[f];
    const std::size_t g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(o.grid.size()))));
    if (g * g != o.grid.size() || g % kPatchRows != 0 || g % kPatchCols != 0 || (g / kPatchRows) * (g / kPatchCols) != P)
      throw std::invalid_argument("encode_4d: grid size incompatible with patch layout");
    std::size_t patch = 0;
    for (std::size_t br = 0; br < g / kPatchRows; ++br)
      for (std::size_t bc = 0; bc < g / kPatchCols; ++bc, ++patch)
        for (std::size_t r = 0; r < kPatchRows; ++r)
          for (std::size_t c = 0; c < kPatchCols; ++c)
            patches.at(f * P + patch, r * kPatchCols + c) = o.grid[(br * kPatchRows + r) * g + bc * kPatchCols + c];
    if (o.geometry.size() != kObjectSlots * world::kGeometryDims || o.proprio.size() != world::kProprioDims)
      throw std::invalid_argument("encode_4d: geometry/proprio length mismatch");
    std::copy(o.geometry.begin(), o.geometry.end(), objects.data() + f * kObjectSlots * world::kGeometryDims);
    std::copy(o.proprio.begin(), o.proprio.end(), proprio.data() + f * world::kProprioDims);
    const double tn = std::clamp(1.0 + (o.t - t_now) / cfg_.time_span, 0.0, 1.0);
    const auto enc = nn::fourier_encode(tn, cfg_.fourier);
    for (std::size_t i = 0; i < P; ++i) std::copy(enc.begin(), enc.end(), phi.data() + (f * P + i) * 2 * cfg_.fourier);
  }

  std::vector<std::size_t> pos_idx(W * P);
  for (std::size_t i = 0; i < W * P; ++i) pos_idx[i] = i % P;
  const Var fv = nn::gelu(nn::add(patch_(Var(patches)), nn::gather_rows(patch_pos_, pos_idx)));

  Var fg;
  if (cfg_.modality == Modality::Grid2D) {
    fg = Var(Tensor({W * P, d}, 0.0));
  } else {
    const Var ho = nn::gelu(obj_fc2_(nn::gelu(obj_fc1_(Var(objects)))));
    const Var hp = nn::gelu(proprio_fc_(Var(proprio)));
    const Var empty(Tensor({1, d}, 0.0));
    std::vector<Var> rows;
    for (std::size_t f = 0; f < W; ++f) {
      rows.push_back(nn::slice_rows(ho, f * kObjectSlots, (f + 1) * kObjectSlots));
      rows.push_back(nn::slice_rows(hp, f, f + 1));
      rows.push_back(empty);
    }
    fg = adapter_(nn::concat_rows(rows));
  }

  Observation4D out;
  out.anchors = Tensor({P, 3}, 0.0);
  const auto& last = window.back();
  if (cfg_.modality == Modality::Grid2D) {
    const world::WorldConfig wc;
    const std::size_t g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(last.grid.size()))));
    const std::size_t bcols = g / kPatchCols;
    for (std::size_t i = 0; i < P; ++i) {
      const double cx = (static_cast<double>((i % bcols) * kPatchCols) + kPatchCols / 2.0) / static_cast<double>(g);
      const double cy = (static_cast<double>((i / bcols) * kPatchRows) + kPatchRows / 2.0) / static_cast<double>(g);
      out.anchors.at(i, 0) = wc.workspace_min.x + cx * (wc.workspace_max.x - wc.workspace_min.x);
      out.anchors.at(i, 1) = wc.workspace_min.y + cy * (wc.workspace_max.y - wc.workspace_min.y);
    }
  } else {
    for (std::size_t i = 0; i < kObjectSlots; ++i)
      for (std::size_t c = 0; c < 3; ++c) out.anchors.at(i, c) = last.geometry[i * world::kGeometryDims + c];
    for (std::size_t c = 0; c < 3; ++c) out.anchors.at(kObjectSlots, c) = last.proprio[c];
  }
  out.tokens = fusion_(nn::concat_cols({fv, fg, Var(phi)}));
  out.frames = W;
  for (const auto& o : window) out.timestamps.push_back(o.t);
  return out;
}

Var Planner::history_token(const std::vector<int>& description, std::size_t slot) const {
  std::vector<std::size_t> ids;
  for (int t : description)
    if (t != world::tok::Pad) ids.push_back(static_cast<std::size_t>(t));
  if (ids.empty()) ids.push_back(static_cast<std::size_t>(world::tok::Eos));
  const Var rows = nn::gather_rows(token_embed_, ids);
  const Var avg(Tensor({1, ids.size()}, 1.0 / static_cast<double>(ids.size())));
  return nn::add(nn::matmul(avg, rows), nn::slice_rows(history_pos_, slot, slot + 1));
}

Var Planner::context_tokens(const Observation4D& obs, const std::vector<int>& instruction,
                            const std::vector<std::vector<int>>& history) const {
  if (instruction.empty() || instruction.size() > world::kMaxInstruction)
    throw std::invalid_argument("planner: instruction length out of range");
  std::vector<std::size_t> ids;
  for (int t : instruction) {
    if (t < 0 || t >= static_cast<int>(world::kVocabSize)) throw std::invalid_argument("planner: token out of vocabulary");
    ids.push_back(static_cast<std::size_t>(t));
  }
  std::vector<Var> parts{obs.tokens,
                         nn::add(nn::gather_rows(token_embed_, ids), nn::gather_rows(instr_pos_, iota(ids.size())))};
  const std::size_t keep = std::min(history.size(), cfg_.history);
  for (std::size_t i = 0; i < keep; ++i) parts.push_back(history_token(history[history.size() - keep + i], i));
  return nn::concat_rows(parts);
}

Var Planner::prompt_inputs(std::size_t K) const {
  if (K < 1 || K > cfg_.max_horizon) throw std::invalid_argument("planner: K out of range");
  std::vector<Var> parts;
  for (std::size_t k = 0; k < K; ++k) {
    const Var pos = nn::slice_rows(q_prompt_pos_, k, k + 1);
    parts.push_back(nn::add_row(q_semantic_, pos));
    parts.push_back(nn::add_row(q_spatial_, pos));
    parts.push_back(nn::add_row(q_temporal_, pos));
  }
  return nn::concat_rows(parts);
}

PlannerOutput Planner::run(const Var& context, const Var& prompts, std::size_t K, const Tensor* anchors,
                           std::size_t anchor_row) const {
  const std::size_t M = cfg_.semantic_tokens, d = cfg_.d_model, P = kTokensPerFrame;
  if (prompts.rows() != K * (M + 2)) throw std::invalid_argument("planner: prompt input rows mismatch");
  if (anchors && (anchors->rows() != P || anchors->cols() != 3 || anchor_row + P > context.rows()))
    throw std::invalid_argument("planner: anchors do not match the context");
  const std::size_t ctx = context.rows();
  const auto mask = build_block_causal_mask(ctx, K, M, cfg_.mask);
  Var x = nn::concat_rows({context, prompts});
  for (const auto& b : blocks_) x = b(x, mask);
  x = ln_f_(x);

  Var keys, values;
  Tensor pick({d, 3}, 0.0);
  if (anchors) {
    keys = pointer_k_(nn::slice_rows(x, anchor_row, anchor_row + P));
    Tensor padded({P, d}, 0.0);
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t c = 0; c < 3; ++c) padded.at(i, c) = anchors->at(i, c);
    values = Var(padded);
    for (std::size_t c = 0; c < 3; ++c) pick.at(c, c) = 1.0;
  }
  const nn::AttentionMask open(1, P, true);
  const Var centre_only(Tensor({3, 6}, std::vector<double>{1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0}));

  PlannerOutput out;
  out.context_len = ctx;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t base = ctx + k * (M + 2);
    PromptOutput p;
    p.semantic = nn::slice_rows(x, base, base + M);
    p.spatial = nn::slice_rows(x, base + M, base + M + 1);
    p.temporal = nn::slice_rows(x, base + M + 1, base + M + 2);
    p.logits = nn::reshape(head_language_(nn::reshape(p.semantic, {1, M * d})), {world::kMaxDescription, world::kVocabSize});
    p.box = nn::add(nn::mul(head_spatial_(p.spatial), box_scale_), box_offset_);
    if (anchors) {
      const Var attended = nn::masked_attention(pointer_q_(p.spatial), keys, values, open, 1);
      p.box = nn::add(p.box, nn::matmul(nn::matmul(attended, Var(pick)), centre_only));
    }
    p.duration = nn::softplus(head_temporal_(p.temporal));
    out.prompts.push_back(std::move(p));
  }
  return out;
}

PlannerOutput Planner::forward(const Observation4D& obs, const std::vector<int>& instruction,
                               const std::vector<std::vector<int>>& history, std::size_t K) const {
  const std::size_t anchor_row = (obs.frames - 1) * kTokensPerFrame;
  return run(context_tokens(obs, instruction, history), prompt_inputs(K), K,
             obs.anchors.size() ? &obs.anchors : nullptr, anchor_row);
}

world::Box decode_box(const Tensor& raw, const world::WorldConfig& wc) {
  if (raw.size() != 6) throw std::invalid_argument("decode_box: need 6 values");
  world::Box b = world::Box::from_flat(raw.data());
  b.center = {std::clamp(b.center.x, wc.workspace_min.x, wc.workspace_max.x),
              std::clamp(b.center.y, wc.workspace_min.y, wc.workspace_max.y),
              std::clamp(b.center.z, wc.workspace_min.z, wc.workspace_max.z)};
  const world::Vec3 span = wc.workspace_max - wc.workspace_min;
  b.extent = {std::clamp(b.extent.x, 0.005, span.x), std::clamp(b.extent.y, 0.005, span.y),
              std::clamp(b.extent.z, 0.005, span.z)};
  return b;
}

double decode_duration(double raw, const world::WorldConfig& wc) { return std::clamp(raw, wc.dt_min, kMaxDuration); }

std::vector<ActionPrompt> Planner::decode(const PlannerOutput& out, nn::Rng* rng) const {
  std::vector<ActionPrompt> prompts;
  for (std::size_t k = 0; k < out.prompts.size(); ++k) {
    const PromptOutput& p = out.prompts[k];
    ActionPrompt a;
    a.index = k;
    a.semantic = p.semantic.value();
    a.spatial = p.spatial.value();
    a.temporal = p.temporal.value();
    const Tensor& lg = p.logits.value();
    for (std::size_t pos = 0; pos < world::kMaxDescription; ++pos) {
      std::size_t best = 0;
      if (cfg_.temperature > 0.0 && rng) {
        double mx = lg.at(pos, 0);
        for (std::size_t v = 1; v < world::kVocabSize; ++v) mx = std::max(mx, lg.at(pos, v));
        std::vector<double> w(world::kVocabSize);
        double z = 0.0;
        for (std::size_t v = 0; v < world::kVocabSize; ++v) z += (w[v] = std::exp((lg.at(pos, v) - mx) / cfg_.temperature));
        double u = rng->uniform(0.0, z);
        best = world::kVocabSize - 1;
        for (std::size_t v = 0; v < world::kVocabSize; ++v) {
          if (u < w[v]) {
            best = v;
            break;
          }
          u -= w[v];
        }
      } else {
        for (std::size_t v = 1; v < world::kVocabSize; ++v)
          if (lg.at(pos, v) > lg.at(pos, best)) best = v;
      }
      a.description.push_back(static_cast<int>(best));
      if (static_cast<int>(best) == world::tok::Eos) break;
    }
    a.truncated = a.description.empty() || a.description.back() != world::tok::Eos;
    a.box = decode_box(p.box.value());
    a.duration = decode_duration(p.duration.value().item());
    prompts.push_back(std::move(a));
  }
  return prompts;
}

std::vector<ActionPrompt> Planner::plan(const Observation4D& obs, const std::vector<int>& instruction,
                                        const std::vector<std::vector<int>>& history, nn::Rng* rng) const {
  nn::NoGradGuard guard;
  return decode(forward(obs, instruction, history, cfg_.horizon), rng);
}

}  // namespace stpi::vlm
