#include "stpi/ae/expert.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "stpi/nn/autodiff.hpp"
#include "stpi/nn/fourier.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/world/dynamics.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::ae {

using nn::Tensor;
using nn::Var;

namespace {

constexpr double kTimeScale = 1.0;     // seconds -> timing token units
constexpr double kOffsetScale = 0.2;  // metres, box centre relative to the gripper
constexpr double kExtentScale = 0.05;
constexpr double kReachScale = 0.05;   // offset capped to one step length
constexpr std::size_t kBoxFeatures = 9;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape " + nn::shape_string(a.shape()) + " vs " +
                                nn::shape_string(b.shape()));
}

double frobenius(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

std::string generator_mode_name(GeneratorMode m) { return m == GeneratorMode::Dual ? "dual" : "single"; }
std::optional<GeneratorMode> parse_generator_mode(const std::string& s) {
  if (s == "dual") return GeneratorMode::Dual;
  if (s == "single") return GeneratorMode::Single;
  return std::nullopt;
}

std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Linear: return "linear";
    case FusionMode::SpatialOnly: return "spatial";
    case FusionMode::TemporalOnly: return "temporal";
  }
  return "?";
}
std::optional<FusionMode> parse_fusion_mode(const std::string& s) {
  for (FusionMode m : {FusionMode::Linear, FusionMode::SpatialOnly, FusionMode::TemporalOnly})
    if (fusion_mode_name(m) == s) return m;
  return std::nullopt;
}

std::string conditioning_name(Conditioning c) { return c == Conditioning::Prompt ? "prompt" : "instruction"; }
std::optional<Conditioning> parse_conditioning(const std::string& s) {
  if (s == "prompt") return Conditioning::Prompt;
  if (s == "instruction") return Conditioning::Instruction;
  return std::nullopt;
}

void ExpertConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("expert: horizon must be >= 1");
  if (denoise_steps < 1) throw std::invalid_argument("expert: denoise_steps must be >= 1");
  if (heads == 0 || d_model % heads != 0) throw std::invalid_argument("expert: heads must divide d_model");
  if (semantic_tokens < 1 || planner_d < 1 || fourier < 1) throw std::invalid_argument("expert: bad dimensions");
}

Var latest_frame(const vlm::Observation4D& obs) {
  const std::size_t P = vlm::kTokensPerFrame;
  if (obs.tokens.rows() < P) throw std::invalid_argument("latest_frame: observation has no frames");
  return nn::slice_rows(obs.tokens, obs.tokens.rows() - P, obs.tokens.rows());
}

Condition make_condition(const vlm::Observation4D& obs, const vlm::ActionPrompt& prompt,
                         const std::vector<double>& proprio, double elapsed, const std::vector<int>& instruction) {
  Condition c;
  c.frame = latest_frame(obs);
  c.semantic = Var(prompt.semantic);
  c.spatial = Var(prompt.spatial);
  c.temporal = Var(prompt.temporal);
  c.box = prompt.box;
  c.duration = prompt.duration;
  c.elapsed = elapsed;
  c.proprio = proprio;
  c.instruction = instruction;
  return c;
}

std::pair<nn::AttentionMask, nn::AttentionMask> build_action_masks(std::size_t H, std::size_t cond_len) {
  if (H < 1) throw std::invalid_argument("build_action_masks: H must be >= 1");
  const std::size_t n = cond_len + H;
  nn::AttentionMask spatial(n, n, false);
  spatial.set_block(0, cond_len, 0, cond_len, true);
  spatial.set_block(cond_len, n, 0, n, true);
  nn::AttentionMask temporal(n, n, false);
  temporal.set_block(0, cond_len, 0, cond_len, true);
  for (std::size_t i = 0; i < H; ++i) temporal.set_block(cond_len + i, cond_len + i + 1, 0, cond_len + i + 1, true);
  return {spatial, temporal};
}

Tensor fuse_flows(const Tensor& v_s, const Tensor& v_t, double tau, double T) {
  require_same_shape(v_s, v_t, "fuse_flows");
  if (!(T > 0.0) || !(tau >= 0.0 && tau <= T)) throw std::invalid_argument("fuse_flows: tau must lie in [0, T]");
  const double alpha = tau / T;
  Tensor out(v_s.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * v_t[i] + (1.0 - alpha) * v_s[i];
  return out;
}

FlowPair fm_pair(const Tensor& a_star, double tau, const Tensor& omega) {
  require_same_shape(a_star, omega, "fm_pair");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("fm_pair: tau must lie in [0, 1]");
  FlowPair p{Tensor(a_star.shape()), Tensor(a_star.shape()), omega, tau};
  for (std::size_t i = 0; i < a_star.size(); ++i) {
    p.noisy[i] = tau * a_star[i] + (1.0 - tau) * omega[i];
    p.target[i] = a_star[i] - omega[i];
  }
  return p;
}

Var ae_loss(const Var& v_pred, const Tensor& u) {
  require_same_shape(v_pred.value(), u, "ae_loss");
  return nn::mse_loss(v_pred, u);
}

void write_sampler_trace(const std::filesystem::path& path, const std::vector<SamplerTraceRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tau_index,alpha,norm_spatial,norm_temporal\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.tau_index << ',' << r.alpha << ',' << r.norm_spatial << ',' << r.norm_temporal << '\n';
}

Tensor integrate_flow(Tensor a, std::size_t T, const FlowFn& flow, FusionMode fusion,
                      std::vector<SamplerTraceRow>* trace) {
  if (T < 1) throw std::invalid_argument("integrate_flow: T must be >= 1");
  const double dtau = 1.0 / static_cast<double>(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double alpha = static_cast<double>(i) / static_cast<double>(T);
    Tensor v;
    SamplerTraceRow row{i, alpha, 0.0, 0.0};
    if (fusion == FusionMode::SpatialOnly) {
      v = flow(Branch::Spatial, a, i);
      row.norm_spatial = frobenius(v);
    } else if (fusion == FusionMode::TemporalOnly) {
      v = flow(Branch::Temporal, a, i);
      row.norm_temporal = frobenius(v);
    } else {
      const Tensor vs = flow(Branch::Spatial, a, i);
      const Tensor vt = flow(Branch::Temporal, a, i);
      row.norm_spatial = frobenius(vs);
      row.norm_temporal = frobenius(vt);
      v = fuse_flows(vs, vt, static_cast<double>(i), static_cast<double>(T));
    }
    require_same_shape(v, a, "integrate_flow");
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += v[j] * dtau;
    if (!nn::all_finite(a)) throw nn::NonFiniteError("sample_chunk: non-finite state at tau index " + std::to_string(i));
    if (trace) trace->push_back(row);
  }
  return a;
}

ActionExpert::ActionExpert(nn::ParameterSet& ps, const ExpertConfig& cfg, nn::Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, pd = cfg_.planner_d;
  const std::string p = prefix_;
  frame_proj_ = nn::Linear::create(ps, p + ".cond.frame", pd, d, rng);
  semantic_proj_ = nn::Linear::create(ps, p + ".cond.semantic", pd, d, rng);
  spatial_proj_ = nn::Linear::create(ps, p + ".cond.spatial", pd, d, rng);
  box_proj_ = nn::Linear::create(ps, p + ".cond.box", kBoxFeatures, d, rng);
  temporal_proj_ = nn::Linear::create(ps, p + ".cond.temporal", pd, d, rng);
  timing_proj_ = nn::Linear::create(ps, p + ".cond.timing", 3, d, rng);
  state_proj_ = nn::Linear::create(ps, p + ".cond.state", world::kProprioDims, d, rng);
  instr_embed_ = ps.add(p + ".cond.instr_embed", rng.normal_tensor({world::kVocabSize, d}, 0.1));
  instr_pos_ = ps.add(p + ".cond.instr_pos", rng.normal_tensor({world::kMaxInstruction, d}, 0.1));
  action_in_ = nn::Linear::create(ps, p + ".action.in", world::kActionDim, d, rng);
  time_in_ = nn::Linear::create(ps, p + ".action.time", 2 * cfg_.fourier, d, rng);
  step_pos_ = ps.add(p + ".action.pos", rng.normal_tensor({cfg_.horizon, d}, 0.1));
  for (std::size_t i = 0; i < cfg_.layers; ++i)
    blocks_.push_back(nn::TransformerBlock::create(ps, p + ".backbone." + std::to_string(i), d, cfg_.heads,
                                                   cfg_.mlp_ratio, rng));
  ln_f_ = nn::LayerNorm::create(ps, p + ".backbone.ln_f", d);
  out_ = nn::Linear::create(ps, p + ".head.flow", d, world::kActionDim, rng, 0.5);
  norm_mean_ = ps.add_buffer(p + ".norm.mean", Tensor({world::kActionDim}, 0.0));
  norm_scale_ = ps.add_buffer(p + ".norm.scale", Tensor({world::kActionDim}, 1.0));
}

Var ActionExpert::branch_token(Branch branch, const Condition& c) const {
  const std::size_t pd = cfg_.planner_d;
  if (cfg_.conditioning == Conditioning::Instruction) {
    // no prompts: the branch slot carries only its learned bias
    if (branch == Branch::Spatial)
      return nn::add(spatial_proj_(Var(Tensor({1, pd}, 0.0))), box_proj_(Var(Tensor({1, kBoxFeatures}, 0.0))));
    return nn::add(temporal_proj_(Var(Tensor({1, pd}, 0.0))), timing_proj_(Var(Tensor({1, 3}, 0.0))));
  }
  if (branch == Branch::Spatial) {
    // gripper-relative box: centre offset at workspace and step scale, then extent
    const world::Vec3 off = c.box.center - world::Vec3{c.proprio[0], c.proprio[1], c.proprio[2]};
    const double cap = std::max(1.0, world::norm(off) / kReachScale) * kReachScale;
    const Tensor box({1, kBoxFeatures},
                     std::vector<double>{off.x / kOffsetScale, off.y / kOffsetScale, off.z / kOffsetScale, off.x / cap,
                                         off.y / cap, off.z / cap, c.box.extent.x / kExtentScale,
                                         c.box.extent.y / kExtentScale, c.box.extent.z / kExtentScale});
    return nn::add(spatial_proj_(c.spatial), box_proj_(Var(box)));
  }
  const Tensor timing({1, 3}, std::vector<double>{c.duration / kTimeScale, c.elapsed / kTimeScale,
                                                  (c.duration - c.elapsed) / kTimeScale});
  return nn::add(temporal_proj_(c.temporal), timing_proj_(Var(timing)));
}

std::size_t ActionExpert::condition_length(const Condition& c) const {
  const std::size_t body = cfg_.conditioning == Conditioning::Instruction ? c.instruction.size() : cfg_.semantic_tokens;
  const std::size_t branches = cfg_.generator == GeneratorMode::Single ? 2 : 1;
  return vlm::kTokensPerFrame + body + branches + 1;
}

Var ActionExpert::condition_tokens(Branch branch, const Condition& c) const {
  if (c.proprio.size() != world::kProprioDims) throw std::invalid_argument("expert: proprio length mismatch");
  if (c.frame.rows() != vlm::kTokensPerFrame || c.frame.cols() != cfg_.planner_d)
    throw std::invalid_argument("expert: frame tokens shape " + nn::shape_string(c.frame.shape()));
  std::vector<Var> parts{frame_proj_(c.frame)};
  if (cfg_.conditioning == Conditioning::Instruction) {
    if (c.instruction.empty() || c.instruction.size() > world::kMaxInstruction)
      throw std::invalid_argument("expert: instruction length out of range");
    std::vector<std::size_t> ids, pos;
    for (std::size_t i = 0; i < c.instruction.size(); ++i) {
      ids.push_back(static_cast<std::size_t>(c.instruction[i]));
      pos.push_back(i);
    }
    parts.push_back(nn::add(nn::gather_rows(instr_embed_, ids), nn::gather_rows(instr_pos_, pos)));
  } else {
    if (c.semantic.rows() != cfg_.semantic_tokens || c.semantic.cols() != cfg_.planner_d)
      throw std::invalid_argument("expert: semantic tokens shape " + nn::shape_string(c.semantic.shape()));
    parts.push_back(semantic_proj_(c.semantic));
  }
  if (cfg_.generator == GeneratorMode::Single) {
    parts.push_back(branch_token(Branch::Spatial, c));
    parts.push_back(branch_token(Branch::Temporal, c));
  } else {
    parts.push_back(branch_token(branch, c));
  }
  parts.push_back(state_proj_(Var(Tensor({1, world::kProprioDims}, c.proprio))));
  return nn::concat_rows(parts);
}

Var ActionExpert::action_tokens(const Var& a, double flow_time) const {
  if (a.rows() != cfg_.horizon || a.cols() != world::kActionDim)
    throw std::invalid_argument("expert: action chunk shape " + nn::shape_string(a.shape()));
  const auto enc = nn::fourier_encode(flow_time, cfg_.fourier);
  const Var t = time_in_(Var(Tensor({1, enc.size()}, enc)));
  return nn::add_row(nn::add(action_in_(a), step_pos_), nn::reshape(t, {cfg_.d_model}));
}

Var ActionExpert::run(const Var& cond, const Var& a, double flow_time, const nn::AttentionMask& mask) const {
  Var x = nn::concat_rows({cond, action_tokens(a, flow_time)});
  for (const auto& b : blocks_) x = b(x, mask);
  x = nn::slice_rows(x, cond.rows(), x.rows());
  return out_(ln_f_(x));
}

Var ActionExpert::generator_flow(Branch branch, const Condition& c, const Var& a, double flow_time) const {
  const Var cond = condition_tokens(branch, c);
  const auto masks = build_action_masks(cfg_.horizon, cond.rows());
  return run(cond, a, flow_time, branch == Branch::Spatial ? masks.first : masks.second);
}

Var ActionExpert::single_flow(const Condition& c, const Var& a, double flow_time) const {
  const Var cond = condition_tokens(Branch::Spatial, c);
  return run(cond, a, flow_time, build_action_masks(cfg_.horizon, cond.rows()).first);
}

Var ActionExpert::flow(const Condition& c, const Var& a, double flow_time) const {
  if (cfg_.generator == GeneratorMode::Single) return single_flow(c, a, flow_time);
  switch (cfg_.fusion) {
    case FusionMode::SpatialOnly: return generator_flow(Branch::Spatial, c, a, flow_time);
    case FusionMode::TemporalOnly: return generator_flow(Branch::Temporal, c, a, flow_time);
    case FusionMode::Linear: break;
  }
  const Var vs = generator_flow(Branch::Spatial, c, a, flow_time);
  if (flow_time <= 0.0) return vs;
  const Var vt = generator_flow(Branch::Temporal, c, a, flow_time);
  if (flow_time >= 1.0) return vt;
  return nn::add(nn::scale(vt, flow_time), nn::scale(vs, 1.0 - flow_time));
}

Var ActionExpert::training_loss(const Condition& c, const Tensor& a_star, double flow_time, const Tensor& omega) const {
  const FlowPair p = fm_pair(a_star, flow_time, omega);
  return ae_loss(flow(c, Var(p.noisy), flow_time), p.target);
}

Tensor ActionExpert::sample_normalized(const Condition& c, std::uint64_t seed, std::size_t T,
                                       std::vector<SamplerTraceRow>* trace) const {
  if (T == 0) T = cfg_.denoise_steps;
  nn::NoGradGuard guard;
  nn::Rng rng(seed);
  Tensor omega = rng.normal_tensor({cfg_.horizon, world::kActionDim});
  const double Td = static_cast<double>(T);
  if (cfg_.generator == GeneratorMode::Single) {
    return integrate_flow(
        std::move(omega), T,
        [&](Branch, const Tensor& a, std::size_t i) { return single_flow(c, Var(a), i / Td).value(); },
        FusionMode::SpatialOnly, trace);
  }
  return integrate_flow(
      std::move(omega), T,
      [&](Branch b, const Tensor& a, std::size_t i) { return generator_flow(b, c, Var(a), i / Td).value(); },
      cfg_.fusion, trace);
}

std::vector<world::ActionStep> ActionExpert::sample_chunk(const Condition& c, std::uint64_t seed, std::size_t T,
                                                          std::vector<SamplerTraceRow>* trace,
                                                          const world::WorldConfig& wc) const {
  return denormalize(sample_normalized(c, seed, T, trace), wc);
}

void ActionExpert::set_normalization(const std::vector<double>& mean, const std::vector<double>& scale) {
  if (mean.size() != world::kActionDim || scale.size() != world::kActionDim)
    throw std::invalid_argument("expert: normalization needs 6 values");
  for (std::size_t i = 0; i < world::kActionDim; ++i) {
    if (!(scale[i] > 0.0) || !std::isfinite(mean[i])) throw std::invalid_argument("expert: bad normalization stats");
    norm_mean_.mutable_value()[i] = mean[i];
    norm_scale_.mutable_value()[i] = scale[i];
  }
}

Tensor ActionExpert::normalize(const std::vector<world::ActionStep>& steps) const {
  if (steps.size() != cfg_.horizon) throw std::invalid_argument("expert: chunk length mismatch");
  Tensor out({cfg_.horizon, world::kActionDim});
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto f = steps[i].flat();
    for (std::size_t j = 0; j < world::kActionDim; ++j)
      out.at(i, j) = (f[j] - norm_mean_.value()[j]) / norm_scale_.value()[j];
  }
  return out;
}

std::vector<world::ActionStep> ActionExpert::denormalize(const Tensor& chunk, const world::WorldConfig& wc) const {
  std::vector<world::ActionStep> out;
  for (std::size_t i = 0; i < chunk.rows(); ++i) {
    std::array<double, world::kActionDim> f{};
    for (std::size_t j = 0; j < world::kActionDim; ++j)
      f[j] = chunk.at(i, j) * norm_scale_.value()[j] + norm_mean_.value()[j];
    out.push_back(world::clamp_action(world::ActionStep::from_flat(f.data()), wc));
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> action_statistics(const std::vector<world::ActionStep>& steps) {
  std::vector<double> mean(world::kActionDim, 0.0), scale(world::kActionDim, 1.0);
  if (steps.empty()) return {mean, scale};
  const double n = static_cast<double>(steps.size());
  for (const auto& s : steps) {
    const auto f = s.flat();
    for (std::size_t j = 0; j < world::kActionDim; ++j) mean[j] += f[j] / n;
  }
  std::vector<double> var(world::kActionDim, 0.0);
  for (const auto& s : steps) {
    const auto f = s.flat();
    for (std::size_t j = 0; j < world::kActionDim; ++j) var[j] += (f[j] - mean[j]) * (f[j] - mean[j]) / n;
  }
  for (std::size_t j = 0; j < world::kActionDim; ++j) scale[j] = std::max(std::sqrt(var[j]), 1e-3);
  return {mean, scale};
}

}  // namespace stpi::ae
