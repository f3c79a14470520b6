#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stpi/nn/layers.hpp"
#include "stpi/nn/mask.hpp"
#include "stpi/nn/params.hpp"
#include "stpi/nn/random.hpp"
#include "stpi/vlm/planner.hpp"
#include "stpi/world/types.hpp"

namespace stpi::ae {

enum class Branch { Spatial, Temporal };
enum class GeneratorMode { Dual, Single };  // Single: one full-attention generator
enum class FusionMode { Linear, SpatialOnly, TemporalOnly };
enum class Conditioning { Prompt, Instruction };

std::string generator_mode_name(GeneratorMode m);
std::optional<GeneratorMode> parse_generator_mode(const std::string& s);
std::string fusion_mode_name(FusionMode m);
std::optional<FusionMode> parse_fusion_mode(const std::string& s);
std::string conditioning_name(Conditioning c);
std::optional<Conditioning> parse_conditioning(const std::string& s);

struct ExpertConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t horizon = 8;        // H
  std::size_t denoise_steps = 10;  // T
  std::size_t fourier = 8;
  std::size_t planner_d = 128;
  std::size_t semantic_tokens = 4;
  GeneratorMode generator = GeneratorMode::Dual;
  FusionMode fusion = FusionMode::Linear;
  Conditioning conditioning = Conditioning::Prompt;

  void validate() const;
};

// Everything one generator pass conditions on. Tensors may carry gradients
// back into the planner during joint training.
struct Condition {
  nn::Var frame;     // kTokensPerFrame x planner_d, latest frame of f_4D
  nn::Var semantic;  // M x planner_d
  nn::Var spatial;   // 1 x planner_d
  nn::Var temporal;  // 1 x planner_d
  world::Box box;
  double duration = 0.0;
  double elapsed = 0.0;
  std::vector<double> proprio;
  std::vector<int> instruction;
};

Condition make_condition(const vlm::Observation4D& obs, const vlm::ActionPrompt& prompt,
                         const std::vector<double>& proprio, double elapsed, const std::vector<int>& instruction);
// Latest frame rows of f_4D.
nn::Var latest_frame(const vlm::Observation4D& obs);

// Conditioning rows see only conditioning; action rows see all conditioning.
// Spatial: actions see every action. Temporal: action i sees actions <= i.
std::pair<nn::AttentionMask, nn::AttentionMask> build_action_masks(std::size_t H, std::size_t cond_len);

// (tau/T) v_t + (1 - tau/T) v_s. Throws for tau outside [0, T] or shape mismatch.
nn::Tensor fuse_flows(const nn::Tensor& v_s, const nn::Tensor& v_t, double tau, double T);

struct FlowPair {
  nn::Tensor noisy;   // A^{tau, omega}
  nn::Tensor target;  // u = A* - omega
  nn::Tensor noise;
  double tau = 0.0;
};

FlowPair fm_pair(const nn::Tensor& a_star, double tau, const nn::Tensor& omega);

// Mean squared residual.
nn::Var ae_loss(const nn::Var& v_pred, const nn::Tensor& u);

struct SamplerTraceRow {
  std::size_t tau_index = 0;
  double alpha = 0.0;
  double norm_spatial = 0.0;
  double norm_temporal = 0.0;
};

void write_sampler_trace(const std::filesystem::path& path, const std::vector<SamplerTraceRow>& rows);

// Per-step flow source for the integrator: returns the branch flow at chunk A
// for denoising index tau_index of T.
using FlowFn = std::function<nn::Tensor(Branch, const nn::Tensor& a, std::size_t tau_index)>;

// Euler from omega over tau = 0..T-1 with alpha = tau/T. Throws
// nn::NonFiniteError naming tau when a flow or state goes non-finite.
nn::Tensor integrate_flow(nn::Tensor omega, std::size_t T, const FlowFn& flow, FusionMode fusion = FusionMode::Linear,
                          std::vector<SamplerTraceRow>* trace = nullptr);

class ActionExpert {
 public:
  ActionExpert(nn::ParameterSet& params, const ExpertConfig& cfg, nn::Rng& rng, std::string prefix = "expert");

  const ExpertConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  nn::Var condition_tokens(Branch branch, const Condition& c) const;
  std::size_t condition_length(const Condition& c) const;

  // One pass of the shared backbone. flow_time in [0, 1].
  nn::Var generator_flow(Branch branch, const Condition& c, const nn::Var& a, double flow_time) const;
  // Full-attention single generator conditioned on both prompt attributes.
  nn::Var single_flow(const Condition& c, const nn::Var& a, double flow_time) const;
  // Flow used for both training and sampling under the configured modes.
  nn::Var flow(const Condition& c, const nn::Var& a, double flow_time) const;

  nn::Var training_loss(const Condition& c, const nn::Tensor& a_star, double flow_time, const nn::Tensor& omega) const;

  // Normalized chunk; omega drawn from `seed`. T = 0 uses the configured T.
  nn::Tensor sample_normalized(const Condition& c, std::uint64_t seed, std::size_t T = 0,
                               std::vector<SamplerTraceRow>* trace = nullptr) const;
  std::vector<world::ActionStep> sample_chunk(const Condition& c, std::uint64_t seed, std::size_t T = 0,
                                              std::vector<SamplerTraceRow>* trace = nullptr,
                                              const world::WorldConfig& wc = {}) const;

  void set_normalization(const std::vector<double>& mean, const std::vector<double>& scale);
  nn::Tensor normalize(const std::vector<world::ActionStep>& steps) const;
  std::vector<world::ActionStep> denormalize(const nn::Tensor& chunk, const world::WorldConfig& wc = {}) const;

 private:
  nn::Var action_tokens(const nn::Var& a, double flow_time) const;
  nn::Var run(const nn::Var& cond, const nn::Var& a, double flow_time, const nn::AttentionMask& mask) const;
  nn::Var branch_token(Branch branch, const Condition& c) const;

  ExpertConfig cfg_;
  std::string prefix_;
  nn::Linear frame_proj_, semantic_proj_, spatial_proj_, box_proj_, temporal_proj_, timing_proj_, state_proj_;
  nn::Var instr_embed_, instr_pos_;
  nn::Linear action_in_, time_in_;
  nn::Var step_pos_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear out_;
  nn::Var norm_mean_, norm_scale_;
};

// Per-dimension mean and scale over demonstration steps; scale floors at 1e-3.
std::pair<std::vector<double>, std::vector<double>> action_statistics(const std::vector<world::ActionStep>& steps);

}  // namespace stpi::ae
