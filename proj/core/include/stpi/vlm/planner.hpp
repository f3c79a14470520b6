#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stpi/nn/layers.hpp"
#include "stpi/nn/mask.hpp"
#include "stpi/nn/params.hpp"
#include "stpi/nn/random.hpp"
#include "stpi/world/types.hpp"

namespace stpi::vlm {

enum class Modality { Grid2D, Geometry3D, Full4D };
enum class MaskMode { None, Bidirectional, Causal };

std::string modality_name(Modality m);
std::optional<Modality> parse_modality(const std::string& s);
std::string mask_mode_name(MaskMode m);
std::optional<MaskMode> parse_mask_mode(const std::string& s);

inline constexpr std::size_t kTokensPerFrame = 8;  // 8 grid patches paired with 6 object + proprio + empty geometry slots
inline constexpr std::size_t kPatchRows = 8;
inline constexpr std::size_t kPatchCols = 16;

struct PlannerConfig {
  std::size_t d_model = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t window = 4;         // W
  std::size_t window_stride = 8;  // steps between frames
  std::size_t semantic_tokens = 4;
  std::size_t horizon = 3;  // K
  std::size_t max_horizon = 4;
  std::size_t fourier = 8;
  std::size_t lora_rank = 8;
  std::size_t history = 4;
  double temperature = 0.0;
  double time_span = 8.0;  // seconds mapped onto [0, 1] for the time encoding
  Modality modality = Modality::Full4D;
  MaskMode mask = MaskMode::Causal;

  std::size_t frames() const { return modality == Modality::Full4D ? window : 1; }
  void validate() const;
};

// Fused spatiotemporal tokens for a window: frames() * kTokensPerFrame rows.
struct Observation4D {
  nn::Var tokens;
  std::size_t frames = 0;
  std::vector<double> timestamps;
  // Latest frame, one row per token: object slot position (3D/4D) or patch
  // centre (2D), in metres. The spatial head points into these.
  nn::Tensor anchors;
};

// Differentiable outputs for one prompt slot.
struct PromptOutput {
  nn::Var semantic;  // M x d
  nn::Var spatial;   // 1 x d
  nn::Var temporal;  // 1 x d
  nn::Var logits;    // kMaxDescription x V
  nn::Var box;       // 1 x 6, metres, before clamping
  nn::Var duration;  // 1 x 1, seconds, softplus output
};

struct PlannerOutput {
  std::vector<PromptOutput> prompts;
  std::size_t context_len = 0;
};

// Decoded prompt handed to the action expert and the controller.
struct ActionPrompt {
  std::size_t index = 0;
  nn::Tensor semantic;
  nn::Tensor spatial;
  nn::Tensor temporal;
  std::vector<int> description;
  bool truncated = false;
  world::Box box;
  double duration = 0.0;
};

// Context rows see only context. Semantic rows of prompt k see context, every
// token of earlier prompts, and prompt k's semantic rows; the spatial and
// temporal rows of prompt k see the same plus themselves. `Bidirectional`
// opens all prompts to each other; `None` closes earlier prompts.
nn::AttentionMask build_block_causal_mask(std::size_t context_len, std::size_t K, std::size_t M,
                                          MaskMode mode = MaskMode::Causal);

// Frames at current, current - stride, ... (oldest first). Frames before the
// episode start repeat the first observation with earlier timestamps.
std::vector<world::RawObservation> observation_window(const std::vector<world::RawObservation>& history,
                                                      std::size_t current, std::size_t frames, std::size_t stride);

class Planner {
 public:
  Planner(nn::ParameterSet& params, const PlannerConfig& cfg, nn::Rng& rng, std::string prefix = "planner");

  const PlannerConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  Observation4D encode_4d(const std::vector<world::RawObservation>& window) const;

  nn::Var context_tokens(const Observation4D& obs, const std::vector<int>& instruction,
                         const std::vector<std::vector<int>>& history) const;
  nn::Var prompt_inputs(std::size_t K) const;
  // `anchors` (kTokensPerFrame x 3) belong to context rows starting at
  // `anchor_row`; without them the spatial head is a plain regression.
  PlannerOutput run(const nn::Var& context, const nn::Var& prompts, std::size_t K,
                    const nn::Tensor* anchors = nullptr, std::size_t anchor_row = 0) const;

  PlannerOutput forward(const Observation4D& obs, const std::vector<int>& instruction,
                        const std::vector<std::vector<int>>& history, std::size_t K) const;

  // Greedy when temperature is 0, otherwise samples each position from
  // softmax(logits / temperature) using `rng`.
  std::vector<ActionPrompt> decode(const PlannerOutput& out, nn::Rng* rng = nullptr) const;

  std::vector<ActionPrompt> plan(const Observation4D& obs, const std::vector<int>& instruction,
                                 const std::vector<std::vector<int>>& history, nn::Rng* rng = nullptr) const;

  // Parameter path groups used by the stage freezing schedule.
  std::string vision_prefix() const { return prefix_ + ".vision"; }
  std::string geometry_encoder_prefix() const { return prefix_ + ".geometry.encoder"; }
  std::string geometry_adapter_prefix() const { return prefix_ + ".geometry.adapter"; }
  std::string fusion_prefix() const { return prefix_ + ".fusion"; }
  std::string backbone_prefix() const { return prefix_ + ".backbone"; }
  std::string embed_prefix() const { return prefix_ + ".embed"; }

 private:
  nn::Var history_token(const std::vector<int>& description, std::size_t slot) const;

  PlannerConfig cfg_;
  std::string prefix_;
  nn::Linear patch_, obj_fc1_, obj_fc2_, proprio_fc_, adapter_, fusion_;
  nn::Var patch_pos_;
  nn::Var token_embed_, instr_pos_, history_pos_;
  nn::Var q_semantic_, q_spatial_, q_temporal_, q_prompt_pos_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear head_language_, head_spatial_, head_temporal_, pointer_q_, pointer_k_;
  nn::Var box_scale_, box_offset_;
};

world::Box decode_box(const nn::Tensor& raw_metres, const world::WorldConfig& wc = {});
double decode_duration(double raw_seconds, const world::WorldConfig& wc = {});

}  // namespace stpi::vlm
