#include "stpi/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "stpi/nn/ops.hpp"

namespace stpi::harness {

void LossWeights::validate() const {
  for (double v : {language, spatial, temporal, vlm, ae})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
}

double total_loss(double l_vlm, double l_ae, const LossWeights& w) {
  if (!std::isfinite(l_vlm) || !std::isfinite(l_ae)) throw nn::NonFiniteError("total_loss: non-finite component");
  return w.vlm * l_vlm + w.ae * l_ae;
}

nn::Var total_loss(const nn::Var& l_vlm, const nn::Var& l_ae, const LossWeights& w) {
  if (!nn::all_finite(l_vlm.value()) || !nn::all_finite(l_ae.value()))
    throw nn::NonFiniteError("total_loss: non-finite component");
  return nn::add(nn::scale(l_vlm, w.vlm), nn::scale(l_ae, w.ae));
}

void PipelineConfig::sync() {
  expert.planner_d = planner.d_model;
  expert.semantic_tokens = planner.semantic_tokens;
}

void PipelineConfig::validate() const {
  planner.validate();
  expert.validate();
  loss.validate();
  if (expert.planner_d != planner.d_model || expert.semantic_tokens != planner.semantic_tokens)
    throw std::invalid_argument("config: expert dimensions out of sync with planner");
  for (const StageBudget* b : {&train.stage0, &train.stage1, &train.stage2a, &train.stage2b, &train.stage3})
    if (!(b->lr > 0.0) || b->batch == 0) throw std::invalid_argument("config: stage lr and batch must be positive");
  if (train.fm_draws == 0) throw std::invalid_argument("config: train.fm_draws must be >= 1");
  if (eval.episodes == 0 || eval.max_steps == 0 || !(eval.max_time > 0.0) || !(eval.beta > 0.0))
    throw std::invalid_argument("config: eval budget must be positive");
}

namespace {

struct Key {
  std::string name;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

// Shortest text that round-trips.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer");
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

template <class T>
Key size_key(std::string name, T PipelineConfig::*group, std::size_t T::*field) {
  return {name, [=](const PipelineConfig& c) { return std::to_string(c.*group.*field); },
          [=](PipelineConfig& c, const std::string& v) { c.*group.*field = static_cast<std::size_t>(to_uint(v)); }};
}

template <class T>
Key double_key(std::string name, T PipelineConfig::*group, double T::*field) {
  return {name, [=](const PipelineConfig& c) { return fmt(c.*group.*field); },
          [=](PipelineConfig& c, const std::string& v) { c.*group.*field = to_double(v); }};
}

void budget_keys(std::vector<Key>& keys, const std::string& stage, StageBudget TrainConfig::*budget) {
  keys.push_back({stage + ".lr", [=](const PipelineConfig& c) { return fmt((c.train.*budget).lr); },
                  [=](PipelineConfig& c, const std::string& v) { (c.train.*budget).lr = to_double(v); }});
  keys.push_back({stage + ".batch", [=](const PipelineConfig& c) { return std::to_string((c.train.*budget).batch); },
                  [=](PipelineConfig& c, const std::string& v) { (c.train.*budget).batch = to_uint(v); }});
  keys.push_back({stage + ".steps", [=](const PipelineConfig& c) { return std::to_string((c.train.*budget).steps); },
                  [=](PipelineConfig& c, const std::string& v) { (c.train.*budget).steps = to_uint(v); }});
}

std::string mix_text(const std::vector<std::pair<world::Suite, double>>& mix) {
  std::string out;
  for (const auto& [s, w] : mix) out += (out.empty() ? "" : ",") + world::suite_name(s) + ":" + fmt(w);
  return out;
}

template <class E, class Name, class Parse>
Key enum_key(std::string name, std::function<E&(PipelineConfig&)> ref, Name to_name, Parse parse) {
  return {name, [=](const PipelineConfig& c) { return to_name(ref(const_cast<PipelineConfig&>(c))); },
          [=](PipelineConfig& c, const std::string& v) {
            const auto parsed = parse(v);
            if (!parsed) throw std::invalid_argument("unknown value");
            ref(c) = *parsed;
          }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    using P = PipelineConfig;
    std::vector<Key> k;
    k.push_back({"seed", [](const P& c) { return std::to_string(c.seed); },
                 [](P& c, const std::string& v) { c.seed = to_uint(v); }});
    k.push_back({"data.episodes", [](const P& c) { return std::to_string(c.data.episodes); },
                 [](P& c, const std::string& v) { c.data.episodes = to_uint(v); }});
    k.push_back({"data.seed", [](const P& c) { return std::to_string(c.data.seed); },
                 [](P& c, const std::string& v) { c.data.seed = to_uint(v); }});
    k.push_back({"data.mix", [](const P& c) { return mix_text(c.data.mix); },
                 [](P& c, const std::string& v) { c.data.mix = world::parse_suite_mix(v); }});

    using PC = vlm::PlannerConfig;
    k.push_back(size_key("planner.d_model", &P::planner, &PC::d_model));
    k.push_back(size_key("planner.layers", &P::planner, &PC::layers));
    k.push_back(size_key("planner.heads", &P::planner, &PC::heads));
    k.push_back(size_key("planner.mlp_ratio", &P::planner, &PC::mlp_ratio));
    k.push_back(size_key("planner.window", &P::planner, &PC::window));
    k.push_back(size_key("planner.window_stride", &P::planner, &PC::window_stride));
    k.push_back(size_key("planner.semantic_tokens", &P::planner, &PC::semantic_tokens));
    k.push_back(size_key("planner.horizon", &P::planner, &PC::horizon));
    k.push_back(size_key("planner.max_horizon", &P::planner, &PC::max_horizon));
    k.push_back(size_key("planner.fourier", &P::planner, &PC::fourier));
    k.push_back(size_key("planner.lora_rank", &P::planner, &PC::lora_rank));
    k.push_back(size_key("planner.history", &P::planner, &PC::history));
    k.push_back(double_key("planner.temperature", &P::planner, &PC::temperature));
    k.push_back(double_key("planner.time_span", &P::planner, &PC::time_span));
    k.push_back(enum_key<vlm::Modality>(
        "planner.modality", [](P& c) -> vlm::Modality& { return c.planner.modality; }, vlm::modality_name,
        vlm::parse_modality));
    k.push_back(enum_key<vlm::MaskMode>(
        "planner.mask", [](P& c) -> vlm::MaskMode& { return c.planner.mask; }, vlm::mask_mode_name,
        vlm::parse_mask_mode));

    using EC = ae::ExpertConfig;
    k.push_back(size_key("expert.d_model", &P::expert, &EC::d_model));
    k.push_back(size_key("expert.layers", &P::expert, &EC::layers));
    k.push_back(size_key("expert.heads", &P::expert, &EC::heads));
    k.push_back(size_key("expert.mlp_ratio", &P::expert, &EC::mlp_ratio));
    k.push_back(size_key("expert.horizon", &P::expert, &EC::horizon));
    k.push_back(size_key("expert.denoise_steps", &P::expert, &EC::denoise_steps));
    k.push_back(size_key("expert.fourier", &P::expert, &EC::fourier));
    k.push_back(enum_key<ae::GeneratorMode>(
        "expert.generator", [](P& c) -> ae::GeneratorMode& { return c.expert.generator; }, ae::generator_mode_name,
        ae::parse_generator_mode));
    k.push_back(enum_key<ae::FusionMode>(
        "expert.fusion", [](P& c) -> ae::FusionMode& { return c.expert.fusion; }, ae::fusion_mode_name,
        ae::parse_fusion_mode));
    k.push_back(enum_key<ae::Conditioning>(
        "expert.conditioning", [](P& c) -> ae::Conditioning& { return c.expert.conditioning; }, ae::conditioning_name,
        ae::parse_conditioning));

    k.push_back(double_key("loss.lambda_L", &P::loss, &LossWeights::language));
    k.push_back(double_key("loss.lambda_s", &P::loss, &LossWeights::spatial));
    k.push_back(double_key("loss.lambda_tau", &P::loss, &LossWeights::temporal));
    k.push_back(double_key("loss.lambda_1", &P::loss, &LossWeights::vlm));
    k.push_back(double_key("loss.lambda_2", &P::loss, &LossWeights::ae));

    budget_keys(k, "stage0", &TrainConfig::stage0);
    budget_keys(k, "stage1", &TrainConfig::stage1);
    budget_keys(k, "stage2a", &TrainConfig::stage2a);
    budget_keys(k, "stage2b", &TrainConfig::stage2b);
    budget_keys(k, "stage3", &TrainConfig::stage3);
    k.push_back(double_key("train.weight_decay", &P::train, &TrainConfig::weight_decay));
    k.push_back(size_key("train.log_every", &P::train, &TrainConfig::log_every));
    k.push_back(size_key("train.fm_draws", &P::train, &TrainConfig::fm_draws));
    k.push_back({"train.seed", [](const P& c) { return std::to_string(c.train.seed); },
                 [](P& c, const std::string& v) { c.train.seed = to_uint(v); }});

    k.push_back(size_key("eval.episodes", &P::eval, &EvalConfig::episodes));
    k.push_back({"eval.seed", [](const P& c) { return std::to_string(c.eval.seed); },
                 [](P& c, const std::string& v) { c.eval.seed = to_uint(v); }});
    k.push_back({"eval.suite", [](const P& c) { return c.eval.suite; },
                 [](P& c, const std::string& v) {
                   world::parse_suite_mix(v);
                   c.eval.suite = v;
                 }});
    k.push_back(size_key("eval.max_steps", &P::eval, &EvalConfig::max_steps));
    k.push_back(double_key("eval.max_time", &P::eval, &EvalConfig::max_time));
    k.push_back(size_key("eval.replan_cap", &P::eval, &EvalConfig::replan_cap));
    k.push_back(double_key("eval.beta", &P::eval, &EvalConfig::beta));
    k.push_back(size_key("eval.execute_steps", &P::eval, &EvalConfig::execute_steps));
    k.push_back(size_key("eval.workers", &P::eval, &EvalConfig::workers));
    return k;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (k.name != key) continue;
    try {
      k.set(cfg, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: bad value '" + value + "' for " + key + " (" + e.what() + ")");
    }
    return;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string config_to_text(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

PipelineConfig parse_config(const std::string& text, PipelineConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace stpi::harness
