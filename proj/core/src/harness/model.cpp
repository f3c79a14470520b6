#include "stpi/harness/model.hpp"

#include <stdexcept>

#include "stpi/nn/checkpoint.hpp"

namespace stpi::harness {

Model::Model(const PipelineConfig& c) : cfg(c) {
  cfg.sync();
  cfg.validate();
  nn::Rng rng(cfg.seed);
  planner = std::make_unique<vlm::Planner>(params, cfg.planner, rng, "planner");
  expert = std::make_unique<ae::ActionExpert>(params, cfg.expert, rng, "expert");
}

void save_model(const Model& m, const std::filesystem::path& file) {
  nn::write_checkpoint(file, m.params, config_to_text(m.cfg));
}

std::unique_ptr<Model> load_model(const std::filesystem::path& file) {
  const auto ckpt = nn::read_checkpoint(file);
  auto m = std::make_unique<Model>(parse_config(ckpt.metadata));
  nn::load_into(ckpt, m->params);
  return m;
}

void load_weights(Model& m, const std::filesystem::path& file) {
  const auto ckpt = nn::read_checkpoint(file);
  try {
    nn::load_into(ckpt, m.params);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint " + file.string() + " does not match the configured model: " + e.what());
  }
}

std::map<std::string, nn::Tensor> snapshot(const nn::ParameterSet& ps, const std::string& prefix) {
  std::map<std::string, nn::Tensor> out;
  for (const auto& p : ps.paths_with_prefix(prefix)) out.emplace(p, ps.at(p).value());
  return out;
}

void restore(nn::ParameterSet& ps, const std::map<std::string, nn::Tensor>& values) {
  for (const auto& [path, value] : values) {
    if (!ps.contains(path)) throw std::runtime_error("restore: unknown parameter " + path);
    auto& dst = ps.at(path).mutable_value();
    if (dst.shape() != value.shape()) throw std::runtime_error("restore: shape mismatch at " + path);
    dst = value;
  }
}

}  // namespace stpi::harness
