#include "stpi/vlm/loss.hpp"

#include <stdexcept>

#include "stpi/nn/ops.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::vlm {

using nn::Tensor;
using nn::Var;

VlmLoss vlm_loss(const std::vector<PromptOutput>& predicted, const std::vector<PromptTarget>& targets,
                 const VlmWeights& w) {
  if (w.language < 0 || w.spatial < 0 || w.temporal < 0) throw std::invalid_argument("vlm_loss: negative weight");
  VlmLoss out;
  out.paired = std::min(predicted.size(), targets.size());
  out.truncated = predicted.size() != targets.size();
  std::vector<Var> terms;
  for (std::size_t k = 0; k < out.paired; ++k) {
    const PromptOutput& p = predicted[k];
    const PromptTarget& t = targets[k];
    if (t.description.empty() || t.description.size() > world::kMaxDescription)
      throw std::invalid_argument("vlm_loss: target description length out of range");
    std::vector<std::size_t> ids(world::kMaxDescription, static_cast<std::size_t>(world::tok::Pad));
    std::vector<double> weights(world::kMaxDescription, 0.0);
    for (std::size_t i = 0; i < t.description.size(); ++i) {
      ids[i] = static_cast<std::size_t>(t.description[i]);
      weights[i] = 1.0 / static_cast<double>(t.description.size());
    }
    const Var ce = nn::cross_entropy(p.logits, ids, weights);
    out.language += ce.value().item();
    if (w.language > 0) terms.push_back(nn::scale(ce, w.language));
    if (t.box) {
      const auto flat = t.box->flat();
      const Var l1 = nn::l1_loss(p.box, Tensor({1, 6}, std::vector<double>(flat.begin(), flat.end())));
      out.spatial += l1.value().item();
      if (w.spatial > 0) terms.push_back(nn::scale(l1, w.spatial));
    }
    if (t.duration) {
      const Var l1 = nn::l1_loss(p.duration, Tensor({1, 1}, *t.duration));
      out.temporal += l1.value().item();
      if (w.temporal > 0) terms.push_back(nn::scale(l1, w.temporal));
    }
  }
  if (terms.empty()) {
    out.total = Var(Tensor::scalar(0.0));
    return out;
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  out.total = total;
  return out;
}

std::vector<PromptTarget> prompt_targets(const std::vector<world::SubTaskAnnotation>& subtasks, std::size_t k,
                                         std::size_t K) {
  std::vector<PromptTarget> out;
  for (std::size_t j = k; j < k + K; ++j) {
    if (j < subtasks.size()) {
      out.push_back({subtasks[j].description, subtasks[j].box, subtasks[j].duration});
    } else {
      out.push_back({world::done_description(), std::nullopt, std::nullopt});
    }
  }
  return out;
}

}  // namespace stpi::vlm
