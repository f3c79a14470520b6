#include "stpi/harness/probe.hpp"

#include <cmath>

#include "stpi/harness/training.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::harness {

PlannerScores probe_planner(const Model& m, const std::vector<world::EpisodeRecord>& data) {
  nn::NoGradGuard guard;
  const auto& pc = m.cfg.planner;
  PlannerScores s;
  std::size_t tokens = 0, correct = 0, exact = 0;
  for (const auto& r : data) {
    for (std::size_t k = 0; k < r.subtasks.size(); ++k) {
      const auto& a = r.subtasks[k];
      const auto obs = m.planner->encode_4d(
          vlm::observation_window(r.observations, a.segment_begin, pc.frames(), pc.window_stride));
      const auto out = m.planner->forward(obs, r.spec.instruction, history_before(r, k), 1);
      const auto p = m.planner->decode(out).front();
      bool same = true;
      for (std::size_t i = 0; i < a.description.size(); ++i) {
        const int want = a.description[i];
        const int got = i < p.description.size() ? p.description[i] : world::tok::Pad;
        ++tokens;
        if (want == got) ++correct;
        else same = false;
        if (want == world::tok::Eos) break;
      }
      if (same) ++exact;
      s.position_error += world::norm(p.box.center - a.box.center);
      s.duration_error += std::abs(p.duration - a.duration);
      ++s.prompts;
    }
  }
  if (s.prompts) {
    const double n = static_cast<double>(s.prompts);
    s.token_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    s.exact_match = static_cast<double>(exact) / n;
    s.position_error /= n;
    s.duration_error /= n;
  }
  return s;
}

ExpertScores probe_expert(const Model& m, const std::vector<world::EpisodeRecord>& data, std::size_t samples,
                          std::uint64_t seed) {
  nn::NoGradGuard guard;
  const auto& pc = m.cfg.planner;
  const std::size_t H = m.cfg.expert.horizon;
  nn::Rng rng(seed);
  ExpertScores s;
  std::size_t elems = 0, steps = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto ps = draw_planning(data, rng);
    const auto& r = *ps.record;
    const auto obs =
        m.planner->encode_4d(vlm::observation_window(r.observations, ps.step, pc.frames(), pc.window_stride));
    vlm::PlannerOutput out;
    if (m.cfg.expert.conditioning == ae::Conditioning::Prompt)
      out = m.planner->forward(obs, r.spec.instruction, history_before(r, ps.subtask), 1);
    const auto c = training_condition(obs, out.prompts.empty() ? nullptr : &out.prompts[0], r, ps);
    const auto target = target_chunk(r, ps.step, H);
    const nn::Tensor want = m.expert->normalize(target);
    const nn::Tensor got = m.expert->sample_normalized(c, nn::mix_seed(seed, i));
    for (std::size_t j = 0; j < want.size(); ++j) s.chunk_error += std::abs(got.data()[j] - want.data()[j]);
    elems += want.size();
    const auto acts = m.expert->denormalize(got);
    for (std::size_t h = 0; h < H; ++h) s.position_error += world::norm(acts[h].dx - target[h].dx);
    steps += H;
    ++s.chunks;
  }
  if (elems) s.chunk_error /= static_cast<double>(elems);
  if (steps) s.position_error /= static_cast<double>(steps);
  return s;
}

}  // namespace stpi::harness
