#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "stpi/harness/ablate.hpp"
#include "stpi/harness/config.hpp"
#include "stpi/harness/evaluate.hpp"
#include "stpi/harness/metrics.hpp"
#include "stpi/harness/model.hpp"
#include "stpi/harness/probe.hpp"
#include "stpi/harness/training.hpp"
#include "stpi/nn/ops.hpp"

using namespace stpi;
using namespace stpi::harness;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.planner.d_model = 16;
  c.planner.layers = 1;
  c.planner.heads = 2;
  c.planner.semantic_tokens = 2;
  c.planner.horizon = 2;
  c.planner.fourier = 4;
  c.planner.lora_rank = 2;
  c.expert.d_model = 16;
  c.expert.layers = 1;
  c.expert.heads = 2;
  c.expert.fourier = 4;
  c.expert.denoise_steps = 3;
  for (StageBudget* b : {&c.train.stage0, &c.train.stage1, &c.train.stage2a, &c.train.stage2b, &c.train.stage3}) {
    b->lr = 1e-3;
    b->batch = 2;
    b->steps = 3;
  }
  c.eval.episodes = 3;
  c.eval.max_steps = 40;
  c.eval.workers = 1;
  c.sync();
  c.validate();
  return c;
}

const std::vector<world::EpisodeRecord>& tiny_data() {
  static const auto data = [] {
    world::DatasetConfig dc;
    dc.episodes = 9;
    dc.seed = 3;
    return world::generate_records(dc);
  }();
  return data;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "stpi_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool has_path_prefix(const std::vector<std::string>& paths, const std::string& prefix) {
  for (const auto& p : paths)
    if (nn::path_has_prefix(p, prefix)) return true;
  return false;
}

}  // namespace

TEST_CASE("total_loss weights the two objectives") {
  const LossWeights w;
  CHECK(w.vlm == 1.0);
  CHECK(w.ae == 10.0);
  CHECK(w.language == 1.0);
  CHECK(w.spatial == 5.0);
  CHECK(w.temporal == 5.0);
  CHECK(total_loss(0.0, 0.0, w) == 0.0);
  CHECK(total_loss(0.5, 0.2, w) == doctest::Approx(2.5));
  CHECK(total_loss(0.5, 0.4, w) - total_loss(0.5, 0.0, w) ==
        doctest::Approx(2.0 * (total_loss(0.5, 0.2, w) - total_loss(0.5, 0.0, w))));
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.1, w), nn::NonFiniteError);
  CHECK_THROWS_AS(total_loss(0.1, std::numeric_limits<double>::infinity(), w), nn::NonFiniteError);

  const nn::Var v = total_loss(nn::Var(nn::Tensor({1, 1}, 0.5)), nn::Var(nn::Tensor({1, 1}, 0.2)), w);
  CHECK(v.value().item() == doctest::Approx(2.5));

  LossWeights bad;
  bad.spatial = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config text round trips and rejects unknown keys") {
  PipelineConfig c = tiny_config();
  c.planner.mask = vlm::MaskMode::Bidirectional;
  c.expert.fusion = ae::FusionMode::TemporalOnly;
  c.eval.suite = "SequentialGoal";
  c.train.stage3.lr = 3.25e-4;
  const std::string text = config_to_text(c);
  CHECK(config_to_text(parse_config(text)) == text);

  const auto keys = config_keys();
  for (const char* k : {"eval.max_steps", "eval.max_time", "eval.replan_cap", "eval.beta", "expert.horizon",
                        "expert.denoise_steps", "loss.lambda_2", "stage1.batch", "data.episodes"})
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());

  const auto parsed = parse_config("# comment\nplanner.d_model = 24   # inline\n\nexpert.generator = single\n");
  CHECK(parsed.planner.d_model == 24);
  CHECK(parsed.expert.planner_d == 24);
  CHECK(parsed.expert.generator == ae::GeneratorMode::Single);

  try {
    parse_config("seed = 1\nplanner.bogus = 3\n");
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("planner.layers = two\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("planner.mask = diagonal\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("loss.lambda_2 = -1\n"), std::invalid_argument);
}

TEST_CASE("stage schedule: frozen sets and weights") {
  PipelineConfig defaults;  // library budgets
  defaults.planner.d_model = 16;
  defaults.planner.layers = 1;
  defaults.planner.heads = 2;
  defaults.expert.d_model = 16;
  defaults.expert.layers = 1;
  defaults.expert.heads = 2;
  defaults.sync();
  const Model m(defaults);

  const auto s1 = stage_configs(1, m);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].vlm_weights.spatial == 1.0);
  CHECK(s1[0].vlm_weights.language == 0.0);
  CHECK(s1[0].vlm_weights.temporal == 0.0);
  CHECK(s1[0].budget.lr == 2e-5);
  CHECK(s1[0].budget.batch == 64);
  CHECK(has_path_prefix(s1[0].frozen, "planner.backbone"));
  CHECK(has_path_prefix(s1[0].frozen, "expert"));
  for (const auto& p : s1[0].frozen) {
    CHECK_FALSE(nn::path_has_prefix(p, "planner.geometry.adapter"));
    CHECK_FALSE(nn::path_has_prefix(p, "planner.head.spatial"));
  }

  const auto s2 = stage_configs(2, m);
  REQUIRE(s2.size() == 2);
  for (const auto& st : s2) {
    CHECK(st.budget.lr == 1e-5);
    CHECK(st.budget.batch == 32);
    CHECK(has_path_prefix(st.frozen, "planner.vision"));
    CHECK(has_path_prefix(st.frozen, "expert"));
    for (const auto& p : st.frozen) CHECK(p.find(".lora.") == std::string::npos);
  }
  CHECK(has_path_prefix(s2[0].frozen, "planner.head.temporal"));
  CHECK(s2[0].vlm_weights.temporal == 0.0);
  CHECK_FALSE(has_path_prefix(s2[1].frozen, "planner.head.temporal"));
  CHECK(s2[1].vlm_weights.temporal == 5.0);

  const auto s3 = stage_configs(3, m);
  REQUIRE(s3.size() == 1);
  CHECK(s3[0].lambda_vlm == 1.0);
  CHECK(s3[0].lambda_ae == 10.0);
  CHECK(s3[0].budget.batch == 32);
  CHECK(has_path_prefix(s3[0].frozen, "planner.geometry.encoder"));
  CHECK(has_path_prefix(s3[0].frozen, "planner.fusion"));
  CHECK_FALSE(has_path_prefix(s3[0].frozen, "expert"));
  CHECK_FALSE(has_path_prefix(s3[0].frozen, "planner.geometry.adapter"));

  CHECK_THROWS_AS(stage_configs(4, m), std::invalid_argument);

  PipelineConfig instr = defaults;
  instr.expert.conditioning = ae::Conditioning::Instruction;
  const Model mi(instr);
  CHECK(stage_configs(3, mi)[0].lambda_vlm == 0.0);
}

TEST_CASE("run_stage keeps frozen parameters bit-identical and moves the rest") {
  const auto& data = tiny_data();
  Model m(tiny_config());
  for (int stage = 0; stage <= 3; ++stage) {
    for (const auto& st : stage_configs(stage, m)) {
      const auto before = m.params.hash(m.params.trainable_paths());
      std::vector<std::string> trainable;
      for (const auto& p : m.params.paths()) {
        if (m.params.is_buffer(p)) continue;
        if (std::find(st.frozen.begin(), st.frozen.end(), p) == st.frozen.end()) trainable.push_back(p);
      }
      const auto moving_before = m.params.hash(trainable);
      const auto r = run_stage(m, st, data);
      CHECK(r.freeze_ok());
      CHECK(r.curve.size() == st.budget.steps);
      CHECK(m.params.hash(trainable) != moving_before);
      (void)before;
    }
  }

  StageConfig bad = stage_configs(1, m)[0];
  bad.frozen.push_back("planner.no_such_parameter");
  CHECK_THROWS_AS(run_stage(m, bad, data), std::invalid_argument);
  CHECK_THROWS_AS(run_stage(m, stage_configs(1, m)[0], {}), std::invalid_argument);

  auto broken = data;
  broken[0].observations.pop_back();
  CHECK_THROWS_AS(run_stage(m, stage_configs(1, m)[0], broken), std::invalid_argument);
}

TEST_CASE("grounding loss decreases on a small set") {
  auto cfg = tiny_config();
  cfg.train.stage1.steps = 80;
  cfg.train.stage1.batch = 4;
  cfg.train.stage1.lr = 3e-3;
  Model m(cfg);
  const auto r = run_stage(m, stage_configs(1, m)[0], tiny_data());
  std::vector<double> loss;
  for (const auto& p : r.curve) loss.push_back(p.total);
  const auto s = smooth(loss, 20);
  CHECK(s.back() < s[19]);
  CHECK_THROWS_AS(smooth(loss, 0), std::invalid_argument);
}

TEST_CASE("training samples") {
  const auto& data = tiny_data();
  nn::Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto s = draw_planning(data, rng);
    const auto& a = s.record->subtasks[s.subtask];
    CHECK(s.step >= a.segment_begin);
    CHECK((s.step < a.segment_end || a.segment_end == a.segment_begin));
    CHECK(history_before(*s.record, s.subtask).size() == s.subtask);
  }
  const auto& r = data[0];
  const auto chunk = target_chunk(r, r.actions.size() - 2, 5);
  REQUIRE(chunk.size() == 5);
  CHECK(chunk[0] == r.actions[r.actions.size() - 2]);
  CHECK(chunk[1] == r.actions.back());
  for (std::size_t i = 2; i < 5; ++i) {
    CHECK(world::norm(chunk[i].dx) == 0.0);
    CHECK(chunk[i].g == r.actions.back().g);
  }
}

TEST_CASE("evaluation: oracle, replay, random") {
  EvalConfig e;
  e.episodes = 12;
  e.seed = 41;
  e.workers = 2;
  const auto oracle = evaluate(nullptr, PolicyKind::Oracle, e);
  CHECK(oracle.overall.success_rate == 1.0);
  CHECK(oracle.overall.completion_time > 0.0);
  CHECK(oracle.suites.size() == 3);

  const auto& data = tiny_data();
  const auto replay = evaluate(nullptr, PolicyKind::Replay, e, &data);
  CHECK(replay.overall.success_rate == 1.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double annotated = 0.0;
    for (const auto& a : data[i].subtasks) annotated += a.duration;
    CHECK(replay.episodes[i].completion_time == doctest::Approx(annotated).epsilon(1e-12));
  }

  EvalConfig rnd = e;
  rnd.suite = "SequentialGoal";
  rnd.episodes = 40;
  const auto random = evaluate(nullptr, PolicyKind::Random, rnd);
  CHECK(random.overall.success_rate < 0.05);
  for (const auto& ep : random.episodes) CHECK(ep.failure == "budget");

  CHECK_THROWS_AS(evaluate(nullptr, PolicyKind::Model, e), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(nullptr, PolicyKind::Replay, e), std::invalid_argument);
}

TEST_CASE("evaluation is deterministic across worker counts") {
  Model m(tiny_config());
  EvalConfig e = m.cfg.eval;
  e.episodes = 4;
  e.workers = 1;
  const auto a = evaluate(&m, PolicyKind::Model, e);
  e.workers = 3;
  const auto b = evaluate(&m, PolicyKind::Model, e);
  CHECK(episodes_csv(a) == episodes_csv(b));
  CHECK(report_csv(a) == report_csv(b));
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(trajectory_csv(a.episodes[i]) == trajectory_csv(b.episodes[i]));
    double ct = 0.0;
    for (const auto& s : a.episodes[i].trajectory) ct += s.dt;
    CHECK(a.episodes[i].completion_time == doctest::Approx(ct).epsilon(1e-12));
  }
  CHECK(a.overall.success_rate >= 0.0);
  CHECK(a.overall.success_rate <= 1.0);
  const auto specs = eval_episodes(e);
  CHECK(specs[1].seed == nn::mix_seed(e.seed, 1));
  CHECK(specs[0].suite == world::Suite::ObjectRecognition);
  CHECK(specs[1].suite == world::Suite::SequentialGoal);
  CHECK(specs[2].suite == world::Suite::LongHorizon);
}

TEST_CASE("report csv has a fixed header and an all row") {
  const auto r = evaluate(nullptr, PolicyKind::Oracle, EvalConfig{3, 5, "mixed", 400, 60.0, 12, 2.0, 1});
  const auto csv = report_csv(r);
  CHECK(csv.rfind("policy,suite,episodes,successes,success_rate,completion_time\n", 0) == 0);
  CHECK(csv.find("oracle,all,3,3,1,") != std::string::npos);
}

TEST_CASE("trajectory metrics") {
  std::vector<world::Vec3> line;
  for (int i = 0; i < 6; ++i) line.push_back({0.1 + 0.02 * i, 0.2, 0.05});
  const auto m = trajectory_metrics(line, std::vector<double>(5, 0.1));
  CHECK(m.mean_jerk == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.velocity_variance == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.path_length == doctest::Approx(0.1));

  const auto alt = trajectory_metrics(line, {0.1, 0.2, 0.1, 0.2, 0.1});
  CHECK(alt.velocity_variance > 0.0);
  CHECK(alt.mean_jerk == m.mean_jerk);

  std::vector<world::Vec3> bent = line;
  bent[3].y += 0.03;
  const auto b = trajectory_metrics(bent, std::vector<double>(5, 0.1));
  CHECK(b.mean_jerk > 0.0);
  CHECK(b.velocity_variance >= 0.0);

  CHECK_THROWS_AS(trajectory_metrics({line[0], line[1], line[2]}, {0.1, 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(trajectory_metrics(line, {0.1, 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(trajectory_metrics(line, {0.1, 0.0, 0.1, 0.1, 0.1}), std::invalid_argument);
}

TEST_CASE("trajectory export") {
  EvalConfig e;
  e.episodes = 3;
  e.seed = 17;
  const auto specs = eval_episodes(e);
  const auto ep = run_episode(nullptr, PolicyKind::Oracle, specs[2], e);
  REQUIRE(ep.success);
  const auto stem = temp_path("episode2");
  export_trajectory(ep, stem);
  const auto csv = read_file(stem.string() + ".csv");
  const auto svg = read_file(stem.string() + ".svg");
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == ep.steps + 1);

  CHECK(svg.rfind("<?xml", 0) == 0);
  const auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = svg.find(needle); pos != std::string::npos; pos = svg.find(needle, pos + 1)) ++n;
    return n;
  };
  CHECK(count("<svg") == 1);
  CHECK(count("</svg>") == 1);
  CHECK(count("<polyline") == count("/>") - 2);  // rect and circle self-close too
  CHECK(count("<polyline") >= 2);                // one per prompt segment
  CHECK(count("<") == count(">"));

  export_trajectory(ep, stem);
  CHECK(read_file(stem.string() + ".csv") == csv);
  CHECK(read_file(stem.string() + ".svg") == svg);
  CHECK_THROWS(export_trajectory(ep, temp_path("missing_dir") / "x" / "y"));
}

TEST_CASE("model save and load") {
  Model m(tiny_config());
  const auto file = temp_path("tiny.ckpt");
  save_model(m, file);
  const auto back = load_model(file);
  CHECK(back->params.hash_all() == m.params.hash_all());
  CHECK(config_to_text(back->cfg) == config_to_text(m.cfg));

  auto other = tiny_config();
  other.planner.d_model = 8;
  other.sync();
  Model wrong(other);
  CHECK_THROWS_AS(load_weights(wrong, file), std::runtime_error);
}

TEST_CASE("planner initialisation ignores expert settings") {
  auto a = tiny_config();
  auto b = a;
  b.expert.generator = ae::GeneratorMode::Single;
  b.expert.d_model = 8;
  const Model ma(a), mb(b);
  CHECK(ma.params.hash(ma.params.paths_with_prefix("planner")) ==
        mb.params.hash(mb.params.paths_with_prefix("planner")));
  CHECK(planner_stage_key(a) == planner_stage_key(b));
  auto c = a;
  c.planner.mask = vlm::MaskMode::None;
  CHECK(planner_stage_key(a) != planner_stage_key(c));
}

TEST_CASE("ablation variants") {
  const auto base = tiny_config();
  CHECK(ablation_variants(Axis::Attention, base).size() == 3);
  CHECK(ablation_variants(Axis::Modality, base).size() == 3);
  CHECK(ablation_variants(Axis::Framework, base).size() == 4);
  CHECK(ablation_variants(Axis::Granularity, base).size() == 4);
  CHECK(ablation_variants(Axis::Fusion, base).size() == 3);
  const auto fw = ablation_variants(Axis::Framework, base);
  CHECK(fw[1].cfg.expert.generator == ae::GeneratorMode::Single);
  CHECK(fw[2].cfg.expert.conditioning == ae::Conditioning::Instruction);
  CHECK(fw[3].cfg.expert.generator == ae::GeneratorMode::Single);
  CHECK(fw[3].cfg.expert.conditioning == ae::Conditioning::Instruction);
  for (const auto& v : ablation_variants(Axis::Granularity, base)) {
    CHECK(v.cfg.train.seed == base.train.seed);
    CHECK(v.cfg.eval.seed == base.eval.seed);
    CHECK(v.cfg.train.stage3.steps == base.train.stage3.steps);
  }
  CHECK(parse_axis("attention") == Axis::Attention);
  CHECK_FALSE(parse_axis("color").has_value());
}

TEST_CASE("ablation runner caches, flags budget exhaustion") {
  auto base = tiny_config();
  base.train.stage0.steps = 0;
  base.train.stage3.steps = 2;
  base.eval.episodes = 2;
  AblationRunner runner(tiny_data());
  const auto rows = runner.run_axis(Axis::Fusion, base);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK_FALSE(r.partial);
    CHECK(r.episodes == 2);
    CHECK(r.success_rate >= 0.0);
    CHECK(r.success_rate <= 1.0);
  }
  const auto again = runner.run("fusion", ablation_variants(Axis::Fusion, base)[0]);
  CHECK(again.train_seconds == rows[0].train_seconds);
  const auto csv = ablation_csv(rows);
  CHECK(csv.rfind("axis,variant,episodes,successes,success_rate,completion_time,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  AblationRunner tight(tiny_data(), 1e-9);
  const auto partial = tight.run_axis(Axis::Attention, base);
  CHECK_FALSE(partial[0].partial);
  CHECK(partial[1].partial);
  CHECK(partial[2].partial);
}

TEST_CASE("probes report bounded scores") {
  Model m(tiny_config());
  const auto ps = probe_planner(m, tiny_data());
  CHECK(ps.prompts > 0);
  CHECK(ps.token_accuracy >= 0.0);
  CHECK(ps.token_accuracy <= 1.0);
  const auto es = probe_expert(m, tiny_data(), 3, 1);
  CHECK(es.chunks == 3);
  CHECK(std::isfinite(es.chunk_error));
}
