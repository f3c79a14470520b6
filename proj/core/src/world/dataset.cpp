#include "stpi/world/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stpi/nn/random.hpp"
#include "stpi/world/dynamics.hpp"
#include "stpi/world/oracle.hpp"
#include "stpi/world/render.hpp"
#include "stpi/world/tasks.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::world {

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json ref_json(const ObjectRef& r) {
  return {{"color", token_name(color_token(r.color))}, {"shape", token_name(shape_token(r.shape))}};
}

ObjectRef ref_from(const json& j) {
  const auto c = token_id(j.at("color").get<std::string>());
  const auto s = token_id(j.at("shape").get<std::string>());
  if (!c || !s) throw std::runtime_error("dataset: unknown object reference");
  return {static_cast<Color>(*c - tok::ColorBase), static_cast<Shape>(*s - tok::ShapeBase)};
}

const char* kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Put: return "put";
    case TaskKind::Touch: return "touch";
    case TaskKind::PutThenPut: return "put_then_put";
    case TaskKind::PushTo: return "push_to";
    case TaskKind::TouchSequence: return "touch_sequence";
    case TaskKind::Stack: return "stack";
  }
  return "?";
}

TaskKind kind_from(const std::string& s) {
  for (TaskKind k : {TaskKind::Put, TaskKind::Touch, TaskKind::PutThenPut, TaskKind::PushTo, TaskKind::TouchSequence,
                     TaskKind::Stack})
    if (s == kind_name(k)) return k;
  throw std::runtime_error("dataset: unknown task kind " + s);
}

json box_json(const Box& b) {
  const auto f = b.flat();
  return json(std::vector<double>(f.begin(), f.end()));
}

Box box_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 6) throw std::runtime_error("dataset: box needs 6 values");
  return Box::from_flat(v.data());
}

}  // namespace

std::vector<std::pair<Suite, double>> parse_suite_mix(const std::string& text) {
  if (text == "mixed" || text.empty()) return DatasetConfig{}.mix;
  std::vector<std::pair<Suite, double>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    const auto suite = parse_suite(name);
    if (!suite) throw std::invalid_argument("unknown suite '" + name + "'");
    const double w = colon == std::string::npos ? 1.0 : std::stod(item.substr(colon + 1));
    if (!(w > 0.0)) throw std::invalid_argument("suite weight must be positive");
    out.emplace_back(*suite, w);
  }
  if (out.empty()) throw std::invalid_argument("empty suite mix");
  return out;
}

std::optional<EpisodeRecord> generate_episode(std::uint64_t seed, Suite suite, const WorldConfig& cfg) {
  EpisodeRecord r;
  r.seed = seed;
  r.spec = sample_task(seed, suite);
  r.initial = spawn_episode(seed, r.spec, cfg);
  Demonstration demo;
  try {
    demo = demonstrate_task(r.spec, r.initial, cfg);
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }
  r.subtasks = std::move(demo.subtasks);
  r.actions = std::move(demo.actions);
  for (const auto& s : demo.states) {
    if (!within_bounds(s, cfg)) return std::nullopt;
    r.observations.push_back(render_observation(s, cfg));
  }
  if (!replay_check(r, cfg)) return std::nullopt;
  return r;
}

std::vector<EpisodeRecord> generate_records(const DatasetConfig& config, const WorldConfig& cfg) {
  if (config.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (config.mix.empty()) throw std::invalid_argument("empty suite mix");
  double total = 0.0;
  for (const auto& [_, w] : config.mix) total += w;
  std::vector<EpisodeRecord> out;
  for (std::size_t i = 0; i < config.episodes; ++i) {
    nn::Rng pick(nn::mix_seed(config.seed, 0x51e7 + i));
    double u = pick.uniform(0.0, total);
    Suite suite = config.mix.back().first;
    for (const auto& [s, w] : config.mix) {
      if (u < w) {
        suite = s;
        break;
      }
      u -= w;
    }
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt >= 1024) throw std::runtime_error("oracle failed on 1024 consecutive layouts");
      auto rec = generate_episode(nn::mix_seed(config.seed, i * 1024 + attempt), suite, cfg);
      if (rec) {
        rec->index = i;
        out.push_back(std::move(*rec));
        break;
      }
    }
  }
  return out;
}

std::string record_to_line(const EpisodeRecord& r) {
  json j;
  j["version"] = kDatasetVersion;
  j["episode"] = r.index;
  j["seed"] = r.seed;
  j["suite"] = suite_name(r.spec.suite);
  j["task"] = {{"kind", kind_name(r.spec.kind)},
               {"speed", speed_name(r.spec.speed)},
               {"instruction", r.spec.instruction},
               {"instruction_text", detokenize(r.spec.instruction)}};
  json objs = json::array();
  for (const auto& o : r.spec.objects) objs.push_back(ref_json(o));
  j["task"]["objects"] = objs;
  json regions = json::array();
  for (const auto& g : r.spec.regions) regions.push_back(region_name(g));
  j["task"]["regions"] = regions;

  json layout = json::array();
  for (const auto& o : r.initial.objects)
    layout.push_back({{"id", o.id},
                      {"ref", ref_json(o.ref)},
                      {"position", vec_json(o.position)},
                      {"yaw", o.yaw},
                      {"extent", vec_json(o.extent)}});
  j["initial"] = {{"gripper", vec_json(r.initial.gripper)},
                  {"gripper_yaw", r.initial.gripper_yaw},
                  {"aperture", r.initial.aperture},
                  {"time", r.initial.time},
                  {"objects", layout}};

  json subs = json::array();
  for (const auto& a : r.subtasks)
    subs.push_back({{"description", a.description},
                    {"description_text", detokenize(a.description)},
                    {"box", box_json(a.box)},
                    {"duration", a.duration},
                    {"segment", {a.segment_begin, a.segment_end}}});
  j["subtasks"] = subs;

  json acts = json::array();
  for (const auto& a : r.actions)
    acts.push_back({{"dx", vec_json(a.dx)}, {"dtheta", a.dyaw}, {"g", a.g}, {"dt", a.dt}});
  j["actions"] = acts;

  json obs = json::array();
  for (const auto& o : r.observations) {
    json runs = json::array();
    for (const auto& [v, n] : rle_encode(o.grid)) runs.push_back({v, n});
    obs.push_back({{"t", o.t}, {"proprio", o.proprio}, {"geometry", o.geometry}, {"grid_rle", runs}});
  }
  j["observations"] = obs;
  return j.dump();
}

EpisodeRecord record_from_line(const std::string& line) {
  const json j = json::parse(line);
  if (!j.contains("version")) throw std::runtime_error("dataset: record without version");
  if (j.at("version").get<int>() != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(j.at("version").get<int>()));
  EpisodeRecord r;
  r.index = j.at("episode").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto suite = parse_suite(j.at("suite").get<std::string>());
  if (!suite) throw std::runtime_error("dataset: unknown suite");
  r.spec.suite = *suite;
  const json& t = j.at("task");
  r.spec.kind = kind_from(t.at("kind").get<std::string>());
  const std::string speed = t.at("speed").get<std::string>();
  r.spec.speed = speed == "fast" ? Speed::Fast : speed == "slow" ? Speed::Slow : Speed::Medium;
  r.spec.instruction = t.at("instruction").get<std::vector<int>>();
  for (const auto& o : t.at("objects")) r.spec.objects.push_back(ref_from(o));
  for (const auto& g : t.at("regions")) {
    const auto id = token_id(g.get<std::string>());
    if (!id) throw std::runtime_error("dataset: unknown region");
    r.spec.regions.push_back(static_cast<Region>(*id - tok::RegionBase));
  }

  const json& init = j.at("initial");
  r.initial.gripper = vec_from(init.at("gripper"));
  r.initial.gripper_yaw = init.at("gripper_yaw").get<double>();
  r.initial.aperture = init.at("aperture").get<double>();
  r.initial.time = init.at("time").get<double>();
  for (const auto& o : init.at("objects")) {
    ObjectState s;
    s.id = o.at("id").get<int>();
    s.ref = ref_from(o.at("ref"));
    s.position = vec_from(o.at("position"));
    s.yaw = o.at("yaw").get<double>();
    s.extent = vec_from(o.at("extent"));
    r.initial.objects.push_back(s);
  }

  const auto tasks = expand_task(r.spec);
  const json& subs = j.at("subtasks");
  if (subs.size() != tasks.size()) throw std::runtime_error("dataset: sub-task count does not match the task");
  for (std::size_t i = 0; i < subs.size(); ++i) {
    SubTaskAnnotation a;
    a.task = tasks[i];
    a.description = subs[i].at("description").get<std::vector<int>>();
    a.box = box_from(subs[i].at("box"));
    a.duration = subs[i].at("duration").get<double>();
    a.segment_begin = subs[i].at("segment").at(0).get<std::size_t>();
    a.segment_end = subs[i].at("segment").at(1).get<std::size_t>();
    r.subtasks.push_back(std::move(a));
  }
  for (const auto& a : j.at("actions"))
    r.actions.push_back({vec_from(a.at("dx")), a.at("dtheta").get<double>(), a.at("g").get<double>(),
                         a.at("dt").get<double>()});
  for (const auto& o : j.at("observations")) {
    RawObservation obs;
    obs.t = o.at("t").get<double>();
    obs.proprio = o.at("proprio").get<std::vector<double>>();
    obs.geometry = o.at("geometry").get<std::vector<double>>();
    std::vector<std::pair<double, std::size_t>> runs;
    for (const auto& run : o.at("grid_rle")) runs.emplace_back(run.at(0).get<double>(), run.at(1).get<std::size_t>());
    obs.grid = rle_decode(runs);
    r.observations.push_back(std::move(obs));
  }
  return r;
}

void write_dataset(const std::filesystem::path& path, const std::vector<EpisodeRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << record_to_line(r) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<EpisodeRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::size_t generate_dataset(const DatasetConfig& config, const std::filesystem::path& path, const WorldConfig& cfg) {
  const auto records = generate_records(config, cfg);
  write_dataset(path, records);
  return records.size();
}

std::vector<std::string> validate_record(const EpisodeRecord& r, const WorldConfig& cfg) {
  std::vector<std::string> errors;
  std::size_t cursor = 0;
  const Box ws = cfg.workspace();
  for (std::size_t k = 0; k < r.subtasks.size(); ++k) {
    const auto& a = r.subtasks[k];
    const std::string where = "sub-task " + std::to_string(k) + ": ";
    if (a.segment_begin != cursor) errors.push_back(where + "segment does not start where the previous ended");
    if (a.segment_end <= a.segment_begin) errors.push_back(where + "empty segment");
    if (a.segment_end > r.actions.size()) {
      errors.push_back(where + "segment past the last action");
      break;
    }
    double sum = 0.0;
    for (std::size_t i = a.segment_begin; i < a.segment_end; ++i) sum += r.actions[i].dt;
    if (std::abs(sum - a.duration) > 1e-9) errors.push_back(where + "duration differs from the segment dt sum");
    if (!a.box.intersects(ws)) errors.push_back(where + "target box misses the workspace");
    const auto parsed = parse_description(a.description);
    if (!parsed || parsed->done || parsed->task.verb != a.task.verb || !(parsed->task.object == a.task.object) ||
        describe(parsed->task) != a.description)
      errors.push_back(where + "description outside the grammar");
    cursor = a.segment_end;
  }
  if (cursor != r.actions.size()) errors.push_back("segments do not cover every action");
  if (r.observations.size() != r.actions.size() + 1) errors.push_back("observation count is not actions + 1");
  for (const auto& a : r.actions) {
    try {
      validate_action(a, cfg);
    } catch (const std::exception& e) {
      errors.push_back(std::string("action out of bounds: ") + e.what());
      break;
    }
  }
  bool speed_token_found = false;
  for (int t : r.spec.instruction)
    if (t == speed_token(r.spec.speed)) speed_token_found = true;
  if (!speed_token_found) errors.push_back("instruction lacks the speed descriptor");
  return errors;
}

bool replay_check(const EpisodeRecord& r, const WorldConfig& cfg) {
  EpisodeState s = r.initial;
  TaskProgress progress(r.spec, cfg);
  std::size_t step = 0;
  for (const auto& a : r.subtasks) {
    for (; step < a.segment_end && step < r.actions.size(); ++step) {
      s = step_dynamics(s, r.actions[step], cfg);
      if (!within_bounds(s, cfg)) return false;
      const bool done = progress.update(s);
      if (done && step + 1 < r.actions.size()) return false;
    }
    if (!check_subgoal(s, a, cfg)) return false;
  }
  return progress.success() && step == r.actions.size();
}

}  // namespace stpi::world
