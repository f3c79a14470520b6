#include "stpi/world/vocab.hpp"

#include <array>
#include <stdexcept>

namespace stpi::world {

namespace {

const std::array<std::string, kVocabSize>& names() {
  static const std::array<std::string, kVocabSize> table = {
      "<pad>", "<eos>",  "done",   "reach",     "grasp",      "transport", "release", "push",
      "put",   "in",     "on",     "then",      "touch",      "stack",     "to",      "locate",
      "red",   "green",  "blue",   "yellow",    "purple",     "orange",    "cube",    "block",
      "tray_left", "tray_right", "bowl", "zone_front", "fast", "medium",   "slow"};
  return table;
}

bool is_color(int t) { return t >= tok::ColorBase && t < tok::ColorBase + kColorCount; }
bool is_shape(int t) { return t >= tok::ShapeBase && t < tok::ShapeBase + kShapeCount; }
bool is_region(int t) { return t >= tok::RegionBase && t < tok::RegionBase + kRegionCount; }

ObjectRef ref_from(int c, int s) {
  return {static_cast<Color>(c - tok::ColorBase), static_cast<Shape>(s - tok::ShapeBase)};
}

void push_ref(std::vector<int>& out, const ObjectRef& r) {
  out.push_back(color_token(r.color));
  out.push_back(shape_token(r.shape));
}

}  // namespace

const std::string& token_name(int id) {
  if (id < 0 || id >= static_cast<int>(kVocabSize)) throw std::out_of_range("token id " + std::to_string(id));
  return names()[static_cast<std::size_t>(id)];
}

std::optional<int> token_id(const std::string& name) {
  for (std::size_t i = 0; i < kVocabSize; ++i)
    if (names()[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) {
    if (t == tok::Pad) continue;
    if (!out.empty()) out += ' ';
    out += token_name(t);
  }
  return out;
}

int color_token(Color c) { return tok::ColorBase + static_cast<int>(c); }
int shape_token(Shape s) { return tok::ShapeBase + static_cast<int>(s); }
int region_token(Region r) { return tok::RegionBase + static_cast<int>(r); }
int speed_token(Speed s) { return tok::SpeedBase + static_cast<int>(s); }
int verb_token(Verb v) { return tok::VerbBase + static_cast<int>(v); }

std::vector<int> describe(const SubTask& t) {
  std::vector<int> out{verb_token(t.verb)};
  push_ref(out, t.object);
  if (t.verb == Verb::Transport || t.verb == Verb::Push) {
    if (t.dest.region) {
      out.push_back(region_token(*t.dest.region));
    } else if (t.dest.onto) {
      push_ref(out, *t.dest.onto);
    } else {
      throw std::invalid_argument("transport/push without destination");
    }
  }
  out.push_back(tok::Eos);
  return out;
}

std::vector<int> done_description() { return {tok::Done, tok::Eos}; }

std::optional<ParsedDescription> parse_description(const std::vector<int>& tokens) {
  std::size_t n = 0;
  while (n < tokens.size() && tokens[n] != tok::Eos) ++n;
  if (n == tokens.size()) return std::nullopt;
  for (std::size_t i = n + 1; i < tokens.size(); ++i)
    if (tokens[i] != tok::Pad) return std::nullopt;
  const std::vector<int> body(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));

  ParsedDescription out;
  if (body.size() == 1 && body[0] == tok::Done) {
    out.done = true;
    return out;
  }
  if (body.size() < 3) return std::nullopt;
  const int v = body[0] - tok::VerbBase;
  if (v < 0 || v > static_cast<int>(Verb::Push)) return std::nullopt;
  if (!is_color(body[1]) || !is_shape(body[2])) return std::nullopt;
  out.task.verb = static_cast<Verb>(v);
  out.task.object = ref_from(body[1], body[2]);
  const bool needs_dest = out.task.verb == Verb::Transport || out.task.verb == Verb::Push;
  if (!needs_dest) return body.size() == 3 ? std::optional(out) : std::nullopt;
  if (body.size() == 4 && is_region(body[3])) {
    out.task.dest.region = static_cast<Region>(body[3] - tok::RegionBase);
    return out;
  }
  if (out.task.verb == Verb::Transport && body.size() == 5 && is_color(body[3]) && is_shape(body[4])) {
    out.task.dest.onto = ref_from(body[3], body[4]);
    return out;
  }
  return std::nullopt;
}

std::vector<int> instruction_tokens(TaskKind kind, const std::vector<ObjectRef>& objects,
                                    const std::vector<Region>& regions, Speed speed) {
  std::vector<int> out;
  auto need = [&](std::size_t n_obj, std::size_t n_reg) {
    if (objects.size() < n_obj || regions.size() < n_reg) throw std::invalid_argument("instruction arguments");
  };
  switch (kind) {
    case TaskKind::Put:
      need(1, 1);
      out = {tok::Put};
      push_ref(out, objects[0]);
      out.push_back(tok::In);
      out.push_back(region_token(regions[0]));
      break;
    case TaskKind::PutThenPut:
      need(2, 2);
      for (std::size_t i = 0; i < 2; ++i) {
        if (i) out.push_back(tok::Then);
        out.push_back(tok::Put);
        push_ref(out, objects[i]);
        out.push_back(tok::In);
        out.push_back(region_token(regions[i]));
      }
      break;
    case TaskKind::PushTo:
      need(1, 1);
      out = {verb_token(Verb::Push)};
      push_ref(out, objects[0]);
      out.push_back(tok::To);
      out.push_back(region_token(regions[0]));
      break;
    case TaskKind::Touch:
    case TaskKind::TouchSequence:
      need(1, 0);
      out = {tok::Touch};
      for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i) out.push_back(tok::Then);
        push_ref(out, objects[i]);
      }
      break;
    case TaskKind::Stack:
      need(2, 0);
      out = {tok::Stack};
      for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i) out.push_back(tok::On);
        push_ref(out, objects[i]);
      }
      break;
  }
  out.push_back(speed_token(speed));
  if (out.size() > kMaxInstruction) throw std::invalid_argument("instruction longer than the token budget");
  return out;
}

std::vector<int> locate_instruction(const ObjectRef& ref) {
  std::vector<int> out{tok::Locate};
  push_ref(out, ref);
  return out;
}

}  // namespace stpi::world
