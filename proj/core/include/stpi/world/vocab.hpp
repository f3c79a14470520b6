#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stpi/world/types.hpp"

namespace stpi::world {

namespace tok {
inline constexpr int Pad = 0;
inline constexpr int Eos = 1;
inline constexpr int Done = 2;
inline constexpr int VerbBase = 3;  // reach grasp transport release push
inline constexpr int Put = 8;
inline constexpr int In = 9;
inline constexpr int On = 10;
inline constexpr int Then = 11;
inline constexpr int Touch = 12;
inline constexpr int Stack = 13;
inline constexpr int To = 14;
inline constexpr int Locate = 15;
inline constexpr int ColorBase = 16;
inline constexpr int ShapeBase = ColorBase + kColorCount;
inline constexpr int RegionBase = ShapeBase + kShapeCount;
inline constexpr int SpeedBase = RegionBase + kRegionCount;
inline constexpr int Count = SpeedBase + 3;
}  // namespace tok

inline constexpr std::size_t kVocabSize = tok::Count;
inline constexpr std::size_t kMaxDescription = 7;
inline constexpr std::size_t kMaxInstruction = 20;

const std::string& token_name(int id);
std::optional<int> token_id(const std::string& name);
std::string detokenize(const std::vector<int>& tokens);

int color_token(Color c);
int shape_token(Shape s);
int region_token(Region r);
int speed_token(Speed s);
int verb_token(Verb v);

std::vector<int> describe(const SubTask& t);
std::vector<int> done_description();

struct ParsedDescription {
  bool done = false;
  SubTask task;
};

// Inverse of describe(); returns nothing for sequences outside the grammar.
// Trailing pads after eos are accepted.
std::optional<ParsedDescription> parse_description(const std::vector<int>& tokens);

std::vector<int> instruction_tokens(TaskKind kind, const std::vector<ObjectRef>& objects,
                                    const std::vector<Region>& regions, Speed speed);

std::vector<int> locate_instruction(const ObjectRef& ref);

}  // namespace stpi::world
