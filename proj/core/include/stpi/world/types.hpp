#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stpi::world {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

double norm(const Vec3& v);
double horizontal_distance(const Vec3& a, const Vec3& b);

// Axis-aligned box, center + full extent, metres.
struct Box {
  Vec3 center;
  Vec3 extent;

  bool contains(const Vec3& p) const;
  bool contains_xy(const Vec3& p) const;
  bool intersects(const Box& other) const;
  std::array<double, 6> flat() const;
  static Box from_flat(const double* v);
  friend bool operator==(const Box&, const Box&) = default;
};

enum class Suite { ObjectRecognition, SequentialGoal, LongHorizon };
enum class Speed { Fast, Medium, Slow };
enum class Color { Red, Green, Blue, Yellow, Purple, Orange };
enum class Shape { Cube, Block };
enum class Region { TrayLeft, TrayRight, Bowl, ZoneFront };

inline constexpr int kColorCount = 6;
inline constexpr int kShapeCount = 2;
inline constexpr int kRegionCount = 4;
inline constexpr int kClassCount = kColorCount * kShapeCount;

std::string suite_name(Suite s);
std::optional<Suite> parse_suite(const std::string& s);
std::string speed_name(Speed s);

// Objects are referred to by (color, shape); layouts keep that pair unique.
struct ObjectRef {
  Color color = Color::Red;
  Shape shape = Shape::Cube;

  int class_index() const { return static_cast<int>(color) * kShapeCount + static_cast<int>(shape); }
  friend bool operator==(const ObjectRef&, const ObjectRef&) = default;
};

struct ObjectState {
  int id = 0;
  ObjectRef ref;
  Vec3 position;  // center
  double yaw = 0.0;
  Vec3 extent;
  friend bool operator==(const ObjectState&, const ObjectState&) = default;

  double top() const { return position.z + extent.z / 2.0; }
  double bottom() const { return position.z - extent.z / 2.0; }
};

// Every constant the world needs. The defaults are the values the rest of the
// code base is tuned against.
struct WorldConfig {
  Vec3 workspace_min{0.0, 0.0, 0.0};
  Vec3 workspace_max{0.8, 0.8, 0.3};
  int grid_size = 32;
  int max_objects = 6;
  double max_step = 0.05;     // per-component |dx| bound
  double max_yaw_step = 0.3;  // |dtheta| bound
  double dt_min = 0.02;
  double dt_max = 0.5;
  double aperture_rate = 0.5;
  double reach_tolerance = 0.025;
  double grasp_radius = 0.035;
  double push_radius = 0.035;
  double clearance = 0.04;
  double retreat = 0.08;
  double place_drop = 0.02;
  int object_min[3] = {2, 3, 4};  // per suite
  int object_max[3] = {5, 5, 6};

  Box workspace() const;
  double dt_for(Speed s) const;
};

struct EpisodeState {
  Vec3 gripper;
  double gripper_yaw = 0.0;
  double aperture = 1.0;
  std::optional<int> held;
  std::vector<ObjectState> objects;
  double time = 0.0;
  std::size_t steps = 0;
  friend bool operator==(const EpisodeState&, const EpisodeState&) = default;

  const ObjectState* find(const ObjectRef& ref) const;
  ObjectState* find(const ObjectRef& ref);
  const ObjectState& object(int id) const;
};

inline constexpr std::size_t kActionDim = 6;

struct ActionStep {
  Vec3 dx;
  double dyaw = 0.0;
  double g = 1.0;
  double dt = 0.1;

  std::array<double, kActionDim> flat() const { return {dx.x, dx.y, dx.z, dyaw, g, dt}; }
  static ActionStep from_flat(const double* v) { return {{v[0], v[1], v[2]}, v[3], v[4], v[5]}; }
  friend bool operator==(const ActionStep&, const ActionStep&) = default;
};

enum class Verb { Reach, Grasp, Transport, Release, Push };

// Where a transport or push ends: a named region or on top of another object.
struct Destination {
  std::optional<Region> region;
  std::optional<ObjectRef> onto;
  friend bool operator==(const Destination&, const Destination&) = default;
};

struct SubTask {
  Verb verb = Verb::Reach;
  ObjectRef object;
  Destination dest;
  friend bool operator==(const SubTask&, const SubTask&) = default;
};

struct SubTaskAnnotation {
  SubTask task;
  std::vector<int> description;  // token ids, eos-terminated
  Box box;
  double duration = 0.0;
  std::size_t segment_begin = 0;
  std::size_t segment_end = 0;
};

enum class TaskKind { Put, Touch, PutThenPut, PushTo, TouchSequence, Stack };

// Goal parameters: `objects` in the order the instruction names them;
// `regions` aligned with put/push targets.
struct TaskSpec {
  Suite suite = Suite::ObjectRecognition;
  TaskKind kind = TaskKind::Touch;
  Speed speed = Speed::Medium;
  std::vector<ObjectRef> objects;
  std::vector<Region> regions;
  std::vector<int> instruction;
};

struct RawObservation {
  std::vector<double> grid;      // G*G, row-major, row index along y
  std::vector<double> geometry;  // max_objects * kGeometryDims
  std::vector<double> proprio;   // kProprioDims
  double t = 0.0;
};

inline constexpr std::size_t kGeometryDims = 15;  // pos3, extent3, yaw, color one-hot 6, shape one-hot 2
inline constexpr std::size_t kProprioDims = 6;   // pos3, yaw, aperture, holding

}  // namespace stpi::world
