#include "stpi/harness/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace stpi::harness {

TrajectoryMetrics trajectory_metrics(const std::vector<world::Vec3>& p, const std::vector<double>& dts) {
  if (p.size() < 4) throw std::invalid_argument("trajectory_metrics: need at least 4 poses");
  if (dts.size() + 1 != p.size()) throw std::invalid_argument("trajectory_metrics: need one dt per step");
  TrajectoryMetrics m;
  std::vector<double> speed;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double len = world::norm(p[i] - p[i - 1]);
    if (!(dts[i - 1] > 0.0)) throw std::invalid_argument("trajectory_metrics: non-positive dt");
    m.path_length += len;
    speed.push_back(len / dts[i - 1]);
  }
  for (std::size_t i = 3; i < p.size(); ++i) {
    const world::Vec3 j = p[i] - p[i - 1] * 3.0 + p[i - 2] * 3.0 - p[i - 3];
    m.mean_jerk += world::norm(j);
  }
  m.mean_jerk /= static_cast<double>(p.size() - 3);
  double mean = 0.0;
  for (double v : speed) mean += v;
  mean /= static_cast<double>(speed.size());
  for (double v : speed) m.velocity_variance += (v - mean) * (v - mean);
  m.velocity_variance /= static_cast<double>(speed.size());
  return m;
}

TrajectoryMetrics trajectory_metrics(const EpisodeResult& e) {
  std::vector<world::Vec3> p{e.start};
  std::vector<double> dts;
  for (const auto& s : e.trajectory) {
    p.push_back(s.position);
    dts.push_back(s.dt);
  }
  return trajectory_metrics(p, dts);
}

std::string trajectory_csv(const EpisodeResult& e) {
  std::ostringstream os;
  os << std::setprecision(10) << "t,x,y,z,yaw,g,dt,prompt\n";
  for (const auto& s : e.trajectory)
    os << s.t << ',' << s.position.x << ',' << s.position.y << ',' << s.position.z << ',' << s.yaw << ',' << s.g << ','
       << s.dt << ',' << s.prompt << '\n';
  return os.str();
}

std::string trajectory_svg(const EpisodeResult& e) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const world::WorldConfig wc;
  constexpr double kPx = 500.0;
  const double sx = kPx / (wc.workspace_max.x - wc.workspace_min.x);
  const double sy = kPx / (wc.workspace_max.y - wc.workspace_min.y);
  const auto X = [&](double x) { return (x - wc.workspace_min.x) * sx; };
  const auto Y = [&](double y) { return kPx - (y - wc.workspace_min.y) * sy; };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPx << "\" height=\"" << kPx << "\" viewBox=\"0 0 "
     << kPx << ' ' << kPx << "\">\n"
     << "  <rect x=\"0\" y=\"0\" width=\"" << kPx << "\" height=\"" << kPx << "\" fill=\"white\" stroke=\"black\"/>\n";
  world::Vec3 prev = e.start;
  std::size_t i = 0;
  while (i < e.trajectory.size()) {
    const std::size_t k = e.trajectory[i].prompt;
    os << "  <polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << palette[k % 10] << "\" points=\"" << X(prev.x)
       << ',' << Y(prev.y);
    for (; i < e.trajectory.size() && e.trajectory[i].prompt == k; ++i) {
      prev = e.trajectory[i].position;
      os << ' ' << X(prev.x) << ',' << Y(prev.y);
    }
    os << "\"/>\n";
  }
  os << "  <circle cx=\"" << X(e.start.x) << "\" cy=\"" << Y(e.start.y) << "\" r=\"4\" fill=\"black\"/>\n</svg>\n";
  return os.str();
}

void export_trajectory(const EpisodeResult& e, const std::filesystem::path& stem) {
  for (const auto& [ext, body] : {std::pair{".csv", trajectory_csv(e)}, std::pair{".svg", trajectory_svg(e)}}) {
    const auto path = std::filesystem::path(stem.string() + ext);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
}

}  // namespace stpi::harness
