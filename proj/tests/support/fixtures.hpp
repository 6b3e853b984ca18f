#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "drivestyle/synthetic.hpp"
#include "drivestyle/trajdata.hpp"

namespace fixtures {

// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("drivestyle-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Lead and ego both cruising at `speed` with the given bumper gap.
inline drivestyle::CarFollowingEvent cruise_event(const std::string& id, double speed, double gap, std::size_t frames,
                                                  double dt = 0.1) {
  drivestyle::CarFollowingEvent ev;
  ev.event_id = id;
  ev.dt = dt;
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) * dt;
    drivestyle::Frame f;
    f.t = t;
    f.ego_x = speed * t;
    f.ego_v = speed;
    f.lead_x = f.ego_x + gap + ev.lead_length;
    f.lead_v = speed;
    ev.frames.push_back(f);
  }
  return ev;
}

inline drivestyle::Dataset synthetic(std::size_t n, std::uint64_t seed, double horizon = 30.0) {
  drivestyle::SyntheticConfig cfg;
  cfg.n_events = n;
  cfg.dt = 0.1;
  cfg.horizon = horizon;
  cfg.style_seed = seed;
  return drivestyle::generate_synthetic(cfg);
}

}  // namespace fixtures
