#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drivestyle/error.hpp"
#include "drivestyle/numeric.hpp"

namespace drivestyle {

inline constexpr double kDefaultLeadLength = 4.5;
inline constexpr double kDtTolerance = 1e-9;

struct Frame {
  double t = 0.0;
  double lead_x = 0.0;
  double lead_v = 0.0;
  double ego_x = 0.0;
  double ego_v = 0.0;

  bool operator==(const Frame&) const = default;
};

// One recorded lead/ego trajectory pair sampled at a uniform step.
struct CarFollowingEvent {
  std::string event_id;
  double dt = 0.1;
  std::vector<Frame> frames;
  double lead_length = kDefaultLeadLength;

  // Bumper-to-bumper spacing at frame i.
  double gap_at(std::size_t i) const {
    const Frame& f = frames.at(i);
    return f.lead_x - lead_length - f.ego_x;
  }
  double duration() const { return frames.empty() ? 0.0 : frames.back().t - frames.front().t; }

  bool operator==(const CarFollowingEvent&) const = default;
};

enum class SplitTag { kTrain, kTest, kAll };

inline const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kTest: return "test";
    case SplitTag::kAll: return "all";
  }
  return "all";
}

struct Dataset {
  std::vector<CarFollowingEvent> events;
  SplitTag split_tag = SplitTag::kAll;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  const CarFollowingEvent* find(const std::string& id) const {
    auto it = std::find_if(events.begin(), events.end(),
                           [&](const CarFollowingEvent& e) { return e.event_id == id; });
    return it == events.end() ? nullptr : &*it;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.event_id);
    return out;
  }

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.frames.size();
    return n;
  }

  // Stable identifier of the membership, used to tag statistics reports.
  std::string fingerprint() const {
    std::string joined;
    for (const auto& e : events) {
      joined += e.event_id;
      joined += '\n';
    }
    std::ostringstream os;
    os << to_string(split_tag) << '-' << events.size() << '-' << std::hex << fnv1a64(joined);
    return os.str();
  }

  bool operator==(const Dataset&) const = default;
};

// Checks the event invariants; throws DataError describing the first violation.
inline void validate_event(const CarFollowingEvent& ev) {
  const std::string where = "event '" + ev.event_id + "'";
  if (ev.event_id.empty()) throw DataError("event with empty id");
  if (ev.frames.empty()) throw DataError(where + ": no frames");
  if (!(ev.dt > 0.0) || !std::isfinite(ev.dt)) throw DataError(where + ": dt must be > 0");
  if (!(ev.lead_length > 0.0)) throw DataError(where + ": lead_length must be > 0");
  for (std::size_t i = 0; i < ev.frames.size(); ++i) {
    const Frame& f = ev.frames[i];
    if (!std::isfinite(f.t) || !std::isfinite(f.lead_x) || !std::isfinite(f.lead_v) ||
        !std::isfinite(f.ego_x) || !std::isfinite(f.ego_v)) {
      throw DataError(where + ": non-finite value at frame " + std::to_string(i));
    }
    if (f.lead_v < 0.0 || f.ego_v < 0.0) {
      throw DataError(where + ": negative speed at frame " + std::to_string(i));
    }
    if (i > 0 && std::abs((f.t - ev.frames[i - 1].t) - ev.dt) > kDtTolerance) {
      throw DataError(where + ": non-uniform time step at frame " + std::to_string(i));
    }
  }
  if (!(ev.gap_at(0) > 0.0)) throw DataError(where + ": collision at frame 0");
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cols;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Parses the canonical CSV format:
//   event_id,t,lead_x,lead_v,ego_x,ego_v[,lead_length]
// One row per frame, rows of an event contiguous. `source` names the input in
// error messages. Every error message carries the offending line number.
inline Dataset parse_events_csv(std::istream& in, const std::string& source = "<stream>") {
  static constexpr std::string_view kHeader6 = "event_id,t,lead_x,lead_v,ego_x,ego_v";
  static constexpr std::string_view kHeader7 = "event_id,t,lead_x,lead_v,ego_x,ego_v,lead_length";

  auto fail = [&](std::size_t line_no, const std::string& msg) -> DataError {
    return DataError(source + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  ++line_no;
  std::string_view header = detail::trim(line);
  if (header.size() >= 3 && static_cast<unsigned char>(header[0]) == 0xEF &&
      static_cast<unsigned char>(header[1]) == 0xBB && static_cast<unsigned char>(header[2]) == 0xBF) {
    header.remove_prefix(3);
  }
  bool has_length = false;
  if (header == kHeader7) {
    has_length = true;
  } else if (header != kHeader6) {
    throw fail(line_no, "unexpected header '" + std::string(header) + "'");
  }
  const std::size_t ncols = has_length ? 7 : 6;

  Dataset ds;
  std::unordered_set<std::string> seen;
  double last_dt = 0.1;
  std::size_t event_start_line = 0;

  auto finish_event = [&]() {
    if (ds.events.empty()) return;
    auto& ev = ds.events.back();
    if (ev.frames.size() >= 2) {
      ev.dt = ev.frames[1].t - ev.frames[0].t;
      last_dt = ev.dt;
    } else {
      ev.dt = last_dt;
    }
    if (!(ev.dt > 0.0)) throw fail(event_start_line + 1, "event '" + ev.event_id + "': t not increasing");
    for (std::size_t i = 1; i < ev.frames.size(); ++i) {
      if (std::abs((ev.frames[i].t - ev.frames[i - 1].t) - ev.dt) > kDtTolerance) {
        throw fail(event_start_line + i, "event '" + ev.event_id + "': non-uniform dt (gap in t)");
      }
    }
    if (!(ev.gap_at(0) > 0.0)) throw fail(event_start_line, "event '" + ev.event_id + "': collision at first frame");
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::trim(line);
    if (row.empty()) continue;
    const auto cols = detail::split_csv_line(row);
    if (cols.size() != ncols) {
      throw fail(line_no, "expected " + std::to_string(ncols) + " columns, got " + std::to_string(cols.size()));
    }
    const std::string id(detail::trim(cols[0]));
    if (id.empty()) throw fail(line_no, "empty event_id");
    double vals[6] = {0, 0, 0, 0, 0, kDefaultLeadLength};
    for (std::size_t c = 1; c < ncols; ++c) {
      if (!parse_double(detail::trim(cols[c]), vals[c - 1]) || !std::isfinite(vals[c - 1])) {
        throw fail(line_no, "malformed number in column " + std::to_string(c + 1));
      }
    }
    Frame fr{vals[0], vals[1], vals[2], vals[3], vals[4]};
    if (fr.lead_v < 0.0 || fr.ego_v < 0.0) throw fail(line_no, "negative speed");
    const double lead_length = vals[5];
    if (!(lead_length > 0.0)) throw fail(line_no, "lead_length must be > 0");

    if (ds.events.empty() || ds.events.back().event_id != id) {
      finish_event();
      if (!seen.insert(id).second) throw fail(line_no, "duplicate event_id '" + id + "'");
      CarFollowingEvent ev;
      ev.event_id = id;
      ev.lead_length = lead_length;
      ds.events.push_back(std::move(ev));
      event_start_line = line_no;
    } else if (lead_length != ds.events.back().lead_length) {
      throw fail(line_no, "lead_length changes within event '" + id + "'");
    }
    ds.events.back().frames.push_back(fr);
  }
  finish_event();
  return ds;
}

inline Dataset load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file '" + path + "'");
  return parse_events_csv(in, path);
}

inline void write_events_csv(std::ostream& out, const Dataset& ds) {
  out << "event_id,t,lead_x,lead_v,ego_x,ego_v,lead_length\n";
  for (const auto& ev : ds.events) {
    for (const auto& f : ev.frames) {
      out << ev.event_id << ',' << format_double(f.t) << ',' << format_double(f.lead_x) << ','
          << format_double(f.lead_v) << ',' << format_double(f.ego_x) << ',' << format_double(f.ego_v)
          << ',' << format_double(ev.lead_length) << '\n';
    }
  }
}

inline void save_events(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trajectory file '" + path + "'");
  write_events_csv(out, ds);
}

struct SplitConfig {
  double test_fraction = 0.15;
  std::uint64_t rng_seed = 0;
};

// Event-level split: |test| = round(test_fraction * n), at least one event on
// each side. Events keep their original relative order in both outputs.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, const SplitConfig& cfg) {
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must be in (0, 1)");
  }
  const std::size_t n = ds.events.size();
  if (n < 2) throw InvalidArgument("split requires at least 2 events");
  auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.rng_seed);
  // Hand-rolled Fisher-Yates: std::shuffle's output differs across standard
  // libraries, and split membership must be reproducible from the seed alone.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  Dataset train, test;
  train.split_tag = SplitTag::kTrain;
  test.split_tag = SplitTag::kTest;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).events.push_back(ds.events[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace drivestyle
