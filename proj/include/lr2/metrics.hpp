#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lr2 {

// Append-only metrics stream. step = -1 marks an episode-level aggregate.
struct MetricRow {
  int arena = 0;
  int episode = 0;
  int step = -1;
  const char* name = nullptr;
  double value = 0.0;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void row(const MetricRow&) = 0;
};

class NullMetricsSink final : public MetricsSink {
 public:
  void row(const MetricRow&) override {}
};

// Collects episode-level rows in memory, keyed (arena, episode, name).
class MemoryMetricsSink final : public MetricsSink {
 public:
  void row(const MetricRow& r) override {
    rows_.push_back({r.arena, r.episode, r.step, std::string(r.name), r.value});
  }

  struct Stored {
    int arena, episode, step;
    std::string name;
    double value;
  };
  const std::vector<Stored>& rows() const { return rows_; }

 private:
  std::vector<Stored> rows_;
};

// Mean cooperation over the final ten logged episodes of one run.
inline double final_cooperation(std::span<const double> cooperation_by_episode) {
  if (cooperation_by_episode.size() < 10)
    throw std::invalid_argument("final_cooperation: needs at least 10 logged episodes");
  double acc = 0.0;
  for (std::size_t e = cooperation_by_episode.size() - 10;
       e < cooperation_by_episode.size(); ++e)
    acc += cooperation_by_episode[e];
  return acc / 10.0;
}

}  // namespace lr2
