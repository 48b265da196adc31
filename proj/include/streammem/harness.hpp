#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "streammem/config.hpp"
#include "streammem/frame_gate.hpp"
#include "streammem/pipeline.hpp"

namespace streammem {

struct SceneSegment {
  std::vector<std::string> tags;
  double duration = 10.0;  // seconds
  double motion = 0.2;     // fraction of max_shift per frame, in [0,1]

  bool operator==(const SceneSegment&) const = default;
};

struct SceneSpec {
  std::vector<SceneSegment> scenes;
  double fps = 10.0;
  double noise = 0.005;  // intensity stddev
  std::uint64_t seed = 0;
  std::size_t width = 64;
  std::size_t height = 64;
  double max_shift = 4.0;  // pixels per frame at motion 1

  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct TimelineEntry {
  TimeSpan span;  // first and last frame timestamp of the scene
  std::vector<std::string> tags;
};

/// Ground truth: which tags are on screen when.
std::vector<TimelineEntry> scene_timeline(const SceneSpec& spec);

/// Frames per scene: round(duration * fps), at least one.
std::size_t scene_frame_count(const SceneSegment& scene, double fps);

/// Each scene is a smooth texture keyed by its tags, translated by
/// motion * max_shift px per frame in a seeded direction, plus noise. Scene
/// brightness alternates up and down from one scene to the next under a
/// fixed illumination ramp, so cuts register as strong motion.
class SyntheticSource final : public FrameSource {
 public:
  explicit SyntheticSource(SceneSpec spec);
  std::optional<Frame> next() override;
  std::size_t total_frames() const noexcept { return total_; }

 private:
  struct Wave {
    double kx, ky, amp, phase;
  };
  void enter_scene(std::size_t k);

  SceneSpec spec_;
  std::mt19937_64 rng_;
  std::size_t total_ = 0;
  std::size_t scene_ = 0;
  std::size_t in_scene_ = 0;
  std::size_t emitted_ = 0;
  std::vector<Wave> waves_;
  double level_ = 0.0;  // per-scene brightness offset
  double dir_x_ = 1.0, dir_y_ = 0.0;
  double off_x_ = 0.0, off_y_ = 0.0;
};

/// The six query categories used for per-task breakdowns.
bool is_task_type(std::string_view s);

struct TraceQuery {
  double t_input = 0.0;
  std::string question;
  std::string reference_answer;
  std::string task_type;
  std::optional<std::size_t> refers_to;  // earlier query this one follows up on

  bool operator==(const TraceQuery&) const = default;
};

struct SourceSpec {
  enum class Kind { Synthetic, Directory };
  Kind kind = Kind::Synthetic;
  SceneSpec synthetic;
  std::string path;  // directory of PGM frames; relative to the trace file
  double fps = 10.0;

  bool operator==(const SourceSpec&) const = default;
};

struct Trace {
  SourceSpec source;
  std::vector<TraceQuery> queries;

  void validate() const;
  bool operator==(const Trace&) const = default;
};

/// JSON lines: a header object describing the frame source, then one object
/// per query. Errors throw LoadError with the 1-based line number.
Trace parse_trace(std::istream& in);
Trace load_trace(const std::filesystem::path& path);
std::string trace_to_jsonl(const Trace& trace);
void save_trace(const std::filesystem::path& path, const Trace& trace);

std::unique_ptr<FrameSource> open_source(const SourceSpec& spec, const std::filesystem::path& base_dir = {});

struct TraceGenOptions {
  std::size_t scenes = 5;
  double scene_duration = 20.0;
  double fps = 10.0;
  double noise = 0.005;
  double motion_min = 0.15;
  double motion_max = 0.6;
  std::uint64_t seed = 0;
  bool with_queries = true;
};

/// Distinct two-tag scenes (place, object) and three kinds of queries per
/// scene: SM while it plays, LM once the next scene is over, and a CI pair
/// whose follow-up should recall the first turn.
Trace generate_trace(const TraceGenOptions& opts);

/// Runs the trace, judges every answer and computes metrics when there are
/// answers. Writes report.json and transcript.jsonl when out_dir is given.
RunReport run_benchmark(const Trace& trace, const EngineConfig& cfg, const PortSet& ports,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const std::filesystem::path& base_dir = {});

struct SweepRow {
  double value = 0.0;
  std::optional<double> accuracy;
  std::optional<double> rpd_mean;
  double fps = 0.0;
  double kept_ratio = 0.0;
};

/// Sets t, L, g or C on a copy of `cfg`.
EngineConfig with_sweep_value(const EngineConfig& cfg, std::string_view param, double value);

std::vector<SweepRow> run_sweep(const Trace& trace, std::string_view param, const std::vector<double>& values,
                                const EngineConfig& cfg, const PortSet& ports,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                const std::filesystem::path& base_dir = {});

/// Header `value,accuracy,rpd_mean,fps,kept_ratio`; absent metrics are empty cells.
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Streams `source` through a wall-clock engine and answers one question per
/// input line. "quit" or end of input stops the stream; ":sync" waits for
/// the stream and formation to finish.
RunReport run_repl(const EngineConfig& cfg, const PortSet& ports, FrameSource& source, std::istream& in,
                   std::ostream& out);

}  // namespace streammem
