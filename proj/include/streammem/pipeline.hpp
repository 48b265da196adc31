#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "streammem/config.hpp"
#include "streammem/frame_gate.hpp"
#include "streammem/memory.hpp"
#include "streammem/metrics.hpp"
#include "streammem/ports.hpp"
#include "streammem/retrieval.hpp"

namespace streammem {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
};

/// Advances only through explicit calls.
class SimulatedClock final : public Clock {
 public:
  double now() const override { return now_; }
  void advance_to(double t);
  void tick(double dt) { advance_to(now_ + dt); }

 private:
  double now_ = 0.0;
};

/// Monotone seconds since construction.
class WallClock final : public Clock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct QueryRequest {
  std::string question;
  double t_input = 0.0;
};

/// One formation-stage mutation, in the order it was applied.
struct UpdateLogEntry {
  enum class Kind { Chunk, Dialogue };
  Kind kind = Kind::Chunk;
  std::uint64_t version = 0;  // store version after the update
  std::size_t chunk_index = 0;
  std::size_t answer_index = 0;  // index into RunReport::answers for dialogue turns
};

struct ChunkRecord {
  std::size_t index = 0;
  std::size_t size = 0;
  TimeSpan span;
};

struct RunReport {
  std::size_t frames_in = 0;
  std::size_t frames_kept = 0;
  std::size_t chunks = 0;
  double stage1_seconds = 0.0;  // time spent gating and encoding
  double effective_fps = 0.0;   // frames_in / stage1_seconds
  double kept_fps = 0.0;        // frames_kept / stage1_seconds
  ClockMode clock = ClockMode::Simulated;
  nlohmann::json config;
  std::vector<AnswerRecord> answers;
  std::optional<MetricsReport> metrics;
  std::size_t queue_bound = 0;
  std::size_t max_queue_occupancy = 0;
  std::uint64_t snapshot_versions = 0;
  std::size_t snapshots_checked = 0;
  std::size_t snapshot_violations = 0;

  // Diagnostics for tests and reference replays; not serialized.
  std::vector<UpdateLogEntry> update_log;
  std::vector<ChunkRecord> chunk_records;
  std::vector<double> kept_timestamps;
};

nlohmann::json report_to_json(const RunReport& r);

/// Stage 1 logic: gate, encode, buffer. Shared by both clock modes and the
/// sequential reference used in tests.
class IngestStage {
 public:
  IngestStage(const EngineConfig& cfg, std::shared_ptr<const FrameEncoder> encoder);

  /// Returns a chunk when the buffer fills; `kept` reports the gate decision.
  std::optional<Chunk> process(const Frame& frame, bool& kept);
  std::optional<Chunk> finish() { return buffer_.flush(); }

  std::size_t frames_in() const noexcept { return frames_in_; }
  std::size_t frames_kept() const noexcept { return kept_ts_.size(); }
  const std::vector<double>& kept_timestamps() const noexcept { return kept_ts_; }

 private:
  FrameGate gate_;
  VisionBuffer buffer_;
  std::shared_ptr<const FrameEncoder> encoder_;
  std::size_t frames_in_ = 0;
  std::vector<double> kept_ts_;
};

/// Stage 3 logic on one snapshot. Port failures land in record.error.
AnswerRecord answer_query(const MemorySnapshot& snap, const QueryRequest& q, const PortSet& ports,
                          const RetrievalConfig& cfg, PromptBundle* bundle_out = nullptr);

/// Runs every frame and query through the three stages and drains them.
/// Simulated clock: deterministic discrete-event schedule. Wall clock: three
/// concurrent threads (see Engine).
RunReport run(FrameSource& source, const std::vector<QueryRequest>& queries, const EngineConfig& cfg,
              const PortSet& ports);

/// Work items for the formation stage: chunks are bounded, dialogue turns are not.
class FormationInbox {
 public:
  struct Turn {
    std::string question;
    std::string answer;
    double timestamp = 0.0;
    std::size_t answer_index = 0;
  };
  using Item = std::variant<Chunk, Turn>;

  explicit FormationInbox(std::size_t chunk_bound);

  /// Blocks while `chunk_bound` chunks are waiting. Returns false if closed.
  bool push_chunk(Chunk c);
  void push_turn(Turn t);
  /// Turns first, then chunks. Nothing once both producers closed and empty.
  std::optional<Item> pop();
  void close_chunks();
  void close_turns();
  void close_all();

  /// Called by the consumer after an item is fully applied.
  void done_one();
  /// Blocks until every pushed item has been applied.
  void wait_idle();

  std::size_t max_chunk_occupancy() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t bound_;
  std::deque<Chunk> chunks_;
  std::deque<Turn> turns_;
  bool chunks_closed_ = false, turns_closed_ = false;
  std::size_t in_flight_ = 0;
  std::size_t max_occ_ = 0;
};

/// Live wall-clock engine: stage 1 (gate + encode), stage 2 (formation) and
/// stage 3 (contextual summarization) each run on their own thread. Queries
/// read the latest published snapshot and never wait for formation.
class Engine {
 public:
  Engine(EngineConfig cfg, PortSet ports);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// The source must outlive the engine's run.
  void start(FrameSource& source);
  bool running() const noexcept { return running_.load(); }

  /// Submits at the current wall time and waits for the answer.
  AnswerRecord submit_query(std::string question);
  /// Trace replay: reported times are in stream seconds offset by the
  /// measured delays.
  AnswerRecord submit_query(const QueryRequest& q);

  /// Blocks until stage 1 has consumed every frame stamped <= t, or the source ended.
  void wait_for_stream_time(double t);
  /// Blocks until all handed-off chunks and dialogue turns are applied.
  void wait_idle();
  /// Stage 1 stops reading the source after the current frame.
  void request_stop() noexcept { stopping_ = true; }

  SnapshotPtr latest_snapshot() const;
  double now() const { return clock_.now(); }

  /// Drains the source and formation, stops the workers and returns the
  /// report. Rethrows a stage-1/2 failure.
  RunReport finish();

 private:
  struct Request {
    std::string question;
    std::optional<double> stream_time;
    std::promise<AnswerRecord> promise;
  };

  void stage1_loop(FrameSource* source);
  void stage2_loop();
  void stage3_loop();
  void publish(SnapshotPtr snap, const UpdateLogEntry& entry);
  void fail(std::exception_ptr e);

  EngineConfig cfg_;
  PortSet ports_;
  WallClock clock_;
  MemoryStore store_;
  FormationInbox inbox_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};

  mutable std::mutex snap_mu_;
  SnapshotPtr latest_;
  std::vector<UpdateLogEntry> update_log_;
  std::vector<ChunkRecord> chunk_records_;

  std::mutex stream_mu_;
  std::condition_variable stream_cv_;
  double stream_pos_ = -1e300;
  bool stream_done_ = false;

  std::mutex req_mu_;
  std::condition_variable req_cv_;
  std::deque<Request> requests_;
  bool requests_closed_ = false;

  std::mutex report_mu_;
  std::vector<AnswerRecord> answers_;
  std::size_t snapshots_checked_ = 0;
  std::size_t snapshot_violations_ = 0;
  std::size_t frames_in_ = 0, frames_kept_ = 0, chunks_ = 0;
  double stage1_seconds_ = 0.0;
  std::vector<double> kept_ts_;

  std::mutex err_mu_;
  std::exception_ptr error_;

  std::thread t1_, t2_, t3_;
};

/// Appends one JSON object per answer.
void append_transcript(const std::string& path, const std::vector<AnswerRecord>& answers);

}  // namespace streammem
