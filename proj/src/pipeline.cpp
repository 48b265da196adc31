#include "streammem/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>

namespace streammem {

using nlohmann::json;

void SimulatedClock::advance_to(double t) {
  if (t < now_) throw InputError("simulated clock cannot move backwards");
  now_ = t;
}

json report_to_json(const RunReport& r) {
  json answers = json::array();
  for (const auto& a : r.answers) answers.push_back(answer_to_json(a));
  return {{"frames_in", r.frames_in},
          {"frames_kept", r.frames_kept},
          {"chunks", r.chunks},
          {"stage1_seconds", r.stage1_seconds},
          {"effective_fps", r.effective_fps},
          {"kept_fps", r.kept_fps},
          {"clock", std::string(to_string(r.clock))},
          {"config", r.config},
          {"answers", std::move(answers)},
          {"metrics", r.metrics ? metrics_to_json(*r.metrics) : json(nullptr)},
          {"queue_bound", r.queue_bound},
          {"max_queue_occupancy", r.max_queue_occupancy},
          {"snapshot_versions", r.snapshot_versions},
          {"snapshots_checked", r.snapshots_checked},
          {"snapshot_violations", r.snapshot_violations}};
}

void append_transcript(const std::string& path, const std::vector<AnswerRecord>& answers) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw InputError("cannot open transcript " + path);
  for (const auto& a : answers) out << answer_to_json(a).dump() << '\n';
}

IngestStage::IngestStage(const EngineConfig& cfg, std::shared_ptr<const FrameEncoder> encoder)
    : gate_(cfg.gate), buffer_(cfg.memory.chunk_len_L), encoder_(std::move(encoder)) {
  if (!encoder_) throw InputError("IngestStage needs a frame encoder");
}

std::optional<Chunk> IngestStage::process(const Frame& frame, bool& kept) {
  validate_frame(frame);
  ++frames_in_;
  kept = gate_.gate(frame).keep;
  if (!kept) return std::nullopt;
  kept_ts_.push_back(frame.timestamp);
  return buffer_.push(encoder_->encode(frame));
}

namespace {

bool assemble_step(const MemorySnapshot& snap, const QueryRequest& q, const PortSet& ports,
                   const RetrievalConfig& cfg, AnswerRecord& a, PromptBundle& b) {
  a.question = q.question;
  a.t_input = q.t_input;
  a.snapshot_version = snap.version;
  try {
    b = assemble_context(snap, encode_query(q.question, *ports.text_encoder), cfg);
  } catch (const std::exception& e) {
    a.error = std::string("context assembly failed: ") + e.what();
    return false;
  }
  a.bundle_digest = bundle_digest(b);
  a.best_caption = b.path.best_caption;
  a.path = b.path.steps;
  if (!b.dialogue_context.empty()) {
    a.dialogue_turn = b.dialogue_context.front().entry->turn_index;
    a.dialogue_question = b.dialogue_context.front().entry->question;
  }
  return true;
}

void generate_step(const PortSet& ports, const PromptBundle& b, AnswerRecord& a) {
  try {
    a.answer = ports.generator->generate(b);
  } catch (const std::exception& e) {
    a.error = std::string("generation failed: ") + e.what();
  }
}

double assembly_cost(const MemorySnapshot& s, const PromptBundle& b, const SimCostModel& c) {
  std::size_t sims = s.dialogue.entries.size();
  std::size_t rows = 0;
  for (const auto& e : b.short_term) rows += e.tokens.rows;
  for (std::size_t i = 0; i < b.path.steps.size(); ++i) {
    if (i == 0) {
      sims += s.tree.level(b.path.steps[0].level).size();
    } else {
      const auto& parent = s.tree.node(b.path.steps[i - 1].level, b.path.steps[i - 1].index);
      sims += parent.child_end - parent.child_begin;
    }
    rows += b.path.collected_centroids[i].rows;
  }
  return c.text_encode + c.assembly_base + c.per_similarity * static_cast<double>(sims) +
         c.per_token_row * static_cast<double>(rows);
}

void check_queries_sorted(const std::vector<QueryRequest>& queries) {
  for (std::size_t i = 1; i < queries.size(); ++i) {
    if (queries[i].t_input < queries[i - 1].t_input) throw InputError("queries must be sorted by t_input");
  }
}

void finalize_report(RunReport& r, const EngineConfig& cfg) {
  r.clock = cfg.clock;
  r.config = config_to_json(cfg);
  r.queue_bound = cfg.queue_bound;
  r.effective_fps = r.stage1_seconds > 0.0 ? static_cast<double>(r.frames_in) / r.stage1_seconds : 0.0;
  r.kept_fps = r.stage1_seconds > 0.0 ? static_cast<double>(r.frames_kept) / r.stage1_seconds : 0.0;
}

// Discrete-event schedule for the simulated clock. Stage 1 owns its own
// timeline. Formation, context assembly and dialogue appends share one
// modeled accelerator in FIFO order, and generation runs beside it. A query
// reads the snapshot published when it arrived; the accelerator queue only
// delays when its assembly finishes.
class SimRunner {
 public:
  SimRunner(FrameSource& source, const std::vector<QueryRequest>& queries, const EngineConfig& cfg,
            const PortSet& ports)
      : source_(source),
        queries_(queries),
        cfg_(cfg),
        ports_(ports),
        ingest_(cfg, ports.frame_encoder),
        store_(cfg.memory, ports.captioner, ports.text_encoder) {}

  RunReport run() {
    published_ = store_.snapshot();
    answers_.resize(queries_.size());
    bundles_.resize(queries_.size());
    query_snaps_.resize(queries_.size());
    for (std::size_t i = 0; i < queries_.size(); ++i) push({queries_[i].t_input, Ev::QueryArrive, 0, i});
    start_frame(std::numeric_limits<double>::lowest());

    while (!events_.empty()) {
      const Event e = events_.top();
      events_.pop();
      clock_.advance_to(std::max(e.t, clock_.now()));
      switch (e.type) {
        case Ev::DeviceDone: on_device_done(e.t); break;
        case Ev::GenerationDone: on_generation_done(e.t, e.ref); break;
        case Ev::FrameDone: on_frame_done(e.t); break;
        case Ev::QueryArrive:
          query_snaps_[e.ref] = published_;  // the version current at arrival, however long the device queue is
          jobs_.push_back({JobKind::Assembly, e.ref});
          try_start(e.t);
          break;
      }
    }
    if (s1_blocked_ || !chunk_q_.empty() || !jobs_.empty()) {
      throw std::logic_error("simulation ended with pending work");
    }

    report_.frames_in = ingest_.frames_in();
    report_.frames_kept = ingest_.frames_kept();
    report_.kept_timestamps = ingest_.kept_timestamps();
    report_.answers = std::move(answers_);
    report_.snapshot_versions = store_.version();
    finalize_report(report_, cfg_);
    return std::move(report_);
  }

 private:
  enum class Ev { DeviceDone = 0, GenerationDone = 1, FrameDone = 2, QueryArrive = 3 };
  struct Event {
    double t;
    Ev type;
    std::uint64_t seq;
    std::size_t ref;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.t != b.t) return a.t > b.t;
      if (a.type != b.type) return a.type > b.type;
      return a.seq > b.seq;
    }
  };
  enum class JobKind { Formation, Assembly, Dialogue };
  struct Job {
    JobKind kind;
    std::size_t ref;
  };

  void push(Event e) {
    e.seq = seq_++;
    events_.push(e);
  }

  void start_frame(double now) {
    auto frame = source_.next();
    if (!frame) {
      s1_done_ = true;
      if (auto last = ingest_.finish()) offer_chunk(std::move(*last), std::max(now, last_frame_done_));
      return;
    }
    const double start = std::max(now, frame->timestamp);
    bool kept = false;
    s1_pending_ = ingest_.process(*frame, kept);
    const double cost = cfg_.cost.gate_per_frame + (kept ? cfg_.cost.encode_per_frame : 0.0);
    report_.stage1_seconds += cost;
    last_frame_done_ = start + cost;
    push({start + cost, Ev::FrameDone, 0, 0});
  }

  void on_frame_done(double t) {
    if (s1_pending_) {
      Chunk c = std::move(*s1_pending_);
      s1_pending_.reset();
      if (!offer_chunk(std::move(c), t)) return;  // blocked until formation frees a slot
    }
    start_frame(t);
  }

  bool offer_chunk(Chunk c, double t) {
    if (chunk_q_.size() >= cfg_.queue_bound) {
      s1_blocked_ = std::move(c);
      return false;
    }
    chunk_q_.push_back(std::move(c));
    report_.max_queue_occupancy = std::max(report_.max_queue_occupancy, chunk_q_.size());
    jobs_.push_back({JobKind::Formation, 0});
    try_start(t);
    return true;
  }

  void try_start(double t) {
    if (device_busy_ || jobs_.empty()) return;
    current_ = jobs_.front();
    jobs_.pop_front();
    device_busy_ = true;
    publishes_ = false;
    double cost = 0.0;

    switch (current_.kind) {
      case JobKind::Formation: {
        Chunk c = std::move(chunk_q_.front());
        chunk_q_.pop_front();
        if (s1_blocked_) {
          Chunk blocked = std::move(*s1_blocked_);
          s1_blocked_.reset();
          offer_chunk(std::move(blocked), t);
          if (!s1_done_) start_frame(t);
        }
        const FormationStats st = store_.ingest_chunk(c);
        report_.chunks += 1;
        report_.chunk_records.push_back({c.index, c.embeddings.size(), c.span()});
        cost = cfg_.cost.kmeans_per_op * st.kmeans_ops + cfg_.cost.caption * static_cast<double>(st.caption_calls) +
               cfg_.cost.text_encode * static_cast<double>(st.encode_calls);
        pending_log_ = {UpdateLogEntry::Kind::Chunk, store_.version(), c.index, 0};
        publishes_ = true;
        break;
      }
      case JobKind::Assembly: {
        const std::size_t i = current_.ref;
        const MemorySnapshot& snap = *query_snaps_[i];
        report_.snapshots_checked += 1;
        if (!check_tree_invariants(snap.tree).empty()) report_.snapshot_violations += 1;
        assembled_ok_ = assemble_step(snap, queries_[i], ports_, cfg_.retrieval, answers_[i], bundles_[i]);
        answers_[i].query_index = i;
        cost = assembled_ok_ ? assembly_cost(snap, bundles_[i], cfg_.cost) : cfg_.cost.text_encode;
        break;
      }
      case JobKind::Dialogue: {
        AnswerRecord& a = answers_[current_.ref];
        try {
          store_.add_dialogue(a.question, a.answer, t);
          pending_log_ = {UpdateLogEntry::Kind::Dialogue, store_.version(), 0, current_.ref};
          publishes_ = true;
        } catch (const BackendError& e) {
          a.error = std::string("dialogue append failed: ") + e.what();
        }
        cost = cfg_.cost.text_encode;
        break;
      }
    }
    push({t + cost, Ev::DeviceDone, 0, 0});
  }

  void on_device_done(double t) {
    device_busy_ = false;
    if (publishes_) {
      published_ = store_.snapshot();
      report_.update_log.push_back(pending_log_);
    }
    if (current_.kind == JobKind::Assembly) {
      const std::size_t i = current_.ref;
      AnswerRecord& a = answers_[i];
      a.t_start = t;
      a.rpd = a.t_start - a.t_input;
      double done = t;
      if (assembled_ok_) {
        generate_step(ports_, bundles_[i], a);
        done += cfg_.cost.generate;
      }
      bundles_[i] = PromptBundle{};
      query_snaps_[i].reset();
      push({done, Ev::GenerationDone, 0, i});
    }
    try_start(t);
  }

  void on_generation_done(double t, std::size_t i) {
    answers_[i].t_done = t;
    if (!answers_[i].error) {
      jobs_.push_back({JobKind::Dialogue, i});
      try_start(t);
    }
  }

  FrameSource& source_;
  const std::vector<QueryRequest>& queries_;
  const EngineConfig& cfg_;
  const PortSet& ports_;
  SimulatedClock clock_;
  IngestStage ingest_;
  MemoryStore store_;
  SnapshotPtr published_;
  RunReport report_;

  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t seq_ = 0;

  std::optional<Chunk> s1_pending_, s1_blocked_;
  bool s1_done_ = false;
  double last_frame_done_ = std::numeric_limits<double>::lowest();
  std::deque<Chunk> chunk_q_;

  std::deque<Job> jobs_;
  bool device_busy_ = false;
  Job current_{JobKind::Formation, 0};
  bool publishes_ = false;
  bool assembled_ok_ = false;
  UpdateLogEntry pending_log_;

  std::vector<AnswerRecord> answers_;
  std::vector<PromptBundle> bundles_;
  std::vector<SnapshotPtr> query_snaps_;
};

}  // namespace

AnswerRecord answer_query(const MemorySnapshot& snap, const QueryRequest& q, const PortSet& ports,
                          const RetrievalConfig& cfg, PromptBundle* bundle_out) {
  AnswerRecord a;
  PromptBundle b;
  if (assemble_step(snap, q, ports, cfg, a, b)) generate_step(ports, b, a);
  if (bundle_out) *bundle_out = std::move(b);
  return a;
}

RunReport run(FrameSource& source, const std::vector<QueryRequest>& queries, const EngineConfig& cfg,
              const PortSet& ports) {
  cfg.validate();
  check_queries_sorted(queries);
  RunReport report;
  if (cfg.clock == ClockMode::Simulated) {
    report = SimRunner(source, queries, cfg, ports).run();
  } else {
    Engine engine(cfg, ports);
    engine.start(source);
    for (const auto& q : queries) {
      engine.wait_for_stream_time(q.t_input);
      engine.submit_query(q);
    }
    report = engine.finish();
  }
  if (!cfg.transcript_path.empty()) append_transcript(cfg.transcript_path, report.answers);
  return report;
}

// ---------------------------------------------------------------------------

FormationInbox::FormationInbox(std::size_t chunk_bound) : bound_(chunk_bound) {}

bool FormationInbox::push_chunk(Chunk c) {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return chunks_.size() < bound_ || chunks_closed_; });
  if (chunks_closed_) return false;
  chunks_.push_back(std::move(c));
  ++in_flight_;
  max_occ_ = std::max(max_occ_, chunks_.size());
  cv_.notify_all();
  return true;
}

void FormationInbox::push_turn(Turn t) {
  std::lock_guard lk(mu_);
  if (turns_closed_) return;
  turns_.push_back(std::move(t));
  ++in_flight_;
  cv_.notify_all();
}

std::optional<FormationInbox::Item> FormationInbox::pop() {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return !turns_.empty() || !chunks_.empty() || (chunks_closed_ && turns_closed_); });
  if (!turns_.empty()) {
    Item it = std::move(turns_.front());
    turns_.pop_front();
    return it;
  }
  if (!chunks_.empty()) {
    Item it = std::move(chunks_.front());
    chunks_.pop_front();
    cv_.notify_all();  // a slot opened
    return it;
  }
  return std::nullopt;
}

void FormationInbox::close_chunks() {
  std::lock_guard lk(mu_);
  chunks_closed_ = true;
  cv_.notify_all();
}

void FormationInbox::close_turns() {
  std::lock_guard lk(mu_);
  turns_closed_ = true;
  cv_.notify_all();
}

void FormationInbox::close_all() {
  std::lock_guard lk(mu_);
  chunks_closed_ = turns_closed_ = true;
  chunks_.clear();
  turns_.clear();
  in_flight_ = 0;
  cv_.notify_all();
}

void FormationInbox::done_one() {
  std::lock_guard lk(mu_);
  if (in_flight_ > 0) --in_flight_;
  cv_.notify_all();
}

void FormationInbox::wait_idle() {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return in_flight_ == 0; });
}

std::size_t FormationInbox::max_chunk_occupancy() const {
  std::lock_guard lk(mu_);
  return max_occ_;
}

Engine::Engine(EngineConfig cfg, PortSet ports)
    : cfg_(std::move(cfg)),
      ports_(std::move(ports)),
      store_(cfg_.memory, ports_.captioner, ports_.text_encoder),
      inbox_(cfg_.queue_bound) {
  cfg_.validate();
  latest_ = store_.snapshot();
}

Engine::~Engine() {
  if (t1_.joinable() || t2_.joinable() || t3_.joinable()) {
    stopping_ = true;
    inbox_.close_all();
    {
      std::lock_guard lk(req_mu_);
      requests_closed_ = true;
    }
    req_cv_.notify_all();
    for (auto* t : {&t1_, &t3_, &t2_}) {
      if (t->joinable()) t->join();
    }
  }
}

void Engine::start(FrameSource& source) {
  if (running_.exchange(true)) throw InputError("engine already started");
  t2_ = std::thread(&Engine::stage2_loop, this);
  t3_ = std::thread(&Engine::stage3_loop, this);
  t1_ = std::thread(&Engine::stage1_loop, this, &source);
}

void Engine::fail(std::exception_ptr e) {
  {
    std::lock_guard lk(err_mu_);
    if (!error_) error_ = e;
  }
  inbox_.close_all();
  {
    std::lock_guard lk(stream_mu_);
    stream_done_ = true;
  }
  stream_cv_.notify_all();
}

void Engine::stage1_loop(FrameSource* source) {
  try {
    IngestStage ingest(cfg_, ports_.frame_encoder);
    const double t0 = clock_.now();
    double busy = 0.0;
    auto hand_off = [&](Chunk c) {
      std::lock_guard lk(report_mu_);
      ++chunks_;
      return c;
    };
    bool open = true;
    while (open && !stopping_) {
      auto frame = source->next();
      if (!frame) break;
      if (cfg_.pace > 0.0) {
        const double due = t0 + frame->timestamp / cfg_.pace;
        const double wait = due - clock_.now();
        if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
      const double b = clock_.now();
      bool kept = false;
      auto chunk = ingest.process(*frame, kept);
      busy += clock_.now() - b;
      if (chunk) open = inbox_.push_chunk(hand_off(std::move(*chunk)));
      {
        std::lock_guard lk(stream_mu_);
        stream_pos_ = frame->timestamp;
      }
      stream_cv_.notify_all();
    }
    if (open && !stopping_) {
      if (auto last = ingest.finish()) inbox_.push_chunk(hand_off(std::move(*last)));
    }
    std::lock_guard lk(report_mu_);
    frames_in_ = ingest.frames_in();
    frames_kept_ = ingest.frames_kept();
    kept_ts_ = ingest.kept_timestamps();
    stage1_seconds_ = busy;
  } catch (...) {
    fail(std::current_exception());
  }
  inbox_.close_chunks();
  {
    std::lock_guard lk(stream_mu_);
    stream_done_ = true;
  }
  stream_cv_.notify_all();
}

void Engine::publish(SnapshotPtr snap, const UpdateLogEntry& entry) {
  std::lock_guard lk(snap_mu_);
  latest_ = std::move(snap);
  update_log_.push_back(entry);
}

void Engine::stage2_loop() {
  try {
    while (auto item = inbox_.pop()) {
      if (auto* c = std::get_if<Chunk>(&*item)) {
        store_.ingest_chunk(*c);
        {
          std::lock_guard lk(snap_mu_);
          chunk_records_.push_back({c->index, c->embeddings.size(), c->span()});
        }
        publish(store_.snapshot(), {UpdateLogEntry::Kind::Chunk, store_.version(), c->index, 0});
      } else {
        auto& t = std::get<FormationInbox::Turn>(*item);
        try {
          store_.add_dialogue(t.question, t.answer, t.timestamp);
          publish(store_.snapshot(), {UpdateLogEntry::Kind::Dialogue, store_.version(), 0, t.answer_index});
        } catch (const BackendError& e) {
          std::lock_guard lk(report_mu_);
          if (t.answer_index < answers_.size()) {
            answers_[t.answer_index].error = std::string("dialogue append failed: ") + e.what();
          }
        }
      }
      inbox_.done_one();
    }
  } catch (...) {
    fail(std::current_exception());
  }
}

void Engine::stage3_loop() {
  while (true) {
    Request r;
    {
      std::unique_lock lk(req_mu_);
      req_cv_.wait(lk, [&] { return !requests_.empty() || requests_closed_; });
      if (requests_.empty()) break;
      r = std::move(requests_.front());
      requests_.pop_front();
    }
    try {
      const double t_in = clock_.now();
      const SnapshotPtr snap = latest_snapshot();
      const bool sound = check_tree_invariants(snap->tree).empty();

      AnswerRecord a;
      PromptBundle b;
      const bool ok = assemble_step(*snap, {r.question, 0.0}, ports_, cfg_.retrieval, a, b);
      const double t_start = clock_.now();
      if (ok) generate_step(ports_, b, a);
      const double t_done = clock_.now();

      if (r.stream_time) {
        a.t_input = *r.stream_time;
        a.t_start = a.t_input + (t_start - t_in);
        a.t_done = a.t_start + (t_done - t_start);
      } else {
        a.t_input = t_in;
        a.t_start = t_start;
        a.t_done = t_done;
      }
      a.rpd = a.t_start - a.t_input;
      {
        std::lock_guard lk(report_mu_);
        a.query_index = answers_.size();
        answers_.push_back(a);
        ++snapshots_checked_;
        if (!sound) ++snapshot_violations_;
      }
      if (!a.error) inbox_.push_turn({a.question, a.answer, a.t_done, a.query_index});
      r.promise.set_value(std::move(a));
    } catch (...) {
      r.promise.set_exception(std::current_exception());
    }
  }
}

AnswerRecord Engine::submit_query(std::string question) {
  Request r;
  r.question = std::move(question);
  auto fut = r.promise.get_future();
  {
    std::lock_guard lk(req_mu_);
    if (!running_ || requests_closed_) throw EngineStopped();
    requests_.push_back(std::move(r));
  }
  req_cv_.notify_all();
  return fut.get();
}

AnswerRecord Engine::submit_query(const QueryRequest& q) {
  Request r;
  r.question = q.question;
  r.stream_time = q.t_input;
  auto fut = r.promise.get_future();
  {
    std::lock_guard lk(req_mu_);
    if (!running_ || requests_closed_) throw EngineStopped();
    requests_.push_back(std::move(r));
  }
  req_cv_.notify_all();
  return fut.get();
}

void Engine::wait_for_stream_time(double t) {
  std::unique_lock lk(stream_mu_);
  stream_cv_.wait(lk, [&] { return stream_pos_ >= t || stream_done_; });
}

void Engine::wait_idle() { inbox_.wait_idle(); }

SnapshotPtr Engine::latest_snapshot() const {
  std::lock_guard lk(snap_mu_);
  return latest_;
}

RunReport Engine::finish() {
  if (!running_) throw EngineStopped();
  if (t1_.joinable()) t1_.join();
  {
    std::lock_guard lk(req_mu_);
    requests_closed_ = true;
  }
  req_cv_.notify_all();
  if (t3_.joinable()) t3_.join();
  inbox_.close_turns();
  if (t2_.joinable()) t2_.join();
  running_ = false;
  {
    std::lock_guard lk(err_mu_);
    if (error_) std::rethrow_exception(error_);
  }

  RunReport r;
  {
    std::lock_guard lk(report_mu_);
    r.frames_in = frames_in_;
    r.frames_kept = frames_kept_;
    r.chunks = chunks_;
    r.stage1_seconds = stage1_seconds_;
    r.answers = answers_;
    r.snapshots_checked = snapshots_checked_;
    r.snapshot_violations = snapshot_violations_;
    r.kept_timestamps = kept_ts_;
  }
  {
    std::lock_guard lk(snap_mu_);
    r.update_log = update_log_;
    r.chunk_records = chunk_records_;
  }
  r.snapshot_versions = store_.version();
  r.max_queue_occupancy = inbox_.max_chunk_occupancy();
  finalize_report(r, cfg_);
  return r;
}

}  // namespace streammem
