#include "streammem/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace streammem {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Synthetic scenes

void SceneSpec::validate() const {
  if (!(fps > 0.0)) throw InputError("scene fps must be > 0");
  if (noise < 0.0) throw InputError("scene noise must be >= 0");
  if (width < 8 || height < 8) throw InputError("scene frames must be at least 8x8");
  if (max_shift < 0.0) throw InputError("max_shift must be >= 0");
  for (const auto& s : scenes) {
    if (!(s.duration > 0.0)) throw InputError("scene duration must be > 0");
    if (s.motion < 0.0 || s.motion > 1.0) throw InputError("scene motion must be in [0,1]");
  }
}

std::size_t scene_frame_count(const SceneSegment& scene, double fps) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scene.duration * fps)));
}

std::vector<TimelineEntry> scene_timeline(const SceneSpec& spec) {
  std::vector<TimelineEntry> out;
  std::size_t frame = 0;
  for (const auto& s : spec.scenes) {
    const std::size_t n = scene_frame_count(s, spec.fps);
    out.push_back({{static_cast<double>(frame) / spec.fps, static_cast<double>(frame + n - 1) / spec.fps}, s.tags});
    frame += n;
  }
  return out;
}

namespace {

// Wavelengths (px) and orientations (deg) shared by every scene; only
// amplitudes and phases depend on the tags, so scenes differ in content
// but not in smoothness.
constexpr std::array<std::pair<double, double>, 6> kWaves = {
    {{40.0, 0.0}, {32.0, 60.0}, {28.0, 120.0}, {36.0, 30.0}, {24.0, 90.0}, {30.0, 150.0}}};

constexpr double kRamp = 0.5;

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit_draw(rng);  // (0,1]
  const double u2 = unit_draw(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string tag_key(const std::vector<std::string>& tags) {
  std::vector<std::string> sorted = tags;
  std::sort(sorted.begin(), sorted.end());
  std::string key;
  for (const auto& t : sorted) key += t + '\x1f';
  return key;
}

}  // namespace

SyntheticSource::SyntheticSource(SceneSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
  spec_.validate();
  for (const auto& s : spec_.scenes) total_ += scene_frame_count(s, spec_.fps);
  if (!spec_.scenes.empty()) enter_scene(0);
}

void SyntheticSource::enter_scene(std::size_t k) {
  scene_ = k;
  in_scene_ = 0;
  std::mt19937_64 tex(fnv1a(tag_key(spec_.scenes[k].tags)));
  waves_.clear();
  // A tag-keyed rotation of the whole wave set keeps textures of different
  // scenes from sharing frequencies.
  const double turn = std::numbers::pi * unit_draw(tex);
  for (const auto& [lambda, deg] : kWaves) {
    const double rad = deg * std::numbers::pi / 180.0 + turn;
    const double k_mag = 2.0 * std::numbers::pi / lambda;
    waves_.push_back({k_mag * std::cos(rad), k_mag * std::sin(rad), 0.03 + 0.03 * unit_draw(tex),
                      2.0 * std::numbers::pi * unit_draw(tex)});
  }
  level_ = (k % 2 == 0 ? 1.0 : -1.0) * (0.06 + 0.03 * unit_draw(tex));
  const double angle = 2.0 * std::numbers::pi * unit_draw(rng_);
  dir_x_ = std::cos(angle);
  dir_y_ = std::sin(angle);
  off_x_ = off_y_ = 0.0;
}

std::optional<Frame> SyntheticSource::next() {
  if (emitted_ >= total_) return std::nullopt;
  while (in_scene_ >= scene_frame_count(spec_.scenes[scene_], spec_.fps)) enter_scene(scene_ + 1);

  const auto& scene = spec_.scenes[scene_];
  Frame f;
  f.width = spec_.width;
  f.height = spec_.height;
  f.timestamp = static_cast<double>(emitted_) / spec_.fps;
  f.tags = scene.tags;
  f.pixels.resize(f.width * f.height);
  // sin(a + b) = sin a cos b + cos a sin b, with a along x and b along y.
  const std::size_t nw = waves_.size();
  std::vector<double> sx(nw * f.width), cx(nw * f.width);
  for (std::size_t i = 0; i < nw; ++i) {
    for (std::size_t x = 0; x < f.width; ++x) {
      const double a = waves_[i].kx * (static_cast<double>(x) - off_x_);
      sx[i * f.width + x] = std::sin(a);
      cx[i * f.width + x] = std::cos(a);
    }
  }
  std::vector<double> sy(nw), cy(nw);
  // Static lighting: +-kRamp/2 corner to corner, not moving with the texture.
  const double ramp_dx = kRamp / static_cast<double>(f.width + f.height);
  for (std::size_t y = 0; y < f.height; ++y) {
    for (std::size_t i = 0; i < nw; ++i) {
      const double b = waves_[i].ky * (static_cast<double>(y) - off_y_) + waves_[i].phase;
      sy[i] = waves_[i].amp * std::sin(b);
      cy[i] = waves_[i].amp * std::cos(b);
    }
    for (std::size_t x = 0; x < f.width; ++x) {
      double v = 0.5 + level_ +
                 ramp_dx * (static_cast<double>(x + y) - 0.5 * static_cast<double>(f.width + f.height));
      for (std::size_t i = 0; i < nw; ++i) v += sx[i * f.width + x] * cy[i] + cx[i * f.width + x] * sy[i];
      if (spec_.noise > 0.0) v += spec_.noise * gaussian(rng_);
      f.pixels[y * f.width + x] = std::clamp(v, 0.0, 1.0);
    }
  }

  const double step = scene.motion * spec_.max_shift;
  off_x_ += step * dir_x_;
  off_y_ += step * dir_y_;
  ++in_scene_;
  ++emitted_;
  return f;
}

// ---------------------------------------------------------------------------
// Traces

bool is_task_type(std::string_view s) {
  return s == "OS" || s == "LM" || s == "SM" || s == "CI" || s == "KG" || s == "SF";
}

void Trace::validate() const {
  if (source.kind == SourceSpec::Kind::Synthetic) {
    source.synthetic.validate();
  } else {
    if (source.path.empty()) throw InputError("directory source needs a path");
    if (!(source.fps > 0.0)) throw InputError("directory source fps must be > 0");
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const std::string where = "query " + std::to_string(i);
    if (!is_task_type(q.task_type)) throw InputError(where + ": unknown task_type '" + q.task_type + "'");
    if (i > 0 && q.t_input < queries[i - 1].t_input) throw InputError("queries must be sorted by t_input");
    if (q.refers_to && *q.refers_to >= i) throw InputError(where + ": refers_to must name an earlier query");
  }
}

namespace {

json scene_spec_to_json(const SceneSpec& s) {
  json scenes = json::array();
  for (const auto& sc : s.scenes) {
    scenes.push_back({{"tags", sc.tags}, {"duration", sc.duration}, {"motion", sc.motion}});
  }
  return {{"kind", "synthetic"}, {"fps", s.fps},     {"noise", s.noise},         {"seed", s.seed},
          {"width", s.width},    {"height", s.height}, {"max_shift", s.max_shift}, {"scenes", std::move(scenes)}};
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

SourceSpec source_from_json(const json& j) {
  SourceSpec s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "synthetic") {
    s.kind = SourceSpec::Kind::Synthetic;
    SceneSpec& sp = s.synthetic;
    sp.fps = field_or(j, "fps", sp.fps);
    sp.noise = field_or(j, "noise", sp.noise);
    sp.seed = field_or(j, "seed", sp.seed);
    sp.width = field_or(j, "width", sp.width);
    sp.height = field_or(j, "height", sp.height);
    sp.max_shift = field_or(j, "max_shift", sp.max_shift);
    for (const auto& sc : j.at("scenes")) {
      sp.scenes.push_back({sc.at("tags").get<std::vector<std::string>>(), sc.at("duration").get<double>(),
                           field_or(sc, "motion", 0.2)});
    }
    s.fps = sp.fps;
  } else if (kind == "directory") {
    s.kind = SourceSpec::Kind::Directory;
    s.path = j.at("path").get<std::string>();
    s.fps = j.at("fps").get<double>();
  } else {
    throw InputError("unknown source kind '" + kind + "'");
  }
  return s;
}

TraceQuery query_from_json(const json& j) {
  TraceQuery q;
  q.t_input = j.at("t_input").get<double>();
  q.question = j.at("question").get<std::string>();
  q.reference_answer = field_or<std::string>(j, "reference_answer", "");
  q.task_type = j.at("task_type").get<std::string>();
  if (j.contains("refers_to") && !j.at("refers_to").is_null()) q.refers_to = j.at("refers_to").get<std::size_t>();
  if (q.question.empty()) throw InputError("empty question");
  if (!is_task_type(q.task_type)) throw InputError("unknown task_type '" + q.task_type + "'");
  return q;
}

}  // namespace

Trace parse_trace(std::istream& in) {
  Trace trace;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw InputError("expected a JSON object");
      const auto type = field_or<std::string>(j, "type", "query");
      if (type == "header") {
        if (have_header) throw InputError("duplicate header");
        const auto version = field_or(j, "version", 1);
        if (version != 1) throw InputError("unsupported trace version " + std::to_string(version));
        trace.source = source_from_json(j.at("source"));
        have_header = true;
      } else if (type == "query") {
        if (!have_header) throw InputError("query before header");
        TraceQuery q = query_from_json(j);
        const std::size_t idx = trace.queries.size();
        if (idx > 0 && q.t_input < trace.queries.back().t_input) throw InputError("queries must be sorted by t_input");
        if (q.refers_to && *q.refers_to >= idx) throw InputError("refers_to must name an earlier query");
        trace.queries.push_back(std::move(q));
      } else {
        throw InputError("unknown record type '" + type + "'");
      }
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      throw LoadError(std::string("bad trace record: ") + e.what(), lineno);
    }
  }
  if (!have_header) throw LoadError("trace has no header", lineno == 0 ? 1 : lineno);
  try {
    trace.validate();
  } catch (const InputError& e) {
    throw LoadError(e.what(), 1);
  }
  return trace;
}

Trace load_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trace " + path.string());
  return parse_trace(in);
}

std::string trace_to_jsonl(const Trace& trace) {
  json source = trace.source.kind == SourceSpec::Kind::Synthetic
                    ? scene_spec_to_json(trace.source.synthetic)
                    : json{{"kind", "directory"}, {"path", trace.source.path}, {"fps", trace.source.fps}};
  std::string out = json{{"type", "header"}, {"version", 1}, {"source", std::move(source)}}.dump() + "\n";
  for (const auto& q : trace.queries) {
    json j = {{"type", "query"},
              {"t_input", q.t_input},
              {"question", q.question},
              {"reference_answer", q.reference_answer},
              {"task_type", q.task_type}};
    if (q.refers_to) j["refers_to"] = *q.refers_to;
    out += j.dump() + "\n";
  }
  return out;
}

void save_trace(const fs::path& path, const Trace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write trace " + path.string());
  out << trace_to_jsonl(trace);
}

std::unique_ptr<FrameSource> open_source(const SourceSpec& spec, const fs::path& base_dir) {
  if (spec.kind == SourceSpec::Kind::Synthetic) return std::make_unique<SyntheticSource>(spec.synthetic);
  fs::path dir = spec.path;
  if (dir.is_relative() && !base_dir.empty()) dir = base_dir / dir;
  return std::make_unique<PgmDirectorySource>(dir, spec.fps);
}

// ---------------------------------------------------------------------------
// Trace generation

namespace {

const std::vector<std::string> kPlaces = {"kitchen", "garden",  "office",  "garage", "beach",  "forest", "library",
                                          "station", "market",  "harbor",  "bakery", "stadium", "museum", "bridge",
                                          "desert",  "canyon",  "chapel",  "factory", "airport", "meadow"};
const std::vector<std::string> kObjects = {"kettle", "bicycle", "laptop", "guitar",  "lantern", "ladder", "piano",
                                           "bucket", "kayak",   "easel",  "tractor", "clock",   "sofa",   "drone",
                                           "camel",  "cactus",  "candle", "crane",   "glider",  "scarecrow"};
// Vocabulary for dialogue follow-ups; disjoint from scene tags.
const std::vector<std::string> kColors = {"purple", "orange", "silver", "golden", "crimson", "teal", "ivory", "amber"};
const std::vector<std::string> kThings = {"compass", "violin", "anchor", "telescope", "feather", "pyramid", "trumpet",
                                          "marble"};

std::vector<std::string> pick_distinct(const std::vector<std::string>& pool, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::string> p = pool;
  for (std::size_t i = 0; i < n && i < p.size(); ++i) {
    const auto j = i + static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(p.size() - i));
    std::swap(p[i], p[j]);
  }
  p.resize(std::min(n, p.size()));
  return p;
}

}  // namespace

Trace generate_trace(const TraceGenOptions& opts) {
  if (opts.scenes == 0) throw InputError("gen-trace needs at least one scene");
  if (opts.scenes > kPlaces.size()) throw InputError("at most " + std::to_string(kPlaces.size()) + " scenes");
  if (opts.motion_min < 0.0 || opts.motion_max > 1.0 || opts.motion_min > opts.motion_max) {
    throw InputError("motion range must satisfy 0 <= min <= max <= 1");
  }
  std::mt19937_64 rng(mix_seed(opts.seed, fnv1a("trace")));
  Trace t;
  SceneSpec& spec = t.source.synthetic;
  spec.fps = opts.fps;
  spec.noise = opts.noise;
  spec.seed = mix_seed(opts.seed, fnv1a("frames"));
  t.source.fps = opts.fps;

  const auto places = pick_distinct(kPlaces, opts.scenes, rng);
  const auto objects = pick_distinct(kObjects, opts.scenes, rng);
  for (std::size_t k = 0; k < opts.scenes; ++k) {
    const double motion = opts.motion_min + (opts.motion_max - opts.motion_min) * unit_draw(rng);
    spec.scenes.push_back({{places[k], objects[k]}, opts.scene_duration, motion});
  }
  spec.validate();
  if (!opts.with_queries) return t;

  const auto timeline = scene_timeline(spec);
  const double end = timeline.back().span.last;
  auto caption = [&](std::size_t k) { return caption_from_tags(spec.scenes[k].tags); };

  struct Pending {
    TraceQuery q;
    std::optional<std::size_t> refers_to_local;  // index into `pending`
  };
  std::vector<Pending> pending;
  const auto colors = pick_distinct(kColors, kColors.size(), rng);
  const auto things = pick_distinct(kThings, kThings.size(), rng);
  for (std::size_t k = 0; k < opts.scenes; ++k) {
    const double s = timeline[k].span.first;
    const double d = timeline[k].span.last - s;
    const auto& place = spec.scenes[k].tags[0];
    const auto& object = spec.scenes[k].tags[1];

    pending.push_back({{s + 0.8 * d, "what is near the " + object + " now", caption(k), "SM", std::nullopt}, {}});

    const double lm_t = k + 1 < opts.scenes ? timeline[k + 1].span.last + 0.5 : end + 2.0;
    pending.push_back({{lm_t, "what did you see at the " + place, caption(k), "LM", std::nullopt}, {}});

    const std::string item = colors[k % colors.size()] + " " + things[(k / colors.size() + k) % things.size()];
    const std::string first = "remember the " + item + " by the " + object;
    pending.push_back({{s + 0.3 * d, first, caption(k), "CI", std::nullopt}, {}});
    pending.push_back({{s + 0.6 * d, "and the " + item + " by the " + object + ", remember?",
                        caption(k) + " (recalling: " + first + ")", "CI", std::nullopt},
                       pending.size() - 1});
  }

  std::vector<std::size_t> order(pending.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pending[a].q.t_input < pending[b].q.t_input; });
  std::vector<std::size_t> position(pending.size());
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  for (std::size_t i : order) {
    TraceQuery q = pending[i].q;
    if (pending[i].refers_to_local) q.refers_to = position[*pending[i].refers_to_local];
    t.queries.push_back(std::move(q));
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Benchmark, sweep

RunReport run_benchmark(const Trace& trace, const EngineConfig& cfg, const PortSet& ports,
                        const std::optional<fs::path>& out_dir, const fs::path& base_dir) {
  trace.validate();
  EngineConfig run_cfg = cfg;
  run_cfg.transcript_path.clear();  // written below, after judging

  std::vector<QueryRequest> queries;
  for (const auto& q : trace.queries) queries.push_back({q.question, q.t_input});
  auto source = open_source(trace.source, base_dir);
  RunReport report = run(*source, queries, run_cfg, ports);
  report.config = config_to_json(cfg);

  for (auto& a : report.answers) {
    const auto& q = trace.queries.at(a.query_index);
    a.task_type = q.task_type;
    a.reference_answer = q.reference_answer;
    a.judgement = ports.judge->judge(q.question, q.reference_answer, a.error ? std::string() : a.answer);
  }
  if (!report.answers.empty()) report.metrics = compute_metrics(report.answers, cfg.accuracy_threshold);

  if (out_dir) {
    fs::create_directories(*out_dir);
    {
      std::ofstream out(*out_dir / "report.json", std::ios::trunc);
      if (!out) throw InputError("cannot write " + (*out_dir / "report.json").string());
      out << report_to_json(report).dump(2) << '\n';
    }
    std::ofstream(*out_dir / "transcript.jsonl", std::ios::trunc).close();
    append_transcript((*out_dir / "transcript.jsonl").string(), report.answers);
  }
  if (!cfg.transcript_path.empty()) append_transcript(cfg.transcript_path, report.answers);
  return report;
}

EngineConfig with_sweep_value(const EngineConfig& cfg, std::string_view param, double value) {
  EngineConfig c = cfg;
  auto as_count = [&](const char* name) {
    if (!(value >= 1.0) || std::floor(value) != value) {
      throw InputError(std::string(name) + " values must be positive integers");
    }
    return static_cast<std::size_t>(value);
  };
  if (param == "t" || param == "threshold_t") {
    c.gate.threshold_t = value;
  } else if (param == "L" || param == "chunk_len_L") {
    c.memory.chunk_len_L = as_count("L");
  } else if (param == "g" || param == "group_size_g") {
    c.memory.group_size_g = as_count("g");
  } else if (param == "C" || param == "cluster_goal_C") {
    c.memory.cluster_goal_C = as_count("C");
  } else {
    throw InputError("sweep parameter must be one of t, L, g, C");
  }
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const Trace& trace, std::string_view param, const std::vector<double>& values,
                                const EngineConfig& cfg, const PortSet& ports,
                                const std::optional<fs::path>& out_dir, const fs::path& base_dir) {
  if (values.empty()) throw InputError("sweep needs at least one value");
  std::vector<EngineConfig> cfgs;
  for (double v : values) cfgs.push_back(with_sweep_value(cfg, param, v));  // reject bad values up front

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::optional<fs::path> sub;
    if (out_dir) sub = *out_dir / (std::string(param) + "_" + std::to_string(i));
    const RunReport r = run_benchmark(trace, cfgs[i], ports, sub, base_dir);
    SweepRow row;
    row.value = values[i];
    if (r.metrics) {
      row.accuracy = r.metrics->accuracy;
      row.rpd_mean = r.metrics->rpd_mean;
    }
    row.fps = r.effective_fps;
    row.kept_ratio = r.frames_in ? static_cast<double>(r.frames_kept) / static_cast<double>(r.frames_in) : 0.0;
    rows.push_back(row);
  }
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / "sweep.csv", std::ios::trunc) << sweep_csv(rows);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  std::string out = "value,accuracy,rpd_mean,fps,kept_ratio\n";
  for (const auto& r : rows) {
    out += num(r.value) + ',' + (r.accuracy ? num(*r.accuracy) : "") + ',' + (r.rpd_mean ? num(*r.rpd_mean) : "") +
           ',' + num(r.fps) + ',' + num(r.kept_ratio) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interactive mode

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void print_answer(std::ostream& out, const AnswerRecord& a) {
  if (a.error) {
    out << "error: " << *a.error << '\n';
  } else {
    out << "answer: " << a.answer << '\n';
  }
  out << "rpd: " << std::fixed << std::setprecision(4) << a.rpd << " s\n" << std::defaultfloat;
  out << "path:";
  if (a.path.empty()) out << " (empty tree)";
  for (std::size_t i = 0; i < a.path.size(); ++i) {
    out << (i ? " > " : " ") << 'L' << a.path[i].level << '#' << a.path[i].index;
  }
  out << '\n' << "best_caption: " << a.best_caption << '\n';
  if (a.dialogue_question) out << "recalled: " << *a.dialogue_question << '\n';
}

}  // namespace

RunReport run_repl(const EngineConfig& cfg, const PortSet& ports, FrameSource& source, std::istream& in,
                   std::ostream& out) {
  EngineConfig c = cfg;
  c.clock = ClockMode::Wall;
  Engine engine(c, ports);
  engine.start(source);
  out << "streaming; type a question, :sync, :status or quit\n" << std::flush;

  std::string line;
  while (std::getline(in, line)) {
    const std::string q = trim(line);
    if (q.empty()) continue;
    if (q == "quit" || q == "exit") break;
    if (q == ":sync") {
      engine.wait_for_stream_time(std::numeric_limits<double>::infinity());
      engine.wait_idle();
      out << "synced at version " << engine.latest_snapshot()->version << '\n' << std::flush;
      continue;
    }
    if (q == ":status") {
      const auto snap = engine.latest_snapshot();
      const auto sizes = snap->tree.level_sizes();
      out << "version " << snap->version << ", tree levels [";
      for (std::size_t i = 0; i < sizes.size(); ++i) out << (i ? "," : "") << sizes[i];
      out << "], dialogue turns " << snap->dialogue.entries.size() << '\n' << std::flush;
      continue;
    }
    print_answer(out, engine.submit_query(q));
    out << std::flush;
  }

  engine.request_stop();
  RunReport report = engine.finish();
  out << "frames_in " << report.frames_in << ", kept " << report.frames_kept << ", chunks " << report.chunks
      << ", answers " << report.answers.size() << '\n';
  return report;
}

}  // namespace streammem
