// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// argv[1] is the streammem CLI binary.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "streammem/harness.hpp"
#include "streammem/kmeans.hpp"
#include "test_util.hpp"

using namespace streammem;
namespace fs = std::filesystem;
using Seconds = std::chrono::duration<double>;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  failures += !ok;
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

double since(std::chrono::steady_clock::time_point t0) {
  return Seconds(std::chrono::steady_clock::now() - t0).count();
}

// 1. Every integer shift in [-2,2]^2 on each of 50 textures.
void optical_flow() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t cases = 0, close = 0, zero_ok = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto tex = oracle::Texture::random(seed);
    const Frame prev = tex.render(64, 64, 0, 0, 0.0);
    if (estimate_motion(prev, prev).magnitude == 0.0) ++zero_ok;
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        const Frame cur = tex.render(64, 64, dx, dy, 0.1);
        const auto [ox, oy] = oracle::ssd_shift(prev, cur, 3);
        const auto m = estimate_motion(prev, cur);
        ++cases;
        close += std::abs(m.u - ox) <= 0.5 && std::abs(m.v - oy) <= 0.5;
      }
    }
  }
  const double secs = since(t0);
  const double frac = static_cast<double>(close) / static_cast<double>(cases);
  report(1, frac >= 0.95 && zero_ok == 50 && secs < 10.0,
         std::to_string(close) + "/" + std::to_string(cases) + " within 0.5 px (" + fmt(100 * frac) +
             "%), identical frames zero " + std::to_string(zero_ok) + "/50, " + fmt(secs, 3) + " s");
}

// 2. Kept-frame count against t on 10 synthetic streams.
void gating_monotone() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> motion(0.0, 0.6);
  std::size_t ok_streams = 0;
  std::string sample;
  for (int s = 0; s < 10; ++s) {
    SceneSpec spec;
    spec.seed = 500 + s;
    for (int k = 0; k < 3; ++k) spec.scenes.push_back({{"p" + std::to_string(k)}, 6.0, motion(rng)});
    std::vector<std::size_t> kept;
    for (int i = 1; i <= 9; ++i) {
      GateConfig g;
      g.threshold_t = 0.1 * i;
      FrameGate gate(g);
      SyntheticSource src(spec);
      std::size_t n = 0;
      while (auto f = src.next()) n += gate.gate(*f).keep;
      kept.push_back(n);
    }
    ok_streams += std::is_sorted(kept.rbegin(), kept.rend());
    if (s == 0) {
      for (auto n : kept) sample += (sample.empty() ? "" : ",") + std::to_string(n);
    }
  }
  report(2, ok_streams == 10,
         std::to_string(ok_streams) + "/10 streams non-increasing; stream 0 kept [" + sample + "]");
}

// 3. k-means against the exhaustive best partition.
void kmeans_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> m_dist(1, 12), k_dist(1, 3);
  std::normal_distribution<double> n01;
  std::size_t optimal = 0, monotone_rest = 0, rest = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t m = m_dist(rng), k = k_dist(rng);
    std::vector<std::vector<double>> pts(m, std::vector<double>(2));
    Matrix mat(m, 2);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < 2; ++j) mat(i, j) = pts[i][j] = n01(rng);
    }
    const auto r = kmeans(mat, k, 1000 + inst);
    const double best = oracle::best_partition_objective(pts, k);
    if (std::abs(r.objective - best) <= 1e-9) {
      ++optimal;
      continue;
    }
    ++rest;
    bool mono = true;
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      mono = mono && r.objective_history[i] <= r.objective_history[i - 1] + 1e-9;
    }
    monotone_rest += mono;
  }
  report(3, optimal >= 180 && monotone_rest == rest,
         std::to_string(optimal) + "/200 optimal within 1e-9, " + std::to_string(monotone_rest) + "/" +
             std::to_string(rest) + " others monotone");
}

// 4. Level sizes against iterated ceil(B / g^k), both from the formula and
// from a tree grown one unit at a time.
void tree_shape() {
  auto iterated_ceil = [](std::size_t b, std::size_t g) {
    std::vector<std::size_t> sizes{b};
    for (std::size_t p = g; sizes.back() > g; p *= g) sizes.push_back((b + p - 1) / p);
    return sizes;
  };
  std::size_t checked = 0, bad = 0;
  auto ports = make_stub_ports(1, 2, 16);
  for (std::size_t g : {2u, 3u, 10u, 15u}) {
    MemoryConfig cfg;
    cfg.group_size_g = g;
    cfg.cluster_goal_C = 1;
    cfg.kmeans_restarts = 1;
    MemoryTree tree(g);
    for (std::size_t b = 1; b <= 200; ++b) {
      const auto chunk = testutil::chunk(b - 1, 1, 1, 2, {"t" + std::to_string(b % 7)});
      append_unit(tree, make_unit(chunk, cfg, *ports.captioner, *ports.text_encoder), cfg, *ports.captioner,
                  *ports.text_encoder);
      std::vector<std::size_t> actual;
      for (std::size_t k = 0; k < tree.depth(); ++k) actual.push_back(tree.level(k).size());
      const auto want = iterated_ceil(b, g);
      bad += actual != want || expected_level_sizes(b, g) != want || oracle::grouped_level_sizes(b, g) != want;
      ++checked;
    }
  }
  const bool case_ok = expected_level_sizes(4, 2) == std::vector<std::size_t>{4, 2};
  report(4, bad == 0 && case_ok,
         std::to_string(checked - bad) + "/" + std::to_string(checked) + " (B,g) pairs exact; g=2, B=4 gives [4,2]: " +
             (case_ok ? "yes" : "no"));
}

// Chronological g-ary tree with the given caption vectors per level.
MemoryTree build_tree(std::size_t g, const std::vector<std::vector<std::vector<double>>>& vecs) {
  MemoryTree tree(g);
  for (std::size_t k = 0; k < vecs.size(); ++k) {
    auto& level = tree.mutable_level(k);
    for (std::size_t i = 0; i < vecs[k].size(); ++i) {
      auto n = std::make_shared<MemoryNode>();
      n->level = k;
      n->caption_vec = vecs[k][i];
      n->centroids = Matrix(1, 2);
      if (k == 0) {
        n->span = {static_cast<double>(i), static_cast<double>(i) + 0.5};
      } else {
        const auto& below = tree.level(k - 1);
        n->child_begin = i * g;
        n->child_end = std::min(below.size(), (i + 1) * g);
        n->span = below[n->child_begin]->span.merged(below[n->child_end - 1]->span);
      }
      n->caption = "n" + std::to_string(k) + "." + std::to_string(i);
      level.push_back(n);
    }
  }
  return tree;
}

// 5. descend_tree against a per-level argmax over the serialized tree.
void retrieval_oracle() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> g_dist(2, 4), coord(-2, 2);
  std::bernoulli_distribution copy(0.3);
  const std::size_t dim = 4;
  std::size_t match = 0, with_ties = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t g = g_dist(rng);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(1, g * g * g * g)(rng);
    const auto sizes = expected_level_sizes(b, g);
    std::vector<std::vector<std::vector<double>>> vecs(sizes.size());
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      for (std::size_t i = 0; i < sizes[k]; ++i) {
        std::vector<double> v(dim);
        if (i > 0 && copy(rng)) {
          v = vecs[k][i - 1];  // exact tie with the left sibling
        } else {
          for (auto& x : v) x = coord(rng);
        }
        vecs[k].push_back(v);
      }
    }
    QueryVec q;
    for (std::size_t j = 0; j < dim; ++j) q.vec.push_back(coord(rng));
    if (std::all_of(q.vec.begin(), q.vec.end(), [](double x) { return x == 0.0; })) q.vec[0] = 1.0;

    const auto tree = build_tree(g, vecs);
    const auto j = tree_to_json(tree);
    const auto want = oracle::argmax_path(j, q.vec);
    const auto got = descend_tree(tree, q);
    bool same = got.steps.size() == want.size();
    for (std::size_t s = 0; same && s < want.size(); ++s) {
      same = got.steps[s].level == want[s].level && got.steps[s].index == want[s].index;
    }
    match += same;

    // Did the oracle have to break a tie somewhere along the path?
    bool tie = false;
    for (const auto& step : want) {
      const auto& lvl = j["levels"][step.level];
      const double s = oracle::cosine(lvl[step.index]["caption_vec"].get<std::vector<double>>(), q.vec);
      for (std::size_t i = 0; i < lvl.size(); ++i) {
        tie = tie || (i != step.index && oracle::cosine(lvl[i]["caption_vec"].get<std::vector<double>>(), q.vec) == s);
      }
    }
    with_ties += tie;
  }
  report(5, match == 100 && with_ties > 0,
         std::to_string(match) + "/100 paths equal the oracle; " + std::to_string(with_ties) +
             " trees contain tied scores on the chosen levels");
}

// 6. Metric formulas and the rpd of a query asked at 10.0 that starts at 10.9.
void metric_formulas() {
  const std::vector<double> coh{5, 3, 5}, acc{5, 4, 2};
  const double c = coherence(coh).value_or(-1.0);
  const double a = accuracy(acc, 3.0);

  EngineConfig cfg;
  cfg.cost.assembly_base = 0.9;
  cfg.cost.per_similarity = 0.0;
  cfg.cost.per_token_row = 0.0;
  cfg.cost.text_encode = 0.0;
  VectorSource src({testutil::flat_frame(0.2, 0.0)});
  const auto r = run(src, {{"hello", 10.0}}, cfg, make_stub_ports(cfg.tokens_n, cfg.dim_d, cfg.text_dim));
  const double rpd = r.answers.at(0).rpd;
  const double want_a = 2.0 / 3.0;
  const bool ok = std::abs(c - 2.0) <= 1e-9 && std::abs(a - want_a) <= 1e-9 && std::abs(rpd - 0.9) <= 1e-9 &&
                  std::abs(r.answers[0].t_start - 10.9) <= 1e-9;
  report(6, ok, "coherence " + fmt(c, 12) + ", accuracy " + fmt(a, 12) + ", rpd " + fmt(rpd, 12));
}

// 7. Short-term sampler pick frequencies, n = 3, s = 1.
void forgetting_sampler() {
  std::vector<VisionEmbedding> recent;
  for (int i = 0; i < 3; ++i) recent.push_back(testutil::embedding(i, 1, 2, i));
  std::mt19937_64 rng(7);
  std::vector<double> counts(3, 0.0);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    const auto st = refresh_short_term(recent, 1, 3, 1.0, rng);
    const double ts = st.units.at(0).source_timestamp;
    counts[2 - static_cast<std::size_t>(ts)] += 1.0;  // index 0 is the newest
  }
  const auto want = oracle::forgetting(3, 1.0);
  double worst = 0.0;
  std::string freq;
  for (std::size_t k = 0; k < 3; ++k) {
    counts[k] /= draws;
    worst = std::max(worst, std::abs(counts[k] - want[k]));
    freq += (k ? ", " : "") + fmt(counts[k]) + " vs " + fmt(want[k]);
  }
  report(7, worst <= 0.01, "newest-first " + freq + "; max deviation " + fmt(worst, 3));
}

bool has_word(const std::string& text, const std::string& w) {
  const auto ws = oracle::words(text);
  return std::binary_search(ws.begin(), ws.end(), w);
}

// 8. End-to-end recall on generated traces.
void end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const EngineConfig cfg = preset_config("base");
  const auto ports = make_stub_ports(cfg.tokens_n, cfg.dim_d, cfg.text_dim);
  std::pair<std::size_t, std::size_t> tag_counts, ci_tag_counts;
  std::size_t ci_q = 0, ci_ok = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    TraceGenOptions o;
    o.seed = seed;
    const Trace trace = generate_trace(o);
    std::vector<std::string> tags;
    for (const auto& s : trace.source.synthetic.scenes) tags.insert(tags.end(), s.tags.begin(), s.tags.end());

    auto source = open_source(trace.source);
    std::vector<QueryRequest> queries;
    for (const auto& q : trace.queries) queries.push_back({q.question, q.t_input});
    const auto r = run(*source, queries, cfg, ports);

    // Dialogue turn index -> answer index, in the order turns were stored.
    std::vector<std::size_t> turn_answer;
    for (const auto& e : r.update_log) {
      if (e.kind == UpdateLogEntry::Kind::Dialogue) turn_answer.push_back(e.answer_index);
    }
    for (std::size_t i = 0; i < trace.queries.size(); ++i) {
      const auto& q = trace.queries[i];
      const auto& a = r.answers.at(i);
      // Scene-recall questions carry the tag clause; dialogue questions are
      // scored by the recalled turn and their tag recall is only reported.
      const bool scene_q = q.task_type == "SM" || q.task_type == "LM" || q.task_type == "OS";
      for (const auto& tag : tags) {
        if (!has_word(q.question, tag)) continue;
        auto& [asked, hit] = scene_q ? tag_counts : ci_tag_counts;
        ++asked;
        hit += has_word(a.best_caption, tag);
      }
      if (q.refers_to) {
        ++ci_q;
        ci_ok += a.dialogue_turn && *a.dialogue_turn < turn_answer.size() &&
                 turn_answer[*a.dialogue_turn] == *q.refers_to;
      }
    }
  }
  const double secs = since(t0);
  const auto [tag_q, tag_ok] = tag_counts;
  const double tag_frac = tag_q ? static_cast<double>(tag_ok) / static_cast<double>(tag_q) : 0.0;
  const double ci_frac = ci_q ? static_cast<double>(ci_ok) / static_cast<double>(ci_q) : 0.0;
  report(8, tag_frac >= 0.95 && ci_frac >= 0.95 && secs < 120.0,
         "scene-query tag recall " + std::to_string(tag_ok) + "/" + std::to_string(tag_q) + " (" + fmt(100 * tag_frac) +
             "%), dialogue recall " + std::to_string(ci_ok) + "/" + std::to_string(ci_q) + " (" +
             fmt(100 * ci_frac) + "%), " + fmt(secs, 3) + " s; dialogue questions naming a tag " +
             std::to_string(ci_tag_counts.second) + "/" + std::to_string(ci_tag_counts.first));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 9. Wall-clock stress with 1000 queries, then two simulated replays.
void concurrency() {
  TraceGenOptions o;
  o.seed = 99;
  o.scenes = 3;
  o.scene_duration = 20.0;
  Trace trace = generate_trace(o);
  const auto base_queries = trace.queries;
  trace.queries.clear();
  const double end = 3 * o.scene_duration;
  for (std::size_t i = 0; i < 1000; ++i) {
    TraceQuery q = base_queries[i % base_queries.size()];
    q.refers_to.reset();
    q.t_input = end * static_cast<double>(i) / 1000.0;
    trace.queries.push_back(q);
  }

  EngineConfig wall = preset_config("base");
  wall.clock = ClockMode::Wall;
  wall.pace = 20.0;  // about 3 s of wall time, so queries overlap formation
  wall.memory.chunk_len_L = 5;
  const auto ports = make_stub_ports(wall.tokens_n, wall.dim_d, wall.text_dim);
  auto source = open_source(trace.source);
  std::vector<QueryRequest> queries;
  for (const auto& q : trace.queries) queries.push_back({q.question, q.t_input});
  const auto r = run(*source, queries, wall, ports);

  std::size_t failed = 0;
  bool versions_monotone = true;
  for (std::size_t i = 0; i < r.answers.size(); ++i) {
    failed += r.answers[i].error.has_value();
    if (i) versions_monotone = versions_monotone && r.answers[i].snapshot_version >= r.answers[i - 1].snapshot_version;
  }
  const bool stress_ok = r.answers.size() == 1000 && r.snapshots_checked == 1000 && r.snapshot_violations == 0 &&
                         failed == 0 && versions_monotone;

  testutil::TempDir dir("acceptance_replay");
  EngineConfig sim = preset_config("base");
  sim.memory.chunk_len_L = 5;
  run_benchmark(trace, sim, ports, dir.path() / "a");
  run_benchmark(trace, sim, ports, dir.path() / "b");
  const auto ra = slurp(dir.path() / "a" / "report.json"), rb = slurp(dir.path() / "b" / "report.json");
  const bool identical = !ra.empty() && ra == rb;

  report(9, stress_ok && identical,
         std::to_string(r.answers.size()) + " wall answers, " + std::to_string(r.snapshots_checked) +
             " snapshots checked, " + std::to_string(r.snapshot_violations) + " violations, " +
             std::to_string(r.snapshot_versions) + " versions published; simulated reports " +
             (identical ? "byte-identical (" + std::to_string(ra.size()) + " bytes)" : "differ"));
}

int run_cli(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1 < /dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10. Preset echo in report.json via the CLI.
void presets(const std::string& cli) {
  testutil::TempDir dir("acceptance_presets");
  TraceGenOptions o;
  o.scenes = 2;
  o.scene_duration = 5.0;
  o.seed = 3;
  save_trace(dir.path() / "t.jsonl", generate_trace(o));

  struct Want {
    std::string name;
    double t;
    int L, g, C;
  };
  const std::vector<Want> wants = {{"slow", 0.13, 35, 15, 5}, {"base", 0.35, 25, 10, 5}, {"fast", 0.58, 30, 15, 5}};
  std::string detail;
  bool ok = true;
  for (const auto& w : wants) {
    const auto out = dir.path() / w.name;
    const int code = run_cli(cli + " run --preset " + w.name + " --trace '" + (dir.path() / "t.jsonl").string() +
                             "' --out '" + out.string() + "'");
    if (code != 0) {
      ok = false;
      detail += w.name + " exit " + std::to_string(code) + "; ";
      continue;
    }
    const auto c = nlohmann::json::parse(std::ifstream(out / "report.json")).at("config");
    const bool match = c.at("preset") == w.name && c.at("threshold_t").get<double>() == w.t &&
                       c.at("chunk_len_L").get<int>() == w.L && c.at("group_size_g").get<int>() == w.g &&
                       c.at("cluster_goal_C").get<int>() == w.C;
    ok = ok && match;
    detail += w.name + " (" + c.at("threshold_t").dump() + "," + c.at("chunk_len_L").dump() + "," +
              c.at("group_size_g").dump() + "," + c.at("cluster_goal_C").dump() + ")" + (match ? "" : " MISMATCH") +
              "; ";
  }
  report(10, ok, detail);
}

template <typename F>
void guarded(int id, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <streammem-cli>\n";
    return 2;
  }
  const std::string cli = argv[1];
  guarded(1, optical_flow);
  guarded(2, gating_monotone);
  guarded(3, kmeans_oracle);
  guarded(4, tree_shape);
  guarded(5, retrieval_oracle);
  guarded(6, metric_formulas);
  guarded(7, forgetting_sampler);
  guarded(8, end_to_end);
  guarded(9, concurrency);
  guarded(10, [&] { presets(cli); });
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
