// streammem: run, sweep, repl and gen-trace front end.
//
// Exit codes: 0 success, 2 bad input (flags, config, trace), 3 backend failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "streammem/config.hpp"
#include "streammem/harness.hpp"

namespace fs = std::filesystem;
using namespace streammem;

namespace {

struct CommonOpts {
  std::string preset;
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string clock;
  std::string backend;
};

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--preset", o.preset, "slow, base or fast (default base)")
      ->check(CLI::IsMember({"slow", "base", "fast"}));
  app->add_option("--config", o.config_file, "JSON file overriding config fields");
  app->add_option("--seed", o.seed, "memory formation seed");
  app->add_option("--clock", o.clock, "sim or wall")->check(CLI::IsMember({"sim", "wall"}));
  app->add_option("--backend", o.backend, "stub or remote")->check(CLI::IsMember({"stub", "remote"}));
}

// Preset, then config file, then individual flags.
EngineConfig resolve_config(const CommonOpts& o) {
  nlohmann::json overrides = nlohmann::json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw InputError("cannot open config " + o.config_file);
    try {
      overrides = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config " + o.config_file + ": " + e.what());
    }
    if (!overrides.is_object()) throw InputError("config must be a JSON object");
  }
  std::string preset = o.preset;
  if (preset.empty() && overrides.contains("preset")) {
    if (!overrides["preset"].is_string()) throw InputError("config key 'preset' must be a string");
    preset = overrides["preset"].get<std::string>();
  }
  if (preset.empty()) preset = "base";
  EngineConfig cfg = preset_config(preset);
  overrides.erase("preset");
  apply_config_json(cfg, overrides);
  if (o.seed) cfg.memory.rng_seed = *o.seed;
  if (!o.clock.empty()) cfg.clock = clock_mode_from_string(o.clock);
  if (!o.backend.empty()) cfg.backend = o.backend;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InputError("bad sweep value '" + item + "'");
    }
  }
  if (out.empty()) throw InputError("--values needs at least one number");
  return out;
}

void print_summary(const RunReport& r) {
  std::cout << "frames_in " << r.frames_in << ", kept " << r.frames_kept << ", chunks " << r.chunks
            << ", effective_fps " << r.effective_fps << '\n';
  if (r.metrics) {
    std::cout << "answers " << r.metrics->count << ", accuracy " << r.metrics->accuracy << ", mean_score "
              << r.metrics->mean_score << ", rpd_mean " << r.metrics->rpd_mean << " s, rpd_p95 " << r.metrics->rpd_p95
              << " s\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming hierarchical memory engine"};
  app.require_subcommand(1);

  CommonOpts run_o, sweep_o, repl_o;
  std::string run_trace, run_out = "out";
  auto* run_cmd = app.add_subcommand("run", "replay a trace and write report.json and transcript.jsonl");
  add_common(run_cmd, run_o);
  run_cmd->add_option("--trace", run_trace, "trace JSONL")->required();
  run_cmd->add_option("--out", run_out, "output directory");

  std::string sweep_trace, sweep_param, sweep_values, sweep_out = "sweep_out";
  auto* sweep_cmd = app.add_subcommand("sweep", "run a trace once per parameter value and write sweep.csv");
  add_common(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--trace", sweep_trace, "trace JSONL")->required();
  sweep_cmd->add_option("--param", sweep_param, "t, L, g or C")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
  sweep_cmd->add_option("--out", sweep_out, "output directory");

  std::string repl_trace, repl_out;
  double repl_pace = 1.0;
  auto* repl_cmd = app.add_subcommand("repl", "stream a source and answer questions typed on stdin");
  add_common(repl_cmd, repl_o);
  repl_cmd->add_option("--trace", repl_trace, "take the frame source from this trace (default: generated scenes)");
  repl_cmd->add_option("--pace", repl_pace, "stream seconds per wall second, 0 for as fast as possible")
      ->check(CLI::NonNegativeNumber);
  repl_cmd->add_option("--out", repl_out, "write report.json here on exit");

  TraceGenOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-trace", "write a synthetic trace");
  gen_cmd->add_option("--out", gen_out, "trace file to write")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--scenes", gen.scenes, "number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--duration", gen.scene_duration, "seconds per scene")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--fps", gen.fps, "frames per second")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--noise", gen.noise, "intensity noise stddev")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--motion-min", gen.motion_min, "lowest per-scene motion level");
  gen_cmd->add_option("--motion-max", gen.motion_max, "highest per-scene motion level");
  bool no_queries = false;
  gen_cmd->add_flag("--no-queries", no_queries, "frames only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) {
      const EngineConfig cfg = resolve_config(run_o);
      const Trace trace = load_trace(run_trace);
      const RunReport r =
          run_benchmark(trace, cfg, make_ports(cfg), fs::path(run_out), fs::path(run_trace).parent_path());
      print_summary(r);
      std::cout << "wrote " << (fs::path(run_out) / "report.json").string() << '\n';
    } else if (*sweep_cmd) {
      const EngineConfig cfg = resolve_config(sweep_o);
      const Trace trace = load_trace(sweep_trace);
      const auto values = parse_values(sweep_values);
      const auto rows = run_sweep(trace, sweep_param, values, cfg, make_ports(cfg), fs::path(sweep_out),
                                  fs::path(sweep_trace).parent_path());
      std::cout << sweep_csv(rows);
    } else if (*repl_cmd) {
      EngineConfig cfg = resolve_config(repl_o);
      cfg.pace = repl_pace;
      Trace trace;
      fs::path base;
      if (repl_trace.empty()) {
        TraceGenOptions opts;
        opts.with_queries = false;
        opts.seed = cfg.memory.rng_seed;
        trace = generate_trace(opts);
      } else {
        trace = load_trace(repl_trace);
        base = fs::path(repl_trace).parent_path();
      }
      if (trace.source.kind == SourceSpec::Kind::Synthetic) {
        for (const auto& e : scene_timeline(trace.source.synthetic)) {
          std::cout << "scene " << e.span.first << "-" << e.span.last << " s: " << caption_from_tags(e.tags) << '\n';
        }
      }
      auto source = open_source(trace.source, base);
      const RunReport r = run_repl(cfg, make_ports(cfg), *source, std::cin, std::cout);
      if (!repl_out.empty()) {
        fs::create_directories(repl_out);
        std::ofstream(fs::path(repl_out) / "report.json") << report_to_json(r).dump(2) << '\n';
      }
    } else if (*gen_cmd) {
      gen.with_queries = !no_queries;
      const Trace t = generate_trace(gen);
      save_trace(gen_out, t);
      std::cout << "wrote " << gen_out << " (" << t.source.synthetic.scenes.size() << " scenes, " << t.queries.size()
                << " queries)\n";
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
