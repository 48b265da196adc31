#include "streammem/config.hpp"

#include <functional>
#include <map>

namespace streammem {

using nlohmann::json;

std::string_view to_string(ClockMode m) { return m == ClockMode::Simulated ? "sim" : "wall"; }

ClockMode clock_mode_from_string(std::string_view s) {
  if (s == "sim") return ClockMode::Simulated;
  if (s == "wall") return ClockMode::Wall;
  throw InputError("clock must be sim or wall, got '" + std::string(s) + "'");
}

void EngineConfig::validate() const {
  gate.validate();
  memory.validate();
  if (tokens_n < 1 || dim_d < 1) throw InputError("tokens_n and dim_d must be >= 1");
  if (text_dim < 8) throw InputError("text_dim must be >= 8");
  if (queue_bound < 1) throw InputError("queue_bound must be >= 1");
  if (pace < 0.0) throw InputError("pace must be >= 0");
  if (retrieval.dialogue_top_k < 1) throw InputError("dialogue_top_k must be >= 1");
  if (backend != "stub" && backend != "remote") throw InputError("backend must be stub or remote");
  if (backend == "remote") remote.validate();
}

EngineConfig preset_config(std::string_view name) {
  EngineConfig cfg;
  cfg.preset = std::string(name);
  if (name == "slow") {
    cfg.gate.threshold_t = 0.13;
    cfg.memory.chunk_len_L = 35;
    cfg.memory.group_size_g = 15;
    cfg.memory.cluster_goal_C = 5;
  } else if (name == "base") {
    cfg.gate.threshold_t = 0.35;
    cfg.memory.chunk_len_L = 25;
    cfg.memory.group_size_g = 10;
    cfg.memory.cluster_goal_C = 5;
  } else if (name == "fast") {
    cfg.gate.threshold_t = 0.58;
    cfg.memory.chunk_len_L = 30;
    cfg.memory.group_size_g = 15;
    cfg.memory.cluster_goal_C = 5;
  } else {
    throw InputError("unknown preset '" + std::string(name) + "' (expected slow, base or fast)");
  }
  return cfg;
}

namespace {

// One accessor per flat key; get writes the field into JSON, set reads it back.
struct Field {
  std::function<json(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const json&)> set;
};

template <typename T, typename Proj>
Field field(Proj proj) {
  return {[proj](const EngineConfig& c) { return json(proj(const_cast<EngineConfig&>(c))); },
          [proj](EngineConfig& c, const json& j) { proj(c) = j.get<T>(); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"threshold_t", field<double>([](EngineConfig& c) -> auto& { return c.gate.threshold_t; })},
      {"norm_scale", field<double>([](EngineConfig& c) -> auto& { return c.gate.norm_scale; })},
      {"singular_eps", field<double>([](EngineConfig& c) -> auto& { return c.gate.singular_eps; })},
      {"downsample_max_edge", field<std::size_t>([](EngineConfig& c) -> auto& { return c.gate.downsample_max_edge; })},
      {"chunk_len_L", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.chunk_len_L; })},
      {"group_size_g", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.group_size_g; })},
      {"cluster_goal_C", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.cluster_goal_C; })},
      {"short_len_S", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.short_len_S; })},
      {"candidate_len_N", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.candidate_len_N; })},
      {"forgetting_scale_s", field<double>([](EngineConfig& c) -> auto& { return c.memory.forgetting_scale_s; })},
      {"rng_seed", field<std::uint64_t>([](EngineConfig& c) -> auto& { return c.memory.rng_seed; })},
      {"kmeans_max_iter", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.kmeans_max_iter; })},
      {"kmeans_restarts", field<std::size_t>([](EngineConfig& c) -> auto& { return c.memory.kmeans_restarts; })},
      {"min_sim", field<double>([](EngineConfig& c) -> auto& { return c.retrieval.min_sim; })},
      {"dialogue_top_k", field<std::size_t>([](EngineConfig& c) -> auto& { return c.retrieval.dialogue_top_k; })},
      {"tokens_n", field<std::size_t>([](EngineConfig& c) -> auto& { return c.tokens_n; })},
      {"dim_d", field<std::size_t>([](EngineConfig& c) -> auto& { return c.dim_d; })},
      {"text_dim", field<std::size_t>([](EngineConfig& c) -> auto& { return c.text_dim; })},
      {"queue_bound", field<std::size_t>([](EngineConfig& c) -> auto& { return c.queue_bound; })},
      {"pace", field<double>([](EngineConfig& c) -> auto& { return c.pace; })},
      {"accuracy_threshold", field<double>([](EngineConfig& c) -> auto& { return c.accuracy_threshold; })},
      {"preset", field<std::string>([](EngineConfig& c) -> auto& { return c.preset; })},
      {"backend", field<std::string>([](EngineConfig& c) -> auto& { return c.backend; })},
      {"transcript_path", field<std::string>([](EngineConfig& c) -> auto& { return c.transcript_path; })},
      {"remote_base_url", field<std::string>([](EngineConfig& c) -> auto& { return c.remote.base_url; })},
      {"remote_timeout", field<double>([](EngineConfig& c) -> auto& { return c.remote.timeout; })},
      {"remote_retry_count", field<std::size_t>([](EngineConfig& c) -> auto& { return c.remote.retry_count; })},
      {"remote_api_key_env_var", field<std::string>([](EngineConfig& c) -> auto& { return c.remote.api_key_env_var; })},
      {"cost_gate_per_frame", field<double>([](EngineConfig& c) -> auto& { return c.cost.gate_per_frame; })},
      {"cost_encode_per_frame", field<double>([](EngineConfig& c) -> auto& { return c.cost.encode_per_frame; })},
      {"cost_kmeans_per_op", field<double>([](EngineConfig& c) -> auto& { return c.cost.kmeans_per_op; })},
      {"cost_caption", field<double>([](EngineConfig& c) -> auto& { return c.cost.caption; })},
      {"cost_text_encode", field<double>([](EngineConfig& c) -> auto& { return c.cost.text_encode; })},
      {"cost_assembly_base", field<double>([](EngineConfig& c) -> auto& { return c.cost.assembly_base; })},
      {"cost_per_similarity", field<double>([](EngineConfig& c) -> auto& { return c.cost.per_similarity; })},
      {"cost_per_token_row", field<double>([](EngineConfig& c) -> auto& { return c.cost.per_token_row; })},
      {"cost_generate", field<double>([](EngineConfig& c) -> auto& { return c.cost.generate; })},
  };
  return f;
}

}  // namespace

json config_to_json(const EngineConfig& cfg) {
  json j = json::object();
  for (const auto& [key, f] : fields()) j[key] = f.get(cfg);
  j["clock"] = std::string(to_string(cfg.clock));
  return j;
}

void apply_config_json(EngineConfig& cfg, const json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "clock") {
      if (!value.is_string()) throw InputError("config key 'clock' must be a string");
      cfg.clock = clock_mode_from_string(value.get<std::string>());
      continue;
    }
    const auto it = fields().find(key);
    if (it == fields().end()) throw InputError("unknown config key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const json::exception& e) {
      throw InputError("config key '" + key + "': " + e.what());
    }
  }
}

PortSet make_ports(const EngineConfig& cfg) {
  if (cfg.backend == "remote") return make_remote_ports(cfg.remote, cfg.tokens_n, cfg.dim_d, cfg.text_dim);
  return make_stub_ports(cfg.tokens_n, cfg.dim_d, cfg.text_dim);
}

}  // namespace streammem
