#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "streammem/frame_gate.hpp"
#include "streammem/memory.hpp"
#include "streammem/ports.hpp"
#include "streammem/retrieval.hpp"

namespace streammem {

enum class ClockMode { Simulated, Wall };

std::string_view to_string(ClockMode m);
ClockMode clock_mode_from_string(std::string_view s);

/// Simulated-clock durations (seconds). Formation and context assembly share
/// one modeled accelerator and run on it in FIFO order; stage 1 and answer
/// generation have their own.
struct SimCostModel {
  double gate_per_frame = 0.01;
  double encode_per_frame = 0.03;
  double kmeans_per_op = 5e-8;  // per row * centroid * dim * iteration * restart
  double caption = 0.05;
  double text_encode = 0.005;
  double assembly_base = 0.05;
  double per_similarity = 1e-4;
  double per_token_row = 1e-4;
  double generate = 0.3;
};

struct EngineConfig {
  GateConfig gate;
  MemoryConfig memory;
  RetrievalConfig retrieval;
  std::size_t tokens_n = 4;
  std::size_t dim_d = 64;
  std::size_t text_dim = 384;
  std::size_t queue_bound = 4;  // chunks between stage 1 and formation
  ClockMode clock = ClockMode::Simulated;
  double pace = 0.0;  // wall mode: stream seconds per wall second, 0 = unpaced
  SimCostModel cost;
  double accuracy_threshold = 3.0;
  std::string preset = "base";
  std::string backend = "stub";
  RemoteBackendConfig remote;
  std::string transcript_path;

  void validate() const;
};

/// slow / base / fast memory configurations (t, L, g, C).
EngineConfig preset_config(std::string_view name);

/// Flat JSON echo of every tunable field.
nlohmann::json config_to_json(const EngineConfig& cfg);

/// Overrides fields named in `j` (same flat keys as config_to_json). Unknown
/// keys or wrong types throw InputError.
void apply_config_json(EngineConfig& cfg, const nlohmann::json& j);

/// Builds stub or remote ports per cfg.backend.
PortSet make_ports(const EngineConfig& cfg);

}  // namespace streammem
