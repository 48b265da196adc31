#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streammem/common.hpp"
#include "streammem/frame_gate.hpp"
#include "streammem/kmeans.hpp"
#include "streammem/ports.hpp"

namespace streammem {

struct MemoryConfig {
  std::size_t chunk_len_L = 25;
  std::size_t group_size_g = 10;
  std::size_t cluster_goal_C = 5;
  std::size_t short_len_S = 5;
  std::size_t candidate_len_N = 20;
  double forgetting_scale_s = 5.0;
  std::uint64_t rng_seed = 0;
  std::size_t kmeans_max_iter = 50;
  std::size_t kmeans_restarts = 10;

  void validate() const;
};

/// exp(-k / scale) for ages k = 0 (newest) .. n-1, normalized to sum 1.
std::vector<double> forgetting_weights(std::size_t n, double scale_s);

struct ShortTermMemory {
  std::vector<VisionEmbedding> units;  // chronological
  double last_refresh_timestamp = 0.0;
};

/// Samples min(S, |pool|) embeddings without replacement from the last N of
/// `recent` (newest last), weighted by forgetting_weights over age.
ShortTermMemory refresh_short_term(std::span<const VisionEmbedding> recent, std::size_t short_len_S,
                                   std::size_t candidate_len_N, double scale_s, std::mt19937_64& rng);

/// A tree node. Level-0 nodes are the long-memory units built from chunks;
/// higher levels cover [child_begin, child_end) of the level below.
struct MemoryNode {
  Matrix centroids;
  std::string caption;
  std::vector<double> caption_vec;
  TimeSpan span;
  std::size_t level = 0;
  std::size_t child_begin = 0;
  std::size_t child_end = 0;
};

using LongMemoryUnit = MemoryNode;
using NodePtr = std::shared_ptr<const MemoryNode>;

/// Chronological g-ary tree. Nodes are immutable and shared, so copying a
/// tree is cheap and never aliases mutable state.
class MemoryTree {
 public:
  explicit MemoryTree(std::size_t group_size = 10);

  std::size_t group_size() const noexcept { return g_; }
  bool empty() const noexcept { return levels_.empty() || levels_[0].empty(); }
  std::size_t depth() const noexcept { return levels_.size(); }
  std::size_t top_level() const noexcept { return levels_.empty() ? 0 : levels_.size() - 1; }
  const std::vector<NodePtr>& level(std::size_t k) const { return levels_.at(k); }
  const MemoryNode& node(std::size_t level, std::size_t index) const { return *levels_.at(level).at(index); }
  std::vector<std::size_t> level_sizes() const;

  // Low-level mutation used by append_unit and the JSON loader.
  std::vector<NodePtr>& mutable_level(std::size_t k);
  void set_group_size(std::size_t g) { g_ = g; }

 private:
  std::size_t g_;
  std::vector<std::vector<NodePtr>> levels_;
};

/// Expected level sizes: iterated ceil(B / g) while the level exceeds g.
std::vector<std::size_t> expected_level_sizes(std::size_t basic_units, std::size_t g);

/// Every violated structural invariant, described; empty when sound.
std::vector<std::string> check_tree_invariants(const MemoryTree& tree);

struct FormationStats {
  double kmeans_ops = 0.0;  // sum of rows * k * dim * iterations
  std::size_t caption_calls = 0;
  std::size_t encode_calls = 0;
};

std::uint64_t chunk_seed(std::uint64_t rng_seed, std::size_t chunk_index);

/// Clusters the chunk's token rows into C centroids and captions it.
LongMemoryUnit make_unit(const Chunk& chunk, const MemoryConfig& cfg, const Captioner& captioner,
                         const TextEncoder& encoder, FormationStats* stats = nullptr);

/// Pushes a level-0 unit and rebuilds the ancestors it affects. A trailing
/// partial group already has a parent, which is re-formed as children arrive.
void append_unit(MemoryTree& tree, LongMemoryUnit unit, const MemoryConfig& cfg, const Captioner& captioner,
                 const TextEncoder& encoder, FormationStats* stats = nullptr);

struct DialogueEntry {
  std::string question;
  std::string answer;
  std::vector<double> vec;
  std::size_t turn_index = 0;
  double timestamp = 0.0;
};

struct DialogueMemory {
  std::vector<std::shared_ptr<const DialogueEntry>> entries;
};

std::string dialogue_text(std::string_view question, std::string_view answer);

void append_dialogue(DialogueMemory& mem, std::string question, std::string answer, const TextEncoder& encoder,
                     double timestamp);

struct MemorySnapshot {
  std::uint64_t version = 0;
  ShortTermMemory short_term;
  MemoryTree tree;
  DialogueMemory dialogue;
};

using SnapshotPtr = std::shared_ptr<const MemorySnapshot>;

SnapshotPtr snapshot(const ShortTermMemory& st, const MemoryTree& tree, const DialogueMemory& dialogue,
                     std::uint64_t version);

/// The three memories, owned by the formation stage. Every mutation bumps
/// the version; snapshot() hands out an immutable copy.
class MemoryStore {
 public:
  MemoryStore(MemoryConfig cfg, std::shared_ptr<const Captioner> captioner,
              std::shared_ptr<const TextEncoder> encoder);

  FormationStats ingest_chunk(const Chunk& chunk);
  void add_dialogue(std::string question, std::string answer, double timestamp);

  SnapshotPtr snapshot() const;
  std::uint64_t version() const noexcept { return version_; }
  const MemoryTree& tree() const noexcept { return tree_; }
  const DialogueMemory& dialogue() const noexcept { return dialogue_; }
  const ShortTermMemory& short_term() const noexcept { return short_term_; }
  const MemoryConfig& config() const noexcept { return cfg_; }

 private:
  MemoryConfig cfg_;
  std::shared_ptr<const Captioner> captioner_;
  std::shared_ptr<const TextEncoder> encoder_;
  MemoryTree tree_;
  DialogueMemory dialogue_;
  ShortTermMemory short_term_;
  std::deque<VisionEmbedding> recent_;  // last N kept embeddings
  std::uint64_t version_ = 0;
};

// Versioned JSON dump of the tree (format "streammem.tree", version 1).
nlohmann::json tree_to_json(const MemoryTree& tree);
MemoryTree tree_from_json(const nlohmann::json& j);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace streammem
