#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streammem/memory.hpp"

namespace streammem {

/// dot(a,b) / (|a||b|); 0 when either vector is zero. Throws InputError on
/// a dimension mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct QueryVec {
  std::vector<double> vec;
  std::string text;
};

QueryVec encode_query(std::string question, const TextEncoder& encoder);

struct PathStep {
  std::size_t level = 0;
  std::size_t index = 0;
  double similarity = 0.0;
  friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct PathResult {
  std::vector<PathStep> steps;             // topmost level first
  std::vector<Matrix> collected_centroids; // one per step
  std::string best_caption;                // caption of the level-0 node reached

  bool empty() const noexcept { return steps.empty(); }
};

/// Greedy per-level argmax of cosine(query, caption_vec), starting from the
/// topmost materialized level. Ties go to the earlier node. An empty tree
/// yields an empty result.
PathResult descend_tree(const MemoryTree& tree, const QueryVec& q);

struct DialogueHit {
  std::shared_ptr<const DialogueEntry> entry;
  double similarity = 0.0;
};

/// Exact top-1 by cosine; ties go to the most recent turn. Nothing when the
/// best similarity is below min_sim.
std::optional<DialogueHit> retrieve_dialogue(const DialogueMemory& mem, const QueryVec& q, double min_sim);

/// Top-k variant, best first.
std::vector<DialogueHit> retrieve_dialogue_top_k(const DialogueMemory& mem, const QueryVec& q, double min_sim,
                                                 std::size_t k);

struct RetrievalConfig {
  double min_sim = 0.35;
  std::size_t dialogue_top_k = 1;
};

struct PromptBundle {
  std::string question;
  std::vector<VisionEmbedding> short_term;
  PathResult path;  // path.collected_centroids are the tree tokens
  std::vector<DialogueHit> dialogue_context;
  std::uint64_t snapshot_version = 0;

  const std::vector<Matrix>& tree_tokens() const noexcept { return path.collected_centroids; }
};

PromptBundle assemble_context(const MemorySnapshot& snap, const QueryVec& q, const RetrievalConfig& cfg = {});

/// Transcript form. Matrices appear as shape + digest, plus the full data
/// when `verbose` is set.
nlohmann::json bundle_to_json(const PromptBundle& bundle, bool verbose = false);

/// Content digest (version excluded) used to compare bundles across runs.
std::string bundle_digest(const PromptBundle& bundle);

}  // namespace streammem
