#include "streammem/retrieval.hpp"

#include <algorithm>
#include <cmath>

namespace streammem {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

QueryVec encode_query(std::string question, const TextEncoder& encoder) {
  QueryVec q;
  q.vec = encoder.encode(question);
  q.text = std::move(question);
  return q;
}

PathResult descend_tree(const MemoryTree& tree, const QueryVec& q) {
  PathResult out;
  if (tree.empty()) return out;

  std::size_t level = tree.top_level();
  std::size_t lo = 0, hi = tree.level(level).size();
  while (true) {
    const auto& nodes = tree.level(level);
    if (lo >= hi || hi > nodes.size()) {
      throw InputError("descend_tree: malformed tree at level " + std::to_string(level));
    }
    std::size_t best = lo;
    double best_sim = -2.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double s = cosine_similarity(q.vec, nodes[i]->caption_vec);
      if (s > best_sim) {
        best_sim = s;
        best = i;
      }
    }
    const MemoryNode& chosen = *nodes[best];
    out.steps.push_back({level, best, best_sim});
    out.collected_centroids.push_back(chosen.centroids);
    if (level == 0) {
      out.best_caption = chosen.caption;
      break;
    }
    lo = chosen.child_begin;
    hi = chosen.child_end;
    --level;
  }
  return out;
}

std::vector<DialogueHit> retrieve_dialogue_top_k(const DialogueMemory& mem, const QueryVec& q, double min_sim,
                                                 std::size_t k) {
  std::vector<DialogueHit> hits;
  for (const auto& e : mem.entries) {
    const double s = cosine_similarity(q.vec, e->vec);
    if (s >= min_sim) hits.push_back({e, s});
  }
  // Best first; among equal scores the later turn wins.
  std::stable_sort(hits.begin(), hits.end(), [](const DialogueHit& a, const DialogueHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry->turn_index > b.entry->turn_index;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

std::optional<DialogueHit> retrieve_dialogue(const DialogueMemory& mem, const QueryVec& q, double min_sim) {
  auto hits = retrieve_dialogue_top_k(mem, q, min_sim, 1);
  if (hits.empty()) return std::nullopt;
  return hits.front();
}

PromptBundle assemble_context(const MemorySnapshot& snap, const QueryVec& q, const RetrievalConfig& cfg) {
  PromptBundle b;
  b.question = q.text;
  b.short_term = snap.short_term.units;
  b.path = descend_tree(snap.tree, q);
  b.dialogue_context = retrieve_dialogue_top_k(snap.dialogue, q, cfg.min_sim, cfg.dialogue_top_k);
  b.snapshot_version = snap.version;
  return b;
}

namespace {

nlohmann::json matrix_summary(const Matrix& m, bool verbose) {
  nlohmann::json j = {{"shape", {m.rows, m.cols}}, {"digest", hex_digest(matrix_digest(m))}};
  if (verbose) j["data"] = matrix_to_json(m);
  return j;
}

}  // namespace

nlohmann::json bundle_to_json(const PromptBundle& bundle, bool verbose) {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& e : bundle.short_term) {
    auto j = matrix_summary(e.tokens, verbose);
    j["timestamp"] = e.source_timestamp;
    st.push_back(std::move(j));
  }
  nlohmann::json path = nlohmann::json::array();
  for (std::size_t i = 0; i < bundle.path.steps.size(); ++i) {
    const auto& s = bundle.path.steps[i];
    auto j = matrix_summary(bundle.path.collected_centroids[i], verbose);
    j["level"] = s.level;
    j["node"] = s.index;
    j["similarity"] = s.similarity;
    path.push_back(std::move(j));
  }
  nlohmann::json dialogue = nlohmann::json::array();
  for (const auto& h : bundle.dialogue_context) {
    dialogue.push_back({{"turn_index", h.entry->turn_index},
                        {"question", h.entry->question},
                        {"answer", h.entry->answer},
                        {"similarity", h.similarity}});
  }
  return {{"question", bundle.question},
          {"short_term", std::move(st)},
          {"tree_path", std::move(path)},
          {"best_caption", bundle.path.best_caption},
          {"dialogue_context", std::move(dialogue)}};
}

std::string bundle_digest(const PromptBundle& bundle) {
  return hex_digest(fnv1a(bundle_to_json(bundle, false).dump()));
}

}  // namespace streammem
