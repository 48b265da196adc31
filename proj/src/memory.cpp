#include "streammem/memory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace streammem {

namespace {

constexpr std::uint64_t kChunkSalt = 0x63686e6bULL;   // "chnk"
constexpr std::uint64_t kParentSalt = 0x706172ULL;    // "par"
constexpr std::uint64_t kShortSalt = 0x73686f7274ULL; // "short"

std::uint64_t parent_seed(std::uint64_t rng_seed, std::size_t level, std::size_t index) {
  return mix_seed(mix_seed(rng_seed, kParentSalt + level), index);
}

std::string span_label(const TimeSpan& s) {
  std::ostringstream os;
  os << '[' << s.first << ", " << s.last << ']';
  return os.str();
}

}  // namespace

void MemoryConfig::validate() const {
  if (chunk_len_L < 1) throw InputError("chunk_len_L must be >= 1");
  if (group_size_g < 2) throw InputError("group_size_g must be >= 2");
  if (cluster_goal_C < 1) throw InputError("cluster_goal_C must be >= 1");
  if (short_len_S < 1 || short_len_S > candidate_len_N) throw InputError("need 1 <= short_len_S <= candidate_len_N");
  if (!(forgetting_scale_s > 0.0)) throw InputError("forgetting_scale_s must be positive");
  if (kmeans_max_iter < 1) throw InputError("kmeans_max_iter must be >= 1");
  if (kmeans_restarts < 1) throw InputError("kmeans_restarts must be >= 1");
}

std::vector<double> forgetting_weights(std::size_t n, double scale_s) {
  if (n == 0) throw InputError("forgetting_weights: n must be >= 1");
  if (!(scale_s > 0.0)) throw InputError("forgetting_weights: scale must be positive");
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = std::exp(-static_cast<double>(k) / scale_s);
    total += w[k];
  }
  for (double& x : w) x /= total;
  return w;
}

ShortTermMemory refresh_short_term(std::span<const VisionEmbedding> recent, std::size_t short_len_S,
                                   std::size_t candidate_len_N, double scale_s, std::mt19937_64& rng) {
  ShortTermMemory out;
  if (recent.empty()) return out;
  const std::size_t pool = std::min(candidate_len_N, recent.size());
  const auto candidates = recent.subspan(recent.size() - pool);
  std::vector<double> weight = forgetting_weights(pool, scale_s);  // by age, newest first

  std::vector<std::size_t> picked;  // ages
  const std::size_t take = std::min(short_len_S, pool);
  for (std::size_t s = 0; s < take; ++s) {
    double total = 0.0;
    for (double w : weight) total += w;
    const double target = unit_draw(rng) * total;
    double acc = 0.0;
    std::size_t pick = pool;
    for (std::size_t age = 0; age < pool; ++age) {
      if (weight[age] <= 0.0) continue;
      acc += weight[age];
      pick = age;
      if (acc > target) break;
    }
    picked.push_back(pick);
    weight[pick] = 0.0;
  }
  // Oldest first.
  std::sort(picked.rbegin(), picked.rend());
  for (std::size_t age : picked) out.units.push_back(candidates[pool - 1 - age]);
  out.last_refresh_timestamp = candidates.back().source_timestamp;
  return out;
}

MemoryTree::MemoryTree(std::size_t group_size) : g_(group_size) {}

std::vector<std::size_t> MemoryTree::level_sizes() const {
  std::vector<std::size_t> s;
  for (const auto& l : levels_) s.push_back(l.size());
  return s;
}

std::vector<NodePtr>& MemoryTree::mutable_level(std::size_t k) {
  if (k >= levels_.size()) levels_.resize(k + 1);
  return levels_[k];
}

std::vector<std::size_t> expected_level_sizes(std::size_t basic_units, std::size_t g) {
  std::vector<std::size_t> sizes;
  if (basic_units == 0) return sizes;
  sizes.push_back(basic_units);
  while (sizes.back() > g) sizes.push_back((sizes.back() + g - 1) / g);
  return sizes;
}

std::vector<std::string> check_tree_invariants(const MemoryTree& tree) {
  std::vector<std::string> bad;
  const std::size_t g = tree.group_size();
  if (g < 2) bad.push_back("group size below 2");
  if (tree.depth() == 0) return bad;
  if (g < 2) return bad;

  const auto sizes = tree.level_sizes();
  if (sizes != expected_level_sizes(sizes[0], g)) bad.push_back("level sizes violate the ceil(B/g^k) law");

  for (std::size_t k = 0; k < tree.depth(); ++k) {
    const auto& lvl = tree.level(k);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const MemoryNode& n = *lvl[i];
      const std::string where = "node (" + std::to_string(k) + "," + std::to_string(i) + ")";
      if (n.level != k) bad.push_back(where + ": wrong level tag");
      if (n.caption.empty()) bad.push_back(where + ": empty caption");
      if (n.centroids.rows == 0) bad.push_back(where + ": no centroids");
      if (n.span.first > n.span.last) bad.push_back(where + ": inverted span");
      if (i > 0 && lvl[i - 1]->span.last > n.span.first) bad.push_back(where + ": not chronological");
      if (k == 0) continue;
      const auto& below = tree.level(k - 1);
      const std::size_t lo = i * g, hi = std::min(lo + g, below.size());
      if (n.child_begin != lo || n.child_end != hi) {
        bad.push_back(where + ": child range does not cover its group");
        continue;
      }
      TimeSpan u = below[lo]->span;
      for (std::size_t c = lo + 1; c < hi; ++c) u = u.merged(below[c]->span);
      if (!(u == n.span)) bad.push_back(where + ": span is not the union of child spans");
    }
  }
  return bad;
}

std::uint64_t chunk_seed(std::uint64_t rng_seed, std::size_t chunk_index) {
  return mix_seed(mix_seed(rng_seed, kChunkSalt), chunk_index);
}

LongMemoryUnit make_unit(const Chunk& chunk, const MemoryConfig& cfg, const Captioner& captioner,
                         const TextEncoder& encoder, FormationStats* stats) {
  if (chunk.embeddings.empty()) throw InputError("make_unit: empty chunk");
  const std::size_t n = chunk.embeddings.front().tokens.rows;
  const std::size_t d = chunk.embeddings.front().tokens.cols;
  Matrix rows(chunk.embeddings.size() * n, d);
  for (std::size_t e = 0; e < chunk.embeddings.size(); ++e) {
    const Matrix& t = chunk.embeddings[e].tokens;
    if (t.rows != n || t.cols != d) throw InputError("make_unit: embeddings differ in shape");
    std::copy(t.data.begin(), t.data.end(), rows.data.begin() + static_cast<std::ptrdiff_t>(e * n * d));
  }

  KMeansOptions opts;
  opts.max_iter = cfg.kmeans_max_iter;
  opts.restarts = cfg.kmeans_restarts;
  KMeansResult km = kmeans(rows, cfg.cluster_goal_C, chunk_seed(cfg.rng_seed, chunk.index), opts);

  LongMemoryUnit unit;
  unit.centroids = std::move(km.centroids);
  unit.span = chunk.span();
  unit.level = 0;
  try {
    unit.caption = captioner.caption_chunk(chunk);
    unit.caption_vec = encoder.encode(unit.caption);
  } catch (const std::exception& e) {
    throw BackendError("chunk " + span_label(unit.span) + ": " + e.what());
  }
  if (unit.caption.empty()) throw BackendError("chunk " + span_label(unit.span) + ": captioner returned empty text");
  if (stats) {
    stats->kmeans_ops += static_cast<double>(rows.rows * unit.centroids.rows * d *
                                             std::max<std::size_t>(km.iterations, 1) * opts.restarts);
    stats->caption_calls += 1;
    stats->encode_calls += 1;
  }
  return unit;
}

namespace {

NodePtr build_parent(const MemoryTree& tree, std::size_t child_level, std::size_t parent_index,
                     const MemoryConfig& cfg, const Captioner& captioner, const TextEncoder& encoder,
                     FormationStats* stats) {
  const auto& children = tree.level(child_level);
  const std::size_t g = tree.group_size();
  const std::size_t lo = parent_index * g, hi = std::min(lo + g, children.size());

  std::size_t total_rows = 0;
  const std::size_t d = children[lo]->centroids.cols;
  for (std::size_t c = lo; c < hi; ++c) total_rows += children[c]->centroids.rows;
  Matrix rows(total_rows, d);
  std::vector<std::string> captions;
  std::size_t r = 0;
  TimeSpan span = children[lo]->span;
  for (std::size_t c = lo; c < hi; ++c) {
    const Matrix& m = children[c]->centroids;
    std::copy(m.data.begin(), m.data.end(), rows.data.begin() + static_cast<std::ptrdiff_t>(r * d));
    r += m.rows;
    captions.push_back(children[c]->caption);
    span = span.merged(children[c]->span);
  }

  KMeansOptions opts;
  opts.max_iter = cfg.kmeans_max_iter;
  opts.restarts = cfg.kmeans_restarts;
  KMeansResult km = kmeans(rows, cfg.cluster_goal_C, parent_seed(cfg.rng_seed, child_level + 1, parent_index), opts);

  auto node = std::make_shared<MemoryNode>();
  node->centroids = std::move(km.centroids);
  node->level = child_level + 1;
  node->child_begin = lo;
  node->child_end = hi;
  node->span = span;
  try {
    node->caption = captioner.summarize(captions);
    node->caption_vec = encoder.encode(node->caption);
  } catch (const std::exception& e) {
    throw BackendError("summary " + span_label(span) + ": " + e.what());
  }
  if (node->caption.empty()) throw BackendError("summary " + span_label(span) + ": captioner returned empty text");
  if (stats) {
    stats->kmeans_ops += static_cast<double>(rows.rows * node->centroids.rows * d *
                                             std::max<std::size_t>(km.iterations, 1) * opts.restarts);
    stats->caption_calls += 1;
    stats->encode_calls += 1;
  }
  return node;
}

}  // namespace

void append_unit(MemoryTree& tree, LongMemoryUnit unit, const MemoryConfig& cfg, const Captioner& captioner,
                 const TextEncoder& encoder, FormationStats* stats) {
  if (unit.level != 0) throw InputError("append_unit: unit must be a level-0 node");
  if (tree.group_size() < 2) throw InputError("append_unit: group size must be >= 2");
  auto& base = tree.mutable_level(0);
  if (!base.empty() && base.back()->span.last > unit.span.first) {
    throw InputError("append_unit: unit precedes the newest basic unit");
  }
  unit.child_begin = unit.child_end = 0;
  base.push_back(std::make_shared<const MemoryNode>(std::move(unit)));

  const std::size_t g = tree.group_size();
  std::size_t changed = base.size() - 1;
  for (std::size_t k = 0; tree.level(k).size() > g; ++k) {
    const std::size_t need = (tree.level(k).size() + g - 1) / g;
    auto& parents = tree.mutable_level(k + 1);
    const std::size_t have = parents.size();
    parents.resize(need);
    // New parents plus the (possibly partial) parent of the changed node.
    for (std::size_t p = std::min(have, changed / g); p < need; ++p) {
      auto built = build_parent(tree, k, p, cfg, captioner, encoder, stats);
      tree.mutable_level(k + 1)[p] = std::move(built);
    }
    changed /= g;
  }
}

std::string dialogue_text(std::string_view question, std::string_view answer) {
  std::string s = "Q: ";
  s += question;
  s += " A: ";
  s += answer;
  return s;
}

void append_dialogue(DialogueMemory& mem, std::string question, std::string answer, const TextEncoder& encoder,
                     double timestamp) {
  if (question.empty()) throw InputError("append_dialogue: empty question");
  auto entry = std::make_shared<DialogueEntry>();
  try {
    entry->vec = encoder.encode(dialogue_text(question, answer));
  } catch (const std::exception& e) {
    throw BackendError(std::string("dialogue encode: ") + e.what());
  }
  entry->question = std::move(question);
  entry->answer = std::move(answer);
  entry->turn_index = mem.entries.empty() ? 0 : mem.entries.back()->turn_index + 1;
  entry->timestamp = timestamp;
  mem.entries.push_back(std::move(entry));
}

SnapshotPtr snapshot(const ShortTermMemory& st, const MemoryTree& tree, const DialogueMemory& dialogue,
                     std::uint64_t version) {
  auto s = std::make_shared<MemorySnapshot>();
  s->version = version;
  s->short_term = st;
  s->tree = tree;
  s->dialogue = dialogue;
  return s;
}

MemoryStore::MemoryStore(MemoryConfig cfg, std::shared_ptr<const Captioner> captioner,
                         std::shared_ptr<const TextEncoder> encoder)
    : cfg_(cfg), captioner_(std::move(captioner)), encoder_(std::move(encoder)), tree_(cfg.group_size_g) {
  cfg_.validate();
  if (!captioner_ || !encoder_) throw InputError("MemoryStore needs a captioner and a text encoder");
}

FormationStats MemoryStore::ingest_chunk(const Chunk& chunk) {
  FormationStats stats;
  LongMemoryUnit unit = make_unit(chunk, cfg_, *captioner_, *encoder_, &stats);
  append_unit(tree_, std::move(unit), cfg_, *captioner_, *encoder_, &stats);

  for (const auto& e : chunk.embeddings) {
    recent_.push_back(e);
    if (recent_.size() > cfg_.candidate_len_N) recent_.pop_front();
  }
  const std::vector<VisionEmbedding> pool(recent_.begin(), recent_.end());
  std::mt19937_64 rng(mix_seed(mix_seed(cfg_.rng_seed, kShortSalt), chunk.index));
  short_term_ = refresh_short_term(pool, cfg_.short_len_S, cfg_.candidate_len_N, cfg_.forgetting_scale_s, rng);
  ++version_;
  return stats;
}

void MemoryStore::add_dialogue(std::string question, std::string answer, double timestamp) {
  append_dialogue(dialogue_, std::move(question), std::move(answer), *encoder_, timestamp);
  ++version_;
}

SnapshotPtr MemoryStore::snapshot() const { return streammem::snapshot(short_term_, tree_, dialogue_, version_); }

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("matrix must be an array of rows");
  Matrix m;
  m.rows = j.size();
  m.cols = m.rows ? j[0].size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != m.cols) throw InputError("matrix rows differ in length");
    for (const auto& v : row) m.data.push_back(v.get<double>());
  }
  return m;
}

nlohmann::json tree_to_json(const MemoryTree& tree) {
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t k = 0; k < tree.depth(); ++k) {
    nlohmann::json lvl = nlohmann::json::array();
    for (const auto& n : tree.level(k)) {
      lvl.push_back({{"level", n->level},
                     {"span", {n->span.first, n->span.last}},
                     {"caption", n->caption},
                     {"caption_vec", n->caption_vec},
                     {"centroids", matrix_to_json(n->centroids)},
                     {"children", {n->child_begin, n->child_end}}});
    }
    levels.push_back(std::move(lvl));
  }
  return {{"format", "streammem.tree"}, {"version", 1}, {"group_size", tree.group_size()}, {"levels", levels}};
}

MemoryTree tree_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "streammem.tree") throw InputError("not a streammem.tree document");
    if (j.at("version") != 1) throw InputError("unsupported tree document version");
    MemoryTree tree(j.at("group_size").get<std::size_t>());
    const auto& levels = j.at("levels");
    for (std::size_t k = 0; k < levels.size(); ++k) {
      auto& lvl = tree.mutable_level(k);
      for (const auto& jn : levels[k]) {
        auto n = std::make_shared<MemoryNode>();
        n->level = jn.at("level").get<std::size_t>();
        n->span = {jn.at("span").at(0).get<double>(), jn.at("span").at(1).get<double>()};
        n->caption = jn.at("caption").get<std::string>();
        n->caption_vec = jn.at("caption_vec").get<std::vector<double>>();
        n->centroids = matrix_from_json(jn.at("centroids"));
        n->child_begin = jn.at("children").at(0).get<std::size_t>();
        n->child_end = jn.at("children").at(1).get<std::size_t>();
        lvl.push_back(std::move(n));
      }
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed tree document: ") + e.what());
  }
}

}  // namespace streammem
