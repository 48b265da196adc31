#include "streammem/ports.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "streammem/retrieval.hpp"

namespace streammem {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<double> hash_text_encode(std::string_view text, std::size_t dim) {
  if (dim < 8) throw InputError("hash_text_encode: dim must be >= 8");
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = fnv1a(tok);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h & 0x7fffffffffffffffULL) % dim] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

HashTextEncoder::HashTextEncoder(std::size_t dim) : dim_(dim) {
  if (dim_ < 8) throw InputError("HashTextEncoder: dim must be >= 8");
}

std::vector<double> HashTextEncoder::encode(std::string_view text) const { return hash_text_encode(text, dim_); }

namespace {

constexpr std::size_t kHistBins = 16;
constexpr double kHistWeight = 0.5;

// Adds w * (pseudo-random vector in [-1,1]^d keyed by (key, row)) to out.
void add_projection(std::span<double> out, std::uint64_t key, std::size_t row, double w) {
  const std::size_t d = out.size();
  for (std::size_t t = 0; t < d; ++t) {
    const std::uint64_t z = mix_seed(key, row * d + t);
    out[t] += w * (static_cast<double>(z >> 11) * 0x1.0p-52 - 1.0);
  }
}

}  // namespace

VisionEmbedding stub_frame_encode(const Frame& frame, std::size_t n, std::size_t d) {
  if (n == 0 || d == 0) throw InputError("stub_frame_encode: n and d must be >= 1");
  std::vector<double> hist(kHistBins, 0.0);
  for (double p : frame.pixels) {
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(std::max(p, 0.0) * kHistBins), kHistBins - 1);
    hist[bin] += 1.0;
  }
  if (!frame.pixels.empty()) {
    for (double& h : hist) h /= static_cast<double>(frame.pixels.size());
  }
  std::set<std::string> tags(frame.tags.begin(), frame.tags.end());

  VisionEmbedding e;
  e.tokens = Matrix(n, d);
  e.source_timestamp = frame.timestamp;
  e.source_tags.assign(tags.begin(), tags.end());
  for (std::size_t j = 0; j < n; ++j) {
    auto row = e.tokens.row(j);
    for (const auto& tag : tags) add_projection(row, fnv1a("tag:" + tag), j, 1.0);
    for (std::size_t b = 0; b < kHistBins; ++b) {
      if (hist[b] > 0.0) add_projection(row, fnv1a("hist:" + std::to_string(b)), j, kHistWeight * hist[b]);
    }
    double norm = 0.0;
    for (double x : row) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : row) x /= norm;
    }
  }
  return e;
}

StubFrameEncoder::StubFrameEncoder(std::size_t n, std::size_t d) : n_(n), d_(d) {
  if (n_ == 0 || d_ == 0) throw InputError("StubFrameEncoder: n and d must be >= 1");
}

std::string caption_from_tags(std::span<const std::string> tags) {
  std::set<std::string> uniq;
  for (const auto& t : tags) {
    if (!t.empty() && t != "unknown") uniq.insert(t);
  }
  if (uniq.empty()) return "scene: unknown";
  std::string s = "scene: ";
  bool first = true;
  for (const auto& t : uniq) {
    if (!first) s += ", ";
    s += t;
    first = false;
  }
  return s;
}

std::vector<std::string> tags_from_caption(std::string_view caption) {
  constexpr std::string_view kPrefix = "scene: ";
  if (caption.substr(0, kPrefix.size()) == kPrefix) caption.remove_prefix(kPrefix.size());
  std::vector<std::string> tags;
  if (caption == "unknown") return tags;
  while (!caption.empty()) {
    const auto pos = caption.find(", ");
    tags.emplace_back(caption.substr(0, pos));
    if (pos == std::string_view::npos) break;
    caption.remove_prefix(pos + 2);
  }
  return tags;
}

std::string TagCaptioner::caption_chunk(const Chunk& chunk) const {
  const auto tags = chunk.tags();
  return caption_from_tags(tags);
}

std::string TagCaptioner::summarize(std::span<const std::string> captions) const {
  std::vector<std::string> all;
  for (const auto& c : captions) {
    auto t = tags_from_caption(c);
    all.insert(all.end(), t.begin(), t.end());
  }
  return caption_from_tags(all);
}

std::string EchoGenerator::generate(const PromptBundle& bundle) const {
  std::string answer = bundle.path.empty() ? std::string("scene: unknown") : bundle.path.best_caption;
  if (!bundle.dialogue_context.empty()) {
    answer += " (recalling: " + bundle.dialogue_context.front().entry->question + ")";
  }
  return answer;
}

double token_f1(std::string_view reference, std::string_view prediction) {
  const auto rt = tokenize(reference), pt = tokenize(prediction);
  const std::set<std::string> r(rt.begin(), rt.end()), p(pt.begin(), pt.end());
  if (r.empty() && p.empty()) return 1.0;
  if (r.empty() || p.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : p) common += r.count(t);
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

int round_half_even(double x) {
  const double fl = std::floor(x);
  const double diff = x - fl;
  auto r = static_cast<long>(fl);
  if (diff > 0.5 || (diff == 0.5 && (r % 2 != 0))) ++r;
  return static_cast<int>(r);
}

}  // namespace

Judgement exact_match_judge(std::string_view, std::string_view reference, std::string_view prediction) {
  Judgement j;
  j.score = std::clamp(round_half_even(5.0 * token_f1(reference, prediction)), 0, 5);
  j.verdict = j.score >= 3;
  return j;
}

PortSet make_stub_ports(std::size_t tokens_n, std::size_t dim_d, std::size_t text_dim) {
  PortSet p;
  p.frame_encoder = std::make_shared<StubFrameEncoder>(tokens_n, dim_d);
  p.text_encoder = std::make_shared<HashTextEncoder>(text_dim);
  p.captioner = std::make_shared<TagCaptioner>();
  p.generator = std::make_shared<EchoGenerator>();
  p.judge = std::make_shared<ExactMatchJudge>();
  return p;
}

}  // namespace streammem
