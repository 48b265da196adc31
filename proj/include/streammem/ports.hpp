#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "streammem/frame_gate.hpp"

namespace streammem {

struct PromptBundle;

// Model ports. Implementations must tolerate concurrent calls from
// different pipeline stages.

class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual VisionEmbedding encode(const Frame& frame) const = 0;
  virtual std::size_t tokens() const = 0;
  virtual std::size_t dim() const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<double> encode(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption_chunk(const Chunk& chunk) const = 0;
  virtual std::string summarize(std::span<const std::string> captions) const = 0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const PromptBundle& bundle) const = 0;
};

struct Judgement {
  bool verdict = false;
  int score = 0;  // 0..5
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual Judgement judge(std::string_view question, std::string_view reference,
                          std::string_view prediction) const = 0;
};

struct PortSet {
  std::shared_ptr<const FrameEncoder> frame_encoder;
  std::shared_ptr<const TextEncoder> text_encoder;
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const Judge> judge;
};

/// Lowercased alphanumeric runs; punctuation separates tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Signed feature hashing of tokens into `dim` buckets, L2-normalized.
/// Empty text (no tokens) encodes to the zero vector. Requires dim >= 8.
std::vector<double> hash_text_encode(std::string_view text, std::size_t dim);

class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(std::size_t dim = 384);
  std::vector<double> encode(std::string_view text) const override;
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

/// Token row j is a normalized, hash-projected mix of the frame's tags and a
/// 16-bin intensity histogram. Linear in the histogram, so near-equal frames
/// encode near-identically.
VisionEmbedding stub_frame_encode(const Frame& frame, std::size_t n, std::size_t d);

class StubFrameEncoder final : public FrameEncoder {
 public:
  StubFrameEncoder(std::size_t n, std::size_t d);
  VisionEmbedding encode(const Frame& frame) const override { return stub_frame_encode(frame, n_, d_); }
  std::size_t tokens() const override { return n_; }
  std::size_t dim() const override { return d_; }

 private:
  std::size_t n_, d_;
};

/// "scene: a, b" from the sorted tag union; "scene: unknown" when untagged.
std::string caption_from_tags(std::span<const std::string> tags);
std::vector<std::string> tags_from_caption(std::string_view caption);

class TagCaptioner final : public Captioner {
 public:
  std::string caption_chunk(const Chunk& chunk) const override;
  std::string summarize(std::span<const std::string> captions) const override;
};

/// Answer = best caption, plus the recalled question when a dialogue turn
/// was attached.
class EchoGenerator final : public Generator {
 public:
  std::string generate(const PromptBundle& bundle) const override;
};

double token_f1(std::string_view reference, std::string_view prediction);

/// Token-set F1 mapped to round-half-even(5 * F1); verdict yes iff score >= 3.
Judgement exact_match_judge(std::string_view question, std::string_view reference,
                            std::string_view prediction);

class ExactMatchJudge final : public Judge {
 public:
  Judgement judge(std::string_view q, std::string_view r, std::string_view p) const override {
    return exact_match_judge(q, r, p);
  }
};

PortSet make_stub_ports(std::size_t tokens_n, std::size_t dim_d, std::size_t text_dim);

// ---------------------------------------------------------------------------
// Remote backend: minimal JSON over HTTP.

struct RemoteBackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  double timeout = 10.0;  // seconds
  std::size_t retry_count = 2;  // retries after the first attempt
  std::string api_key_env_var;
  double backoff_initial = 0.05;  // seconds; doubles per retry

  void validate() const;
};

class RemoteClient {
 public:
  explicit RemoteClient(RemoteBackendConfig cfg);

  /// POST base_url/endpoint with a JSON body. Throws BackendError after the
  /// retries are exhausted and ProtocolError on an unparseable body.
  nlohmann::json call(std::string_view endpoint, const nlohmann::json& payload) const;
  const RemoteBackendConfig& config() const noexcept { return cfg_; }

 private:
  RemoteBackendConfig cfg_;
};

nlohmann::json remote_call(const RemoteBackendConfig& cfg, std::string_view endpoint,
                           const nlohmann::json& payload);

class RemoteTextEncoder final : public TextEncoder {
 public:
  RemoteTextEncoder(std::shared_ptr<const RemoteClient> client, std::size_t dim);
  std::vector<double> encode(std::string_view text) const override;
  std::size_t dim() const override { return dim_; }

 private:
  std::shared_ptr<const RemoteClient> client_;
  std::size_t dim_;
};

class RemoteCaptioner final : public Captioner {
 public:
  explicit RemoteCaptioner(std::shared_ptr<const RemoteClient> client) : client_(std::move(client)) {}
  std::string caption_chunk(const Chunk& chunk) const override;
  std::string summarize(std::span<const std::string> captions) const override;

 private:
  std::shared_ptr<const RemoteClient> client_;
};

class RemoteGenerator final : public Generator {
 public:
  explicit RemoteGenerator(std::shared_ptr<const RemoteClient> client) : client_(std::move(client)) {}
  std::string generate(const PromptBundle& bundle) const override;

 private:
  std::shared_ptr<const RemoteClient> client_;
};

class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(std::shared_ptr<const RemoteClient> client) : client_(std::move(client)) {}
  Judgement judge(std::string_view q, std::string_view r, std::string_view p) const override;

 private:
  std::shared_ptr<const RemoteClient> client_;
};

/// Remote text encoder, captioner, generator and judge; the frame encoder
/// stays a stub since the protocol has no image endpoint.
PortSet make_remote_ports(const RemoteBackendConfig& cfg, std::size_t tokens_n, std::size_t dim_d,
                          std::size_t text_dim);

}  // namespace streammem
