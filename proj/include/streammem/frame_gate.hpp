#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streammem/common.hpp"

namespace streammem {

/// Grayscale frame with intensities in [0,1], row-major.
struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;
  double timestamp = 0.0;
  std::vector<std::string> tags;  // synthetic ground truth only

  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  static Frame from_rgb(std::size_t width, std::size_t height,
                        std::span<const double> rgb, double timestamp);
};

/// Throws InputError unless the frame satisfies the size/range invariants.
void validate_frame(const Frame& f);

struct MotionEstimate {
  double u = 0.0;
  double v = 0.0;
  double magnitude = 0.0;
  bool degenerate = false;
};

struct GateConfig {
  double threshold_t = 0.35;
  double norm_scale = 3.0;       // px/frame mapped to magnitude 1
  double singular_eps = 1e-6;
  std::size_t downsample_max_edge = 64;

  void validate() const;
};

/// Box-averages the frame by an integer factor so that its longest edge is
/// at most max_edge. Returns the factor used.
std::size_t downsample(const Frame& in, std::size_t max_edge, Frame& out);

/// Single global Lucas-Kanade solve over the whole (downsampled) frame.
/// Displacement is reported in original-resolution pixels.
MotionEstimate estimate_motion(const Frame& prev, const Frame& cur, const GateConfig& cfg = {});

struct GateDecision {
  bool keep = false;
  double magnitude = 0.0;
};

/// Stateful gate: compares each frame against the last kept frame.
class FrameGate {
 public:
  explicit FrameGate(GateConfig cfg);

  GateDecision gate(const Frame& cur);
  const std::optional<Frame>& last_kept() const noexcept { return last_kept_; }
  const GateConfig& config() const noexcept { return cfg_; }
  void reset() {
    last_kept_.reset();
    last_seen_.reset();
  }

 private:
  GateConfig cfg_;
  std::optional<Frame> last_kept_;
  std::optional<double> last_seen_;
};

struct VisionEmbedding {
  Matrix tokens;  // n x d
  double source_timestamp = 0.0;
  std::vector<std::string> source_tags;
};

struct Chunk {
  std::vector<VisionEmbedding> embeddings;
  std::size_t index = 0;  // position in the stream's chunk sequence

  TimeSpan span() const;
  std::vector<std::string> tags() const;  // sorted, deduplicated union
};

/// Fixed-capacity buffer of kept-frame embeddings; emits a chunk when full.
class VisionBuffer {
 public:
  explicit VisionBuffer(std::size_t capacity);

  std::optional<Chunk> push(VisionEmbedding e);
  /// Emits whatever remains as a short final chunk.
  std::optional<Chunk> flush();

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t chunks_emitted() const noexcept { return next_index_; }

 private:
  Chunk take();

  std::size_t capacity_;
  std::vector<VisionEmbedding> entries_;
  std::size_t rows_ = 0, cols_ = 0;
  std::size_t next_index_ = 0;
};

/// Pull-based frame stream.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<Frame> next() = 0;
};

/// Binary (P5) or ASCII (P2) 8-bit PGM; intensity = value / 255.
Frame read_pgm(const std::filesystem::path& path, double timestamp);
void write_pgm(const std::filesystem::path& path, const Frame& frame);

/// Frames from a directory of .pgm files ordered by filename; timestamp = index / fps.
class PgmDirectorySource : public FrameSource {
 public:
  PgmDirectorySource(const std::filesystem::path& dir, double fps);
  std::optional<Frame> next() override;
  std::size_t size() const noexcept { return files_.size(); }

 private:
  std::vector<std::filesystem::path> files_;
  double fps_;
  std::size_t pos_ = 0;
};

/// In-memory frame list; mostly for tests.
class VectorSource : public FrameSource {
 public:
  explicit VectorSource(std::vector<Frame> frames) : frames_(std::move(frames)) {}
  std::optional<Frame> next() override {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

 private:
  std::vector<Frame> frames_;
  std::size_t pos_ = 0;
};

}  // namespace streammem
