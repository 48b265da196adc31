#include "streammem/frame_gate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace streammem {

std::string hex_digest(std::uint64_t h) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::uint64_t matrix_digest(const Matrix& m) {
  std::uint64_t h = kFnvOffset;
  const std::uint64_t dims[2] = {m.rows, m.cols};
  h = fnv1a_bytes(dims, sizeof(dims), h);
  return fnv1a_bytes(m.data.data(), m.data.size() * sizeof(double), h);
}

Frame Frame::from_rgb(std::size_t width, std::size_t height, std::span<const double> rgb,
                      double timestamp) {
  if (rgb.size() != width * height * 3) throw InputError("rgb buffer size does not match frame dimensions");
  Frame f;
  f.width = width;
  f.height = height;
  f.timestamp = timestamp;
  f.pixels.resize(width * height);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) {
    f.pixels[i] = (rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2]) / 3.0;
  }
  return f;
}

void validate_frame(const Frame& f) {
  if (f.width < 2 || f.height < 2) throw InputError("frame must be at least 2x2");
  if (f.pixels.size() != f.width * f.height) throw InputError("frame pixel count does not match dimensions");
  for (double p : f.pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("frame intensity outside [0,1]");
  }
}

void GateConfig::validate() const {
  if (!(threshold_t >= 0.0 && threshold_t <= 1.0)) throw InputError("threshold_t must lie in [0,1]");
  if (!(norm_scale > 0.0)) throw InputError("norm_scale must be positive");
  if (!(singular_eps > 0.0)) throw InputError("singular_eps must be positive");
}

std::size_t downsample(const Frame& in, std::size_t max_edge, Frame& out) {
  const std::size_t edge = std::max(in.width, in.height);
  std::size_t factor = 1;
  if (max_edge > 0 && edge > max_edge) factor = (edge + max_edge - 1) / max_edge;
  if (factor == 1) {
    out = in;
    return 1;
  }
  out.width = std::max<std::size_t>(in.width / factor, 2);
  out.height = std::max<std::size_t>(in.height / factor, 2);
  out.timestamp = in.timestamp;
  out.tags = in.tags;
  out.pixels.assign(out.width * out.height, 0.0);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      double acc = 0.0;
      std::size_t n = 0;
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) {
          const std::size_t sx = x * factor + dx, sy = y * factor + dy;
          if (sx < in.width && sy < in.height) {
            acc += in.at(sx, sy);
            ++n;
          }
        }
      }
      out.pixels[y * out.width + x] = acc / static_cast<double>(n);
    }
  }
  return factor;
}

MotionEstimate estimate_motion(const Frame& prev, const Frame& cur, const GateConfig& cfg) {
  if (prev.width != cur.width || prev.height != cur.height) {
    throw InputError("estimate_motion: frame dimensions differ");
  }
  Frame p, c;
  const std::size_t factor = downsample(prev, cfg.downsample_max_edge, p);
  downsample(cur, cfg.downsample_max_edge, c);

  // Spatial gradients are taken on the mean of both frames, which keeps the
  // estimate symmetric under swapping prev/cur.
  double sxx = 0, sxy = 0, syy = 0, bx = 0, by = 0;
  const std::size_t w = p.width, h = p.height;
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double ix = 0.25 * (p.at(x + 1, y) + c.at(x + 1, y) - p.at(x - 1, y) - c.at(x - 1, y));
      const double iy = 0.25 * (p.at(x, y + 1) + c.at(x, y + 1) - p.at(x, y - 1) - c.at(x, y - 1));
      const double it = c.at(x, y) - p.at(x, y);
      sxx += ix * ix;
      sxy += ix * iy;
      syy += iy * iy;
      bx -= ix * it;
      by -= iy * it;
    }
  }

  MotionEstimate m;
  const double det = sxx * syy - sxy * sxy;
  const double trace = sxx + syy;
  if (std::abs(det) < cfg.singular_eps * (trace * trace + 1e-12)) {
    m.degenerate = true;
    return m;
  }
  m.u = (syy * bx - sxy * by) / det * static_cast<double>(factor);
  m.v = (sxx * by - sxy * bx) / det * static_cast<double>(factor);
  const double raw = std::hypot(m.u, m.v);
  if (!std::isfinite(raw)) {
    m = MotionEstimate{};
    m.degenerate = true;
    return m;
  }
  m.magnitude = std::min(raw / cfg.norm_scale, 1.0);
  return m;
}

FrameGate::FrameGate(GateConfig cfg) : cfg_(cfg) { cfg_.validate(); }

GateDecision FrameGate::gate(const Frame& cur) {
  if (last_seen_ && cur.timestamp <= *last_seen_) {
    throw InputError("frame timestamps must strictly increase within a stream");
  }
  last_seen_ = cur.timestamp;
  if (!last_kept_) {
    last_kept_ = cur;
    return {true, 1.0};
  }
  const MotionEstimate m = estimate_motion(*last_kept_, cur, cfg_);
  if (m.magnitude > cfg_.threshold_t) {
    last_kept_ = cur;
    return {true, m.magnitude};
  }
  return {false, m.magnitude};
}

TimeSpan Chunk::span() const {
  if (embeddings.empty()) return {};
  return {embeddings.front().source_timestamp, embeddings.back().source_timestamp};
}

std::vector<std::string> Chunk::tags() const {
  std::set<std::string> all;
  for (const auto& e : embeddings) all.insert(e.source_tags.begin(), e.source_tags.end());
  return {all.begin(), all.end()};
}

VisionBuffer::VisionBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InputError("vision buffer capacity must be >= 1");
  entries_.reserve(capacity_);
}

std::optional<Chunk> VisionBuffer::push(VisionEmbedding e) {
  if (e.tokens.rows == 0 || e.tokens.cols == 0) throw InputError("empty vision embedding");
  if (rows_ == 0) {
    rows_ = e.tokens.rows;
    cols_ = e.tokens.cols;
  } else if (e.tokens.rows != rows_ || e.tokens.cols != cols_) {
    throw InputError("vision embedding shape differs from earlier embeddings");
  }
  if (!entries_.empty() && e.source_timestamp < entries_.back().source_timestamp) {
    throw InputError("vision embeddings must arrive in timestamp order");
  }
  entries_.push_back(std::move(e));
  if (entries_.size() >= capacity_) return take();
  return std::nullopt;
}

std::optional<Chunk> VisionBuffer::flush() {
  if (entries_.empty()) return std::nullopt;
  return take();
}

Chunk VisionBuffer::take() {
  Chunk c;
  c.embeddings = std::move(entries_);
  c.index = next_index_++;
  entries_.clear();
  entries_.reserve(capacity_);
  return c;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Frame read_pgm(const std::filesystem::path& path, double timestamp) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P5" && magic != "P2") throw InputError(path.string() + ": not a PGM file");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  try {
    w = std::stoul(pgm_token(in));
    h = std::stoul(pgm_token(in));
    maxval = std::stoi(pgm_token(in));
  } catch (const std::exception&) {
    throw InputError(path.string() + ": malformed PGM header");
  }
  if (maxval <= 0 || maxval > 255) throw InputError(path.string() + ": only 8-bit PGM is supported");

  Frame f;
  f.width = w;
  f.height = h;
  f.timestamp = timestamp;
  f.pixels.resize(w * h);
  if (magic == "P5") {
    std::vector<unsigned char> raw(w * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw InputError(path.string() + ": truncated PGM");
    for (std::size_t i = 0; i < raw.size(); ++i) f.pixels[i] = raw[i] / 255.0;
  } else {
    for (std::size_t i = 0; i < w * h; ++i) {
      int v = -1;
      if (!(in >> v) || v < 0 || v > maxval) throw InputError(path.string() + ": bad PGM sample");
      f.pixels[i] = v / 255.0;
    }
  }
  validate_frame(f);
  return f;
}

void write_pgm(const std::filesystem::path& path, const Frame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  for (double p : frame.pixels) {
    const long v = std::lround(std::clamp(p, 0.0, 1.0) * 255.0);
    out.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
}

PgmDirectorySource::PgmDirectorySource(const std::filesystem::path& dir, double fps) : fps_(fps) {
  if (!(fps > 0.0)) throw InputError("fps must be positive");
  if (!std::filesystem::is_directory(dir)) throw InputError(dir.string() + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
}

std::optional<Frame> PgmDirectorySource::next() {
  if (pos_ >= files_.size()) return std::nullopt;
  const double ts = static_cast<double>(pos_) / fps_;
  return read_pgm(files_[pos_++], ts);
}

}  // namespace streammem
