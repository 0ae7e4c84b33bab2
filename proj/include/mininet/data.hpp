#pragma once

// Feature files, manifests, the duration-based positive/negative split, bag
// sampling and the synthetic dataset generator.
//
// MNF1 feature file (all integers and floats little-endian):
//
//   offset  size        field
//   0       4           magic "MNF1"
//   4       4           u32 N   segment count
//   8       4           u32 Dv  vision width
//   12      4           u32 Da  audio width
//   16      4*N*Dv      f32 vision, row-major (segment-major)
//   ...     4*N*Da      f32 audio, row-major
//
// Manifest: UTF-8 text, one video per line,
//   video_id <TAB> event_tag <TAB> duration_s <TAB> feature_path [<TAB> label_path]
// Blank lines and lines starting with '#' are ignored. Relative paths are
// resolved against the manifest's directory. label_path may list several
// comma-separated files, one per human summary.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mininet/error.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"
#include "mininet/rng.hpp"

namespace mininet {

namespace fs = std::filesystem;

struct FeatureDims {
  std::uint32_t vision = 512;
  std::uint32_t audio = 128;

  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

inline constexpr char kFeatureMagic[4] = {'M', 'N', 'F', '1'};
inline constexpr std::size_t kFeatureHeaderBytes = 16;

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
}

inline void put_f32s(std::string& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
    }
  }
}

// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated (wanted " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()) +
                        ")");
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    }
    return v;
  }

  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    }
    return v;
  }

  void f32s(float* dst, std::size_t n) {
    const auto b = take(n * sizeof(float));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, b.data(), b.size());
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t v = 0;
        for (int k = 3; k >= 0; --k) {
          v = (v << 8) | static_cast<unsigned char>(b[4 * i + static_cast<std::size_t>(k)]);
        }
        dst[i] = std::bit_cast<float>(v);
      }
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }
  const std::string& what() const { return what_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    return std::nullopt;
  }
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    return std::nullopt;
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace io

// Vision and audio features of one video, one segment per row.
struct FeatureMatrices {
  DenseMatrix vision;
  DenseMatrix audio;
};

inline std::string encode_feature_file(const DenseMatrix& vision, const DenseMatrix& audio,
                                       std::optional<FeatureDims> custom_dims = std::nullopt) {
  if (vision.rows() != audio.rows()) {
    throw ShapeError("feature file: " + std::to_string(vision.rows()) + " vision rows vs " +
                     std::to_string(audio.rows()) + " audio rows");
  }
  if (vision.rows() == 0) {
    throw ShapeError("feature file: a video needs at least one segment");
  }
  const FeatureDims expected = custom_dims.value_or(FeatureDims{});
  if (vision.cols() != expected.vision || audio.cols() != expected.audio) {
    throw ShapeError("feature file: widths " + std::to_string(vision.cols()) + "/" +
                     std::to_string(audio.cols()) + " differ from " +
                     std::to_string(expected.vision) + "/" + std::to_string(expected.audio));
  }
  std::string out;
  out.reserve(kFeatureHeaderBytes +
              static_cast<std::size_t>(vision.size() + audio.size()) * sizeof(float));
  out.append(kFeatureMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(vision.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(vision.cols()));
  io::put_u32(out, static_cast<std::uint32_t>(audio.cols()));
  io::put_f32s(out, vision.data(), static_cast<std::size_t>(vision.size()));
  io::put_f32s(out, audio.data(), static_cast<std::size_t>(audio.size()));
  return out;
}

// Parses MNF1 bytes. Without custom_dims the header must declare 512/128.
inline FeatureMatrices decode_feature_file(std::string_view bytes, const std::string& what,
                                           std::optional<FeatureDims> custom_dims = std::nullopt) {
  io::Reader r(bytes, what);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw FormatError(what + ": bad magic");
  }
  r.take(4);
  const std::uint32_t n = r.u32();
  const FeatureDims dims{r.u32(), r.u32()};
  const FeatureDims expected = custom_dims.value_or(FeatureDims{});
  if (!(dims == expected)) {
    throw FormatError(what + ": header dims " + std::to_string(dims.vision) + "/" +
                      std::to_string(dims.audio) + ", expected " +
                      std::to_string(expected.vision) + "/" + std::to_string(expected.audio));
  }
  if (n == 0) {
    throw FormatError(what + ": zero segments");
  }
  const std::uint64_t payload =
      static_cast<std::uint64_t>(n) * (dims.vision + dims.audio) * sizeof(float);
  if (r.remaining() != payload) {
    throw FormatError(what + (r.remaining() < payload ? ": truncated payload"
                                                      : ": trailing bytes after payload"));
  }
  FeatureMatrices out;
  out.vision.resize(n, dims.vision);
  out.audio.resize(n, dims.audio);
  r.f32s(out.vision.data(), static_cast<std::size_t>(out.vision.size()));
  r.f32s(out.audio.data(), static_cast<std::size_t>(out.audio.size()));
  if (!out.vision.allFinite() || !out.audio.allFinite()) {
    throw FormatError(what + ": non-finite feature value");
  }
  return out;
}

inline void write_feature_file(const fs::path& path, const DenseMatrix& vision,
                               const DenseMatrix& audio,
                               std::optional<FeatureDims> custom_dims = std::nullopt) {
  io::write_file(path, encode_feature_file(vision, audio, custom_dims));
}

inline FeatureMatrices read_feature_file(const fs::path& path,
                                         std::optional<FeatureDims> custom_dims = std::nullopt) {
  return decode_feature_file(io::read_file(path), path.string(), custom_dims);
}

// One integer per line.
inline std::vector<int> read_label_file(const fs::path& path) {
  const std::string text = io::read_file(path);
  std::vector<int> labels;
  std::size_t line_no = 0;
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    line = io::trim(line);
    if (line.empty()) {
      continue;
    }
    const auto v = io::parse_int(line);
    if (!v || *v < 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected a nonnegative integer");
    }
    labels.push_back(static_cast<int>(*v));
  }
  return labels;
}

inline void write_label_file(const fs::path& path, const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) {
    out += std::to_string(l);
    out += '\n';
  }
  io::write_file(path, out);
}

struct VideoDescriptor {
  std::string video_id;
  std::string event_tag;
  double duration_s = 0.0;
  fs::path feature_path;
  std::vector<fs::path> label_paths;  // empty when unlabeled
};

struct DatasetIndex {
  std::vector<VideoDescriptor> records;

  std::set<std::string> events() const {
    std::set<std::string> out;
    for (const auto& r : records) {
      out.insert(r.event_tag);
    }
    return out;
  }
};

inline DatasetIndex parse_manifest(std::string_view text, const fs::path& base_dir,
                                   const std::string& what) {
  DatasetIndex index;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw FormatError(what + ": line " + std::to_string(line_no) + ": " + msg);
  };
  for (auto line : io::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (io::trim(line).empty() || line.front() == '#') {
      continue;
    }
    const auto fields = io::split(line, '\t');
    if (fields.size() != 4 && fields.size() != 5) {
      fail("expected 4 or 5 tab-separated fields, found " + std::to_string(fields.size()));
    }
    VideoDescriptor d;
    d.video_id = std::string(fields[0]);
    d.event_tag = std::string(fields[1]);
    if (d.video_id.empty() || d.event_tag.empty() || fields[3].empty()) {
      fail("empty video_id, event_tag or feature_path");
    }
    const auto dur = io::parse_double(fields[2]);
    if (!dur || !(*dur >= 0.0) || !std::isfinite(*dur)) {
      fail("duration '" + std::string(fields[2]) + "' is not a nonnegative number");
    }
    d.duration_s = *dur;
    d.feature_path = base_dir / fs::path(std::string(fields[3]));
    if (fields.size() == 5 && !fields[4].empty()) {
      for (auto p : io::split(fields[4], ',')) {
        if (p.empty()) {
          fail("empty label path");
        }
        d.label_paths.push_back(base_dir / fs::path(std::string(p)));
      }
    }
    if (!seen.insert(d.video_id).second) {
      fail("duplicate video_id '" + d.video_id + "'");
    }
    index.records.push_back(std::move(d));
  }
  return index;
}

inline DatasetIndex read_manifest(const fs::path& path) {
  return parse_manifest(io::read_file(path), path.parent_path(), path.string());
}

// Writes paths relative to the manifest's directory where possible.
inline void write_manifest(const fs::path& path, const DatasetIndex& index) {
  const fs::path base = path.parent_path();
  const auto rel = [&](const fs::path& p) {
    return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string();
  };
  std::string out;
  for (const auto& r : index.records) {
    out += r.video_id + '\t' + r.event_tag + '\t' + io::format_double(r.duration_s) + '\t' +
           rel(r.feature_path);
    if (!r.label_paths.empty()) {
      out += '\t';
      for (std::size_t i = 0; i < r.label_paths.size(); ++i) {
        out += (i ? "," : "") + rel(r.label_paths[i]);
      }
    }
    out += '\n';
  }
  io::write_file(path, out);
}

// A video with its features in memory. `labels` holds the first label file
// (binary highlight flags or importance scores); `summaries` holds every
// label file when several human summaries are given.
struct VideoRecord {
  std::string video_id;
  std::string event_tag;
  double duration_s = 0.0;
  DenseMatrix vision;
  DenseMatrix audio;
  std::optional<std::vector<int>> labels;
  std::vector<std::vector<int>> summaries;

  Index segment_count() const { return vision.rows(); }
};

inline VideoRecord load_video(const VideoDescriptor& d,
                              std::optional<FeatureDims> custom_dims = std::nullopt) {
  auto feats = read_feature_file(d.feature_path, custom_dims);
  VideoRecord v{d.video_id, d.event_tag, d.duration_s, std::move(feats.vision),
                std::move(feats.audio), std::nullopt, {}};
  for (const auto& lp : d.label_paths) {
    auto labels = read_label_file(lp);
    if (static_cast<Index>(labels.size()) != v.segment_count()) {
      throw FormatError(lp.string() + ": " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(v.segment_count()) + " segments");
    }
    v.summaries.push_back(std::move(labels));
  }
  if (!v.summaries.empty()) {
    v.labels = v.summaries.front();
  }
  return v;
}

inline std::vector<VideoRecord> load_videos(const std::vector<VideoDescriptor>& ds,
                                            std::optional<FeatureDims> custom_dims = std::nullopt) {
  std::vector<VideoRecord> out;
  out.reserve(ds.size());
  for (const auto& d : ds) {
    out.push_back(load_video(d, custom_dims));
  }
  return out;
}

struct VideoSplit {
  std::vector<VideoDescriptor> positives;
  std::vector<VideoDescriptor> negatives;
};

// Positives: interest-event videos shorter than tau. Negatives: videos of
// other events longer than tau. Both inequalities are strict.
inline VideoSplit split_videos(const DatasetIndex& index, const std::string& interest_event,
                               double tau) {
  if (!(tau > 0.0)) {
    throw ConfigError("tau must be positive");
  }
  VideoSplit s;
  for (const auto& r : index.records) {
    if (r.event_tag == interest_event && r.duration_s < tau) {
      s.positives.push_back(r);
    } else if (r.event_tag != interest_event && r.duration_s > tau) {
      s.negatives.push_back(r);
    }
  }
  if (s.positives.empty()) {
    throw ConfigError("event '" + interest_event + "': no positive videos shorter than tau");
  }
  if (s.negatives.empty()) {
    throw ConfigError("event '" + interest_event + "': no negative videos longer than tau");
  }
  return s;
}

// Segment indices of one bag. With at least bag_size segments: bag_size
// distinct indices, uniformly without replacement. Otherwise the full index
// list tiled ceil(bag_size / len) times, truncated to bag_size and shuffled.
inline std::vector<std::size_t> sample_bag_indices(std::size_t segments, std::size_t bag_size,
                                                   Rng& rng) {
  if (segments == 0) {
    throw ShapeError("sample_bag: empty video");
  }
  if (bag_size == 0) {
    throw ConfigError("sample_bag: bag size must be at least 1");
  }
  std::vector<std::size_t> idx;
  if (segments >= bag_size) {
    // Partial Fisher-Yates: the first bag_size slots end up a uniform sample.
    idx.resize(segments);
    for (std::size_t i = 0; i < segments; ++i) {
      idx[i] = i;
    }
    for (std::size_t i = 0; i < bag_size; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(segments - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(bag_size);
  } else {
    idx.reserve(bag_size);
    for (std::size_t i = 0; i < bag_size; ++i) {
      idx.push_back(i % segments);
    }
    rng.shuffle(std::span<std::size_t>(idx));
  }
  return idx;
}

inline Bag<float> sample_bag(const VideoRecord& video, std::size_t bag_size, Rng& rng,
                             Polarity polarity = Polarity::kPositive) {
  const auto idx = sample_bag_indices(static_cast<std::size_t>(video.segment_count()), bag_size,
                                      rng);
  Bag<float> bag;
  bag.vision.resize(static_cast<Index>(idx.size()), video.vision.cols());
  bag.audio.resize(static_cast<Index>(idx.size()), video.audio.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    bag.vision.row(static_cast<Index>(i)) = video.vision.row(static_cast<Index>(idx[i]));
    bag.audio.row(static_cast<Index>(i)) = video.audio.row(static_cast<Index>(idx[i]));
  }
  bag.polarity = polarity;
  bag.source_video = video.video_id;
  bag.instance_indices = idx;
  return bag;
}

// Seeded synthetic corpus. Each event has a highlight prototype; all events
// share a pool of background prototypes. Prototypes are unit vectors in the
// concatenated (vision, audio) space. A segment is its prototype plus
// isotropic Gaussian noise whose expected norm is noise_sigma. Every video
// carries a contiguous run of highlight segments of its own event, so the
// videos of one event act as negatives with off-event highlights for every
// other event. Even-indexed videos are short (duration < tau), odd-indexed
// ones long (> tau).
struct SyntheticSpec {
  std::size_t n_events = 6;
  std::size_t videos_per_event = 80;
  std::size_t segments_per_video = 60;
  double highlight_fraction = 0.15;
  double noise_sigma = 0.1;
  std::size_t background_prototypes = 8;
  FeatureDims dims{};
  double tau = 60.0;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  std::size_t highlights_per_video() const {
    const double x = highlight_fraction * static_cast<double>(segments_per_video);
    // Guard against 0.15 * 60 = 9.000000000000002.
    return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  }

  std::size_t test_videos_per_event() const {
    return static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(videos_per_event)));
  }

  bool is_test_video(std::size_t i) const {
    const std::size_t n_test = test_videos_per_event();
    return (i * n_test) / videos_per_event != ((i + 1) * n_test) / videos_per_event;
  }

  void validate() const {
    if (n_events < 2) {
      throw ConfigError("synthetic: need at least two events");
    }
    if (videos_per_event < 2 || segments_per_video < 1) {
      throw ConfigError("synthetic: need at least two videos per event and one segment");
    }
    if (!(highlight_fraction > 0.0 && highlight_fraction < 1.0)) {
      throw ConfigError("synthetic: highlight_fraction must lie in (0, 1)");
    }
    if (highlight_fraction * static_cast<double>(segments_per_video) < 1.0 - 1e-9) {
      throw ConfigError("synthetic: fewer than one highlight segment per video");
    }
    if (highlights_per_video() > segments_per_video) {
      throw ConfigError("synthetic: more highlights than segments");
    }
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
      throw ConfigError("synthetic: noise_sigma must be positive");
    }
    if (background_prototypes < 1 || dims.vision < 1 || dims.audio < 1) {
      throw ConfigError("synthetic: empty background pool or zero feature width");
    }
    if (!(tau > 0.0)) {
      throw ConfigError("synthetic: tau must be positive");
    }
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
      throw ConfigError("synthetic: test_fraction must lie in [0, 1)");
    }
  }
};

inline std::string synthetic_event_tag(std::size_t e) { return "event" + std::to_string(e); }

inline std::string synthetic_video_id(std::size_t e, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "e%zu_v%03zu", e, i);
  return buf;
}

struct SyntheticDataset {
  DatasetIndex all;
  DatasetIndex train;
  DatasetIndex test;
};

// Writes features/<id>.mnf, labels/<id>.txt and manifest.tsv, train.tsv,
// test.tsv under out_dir.
inline SyntheticDataset gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  const std::size_t dim = spec.dims.vision + spec.dims.audio;
  Rng rng(spec.seed, Stream::kSynthetic);
  const auto unit_vector = [&] {
    Vector<double> v(static_cast<Index>(dim));
    for (Index i = 0; i < v.size(); ++i) {
      v[i] = rng.normal();
    }
    return Vector<double>(v / v.norm());
  };
  std::vector<Vector<double>> highlight_protos;
  for (std::size_t e = 0; e < spec.n_events; ++e) {
    highlight_protos.push_back(unit_vector());
  }
  std::vector<Vector<double>> background_protos;
  for (std::size_t b = 0; b < spec.background_prototypes; ++b) {
    background_protos.push_back(unit_vector());
  }
  const double per_coord_sigma = spec.noise_sigma / std::sqrt(static_cast<double>(dim));
  const std::size_t n_seg = spec.segments_per_video;
  const std::size_t n_high = spec.highlights_per_video();

  SyntheticDataset ds;
  for (std::size_t e = 0; e < spec.n_events; ++e) {
    for (std::size_t i = 0; i < spec.videos_per_event; ++i) {
      const std::size_t start = static_cast<std::size_t>(rng.below(n_seg - n_high + 1));
      DenseMatrix vision(static_cast<Index>(n_seg), spec.dims.vision);
      DenseMatrix audio(static_cast<Index>(n_seg), spec.dims.audio);
      std::vector<int> labels(n_seg, 0);
      for (std::size_t s = 0; s < n_seg; ++s) {
        const bool highlight = s >= start && s < start + n_high;
        const Vector<double>& proto =
            highlight ? highlight_protos[e]
                      : background_protos[static_cast<std::size_t>(
                            rng.below(spec.background_prototypes))];
        labels[s] = highlight ? 1 : 0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double x = proto[static_cast<Index>(d)] + per_coord_sigma * rng.normal();
          if (d < spec.dims.vision) {
            vision(static_cast<Index>(s), static_cast<Index>(d)) = static_cast<float>(x);
          } else {
            audio(static_cast<Index>(s), static_cast<Index>(d - spec.dims.vision)) =
                static_cast<float>(x);
          }
        }
      }
      const bool short_video = i % 2 == 0;
      const double raw_duration = short_video ? rng.uniform(0.5 * spec.tau, 0.95 * spec.tau)
                                              : rng.uniform(1.05 * spec.tau, 2.0 * spec.tau);
      VideoDescriptor d;
      d.video_id = synthetic_video_id(e, i);
      d.event_tag = synthetic_event_tag(e);
      d.duration_s = std::round(raw_duration * 10.0) / 10.0;
      d.feature_path = out_dir / "features" / (d.video_id + ".mnf");
      d.label_paths = {out_dir / "labels" / (d.video_id + ".txt")};
      const FeatureDims dims = spec.dims;
      write_feature_file(d.feature_path, vision, audio, dims);
      write_label_file(d.label_paths.front(), labels);
      ds.all.records.push_back(d);
      (spec.is_test_video(i) ? ds.test : ds.train).records.push_back(std::move(d));
    }
  }
  write_manifest(out_dir / "manifest.tsv", ds.all);
  write_manifest(out_dir / "train.tsv", ds.train);
  write_manifest(out_dir / "test.tsv", ds.test);
  return ds;
}

}  // namespace mininet
