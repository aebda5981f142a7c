#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnpop/log.hpp"
#include "attnpop/model.hpp"
#include "attnpop/random.hpp"

namespace attnpop {

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::string id;
  std::string headline;
  std::uint64_t view_count = 0;
  std::uint64_t follower_count = 1;
  std::string frame_features_path;
  std::optional<std::string> conv_activations_path;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline nlohmann::json record_to_json(const ManifestRecord& r) {
  nlohmann::json j{{"id", r.id},
                   {"headline", r.headline},
                   {"view_count", r.view_count},
                   {"follower_count", r.follower_count},
                   {"frame_features_path", r.frame_features_path}};
  if (r.conv_activations_path) j["conv_activations_path"] = *r.conv_activations_path;
  return j;
}

/// One JSON object per line. Blank lines are skipped.
inline std::vector<ManifestRecord> parse_manifest(std::istream& in) {
  static const std::set<std::string> known{"id",           "headline", "view_count", "follower_count",
                                           "frame_features_path", "conv_activations_path"};
  std::vector<ManifestRecord> records;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "manifest line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + "malformed record: " + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError(where + "record must be an object", line_no);
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ParseError(where + "unknown field '" + key + "'", line_no);
    }
    ManifestRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.headline = j.at("headline").get<std::string>();
      const auto views = j.at("view_count");
      const auto followers = j.at("follower_count");
      if (!views.is_number_integer() || !followers.is_number_integer()) {
        throw ParseError(where + "view_count and follower_count must be integers", line_no);
      }
      auto count = [](const nlohmann::json& v) -> std::int64_t {
        if (v.is_number_unsigned()) return static_cast<std::int64_t>(v.get<std::uint64_t>());
        return v.get<std::int64_t>();
      };
      const auto v = count(views);
      const auto f = count(followers);
      if (v < 0) throw ValidationError(where + "record '" + r.id + "' has negative view_count");
      if (f <= 0) {
        throw ValidationError(where + "record '" + r.id + "' has follower_count " + std::to_string(f) +
                              " (must be positive)");
      }
      r.view_count = static_cast<std::uint64_t>(v);
      r.follower_count = static_cast<std::uint64_t>(f);
      r.frame_features_path = j.at("frame_features_path").get<std::string>();
      if (j.contains("conv_activations_path") && !j["conv_activations_path"].is_null()) {
        r.conv_activations_path = j["conv_activations_path"].get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + "bad field: " + e.what(), line_no);
    }
    if (r.id.empty()) throw ValidationError(where + "empty id");
    if (!ids.insert(r.id).second) throw ValidationError(where + "duplicate id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline void save_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Headline tokenization and word vectors

namespace text {

inline std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = c;
    if (c >= 0xF8) {
      extra = -1;
    } else if (c >= 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    }
    if (c >= 0x80 && extra <= 0) {  // stray continuation or invalid lead byte
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (extra > 0 && i + static_cast<std::size_t>(extra) >= s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(ok ? cp : 0xFFFD);
    i += ok ? static_cast<std::size_t>(extra) + 1 : 1;
  }
  return out;
}

inline std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t cp : cps) {
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return out;
}

inline bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

inline bool is_punct(char32_t c) {
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                       (c >= 0x7B && c <= 0x7E);
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || c == 0xA1 || c == 0xAB || c == 0xBB ||
         c == 0xBF || c == 0x3001 || c == 0x3002;
}

inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  // Latin-1 supplement and Latin Extended-A capitals.
  if ((c >= 0xC0 && c <= 0xDE && c != 0xD7)) return c + 32;
  if (c >= 0x100 && c <= 0x17F && c != 0x130 && c != 0x138 && c != 0x149 && c != 0x178) {
    const bool odd_pairs = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
    if (odd_pairs ? (c % 2 == 1) : (c % 2 == 0)) return c + 1;
  }
  return c;
}

inline std::string lowercase(std::string_view s) {
  auto cps = decode_utf8(s);
  for (auto& c : cps) c = to_lower(c);
  return encode_utf8(cps);
}

}  // namespace text

/// Lowercase, split on Unicode whitespace, strip leading and trailing
/// punctuation from each token; tokens left empty are dropped.
inline std::vector<std::string> tokenize_headline(std::string_view headline) {
  std::vector<std::string> tokens;
  std::vector<char32_t> current;
  auto flush = [&]() {
    auto b = current.begin();
    auto e = current.end();
    while (b != e && text::is_punct(*b)) ++b;
    while (e != b && text::is_punct(*(e - 1))) --e;
    if (b != e) tokens.push_back(text::encode_utf8({b, e}));
    current.clear();
  };
  for (char32_t c : text::decode_utf8(headline)) {
    if (text::is_space(c)) {
      flush();
    } else {
      current.push_back(text::to_lower(c));
    }
  }
  flush();
  return tokens;
}

/// Frozen word vectors keyed by lowercased word.
class GloveVocabulary {
 public:
  GloveVocabulary() = default;
  explicit GloveVocabulary(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

  /// Keeps the first vector seen for a lowercased key.
  void add(const std::string& word, Tensor vec) {
    if (vec.size() != dim_) throw ShapeError("word vector for '" + word + "' has wrong dimension");
    vectors_.emplace(text::lowercase(word), std::move(vec));
  }

  const Tensor* lookup(std::string_view word) const {
    auto it = vectors_.find(text::lowercase(word));
    return it == vectors_.end() ? nullptr : &it->second;
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Tensor> vectors_;
};

/// "word v1 v2 ... vd" per line; d is fixed by the first line.
inline GloveVocabulary parse_glove(std::istream& in) {
  GloveVocabulary vocab;
  bool first = true;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("glove line " + std::to_string(line_no) + ": bad number '" + tok + "'", line_no);
      }
      if (!std::isfinite(v)) throw ParseError("glove line " + std::to_string(line_no) + ": non-finite value", line_no);
      vals.push_back(v);
    }
    if (first) {
      if (vals.empty()) throw ParseError("glove line " + std::to_string(line_no) + ": no vector values", line_no);
      vocab = GloveVocabulary(vals.size());
      first = false;
    } else if (vals.size() != vocab.dim()) {
      throw ParseError("glove line " + std::to_string(line_no) + ": expected " + std::to_string(vocab.dim()) +
                           " values, got " + std::to_string(vals.size()),
                       line_no);
    }
    vocab.add(word, Tensor::vector(std::move(vals)));
  }
  if (first) throw ParseError("empty vocabulary");
  return vocab;
}

inline GloveVocabulary load_glove(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word vectors " + path.string());
  return parse_glove(in);
}

struct EncodedHeadline {
  std::vector<std::string> tokens;
  std::vector<Tensor> vectors;
};

/// Out-of-vocabulary tokens become zero vectors; an empty headline becomes a
/// single zero vector so downstream sequences are never empty.
inline EncodedHeadline headline_to_vectors(const GloveVocabulary& vocab, std::string_view headline) {
  EncodedHeadline out;
  out.tokens = tokenize_headline(headline);
  for (const auto& tok : out.tokens) {
    const auto* v = vocab.lookup(tok);
    out.vectors.push_back(v != nullptr ? *v : Tensor::zeros({vocab.dim()}));
  }
  if (out.vectors.empty()) {
    out.tokens = {""};
    out.vectors.push_back(Tensor::zeros({vocab.dim()}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Popularity labels and splits

inline double normalized_viewcount(std::int64_t views, std::int64_t followers) {
  if (followers <= 0) throw ArgumentError("follower count must be positive, got " + std::to_string(followers));
  if (views < 0) throw ArgumentError("view count must be nonnegative, got " + std::to_string(views));
  return static_cast<double>(views) / static_cast<double>(followers);
}

/// Average of the two middle order statistics for even counts.
inline double median(std::vector<double> values) {
  if (values.empty()) throw ArgumentError("median of an empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// 1 (popular) iff strictly above the median.
inline std::vector<int> assign_labels(const std::vector<double>& normalized) {
  if (normalized.size() < 2) throw ArgumentError("labeling needs at least 2 records");
  const double m = median(normalized);
  std::vector<int> labels(normalized.size());
  std::size_t popular = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = normalized[i] > m ? 1 : 0;
    popular += static_cast<std::size_t>(labels[i]);
  }
  if (popular == 0) warn("all normalized view counts are <= the median; every record is labeled unpopular");
  return labels;
}

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ArgumentError("unknown split '" + s + "' (expected train, val or test)");
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Seeded shuffle, then contiguous blocks: val and test get floor(n * ratio)
/// records, train gets the rest. Returns the split of each record index.
inline std::vector<Split> split_dataset(std::size_t n, SplitRatios ratios, std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 ||
      ratios.test < 0) {
    throw ArgumentError("split ratios must be nonnegative and sum to 1");
  }
  auto floor_count = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const auto n_val = floor_count(ratios.val);
  const auto n_test = floor_count(ratios.test);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng{seed, 0x5eedULL};
  rng.shuffle(order);
  std::vector<Split> out(n, Split::train);
  const auto n_train = n - n_val - n_test;
  for (std::size_t k = n_train; k < n_train + n_val; ++k) out[order[k]] = Split::val;
  for (std::size_t k = n_train + n_val; k < n; ++k) out[order[k]] = Split::test;
  return out;
}

// ---------------------------------------------------------------------------
// Binary feature files (little-endian, 32-bit floats)

namespace binio {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline void put_f32(std::string& buf, double v) { put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class Reader {
 public:
  Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  void expect_magic(std::string_view magic) {
    if (data_.size() < magic.size() || std::string_view(data_).substr(0, magic.size()) != magic) {
      throw FormatError(name_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ = magic.size();
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  void need(std::size_t bytes) const {
    if (data_.size() - pos_ < bytes) {
      throw TruncationError(name_ + ": truncated at byte " + std::to_string(data_.size()) + ", needed " +
                            std::to_string(pos_ + bytes));
    }
  }

  void expect_end() const {
    if (pos_ != data_.size()) {
      throw FormatError(name_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes after declared payload");
    }
  }

 private:
  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace binio

/// "VFB1", u32 n_frames, u32 dim, n_frames * dim floats.
inline void write_frame_features(const std::filesystem::path& path, const Tensor& frames) {
  if (frames.rank() != 2) throw ShapeError("frame features must be [n_frames x dim]");
  std::string buf = "VFB1";
  binio::put_u32(buf, static_cast<std::uint32_t>(frames.dim(0)));
  binio::put_u32(buf, static_cast<std::uint32_t>(frames.dim(1)));
  for (double v : frames.values()) binio::put_f32(buf, v);
  binio::write_file(path, buf);
}

inline Tensor read_frame_features(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  r.expect_magic("VFB1");
  const auto n = r.u32();
  const auto dim = r.u32();
  if (n == 0 || dim == 0) throw FormatError(path.string() + ": zero-sized header");
  r.need(std::size_t{n} * dim * 4);
  std::vector<double> vals(std::size_t{n} * dim);
  for (auto& v : vals) v = r.f32();
  r.expect_end();
  return Tensor::matrix(n, dim, std::move(vals));
}

/// "VCA1", u32 n_frames, u32 K, u32 F, then floats in (frame, i, j, f) order.
inline void write_conv_activations(const std::filesystem::path& path, const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ArgumentError("no activation maps to write");
  const auto k = maps[0].dim(0);
  const auto f = maps[0].dim(2);
  std::string buf = "VCA1";
  binio::put_u32(buf, static_cast<std::uint32_t>(maps.size()));
  binio::put_u32(buf, static_cast<std::uint32_t>(k));
  binio::put_u32(buf, static_cast<std::uint32_t>(f));
  for (const auto& m : maps) {
    if (m.shape() != Shape{k, k, f}) throw ShapeError("activation maps must share shape [K x K x F]");
    for (double v : m.values()) binio::put_f32(buf, v);
  }
  binio::write_file(path, buf);
}

inline std::vector<Tensor> read_conv_activations(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  r.expect_magic("VCA1");
  const auto n = r.u32();
  const auto k = r.u32();
  const auto f = r.u32();
  if (n == 0 || k == 0 || f == 0) throw FormatError(path.string() + ": zero-sized header");
  r.need(std::size_t{n} * k * k * f * 4);
  std::vector<Tensor> maps;
  maps.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<double> vals(std::size_t{k} * k * f);
    for (auto& v : vals) v = r.f32();
    maps.emplace_back(Shape{k, k, f}, std::move(vals));
  }
  r.expect_end();
  return maps;
}

/// Relative tolerance between an activation map's spatial mean and the pooled
/// feature; the denominator is floored at 1e-3 so near-zero channels compare
/// on an absolute scale of the file's 32-bit rounding.
inline constexpr double kPoolingConsistencyTolerance = 1e-4;

inline void check_pooling_consistency(const Tensor& frames, const std::vector<Tensor>& maps, const std::string& name) {
  if (maps.size() != frames.dim(0)) {
    throw ConsistencyError(name + ": activation file has " + std::to_string(maps.size()) + " frames, features have " +
                           std::to_string(frames.dim(0)));
  }
  const auto dim = frames.dim(1);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    const auto k = m.dim(0);
    if (m.dim(2) != dim) {
      throw ConsistencyError(name + ": activation channels " + std::to_string(m.dim(2)) + " != feature dim " +
                             std::to_string(dim));
    }
    for (std::size_t f = 0; f < dim; ++f) {
      double s = 0.0;
      for (std::size_t cell = 0; cell < k * k; ++cell) s += m[cell * dim + f];
      const double mean = s / static_cast<double>(k * k);
      const double pooled = frames.at(i, f);
      const double denom = std::max({std::abs(mean), std::abs(pooled), 1e-3});
      if (std::abs(mean - pooled) / denom > kPoolingConsistencyTolerance) {
        throw ConsistencyError(name + ": frame " + std::to_string(i) + " channel " + std::to_string(f) +
                               " spatial mean " + std::to_string(mean) + " disagrees with pooled feature " +
                               std::to_string(pooled));
      }
    }
  }
}

struct FeatureStore {
  Tensor frames;  // [N x dim]
  std::optional<std::vector<Tensor>> activations;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

/// Loads a record's features, widening to double. `expected_frames` of 0 accepts any count.
inline FeatureStore load_feature_store(const ManifestRecord& record, const std::filesystem::path& base_dir,
                                       std::size_t expected_frames = 0, bool with_activations = true) {
  FeatureStore store;
  const auto fpath = resolve(base_dir, record.frame_features_path);
  store.frames = read_frame_features(fpath);
  if (expected_frames != 0 && store.frames.dim(0) != expected_frames) {
    throw ValidationError(fpath.string() + ": " + std::to_string(store.frames.dim(0)) + " frames, expected " +
                          std::to_string(expected_frames));
  }
  if (with_activations && record.conv_activations_path) {
    const auto cpath = resolve(base_dir, *record.conv_activations_path);
    auto maps = read_conv_activations(cpath);
    check_pooling_consistency(store.frames, maps, cpath.string());
    store.activations = std::move(maps);
  }
  return store;
}

// ---------------------------------------------------------------------------
// In-memory dataset

struct Example {
  std::string id;
  std::string headline;
  std::vector<std::string> tokens;
  double normalized_viewcount = 0.0;
  int label = 0;
  Split split = Split::train;
  std::vector<Tensor> frames;  // N x [dim]
  std::vector<Tensor> words;   // T x [word_dim]
  std::optional<std::vector<Tensor>> activations;
};

struct Dataset {
  std::vector<Example> examples;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (examples[i].split == s) out.push_back(i);
    return out;
  }

  const Example* find(const std::string& id) const {
    for (const auto& e : examples)
      if (e.id == id) return &e;
    return nullptr;
  }
};

inline std::vector<Tensor> rows_of(const Tensor& m) {
  std::vector<Tensor> out;
  out.reserve(m.dim(0));
  for (std::size_t r = 0; r < m.dim(0); ++r) out.push_back(m.row(r));
  return out;
}

/// Labels over the whole dataset, then splits.
inline void label_and_split(Dataset& ds, std::uint64_t split_seed, SplitRatios ratios = {}) {
  std::vector<double> values;
  values.reserve(ds.examples.size());
  for (const auto& e : ds.examples) values.push_back(e.normalized_viewcount);
  const auto labels = assign_labels(values);
  const auto splits = split_dataset(ds.examples.size(), ratios, split_seed);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    ds.examples[i].label = labels[i];
    ds.examples[i].split = splits[i];
  }
}

struct DatasetOptions {
  bool load_frames = true;
  bool load_activations = false;
  std::size_t expected_frames = 0;
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
};

inline Dataset build_dataset(const std::vector<ManifestRecord>& records, const std::filesystem::path& base_dir,
                             const GloveVocabulary* vocab, const DatasetOptions& opts) {
  Dataset ds;
  ds.examples.reserve(records.size());
  for (const auto& r : records) {
    Example e;
    e.id = r.id;
    e.headline = r.headline;
    e.normalized_viewcount = normalized_viewcount(static_cast<std::int64_t>(r.view_count),
                                                  static_cast<std::int64_t>(r.follower_count));
    if (opts.load_frames) {
      auto store = load_feature_store(r, base_dir, opts.expected_frames, opts.load_activations);
      e.frames = rows_of(store.frames);
      e.activations = std::move(store.activations);
    }
    if (vocab != nullptr) {
      auto enc = headline_to_vectors(*vocab, r.headline);
      e.tokens = std::move(enc.tokens);
      e.words = std::move(enc.vectors);
    } else {
      e.tokens = tokenize_headline(r.headline);
    }
    ds.examples.push_back(std::move(e));
  }
  label_and_split(ds, opts.split_seed, opts.ratios);
  return ds;
}

}  // namespace attnpop
