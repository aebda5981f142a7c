#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "attnpop/data.hpp"
#include "attnpop/random.hpp"

namespace attnpop {

// Seeded toy datasets with a known generating signal, for smoke tests and demos.
//
//   video_mean     label = mean of all frame features > 0
//   text_keywords  five keywords from two disjoint sets among filler words;
//                  label = more positive than negative keywords
//   bimodal        label = z + a s > 0, with z the standardized frame mean and
//                  s = +-1 from a single keyword; a = 0.6745 makes either
//                  modality alone right 75% of the time

enum class SyntheticTask { video_mean, text_keywords, bimodal };

inline std::string to_string(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::video_mean: return "video";
    case SyntheticTask::text_keywords: return "text";
    case SyntheticTask::bimodal: return "bimodal";
  }
  return "?";
}

inline SyntheticTask synthetic_task_from_string(const std::string& s) {
  if (s == "video") return SyntheticTask::video_mean;
  if (s == "text") return SyntheticTask::text_keywords;
  if (s == "bimodal") return SyntheticTask::bimodal;
  throw ArgumentError("unknown synthetic task '" + s + "' (expected video, text or bimodal)");
}

struct SyntheticOptions {
  std::size_t records = 2000;
  std::size_t frames = 4;
  std::size_t feature_dim = 16;
  std::size_t word_dim = 8;
  std::size_t conv_k = 0;  // 0 disables activation maps
  std::uint64_t seed = 0;
  SplitRatios ratios;
};

inline constexpr double kBimodalTextWeight = 0.6745;  // Phi(a) = 0.75

struct SyntheticData {
  Dataset dataset;
  std::vector<double> margins;  // generating signal; label = margin > 0
  GloveVocabulary vocab;
  std::vector<ManifestRecord> records;
};

namespace detail {

inline GloveVocabulary synthetic_vocabulary(std::size_t dim, Rng& rng) {
  GloveVocabulary vocab(dim);
  for (const char* prefix : {"good", "bad", "filler"}) {
    const int count = std::string(prefix) == "filler" ? 8 : 4;
    for (int i = 0; i < count; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.normal();
      vocab.add(prefix + std::to_string(i), Tensor::vector(std::move(v)));
    }
  }
  return vocab;
}

inline std::string synthetic_headline(std::size_t positives, std::size_t negatives, std::size_t fillers, Rng& rng) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < positives; ++i) words.push_back("good" + std::to_string(rng.below(4)));
  for (std::size_t i = 0; i < negatives; ++i) words.push_back("bad" + std::to_string(rng.below(4)));
  for (std::size_t i = 0; i < fillers; ++i) words.push_back("filler" + std::to_string(rng.below(8)));
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace detail

inline SyntheticData make_synthetic(SyntheticTask task, const SyntheticOptions& opts) {
  if (opts.records < 10) throw ArgumentError("synthetic data needs at least 10 records");
  if (opts.frames < 1 || opts.feature_dim < 1 || opts.word_dim < 1) {
    throw ArgumentError("synthetic dimensions must be positive");
  }
  Rng rng{opts.seed, 0x5714ULL};
  SyntheticData data;
  data.vocab = detail::synthetic_vocabulary(opts.word_dim, rng);
  const double cells = static_cast<double>(opts.frames * opts.feature_dim);

  for (std::size_t r = 0; r < opts.records; ++r) {
    Example e;
    e.id = "syn" + std::to_string(r);
    double total = 0.0;
    for (std::size_t n = 0; n < opts.frames; ++n) {
      std::vector<double> f(opts.feature_dim);
      for (auto& x : f) total += (x = rng.normal());
      e.frames.push_back(Tensor::vector(std::move(f)));
    }
    const double frame_mean = total / cells;
    const double z = frame_mean * std::sqrt(cells);  // standard normal

    double margin = 0.0;
    switch (task) {
      case SyntheticTask::video_mean:
        margin = frame_mean;
        e.headline = detail::synthetic_headline(0, 0, 1 + rng.below(4), rng);
        break;
      case SyntheticTask::text_keywords: {
        std::size_t pos = 0;
        for (int k = 0; k < 5; ++k) pos += rng.below(2);
        margin = static_cast<double>(pos) - static_cast<double>(5 - pos);
        e.headline = detail::synthetic_headline(pos, 5 - pos, rng.below(4), rng);
        break;
      }
      case SyntheticTask::bimodal: {
        const bool good = rng.below(2) == 1;
        margin = z + kBimodalTextWeight * (good ? 1.0 : -1.0);
        e.headline = detail::synthetic_headline(good ? 1 : 0, good ? 0 : 1, 2 + rng.below(3), rng);
        break;
      }
    }
    const auto enc = headline_to_vectors(data.vocab, e.headline);
    e.tokens = enc.tokens;
    e.words = enc.vectors;
    e.label = margin > 0.0 ? 1 : 0;

    // Views grow monotonically with the margin, so the median split of the
    // written manifest approximately recovers the generating label.
    const double spread = task == SyntheticTask::video_mean ? 1.0 / std::sqrt(cells) : 2.0;
    const std::uint64_t followers = 10000;
    const auto views = static_cast<std::uint64_t>(std::llround(1e7 / (1.0 + std::exp(-2.0 * margin / spread))));
    e.normalized_viewcount = normalized_viewcount(static_cast<std::int64_t>(views), followers);

    if (opts.conv_k > 0) {
      // Cells scatter around the pooled vector with exactly zero spatial mean offset.
      const auto k2 = opts.conv_k * opts.conv_k;
      std::vector<Tensor> maps;
      for (const auto& q : e.frames) {
        std::vector<double> a(k2 * opts.feature_dim);
        for (std::size_t f = 0; f < opts.feature_dim; ++f) {
          double mean = 0.0;
          for (std::size_t c = 0; c < k2; ++c) mean += (a[c * opts.feature_dim + f] = rng.normal());
          mean /= static_cast<double>(k2);
          for (std::size_t c = 0; c < k2; ++c) a[c * opts.feature_dim + f] += q[f] - mean;
        }
        maps.push_back(Tensor({opts.conv_k, opts.conv_k, opts.feature_dim}, std::move(a)));
      }
      e.activations = std::move(maps);
    }

    ManifestRecord rec{e.id, e.headline, views, followers, "frames/" + e.id + ".vfb", std::nullopt};
    if (opts.conv_k > 0) rec.conv_activations_path = "conv/" + e.id + ".vca";
    data.records.push_back(rec);
    data.margins.push_back(margin);
    data.dataset.examples.push_back(std::move(e));
  }
  const auto splits = split_dataset(opts.records, opts.ratios, opts.seed);
  for (std::size_t i = 0; i < opts.records; ++i) data.dataset.examples[i].split = splits[i];
  return data;
}

/// Writes manifest.jsonl, glove.txt and the binary feature files under `dir`.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  const bool conv = !data.dataset.examples.empty() && data.dataset.examples.front().activations.has_value();
  if (conv) std::filesystem::create_directories(dir / "conv");
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& e = data.dataset.examples[i];
    std::vector<double> flat;
    for (const auto& f : e.frames) flat.insert(flat.end(), f.values().begin(), f.values().end());
    write_frame_features(dir / data.records[i].frame_features_path,
                         Tensor({e.frames.size(), e.frames.front().size()}, std::move(flat)));
    if (conv) write_conv_activations(dir / *data.records[i].conv_activations_path, *e.activations);
  }
  save_manifest(data.records, dir / "manifest.jsonl");
  std::ofstream glove(dir / "glove.txt", std::ios::trunc);
  if (!glove) throw IoError("cannot write " + (dir / "glove.txt").string());
  for (const char* prefix : {"good", "bad", "filler"}) {
    for (int i = 0; i < (std::string(prefix) == "filler" ? 8 : 4); ++i) {
      const auto word = prefix + std::to_string(i);
      glove << word;
      for (double v : data.vocab.lookup(word)->values()) glove << ' ' << std::setprecision(17) << v;
      glove << '\n';
    }
  }
}

}  // namespace attnpop
