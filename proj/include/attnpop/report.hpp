#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnpop/checkpoint.hpp"
#include "attnpop/gradcam.hpp"
#include "attnpop/training.hpp"

namespace attnpop {

// Structured documents emitted by the command-line tool. Every document is a
// JSON object; none carries timestamps or host details, so reruns with the
// embedded configuration reproduce it byte for byte.

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json(std::vector<double>(t.values().begin(), t.values().end()));
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"spearman", r.spearman}, {"n", r.n}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r{j.at("accuracy").get<double>(), j.at("spearman").get<double>(), j.at("n").get<std::size_t>()};
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0) || !(r.spearman >= -1.0 && r.spearman <= 1.0)) {
      throw ValidationError("report values out of range");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid evaluation report: ") + e.what());
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"seed", c.seed}, {"check_gradients", c.check_gradients}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw ParseError("train config must be an object");
  try {
    if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("max_epochs")) base.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("patience")) base.patience = j.at("patience").get<std::size_t>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("check_gradients")) base.check_gradients = j.at("check_gradients").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid train config: ") + e.what());
  }
  return base;
}

inline nlohmann::json to_json(const SearchSpace& s) {
  auto range = [](const auto& r) { return nlohmann::json::array({r.lo, r.hi}); };
  return {{"embed_dim", range(s.embed_dim)},   {"lstm_hidden", range(s.lstm_hidden)},
          {"attention_hidden", range(s.attention_hidden)}, {"fusion_dim", range(s.fusion_dim)},
          {"dropout", range(s.dropout)},       {"learning_rate", range(s.learning_rate)}};
}

inline SearchSpace search_space_from_json(const nlohmann::json& j, SearchSpace base = {}) {
  if (!j.is_object()) throw ParseError("search space must be an object");
  try {
    auto ints = [&](const char* key, IntRange& r) {
      if (j.contains(key)) r = {j.at(key).at(0).get<std::int64_t>(), j.at(key).at(1).get<std::int64_t>()};
    };
    auto reals = [&](const char* key, RealRange& r) {
      if (j.contains(key)) r = {j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
    };
    ints("embed_dim", base.embed_dim);
    ints("lstm_hidden", base.lstm_hidden);
    ints("attention_hidden", base.attention_hidden);
    ints("fusion_dim", base.fusion_dim);
    reals("dropout", base.dropout);
    reals("learning_rate", base.learning_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid search space: ") + e.what());
  }
  return base;
}

inline nlohmann::json history_to_json(const TrainResult& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"val_spearman", e.val_spearman}});
  }
  return {{"epochs", epochs}, {"best_epoch", r.best_epoch}, {"best_val_accuracy", r.best_val_accuracy}};
}

inline nlohmann::json to_json(const TrialResult& t) {
  return {{"trial", t.trial},
          {"model", config_to_json(t.config.model)},
          {"train", to_json(t.config.train)},
          {"validation", to_json(t.validation)}};
}

// ---------------------------------------------------------------------------
// Comparison table

struct TableEntry {
  Modality modality = Modality::video;
  Pooling pooling = Pooling::attention;
  EvalReport report;
};

/// Accuracy as a percentage with two decimals: 0.6887 -> "68.87".
inline std::string format_accuracy(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * accuracy);
  return buf;
}

/// Spearman with three decimals; a value that rounds to zero prints unsigned.
inline std::string format_spearman(double rho) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", std::abs(rho) < 0.0005 ? 0.0 : rho);
  return buf;
}

inline std::string input_label(Modality m) {
  switch (m) {
    case Modality::video: return "Video frames";
    case Modality::text: return "Headline";
    case Modality::multimodal: return "Multimodal";
  }
  return "?";
}

inline std::string features_label(Modality m, Pooling p) {
  if (p == Pooling::attention) return "+ attention";
  switch (m) {
    case Modality::video: return "frame mean";
    case Modality::text: return "biLSTM";
    case Modality::multimodal: return "frames + biLSTM";
  }
  return "?";
}

struct Table {
  std::string text;     // aligned plain-text table
  nlohmann::json json;  // machine-readable twin
};

/// Rows grouped by input (video, headline, multimodal), baseline before
/// attention; entries sharing a row keep their given order.
inline Table emit_table(std::vector<TableEntry> entries) {
  if (entries.empty()) throw ArgumentError("table needs at least one report");
  std::stable_sort(entries.begin(), entries.end(), [](const TableEntry& a, const TableEntry& b) {
    if (a.modality != b.modality) return a.modality < b.modality;
    return a.pooling == Pooling::baseline && b.pooling == Pooling::attention;
  });

  std::vector<std::array<std::string, 4>> rows{{"Input", "Features", "Acc [%]", "Spearman"}};
  nlohmann::json twin = nlohmann::json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const bool first_of_group = i == 0 || entries[i - 1].modality != e.modality;
    rows.push_back({first_of_group ? input_label(e.modality) : "", features_label(e.modality, e.pooling),
                    format_accuracy(e.report.accuracy), format_spearman(e.report.spearman)});
    twin.push_back({{"input", to_string(e.modality)},
                    {"pooling", to_string(e.pooling)},
                    {"features", features_label(e.modality, e.pooling)},
                    {"accuracy_percent", format_accuracy(e.report.accuracy)},
                    {"spearman", format_spearman(e.report.spearman)},
                    {"report", to_json(e.report)}});
  }

  std::array<std::size_t, 4> width{};
  for (const auto& r : rows)
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream os;
  auto line = [&](const std::array<std::string, 4>& r) {
    os << '|';
    for (std::size_t c = 0; c < 4; ++c) {
      const auto pad = std::string(width[c] - r[c].size(), ' ');
      os << ' ' << (c < 2 ? r[c] + pad : pad + r[c]) << " |";
    }
    os << '\n';
  };
  line(rows[0]);
  os << '|';
  for (std::size_t c = 0; c < 4; ++c) os << std::string(width[c] + 2, '-') << '|';
  os << '\n';
  for (std::size_t r = 1; r < rows.size(); ++r) line(rows[r]);
  return {os.str(), nlohmann::json{{"rows", twin}}};
}

// ---------------------------------------------------------------------------
// Visualization export

/// Plain graymap; each value in [0, 1] becomes round(255 * value).
inline std::string to_pgm(const Tensor& intensities) {
  if (intensities.rank() != 2) throw ShapeError("graymap needs a rank-2 tensor");
  std::ostringstream os;
  os << "P2\n" << intensities.dim(1) << ' ' << intensities.dim(0) << "\n255\n";
  for (std::size_t r = 0; r < intensities.dim(0); ++r) {
    for (std::size_t c = 0; c < intensities.dim(1); ++c) {
      const double v = std::clamp(intensities.at(r, c), 0.0, 1.0);
      os << (c ? " " : "") << std::lround(255.0 * v);
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json visualization_to_json(const VisualizationResult& viz, const std::string& id) {
  nlohmann::json doc{{"id", id}, {"logit", viz.output.logit}, {"probability", viz.output.probability}};
  if (viz.frames) {
    doc["alpha"] = tensor_to_json(viz.frames->alpha);
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t i = 0; i < viz.frames->heatmaps.size(); ++i) {
      const auto& h = viz.frames->heatmaps[i];
      const auto shown = h.displayed();
      nlohmann::json grid = nlohmann::json::array();
      for (std::size_t r = 0; r < shown.dim(0); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < shown.dim(1); ++c) row.push_back(shown.at(r, c));
        grid.push_back(row);
      }
      frames.push_back({{"frame", i}, {"scale", h.scale}, {"intensities", grid}});
    }
    doc["frames"] = frames;
  }
  if (viz.text) {
    nlohmann::json words = nlohmann::json::array();
    for (std::size_t t = 0; t < viz.text->tokens.size(); ++t) {
      words.push_back({{"token", viz.text->tokens[t]}, {"beta", viz.text->beta[t]}, {"relative", viz.text->relative[t]}});
    }
    doc["text"] = words;
  }
  return doc;
}

/// Writes `<id>.json` and, with `graymaps`, `<id>_frame<i>.pgm` per frame.
/// Existing files are overwritten. Returns the written paths.
inline std::vector<std::filesystem::path> render_visualization(const VisualizationResult& viz, const std::string& id,
                                                               const nlohmann::json& run_config,
                                                               const std::filesystem::path& out_dir, bool graymaps) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  auto doc = visualization_to_json(viz, id);
  doc["command"] = "visualize";
  doc["config"] = run_config;
  std::vector<std::filesystem::path> written{out_dir / (id + ".json")};
  binio::write_file(written.back(), doc.dump(2) + "\n");
  if (graymaps && viz.frames) {
    for (std::size_t i = 0; i < viz.frames->heatmaps.size(); ++i) {
      written.push_back(out_dir / (id + "_frame" + std::to_string(i) + ".pgm"));
      binio::write_file(written.back(), to_pgm(viz.frames->heatmaps[i].displayed()));
    }
  }
  return written;
}

}  // namespace attnpop
