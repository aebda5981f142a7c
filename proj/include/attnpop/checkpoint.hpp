#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "attnpop/model.hpp"

namespace attnpop {

inline constexpr const char* kCheckpointFormat = "attnpop-ckpt-1";

/// Shortest form is not used: every real is written with 17 significant
/// digits, which is enough for an exact binary64 round trip.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"modality", to_string(c.modality)},
                        {"pooling", to_string(c.pooling)},
                        {"feature_dim", c.feature_dim},
                        {"word_dim", c.word_dim},
                        {"embed_dim", c.embed_dim},
                        {"video_attention_hidden", c.video_attention_hidden},
                        {"text_attention_hidden", c.text_attention_hidden},
                        {"lstm_hidden", c.lstm_hidden},
                        {"fusion_dim", c.fusion_dim},
                        {"frame_dropout", c.frame_dropout},
                        {"text_dropout", c.text_dropout},
                        {"fusion_dropout", c.fusion_dropout},
                        {"seed", c.seed}};
}

/// Reads any subset of config fields over `base`.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (!j.is_object()) throw ParseError("model config must be an object");
  try {
    if (j.contains("modality")) base.modality = modality_from_string(j.at("modality").get<std::string>());
    if (j.contains("pooling")) base.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    auto dim = [&](const char* key, std::size_t& field) {
      if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    auto real = [&](const char* key, double& field) {
      if (j.contains(key)) field = j.at(key).get<double>();
    };
    dim("feature_dim", base.feature_dim);
    dim("word_dim", base.word_dim);
    dim("embed_dim", base.embed_dim);
    dim("video_attention_hidden", base.video_attention_hidden);
    dim("text_attention_hidden", base.text_attention_hidden);
    dim("lstm_hidden", base.lstm_hidden);
    dim("fusion_dim", base.fusion_dim);
    real("frame_dropout", base.frame_dropout);
    real("text_dropout", base.text_dropout);
    real("fusion_dropout", base.fusion_dropout);
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid model config: ") + e.what());
  }
  return base;
}

inline std::string checkpoint_to_string(const PopularityModel& model) {
  std::ostringstream os;
  os << "{\n";
  os << "  \"format_version\": \"" << kCheckpointFormat << "\",\n";
  os << "  \"modality\": \"" << to_string(model.modality()) << "\",\n";
  os << "  \"config\": " << config_to_json(model.config()).dump() << ",\n";
  os << "  \"parameters\": [";
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = *params[k];
    os << (k == 0 ? "\n" : ",\n");
    os << "    {\"name\": " << nlohmann::json(p.name).dump() << ", \"shape\": " << nlohmann::json(p.value.shape()).dump()
       << ", \"trainable\": " << (p.trainable ? "true" : "false") << ", \"values\": [";
    const auto vals = p.value.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i > 0) os << ", ";
      os << format_real(vals[i]);
    }
    os << "]}";
  }
  os << "\n  ]\n}\n";
  return os.str();
}

/// Writes to a sibling temporary file and renames it into place.
inline void checkpoint_save(const PopularityModel& model, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << checkpoint_to_string(model);
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline PopularityModel checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint parse error at byte " + std::to_string(e.byte) + ": " + e.what(), 0, e.byte);
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc["format_version"].is_string()) {
    throw ParseError("checkpoint has no format_version field");
  }
  const auto version = doc["format_version"].get<std::string>();
  if (version != kCheckpointFormat) {
    throw UnsupportedVersionError("unsupported checkpoint version '" + version + "' (expected " + kCheckpointFormat +
                                  ")");
  }
  if (!doc.contains("config") || !doc.contains("parameters") || !doc.contains("modality")) {
    throw ParseError("checkpoint is missing config, modality or parameters");
  }
  const auto cfg = config_from_json(doc["config"]);
  if (doc["modality"] != to_string(cfg.modality)) throw ParseError("checkpoint modality disagrees with its config");

  auto model = PopularityModel::create(cfg);
  std::set<std::string> seen;
  try {
    for (const auto& entry : doc.at("parameters")) {
      const auto name = entry.at("name").get<std::string>();
      auto* p = model.find_parameter(name);
      if (p == nullptr) throw ParseError("checkpoint has unknown parameter '" + name + "'");
      if (!seen.insert(name).second) throw ParseError("checkpoint repeats parameter '" + name + "'");
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != p->value.shape()) {
        throw ParseError("parameter '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                         shape_string(p->value.shape()));
      }
      p->value = Tensor(shape, entry.at("values").get<std::vector<double>>());
      p->trainable = entry.at("trainable").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint parameters: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("malformed checkpoint parameters: ") + e.what());
  }
  if (seen.size() != model.parameters().size()) throw ParseError("checkpoint is missing parameters");
  return model;
}

inline PopularityModel checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_string(text);
}

}  // namespace attnpop
