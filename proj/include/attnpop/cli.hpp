#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attnpop/report.hpp"

namespace attnpop::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInvalid = 1;   // bad usage, unreadable or inconsistent input
inline constexpr int kInternal = 2;  // anything that indicates a bug

/// Fully resolved settings of one run. Precedence, lowest first: built-in
/// defaults, ATTNPOP_SEED, the --config document, command-line flags.
struct RunConfig {
  std::string command;
  std::string manifest;
  std::string glove;
  std::string model_path;
  std::string video_ckpt;
  std::string text_ckpt;
  std::string record;
  std::string out;
  Modality modality = Modality::video;
  Pooling pooling = Pooling::attention;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;  // kept apart from `seed` so every run on a manifest shares one split
  Split split = Split::test;
  std::size_t frames = 0;  // expected frames per record; 0 accepts any
  HeatmapNormalization normalize = HeatmapNormalization::frame;
  bool pgm = false;
  std::size_t trials = 10;
  ModelConfig model;
  TrainConfig train;
  SearchSpace search;
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"manifest", c.manifest},
          {"glove", c.glove},
          {"model_path", c.model_path},
          {"video_ckpt", c.video_ckpt},
          {"text_ckpt", c.text_ckpt},
          {"record", c.record},
          {"out", c.out},
          {"modality", to_string(c.modality)},
          {"pooling", to_string(c.pooling)},
          {"seed", c.seed},
          {"split_seed", c.split_seed},
          {"split", to_string(c.split)},
          {"frames", c.frames},
          {"normalize", c.normalize == HeatmapNormalization::frame ? "frame" : "sequence"},
          {"pgm", c.pgm},
          {"trials", c.trials},
          {"model", config_to_json(c.model)},
          {"train", attnpop::to_json(c.train)},
          {"search", attnpop::to_json(c.search)}};
}

/// Applies the fields present in `j`. Any emitted document is accepted too: its
/// embedded "config" object is used.
inline void apply_config_json(RunConfig& c, nlohmann::json j) {
  if (j.is_object() && j.contains("config") && j.at("config").is_object()) j = j.at("config");
  if (!j.is_object()) throw ParseError("configuration must be a JSON object");
  try {
    auto str = [&](const char* key, std::string& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    str("manifest", c.manifest);
    str("glove", c.glove);
    str("model_path", c.model_path);
    str("video_ckpt", c.video_ckpt);
    str("text_ckpt", c.text_ckpt);
    str("record", c.record);
    str("out", c.out);
    if (j.contains("model")) c.model = config_from_json(j.at("model"), c.model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    if (j.contains("search")) c.search = search_space_from_json(j.at("search"), c.search);
    if (j.contains("modality")) c.modality = modality_from_string(j.at("modality").get<std::string>());
    if (j.contains("pooling")) c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("split_seed")) c.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (j.contains("split")) c.split = split_from_string(j.at("split").get<std::string>());
    if (j.contains("frames")) c.frames = j.at("frames").get<std::size_t>();
    if (j.contains("normalize")) c.normalize = normalization_from_string(j.at("normalize").get<std::string>());
    if (j.contains("pgm")) c.pgm = j.at("pgm").get<bool>();
    if (j.contains("trials")) c.trials = j.at("trials").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid configuration: ") + e.what());
  }
}

inline std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(text, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (text.empty() || used != text.size() || text[0] == '-') {
    throw UsageError(source + ": '" + text + "' is not a nonnegative integer seed");
  }
  return v;
}

struct Flags {
  std::optional<std::string> manifest, glove, model, config, out, record, video_ckpt, text_ckpt;
  std::optional<std::string> modality, pooling, split, normalize;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials, frames;
  bool pgm = false;
  std::vector<std::string> reports;
};

inline RunConfig resolve(const std::string& command, const Flags& f) {
  RunConfig c;
  c.command = command;
  if (const char* env = std::getenv("ATTNPOP_SEED"); env != nullptr && *env != '\0') {
    c.seed = parse_seed(env, "ATTNPOP_SEED");
  }
  if (f.config) {
    const auto text = binio::read_file(*f.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(*f.config + ": " + e.what(), 0, e.byte);
    }
    apply_config_json(c, j);
  }
  c.command = command;
  if (f.manifest) c.manifest = *f.manifest;
  if (f.glove) c.glove = *f.glove;
  if (f.model) c.model_path = *f.model;
  if (f.out) c.out = *f.out;
  if (f.record) c.record = *f.record;
  if (f.video_ckpt) c.video_ckpt = *f.video_ckpt;
  if (f.text_ckpt) c.text_ckpt = *f.text_ckpt;
  if (f.modality) c.modality = modality_from_string(*f.modality);
  if (f.pooling) c.pooling = pooling_from_string(*f.pooling);
  if (f.split) c.split = split_from_string(*f.split);
  if (f.normalize) c.normalize = normalization_from_string(*f.normalize);
  if (f.seed) c.seed = *f.seed;
  if (f.trials) c.trials = *f.trials;
  if (f.frames) c.frames = *f.frames;
  if (f.pgm) c.pgm = true;
  c.model.modality = c.modality;
  c.model.pooling = c.pooling;
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

// ---------------------------------------------------------------------------
// Data loading

struct Inputs {
  Dataset dataset;
  std::optional<GloveVocabulary> vocab;
  std::vector<ManifestRecord> records;
};

inline void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(command + " requires " + flag);
}

inline Inputs load_inputs(const RunConfig& c, bool frames, bool text, bool activations = false) {
  require(c.manifest, "--manifest", c.command);
  if (text) require(c.glove, "--glove", c.command);
  Inputs in;
  in.records = load_manifest(c.manifest);
  if (!c.glove.empty()) in.vocab = load_glove(c.glove);
  DatasetOptions opts;
  opts.load_frames = frames;
  opts.load_activations = activations;
  opts.expected_frames = c.frames;
  opts.split_seed = c.split_seed;
  const auto base = std::filesystem::path(c.manifest).parent_path();
  in.dataset = build_dataset(in.records, base, text && in.vocab ? &*in.vocab : nullptr, opts);
  return in;
}

/// Input dimensions come from the data, not the configuration.
inline void fit_dimensions(ModelConfig& m, const Inputs& in) {
  if (!in.dataset.examples.empty() && !in.dataset.examples.front().frames.empty()) {
    m.feature_dim = in.dataset.examples.front().frames.front().size();
  }
  if (in.vocab) m.word_dim = in.vocab->dim();
}

inline PopularityModel load_model(RunConfig& c) {
  require(c.model_path, "--model", c.command);
  auto model = checkpoint_load(c.model_path);
  c.model = model.config();
  c.modality = model.modality();
  c.pooling = model.config().pooling;
  return model;
}

inline void print(std::ostream& out, const nlohmann::json& doc) { out << doc.dump(2) << '\n'; }

inline nlohmann::json document(const RunConfig& c) { return {{"command", c.command}, {"config", to_json(c)}}; }

// ---------------------------------------------------------------------------
// Subcommands

inline int run_prepare(RunConfig& c, std::ostream& out) {
  const auto in = load_inputs(c, true, !c.glove.empty(), true);
  const auto& ex = in.dataset.examples;
  std::size_t min_frames = SIZE_MAX, max_frames = 0, with_maps = 0, popular = 0;
  std::size_t tokens = 0, known = 0;
  std::optional<std::size_t> dim;
  for (const auto& e : ex) {
    min_frames = std::min(min_frames, e.frames.size());
    max_frames = std::max(max_frames, e.frames.size());
    with_maps += e.activations.has_value();
    popular += e.label == 1;
    if (!dim) dim = e.frames.front().size();
    if (e.frames.front().size() != *dim) {
      throw ValidationError("record '" + e.id + "': feature dimension " + std::to_string(e.frames.front().size()) +
                            " differs from " + std::to_string(*dim));
    }
    if (in.vocab) {
      for (const auto& t : tokenize_headline(e.headline)) {
        ++tokens;
        known += in.vocab->lookup(t) != nullptr;
      }
    }
  }
  auto doc = document(c);
  doc["records"] = ex.size();
  doc["frames_per_record"] = {{"min", ex.empty() ? 0 : min_frames}, {"max", max_frames}};
  doc["feature_dim"] = dim.value_or(0);
  doc["records_with_activation_maps"] = with_maps;
  doc["labels"] = {{"popular", popular}, {"unpopular", ex.size() - popular}};
  doc["splits"] = {{"train", in.dataset.indices(Split::train).size()},
                   {"val", in.dataset.indices(Split::val).size()},
                   {"test", in.dataset.indices(Split::test).size()}};
  if (in.vocab) {
    doc["glove"] = {{"dim", in.vocab->dim()},
                    {"vocabulary", in.vocab->size()},
                    {"tokens", tokens},
                    {"known_tokens", known}};
  }
  print(out, doc);
  return kOk;
}

inline int run_train(RunConfig& c, std::ostream& out, std::ostream& err) {
  require(c.out, "--out", c.command);
  const auto in = load_inputs(c, uses_video(c.modality), uses_text(c.modality));
  fit_dimensions(c.model, in);
  auto progress = [&](const char* stage) {
    return [&err, stage](const EpochRecord& r) {
      err << stage << " epoch " << r.epoch << ": loss " << r.train_loss << ", val accuracy " << r.val_accuracy
          << '\n';
    };
  };

  auto doc = document(c);
  std::optional<PopularityModel> model;
  if (c.modality == Modality::multimodal && (!c.video_ckpt.empty() || !c.text_ckpt.empty())) {
    if (c.video_ckpt.empty() || c.text_ckpt.empty()) {
      throw UsageError("train --modality multimodal needs both --video-ckpt and --text-ckpt, or neither");
    }
    const auto video = checkpoint_load(c.video_ckpt);
    const auto text = checkpoint_load(c.text_ckpt);
    model = assemble_multimodal(video, text, c.model.fusion_dim, c.seed);
    c.pooling = model->config().pooling;
    c.model = model->config();
    doc = document(c);
    doc["history"] = history_to_json(train(*model, in.dataset, c.train, progress("head")));
  } else if (c.modality == Modality::multimodal) {
    auto staged = train_multimodal_staged(in.dataset, c.model, c.train);
    doc["stages"] = {{"video", history_to_json(staged.video_history)},
                     {"text", history_to_json(staged.text_history)}};
    doc["history"] = history_to_json(staged.head_history);
    model = std::move(staged.multimodal);
  } else {
    model = PopularityModel::create(c.model);
    doc["history"] = history_to_json(train(*model, in.dataset, c.train, progress(to_string(c.modality).c_str())));
  }
  checkpoint_save(*model, c.out);
  doc["validation"] = to_json(evaluate(*model, in.dataset, Split::val));
  doc["checkpoint"] = c.out;
  print(out, doc);
  return kOk;
}

inline int run_evaluate(RunConfig& c, std::ostream& out) {
  const auto model = load_model(c);
  const auto in = load_inputs(c, uses_video(c.modality), uses_text(c.modality));
  auto doc = document(c);
  doc["modality"] = to_string(c.modality);
  doc["pooling"] = to_string(c.pooling);
  doc["split"] = to_string(c.split);
  doc["report"] = to_json(evaluate(model, in.dataset, c.split));
  print(out, doc);
  return kOk;
}

inline int run_predict(RunConfig& c, std::ostream& out) {
  const auto model = load_model(c);
  const auto in = load_inputs(c, uses_video(c.modality), uses_text(c.modality));
  if (!c.record.empty() && in.dataset.find(c.record) == nullptr) {
    throw ArgumentError("no record '" + c.record + "' in " + c.manifest);
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : in.dataset.examples) {
    if (!c.record.empty() && e.id != c.record) continue;
    const auto o = predict_example(model, e);
    nlohmann::json row{{"id", e.id},
                       {"split", to_string(e.split)},
                       {"label", e.label},
                       {"normalized_viewcount", e.normalized_viewcount},
                       {"logit", o.logit},
                       {"probability", o.probability}};
    if (o.alpha) row["alpha"] = tensor_to_json(*o.alpha);
    if (o.beta) {
      row["beta"] = tensor_to_json(*o.beta);
      row["tokens"] = e.tokens;
    }
    rows.push_back(row);
  }
  auto doc = document(c);
  doc["predictions"] = rows;
  print(out, doc);
  return kOk;
}

inline int run_visualize(RunConfig& c, std::ostream& out) {
  const auto model = load_model(c);
  require(c.manifest, "--manifest", c.command);
  require(c.record, "--record", c.command);
  require(c.out, "--out", c.command);
  if (uses_text(c.modality)) require(c.glove, "--glove", c.command);
  const auto records = load_manifest(c.manifest);
  const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == c.record; });
  if (it == records.end()) throw ArgumentError("no record '" + c.record + "' in " + c.manifest);

  ModelInput input;
  std::vector<Tensor> activations;
  std::vector<std::string> tokens;
  if (uses_video(c.modality)) {
    if (!it->conv_activations_path) {
      throw ValidationError("record '" + c.record + "' has no conv_activations_path; heatmaps need activation maps");
    }
    auto store = load_feature_store(*it, std::filesystem::path(c.manifest).parent_path(), c.frames, true);
    input.frames = rows_of(store.frames);
    activations = std::move(*store.activations);
  }
  if (uses_text(c.modality)) {
    const auto vocab = load_glove(c.glove);
    auto enc = headline_to_vectors(vocab, it->headline);
    input.words = std::move(enc.vectors);
    tokens = std::move(enc.tokens);
  }
  const auto viz = visualize(model, input, activations, tokens, c.normalize);
  for (const auto& p : render_visualization(viz, c.record, to_json(c), c.out, c.pgm)) out << p.string() << '\n';
  return kOk;
}

inline int run_search(RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto in = load_inputs(c, uses_video(c.modality), uses_text(c.modality));
  fit_dimensions(c.model, in);
  const auto results = random_search(c.search, c.trials, c.seed, in.dataset, c.model, c.train);
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& r : results) ranked.push_back(attnpop::to_json(r));
  err << "best trial " << results.front().trial << ": val accuracy " << results.front().validation.accuracy << '\n';
  auto doc = document(c);
  doc["trials"] = ranked;
  print(out, doc);
  return kOk;
}

inline int run_table(RunConfig& c, const std::vector<std::string>& reports, std::ostream& out) {
  if (reports.empty()) throw UsageError("table needs one or more evaluation report files");
  std::vector<TableEntry> entries;
  for (const auto& path : reports) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(binio::read_file(path));
      entries.push_back({modality_from_string(j.at("modality").get<std::string>()),
                         pooling_from_string(j.at("pooling").get<std::string>()), eval_report_from_json(j.at("report"))});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": not an evaluation report (" + e.what() + ")");
    }
  }
  const auto table = emit_table(entries);
  out << table.text;
  if (!c.out.empty()) {
    auto doc = document(c);
    doc["reports"] = reports;
    doc["table"] = table.json;
    binio::write_file(c.out, doc.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

/// Runs one command line. Results go to `out`, diagnostics to `err`.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Attention-based video popularity prediction with Grad-CAM heatmaps", "attnpop"};
  app.require_subcommand(1);
  Flags f;

  auto manifest = [&](CLI::App* s) { s->add_option("--manifest", f.manifest, "Manifest file (JSON lines)"); };
  auto glove = [&](CLI::App* s) { s->add_option("--glove", f.glove, "Word vector file"); };
  auto model = [&](CLI::App* s) { s->add_option("--model", f.model, "Model checkpoint"); };
  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON configuration, or any document this tool emitted");
    s->add_option("--seed", f.seed, "Seed for initialization and shuffling (default: ATTNPOP_SEED, else 0)");
    s->add_option("--frames", f.frames, "Required frames per record (0 accepts any)");
  };
  auto modality = [&](CLI::App* s) {
    s->add_option("--modality", f.modality, "Input modality")->check(CLI::IsMember({"video", "text", "multimodal"}));
    s->add_option("--pooling", f.pooling, "Pooling over frames and words")
        ->check(CLI::IsMember({"attention", "baseline"}));
  };

  auto* prepare = app.add_subcommand("prepare", "Validate a manifest and its feature files");
  manifest(prepare), glove(prepare), common(prepare);

  auto* train = app.add_subcommand("train", "Train a model and write its checkpoint");
  manifest(train), glove(train), common(train), modality(train);
  train->add_option("--out", f.out, "Checkpoint to write");
  train->add_option("--video-ckpt", f.video_ckpt, "Trained video model, for multimodal head training");
  train->add_option("--text-ckpt", f.text_ckpt, "Trained text model, for multimodal head training");

  auto* evaluate = app.add_subcommand("evaluate", "Accuracy and Spearman correlation on one split");
  manifest(evaluate), glove(evaluate), model(evaluate), common(evaluate);
  evaluate->add_option("--split", f.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));

  auto* predict = app.add_subcommand("predict", "Popularity probabilities and attention weights");
  manifest(predict), glove(predict), model(predict), common(predict);
  predict->add_option("--record", f.record, "Only this record id");

  auto* viz = app.add_subcommand("visualize", "Grad-CAM heatmaps scaled by attention for one record");
  manifest(viz), glove(viz), model(viz), common(viz);
  viz->add_option("--record", f.record, "Record id");
  viz->add_option("--out", f.out, "Output directory");
  viz->add_flag("--pgm", f.pgm, "Also write one graymap per frame");
  viz->add_option("--normalize", f.normalize, "Heatmap normalization")->check(CLI::IsMember({"frame", "sequence"}));

  auto* search = app.add_subcommand("search", "Randomized hyperparameter search");
  manifest(search), glove(search), common(search), modality(search);
  search->add_option("--trials", f.trials, "Number of sampled configurations");

  auto* table = app.add_subcommand("table", "Comparison table from evaluation reports");
  table->add_option("reports", f.reports, "Documents written by evaluate");
  table->add_option("--out", f.out, "Also write the table as JSON");
  table->add_option("--config", f.config, "JSON configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "attnpop: " << e.what() << "\n\n" << app.help();
    return kInvalid;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    auto c = resolve(chosen->get_name(), f);
    if (chosen == prepare) return run_prepare(c, out);
    if (chosen == train) return run_train(c, out, err);
    if (chosen == evaluate) return run_evaluate(c, out);
    if (chosen == predict) return run_predict(c, out);
    if (chosen == viz) return run_visualize(c, out);
    if (chosen == search) return run_search(c, out, err);
    return run_table(c, f.reports, out);
  } catch (const OracleError& e) {
    err << "attnpop: internal error: " << e.what() << '\n';
    return kInternal;
  } catch (const UsageError& e) {
    err << "attnpop: " << e.what() << "\n\n" << chosen->help();
    return kInvalid;
  } catch (const Error& e) {
    err << "attnpop: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    err << "attnpop: internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace attnpop::cli
