// Writes a seeded toy dataset (manifest, word vectors, feature files) whose
// label is a known function of the inputs.

#include <iostream>

#include <CLI11.hpp>

#include "attnpop/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic popularity dataset", "attnpop-synth"};
  std::string task = "video";
  std::string out;
  attnpop::SyntheticOptions opts;
  app.add_option("--task", task, "video, text or bimodal")->check(CLI::IsMember({"video", "text", "bimodal"}));
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--records", opts.records, "Number of records");
  app.add_option("--frames", opts.frames, "Frames per record");
  app.add_option("--feature-dim", opts.feature_dim, "Pooled feature dimension");
  app.add_option("--word-dim", opts.word_dim, "Word vector dimension");
  app.add_option("--conv-k", opts.conv_k, "Spatial size of activation maps (0 writes none)");
  app.add_option("--seed", opts.seed, "Generator seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    const auto data = attnpop::make_synthetic(attnpop::synthetic_task_from_string(task), opts);
    attnpop::write_synthetic(data, out);
    std::cout << data.records.size() << " records written to " << out << '\n';
  } catch (const attnpop::Error& e) {
    std::cerr << "attnpop-synth: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "attnpop-synth: internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
