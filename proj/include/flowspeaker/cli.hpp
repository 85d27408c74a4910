#pragma once

// Command-line pipeline: gen-corpus, train, generate, evaluate. run_cli()
// returns the process exit code so tests can drive it in-process.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowspeaker/corpus.hpp"
#include "flowspeaker/evaluation.hpp"
#include "flowspeaker/training.hpp"
#include "json.hpp"

namespace flowspeaker {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDiverged = 3,
  kExitPrompt = 4,
};

struct GenerateConfig {
  std::size_t n = 1;
  std::optional<double> temperature;  // falls back to the checkpoint's
  std::uint64_t seed = 0;
};

struct EvaluateConfig {
  std::size_t n_per_prompt = 8;
  std::optional<double> temperature;
  std::uint64_t seed = 0;
};

/// One JSON file with a section per command. Relative paths in "paths" are
/// resolved against the directory holding the config file.
struct RunConfig {
  CorpusConfig corpus;
  TrainConfig train = desk_train_config(0);
  GenerateConfig generate;
  EvaluateConfig evaluate;
  bool has_corpus = false;
  bool has_train = false;
  std::optional<std::filesystem::path> corpus_dir;
  std::optional<std::filesystem::path> prompts;
};

inline void read_corpus_config(JsonSection s, CorpusConfig& c) {
  s.require("seed", c.seed);
  s.read("stylistic_speakers", c.stylistic_speakers);
  s.read("aishell_speakers", c.aishell_speakers);
  s.read("didi_speakers", c.didi_speakers);
  s.read("utterances", c.utterances);
  s.read("dim", c.dim);
  s.read("separation", c.separation);
  s.read("cluster_noise", c.cluster_noise);
  s.read("utterance_noise", c.utterance_noise);
  s.read("style_scale", c.style_scale);
  s.read("annotators", c.annotators);
  s.read("test_prompts", c.test_prompts);
  s.read("genders", c.genders);
  s.read("ages", c.ages);
  s.read("styles", c.styles);
  s.finish();
  try {
    c.validate();
  } catch (const CorpusError& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {}) {
  RunConfig rc;
  JsonSection top(j, "config");
  if (top.has("corpus")) {
    read_corpus_config(top.sub("corpus"), rc.corpus);
    rc.has_corpus = true;
  }
  if (top.has("train")) {
    rc.train = train_config_from_json(j.at("train"), rc.train, "train");
    top.sub("train");
    rc.has_train = true;
  }
  if (top.has("generate")) {
    JsonSection g = top.sub("generate");
    g.read("n", rc.generate.n);
    double t = -1;
    g.read("temperature", t);
    if (j["generate"].contains("temperature")) rc.generate.temperature = t;
    g.read("seed", rc.generate.seed);
    g.finish();
  }
  if (top.has("evaluate")) {
    JsonSection e = top.sub("evaluate");
    e.read("n_per_prompt", rc.evaluate.n_per_prompt);
    double t = -1;
    e.read("temperature", t);
    if (j["evaluate"].contains("temperature")) rc.evaluate.temperature = t;
    e.read("seed", rc.evaluate.seed);
    e.finish();
  }
  if (top.has("paths")) {
    JsonSection p = top.sub("paths");
    std::string corpus_dir;
    std::string prompts;
    p.read("corpus_dir", corpus_dir);
    p.read("prompts", prompts);
    p.finish();
    if (!corpus_dir.empty()) rc.corpus_dir = base_dir / corpus_dir;
    if (!prompts.empty()) rc.prompts = base_dir / prompts;
  }
  top.finish();
  for (const auto& t : {rc.generate.temperature, rc.evaluate.temperature}) {
    if (t && !(*t >= 0)) throw ConfigError("temperature must be >= 0");
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " +
                      e.what());
  }
  return parse_run_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Evaluation pipeline.

struct EvaluationInputs {
  const Model& model;
  const Corpus& corpus;
  const std::vector<TestPrompt>& prompts;
  std::size_t n_per_prompt = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Generated embeddings per test prompt, each prompt on its own stream
/// derived from the seed.
inline std::vector<std::vector<Vec>> generate_for_prompts(
    const Model& model, const std::vector<TestPrompt>& prompts, std::size_t n,
    double temperature, std::uint64_t seed) {
  const RngStream gen_root = RngStream(seed).derive(2);
  std::vector<std::vector<Vec>> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    RngStream rng = gen_root.derive(i);
    out.push_back(generate_embeddings(model, model.tokens(prompts[i].text), n,
                                      temperature, rng));
  }
  return out;
}

/// syn = utterance-mean d-vectors, gt = noiseless centers when the corpus
/// carries them, same-speaker pairs from seeded disjoint halves.
inline SpeakerSets corpus_speaker_sets(const Corpus& corpus,
                                       std::uint64_t seed) {
  SpeakerSets sets;
  const RngStream split_root = RngStream(seed).derive(1);
  bool all_centers = true;
  for (const SpeakerRecord& s : corpus.speakers) all_centers &= s.center.has_value();
  for (std::size_t i = 0; i < corpus.speakers.size(); ++i) {
    const SpeakerRecord& s = corpus.speakers[i];
    sets.syn[s.speaker_id] = speaker_dvector(s.utterances);
    if (all_centers) sets.gt[s.speaker_id] = *s.center;
    RngStream rng = split_root.derive(i);
    const auto [a, b] = split_same_speaker(s.utterances, rng);
    sets.syn_same_pairs[s.speaker_id] = {speaker_dvector(a), speaker_dvector(b)};
  }
  return sets;
}

inline MetricsReport evaluate_model(const EvaluationInputs& in) {
  SpeakerSets sets = corpus_speaker_sets(in.corpus, in.seed);
  const auto gen = generate_for_prompts(in.model, in.prompts, in.n_per_prompt,
                                        in.temperature, in.seed);
  std::vector<std::pair<Attributes, Vec>> labelled;
  for (std::size_t i = 0; i < in.prompts.size(); ++i) {
    for (const Vec& v : gen[i]) {
      sets.gen.emplace_back(in.prompts[i].prompt_id, v);
      labelled.emplace_back(in.prompts[i].attributes, v);
    }
  }
  MetricsReport r = compute_metrics(sets);
  r.verdict = novelty_verdict(r);
  r.diverse = diversity_check(r);
  r.attribute_accuracy =
      attribute_accuracy(labelled, attribute_centroids(in.corpus));
  return r;
}

// ---------------------------------------------------------------------------
// Commands.

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << s;
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

inline std::string metric_text(const std::optional<double>& v) {
  return v ? fmt(*v) : std::string("null");
}

}  // namespace detail

inline int cmd_gen_corpus(const std::filesystem::path& config,
                          const std::filesystem::path& out_dir,
                          std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  if (!rc.has_corpus) throw ConfigError("missing required field config.corpus");
  const Corpus c = generate_synthetic_corpus(rc.corpus);
  write_corpus(c, out_dir);
  const auto tests = default_test_prompts(rc.corpus);
  write_test_prompts(tests, out_dir / "test_prompts.jsonl");
  out << "wrote " << c.speakers.size() << " speakers, " << c.prompts.size()
      << " prompts, " << tests.size() << " test prompts to "
      << out_dir.string() << "\n";
  return kExitOk;
}

inline int cmd_train(const std::filesystem::path& config,
                     std::optional<std::filesystem::path> corpus_dir,
                     const std::filesystem::path& out_path, std::ostream& out) {
  const RunConfig rc = load_run_config(config);
  if (!rc.has_train) throw ConfigError("missing required field config.train");
  if (!corpus_dir) corpus_dir = rc.corpus_dir;
  if (!corpus_dir) throw ConfigError("no corpus directory given");
  const Corpus c = load_corpus(*corpus_dir);
  out << "training " << to_string(rc.train.mode) << " model: "
      << c.speakers.size() << " speakers, " << rc.train.steps << " steps\n";
  const Checkpoint cp = train(c, rc.train, [&](std::size_t step, double loss) {
    out << "step " << step << " loss " << detail::fmt(loss) << "\n";
  });
  if (out_path.has_parent_path()) {
    std::filesystem::create_directories(out_path.parent_path());
  }
  save_checkpoint(cp, out_path);
  out << "saved checkpoint " << out_path.string() << "\n";
  return kExitOk;
}

inline std::string embeddings_jsonl(const std::string& prompt_id,
                                    const std::string& text,
                                    const std::vector<Vec>& embs,
                                    double temperature) {
  std::string s;
  for (std::size_t i = 0; i < embs.size(); ++i) {
    nlohmann::ordered_json j;
    if (!prompt_id.empty()) j["prompt_id"] = prompt_id;
    j["prompt"] = text;
    j["index"] = i;
    j["temperature"] = temperature;
    j["embedding"] = embs[i];
    s += j.dump() + "\n";
  }
  return s;
}

struct GenerateArgs {
  std::filesystem::path checkpoint;
  std::optional<std::string> prompt;
  std::optional<std::filesystem::path> external;
  std::optional<std::size_t> n;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> config;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out,
                        std::ostream& err) {
  GenerateConfig g;
  if (a.config) g = load_run_config(*a.config).generate;
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const std::size_t n = a.n.value_or(g.n);
  const double t = a.temperature.value_or(
      g.temperature.value_or(cp.config.temperature));
  const std::uint64_t seed = a.seed.value_or(g.seed);
  if (!(t >= 0)) throw ConfigError("temperature must be >= 0");
  if (n == 0) throw ConfigError("--n must be >= 1");
  if (a.prompt.has_value() == a.external.has_value()) {
    throw ConfigError("give exactly one of --prompt or --external");
  }
  if (cp.model.mode == TrainMode::baseline) {
    err << "warning: baseline checkpoint has no sampling; writing one "
           "deterministic embedding per prompt\n";
  }
  std::string text;
  std::size_t count = 0;
  const RngStream root(seed);
  if (a.prompt) {
    RngStream rng = root.derive(0);
    const auto embs =
        generate_embeddings(cp.model, cp.model.tokens(*a.prompt), n, t, rng);
    text = embeddings_jsonl("", *a.prompt, embs, t);
    count = embs.size();
  } else {
    const auto records = load_external_embeddings(*a.external);
    for (std::size_t i = 0; i < records.size(); ++i) {
      RngStream rng = root.derive(i);
      const auto embs = generate_embeddings(
          cp.model, PromptTokens::external(records[i].token_embeddings), n, t,
          rng);
      text += embeddings_jsonl(records[i].prompt_id, records[i].text, embs, t);
      count += embs.size();
    }
  }
  if (a.out) {
    detail::write_text(*a.out, text);
    out << "wrote " << count << " embeddings to " << a.out->string() << "\n";
  } else {
    out << text;
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> corpus_dir;
  std::optional<std::filesystem::path> prompts;
  std::optional<std::size_t> n_per_prompt;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
};

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  RunConfig rc;
  if (a.config) rc = load_run_config(*a.config);
  const auto corpus_dir = a.corpus_dir ? a.corpus_dir : rc.corpus_dir;
  if (!corpus_dir) throw ConfigError("no corpus directory given");
  const auto prompts_path = a.prompts  ? a.prompts
                            : rc.prompts ? rc.prompts
                                         : std::optional(*corpus_dir / "test_prompts.jsonl");
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const Corpus corpus = load_corpus(*corpus_dir);
  const auto prompts = load_test_prompts(*prompts_path);
  const std::size_t n = a.n_per_prompt.value_or(rc.evaluate.n_per_prompt);
  if (n == 0) throw ConfigError("--n-per-prompt must be >= 1");
  const double t = a.temperature.value_or(
      rc.evaluate.temperature.value_or(cp.config.temperature));
  if (!(t >= 0)) throw ConfigError("temperature must be >= 0");
  const MetricsReport r = evaluate_model(
      {cp.model, corpus, prompts, n, t, a.seed.value_or(rc.evaluate.seed)});
  detail::write_text(a.out, report_to_json(r).dump(2) + "\n");
  out << "verdict: " << to_string(r.verdict)
      << " (syn2syn-same=" << detail::metric_text(r.syn2syn_same)
      << ", gen2syn-near=" << detail::metric_text(r.gen2syn_near)
      << ", syn2syn-near=" << detail::metric_text(r.syn2syn_near)
      << "); diverse: " << (r.diverse ? "yes" : "no") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Prompt-conditioned speaker embedding generation"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Write a synthetic corpus");
  gen_corpus->add_option("--config", config, "Run config JSON")->required();
  gen_corpus->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string corpus_dir;
  std::string out_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config, "Run config JSON")->required();
  train_cmd->add_option("--corpus-dir", corpus_dir, "Corpus directory");
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();

  GenerateArgs ga;
  std::string checkpoint;
  std::string prompt;
  std::string external;
  std::size_t n = 0;
  double temperature = 0;
  std::uint64_t seed = 0;
  auto* gen_cmd = app.add_subcommand("generate", "Sample speaker embeddings");
  gen_cmd->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  auto* prompt_opt = gen_cmd->add_option("--prompt", prompt, "Prompt text");
  auto* external_opt = gen_cmd->add_option(
      "--external", external, "External token-embedding JSONL file");
  auto* n_opt = gen_cmd->add_option("--n", n, "Embeddings per prompt");
  auto* t_opt = gen_cmd->add_option("--temperature", temperature, "Sampling temperature");
  auto* seed_opt = gen_cmd->add_option("--seed", seed, "Sampling seed");
  auto* gout_opt = gen_cmd->add_option("--out", out_path, "Output JSONL (default stdout)");
  auto* gcfg_opt = gen_cmd->add_option("--config", config, "Run config JSON");

  EvaluateArgs ea;
  std::string prompts_path;
  std::size_t npp = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute the metrics report");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  auto* ecorpus_opt = eval_cmd->add_option("--corpus-dir", corpus_dir, "Corpus directory");
  auto* eprompts_opt = eval_cmd->add_option("--prompts", prompts_path, "Test prompt JSONL");
  auto* npp_opt = eval_cmd->add_option("--n-per-prompt", npp, "Generations per prompt");
  auto* et_opt = eval_cmd->add_option("--temperature", temperature, "Sampling temperature");
  auto* eseed_opt = eval_cmd->add_option("--seed", seed, "Sampling seed");
  eval_cmd->add_option("--out", out_path, "Report JSON path")->required();
  auto* ecfg_opt = eval_cmd->add_option("--config", config, "Run config JSON");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen_corpus->parsed()) return cmd_gen_corpus(config, out_dir, out);
    if (train_cmd->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!corpus_dir.empty()) dir = corpus_dir;
      return cmd_train(config, dir, out_path, out);
    }
    if (gen_cmd->parsed()) {
      ga.checkpoint = checkpoint;
      if (*prompt_opt) ga.prompt = prompt;
      if (*external_opt) ga.external = external;
      if (*n_opt) ga.n = n;
      if (*t_opt) ga.temperature = temperature;
      if (*seed_opt) ga.seed = seed;
      if (*gout_opt) ga.out = out_path;
      if (*gcfg_opt) ga.config = config;
      return cmd_generate(ga, out, err);
    }
    ea.checkpoint = checkpoint;
    ea.out = out_path;
    if (*ecorpus_opt) ea.corpus_dir = corpus_dir;
    if (*eprompts_opt) ea.prompts = prompts_path;
    if (*npp_opt) ea.n_per_prompt = npp;
    if (*et_opt) ea.temperature = temperature;
    if (*eseed_opt) ea.seed = seed;
    if (*ecfg_opt) ea.config = config;
    return cmd_evaluate(ea, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingDiverged& e) {
    err << "training diverged at step " << e.step() << ": " << e.what() << "\n";
    return kExitDiverged;
  } catch (const UnknownTokens& e) {
    err << "prompt error: " << e.what() << "\n";
    return kExitPrompt;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace flowspeaker
