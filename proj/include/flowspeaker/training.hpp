#pragma once

// Joint maximum-likelihood training of the prompt encoder and the flow, the
// direct-regression baseline, inference helpers and checkpoint persistence.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowspeaker/corpus.hpp"
#include "flowspeaker/flow.hpp"
#include "flowspeaker/nn.hpp"
#include "flowspeaker/prompt_prior.hpp"
#include "json.hpp"

namespace flowspeaker {

enum class TrainMode { proposed, baseline };

inline std::string to_string(TrainMode m) {
  return m == TrainMode::proposed ? "proposed" : "baseline";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "proposed") return TrainMode::proposed;
  if (s == "baseline") return TrainMode::baseline;
  throw ConfigError("mode must be \"proposed\" or \"baseline\", got \"" + s + "\"");
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 12;
  AdamConfig adam;
  double temperature = 1.0;  // default sampling temperature for generation
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::proposed;
  std::size_t log_every = 500;
  std::size_t actnorm_init_batch = 256;
  PromptEncoderConfig encoder;  // vocab_size and out_dim are set by train()
  FlowConfig flow;              // dim is set by train()

  void validate() const {
    if (steps < 1) throw ConfigError("train.steps must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(adam.learning_rate >= 0)) throw ConfigError("train.learning_rate must be >= 0");
    if (!(temperature >= 0)) throw ConfigError("train.temperature must be >= 0");
    if (actnorm_init_batch < 2) throw ConfigError("train.actnorm_init_batch must be >= 2");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Desk-scale architecture: full-size defaults shrunk to width 32.
inline TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.encoder.embed_dim = 32;
  c.encoder.hidden = 32;
  c.encoder.filter = 64;
  c.encoder.gru_hidden = 32;
  c.encoder.token_dim = 32;
  c.encoder.attn_dim = 32;
  c.flow.blocks = 12;
  c.flow.hidden = 32;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters.

struct Params {
  PromptEncoder encoder;
  std::optional<Flow> flow;

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    PromptEncoder::each(s.encoder, prefixed("encoder.", f));
    if (s.flow) Flow::each(*s.flow, prefixed("flow.", f));
  }

  friend bool operator==(const Params&, const Params&) = default;
};

struct Model {
  TrainMode mode = TrainMode::proposed;
  Vocab vocab;
  Params params;

  PromptTokens tokens(std::string_view text) const {
    return PromptTokens::internal(vocab.encode(text));
  }

  friend bool operator==(const Model&, const Model&) = default;
};

struct AdamState {
  Params m;
  Params v;
  std::size_t step = 0;

  static AdamState zeros_for(const Params& p) {
    return {zeros_like(p), zeros_like(p), 0};
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Adam step on one parameter structure with its moment buffers.
template <class P>
void adam_apply(P& params, const P& grad, P& m_state, P& v_state,
                std::size_t step, const AdamConfig& cfg) {
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto ps = param_slots(params);
  auto gs = param_slots(const_cast<P&>(grad));
  auto ms = param_slots(m_state);
  auto vs = param_slots(v_state);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    std::vector<double>& p = *ps[k];
    const std::vector<double>& g = *gs[k];
    std::vector<double>& m = *ms[k];
    std::vector<double>& v = *vs[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.learning_rate * (m[i] / c1) /
              (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

inline void adam_update(Params& params, const Params& grad, AdamState& st,
                        const AdamConfig& cfg) {
  ++st.step;
  adam_apply(params, grad, st.m, st.v, st.step, cfg);
}

// ---------------------------------------------------------------------------
// Loss.

/// Negative log-likelihood of x under the prior pushed through the flow,
/// given z = flow(x) and log|det dz/dx|.
inline double nll_loss(std::span<const double> z, const GaussianPrior& prior,
                       double logdet) {
  return -(gaussian_logpdf(z, prior.mean, prior.logvar) + logdet);
}

struct TrainExample {
  Vec target;  // utterance embedding (proposed) or speaker d-vector (baseline)
  PromptTokens tokens;
};

/// Mean loss over the batch. When `grad` is given, the gradient of the mean
/// loss is accumulated into it.
inline double batch_loss(const std::vector<TrainExample>& batch,
                         const Params& params, TrainMode mode,
                         Params* grad = nullptr) {
  if (batch.empty()) throw InvalidArgument("batch_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const TrainExample& ex : batch) {
    EncoderTrace et;
    const GaussianPrior prior = encode_prompt(ex.tokens, params.encoder, &et);
    const std::size_t d = prior.dim();
    require_same_dim(ex.target.size(), d, "batch_loss target");
    Vec g_mean(d, 0.0);
    Vec g_logvar(d, 0.0);
    if (mode == TrainMode::proposed) {
      if (!params.flow) throw InvalidArgument("proposed mode needs a flow");
      FlowTrace ft;
      const LayerResult fz =
          flow_forward(ex.target, *params.flow, grad != nullptr ? &ft : nullptr);
      total += nll_loss(fz.y, prior, fz.logdet);
      if (grad != nullptr) {
        Vec gz(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = fz.y[i] - prior.mean[i];
          const double prec = std::exp(-prior.logvar[i]);
          gz[i] = inv_b * diff * prec;
          g_mean[i] = -gz[i];
          g_logvar[i] = inv_b * (0.5 - 0.5 * diff * diff * prec);
        }
        flow_backward(ft, *params.flow, gz, -inv_b, *grad->flow);
      }
    } else {
      double se = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = prior.mean[i] - ex.target[i];
        se += diff * diff;
        g_mean[i] = inv_b * 2.0 * diff / static_cast<double>(d);
      }
      total += se / static_cast<double>(d);
    }
    if (grad != nullptr) {
      encoder_backward(et, ex.tokens, params.encoder, g_mean, g_logvar,
                       grad->encoder);
    }
  }
  return total * inv_b;
}

/// One optimizer update. Triggers actnorm init on this batch when the flow is
/// still uninitialized. Baseline mode never reads or writes the flow.
inline double train_step(const std::vector<TrainExample>& batch, Params& params,
                         AdamState& opt, const TrainConfig& cfg,
                         std::size_t step_index = 0) {
  if (cfg.mode == TrainMode::proposed && params.flow &&
      !params.flow->initialized()) {
    std::vector<Vec> xs;
    for (const TrainExample& ex : batch) xs.push_back(ex.target);
    initialize_actnorms(*params.flow, xs);
  }
  if (cfg.mode == TrainMode::baseline) {
    Params grad{zeros_like(params.encoder), std::nullopt};
    const double loss = batch_loss(batch, params, TrainMode::baseline, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(step_index, "non-finite loss at step " +
                                             std::to_string(step_index));
    }
    ++opt.step;
    adam_apply(params.encoder, grad.encoder, opt.m.encoder, opt.v.encoder,
               opt.step, cfg.adam);
    return loss;
  }
  Params grad = zeros_like(params);
  const double loss = batch_loss(batch, params, cfg.mode, &grad);
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(step_index, "non-finite loss at step " +
                                           std::to_string(step_index));
  }
  adam_update(params, grad, opt, cfg.adam);
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop.

struct Checkpoint {
  int version = 1;
  TrainConfig config;
  Model model;
  AdamState optimizer;
  std::size_t step = 0;
  std::vector<double> loss_trace;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Samples training pairs: speaker uniformly, then one of its prompts, then
/// one utterance (proposed) or its averaged d-vector (baseline).
class ExampleSampler {
 public:
  ExampleSampler(const Corpus& corpus, const Vocab& vocab, TrainMode mode)
      : corpus_(corpus), mode_(mode), by_speaker_(corpus.prompts_by_speaker()) {
    for (const PromptRecord& p : corpus.prompts) {
      tokens_.push_back(PromptTokens::internal(vocab.encode(p.text)));
    }
    for (std::size_t s = 0; s < corpus.speakers.size(); ++s) {
      if (by_speaker_[s].empty()) {
        throw CorpusError("speaker '" + corpus.speakers[s].speaker_id +
                          "' has no prompt");
      }
      dvectors_.push_back(speaker_dvector(corpus.speakers[s].utterances));
    }
  }

  TrainExample draw(RngStream& rng) const {
    const std::size_t s = rng.index(corpus_.speakers.size());
    const auto& prompts = by_speaker_[s];
    const std::size_t p = prompts[rng.index(prompts.size())];
    if (mode_ == TrainMode::baseline) return {dvectors_[s], tokens_[p]};
    const auto& utts = corpus_.speakers[s].utterances;
    return {utts[rng.index(utts.size())], tokens_[p]};
  }

  std::vector<TrainExample> batch(std::size_t n, RngStream& rng) const {
    std::vector<TrainExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng));
    return out;
  }

 private:
  const Corpus& corpus_;
  TrainMode mode_;
  std::vector<std::vector<std::size_t>> by_speaker_;
  std::vector<PromptTokens> tokens_;
  std::vector<Vec> dvectors_;
};

inline std::vector<std::string> prompt_texts(const Corpus& c) {
  std::vector<std::string> out;
  for (const PromptRecord& p : c.prompts) out.push_back(p.text);
  return out;
}

/// Builds a fresh model (untrained, flow uninitialized) for the corpus.
inline Model init_model(const Corpus& corpus, TrainConfig& cfg,
                        RngStream& rng) {
  Model m;
  m.mode = cfg.mode;
  m.vocab = Vocab::from_texts(prompt_texts(corpus));
  cfg.encoder.vocab_size = m.vocab.size();
  cfg.encoder.out_dim = corpus.dim();
  cfg.flow.dim = corpus.dim();
  m.params.encoder = make_prompt_encoder(cfg.encoder, rng);
  if (cfg.mode == TrainMode::proposed) m.params.flow = make_flow(cfg.flow, rng);
  return m;
}

using LossLogger = std::function<void(std::size_t step, double mean_loss)>;

inline Checkpoint train(const Corpus& corpus, TrainConfig cfg,
                        const LossLogger& log = {}) {
  cfg.validate();
  if (corpus.speakers.empty() || corpus.prompts.empty()) {
    throw EmptyCorpus("train: corpus is empty");
  }
  RngStream root(cfg.seed);
  RngStream init_rng = root.derive(1);
  RngStream data_rng = root.derive(2);

  Checkpoint cp;
  cp.model = init_model(corpus, cfg, init_rng);
  cp.config = cfg;
  const ExampleSampler sampler(corpus, cp.model.vocab, cfg.mode);
  if (cfg.mode == TrainMode::proposed) {
    std::vector<Vec> xs;
    for (const TrainExample& ex : sampler.batch(cfg.actnorm_init_batch, data_rng)) {
      xs.push_back(ex.target);
    }
    initialize_actnorms(*cp.model.params.flow, xs);
  }
  cp.optimizer = AdamState::zeros_for(cp.model.params);
  double window = 0.0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = sampler.batch(cfg.batch_size, data_rng);
    const double loss =
        train_step(batch, cp.model.params, cp.optimizer, cfg, step);
    cp.loss_trace.push_back(loss);
    cp.step = step;
    window += loss;
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      if (log) log(step, window / static_cast<double>(cfg.log_every));
      window = 0.0;
    }
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Inference.

/// Speaker embeddings for a prompt: prior samples pushed through the inverse
/// flow. A baseline model returns its single regressed embedding.
inline std::vector<Vec> generate_embeddings(const Model& model,
                                            const PromptTokens& tokens,
                                            std::size_t n, double temperature,
                                            RngStream& rng) {
  const GaussianPrior prior = encode_prompt(tokens, model.params.encoder);
  if (model.mode == TrainMode::baseline) return {prior.mean};
  if (!model.params.flow) throw InvalidArgument("model has no flow");
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(flow_inverse(sample_prior(prior, temperature, rng),
                               *model.params.flow));
  }
  return out;
}

/// Mean NLL of (embedding, prompt) pairs under a proposed model.
inline double mean_nll(const Model& model,
                       const std::vector<TrainExample>& examples) {
  return batch_loss(examples, model.params, TrainMode::proposed);
}

// ---------------------------------------------------------------------------
// Config <-> JSON. Readers reject unknown keys.

class JsonSection {
 public:
  JsonSection(const nlohmann::json& j, std::string name)
      : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!j_.contains(key)) {
      throw ConfigError("missing required field " + name_ + "." + key);
    }
    read(key, out);
  }

  JsonSection sub(const std::string& key) {
    seen_.insert(key);
    return JsonSection(j_.at(key), name_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigError("unknown key " + name_ + "." + it.key());
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline nlohmann::ordered_json to_json(const PromptEncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
          {"hidden", c.hidden},         {"filter", c.filter},
          {"heads", c.heads},           {"fft_blocks", c.fft_blocks},
          {"gru_hidden", c.gru_hidden}, {"style_tokens", c.style_tokens},
          {"token_dim", c.token_dim},   {"attn_dim", c.attn_dim},
          {"out_dim", c.out_dim}};
}

inline void read_encoder_config(JsonSection s, PromptEncoderConfig& c) {
  s.read("vocab_size", c.vocab_size);
  s.read("embed_dim", c.embed_dim);
  s.read("hidden", c.hidden);
  s.read("filter", c.filter);
  s.read("heads", c.heads);
  s.read("fft_blocks", c.fft_blocks);
  s.read("gru_hidden", c.gru_hidden);
  s.read("style_tokens", c.style_tokens);
  s.read("token_dim", c.token_dim);
  s.read("attn_dim", c.attn_dim);
  s.read("out_dim", c.out_dim);
  s.finish();
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.adam.learning_rate;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["adam_epsilon"] = c.adam.epsilon;
  j["temperature"] = c.temperature;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  j["log_every"] = c.log_every;
  j["actnorm_init_batch"] = c.actnorm_init_batch;
  j["encoder"] = to_json(c.encoder);
  j["flow"] = {{"dim", c.flow.dim}, {"blocks", c.flow.blocks},
               {"hidden", c.flow.hidden}};
  return j;
}

/// Parses a train section; fields absent from `j` keep the values in `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j,
                                          TrainConfig base,
                                          const std::string& name = "train") {
  JsonSection s(j, name);
  s.require("seed", base.seed);
  s.read("steps", base.steps);
  s.read("batch_size", base.batch_size);
  s.read("learning_rate", base.adam.learning_rate);
  s.read("beta1", base.adam.beta1);
  s.read("beta2", base.adam.beta2);
  s.read("adam_epsilon", base.adam.epsilon);
  s.read("temperature", base.temperature);
  std::string mode = to_string(base.mode);
  s.read("mode", mode);
  base.mode = parse_mode(mode);
  s.read("log_every", base.log_every);
  s.read("actnorm_init_batch", base.actnorm_init_batch);
  if (s.has("encoder")) read_encoder_config(s.sub("encoder"), base.encoder);
  if (s.has("flow")) {
    JsonSection f = s.sub("flow");
    f.read("dim", base.flow.dim);
    f.read("blocks", base.flow.blocks);
    f.read("hidden", base.flow.hidden);
    f.finish();
  }
  s.finish();
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Checkpoint file: versioned JSON, parameters as flat name -> array maps.

inline constexpr const char* kCheckpointMagic = "flowspeaker-ckpt";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json params_to_json(const Params& p) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for_each_param(p, [&](const std::string& name, const std::vector<double>& buf) {
    j[name] = buf;
  });
  return j;
}

inline void params_from_json(const nlohmann::json& j, Params& p,
                             const std::string& what) {
  if (!j.is_object()) throw CorruptCheckpoint(what + " is not an object");
  std::size_t seen = 0;
  for_each_param(p, [&](const std::string& name, std::vector<double>& buf) {
    if (!j.contains(name)) throw CorruptCheckpoint(what + " lacks " + name);
    auto v = j.at(name).get<std::vector<double>>();
    if (v.size() != buf.size()) {
      throw CorruptCheckpoint(what + "." + name + " has " +
                              std::to_string(v.size()) + " values, expected " +
                              std::to_string(buf.size()));
    }
    buf = std::move(v);
    ++seen;
  });
  if (seen != j.size()) throw CorruptCheckpoint(what + " has unexpected entries");
}

inline std::string checkpoint_to_string(const Checkpoint& cp) {
  nlohmann::ordered_json j;
  j["magic"] = kCheckpointMagic;
  j["version"] = cp.version;
  j["mode"] = to_string(cp.model.mode);
  j["config"] = to_json(cp.config);
  j["vocab"] = cp.model.vocab.words();
  j["params"] = params_to_json(cp.model.params);
  if (cp.model.params.flow) {
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const FlowBlock& b : cp.model.params.flow->blocks) {
      blocks.push_back({{"perm", b.mix.perm},
                        {"sign_s", b.mix.sign_s},
                        {"actnorm_initialized", b.actnorm.initialized}});
    }
    j["flow_state"] = {{"blocks", blocks}};
  }
  j["optimizer"] = {{"step", cp.optimizer.step},
                    {"m", params_to_json(cp.optimizer.m)},
                    {"v", params_to_json(cp.optimizer.v)}};
  j["step"] = cp.step;
  j["loss_trace"] = cp.loss_trace;
  return j.dump() + "\n";
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("truncated or malformed checkpoint: ") +
                            e.what());
  }
  if (!j.is_object() || !j.contains("magic") || !j["magic"].is_string() ||
      j["magic"].get<std::string>() != kCheckpointMagic) {
    throw CorruptCheckpoint("bad magic string");
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    throw CorruptCheckpoint("missing version");
  }
  const int version = j["version"].get<int>();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersion("checkpoint version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  try {
    Checkpoint cp;
    cp.version = version;
    cp.config = train_config_from_json(j.at("config"), TrainConfig{}, "config");
    cp.model.mode = parse_mode(j.at("mode").get<std::string>());
    if (cp.model.mode != cp.config.mode) throw CorruptCheckpoint("mode mismatch");
    cp.model.vocab = Vocab(j.at("vocab").get<std::vector<std::string>>());
    if (cp.model.vocab.size() != cp.config.encoder.vocab_size) {
      throw CorruptCheckpoint("vocabulary size does not match config");
    }
    RngStream shape_rng(0);
    Params skeleton;
    skeleton.encoder = make_prompt_encoder(cp.config.encoder, shape_rng);
    if (cp.model.mode == TrainMode::proposed) {
      skeleton.flow = make_flow(cp.config.flow, shape_rng);
      const auto& blocks = j.at("flow_state").at("blocks");
      if (blocks.size() != skeleton.flow->blocks.size()) {
        throw CorruptCheckpoint("flow block count mismatch");
      }
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        FlowBlock& b = skeleton.flow->blocks[k];
        b.mix.perm = blocks[k].at("perm").get<std::vector<std::size_t>>();
        b.mix.sign_s = blocks[k].at("sign_s").get<Vec>();
        b.actnorm.initialized = blocks[k].at("actnorm_initialized").get<bool>();
        if (b.mix.perm.size() != b.mix.dim() || b.mix.sign_s.size() != b.mix.dim()) {
          throw CorruptCheckpoint("flow block " + std::to_string(k) +
                                  " has malformed permutation or signs");
        }
      }
    }
    cp.model.params = skeleton;
    params_from_json(j.at("params"), cp.model.params, "params");
    cp.optimizer.m = zeros_like(skeleton);
    cp.optimizer.v = zeros_like(skeleton);
    const auto& opt = j.at("optimizer");
    cp.optimizer.step = opt.at("step").get<std::size_t>();
    params_from_json(opt.at("m"), cp.optimizer.m, "optimizer.m");
    params_from_json(opt.at("v"), cp.optimizer.v, "optimizer.v");
    cp.step = j.at("step").get<std::size_t>();
    cp.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint schema: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("checkpoint config: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& cp,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(cp);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace flowspeaker
