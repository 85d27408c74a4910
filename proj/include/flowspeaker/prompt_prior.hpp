#pragma once

// Prompt encoder: token embeddings -> FFT (self-attention) blocks -> GRU ->
// style-token attention -> linear head emitting the mean and log-variance of
// a diagonal Gaussian over semantic space.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowspeaker/nn.hpp"
#include "flowspeaker/numerics.hpp"
#include "json.hpp"

namespace flowspeaker {

// ---------------------------------------------------------------------------
// Tokens.

/// Lowercased maximal runs of letters, digits, hyphens and non-ASCII bytes.
/// Everything else separates tokens, so "boy's" becomes {"boy", "s"}.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word = std::isalnum(c) || c == '-' || c >= 0x80;
    if (word) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    std::sort(words_.begin(), words_.end());
    words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
  }

  static Vocab from_texts(const std::vector<std::string>& texts) {
    std::vector<std::string> words;
    for (const std::string& t : texts) {
      for (std::string& w : tokenize(t)) words.push_back(std::move(w));
    }
    return Vocab(std::move(words));
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::optional<std::size_t> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Token ids for `text`; throws UnknownTokens listing every miss.
  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> ids;
    std::string unknown;
    for (const std::string& w : tokenize(text)) {
      if (auto id = find(w)) {
        ids.push_back(*id);
      } else {
        if (!unknown.empty()) unknown += ", ";
        unknown += w;
      }
    }
    if (!unknown.empty()) throw UnknownTokens(unknown);
    if (ids.empty()) throw InvalidArgument("prompt has no tokens");
    return ids;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.words_ == b.words_;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

enum class TokenSource { internal_table, external_file };

/// A tokenized prompt. Internal prompts carry ids and read their embeddings
/// from the encoder's token table; external prompts carry embeddings only.
struct PromptTokens {
  std::vector<std::size_t> token_ids;
  std::vector<Vec> embeddings;
  TokenSource source = TokenSource::internal_table;

  static PromptTokens internal(std::vector<std::size_t> ids) {
    if (ids.empty()) throw InvalidArgument("PromptTokens: empty prompt");
    return PromptTokens{std::move(ids), {}, TokenSource::internal_table};
  }

  static PromptTokens external(std::vector<Vec> embeddings) {
    if (embeddings.empty()) throw InvalidArgument("PromptTokens: empty prompt");
    for (const Vec& e : embeddings) {
      require_same_dim(e.size(), embeddings.front().size(),
                       "PromptTokens: embedding");
    }
    return PromptTokens{{}, std::move(embeddings), TokenSource::external_file};
  }

  std::size_t length() const {
    return source == TokenSource::internal_table ? token_ids.size()
                                                 : embeddings.size();
  }
};

// ---------------------------------------------------------------------------
// External embedding records (JSON-lines):
//   {"prompt_id": str, "text": str, "dim": int, "token_embeddings": [[...]]}

struct ExternalPrompt {
  std::string prompt_id;
  std::string text;
  std::size_t dim = 0;
  std::vector<Vec> token_embeddings;

  PromptTokens tokens() const { return PromptTokens::external(token_embeddings); }
};

inline ExternalPrompt parse_external_prompt(const nlohmann::json& j,
                                            std::size_t line_no) {
  auto fail = [&](const std::string& why) {
    throw InvalidArgument("external embeddings line " + std::to_string(line_no) +
                          ": " + why);
  };
  if (!j.is_object()) fail("record is not an object");
  for (const char* key : {"prompt_id", "text", "dim", "token_embeddings"}) {
    if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
  }
  ExternalPrompt p;
  if (!j["prompt_id"].is_string() || !j["text"].is_string()) {
    fail("prompt_id/text must be strings");
  }
  if (!j["dim"].is_number_integer() || j["dim"].get<long long>() <= 0) {
    fail("dim must be a positive integer");
  }
  p.prompt_id = j["prompt_id"].get<std::string>();
  p.text = j["text"].get<std::string>();
  p.dim = j["dim"].get<std::size_t>();
  const auto& embs = j["token_embeddings"];
  if (!embs.is_array() || embs.empty()) fail("token_embeddings must be a nonempty array");
  for (std::size_t t = 0; t < embs.size(); ++t) {
    const auto& row = embs[t];
    if (!row.is_array() || row.size() != p.dim) {
      fail("token " + std::to_string(t) + " does not have dim " +
           std::to_string(p.dim));
    }
    Vec v;
    v.reserve(p.dim);
    for (const auto& x : row) {
      if (!x.is_number()) fail("token " + std::to_string(t) + " has a non-numeric entry");
      v.push_back(x.get<double>());
    }
    if (!all_finite(v)) fail("token " + std::to_string(t) + " has a non-finite entry");
    p.token_embeddings.push_back(std::move(v));
  }
  return p;
}

inline std::vector<ExternalPrompt> load_external_embeddings(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::vector<ExternalPrompt> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("external embeddings line " +
                            std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(parse_external_prompt(j, line_no));
    if (out.back().dim != out.front().dim) {
      throw DimensionMismatch("external embeddings line " +
                              std::to_string(line_no) + ": dim " +
                              std::to_string(out.back().dim) + " differs from " +
                              std::to_string(out.front().dim));
    }
  }
  if (out.empty()) throw InvalidArgument(path + ": no records");
  return out;
}

// ---------------------------------------------------------------------------
// Encoder configuration and parameters.

struct PromptEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 256;
  std::size_t hidden = 256;
  std::size_t filter = 1024;
  std::size_t heads = 2;
  std::size_t fft_blocks = 2;
  std::size_t gru_hidden = 256;
  std::size_t style_tokens = 10;
  std::size_t token_dim = 256;
  std::size_t attn_dim = 256;
  std::size_t out_dim = 256;

  friend bool operator==(const PromptEncoderConfig&,
                         const PromptEncoderConfig&) = default;
};

inline constexpr double kLogvarMin = -5.0;
inline constexpr double kLogvarMax = 2.0;

/// FastSpeech-style feed-forward transformer block (pre-norm residual):
///   y   = x + Wo * MHA(LN1(x))
///   out = y + W2 * relu(W1 * LN2(y))
struct FftBlock {
  std::size_t heads = 2;
  LayerNorm ln1;
  Linear q, k, v, o;
  LayerNorm ln2;
  Linear ff1, ff2;

  /// Output projections start at zero, so a fresh block is the identity.
  static FftBlock make(std::size_t hidden, std::size_t filter,
                       std::size_t heads, RngStream& rng) {
    if (heads == 0 || hidden % heads != 0) {
      throw InvalidArgument("FFT block: hidden must be divisible by heads");
    }
    FftBlock b;
    b.heads = heads;
    b.ln1 = LayerNorm(hidden);
    b.q = Linear::random(hidden, hidden, rng);
    b.k = Linear::random(hidden, hidden, rng);
    b.v = Linear::random(hidden, hidden, rng);
    b.o = Linear(hidden, hidden);
    b.ln2 = LayerNorm(hidden);
    b.ff1 = Linear::random(filter, hidden, rng);
    b.ff2 = Linear(hidden, filter);
    return b;
  }

  std::size_t hidden() const { return q.out_dim(); }

  struct Cache {
    std::vector<Vec> x, a, qs, ks, vs, ctx, y, b, pre, f;
    std::vector<LayerNorm::Cache> ln1, ln2;
    std::vector<Mat> probs;  // per head, T x T
  };

  std::vector<Vec> operator()(const std::vector<Vec>& seq,
                              Cache* cache = nullptr) const {
    if (seq.empty()) throw InvalidArgument("FFT block: empty sequence");
    const std::size_t n = seq.size();
    const std::size_t h = hidden();
    const std::size_t dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Cache local;
    Cache& c = cache != nullptr ? *cache : local;
    c = Cache{};
    c.x = seq;
    c.ln1.resize(n);
    c.ln2.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      require_same_dim(seq[t].size(), h, "FFT block input");
      c.a.push_back(ln1(seq[t], &c.ln1[t]));
      c.qs.push_back(q(c.a[t]));
      c.ks.push_back(k(c.a[t]));
      c.vs.push_back(v(c.a[t]));
    }
    c.ctx.assign(n, Vec(h, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dh;
      Mat p(n, n);
      for (std::size_t t = 0; t < n; ++t) {
        Vec logits(n);
        for (std::size_t u = 0; u < n; ++u) {
          logits[u] = scale * dot(std::span(c.qs[t]).subspan(off, dh),
                                  std::span(c.ks[u]).subspan(off, dh));
        }
        const Vec w = softmax(logits);
        for (std::size_t u = 0; u < n; ++u) {
          p(t, u) = w[u];
          for (std::size_t i = 0; i < dh; ++i) {
            c.ctx[t][off + i] += w[u] * c.vs[u][off + i];
          }
        }
      }
      c.probs.push_back(std::move(p));
    }
    std::vector<Vec> out(n);
    for (std::size_t t = 0; t < n; ++t) {
      Vec y = o(c.ctx[t]);
      for (std::size_t i = 0; i < h; ++i) y[i] += seq[t][i];
      c.b.push_back(ln2(y, &c.ln2[t]));
      Vec pre = ff1(c.b[t]);
      Vec f = pre;
      for (double& x : f) x = std::max(x, 0.0);
      Vec r = ff2(f);
      for (std::size_t i = 0; i < h; ++i) r[i] += y[i];
      c.y.push_back(std::move(y));
      c.pre.push_back(std::move(pre));
      c.f.push_back(std::move(f));
      out[t] = std::move(r);
    }
    return out;
  }

  std::vector<Vec> backward(const Cache& c, const std::vector<Vec>& gout,
                            FftBlock& g) const {
    const std::size_t n = c.x.size();
    const std::size_t h = hidden();
    const std::size_t dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Vec> gy(n);
    for (std::size_t t = 0; t < n; ++t) {
      Vec gf = ff2.backward(c.f[t], gout[t], g.ff2);
      for (std::size_t i = 0; i < gf.size(); ++i) {
        if (c.pre[t][i] <= 0.0) gf[i] = 0.0;
      }
      const Vec gb = ff1.backward(c.b[t], gf, g.ff1);
      gy[t] = ln2.backward(c.ln2[t], gb, g.ln2);
      axpy(1.0, gout[t], gy[t]);
    }

    std::vector<Vec> gctx(n);
    for (std::size_t t = 0; t < n; ++t) gctx[t] = o.backward(c.ctx[t], gy[t], g.o);

    std::vector<Vec> gq(n, Vec(h, 0.0)), gk(n, Vec(h, 0.0)), gv(n, Vec(h, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dh;
      const Mat& p = c.probs[hd];
      for (std::size_t t = 0; t < n; ++t) {
        Vec gp(n);
        for (std::size_t u = 0; u < n; ++u) {
          double s = 0.0;
          for (std::size_t i = 0; i < dh; ++i) {
            s += gctx[t][off + i] * c.vs[u][off + i];
            gv[u][off + i] += p(t, u) * gctx[t][off + i];
          }
          gp[u] = s;
        }
        const Vec gs = softmax_backward(p.row(t), gp);
        for (std::size_t u = 0; u < n; ++u) {
          const double w = scale * gs[u];
          if (w == 0.0) continue;
          for (std::size_t i = 0; i < dh; ++i) {
            gq[t][off + i] += w * c.ks[u][off + i];
            gk[u][off + i] += w * c.qs[t][off + i];
          }
        }
      }
    }

    std::vector<Vec> gx(n);
    for (std::size_t t = 0; t < n; ++t) {
      Vec ga = q.backward(c.a[t], gq[t], g.q);
      axpy(1.0, k.backward(c.a[t], gk[t], g.k), ga);
      axpy(1.0, v.backward(c.a[t], gv[t], g.v), ga);
      gx[t] = ln1.backward(c.ln1[t], ga, g.ln1);
      axpy(1.0, gy[t], gx[t]);
    }
    return gx;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    LayerNorm::each(s.ln1, prefixed("ln1.", f));
    Linear::each(s.q, prefixed("q.", f));
    Linear::each(s.k, prefixed("k.", f));
    Linear::each(s.v, prefixed("v.", f));
    Linear::each(s.o, prefixed("o.", f));
    LayerNorm::each(s.ln2, prefixed("ln2.", f));
    Linear::each(s.ff1, prefixed("ff1.", f));
    Linear::each(s.ff2, prefixed("ff2.", f));
  }

  friend bool operator==(const FftBlock&, const FftBlock&) = default;
};

/// Gated recurrent unit (reset gate applied after the recurrent product):
///   z  = sigmoid(Wz x + Uz h + bz)
///   r  = sigmoid(Wr x + Ur h + br)
///   n  = tanh(Wn x + bn + r * (Un h + bu))
///   h' = (1 - z) * n + z * h
struct Gru {
  Linear wz, wr, wn;  // input -> hidden, carry the biases bz, br, bn
  Linear uz, ur, un;  // hidden -> hidden; only un's bias (bu) is used

  static Gru make(std::size_t in, std::size_t hidden, RngStream& rng) {
    Gru g;
    g.wz = Linear::random(hidden, in, rng);
    g.wr = Linear::random(hidden, in, rng);
    g.wn = Linear::random(hidden, in, rng);
    g.uz = Linear::random(hidden, hidden, rng);
    g.ur = Linear::random(hidden, hidden, rng);
    g.un = Linear::random(hidden, hidden, rng);
    return g;
  }

  std::size_t hidden() const { return wz.out_dim(); }

  struct Step {
    Vec x, h, z, r, n, c;
  };
  using Cache = std::vector<Step>;

  Vec cell(std::span<const double> x, std::span<const double> h,
           Step* step = nullptr) const {
    const std::size_t d = hidden();
    Vec z = wz(x);
    Vec r = wr(x);
    Vec n = wn(x);
    const Vec uzh = matvec(uz.w, h);
    const Vec urh = matvec(ur.w, h);
    Vec c = un(h);
    Vec out(d);
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = sigmoid(z[i] + uzh[i]);
      r[i] = sigmoid(r[i] + urh[i]);
      n[i] = std::tanh(n[i] + r[i] * c[i]);
      out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
    }
    if (step != nullptr) {
      *step = Step{Vec(x.begin(), x.end()), Vec(h.begin(), h.end()),
                   std::move(z), std::move(r), std::move(n), std::move(c)};
    }
    return out;
  }

  /// Final hidden state after reading the whole sequence from h = 0.
  Vec operator()(const std::vector<Vec>& seq, Cache* cache = nullptr) const {
    if (seq.empty()) throw InvalidArgument("GRU: empty sequence");
    Vec h(hidden(), 0.0);
    if (cache != nullptr) cache->assign(seq.size(), Step{});
    for (std::size_t t = 0; t < seq.size(); ++t) {
      require_same_dim(seq[t].size(), wz.in_dim(), "GRU input");
      h = cell(seq[t], h, cache != nullptr ? &(*cache)[t] : nullptr);
    }
    return h;
  }

  std::vector<Vec> backward(const Cache& cache, std::span<const double> gh_out,
                            Gru& g) const {
    const std::size_t d = hidden();
    std::vector<Vec> gx(cache.size());
    Vec gh(gh_out.begin(), gh_out.end());
    for (std::size_t t = cache.size(); t-- > 0;) {
      const Step& s = cache[t];
      Vec gpre_n(d), gpre_r(d), gpre_z(d), gc(d);
      Vec gprev(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double gn = gh[i] * (1.0 - s.z[i]);
        const double gz = gh[i] * (s.h[i] - s.n[i]);
        gprev[i] = gh[i] * s.z[i];
        gpre_n[i] = gn * (1.0 - s.n[i] * s.n[i]);
        const double gr = gpre_n[i] * s.c[i];
        gc[i] = gpre_n[i] * s.r[i];
        gpre_r[i] = gr * s.r[i] * (1.0 - s.r[i]);
        gpre_z[i] = gz * s.z[i] * (1.0 - s.z[i]);
      }
      Vec gxt = wn.backward(s.x, gpre_n, g.wn);
      axpy(1.0, wr.backward(s.x, gpre_r, g.wr), gxt);
      axpy(1.0, wz.backward(s.x, gpre_z, g.wz), gxt);
      axpy(1.0, un.backward(s.h, gc, g.un), gprev);
      add_outer(g.ur.w, gpre_r, s.h);
      axpy(1.0, matvec_t(ur.w, gpre_r), gprev);
      add_outer(g.uz.w, gpre_z, s.h);
      axpy(1.0, matvec_t(uz.w, gpre_z), gprev);
      gx[t] = std::move(gxt);
      gh = std::move(gprev);
    }
    return gx;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    Linear::each(s.wz, prefixed("wz.", f));
    Linear::each(s.wr, prefixed("wr.", f));
    Linear::each(s.wn, prefixed("wn.", f));
    f("uz.w", s.uz.w.data);
    f("ur.w", s.ur.w.data);
    Linear::each(s.un, prefixed("un.", f));
  }

  friend bool operator==(const Gru&, const Gru&) = default;
};

/// Global-style-token layer: the query attends over a bank of learned tokens
/// and returns the attention-weighted sum of the tokens themselves.
struct StyleTokens {
  Mat tokens;     // K x token_dim
  Mat query_proj; // attn_dim x query_dim
  Mat key_proj;   // attn_dim x token_dim

  static StyleTokens make(std::size_t count, std::size_t token_dim,
                          std::size_t query_dim, std::size_t attn_dim,
                          RngStream& rng) {
    StyleTokens s{Mat(count, token_dim), Mat(attn_dim, query_dim),
                  Mat(attn_dim, token_dim)};
    fill_normal(s.tokens.data, rng, 0.5);
    fill_normal(s.query_proj.data, rng,
                1.0 / std::sqrt(static_cast<double>(query_dim)));
    fill_normal(s.key_proj.data, rng,
                1.0 / std::sqrt(static_cast<double>(token_dim)));
    return s;
  }

  struct Cache {
    Vec query, qp, weights;
    std::vector<Vec> keys;
  };

  Vec operator()(std::span<const double> query, Cache* cache = nullptr) const {
    require_same_dim(query.size(), query_proj.cols, "token_attention query");
    const double scale = 1.0 / std::sqrt(static_cast<double>(query_proj.rows));
    Vec qp = matvec(query_proj, query);
    std::vector<Vec> keys(tokens.rows);
    Vec logits(tokens.rows);
    for (std::size_t j = 0; j < tokens.rows; ++j) {
      keys[j] = matvec(key_proj, tokens.row(j));
      logits[j] = scale * dot(qp, keys[j]);
    }
    Vec w = softmax(logits);
    Vec out(tokens.cols, 0.0);
    for (std::size_t j = 0; j < tokens.rows; ++j) axpy(w[j], tokens.row(j), out);
    if (cache != nullptr) {
      *cache = Cache{Vec(query.begin(), query.end()), std::move(qp),
                     std::move(w), std::move(keys)};
    }
    return out;
  }

  Vec backward(const Cache& c, std::span<const double> gout,
               StyleTokens& g) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(query_proj.rows));
    const std::size_t k = tokens.rows;
    Vec gw(k);
    for (std::size_t j = 0; j < k; ++j) {
      gw[j] = dot(gout, tokens.row(j));
      axpy(c.weights[j], gout, g.tokens.row(j));
    }
    const Vec glogit = softmax_backward(c.weights, gw);
    Vec gqp(query_proj.rows, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double s = scale * glogit[j];
      axpy(s, c.keys[j], gqp);
      Vec gkey(c.qp.size());
      for (std::size_t i = 0; i < gkey.size(); ++i) gkey[i] = s * c.qp[i];
      add_outer(g.key_proj, gkey, tokens.row(j));
      axpy(1.0, matvec_t(key_proj, gkey), g.tokens.row(j));
    }
    add_outer(g.query_proj, gqp, c.query);
    return matvec_t(query_proj, gqp);
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("tokens", s.tokens.data);
    f("query_proj", s.query_proj.data);
    f("key_proj", s.key_proj.data);
  }

  friend bool operator==(const StyleTokens&, const StyleTokens&) = default;
};

struct PromptEncoder {
  PromptEncoderConfig config;
  Mat token_table;  // vocab x embed_dim
  Linear input;     // embed_dim -> hidden
  std::vector<FftBlock> fft;
  Gru gru;
  StyleTokens style;
  Linear head;  // token_dim -> 2 * out_dim (mean, logvar)

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("token_table", s.token_table.data);
    Linear::each(s.input, prefixed("input.", f));
    for (std::size_t k = 0; k < s.fft.size(); ++k) {
      FftBlock::each(s.fft[k], prefixed("fft." + std::to_string(k) + ".", f));
    }
    Gru::each(s.gru, prefixed("gru.", f));
    StyleTokens::each(s.style, prefixed("style.", f));
    Linear::each(s.head, prefixed("head.", f));
  }

  friend bool operator==(const PromptEncoder&, const PromptEncoder&) = default;
};

inline PromptEncoder make_prompt_encoder(const PromptEncoderConfig& cfg,
                                         RngStream& rng) {
  if (cfg.embed_dim == 0 || cfg.hidden == 0 || cfg.filter == 0 ||
      cfg.gru_hidden == 0 || cfg.style_tokens == 0 || cfg.token_dim == 0 ||
      cfg.attn_dim == 0 || cfg.out_dim == 0) {
    throw InvalidArgument("prompt encoder: every dimension must be positive");
  }
  PromptEncoder e;
  e.config = cfg;
  e.token_table = Mat(cfg.vocab_size, cfg.embed_dim);
  fill_normal(e.token_table.data, rng, 1.0);
  e.input = Linear::random(cfg.hidden, cfg.embed_dim, rng);
  for (std::size_t k = 0; k < cfg.fft_blocks; ++k) {
    e.fft.push_back(FftBlock::make(cfg.hidden, cfg.filter, cfg.heads, rng));
  }
  e.gru = Gru::make(cfg.hidden, cfg.gru_hidden, rng);
  e.style = StyleTokens::make(cfg.style_tokens, cfg.token_dim, cfg.gru_hidden,
                              cfg.attn_dim, rng);
  e.head = Linear::random(2 * cfg.out_dim, cfg.token_dim, rng);
  return e;
}

/// Sinusoidal position encoding for position `pos` in a `dim`-wide model.
inline Vec position_encoding(std::size_t pos, std::size_t dim) {
  Vec pe(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                              static_cast<double>(dim));
    const double a = static_cast<double>(pos) * rate;
    pe[i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
  }
  return pe;
}

struct GaussianPrior {
  Vec mean;
  Vec logvar;

  std::size_t dim() const { return mean.size(); }

  /// Differential entropy of the diagonal Gaussian.
  double entropy() const {
    double h = 0.0;
    for (double lv : logvar) h += kHalfLog2Pi + 0.5 + 0.5 * lv;
    return h;
  }

  friend bool operator==(const GaussianPrior&, const GaussianPrior&) = default;
};

struct EncoderTrace {
  std::vector<Vec> embeddings;
  std::vector<Vec> inputs;  // projected + position encoded
  std::vector<FftBlock::Cache> fft;
  Gru::Cache gru;
  Vec gru_out;
  StyleTokens::Cache style;
  Vec style_out;
  Vec head_raw;
};

inline std::vector<Vec> token_embeddings(const PromptTokens& tokens,
                                         const PromptEncoder& enc) {
  std::vector<Vec> out;
  if (tokens.source == TokenSource::internal_table) {
    for (std::size_t id : tokens.token_ids) {
      if (id >= enc.token_table.rows) {
        throw InvalidArgument("token id " + std::to_string(id) +
                              " outside the vocabulary");
      }
      const auto r = enc.token_table.row(id);
      out.emplace_back(r.begin(), r.end());
    }
  } else {
    out = tokens.embeddings;
  }
  if (out.empty()) throw InvalidArgument("encode_prompt: empty prompt");
  for (const Vec& e : out) {
    require_same_dim(e.size(), enc.config.embed_dim, "token embedding");
  }
  return out;
}

inline GaussianPrior encode_prompt(const PromptTokens& tokens,
                                   const PromptEncoder& enc,
                                   EncoderTrace* trace = nullptr) {
  EncoderTrace local;
  EncoderTrace& tr = trace != nullptr ? *trace : local;
  tr = EncoderTrace{};
  tr.embeddings = token_embeddings(tokens, enc);
  std::vector<Vec> seq;
  for (std::size_t t = 0; t < tr.embeddings.size(); ++t) {
    Vec h = enc.input(tr.embeddings[t]);
    axpy(1.0, position_encoding(t, h.size()), h);
    seq.push_back(std::move(h));
  }
  tr.inputs = seq;
  tr.fft.resize(enc.fft.size());
  for (std::size_t k = 0; k < enc.fft.size(); ++k) {
    seq = enc.fft[k](seq, &tr.fft[k]);
  }
  tr.gru_out = enc.gru(seq, &tr.gru);
  tr.style_out = enc.style(tr.gru_out, &tr.style);
  tr.head_raw = enc.head(tr.style_out);
  const std::size_t d = enc.config.out_dim;
  GaussianPrior p{Vec(tr.head_raw.begin(), tr.head_raw.begin() + d),
                  Vec(tr.head_raw.begin() + d, tr.head_raw.end())};
  for (double& lv : p.logvar) lv = std::clamp(lv, kLogvarMin, kLogvarMax);
  return p;
}

/// Backpropagates dL/dmean and dL/dlogvar through a traced encode_prompt.
/// Token-table rows receive gradient only for internal prompts.
inline void encoder_backward(const EncoderTrace& tr, const PromptTokens& tokens,
                             const PromptEncoder& enc,
                             std::span<const double> g_mean,
                             std::span<const double> g_logvar,
                             PromptEncoder& grad) {
  const std::size_t d = enc.config.out_dim;
  Vec gout(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    gout[i] = g_mean[i];
    const double raw = tr.head_raw[d + i];
    gout[d + i] = (raw > kLogvarMin && raw < kLogvarMax) ? g_logvar[i] : 0.0;
  }
  const Vec gstyle = enc.head.backward(tr.style_out, gout, grad.head);
  const Vec gq = enc.style.backward(tr.style, gstyle, grad.style);
  std::vector<Vec> gseq = enc.gru.backward(tr.gru, gq, grad.gru);
  for (std::size_t k = enc.fft.size(); k-- > 0;) {
    gseq = enc.fft[k].backward(tr.fft[k], gseq, grad.fft[k]);
  }
  for (std::size_t t = 0; t < gseq.size(); ++t) {
    const Vec ge = enc.input.backward(tr.embeddings[t], gseq[t], grad.input);
    if (tokens.source == TokenSource::internal_table) {
      axpy(1.0, ge, grad.token_table.row(tokens.token_ids[t]));
    }
  }
}

/// z = mean + temperature * exp(logvar / 2) * eps, eps ~ N(0, I).
inline Vec sample_prior(const GaussianPrior& prior, double temperature,
                        RngStream& rng) {
  if (!(temperature >= 0.0)) {
    throw InvalidArgument("sample_prior: temperature must be >= 0");
  }
  Vec z(prior.dim());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double eps = rng.normal();
    z[i] = prior.mean[i] + temperature * std::exp(0.5 * prior.logvar[i]) * eps;
  }
  return z;
}

}  // namespace flowspeaker
