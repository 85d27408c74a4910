#pragma once

// Synthetic speaker-embedding corpus. Each (gender, age) combination owns a
// cluster centroid; speakers scatter around their centroid, utterances
// scatter around their speaker. Three subsets mimic a richly annotated
// stylistic set (13 annotators, style tags) and two open sets with one
// templated description per speaker.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flowspeaker/numerics.hpp"
#include "json.hpp"

namespace flowspeaker {

struct Attributes {
  std::string gender;
  std::string age;
  std::vector<std::string> styles;

  /// Value of a categorical attribute ("gender" or "age").
  std::optional<std::string> get(const std::string& name) const {
    if (name == "gender" && !gender.empty()) return gender;
    if (name == "age" && !age.empty()) return age;
    return std::nullopt;
  }

  friend bool operator==(const Attributes&, const Attributes&) = default;
};

struct SpeakerRecord {
  std::string speaker_id;
  Attributes attributes;
  std::vector<Vec> utterances;
  std::optional<Vec> center;  // noiseless speaker position, when known

  friend bool operator==(const SpeakerRecord&, const SpeakerRecord&) = default;
};

struct PromptRecord {
  std::string speaker_id;
  int annotator_id = 1;
  std::string text;

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

/// Held-out description used to drive generation and evaluation.
struct TestPrompt {
  std::string prompt_id;
  std::string text;
  Attributes attributes;

  friend bool operator==(const TestPrompt&, const TestPrompt&) = default;
};

struct CorpusConfig {
  std::size_t stylistic_speakers = 6;
  std::size_t aishell_speakers = 18;
  std::size_t didi_speakers = 40;
  std::size_t utterances = 16;
  std::size_t dim = 32;
  double separation = 4.0;
  double cluster_noise = 0.5;
  double utterance_noise = 0.2;
  double style_scale = 1.0;
  std::size_t annotators = 13;
  std::size_t test_prompts = 20;
  std::vector<std::string> genders{"male", "female"};
  std::vector<std::string> ages{"young", "old"};
  std::vector<std::string> styles{"husky", "gentle", "bright", "deep"};
  std::uint64_t seed = 0;

  std::size_t total_speakers() const {
    return stylistic_speakers + aishell_speakers + didi_speakers;
  }

  void validate() const;
};

struct Corpus {
  std::vector<SpeakerRecord> speakers;
  std::vector<PromptRecord> prompts;

  std::size_t dim() const {
    return speakers.empty() ? 0 : speakers.front().utterances.front().size();
  }

  const SpeakerRecord& speaker(const std::string& id) const {
    for (const SpeakerRecord& s : speakers) {
      if (s.speaker_id == id) return s;
    }
    throw CorpusError("unknown speaker '" + id + "'");
  }

  /// Prompt indices grouped by speaker index.
  std::vector<std::vector<std::size_t>> prompts_by_speaker() const {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < speakers.size(); ++i) {
      idx[speakers[i].speaker_id] = i;
    }
    std::vector<std::vector<std::size_t>> out(speakers.size());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      auto it = idx.find(prompts[p].speaker_id);
      if (it == idx.end()) {
        throw CorpusError("prompt references unknown speaker '" +
                          prompts[p].speaker_id + "'");
      }
      out[it->second].push_back(p);
    }
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// Prompt phrasing.

namespace phrasing {

inline std::vector<std::string> nouns(const std::string& gender,
                                      const std::string& age) {
  const bool child = age == "child";
  if (gender == "male") {
    return child ? std::vector<std::string>{"boy", "lad"}
                 : std::vector<std::string>{"man", "gentleman"};
  }
  return child ? std::vector<std::string>{"girl", "lass"}
               : std::vector<std::string>{"woman", "lady"};
}

inline std::vector<std::string> adjectives(const std::string& age) {
  if (age == "child") return {"little", "small"};
  if (age == "young") return {"young", "youthful"};
  if (age == "middle-aged") return {"middle-aged", "mature"};
  return {"old", "elderly"};
}

inline std::vector<std::string> style_words(const std::string& style) {
  static const std::map<std::string, std::vector<std::string>> table{
      {"husky", {"husky", "hoarse"}},
      {"gentle", {"gentle", "soft"}},
      {"bright", {"bright", "clear"}},
      {"deep", {"deep", "low"}},
      {"breathy", {"breathy", "airy"}},
      {"croaky", {"croaky", "raspy"}}};
  auto it = table.find(style);
  if (it != table.end()) return it->second;
  return {style, style};
}

inline std::string a_or_an(const std::string& word) {
  const bool vowel = !word.empty() && std::string("aeiou").find(word[0]) != std::string::npos;
  return vowel ? "an " + word : "a " + word;
}

/// Stylistic description. `variant` selects template and synonyms; distinct
/// variants below 16 always give distinct texts.
inline std::string styled(const Attributes& a, std::size_t variant) {
  const std::string noun = nouns(a.gender, a.age)[(variant / 4) % 2];
  const std::string adj = adjectives(a.age)[(variant / 8) % 2];
  const std::string style =
      a.styles.empty() ? std::string("clear")
                       : style_words(a.styles.front())[(variant / 2) % 2];
  switch (variant % 4) {
    case 0:
      return style + " voice from " + a_or_an(adj) + " " + noun;
    case 1:
      return a_or_an(adj) + " " + noun + " with " + a_or_an(style) + " voice";
    case 2:
      return "the " + style + " voice of " + a_or_an(adj) + " " + noun;
    default:
      return adj + " " + noun + ", " + style + " timbre";
  }
}

inline std::string plain_from(const Attributes& a) {
  return "voice from " + a_or_an(adjectives(a.age)[0]) + " " + nouns(a.gender, a.age)[0];
}

inline std::string plain_possessive(const Attributes& a) {
  return a_or_an(adjectives(a.age)[0]) + " " + nouns(a.gender, a.age)[0] + "'s voice";
}

}  // namespace phrasing

inline void CorpusConfig::validate() const {
  auto fail = [](const std::string& why) { throw CorpusError("corpus config: " + why); };
  if (total_speakers() < 2) fail("need at least 2 speakers");
  if (utterances < 2) fail("need at least 2 utterances per speaker");
  if (dim == 0) fail("dim must be positive");
  if (!(separation > 0)) fail("separation must be > 0");
  if (cluster_noise < 0 || utterance_noise < 0 || style_scale < 0) {
    fail("noise and style scales must be >= 0");
  }
  if (!(cluster_noise < separation) || !(utterance_noise < separation)) {
    fail("noise must be smaller than separation");
  }
  if (annotators == 0 || annotators > 16) fail("annotators must be in 1..16");
  if (genders.empty() || ages.empty()) fail("genders and ages must be nonempty");
  for (const std::string& g : genders) {
    if (g != "male" && g != "female") fail("unsupported gender '" + g + "'");
  }
  static const std::set<std::string> known_ages{"child", "young", "middle-aged",
                                                "old"};
  for (const std::string& a : ages) {
    if (!known_ages.contains(a)) fail("unsupported age '" + a + "'");
  }
  if (stylistic_speakers > 0 && styles.empty()) {
    fail("stylistic speakers need at least one style");
  }
}

/// Unit directions: orthonormal when dim allows, otherwise normalized draws.
inline std::vector<Vec> cluster_directions(std::size_t count, std::size_t dim,
                                           RngStream& rng) {
  std::vector<Vec> dirs;
  for (std::size_t k = 0; k < count; ++k) {
    Vec v = standard_normal(rng, dim);
    if (count <= dim) {
      for (const Vec& prev : dirs) axpy(-dot(v, prev), prev, v);
    }
    const double n = norm2(v);
    for (double& x : v) x /= n;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

namespace detail {

// Offset per round so every style shows up with several combinations.
inline std::size_t speaker_style(const CorpusConfig& cfg, std::size_t i,
                                 std::size_t combos) {
  return (i + i / combos) % cfg.styles.size();
}

}  // namespace detail

inline Corpus generate_synthetic_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  RngStream root(cfg.seed);
  RngStream dir_rng = root.derive(1);
  RngStream spk_rng = root.derive(2);

  std::vector<Attributes> combos;
  for (const std::string& g : cfg.genders) {
    for (const std::string& a : cfg.ages) combos.push_back({g, a, {}});
  }
  const std::vector<Vec> dirs =
      cluster_directions(combos.size() + cfg.styles.size(), cfg.dim, dir_rng);

  Corpus c;
  auto add_speaker = [&](const std::string& id, Attributes attrs,
                         std::size_t combo, std::optional<std::size_t> style) {
    Vec center(cfg.dim);
    for (std::size_t i = 0; i < cfg.dim; ++i) {
      center[i] = cfg.separation * dirs[combo][i] +
                  cfg.cluster_noise * spk_rng.normal();
    }
    if (style) axpy(cfg.style_scale, dirs[combos.size() + *style], center);
    SpeakerRecord s{id, std::move(attrs), {}, center};
    for (std::size_t u = 0; u < cfg.utterances; ++u) {
      Vec x = center;
      for (double& v : x) v += cfg.utterance_noise * spk_rng.normal();
      s.utterances.push_back(std::move(x));
    }
    c.speakers.push_back(std::move(s));
  };
  auto speaker_id = [](const std::string& prefix, std::size_t i) {
    std::string n = std::to_string(i);
    return prefix + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
  };

  for (std::size_t i = 0; i < cfg.stylistic_speakers; ++i) {
    const std::size_t combo = i % combos.size();
    const std::size_t style = detail::speaker_style(cfg, i, combos.size());
    Attributes a = combos[combo];
    a.styles = {cfg.styles[style]};
    const std::string id = speaker_id("sty_", i);
    for (std::size_t k = 0; k < cfg.annotators; ++k) {
      c.prompts.push_back(
          {id, static_cast<int>(k + 1), phrasing::styled(a, k)});
    }
    add_speaker(id, std::move(a), combo, style);
  }
  for (std::size_t i = 0; i < cfg.aishell_speakers; ++i) {
    const std::size_t combo = i % combos.size();
    const std::string id = speaker_id("ais_", i);
    c.prompts.push_back({id, 1, phrasing::plain_from(combos[combo])});
    add_speaker(id, combos[combo], combo, std::nullopt);
  }
  for (std::size_t i = 0; i < cfg.didi_speakers; ++i) {
    const std::size_t combo = i % combos.size();
    const std::string id = speaker_id("didi_", i);
    c.prompts.push_back({id, 1, phrasing::plain_possessive(combos[combo])});
    add_speaker(id, combos[combo], combo, std::nullopt);
  }
  return c;
}

/// Test descriptions cycling over every (gender, age) combination. Texts
/// reuse the training phrasing so they stay inside the corpus vocabulary.
inline std::vector<TestPrompt> default_test_prompts(const CorpusConfig& cfg) {
  std::vector<Attributes> combos;
  for (const std::string& g : cfg.genders) {
    for (const std::string& a : cfg.ages) combos.push_back({g, a, {}});
  }
  // Only styles some training speaker carries, so every word is in vocabulary.
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < cfg.stylistic_speakers; ++i) {
    used.insert(detail::speaker_style(cfg, i, combos.size()));
  }
  const std::vector<std::size_t> styles(used.begin(), used.end());
  const bool styled = !styles.empty();
  std::vector<TestPrompt> out;
  for (std::size_t i = 0; i < cfg.test_prompts; ++i) {
    const std::size_t combo = i % combos.size();
    const std::size_t round = i / combos.size();
    Attributes a = combos[combo];
    std::string text;
    if (styled && round % 5 != 4) {
      a.styles = {cfg.styles[styles[(combo + round) % styles.size()]]};
      text = phrasing::styled(a, round % 5 + 4 * (round / 5));
    } else {
      text = phrasing::plain_from(a);
    }
    std::string id = std::to_string(i);
    out.push_back({"test_" + std::string(id.size() < 2 ? 1 : 0, '0') + id,
                   std::move(text), std::move(a)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Speaker-level d-vectors.

inline Vec speaker_dvector(const std::vector<Vec>& utterances) {
  if (utterances.empty()) throw InvalidArgument("speaker_dvector: no utterances");
  Vec mean(utterances.front().size(), 0.0);
  for (const Vec& u : utterances) {
    require_same_dim(u.size(), mean.size(), "speaker_dvector");
    axpy(1.0, u, mean);
  }
  for (double& v : mean) v /= static_cast<double>(utterances.size());
  return mean;
}

/// Random disjoint halves; the first half takes the extra element.
inline std::pair<std::vector<Vec>, std::vector<Vec>> split_same_speaker(
    const std::vector<Vec>& utterances, RngStream& rng) {
  if (utterances.size() < 2) {
    throw InvalidArgument("split_same_speaker: need at least 2 utterances");
  }
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const std::size_t first = (order.size() + 1) / 2;
  std::pair<std::vector<Vec>, std::vector<Vec>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < first ? out.first : out.second).push_back(utterances[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines I/O.

inline nlohmann::ordered_json attributes_to_json(const Attributes& a) {
  nlohmann::ordered_json j;
  j["gender"] = a.gender;
  j["age"] = a.age;
  j["style"] = a.styles;
  return j;
}

inline Attributes attributes_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw CorpusError("attributes must be an object");
  Attributes a;
  if (j.contains("gender")) a.gender = j.at("gender").get<std::string>();
  if (j.contains("age")) a.age = j.at("age").get<std::string>();
  if (j.contains("style")) a.styles = j.at("style").get<std::vector<std::string>>();
  return a;
}

inline void write_lines(const std::filesystem::path& path,
                        const std::vector<nlohmann::ordered_json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::ordered_json> rows;
  for (const SpeakerRecord& s : c.speakers) {
    nlohmann::ordered_json j;
    j["speaker_id"] = s.speaker_id;
    j["attributes"] = attributes_to_json(s.attributes);
    j["utterances"] = s.utterances;
    if (s.center) j["center"] = *s.center;
    rows.push_back(std::move(j));
  }
  write_lines(dir / "speakers.jsonl", rows);
  rows.clear();
  for (const PromptRecord& p : c.prompts) {
    nlohmann::ordered_json j;
    j["speaker_id"] = p.speaker_id;
    j["annotator_id"] = p.annotator_id;
    j["text"] = p.text;
    rows.push_back(std::move(j));
  }
  write_lines(dir / "prompts.jsonl", rows);
}

inline void write_test_prompts(const std::vector<TestPrompt>& prompts,
                               const std::filesystem::path& path) {
  std::vector<nlohmann::ordered_json> rows;
  for (const TestPrompt& p : prompts) {
    nlohmann::ordered_json j;
    j["prompt_id"] = p.prompt_id;
    j["text"] = p.text;
    j["attributes"] = attributes_to_json(p.attributes);
    rows.push_back(std::move(j));
  }
  write_lines(path, rows);
}

/// Parses every nonempty line of a JSON-lines file, tagging errors with
/// file name and line number.
template <class F>
void read_lines(const std::filesystem::path& path, F&& on_record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      on_record(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path.filename().string() + " line " +
                        std::to_string(line_no) + ": schema violation: " +
                        e.what());
    } catch (const DimensionMismatch&) {
      throw;
    } catch (const CorpusError& e) {
      throw CorpusError(path.filename().string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
    ++records;
  }
  if (records == 0) throw EmptyCorpus(path.string() + " has no records");
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  std::size_t dim = 0;
  read_lines(dir / "speakers.jsonl", [&](const nlohmann::json& j) {
    SpeakerRecord s;
    s.speaker_id = j.at("speaker_id").get<std::string>();
    s.attributes = attributes_from_json(j.at("attributes"));
    s.utterances = j.at("utterances").get<std::vector<Vec>>();
    if (j.contains("center")) s.center = j.at("center").get<Vec>();
    if (s.utterances.size() < 2) {
      throw CorpusError("speaker '" + s.speaker_id +
                        "' needs at least 2 utterances");
    }
    if (dim == 0) dim = s.utterances.front().size();
    for (const Vec& u : s.utterances) {
      if (u.size() != dim || (s.center && s.center->size() != dim)) {
        throw DimensionMismatch("speaker '" + s.speaker_id + "' has a " +
                                std::to_string(u.size()) +
                                "-dim utterance in a " + std::to_string(dim) +
                                "-dim corpus");
      }
      if (!all_finite(u)) {
        throw CorpusError("speaker '" + s.speaker_id + "' has non-finite values");
      }
    }
    c.speakers.push_back(std::move(s));
  });
  std::set<std::string> ids;
  for (const SpeakerRecord& s : c.speakers) {
    if (!ids.insert(s.speaker_id).second) {
      throw CorpusError("duplicate speaker '" + s.speaker_id + "'");
    }
  }
  read_lines(dir / "prompts.jsonl", [&](const nlohmann::json& j) {
    PromptRecord p;
    p.speaker_id = j.at("speaker_id").get<std::string>();
    p.annotator_id = j.at("annotator_id").get<int>();
    p.text = j.at("text").get<std::string>();
    if (!ids.contains(p.speaker_id)) {
      throw CorpusError("prompt references unknown speaker '" + p.speaker_id +
                        "'");
    }
    c.prompts.push_back(std::move(p));
  });
  return c;
}

inline std::vector<TestPrompt> load_test_prompts(
    const std::filesystem::path& path) {
  std::vector<TestPrompt> out;
  read_lines(path, [&](const nlohmann::json& j) {
    TestPrompt p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.text = j.at("text").get<std::string>();
    if (j.contains("attributes")) p.attributes = attributes_from_json(j.at("attributes"));
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace flowspeaker
