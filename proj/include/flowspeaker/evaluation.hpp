#pragma once

// Speaker-distance metrics over speaker-level d-vectors, the novelty verdict
// and the nearest-centroid attribute accuracy proxy.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowspeaker/corpus.hpp"
#include "flowspeaker/numerics.hpp"
#include "json.hpp"

namespace flowspeaker {

class InvalidSpeakerSets : public Error {
 public:
  using Error::Error;
};

struct SpeakerSets {
  std::map<std::string, Vec> gt;   // ground-truth training speakers
  std::map<std::string, Vec> syn;  // synthesized training speakers (set T)
  std::vector<std::pair<std::string, Vec>> gen;  // (prompt id, generated) = G
  std::map<std::string, std::pair<Vec, Vec>> syn_same_pairs;
};

enum class Verdict { novel, memorized, inconclusive };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::novel:
      return "novel";
    case Verdict::memorized:
      return "memorized";
    default:
      return "inconclusive";
  }
}

struct MetricsReport {
  std::optional<double> syn2gt_same;
  std::optional<double> syn2gt_near;
  std::optional<double> syn2syn_same;
  std::optional<double> syn2syn_near;
  std::optional<double> gen2syn_near;
  std::optional<double> gen2gen_near;
  Verdict verdict = Verdict::inconclusive;
  bool diverse = false;
  std::map<std::string, double> attribute_accuracy;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline double nearest_distance(std::span<const double> v,
                               const std::vector<Vec>& others) {
  if (others.empty()) throw InvalidArgument("nearest_distance: empty set");
  double best = std::numeric_limits<double>::infinity();
  for (const Vec& o : others) best = std::min(best, cosine_distance(v, o));
  return best;
}

namespace detail {

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline void check_dims(const SpeakerSets& s) {
  std::size_t dim = 0;
  auto check = [&](const Vec& v, const char* metric) {
    if (dim == 0) dim = v.size();
    if (v.size() != dim || dim == 0) {
      throw InvalidSpeakerSets(std::string(metric) +
                               ": embeddings have inconsistent dimensions");
    }
  };
  for (const auto& [id, v] : s.syn) check(v, "syn2syn-near");
  for (const auto& [id, v] : s.gt) check(v, "syn2gt-same");
  for (const auto& [id, v] : s.gen) check(v, "gen2syn-near");
  for (const auto& [id, p] : s.syn_same_pairs) {
    check(p.first, "syn2syn-same");
    check(p.second, "syn2syn-same");
  }
}

}  // namespace detail

/// Computes every metric whose inputs are present. A metric whose set is too
/// small (e.g. one generation per prompt for gen2gen-near) is left empty;
/// inconsistent inputs raise InvalidSpeakerSets naming the metric.
inline MetricsReport compute_metrics(const SpeakerSets& sets) {
  detail::check_dims(sets);
  MetricsReport r;

  std::vector<std::string> ids;
  std::vector<Vec> syn;
  for (const auto& [id, v] : sets.syn) {
    ids.push_back(id);
    syn.push_back(v);
  }

  if (!sets.syn_same_pairs.empty()) {
    std::vector<double> d;
    for (const auto& [id, p] : sets.syn_same_pairs) {
      if (!sets.syn.contains(id)) {
        throw InvalidSpeakerSets("syn2syn-same: speaker '" + id +
                                 "' is not a synthesized training speaker");
      }
      d.push_back(cosine_distance(p.first, p.second));
    }
    r.syn2syn_same = detail::mean_of(d);
  }

  if (syn.size() >= 2) {
    std::vector<double> d;
    for (std::size_t i = 0; i < syn.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < syn.size(); ++j) {
        if (i != j) best = std::min(best, cosine_distance(syn[i], syn[j]));
      }
      d.push_back(best);
    }
    r.syn2syn_near = detail::mean_of(d);
  }

  if (!sets.gt.empty()) {
    if (sets.gt.size() != sets.syn.size()) {
      throw InvalidSpeakerSets("syn2gt-same: gt and syn speaker sets differ");
    }
    std::vector<double> same;
    std::vector<double> near;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = sets.gt.find(ids[i]);
      if (it == sets.gt.end()) {
        throw InvalidSpeakerSets("syn2gt-same: speaker '" + ids[i] +
                                 "' has no ground-truth vector");
      }
      same.push_back(cosine_distance(syn[i], it->second));
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [gid, g] : sets.gt) {
        if (gid != ids[i]) best = std::min(best, cosine_distance(syn[i], g));
      }
      if (sets.gt.size() >= 2) near.push_back(best);
    }
    r.syn2gt_same = detail::mean_of(same);
    if (!near.empty()) r.syn2gt_near = detail::mean_of(near);
  }

  // Sorted copy so the reductions do not depend on input order.
  auto gen = sets.gen;
  std::sort(gen.begin(), gen.end());
  if (!gen.empty() && !syn.empty()) {
    std::vector<double> d;
    for (const auto& [pid, v] : gen) d.push_back(nearest_distance(v, syn));
    r.gen2syn_near = detail::mean_of(d);
  }

  std::map<std::string, std::vector<Vec>> by_prompt;
  for (const auto& [pid, v] : gen) by_prompt[pid].push_back(v);
  std::vector<double> per_prompt;
  for (const auto& [pid, vs] : by_prompt) {
    if (vs.size() < 2) continue;
    std::vector<double> d;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < vs.size(); ++j) {
        if (i != j) best = std::min(best, cosine_distance(vs[i], vs[j]));
      }
      d.push_back(best);
    }
    per_prompt.push_back(detail::mean_of(d));
  }
  if (!per_prompt.empty()) r.gen2gen_near = detail::mean_of(per_prompt);

  return r;
}

inline constexpr double kVerdictTie = 1e-9;

/// Novel when gen2syn-near sits closer to syn2syn-near than to syn2syn-same.
inline Verdict novelty_verdict(const MetricsReport& r) {
  if (!r.gen2syn_near || !r.syn2syn_near || !r.syn2syn_same) {
    return Verdict::inconclusive;
  }
  const double to_near = std::abs(*r.gen2syn_near - *r.syn2syn_near);
  const double to_same = std::abs(*r.gen2syn_near - *r.syn2syn_same);
  if (std::abs(to_near - to_same) <= kVerdictTie) return Verdict::inconclusive;
  return to_near < to_same ? Verdict::novel : Verdict::memorized;
}

/// Generated timbres count as diverse when gen2gen-near > syn2syn-same.
inline bool diversity_check(const MetricsReport& r) {
  return r.gen2gen_near && r.syn2syn_same && *r.gen2gen_near > *r.syn2syn_same;
}

using Centroids = std::map<std::string, std::map<std::string, Vec>>;

/// Per attribute, the fraction of generated vectors whose nearest centroid
/// (cosine distance) carries the prompt's value. Attributes the prompts do
/// not mention are skipped.
inline std::map<std::string, double> attribute_accuracy(
    const std::vector<std::pair<Attributes, Vec>>& gen,
    const Centroids& centroids) {
  std::map<std::string, double> out;
  for (const auto& [attr, by_value] : centroids) {
    std::size_t total = 0;
    std::size_t hit = 0;
    for (const auto& [a, v] : gen) {
      const auto want = a.get(attr);
      if (!want) continue;
      if (!by_value.contains(*want)) {
        throw InvalidArgument("attribute_accuracy: no centroid for " + attr +
                              "=" + *want);
      }
      std::string best;
      double best_d = std::numeric_limits<double>::infinity();
      for (const auto& [value, c] : by_value) {
        const double d = cosine_distance(v, c);
        if (d < best_d) {
          best_d = d;
          best = value;
        }
      }
      ++total;
      if (best == *want) ++hit;
    }
    if (total > 0) {
      out[attr] = static_cast<double>(hit) / static_cast<double>(total);
    }
  }
  return out;
}

/// Mean speaker d-vector per value of each categorical attribute.
inline Centroids attribute_centroids(
    const Corpus& corpus,
    const std::vector<std::string>& names = {"gender", "age"}) {
  Centroids out;
  for (const std::string& name : names) {
    std::map<std::string, std::vector<Vec>> groups;
    for (const SpeakerRecord& s : corpus.speakers) {
      if (auto v = s.attributes.get(name)) {
        groups[*v].push_back(speaker_dvector(s.utterances));
      }
    }
    for (const auto& [value, vs] : groups) out[name][value] = speaker_dvector(vs);
  }
  return out;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["syn2gt-same"] = opt(r.syn2gt_same);
  j["syn2gt-near"] = opt(r.syn2gt_near);
  j["syn2syn-same"] = opt(r.syn2syn_same);
  j["syn2syn-near"] = opt(r.syn2syn_near);
  j["gen2syn-near"] = opt(r.gen2syn_near);
  j["gen2gen-near"] = opt(r.gen2gen_near);
  j["verdict"] = to_string(r.verdict);
  j["diverse"] = r.diverse;
  j["attribute_accuracy"] = r.attribute_accuracy;
  return j;
}

}  // namespace flowspeaker
