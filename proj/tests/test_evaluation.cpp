#include <gtest/gtest.h>

#include <algorithm>

#include "flowspeaker/evaluation.hpp"

using namespace flowspeaker;

namespace {

// Brute-force reference: fills the complete pairwise distance matrix first,
// then reads every metric off it. Shares only cosine_distance with the
// library and sums in ascending id order, so results must match bit for bit.
struct Oracle {
  std::optional<double> same, near, g2s, g2g, gt_same, gt_near;
};

Oracle brute_force(const SpeakerSets& s) {
  std::vector<std::pair<std::string, Vec>> all;
  for (const auto& [id, v] : s.syn) all.emplace_back("syn:" + id, v);
  auto gen = s.gen;
  std::sort(gen.begin(), gen.end());
  for (const auto& [pid, v] : gen) all.emplace_back("gen:" + pid, v);
  for (const auto& [id, v] : s.gt) all.emplace_back("gt:" + id, v);
  const std::size_t n = all.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i][j] = cosine_distance(all[i].second, all[j].second);
  }
  const std::size_t ns = s.syn.size();
  const std::size_t ng = gen.size();
  const std::size_t nt = s.gt.size();

  Oracle o;
  auto mean = [](const std::vector<double>& xs) {
    double t = 0;
    for (double x : xs) t += x;
    return t / static_cast<double>(xs.size());
  };
  if (!s.syn_same_pairs.empty()) {
    std::vector<double> xs;
    for (const auto& [id, p] : s.syn_same_pairs) xs.push_back(cosine_distance(p.first, p.second));
    o.same = mean(xs);
  }
  if (ns >= 2) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < ns; ++i) {
      double m = 1e300;
      for (std::size_t j = 0; j < ns; ++j) {
        if (j != i) m = std::min(m, d[i][j]);
      }
      xs.push_back(m);
    }
    o.near = mean(xs);
  }
  if (ng > 0 && ns > 0) {
    std::vector<double> xs;
    for (std::size_t g = ns; g < ns + ng; ++g) {
      double m = 1e300;
      for (std::size_t j = 0; j < ns; ++j) m = std::min(m, d[g][j]);
      xs.push_back(m);
    }
    o.g2s = mean(xs);
  }
  std::vector<double> per_prompt;
  std::size_t g = ns;
  while (g < ns + ng) {
    std::size_t e = g;
    while (e < ns + ng && gen[e - ns].first == gen[g - ns].first) ++e;
    if (e - g >= 2) {
      std::vector<double> xs;
      for (std::size_t i = g; i < e; ++i) {
        double m = 1e300;
        for (std::size_t j = g; j < e; ++j) {
          if (j != i) m = std::min(m, d[i][j]);
        }
        xs.push_back(m);
      }
      per_prompt.push_back(mean(xs));
    }
    g = e;
  }
  if (!per_prompt.empty()) o.g2g = mean(per_prompt);
  if (nt > 0) {
    std::vector<double> same, near;
    for (std::size_t i = 0; i < ns; ++i) {
      same.push_back(d[i][ns + ng + i]);
      double m = 1e300;
      for (std::size_t j = 0; j < nt; ++j) {
        if (j != i) m = std::min(m, d[i][ns + ng + j]);
      }
      if (nt >= 2) near.push_back(m);
    }
    o.gt_same = mean(same);
    if (!near.empty()) o.gt_near = mean(near);
  }
  return o;
}

Vec rand_vec(RngStream& rng, std::size_t dim) { return standard_normal(rng, dim); }

SpeakerSets random_sets(RngStream& rng, std::size_t n_syn, std::size_t n_gen,
                        std::size_t dim, bool with_gt) {
  SpeakerSets s;
  for (std::size_t i = 0; i < n_syn; ++i) {
    const std::string id = "spk" + std::to_string(i);
    s.syn[id] = rand_vec(rng, dim);
    if (with_gt) s.gt[id] = rand_vec(rng, dim);
    s.syn_same_pairs[id] = {rand_vec(rng, dim), rand_vec(rng, dim)};
  }
  for (std::size_t i = 0; i < n_gen; ++i) {
    s.gen.emplace_back("p" + std::to_string(i % 2), rand_vec(rng, dim));
  }
  return s;
}

void expect_same(const MetricsReport& r, const Oracle& o) {
  EXPECT_EQ(r.syn2syn_same, o.same);
  EXPECT_EQ(r.syn2syn_near, o.near);
  EXPECT_EQ(r.gen2syn_near, o.g2s);
  EXPECT_EQ(r.gen2gen_near, o.g2g);
  EXPECT_EQ(r.syn2gt_same, o.gt_same);
  EXPECT_EQ(r.syn2gt_near, o.gt_near);
}

MetricsReport pattern(double same, double near, double gen, double g2g = 0.0) {
  MetricsReport r;
  r.syn2syn_same = same;
  r.syn2syn_near = near;
  r.gen2syn_near = gen;
  r.gen2gen_near = g2g;
  return r;
}

}  // namespace

TEST(NearestDistance, Examples) {
  EXPECT_EQ(nearest_distance(Vec{1, 0}, {{1, 0}}), 0.0);
  EXPECT_EQ(nearest_distance(Vec{1, 0}, {{0, 1}, {-1, 0}}), 1.0);
  EXPECT_THROW(nearest_distance(Vec{1, 0}, {}), InvalidArgument);
}

TEST(NearestDistance, MatchesExhaustiveScan) {
  RngStream rng(2);
  std::vector<Vec> others;
  for (int i = 0; i < 20; ++i) others.push_back(rand_vec(rng, 5));
  const Vec v = rand_vec(rng, 5);
  double best = 1e300;
  for (const Vec& o : others) best = std::min(best, cosine_distance(v, o));
  EXPECT_EQ(nearest_distance(v, others), best);
}

TEST(Metrics, ToySet) {
  SpeakerSets s;
  s.syn = {{"a", {1, 0}}, {"b", {0, 1}}};
  s.gen = {{"p", {1, 0}}};
  const MetricsReport r = compute_metrics(s);
  EXPECT_EQ(r.gen2syn_near, 0.0);
  EXPECT_EQ(r.syn2syn_near, 1.0);
  EXPECT_FALSE(r.gen2gen_near);
  EXPECT_FALSE(r.syn2gt_same);
}

TEST(Metrics, SynEqualsGtAndNoiselessHalves) {
  SpeakerSets s;
  s.syn = {{"a", {1, 2, 3}}, {"b", {-1, 0, 2}}, {"c", {0, 5, -1}}};
  s.gt = s.syn;
  for (const auto& [id, v] : s.syn) s.syn_same_pairs[id] = {v, v};
  const MetricsReport r = compute_metrics(s);
  EXPECT_NEAR(*r.syn2gt_same, 0.0, 1e-15);
  EXPECT_NEAR(*r.syn2syn_same, 0.0, 1e-15);
  EXPECT_EQ(r.syn2gt_near, r.syn2syn_near);
}

TEST(Metrics, HandComputedGen2Gen) {
  SpeakerSets s;
  s.syn = {{"a", {1, 0}}, {"b", {0, 1}}};
  // Prompt p: (1,0), (0,1), (1,1) -> nearest 1-1/sqrt2 for all three.
  // Prompt q: (1,0), (-1,0) -> 2 each.
  s.gen = {{"p", {1, 0}}, {"p", {0, 1}}, {"p", {1, 1}}, {"q", {1, 0}}, {"q", {-1, 0}}};
  const MetricsReport r = compute_metrics(s);
  const double a = 1.0 - 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(*r.gen2gen_near, (a + 2.0) / 2.0, 1e-12);
}

TEST(Metrics, EqualsBruteForceExactly) {
  RngStream rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ns = 1 + rng.index(5);
    const std::size_t ng = rng.index(6);
    const SpeakerSets s = random_sets(rng, ns, ng, 1 + rng.index(6), rng.index(2) == 1);
    expect_same(compute_metrics(s), brute_force(s));
  }
}

TEST(Metrics, PermutationInvariant) {
  RngStream rng(3);
  SpeakerSets s = random_sets(rng, 5, 6, 4, true);
  const MetricsReport base = compute_metrics(s);
  // Rename speakers so the map order changes, and reverse the generation list.
  SpeakerSets t;
  for (const auto& [id, v] : s.syn) {
    const std::string nid = "z" + std::string(1, static_cast<char>('e' - (id.back() - '0')));
    t.syn[nid] = v;
    t.gt[nid] = s.gt.at(id);
    t.syn_same_pairs[nid] = s.syn_same_pairs.at(id);
  }
  t.gen.assign(s.gen.rbegin(), s.gen.rend());
  const MetricsReport perm = compute_metrics(t);
  EXPECT_NEAR(*perm.syn2syn_near, *base.syn2syn_near, 1e-15);
  EXPECT_NEAR(*perm.syn2syn_same, *base.syn2syn_same, 1e-15);
  EXPECT_NEAR(*perm.syn2gt_same, *base.syn2gt_same, 1e-15);
  EXPECT_NEAR(*perm.syn2gt_near, *base.syn2gt_near, 1e-15);
  EXPECT_EQ(perm.gen2syn_near, base.gen2syn_near);
  EXPECT_EQ(perm.gen2gen_near, base.gen2gen_near);
}

TEST(Metrics, ScaleInvariant) {
  RngStream rng(4);
  const SpeakerSets s = random_sets(rng, 4, 6, 3, true);
  const MetricsReport base = compute_metrics(s);
  for (double k : {0.01, 3.0, 1e4}) {
    SpeakerSets t = s;
    auto scale = [k](Vec& v) {
      for (double& x : v) x *= k;
    };
    for (auto& [id, v] : t.syn) scale(v);
    for (auto& [id, v] : t.gt) scale(v);
    for (auto& [id, v] : t.gen) scale(v);
    for (auto& [id, p] : t.syn_same_pairs) {
      scale(p.first);
      scale(p.second);
    }
    const MetricsReport r = compute_metrics(t);
    EXPECT_NEAR(*r.syn2syn_same, *base.syn2syn_same, 1e-12);
    EXPECT_NEAR(*r.syn2syn_near, *base.syn2syn_near, 1e-12);
    EXPECT_NEAR(*r.gen2syn_near, *base.gen2syn_near, 1e-12);
    EXPECT_NEAR(*r.gen2gen_near, *base.gen2gen_near, 1e-12);
    EXPECT_NEAR(*r.syn2gt_same, *base.syn2gt_same, 1e-12);
    EXPECT_NEAR(*r.syn2gt_near, *base.syn2gt_near, 1e-12);
  }
}

TEST(Metrics, AllWithinZeroToTwo) {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const MetricsReport r = compute_metrics(random_sets(rng, 5, 5, 3, true));
    for (const auto& m : {r.syn2syn_same, r.syn2syn_near, r.gen2syn_near,
                          r.gen2gen_near, r.syn2gt_same, r.syn2gt_near}) {
      ASSERT_TRUE(m);
      EXPECT_GE(*m, 0.0);
      EXPECT_LE(*m, 2.0);
    }
  }
}

TEST(Metrics, OneGenerationPerPromptLeavesGen2GenEmpty) {
  SpeakerSets s;
  s.syn = {{"a", {1, 0}}, {"b", {0, 1}}};
  s.gen = {{"p", {1, 0}}, {"q", {0, 1}}};
  EXPECT_FALSE(compute_metrics(s).gen2gen_near);
}

TEST(Metrics, PreconditionErrorsNameMetric) {
  SpeakerSets s;
  s.syn = {{"a", {1, 0}}, {"b", {0, 1}}};
  s.gt = {{"a", {1, 0}}};
  try {
    compute_metrics(s);
    FAIL();
  } catch (const InvalidSpeakerSets& e) {
    EXPECT_NE(std::string(e.what()).find("syn2gt-same"), std::string::npos);
  }
  s.gt.clear();
  s.gen = {{"p", {1, 0, 0}}};
  try {
    compute_metrics(s);
    FAIL();
  } catch (const InvalidSpeakerSets& e) {
    EXPECT_NE(std::string(e.what()).find("gen2syn-near"), std::string::npos);
  }
  s.gen.clear();
  s.syn_same_pairs["ghost"] = {{1, 0}, {0, 1}};
  try {
    compute_metrics(s);
    FAIL();
  } catch (const InvalidSpeakerSets& e) {
    EXPECT_NE(std::string(e.what()).find("syn2syn-same"), std::string::npos);
  }
}

TEST(Verdict, ReferencePatternIsNovel) {
  EXPECT_EQ(novelty_verdict(pattern(0.024, 0.113, 0.085)), Verdict::novel);
}

TEST(Verdict, AdjacentToSameIsMemorized) {
  EXPECT_EQ(novelty_verdict(pattern(0.02, 0.11, 0.021)), Verdict::memorized);
}

TEST(Verdict, MidpointIsInconclusive) {
  EXPECT_EQ(novelty_verdict(pattern(0.02, 0.12, 0.07)), Verdict::inconclusive);
  EXPECT_EQ(novelty_verdict(pattern(0.02, 0.12, 0.07 + 1e-10)), Verdict::inconclusive);
  EXPECT_EQ(novelty_verdict(pattern(0.02, 0.12, 0.07 + 1e-6)), Verdict::novel);
}

TEST(Verdict, MissingMetricIsInconclusive) {
  MetricsReport r = pattern(0.02, 0.12, 0.1);
  r.syn2syn_same.reset();
  EXPECT_EQ(novelty_verdict(r), Verdict::inconclusive);
}

TEST(Diversity, Examples) {
  EXPECT_TRUE(diversity_check(pattern(0.024, 0.1, 0.1, 0.088)));
  EXPECT_FALSE(diversity_check(pattern(0.024, 0.1, 0.1, 0.01)));
  EXPECT_FALSE(diversity_check(pattern(0.024, 0.1, 0.1, 0.024)));
  MetricsReport r = pattern(0.024, 0.1, 0.1);
  r.gen2gen_near.reset();
  EXPECT_FALSE(diversity_check(r));
}

TEST(AttributeAccuracy, OwnCentroidIsPerfect) {
  const Centroids c{{"gender", {{"male", {1, 0, 0}}, {"female", {0, 1, 0}}}},
                    {"age", {{"young", {0, 0, 1}}, {"old", {1, 1, 0}}}}};
  std::vector<std::pair<Attributes, Vec>> gen{
      {{"male", "", {}}, {1, 0, 0}},
      {{"female", "", {}}, {0, 1, 0}},
      {{"", "young", {}}, {0, 0, 1}},
  };
  const auto acc = attribute_accuracy(gen, c);
  EXPECT_EQ(acc.at("gender"), 1.0);
  EXPECT_EQ(acc.at("age"), 1.0);
}

TEST(AttributeAccuracy, RandomVectorsSitAtChance) {
  RngStream rng(6);
  const Centroids c{{"gender", {{"male", standard_normal(rng, 8)},
                                {"female", standard_normal(rng, 8)}}}};
  std::vector<std::pair<Attributes, Vec>> gen;
  for (int i = 0; i < 10000; ++i) {
    gen.push_back({{i % 2 ? "male" : "female", "", {}}, standard_normal(rng, 8)});
  }
  const double acc = attribute_accuracy(gen, c).at("gender");
  EXPECT_GE(acc, 0.45);
  EXPECT_LE(acc, 0.55);
}

TEST(AttributeAccuracy, UnknownValueThrows) {
  const Centroids c{{"gender", {{"male", {1, 0}}, {"female", {0, 1}}}}};
  EXPECT_THROW(attribute_accuracy({{{"robot", "", {}}, {1, 0}}}, c), InvalidArgument);
}

TEST(AttributeAccuracy, UnmentionedAttributeSkipped) {
  const Centroids c{{"gender", {{"male", {1, 0}}, {"female", {0, 1}}}},
                    {"age", {{"young", {1, 0}}, {"old", {0, 1}}}}};
  const auto acc = attribute_accuracy({{{"male", "", {}}, {1, 0}}}, c);
  EXPECT_TRUE(acc.contains("gender"));
  EXPECT_FALSE(acc.contains("age"));
}

TEST(Report, JsonKeysAndNulls) {
  MetricsReport r = pattern(0.024, 0.113, 0.085);
  r.gen2gen_near.reset();
  r.verdict = Verdict::novel;
  const auto j = report_to_json(r);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  const std::vector<std::string> want{"syn2gt-same", "syn2gt-near", "syn2syn-same",
                                      "syn2syn-near", "gen2syn-near", "gen2gen-near",
                                      "verdict", "diverse", "attribute_accuracy"};
  EXPECT_EQ(keys, want);
  EXPECT_TRUE(j["gen2gen-near"].is_null());
  EXPECT_TRUE(j["syn2gt-same"].is_null());
  EXPECT_EQ(j["verdict"], "novel");
}
