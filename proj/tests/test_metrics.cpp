#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cxr/error.hpp"
#include "cxr/metrics.hpp"
#include "cxr/random.hpp"

using namespace cxr;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

EvalRecord rec(Decision pred, Decision ref, double score = 0.5) {
  EvalRecord r;
  r.predicted = pred;
  r.reference = ref;
  r.score = score;
  return r;
}

constexpr Decision A = Decision::Abnormal;
constexpr Decision N = Decision::Normal;

// Score-test inversion: the Wilson bounds are the p where
// |phat - p| = z * sqrt(p (1 - p) / n). Solved by bisection on each side.
Interval wilson_oracle(double s, double n, double z) {
  const double phat = s / n;
  auto excess = [&](double p) { return std::abs(phat - p) - z * std::sqrt(p * (1 - p) / n); };
  auto solve = [&](double lo, double hi) {
    // excess(lo) and excess(hi) differ in sign.
    const bool lo_positive = excess(lo) > 0;
    for (int i = 0; i < 200; ++i) {
      const double mid = (lo + hi) / 2;
      if ((excess(mid) > 0) == lo_positive) lo = mid;
      else hi = mid;
    }
    return (lo + hi) / 2;
  };
  return {s == 0 ? 0.0 : solve(0.0, phat), s == n ? 1.0 : solve(phat, 1.0)};
}

constexpr double kZ95 = 1.959963984540054;

double brute_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[i] != 1 || l[j] != 0) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return num / den;
}

Detection det(std::size_t label, double x1, double y1, double x2, double y2, double score = 1.0) {
  return {BBox(x1, y1, x2, y2), PathologyLabel::from_index(label), score};
}

// Maximum number of (pred, ref) pairs matchable one-to-one at the
// threshold, over all assignments.
std::uint64_t optimal_matches(const std::vector<Detection>& p, const std::vector<Detection>& g, double thr) {
  std::uint64_t best = 0;
  std::vector<int> assign(p.size(), -1);
  std::vector<bool> used(g.size(), false);
  auto go = [&](auto&& self, std::size_t i, std::uint64_t count) -> void {
    if (i == p.size()) {
      best = std::max(best, count);
      return;
    }
    self(self, i + 1, count);
    for (std::size_t r = 0; r < g.size(); ++r) {
      if (used[r] || g[r].label != p[i].label || iou(p[i].bbox, g[r].bbox) < thr) continue;
      used[r] = true;
      self(self, i + 1, count + 1);
      used[r] = false;
    }
  };
  go(go, 0, 0);
  return best;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Confusion, Examples) {
  const std::vector<EvalRecord> correct{rec(A, A), rec(N, N), rec(A, A)};
  const ConfusionCounts c = confusion(correct);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
  const std::vector<EvalRecord> inverted{rec(A, N), rec(N, A), rec(N, A)};
  const ConfusionCounts d = confusion(inverted);
  EXPECT_EQ(d.tp, 0u);
  EXPECT_EQ(d.tn, 0u);
  EXPECT_EQ(code_of([] { confusion({}); }), Errc::EmptyInput);
}

TEST(Confusion, TwentyRecordEnumeration) {
  // Pattern (pred, ref) cycling through the four cells with counts 8/2/1/9.
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 8; ++i) rs.push_back(rec(A, A));
  for (int i = 0; i < 2; ++i) rs.push_back(rec(A, N));
  rs.push_back(rec(N, A));
  for (int i = 0; i < 9; ++i) rs.push_back(rec(N, N));
  DeterministicRng rng(1);
  for (std::size_t i = rs.size(); i > 1; --i) std::swap(rs[i - 1], rs[rng.below(i)]);
  EXPECT_EQ(confusion(rs), (ConfusionCounts{8, 2, 1, 9}));
  // Normal as the positive class swaps the roles.
  EXPECT_EQ(confusion(rs, N), (ConfusionCounts{9, 1, 2, 8}));
}

TEST(Confusion, MonoidReduction) {
  DeterministicRng rng(2);
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 100; ++i) rs.push_back(rec(rng.below(2) ? A : N, rng.below(2) ? A : N));
  const ConfusionCounts whole = confusion(rs);
  const ConfusionCounts parts = confusion(std::span(rs).subspan(0, 37)) + confusion(std::span(rs).subspan(37));
  EXPECT_EQ(whole, parts);
}

TEST(Agreement, WorkedCounts) {
  const AgreementMetrics m = agreement_metrics({8, 2, 1, 9});
  EXPECT_DOUBLE_EQ(*m.ppv, 0.8);
  EXPECT_DOUBLE_EQ(*m.npv, 0.9);
  EXPECT_DOUBLE_EQ(*m.ppa, 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(*m.npa, 9.0 / 11.0);
}

TEST(Agreement, PerfectAndUndefined) {
  const AgreementMetrics m = agreement_metrics({5, 0, 0, 5});
  EXPECT_EQ(*m.ppv, 1.0);
  EXPECT_EQ(*m.npv, 1.0);
  EXPECT_EQ(*m.ppa, 1.0);
  EXPECT_EQ(*m.npa, 1.0);
  const AgreementMetrics u = agreement_metrics({0, 0, 3, 4});
  EXPECT_FALSE(u.ppv.has_value());
  EXPECT_TRUE(u.npv.has_value());
  EXPECT_EQ(code_of([&] { require_metric(u.ppv, "ppv"); }), Errc::UndefinedMetric);
}

TEST(Agreement, DualsUnderClassSwap) {
  DeterministicRng rng(3);
  for (int t = 0; t < 100; ++t) {
    const ConfusionCounts c{1 + rng.below(50), 1 + rng.below(50), 1 + rng.below(50), 1 + rng.below(50)};
    // Swapping which class is positive exchanges tp<->tn and fp<->fn.
    const ConfusionCounts swapped{c.tn, c.fn, c.fp, c.tp};
    const AgreementMetrics m = agreement_metrics(c), s = agreement_metrics(swapped);
    EXPECT_DOUBLE_EQ(*m.ppa, *s.npa);
    EXPECT_DOUBLE_EQ(*m.ppv, *s.npv);
    for (auto v : {m.ppv, m.npv, m.ppa, m.npa}) {
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
    }
  }
}

TEST(Wilson, Boundaries) {
  EXPECT_EQ(wilson_interval(0, 10).lower, 0.0);
  EXPECT_EQ(wilson_interval(10, 10).upper, 1.0);
  EXPECT_EQ(code_of([] { wilson_interval(0, 0); }), Errc::ZeroSample);
  EXPECT_EQ(code_of([] { wilson_interval(11, 10); }), Errc::InvalidArgument);
}

TEST(Wilson, MatchesScoreInversionOracle) {
  for (auto [s, n] : std::vector<std::pair<int, int>>{{95, 100}, {8, 10}, {1, 10}, {50, 100}, {950, 1000}, {0, 7}, {7, 7}}) {
    const Interval got = wilson_interval(s, n);
    const Interval want = wilson_oracle(s, n, kZ95);
    EXPECT_NEAR(got.lower, want.lower, 1e-9) << s << "/" << n;
    EXPECT_NEAR(got.upper, want.upper, 1e-9) << s << "/" << n;
  }
}

TEST(Wilson, FrozenValues) {
  // Frozen from the bisection oracle above.
  const Interval i = wilson_interval(95, 100);
  EXPECT_NEAR(i.lower, 0.888249530768, 1e-9);
  EXPECT_NEAR(i.upper, 0.978456320846, 1e-9);
  const Interval j = wilson_interval(8, 10);
  EXPECT_NEAR(j.lower, 0.490162471537, 1e-9);
  EXPECT_NEAR(j.upper, 0.943317848546, 1e-9);
}

TEST(Wilson, BracketsAndShrinks) {
  DeterministicRng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::uint64_t n = 1 + rng.below(500), s = rng.below(n + 1);
    const Interval i = wilson_interval(s, n);
    const double p = static_cast<double>(s) / n;
    EXPECT_LE(i.lower, p);
    EXPECT_GE(i.upper, p);
    EXPECT_GE(i.lower, 0.0);
    EXPECT_LE(i.upper, 1.0);
  }
  double prev = 2.0;
  for (std::uint64_t n : {10u, 100u, 1000u}) {
    const Interval i = wilson_interval(n * 7 / 10, n);
    EXPECT_LT(i.upper - i.lower, prev);
    prev = i.upper - i.lower;
  }
}

TEST(ClopperPearson, FrozenValues) {
  const Interval i = clopper_pearson_interval(95, 100);
  EXPECT_NEAR(i.lower, 0.8871650888945373, 1e-9);
  EXPECT_NEAR(i.upper, 0.9835681208179479, 1e-9);
  EXPECT_EQ(clopper_pearson_interval(0, 5).lower, 0.0);
  EXPECT_EQ(clopper_pearson_interval(5, 5).upper, 1.0);
}

TEST(Auc, Examples) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc(s, l), 0.75);
  EXPECT_DOUBLE_EQ(brute_auc(s, l), 0.75);
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  EXPECT_EQ(auc(sep, l), 1.0);
  const std::vector<double> ties(4, 0.3);
  EXPECT_EQ(auc(ties, l), 0.5);
  const std::vector<int> one{1, 1, 1, 1};
  EXPECT_EQ(code_of([&] { auc(s, one); }), Errc::SingleClass);
}

TEST(Auc, RandomizedAgainstBruteForceAndTrapezoid) {
  DeterministicRng rng(5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.below(12)) / 11.0);
      l.push_back(static_cast<int>(rng.below(2)));
    }
    l[0] = 0;
    l[1] = 1;
    const double a = auc(s, l);
    EXPECT_NEAR(a, brute_auc(s, l), 1e-12);
    EXPECT_NEAR(a, trapezoid_area(roc_curve(s, l)), 1e-12);
    // Strictly monotone transform.
    std::vector<double> e;
    for (double v : s) e.push_back(std::exp(3 * v) - 7);
    EXPECT_NEAR(auc(e, l), a, 1e-12);
  }
}

TEST(Auc, NegationComplementsWithoutTies) {
  DeterministicRng rng(6);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s, neg;
    std::vector<int> l;
    for (int i = 0; i < 30; ++i) {
      s.push_back(rng.uniform());
      neg.push_back(-s.back());
      l.push_back(i % 3 == 0 ? 1 : 0);
    }
    EXPECT_NEAR(auc(s, l) + auc(neg, l), 1.0, 1e-12);
  }
}

TEST(Match, Examples) {
  const std::vector<Detection> refs{det(1, 0, 0, 10, 10), det(2, 20, 20, 30, 30)};
  const ConfusionCounts same = match_detections(refs, refs);
  EXPECT_EQ(same, (ConfusionCounts{2, 0, 0, 0}));
  const std::vector<Detection> one{det(1, 0, 0, 10, 10)};
  EXPECT_EQ(match_detections(one, {}), (ConfusionCounts{0, 1, 0, 0}));
  // Label must agree.
  const std::vector<Detection> wrong{det(3, 0, 0, 10, 10)};
  EXPECT_EQ(match_detections(wrong, one), (ConfusionCounts{0, 1, 1, 0}));
}

TEST(Match, ConstructedCaseEqualsOptimal) {
  // Three predictions, two references. The top prediction overlaps both
  // references; the greedy pick of the higher-IoU reference leaves the
  // other one for the second prediction.
  const std::vector<Detection> refs{det(0, 0, 0, 10, 10), det(0, 6, 0, 16, 10)};
  const std::vector<Detection> preds{det(0, 1, 0, 11, 10, 0.9), det(0, 6, 0, 16, 10, 0.8), det(0, 40, 40, 50, 50, 0.7)};
  const ConfusionCounts c = match_detections(preds, refs);
  EXPECT_EQ(c.tp, optimal_matches(preds, refs, 0.5));
  EXPECT_EQ(c, (ConfusionCounts{2, 1, 0, 0}));
}

TEST(Match, GreedyNeverExceedsOptimalAndIsOrderFree) {
  DeterministicRng rng(7);
  for (int t = 0; t < 300; ++t) {
    std::vector<Detection> p, g;
    for (std::size_t i = 0, n = rng.below(6); i < n; ++i) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      p.push_back(det(rng.below(2), x, y, x + 8, y + 8, static_cast<double>(rng.below(4)) / 3));
    }
    for (std::size_t i = 0, n = rng.below(6); i < n; ++i) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      g.push_back(det(rng.below(2), x, y, x + 8, y + 8));
    }
    const ConfusionCounts c = match_detections(p, g);
    EXPECT_LE(c.tp, optimal_matches(p, g, 0.5));
    EXPECT_EQ(c.tp + c.fp, p.size());
    EXPECT_EQ(c.tp + c.fn, g.size());
    std::vector<Detection> shuffled = p;
    std::reverse(shuffled.begin(), shuffled.end());
    std::vector<Detection> g2 = g;
    std::rotate(g2.begin(), g2.begin() + (g2.empty() ? 0 : 1), g2.end());
    EXPECT_EQ(match_detections(shuffled, g2), c);
  }
}

TEST(Subgroup, SingleBand) {
  std::vector<EvalRecord> rs{rec(A, A, 0.9), rec(N, N, 0.1)};
  for (auto& r : rs) r.age_band = AgeBand::A18to40;
  const SubgroupTable t = subgroup_report(rs, SubgroupDimension::AgeBand);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].group, "18-40");
  EXPECT_EQ(t.notices.size(), 4u);
}

TEST(Subgroup, EngineeredTwoGroupSplit) {
  std::vector<EvalRecord> rs;
  // Male: tp 3, fp 1, fn 0, tn 4. Female: tp 1, fp 0, fn 2, tn 5.
  auto add = [&](Sex s, Decision p, Decision r, int n, double score) {
    for (int i = 0; i < n; ++i) {
      rs.push_back(rec(p, r, score));
      rs.back().sex = s;
    }
  };
  add(Sex::Male, A, A, 3, 0.9);
  add(Sex::Male, A, N, 1, 0.8);
  add(Sex::Male, N, N, 4, 0.2);
  add(Sex::Female, A, A, 1, 0.7);
  add(Sex::Female, N, A, 2, 0.4);
  add(Sex::Female, N, N, 5, 0.3);
  const SubgroupTable t = subgroup_report(rs, SubgroupDimension::Gender);
  ASSERT_EQ(t.rows.size(), 2u);
  const SubgroupRow& m = t.rows[0];
  const SubgroupRow& f = t.rows[1];
  EXPECT_EQ(m.group, "Male");
  EXPECT_EQ(f.group, "Female");
  EXPECT_EQ(m.counts, (ConfusionCounts{3, 1, 0, 4}));
  EXPECT_EQ(f.counts, (ConfusionCounts{1, 0, 2, 5}));
  EXPECT_DOUBLE_EQ(*m.accuracy_pct, 700.0 / 8);
  EXPECT_DOUBLE_EQ(*m.precision_pct, 75.0);
  EXPECT_DOUBLE_EQ(*m.recall_pct, 100.0);
  EXPECT_DOUBLE_EQ(*m.specificity_pct, 80.0);
  EXPECT_DOUBLE_EQ(*f.recall_pct, 100.0 / 3);
  EXPECT_DOUBLE_EQ(*f.sensitivity_pct, *f.recall_pct);
  // Female scores: positives {0.7, 0.4, 0.4}, negatives 5 x 0.3 -> all above.
  EXPECT_DOUBLE_EQ(*f.auc, 1.0);
  // Male: positives 0.9 x3; negatives {0.8, 0.2 x4} -> separable.
  EXPECT_DOUBLE_EQ(*m.auc, 1.0);

  const std::string out = render_subgroup(t, ReportFormat::Csv);
  EXPECT_EQ(out,
            "Gender,AUC,Accuracy %,Precision %,Recall %,Sensitivity %,Specificity %\n"
            "Male,1.000,87.5,75.0,100.0,100.0,80.0\n"
            "Female,1.000,75.0,100.0,33.3,33.3,100.0\n");
}

TEST(Render, AtelectasisRow) {
  MetricReport r;
  r.rows.push_back({PathologyLabel::parse("Atelectasis"), 0.98, 99.40, 97.40});
  EXPECT_EQ(render_report(r, ReportFormat::Csv), "Pathology,AUC,Precision %,Recall %\nAtelectasis,0.98,99.40,97.40\n");
  EXPECT_EQ(render_report(r, ReportFormat::Markdown),
            "| Pathology | AUC | Precision % | Recall % |\n|---|---:|---:|---:|\n| Atelectasis | 0.98 | 99.40 | 97.40 |\n");
}

TEST(Render, EmptyAndDeterministic) {
  EXPECT_EQ(render_report({}, ReportFormat::Csv), "Pathology,AUC,Precision %,Recall %\n");
  MetricReport r;
  r.rows.push_back({PathologyLabel::parse("Pneumothorax"), std::nullopt, 50.0, 25.0});
  r.rows.push_back({PathologyLabel::parse("Atelectasis"), 0.5, 1.0, 2.0});
  const std::string a = render_report(r, ReportFormat::Csv);
  EXPECT_EQ(a, render_report(r, ReportFormat::Csv));
  EXPECT_EQ(a, "Pathology,AUC,Precision %,Recall %\nAtelectasis,0.50,1.00,2.00\nPneumothorax,NA,50.00,25.00\n");
}

TEST(PublishedTables, PublishedPathologyTableRoundTrips) {
  const std::string text = read_file(CXR_TEST_DATA_DIR "/published_pathology_metrics.csv");
  const auto rows = parse_pathology_table(text);
  ASSERT_EQ(rows.size(), 75u);
  MetricReport r;
  r.rows = rows;
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(parse_pathology_table(render_report(r, ReportFormat::Csv)).size(), 75u);
}

TEST(PublishedTables, DeploymentTableOutOfRangeRejected) {
  const std::string text = read_file(CXR_TEST_DATA_DIR "/deployment_metrics.csv");
  EXPECT_EQ(code_of([&] { parse_pathology_table(text); }), Errc::RangeError);
  EXPECT_EQ(code_of([] { parse_pathology_table("Pathology,AUC,Precision %,Recall %\nTuberculosis,0.97,98.88,100.35\n"); }),
            Errc::RangeError);
  EXPECT_EQ(code_of([] { parse_pathology_table("Nope,0.5,1,1\n"); }), Errc::UnknownLabel);
}

TEST(Report, PathologyRowsAndValidation) {
  std::vector<EvalRecord> rs;
  const auto ptx = PathologyLabel::parse("Pneumothorax");
  for (int i = 0; i < 4; ++i) {
    EvalRecord r = rec(A, A, 0.9);
    r.study_id = "s" + std::to_string(i);
    if (i < 2) r.reference_detections.push_back({BBox(0, 0, 10, 10), ptx, 1.0});
    if (i != 1) r.predicted_detections.push_back({BBox(0, 0, 10, 10), ptx, i == 0 ? 0.9 : 0.6});
    rs.push_back(r);
  }
  const auto rows = pathology_rows(rs);
  ASSERT_EQ(rows.size(), 1u);
  // tp 1 (s0), fp 2 (s2, s3), fn 1 (s1).
  EXPECT_NEAR(*rows[0].precision_pct, 100.0 / 3, 1e-12);
  EXPECT_NEAR(*rows[0].recall_pct, 50.0, 1e-12);
  // Study scores: s0 0.9 (+), s1 0 (+), s2 0.6 (-), s3 0.6 (-) -> pairs 2 of 4.
  EXPECT_NEAR(*rows[0].auc, 0.5, 1e-12);
  const MetricReport report = build_report(rs);
  EXPECT_NO_THROW(report.validate());
  MetricReport bad;
  bad.rows.push_back({ptx, 0.9, 100.38, 99.0});
  EXPECT_EQ(code_of([&] { bad.validate(); }), Errc::RangeError);
}

TEST(Records, JoinSkipsRejectedAndUnmatched) {
  const std::string preds =
      R"({"study_id":"a","status":"Detected","decision":"Abnormal","score":0.8,"age_band":"40-60","sex":"Male","manufacturer":"Siemens","machine_type":"DR","detections":[{"label":"Nodule","x1":1,"y1":1,"x2":5,"y2":5,"score":0.7}]})"
      "\n"
      R"({"study_id":"b","status":"Rejected","reason":"not_xray"})"
      "\n"
      R"({"study_id":"c","status":"Classified","decision":"Normal","score":0.1,"age_band":null,"sex":"Female","manufacturer":"Other Manufacturers","machine_type":"CR","detections":[]})"
      "\n";
  ReferenceRecord ra{"a", A, {{BBox(1, 1, 5, 5), PathologyLabel::parse("Nodule"), 1.0}}};
  const std::string refs = reference_line(ra) + "\n";
  EXPECT_EQ(parse_reference_line(reference_line(ra)).annotations.size(), 1u);
  const JoinedRecords j = join_records(preds, refs);
  ASSERT_EQ(j.records.size(), 1u);
  EXPECT_EQ(j.records[0].study_id, "a");
  EXPECT_EQ(j.records[0].age_band, AgeBand::A40to60);
  EXPECT_EQ(j.records[0].manufacturer, Manufacturer::Siemens);
  EXPECT_EQ(j.records[0].predicted_detections.size(), 1u);
  EXPECT_EQ(j.notices.size(), 2u);
  EXPECT_EQ(code_of([] { join_records("{bad", ""); }), Errc::BadRequest);
}

TEST(Render, RejectsOutOfRangeValues) {
  MetricReport r;
  r.rows.push_back({PathologyLabel::parse("Atelectasis"), 0.98, 100.01, 97.40});
  EXPECT_EQ(code_of([&] { render_report(r, ReportFormat::Csv); }), Errc::RangeError);
  r.rows[0] = {PathologyLabel::parse("Atelectasis"), 1.2, 99.0, 97.40};
  EXPECT_EQ(code_of([&] { render_report(r, ReportFormat::Markdown); }), Errc::RangeError);
}
