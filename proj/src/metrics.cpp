#include "cxr/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cxr/error.hpp"

namespace cxr {

using nlohmann::json;

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(std::span<const EvalRecord> records, Decision positive) {
  if (records.empty()) throw Error(Errc::EmptyInput, "no records to score");
  ConfusionCounts c;
  for (const EvalRecord& r : records) {
    const bool pred = r.predicted == positive;
    const bool ref = r.reference == positive;
    if (pred && ref) ++c.tp;
    else if (pred) ++c.fp;
    else if (ref) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> pct(std::optional<double> v) {
  if (!v) return std::nullopt;
  return *v * 100.0;
}

}  // namespace

AgreementMetrics agreement_metrics(const ConfusionCounts& c) {
  return {ratio(c.tp, c.tp + c.fp), ratio(c.tn, c.tn + c.fn), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp)};
}

double require_metric(const std::optional<double>& value, std::string_view name) {
  if (!value) throw Error(Errc::UndefinedMetric, std::string(name) + " has a zero denominator");
  return *value;
}

namespace {

void check_proportion(std::uint64_t successes, std::uint64_t n, double level) {
  if (n == 0) throw Error(Errc::ZeroSample, "interval over zero trials");
  if (successes > n) throw Error(Errc::InvalidArgument, "successes exceed trials");
  if (!(level > 0.0 && level < 1.0)) throw Error(Errc::InvalidArgument, "confidence level must be in (0,1)");
}

}  // namespace

Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double level) {
  check_proportion(successes, n, level);
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  Interval out{std::clamp(center - half, 0.0, p), std::clamp(center + half, p, 1.0)};
  // The closed form touches the boundary exactly; pin it against rounding.
  if (successes == 0) out.lower = 0.0;
  if (successes == n) out.upper = 1.0;
  return out;
}

Interval clopper_pearson_interval(std::uint64_t successes, std::uint64_t n, double level) {
  check_proportion(successes, n, level);
  const double alpha = 1.0 - level;
  const double s = static_cast<double>(successes);
  const double f = static_cast<double>(n - successes);
  Interval out{0.0, 1.0};
  if (successes > 0) out.lower = boost::math::quantile(boost::math::beta_distribution<double>(s, f + 1.0), alpha / 2.0);
  if (successes < n) {
    out.upper = boost::math::quantile(boost::math::beta_distribution<double>(s + 1.0, f), 1.0 - alpha / 2.0);
  }
  return out;
}

Interval proportion_interval(std::uint64_t successes, std::uint64_t n, double level, IntervalMethod method) {
  return method == IntervalMethod::Wilson ? wilson_interval(successes, n, level)
                                          : clopper_pearson_interval(successes, n, level);
}

namespace {

void check_scored(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(Errc::ShapeMismatch, "scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(Errc::InvalidArgument, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(Errc::InvalidArgument, "non-finite score");
  }
  if (pos == 0 || pos == labels.size()) throw Error(Errc::SingleClass, "AUC needs both classes");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_scored(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the mid-rank keeps everything integral.
  std::uint64_t positive_rank2 = 0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = static_cast<std::uint64_t>(i + 1 + j);  // (i+1 + j) / 2 * 2
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank2 += midrank2;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  // U = sum(ranks of positives) - P(P+1)/2; AUC = U / (P N).
  const auto u2 = static_cast<double>(positive_rank2 - positives * (positives + 1));
  return u2 / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_scored(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  std::vector<RocPoint> curve{{0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    curve.push_back({fp / N, tp / P});
    i = j;
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

namespace {

auto box_key(const Detection& d) {
  return std::make_tuple(d.label.index(), d.bbox.x1(), d.bbox.y1(), d.bbox.x2(), d.bbox.y2());
}

}  // namespace

ConfusionCounts match_detections(std::span<const Detection> predictions, std::span<const Detection> references,
                                 double iou_threshold) {
  std::vector<const Detection*> preds;
  for (const Detection& d : predictions) preds.push_back(&d);
  std::sort(preds.begin(), preds.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    return box_key(*a) < box_key(*b);
  });
  std::vector<const Detection*> refs;
  for (const Detection& d : references) refs.push_back(&d);
  std::sort(refs.begin(), refs.end(), [](const Detection* a, const Detection* b) { return box_key(*a) < box_key(*b); });

  std::vector<bool> used(refs.size(), false);
  ConfusionCounts c;
  for (const Detection* p : preds) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t r = 0; r < refs.size(); ++r) {
      if (used[r] || refs[r]->label != p->label) continue;
      const double v = iou(p->bbox, refs[r]->bbox);
      if (v >= iou_threshold && v > best_iou) {
        best = r;
        best_iou = v;
      }
    }
    if (best) {
      used[*best] = true;
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::uint64_t>(std::count(used.begin(), used.end(), false));
  return c;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SubgroupDimension d) {
  switch (d) {
    case SubgroupDimension::AgeBand: return "age";
    case SubgroupDimension::Gender: return "gender";
    case SubgroupDimension::MachineType: return "machine";
    case SubgroupDimension::Manufacturer: return "manufacturer";
  }
  return "?";
}

std::optional<SubgroupDimension> subgroup_dimension_from_string(std::string_view s) {
  for (auto d : {SubgroupDimension::AgeBand, SubgroupDimension::Gender, SubgroupDimension::MachineType,
                 SubgroupDimension::Manufacturer}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

std::optional<ReportFormat> report_format_from_string(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  return std::nullopt;
}

namespace {

std::optional<double> classification_auc(std::span<const EvalRecord> records) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const EvalRecord& r : records) {
    scores.push_back(r.score);
    labels.push_back(r.reference == Decision::Abnormal ? 1 : 0);
  }
  try {
    return auc(scores, labels);
  } catch (const Error& e) {
    if (e.code() != Errc::SingleClass) throw;
    return std::nullopt;
  }
}

EstimateWithInterval estimate(std::uint64_t num, std::uint64_t den, double level, IntervalMethod method) {
  if (den == 0) return {};
  return {ratio(num, den), proportion_interval(num, den, level, method)};
}

void check_range(std::optional<double> v, double hi, const std::string& what) {
  if (v && !(*v >= 0.0 && *v <= hi)) {
    throw Error(Errc::RangeError, fmt::format("{} = {} outside [0,{}]", what, *v, hi));
  }
}

}  // namespace

ClassificationSummary classify_summary(std::span<const EvalRecord> records, double level, IntervalMethod method) {
  ClassificationSummary s;
  s.counts = confusion(records);
  const ConfusionCounts& c = s.counts;
  s.ppv = estimate(c.tp, c.tp + c.fp, level, method);
  s.npv = estimate(c.tn, c.tn + c.fn, level, method);
  s.ppa = estimate(c.tp, c.tp + c.fn, level, method);
  s.npa = estimate(c.tn, c.tn + c.fp, level, method);
  s.auc = classification_auc(records);
  return s;
}

std::vector<PathologyRow> pathology_rows(std::span<const EvalRecord> records, double iou_threshold) {
  std::array<bool, kPathologyCount> seen{};
  for (const EvalRecord& r : records) {
    for (const Detection& d : r.predicted_detections) seen[d.label.index()] = true;
    for (const Detection& d : r.reference_detections) seen[d.label.index()] = true;
  }
  std::vector<PathologyRow> rows;
  for (std::size_t i = 0; i < kPathologyCount; ++i) {
    if (!seen[i]) continue;
    const PathologyLabel label = PathologyLabel::from_index(i);
    ConfusionCounts c;
    std::vector<double> scores;
    std::vector<int> present;
    for (const EvalRecord& r : records) {
      std::vector<Detection> p, g;
      double best = 0.0;
      for (const Detection& d : r.predicted_detections) {
        if (d.label != label) continue;
        p.push_back(d);
        best = std::max(best, d.score);
      }
      for (const Detection& d : r.reference_detections) {
        if (d.label == label) g.push_back(d);
      }
      c += match_detections(p, g, iou_threshold);
      scores.push_back(best);
      present.push_back(g.empty() ? 0 : 1);
    }
    PathologyRow row{label, std::nullopt, pct(ratio(c.tp, c.tp + c.fp)), pct(ratio(c.tp, c.tp + c.fn))};
    try {
      row.auc = auc(scores, present);
    } catch (const Error& e) {
      if (e.code() != Errc::SingleClass) throw;
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

template <typename T>
struct GroupSpec {
  std::string name;
  T value;
};

SubgroupRow subgroup_row(std::string name, std::span<const EvalRecord> records) {
  SubgroupRow row;
  row.group = std::move(name);
  row.records = records.size();
  row.counts = confusion(records);
  const ConfusionCounts& c = row.counts;
  row.auc = classification_auc(records);
  row.accuracy_pct = pct(ratio(c.tp + c.tn, c.total()));
  row.precision_pct = pct(ratio(c.tp, c.tp + c.fp));
  row.recall_pct = pct(ratio(c.tp, c.tp + c.fn));
  row.sensitivity_pct = row.recall_pct;
  row.specificity_pct = pct(ratio(c.tn, c.tn + c.fp));
  return row;
}

std::string group_name(SubgroupDimension dim, const EvalRecord& r) {
  switch (dim) {
    case SubgroupDimension::AgeBand: return r.age_band ? std::string(to_string(*r.age_band)) : std::string();
    case SubgroupDimension::Gender: return std::string(to_string(r.sex));
    case SubgroupDimension::MachineType: return std::string(to_string(r.machine_type));
    case SubgroupDimension::Manufacturer: return std::string(to_string(r.manufacturer));
  }
  return {};
}

std::vector<std::string> group_names(SubgroupDimension dim) {
  std::vector<std::string> out;
  switch (dim) {
    case SubgroupDimension::AgeBand:
      for (AgeBand b : kAllAgeBands) out.emplace_back(to_string(b));
      break;
    case SubgroupDimension::Gender:
      for (Sex s : kAllSexes) out.emplace_back(to_string(s));
      break;
    case SubgroupDimension::MachineType:
      for (MachineType m : kAllMachineTypes) out.emplace_back(to_string(m));
      break;
    case SubgroupDimension::Manufacturer:
      for (Manufacturer m : kAllManufacturers) out.emplace_back(to_string(m));
      break;
  }
  return out;
}

std::string dimension_header(SubgroupDimension d) {
  switch (d) {
    case SubgroupDimension::AgeBand: return "Age Group";
    case SubgroupDimension::Gender: return "Gender";
    case SubgroupDimension::MachineType: return "Machine Type";
    case SubgroupDimension::Manufacturer: return "Manufacturer";
  }
  return "Group";
}

}  // namespace

SubgroupTable subgroup_report(std::span<const EvalRecord> records, SubgroupDimension dimension) {
  SubgroupTable table;
  table.dimension = dimension;
  std::map<std::string, std::vector<EvalRecord>> by_group;
  std::size_t unassigned = 0;
  for (const EvalRecord& r : records) {
    std::string g = group_name(dimension, r);
    if (g.empty()) {
      ++unassigned;
      continue;
    }
    by_group[g].push_back(r);
  }
  for (const std::string& g : group_names(dimension)) {
    auto it = by_group.find(g);
    if (it == by_group.end()) {
      table.notices.push_back("no records for group " + g);
      continue;
    }
    table.rows.push_back(subgroup_row(g, it->second));
  }
  if (unassigned > 0) {
    table.notices.push_back(fmt::format("{} record(s) with no {} attribute", unassigned, to_string(dimension)));
  }
  return table;
}

MetricReport build_report(std::span<const EvalRecord> records, double iou_threshold) {
  MetricReport report;
  report.rows = pathology_rows(records, iou_threshold);
  if (!records.empty()) report.classification = classify_summary(records);
  for (auto d : {SubgroupDimension::AgeBand, SubgroupDimension::Gender, SubgroupDimension::MachineType,
                 SubgroupDimension::Manufacturer}) {
    report.subgroups.push_back(subgroup_report(records, d));
  }
  return report;
}

void MetricReport::validate() const {
  for (const PathologyRow& r : rows) {
    const std::string name(r.label.name());
    check_range(r.auc, 1.0, name + " AUC");
    check_range(r.precision_pct, 100.0, name + " precision");
    check_range(r.recall_pct, 100.0, name + " recall");
  }
  if (classification) {
    for (const EstimateWithInterval* e :
         {&classification->ppv, &classification->npv, &classification->ppa, &classification->npa}) {
      check_range(e->point, 1.0, "agreement metric");
      if (e->point && e->interval && !(e->interval->lower <= *e->point && *e->point <= e->interval->upper)) {
        throw Error(Errc::RangeError, "interval does not bracket its point estimate");
      }
    }
    check_range(classification->auc, 1.0, "classification AUC");
  }
  for (const SubgroupTable& t : subgroups) {
    for (const SubgroupRow& r : t.rows) {
      check_range(r.auc, 1.0, r.group + " AUC");
      for (auto v : {r.accuracy_pct, r.precision_pct, r.recall_pct, r.sensitivity_pct, r.specificity_pct}) {
        check_range(v, 100.0, r.group + " percentage");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string fixed(std::optional<double> v, int decimals) {
  if (!v) return "NA";
  return fmt::format("{:.{}f}", *v, decimals);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string render_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                        ReportFormat format) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    if (format == ReportFormat::Csv) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_field(cells[i]);
    } else {
      out += "|";
      for (const auto& c : cells) out += " " + c + " |";
    }
    out += "\n";
  };
  emit(header);
  if (format == ReportFormat::Markdown) {
    out += "|";
    for (std::size_t i = 0; i < header.size(); ++i) out += i == 0 ? "---|" : "---:|";
    out += "\n";
  }
  for (const auto& r : rows) emit(r);
  return out;
}

}  // namespace

std::string render_report(const MetricReport& report, ReportFormat format) {
  report.validate();
  std::vector<PathologyRow> rows = report.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
  std::vector<std::vector<std::string>> cells;
  for (const PathologyRow& r : rows) {
    cells.push_back({std::string(r.label.name()), fixed(r.auc, 2), fixed(r.precision_pct, 2), fixed(r.recall_pct, 2)});
  }
  return render_rows({"Pathology", "AUC", "Precision %", "Recall %"}, cells, format);
}

std::string render_subgroup(const SubgroupTable& table, ReportFormat format) {
  std::vector<std::vector<std::string>> cells;
  for (const SubgroupRow& r : table.rows) {
    cells.push_back({r.group, fixed(r.auc, 3), fixed(r.accuracy_pct, 1), fixed(r.precision_pct, 1),
                     fixed(r.recall_pct, 1), fixed(r.sensitivity_pct, 1), fixed(r.specificity_pct, 1)});
  }
  return render_rows({dimension_header(table.dimension), "AUC", "Accuracy %", "Precision %", "Recall %",
                      "Sensitivity %", "Specificity %"},
                     cells, format);
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<double> parse_cell(const std::string& s, double hi, const std::string& what) {
  if (s == "NA") return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error(Errc::BadRequest, "not a number: " + s);
  }
  if (used != s.size()) throw Error(Errc::BadRequest, "not a number: " + s);
  check_range(v, hi, what);
  return v;
}

}  // namespace

std::vector<PathologyRow> parse_pathology_table(std::string_view csv) {
  std::vector<PathologyRow> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw Error(Errc::BadRequest, "expected 4 columns: " + line);
    if (header) {
      header = false;
      if (cells[0] == "Pathology") continue;
    }
    const PathologyLabel label = PathologyLabel::parse(cells[0]);
    rows.push_back({label, parse_cell(cells[1], 1.0, cells[0] + " AUC"),
                    parse_cell(cells[2], 100.0, cells[0] + " precision"),
                    parse_cell(cells[3], 100.0, cells[0] + " recall")});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Record files

namespace {

nlohmann::ordered_json detection_json(const Detection& d, bool with_score) {
  nlohmann::ordered_json j{{"label", std::string(d.label.name())},
         {"x1", d.bbox.x1()},
         {"y1", d.bbox.y1()},
         {"x2", d.bbox.x2()},
         {"y2", d.bbox.y2()}};
  if (with_score) j["score"] = d.score;
  return j;
}

Detection detection_from_json(const json& j) {
  return {BBox(j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(), j.at("y2").get<double>()),
          PathologyLabel::parse(j.at("label").get<std::string>()), j.value("score", 1.0)};
}

Decision parse_decision(const json& j) {
  const auto d = decision_from_string(j.get<std::string>());
  if (!d) throw Error(Errc::BadRequest, "decision must be Normal or Abnormal");
  return *d;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) fn(line, line_no);
    start = end + 1;
  }
}

}  // namespace

std::string reference_line(const ReferenceRecord& r) {
  nlohmann::ordered_json j;
  j["study_id"] = r.study_id;
  j["label"] = std::string(to_string(r.label));
  j["annotations"] = json::array();
  for (const Detection& d : r.annotations) j["annotations"].push_back(detection_json(d, false));
  return j.dump();
}

ReferenceRecord parse_reference_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    ReferenceRecord r;
    r.study_id = j.at("study_id").get<std::string>();
    r.label = parse_decision(j.at("label"));
    for (const json& a : j.value("annotations", json::array())) r.annotations.push_back(detection_from_json(a));
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::BadRequest, std::string("reference record: ") + e.what());
  }
}

JoinedRecords join_records(std::string_view prediction_ndjson, std::string_view reference_ndjson) {
  std::map<std::string, ReferenceRecord> refs;
  for_each_line(reference_ndjson, [&](std::string_view line, std::size_t) {
    ReferenceRecord r = parse_reference_line(line);
    const std::string id = r.study_id;
    if (!refs.emplace(id, std::move(r)).second) throw Error(Errc::BadRequest, "duplicate reference for " + id);
  });

  JoinedRecords out;
  std::size_t rejected = 0, unmatched = 0;
  for_each_line(prediction_ndjson, [&](std::string_view line, std::size_t line_no) {
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::BadRequest, fmt::format("prediction line {}: {}", line_no, e.what()));
    }
    try {
      if (j.value("status", "") == "Rejected") {
        ++rejected;
        return;
      }
      EvalRecord r;
      r.study_id = j.at("study_id").get<std::string>();
      auto ref = refs.find(r.study_id);
      if (ref == refs.end()) {
        ++unmatched;
        return;
      }
      r.predicted = parse_decision(j.at("decision"));
      r.score = j.at("score").get<double>();
      r.reference = ref->second.label;
      r.reference_detections = ref->second.annotations;
      for (const json& d : j.value("detections", json::array())) r.predicted_detections.push_back(detection_from_json(d));
      if (j.contains("age_band") && !j["age_band"].is_null()) {
        r.age_band = age_band_from_string(j["age_band"].get<std::string>());
      }
      r.sex = sex_from_string(j.value("sex", "Unknown")).value_or(Sex::Unknown);
      r.manufacturer = manufacturer_from_string(j.value("manufacturer", "Other Manufacturers")).value_or(Manufacturer::Other);
      r.machine_type = machine_type_from_string(j.value("machine_type", "Unknown")).value_or(MachineType::Unknown);
      out.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(Errc::BadRequest, fmt::format("prediction line {}: {}", line_no, e.what()));
    }
  });
  if (rejected > 0) out.notices.push_back(fmt::format("{} rejected study(ies) not scored", rejected));
  if (unmatched > 0) out.notices.push_back(fmt::format("{} prediction(s) without a reference not scored", unmatched));
  return out;
}

}  // namespace cxr
