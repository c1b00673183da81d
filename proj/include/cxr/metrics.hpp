#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/backends.hpp"
#include "cxr/detection.hpp"
#include "cxr/ingest.hpp"

namespace cxr {

/// 2x2 counts. Addition makes them a commutative monoid so partial counts
/// can be reduced in any order.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// One scored study: classification output and reference, detections on
/// both sides, and the subgroup attributes.
struct EvalRecord {
  std::string study_id;
  Decision predicted = Decision::Normal;
  double score = 0.0;  // P(abnormal)
  Decision reference = Decision::Normal;
  std::vector<Detection> predicted_detections;
  std::vector<Detection> reference_detections;
  std::optional<AgeBand> age_band;
  Sex sex = Sex::Unknown;
  Manufacturer manufacturer = Manufacturer::Other;
  MachineType machine_type = MachineType::Unknown;
};

/// Throws EmptyInput for an empty range.
ConfusionCounts confusion(std::span<const EvalRecord> records, Decision positive = Decision::Abnormal);

/// Each ratio is absent when its denominator is zero.
struct AgreementMetrics {
  std::optional<double> ppv;
  std::optional<double> npv;
  std::optional<double> ppa;
  std::optional<double> npa;
};

AgreementMetrics agreement_metrics(const ConfusionCounts& c);

/// The value, or UndefinedMetric naming the metric.
double require_metric(const std::optional<double>& value, std::string_view name);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

enum class IntervalMethod { Wilson, ClopperPearson };

/// Wilson score interval. Throws ZeroSample for n == 0 and InvalidArgument
/// for successes > n or a level outside (0,1).
Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double level = 0.95);
/// Exact binomial (Clopper-Pearson) interval.
Interval clopper_pearson_interval(std::uint64_t successes, std::uint64_t n, double level = 0.95);
Interval proportion_interval(std::uint64_t successes, std::uint64_t n, double level, IntervalMethod method);

/// Mann-Whitney AUC with half credit for ties. labels are 0/1. Throws
/// SingleClass unless both classes occur, ShapeMismatch on length mismatch.
double auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC vertices from (0,0) to (1,1), one per distinct threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> curve);

/// Greedy one-to-one matching by descending score. Predictions are visited
/// in (score desc, label, x1, y1, x2, y2) order and each takes the unmatched
/// same-label reference of highest IoU >= threshold. tn is always 0.
ConfusionCounts match_detections(std::span<const Detection> predictions, std::span<const Detection> references,
                                 double iou_threshold = 0.5);

inline constexpr double kDefaultMatchIou = 0.5;

// ---------------------------------------------------------------------------
// Reports

struct PathologyRow {
  PathologyLabel label;
  std::optional<double> auc;
  std::optional<double> precision_pct;
  std::optional<double> recall_pct;
};

struct EstimateWithInterval {
  std::optional<double> point;
  std::optional<Interval> interval;
};

struct ClassificationSummary {
  ConfusionCounts counts;
  EstimateWithInterval ppv, npv, ppa, npa;
  std::optional<double> auc;
};

enum class SubgroupDimension { AgeBand, Gender, MachineType, Manufacturer };

std::string_view to_string(SubgroupDimension d);
std::optional<SubgroupDimension> subgroup_dimension_from_string(std::string_view s);

struct SubgroupRow {
  std::string group;
  std::size_t records = 0;
  ConfusionCounts counts;
  std::optional<double> auc;
  std::optional<double> accuracy_pct;
  std::optional<double> precision_pct;
  std::optional<double> recall_pct;
  std::optional<double> sensitivity_pct;
  std::optional<double> specificity_pct;
};

struct SubgroupTable {
  SubgroupDimension dimension = SubgroupDimension::AgeBand;
  std::vector<SubgroupRow> rows;
  /// Human-readable notes, e.g. groups omitted for lack of records.
  std::vector<std::string> notices;
};

struct MetricReport {
  std::vector<PathologyRow> rows;
  std::optional<ClassificationSummary> classification;
  std::vector<SubgroupTable> subgroups;

  /// Throws RangeError for a percentage outside [0,100], an AUC outside
  /// [0,1] or an interval that does not bracket its point.
  void validate() const;
};

ClassificationSummary classify_summary(std::span<const EvalRecord> records, double level = 0.95,
                                       IntervalMethod method = IntervalMethod::Wilson);

/// One row per label that occurs on either side, in canonical order.
/// AUC uses the highest predicted score for the label per study (0 when
/// absent) against presence in the reference.
std::vector<PathologyRow> pathology_rows(std::span<const EvalRecord> records, double iou_threshold = kDefaultMatchIou);

/// Rows in the dimension's enumeration order; empty groups are omitted
/// with a notice.
SubgroupTable subgroup_report(std::span<const EvalRecord> records, SubgroupDimension dimension);

MetricReport build_report(std::span<const EvalRecord> records, double iou_threshold = kDefaultMatchIou);

enum class ReportFormat { Csv, Markdown };

std::optional<ReportFormat> report_format_from_string(std::string_view s);

/// Per-pathology table: Pathology, AUC, Precision %, Recall %; two
/// decimals, "NA" for an undefined value, canonical row order. Validates
/// the report first (RangeError).
std::string render_report(const MetricReport& report, ReportFormat format);
/// Subgroup table in the per-dimension layout: group, AUC (3 decimals),
/// Accuracy/Precision/Recall/Sensitivity/Specificity % (1 decimal).
std::string render_subgroup(const SubgroupTable& table, ReportFormat format);

/// Parses a rendered (or externally supplied) per-pathology CSV. Names are
/// resolved through aliases. Throws RangeError for a value outside its
/// range, UnknownLabel for an unresolvable name, BadRequest for shape
/// errors.
std::vector<PathologyRow> parse_pathology_table(std::string_view csv);

// ---------------------------------------------------------------------------
// Record files

/// Reference file line: {"study_id", "label": "Normal"|"Abnormal",
/// "annotations": [{"label","x1","y1","x2","y2"}]}.
struct ReferenceRecord {
  std::string study_id;
  Decision label = Decision::Normal;
  std::vector<Detection> annotations;
};

std::string reference_line(const ReferenceRecord& r);
ReferenceRecord parse_reference_line(std::string_view line);

struct JoinedRecords {
  std::vector<EvalRecord> records;
  std::vector<std::string> notices;
};

/// Joins prediction lines (service output schema) with reference lines on
/// study_id. Rejected studies and studies without a reference are skipped
/// with a notice.
JoinedRecords join_records(std::string_view prediction_ndjson, std::string_view reference_ndjson);

}  // namespace cxr
