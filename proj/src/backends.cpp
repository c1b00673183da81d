#include "cxr/backends.hpp"

#include <mpfr.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cxr/error.hpp"
#include "cxr/nn.hpp"
#include "cxr/random.hpp"

namespace cxr {

using nlohmann::json;

void ProbabilityVector::validate() const {
  if (probs.empty()) throw Error(Errc::InvalidProbability, "empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidProbability, "probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::InvalidProbability, "probabilities do not sum to 1");
}

std::string_view to_string(Decision d) { return d == Decision::Normal ? "Normal" : "Abnormal"; }
std::string_view to_string(View v) { return v == View::PA ? "PA" : "AP"; }

std::optional<Decision> decision_from_string(std::string_view s) {
  if (s == "Normal") return Decision::Normal;
  if (s == "Abnormal") return Decision::Abnormal;
  return std::nullopt;
}

ViewScore view_from_ap_probability(double p_ap) {
  if (p_ap > 0.5) return {View::AP, p_ap};
  return {View::PA, 1.0 - p_ap};
}

void BackendDescriptor::validate() const {
  switch (kind) {
    case BackendKind::TinyReference:
      if (!seed || fixture_path) throw Error(Errc::Config, "tiny-reference backend needs a seed and no fixture path");
      break;
    case BackendKind::Fixture:
      if (seed || !fixture_path) throw Error(Errc::Config, "fixture backend needs a fixture path and no seed");
      break;
  }
}

std::unique_ptr<ModelBackend> make_backend(const BackendDescriptor& desc, const ResolutionSet& resolutions) {
  desc.validate();
  if (desc.kind == BackendKind::TinyReference) {
    return std::make_unique<TinyReferenceBackend>(*desc.seed, resolutions);
  }
  return std::make_unique<FixtureBackend>(FixtureBackend::load(*desc.fixture_path, resolutions));
}

// ---------------------------------------------------------------------------
// Tiny reference networks

namespace {

constexpr std::size_t kPatch = 32;
constexpr std::size_t kDim = 16;
constexpr std::size_t kHidden = 32;
constexpr std::size_t kSpinePoints = 3;

enum SeedTag : std::uint64_t {
  kTagVerify = 1,
  kTagChest = 2,
  kTagView = 3,
  kTagKeypoints = 4,
  kTagDetect = 5,
  kTagResolutionBase = 1000,
};

/// Patch embedding -> one pre-norm self-attention block with MLP -> mean
/// pool -> linear head.
class TinyVit {
 public:
  TinyVit(std::size_t side, std::size_t outputs, std::uint64_t seed) : side_(side) {
    DeterministicRng rng(seed);
    grid_ = (side + kPatch - 1) / kPatch;
    const std::size_t tokens = grid_ * grid_;
    embed_ = nn::he_uniform(kPatch * kPatch, kDim, kPatch * kPatch, rng);
    embed_bias_ = nn::small_uniform(kDim, 0.02, rng);
    pos_ = nn::Matrix(tokens, kDim);
    for (double& v : pos_.data) v = rng.uniform(-0.1, 0.1);
    wq_ = nn::he_uniform(kDim, kDim, kDim, rng);
    wk_ = nn::he_uniform(kDim, kDim, kDim, rng);
    wv_ = nn::he_uniform(kDim, kDim, kDim, rng);
    wo_ = nn::he_uniform(kDim, kDim, kDim, rng);
    w1_ = nn::he_uniform(kDim, kHidden, kDim, rng);
    b1_ = nn::small_uniform(kHidden, 0.02, rng);
    w2_ = nn::he_uniform(kHidden, kDim, kHidden, rng);
    b2_ = nn::small_uniform(kDim, 0.02, rng);
    head_ = nn::he_uniform(kDim, outputs, kDim, rng);
    head_bias_ = nn::small_uniform(outputs, 0.05, rng);
  }

  std::vector<double> forward(const Image8& img) const {
    const Image8 input = (static_cast<std::size_t>(img.width) == side_ && static_cast<std::size_t>(img.height) == side_)
                             ? img
                             : resize(img, static_cast<int>(side_));
    const std::size_t tokens = grid_ * grid_;
    nn::Matrix patches(tokens, kPatch * kPatch);
    for (std::size_t ty = 0; ty < grid_; ++ty) {
      for (std::size_t tx = 0; tx < grid_; ++tx) {
        const std::size_t t = ty * grid_ + tx;
        for (std::size_t py = 0; py < kPatch; ++py) {
          for (std::size_t px = 0; px < kPatch; ++px) {
            const std::size_t x = tx * kPatch + px, y = ty * kPatch + py;
            const double v = (x < side_ && y < side_) ? input.at(static_cast<int>(x), static_cast<int>(y)) / 255.0 : 0.0;
            patches(t, py * kPatch + px) = v - 0.5;
          }
        }
      }
    }
    nn::Matrix x = nn::matmul(patches, embed_);
    nn::add_row_bias(x, embed_bias_);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += pos_.data[i];

    nn::Matrix h = x;
    nn::layer_norm_rows(h);
    const nn::Matrix q = nn::matmul(h, wq_);
    const nn::Matrix k = nn::matmul(h, wk_);
    const nn::Matrix v = nn::matmul(h, wv_);
    nn::Matrix attn = nn::matmul_transposed(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kDim));
    for (double& a : attn.data) a *= scale;
    nn::softmax_rows(attn);
    const nn::Matrix mixed = nn::matmul(nn::matmul(attn, v), wo_);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += mixed.data[i];

    nn::Matrix m = x;
    nn::layer_norm_rows(m);
    m = nn::matmul(m, w1_);
    nn::add_row_bias(m, b1_);
    nn::gelu_inplace(m);
    m = nn::matmul(m, w2_);
    nn::add_row_bias(m, b2_);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += m.data[i];
    nn::layer_norm_rows(x);

    nn::Matrix pooled(1, kDim);
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t d = 0; d < kDim; ++d) pooled(0, d) += x(t, d);
    }
    for (double& p : pooled.data) p /= static_cast<double>(tokens);
    nn::Matrix logits = nn::matmul(pooled, head_);
    nn::add_row_bias(logits, head_bias_);
    return logits.data;
  }

 private:
  std::size_t side_;
  std::size_t grid_ = 0;
  nn::Matrix embed_, pos_, wq_, wk_, wv_, wo_, w1_, w2_, head_;
  std::vector<double> embed_bias_, b1_, b2_, head_bias_;
};

/// Summed-area table for O(1) box means.
class IntegralImage {
 public:
  explicit IntegralImage(const Image8& img) : w_(img.width), h_(img.height) {
    sum_.assign(static_cast<std::size_t>(w_ + 1) * (h_ + 1), 0.0);
    sq_.assign(sum_.size(), 0.0);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const double v = img.at(x, y) / 255.0;
        idx_set(sum_, x + 1, y + 1, v + get(sum_, x, y + 1) + get(sum_, x + 1, y) - get(sum_, x, y));
        idx_set(sq_, x + 1, y + 1, v * v + get(sq_, x, y + 1) + get(sq_, x + 1, y) - get(sq_, x, y));
      }
    }
  }

  /// Mean and mean-square over the box clipped to the image; zeros when the
  /// clipped box is empty.
  std::pair<double, double> moments(double x1, double y1, double x2, double y2) const {
    const int ix1 = std::clamp(static_cast<int>(std::floor(x1)), 0, w_);
    const int iy1 = std::clamp(static_cast<int>(std::floor(y1)), 0, h_);
    const int ix2 = std::clamp(static_cast<int>(std::ceil(x2)), 0, w_);
    const int iy2 = std::clamp(static_cast<int>(std::ceil(y2)), 0, h_);
    const double n = static_cast<double>(ix2 - ix1) * (iy2 - iy1);
    if (n <= 0.0) return {0.0, 0.0};
    auto box = [&](const std::vector<double>& t) {
      return get(t, ix2, iy2) - get(t, ix1, iy2) - get(t, ix2, iy1) + get(t, ix1, iy1);
    };
    return {box(sum_) / n, box(sq_) / n};
  }

 private:
  double get(const std::vector<double>& t, int x, int y) const { return t[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  void idx_set(std::vector<double>& t, int x, int y, double v) { t[static_cast<std::size_t>(y) * (w_ + 1) + x] = v; }

  int w_, h_;
  std::vector<double> sum_, sq_;
};

constexpr std::size_t kDetFeatures = 8;
constexpr double kDetStride = 32.0;

}  // namespace

struct TinyReferenceBackend::Impl {
  ResolutionSet resolutions;
  TinyVit verify;
  TinyVit chest;
  TinyVit view;
  TinyVit keypoints;
  std::vector<std::pair<int, TinyVit>> per_resolution;
  nn::Matrix det_objectness;  // kDetFeatures x 1
  nn::Matrix det_classes;     // kDetFeatures x kPathologyCount
  nn::Matrix det_deltas;      // kDetFeatures x 4

  Impl(std::uint64_t seed, ResolutionSet rs)
      : resolutions(rs),
        verify(224, 2, mix_seed(seed, kTagVerify)),
        chest(224, 2, mix_seed(seed, kTagChest)),
        view(224, 2, mix_seed(seed, kTagView)),
        keypoints(224, 4 + 2 * kSpinePoints, mix_seed(seed, kTagKeypoints)) {
    for (int side : rs.sides) {
      per_resolution.emplace_back(
          side, TinyVit(static_cast<std::size_t>(side), 2, mix_seed(seed, kTagResolutionBase + static_cast<std::uint64_t>(side))));
    }
    DeterministicRng rng(mix_seed(seed, kTagDetect));
    det_objectness = nn::he_uniform(kDetFeatures, 1, kDetFeatures, rng);
    det_classes = nn::he_uniform(kDetFeatures, kPathologyCount, kDetFeatures, rng);
    det_deltas = nn::he_uniform(kDetFeatures, 4, kDetFeatures, rng);
  }
};

TinyReferenceBackend::TinyReferenceBackend(std::uint64_t seed, ResolutionSet resolutions)
    : impl_(std::make_unique<Impl>(seed, resolutions)) {}

TinyReferenceBackend::~TinyReferenceBackend() = default;

namespace {

BinaryScore binary_from_logits(const std::vector<double>& logits) {
  const double p = nn::softmax(logits)[1];
  return {p >= 0.5, p};
}

}  // namespace

BinaryScore TinyReferenceBackend::verify_xray(const StageInput& in) const {
  return binary_from_logits(impl_->verify.forward(in.image));
}

BinaryScore TinyReferenceBackend::identify_chest(const StageInput& in) const {
  return binary_from_logits(impl_->chest.forward(in.image));
}

ViewScore TinyReferenceBackend::classify_view(const StageInput& in) const {
  return view_from_ap_probability(nn::softmax(impl_->view.forward(in.image))[1]);
}

KeypointSet TinyReferenceBackend::detect_keypoints(const StageInput& in) const {
  if (in.image.empty()) throw Error(Errc::KeypointsNotFound, "empty image");
  const auto raw = impl_->keypoints.forward(in.image);
  const double max_x = in.image.width - 1;
  const double max_y = in.image.height - 1;
  auto point = [&](std::size_t i) {
    return Point{std::clamp(nn::sigmoid(raw[2 * i]) * max_x, 0.0, max_x),
                 std::clamp(nn::sigmoid(raw[2 * i + 1]) * max_y, 0.0, max_y)};
  };
  KeypointSet kp;
  kp.left_clavicle = point(0);
  kp.right_clavicle = point(1);
  for (std::size_t i = 0; i < kSpinePoints; ++i) kp.spinous_process.push_back(point(2 + i));
  if (kp.left_clavicle == kp.right_clavicle) throw Error(Errc::KeypointsNotFound, "coincident clavicle estimates");
  return kp;
}

ProbabilityVector TinyReferenceBackend::classify_normal_abnormal(const StageInput& in, int resolution) const {
  for (const auto& [side, net] : impl_->per_resolution) {
    if (side == resolution) {
      ProbabilityVector p{nn::softmax(net.forward(in.image))};
      p.validate();
      return p;
    }
  }
  throw Error(Errc::UnsupportedResolution, std::to_string(resolution));
}

std::vector<Detection> TinyReferenceBackend::detect_pathologies(const StageInput& in) const {
  const Image8& img = in.image;
  if (img.empty()) return {};
  const IntegralImage integral(img);
  const int grid_w = std::max(1, static_cast<int>(std::ceil(img.width / kDetStride)));
  const int grid_h = std::max(1, static_cast<int>(std::ceil(img.height / kDetStride)));
  const double max_dim = std::max(img.width, img.height);
  const ImageBounds bounds{static_cast<double>(img.width), static_cast<double>(img.height)};

  std::vector<Detection> out;
  for (const Anchor& a : generate_anchors(grid_w, grid_h, kDetStride)) {
    const auto [box_mean, box_sq] = integral.moments(a.box.x1(), a.box.y1(), a.box.x2(), a.box.y2());
    const double cx = a.box.center_x(), cy = a.box.center_y();
    const auto [cell_mean, cell_sq] =
        integral.moments(cx - kDetStride / 2, cy - kDetStride / 2, cx + kDetStride / 2, cy + kDetStride / 2);
    nn::Matrix f(1, kDetFeatures);
    f(0, 0) = box_mean - 0.5;
    f(0, 1) = std::sqrt(std::max(0.0, box_sq - box_mean * box_mean));
    f(0, 2) = cell_mean - box_mean;
    f(0, 3) = std::sqrt(std::max(0.0, cell_sq - cell_mean * cell_mean));
    f(0, 4) = cx / img.width - 0.5;
    f(0, 5) = cy / img.height - 0.5;
    f(0, 6) = a.size / max_dim - 0.5;
    f(0, 7) = std::log(a.ratio);

    const double objectness = nn::sigmoid(4.0 * nn::matmul(f, impl_->det_objectness)(0, 0));
    const nn::Matrix class_logits = nn::matmul(f, impl_->det_classes);
    const auto best = std::max_element(class_logits.data.begin(), class_logits.data.end());
    const nn::Matrix raw = nn::matmul(f, impl_->det_deltas);
    const BoxDeltas deltas{std::tanh(raw(0, 0)), std::tanh(raw(0, 1)), std::tanh(raw(0, 2)), std::tanh(raw(0, 3))};
    try {
      out.push_back({decode_deltas(deltas, a.box, {}, bounds),
                     PathologyLabel::from_index(static_cast<std::size_t>(best - class_logits.data.begin())),
                     objectness});
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateResult && e.code() != Errc::InvalidBox) throw;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixture replay

json fixture_score(double score) { return json{{"score", score}}; }

json fixture_view(View view, double score) { return json{{"label", std::string(to_string(view))}, {"score", score}}; }

json fixture_keypoints(const KeypointSet& kp) {
  json spine = json::array();
  for (const Point& p : kp.spinous_process) spine.push_back({p.x, p.y});
  return json{{"left_clavicle", {kp.left_clavicle.x, kp.left_clavicle.y}},
              {"right_clavicle", {kp.right_clavicle.x, kp.right_clavicle.y}},
              {"spinous_process", spine}};
}

json fixture_probs(const ProbabilityVector& p) { return json{{"probs", p.probs}}; }

json fixture_detections(std::span<const Detection> dets) {
  json arr = json::array();
  for (const Detection& d : dets) {
    arr.push_back({{"label", std::string(d.label.name())},
                   {"x1", d.bbox.x1()},
                   {"y1", d.bbox.y1()},
                   {"x2", d.bbox.x2()},
                   {"y2", d.bbox.y2()},
                   {"score", d.score}});
  }
  return json{{"detections", arr}};
}

std::string fixture_line(const FixtureRecord& rec) {
  nlohmann::ordered_json j;
  j["image_digest"] = rec.image_digest;
  j["stage"] = rec.stage;
  if (rec.resolution) j["resolution"] = *rec.resolution;
  j["output"] = rec.output;
  return j.dump();
}

FixtureRecord parse_fixture_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    FixtureRecord rec;
    rec.image_digest = j.at("image_digest").get<std::string>();
    rec.stage = j.at("stage").get<std::string>();
    if (j.contains("resolution")) rec.resolution = j.at("resolution").get<int>();
    rec.output = j.at("output");
    return rec;
  } catch (const json::exception& e) {
    throw Error(Errc::Config, std::string("bad fixture record: ") + e.what());
  }
}

FixtureBackend::FixtureBackend(std::vector<FixtureRecord> records, ResolutionSet resolutions)
    : resolutions_(resolutions) {
  for (auto& rec : records) {
    entries_[Key{rec.image_digest, rec.stage, rec.resolution.value_or(0)}] = std::move(rec.output);
  }
}

FixtureBackend FixtureBackend::load(const std::filesystem::path& path, ResolutionSet resolutions) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open fixture file " + path.string());
  std::vector<FixtureRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_fixture_line(line));
  }
  return FixtureBackend(std::move(records), resolutions);
}

const json* FixtureBackend::find(const std::string& digest, std::string_view stage, int resolution) const {
  auto it = entries_.find(Key{digest, std::string(stage), resolution});
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

[[noreturn]] void fixture_miss(std::string_view stage, const std::string& digest) {
  throw Error(Errc::BackendUnavailable, "no fixture for " + std::string(stage) + " @ " + digest);
}

BinaryScore replay_score(const json* out, std::string_view stage, const std::string& digest) {
  if (out == nullptr) fixture_miss(stage, digest);
  const double s = out->at("score").get<double>();
  if (!(s >= 0.0 && s <= 1.0)) throw Error(Errc::InvalidProbability, "fixture score outside [0,1]");
  return {s >= 0.5, s};
}

Point parse_point(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

BinaryScore FixtureBackend::verify_xray(const StageInput& in) const {
  return replay_score(find(in.digest, kStageVerifyXray), kStageVerifyXray, in.digest);
}

BinaryScore FixtureBackend::identify_chest(const StageInput& in) const {
  return replay_score(find(in.digest, kStageIdentifyChest), kStageIdentifyChest, in.digest);
}

ViewScore FixtureBackend::classify_view(const StageInput& in) const {
  const json* out = find(in.digest, kStageClassifyView);
  if (out == nullptr) fixture_miss(kStageClassifyView, in.digest);
  const std::string label = out->at("label").get<std::string>();
  const double score = out->at("score").get<double>();
  if (label != "PA" && label != "AP") throw Error(Errc::Config, "fixture view label " + label);
  if (!(score >= 0.0 && score <= 1.0)) throw Error(Errc::InvalidProbability, "fixture score outside [0,1]");
  const View recorded = label == "AP" ? View::AP : View::PA;
  const View other = recorded == View::AP ? View::PA : View::AP;
  if (score > 0.5) return {recorded, score};
  if (score == 0.5) return {View::PA, 0.5};
  return {other, 1.0 - score};
}

KeypointSet FixtureBackend::detect_keypoints(const StageInput& in) const {
  const json* out = find(in.digest, kStageDetectKeypoints);
  if (out == nullptr) throw Error(Errc::KeypointsNotFound, "no fixture keypoints @ " + in.digest);
  KeypointSet kp;
  kp.left_clavicle = parse_point(out->at("left_clavicle"));
  kp.right_clavicle = parse_point(out->at("right_clavicle"));
  for (const json& p : out->at("spinous_process")) kp.spinous_process.push_back(parse_point(p));
  return kp;
}

ProbabilityVector FixtureBackend::classify_normal_abnormal(const StageInput& in, int resolution) const {
  if (!resolutions_.contains(resolution)) throw Error(Errc::UnsupportedResolution, std::to_string(resolution));
  const json* out = find(in.digest, kStageNormalAbnormal, resolution);
  if (out == nullptr) fixture_miss(kStageNormalAbnormal, in.digest + "@" + std::to_string(resolution));
  ProbabilityVector p{out->at("probs").get<std::vector<double>>()};
  if (p.size() != 2) throw Error(Errc::InvalidProbability, "normal/abnormal output must have two classes");
  p.validate();
  return p;
}

std::vector<Detection> FixtureBackend::detect_pathologies(const StageInput& in) const {
  const json* out = find(in.digest, kStageDetectPathologies);
  if (out == nullptr) fixture_miss(kStageDetectPathologies, in.digest);
  std::vector<Detection> dets;
  for (const json& d : out->at("detections")) {
    dets.push_back({BBox(d.at("x1").get<double>(), d.at("y1").get<double>(), d.at("x2").get<double>(),
                         d.at("y2").get<double>()),
                    PathologyLabel::parse(d.at("label").get<std::string>()), d.at("score").get<double>()});
  }
  return dets;
}

// ---------------------------------------------------------------------------

namespace {

/// Correctly rounded arithmetic mean. The sum of doubles in [0,1] is exact
/// at 1200 bits; dividing at that precision and converting once is
/// correctly rounded because a quotient by a small integer is either
/// dyadic or has a periodic binary expansion that can never sit on a
/// 53-bit midpoint.
double exact_mean(std::span<const double> values) {
  mpfr_t acc, term;
  mpfr_init2(acc, 1200);
  mpfr_init2(term, 64);
  mpfr_set_zero(acc, 1);
  for (double v : values) {
    mpfr_set_d(term, v, MPFR_RNDN);
    mpfr_add(acc, acc, term, MPFR_RNDN);
  }
  mpfr_div_ui(acc, acc, static_cast<unsigned long>(values.size()), MPFR_RNDN);
  const double out = mpfr_get_d(acc, MPFR_RNDN);
  mpfr_clear(acc);
  mpfr_clear(term);
  return out;
}

}  // namespace

ProbabilityVector ensemble_average(std::span<const ProbabilityVector> per_resolution) {
  if (per_resolution.size() != 3) {
    throw Error(Errc::ArityMismatch, "expected 3 per-resolution vectors, got " + std::to_string(per_resolution.size()));
  }
  const std::size_t classes = per_resolution.front().size();
  for (const auto& p : per_resolution) {
    if (p.size() != classes) throw Error(Errc::ArityMismatch, "class counts differ");
    p.validate();
  }
  ProbabilityVector out;
  out.probs.resize(classes);
  std::vector<double> column(per_resolution.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t r = 0; r < per_resolution.size(); ++r) column[r] = per_resolution[r][c];
    out.probs[c] = exact_mean(column);
  }
  return out;
}

Decision decide(const ProbabilityVector& p, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::InvalidArgument, "threshold must be in (0,1)");
  if (p.size() != 2) throw Error(Errc::ArityMismatch, "decide expects a two-class vector");
  return p[kAbnormalIndex] >= threshold ? Decision::Abnormal : Decision::Normal;
}

}  // namespace cxr
