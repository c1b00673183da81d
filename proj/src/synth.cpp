#include "cxr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "cxr/error.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/random.hpp"

namespace cxr {

namespace {

double round_to(double v, double step) { return std::round(v / step) * step; }

Image8 synthetic_chest(int w, int h, DeterministicRng& rng) {
  Image8 img(w, h);
  const double cx = w / 2.0;
  const double lung_dx = w * 0.2, lung_rx = w * 0.15, lung_ry = h * 0.3, lung_cy = h * 0.5;
  const double blob_x = rng.uniform(0.2, 0.8) * w, blob_y = rng.uniform(0.3, 0.8) * h, blob_r = rng.uniform(2, 8);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 150.0;
      for (double side : {-1.0, 1.0}) {
        const double ex = (x - (cx + side * lung_dx)) / lung_rx, ey = (y - lung_cy) / lung_ry;
        if (ex * ex + ey * ey < 1.0) v = 60.0;
      }
      if (std::abs(x - cx) < w * 0.04) v = 220.0;  // spine
      if (std::hypot(x - blob_x, y - blob_y) < blob_r) v += 50.0;
      v += rng.uniform(-12, 12);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

RawImage to_raw(const Image8& img) {
  RawImage raw;
  raw.width = img.width;
  raw.height = img.height;
  raw.bits_stored = 12;
  raw.pixels.reserve(img.pixels.size());
  for (std::uint8_t p : img.pixels) raw.pixels.push_back(static_cast<std::uint16_t>(p) * 16);
  return raw;
}

Detection random_box(std::size_t label, int w, int h, double score, DeterministicRng& rng) {
  const double bw = rng.uniform(0.12, 0.35) * w, bh = rng.uniform(0.12, 0.35) * h;
  const double x1 = rng.uniform(0, w - bw), y1 = rng.uniform(0, h - bh);
  return {BBox(round_to(x1, 0.25), round_to(y1, 0.25), round_to(x1 + bw, 0.25), round_to(y1 + bh, 0.25)),
          PathologyLabel::from_index(label), score};
}

}  // namespace

KeypointSet upright_keypoints(int width, int height) {
  KeypointSet kp;
  kp.left_clavicle = {0.3 * width, 0.25 * height};
  kp.right_clavicle = {0.7 * width, 0.25 * height};
  for (int i = 0; i < 4; ++i) kp.spinous_process.push_back({0.5 * width, (0.2 + 0.2 * i) * height});
  return kp;
}

std::vector<SynthStudy> synthesize(const SynthOptions& opts) {
  if (opts.width < 16 || opts.height < 16) throw Error(Errc::InvalidArgument, "synthetic images need sides >= 16");
  DeterministicRng rng(opts.seed);
  std::vector<SynthStudy> out;
  out.reserve(opts.count);
  static constexpr std::array<std::string_view, 4> kVendors{"GE Healthcare", "Siemens", "Philips", "Agfa"};
  for (std::size_t i = 0; i < opts.count; ++i) {
    SynthStudy s;
    StudyMetadata& m = s.metadata;
    m.study_id = fmt::format("SYN-{}-{:05}", opts.seed, i);
    m.patient_name = fmt::format("Doe^Synthetic{}", i);
    m.patient_id = fmt::format("P{:06}", rng.below(1000000));
    if (rng.uniform() > 0.05) m.patient_age_years = static_cast<int>(1 + rng.below(95));
    const double sex_draw = rng.uniform();
    m.sex = sex_draw < 0.03 ? Sex::Unknown : sex_draw < 0.5 ? Sex::Male : Sex::Female;
    m.manufacturer = normalize_manufacturer(kVendors[rng.below(kVendors.size())]);
    m.modality = rng.below(2) ? "DX" : "CR";
    m.machine_type = machine_type_for_modality(m.modality);
    m.view_hint = rng.below(2) ? ViewHint::PA : ViewHint::AP;
    m.acquired_at = "2024-03-01";

    const Image8 upright = synthetic_chest(opts.width, opts.height, rng);
    s.rotation_degrees = opts.rotation_degrees
                             ? *opts.rotation_degrees
                             : round_to(rng.uniform(-opts.max_rotation_degrees, opts.max_rotation_degrees), 0.01);
    const Image8 rotated = s.rotation_degrees == 0.0 ? upright : apply_rotation(upright, s.rotation_degrees);
    const RawImage raw = to_raw(rotated);
    s.dicom = serialize_dicom(m, raw);
    s.study_id = study_id_for(s.dicom);
    s.keypoints = rotate_keypoints(upright_keypoints(opts.width, opts.height), s.rotation_degrees, opts.width,
                                   opts.height);
    const std::string digest = image_digest(to_eight_bit(raw));

    auto add = [&](std::string_view stage, nlohmann::json output, std::optional<int> res = std::nullopt) {
      s.fixtures.push_back({digest, std::string(stage), res, std::move(output)});
    };
    const double u = rng.uniform();
    const bool xray = u >= opts.p_not_xray;
    const bool chest = u >= opts.p_not_xray + opts.p_not_chest;
    add(kStageVerifyXray, fixture_score(round_to(xray ? rng.uniform(0.6, 0.99) : rng.uniform(0.05, 0.4), 0.001)));
    add(kStageIdentifyChest, fixture_score(round_to(chest ? rng.uniform(0.6, 0.99) : rng.uniform(0.05, 0.4), 0.001)));
    add(kStageClassifyView, fixture_view(rng.below(2) ? View::PA : View::AP, round_to(rng.uniform(0.5, 0.99), 0.001)));
    add(kStageDetectKeypoints, fixture_keypoints(s.keypoints));

    const bool abnormal = rng.uniform() < opts.p_abnormal;
    for (int side : opts.resolutions.sides) {
      const double p = round_to(abnormal ? rng.uniform(0.6, 0.97) : rng.uniform(0.03, 0.4), 0.0001);
      add(kStageNormalAbnormal, fixture_probs({{1.0 - p, p}}), side);
    }

    std::vector<Detection> findings;
    std::vector<Detection> raw_dets;
    if (abnormal) {
      const std::size_t n = 1 + rng.below(3);
      for (std::size_t k = 0; k < n; ++k) {
        const Detection d = random_box(rng.below(kPathologyCount), opts.width, opts.height,
                                       round_to(rng.uniform(0.6, 0.99), 0.001), rng);
        findings.push_back(d);
        raw_dets.push_back(d);
        // A shifted duplicate for NMS to suppress.
        raw_dets.push_back({BBox(d.bbox.x1() + 1, d.bbox.y1() + 1, d.bbox.x2() + 1, d.bbox.y2() + 1), d.label,
                            round_to(d.score * 0.9, 0.001)});
      }
      raw_dets.push_back(
          random_box(rng.below(kPathologyCount), opts.width, opts.height, round_to(rng.uniform(0.05, 0.45), 0.001), rng));
    }
    add(kStageDetectPathologies, fixture_detections(raw_dets));

    const bool agrees = rng.uniform() < opts.p_reference_agrees;
    const bool ref_abnormal = agrees ? abnormal : !abnormal;
    s.reference.study_id = s.study_id;
    s.reference.label = ref_abnormal ? Decision::Abnormal : Decision::Normal;
    if (ref_abnormal) {
      if (abnormal) {
        for (const Detection& d : findings) s.reference.annotations.push_back({d.bbox, d.label, 1.0});
      } else {
        s.reference.annotations.push_back(random_box(rng.below(kPathologyCount), opts.width, opts.height, 1.0, rng));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SynthStudy> write_synthetic_corpus(const std::filesystem::path& dir, const SynthOptions& opts) {
  namespace fs = std::filesystem;
  std::vector<SynthStudy> studies = synthesize(opts);
  fs::create_directories(dir / "studies");
  std::ofstream fixtures(dir / "fixtures.ndjson", std::ios::binary | std::ios::trunc);
  std::ofstream refs(dir / "references.ndjson", std::ios::binary | std::ios::trunc);
  if (!fixtures || !refs) throw Error(Errc::Io, "cannot write corpus under " + dir.string());
  for (std::size_t i = 0; i < studies.size(); ++i) {
    std::ofstream f(dir / "studies" / fmt::format("{:05}.dcm", i), std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(studies[i].dicom.data()), static_cast<std::streamsize>(studies[i].dicom.size()));
    if (!f) throw Error(Errc::Io, "cannot write study file");
    for (const FixtureRecord& r : studies[i].fixtures) fixtures << fixture_line(r) << '\n';
    refs << reference_line(studies[i].reference) << '\n';
  }
  if (!fixtures || !refs) throw Error(Errc::Io, "corpus write failed");
  return studies;
}

}  // namespace cxr
