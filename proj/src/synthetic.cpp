#include "mvs/synthetic.hpp"

#include "mvs/error.hpp"
#include "mvs/image_io.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace mvs {

using nlohmann::ordered_json;

void SynthSpec::validate() const {
  for (int n : subjects_per_class)
    if (n < 0) throw Error(ErrorKind::InvalidArgument, "subjects_per_class must be non-negative");
  if (image_side < 16) throw Error(ErrorKind::InvalidArgument, "image_side must be at least 16");
  if (!(missing_view_rate >= 0.0 && missing_view_rate < 1.0))
    throw Error(ErrorKind::InvalidArgument, "missing_view_rate must lie in [0,1)");
  if (!(marker_contrast > 0.0 && marker_contrast <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "marker_contrast must lie in (0,1]");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise_sigma must be non-negative");
}

SynthSpec parse_synth_spec(std::string_view json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::SchemaViolation, "synthetic spec must be an object");
  SynthSpec spec;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "subjects_per_class") {
        for (const auto& [name, count] : value.items()) {
          const auto label = parse_label(name);
          if (!label) throw Error(ErrorKind::SchemaViolation, "subjects_per_class." + name + ": unknown class");
          spec.subjects_per_class[class_index(*label)] = count.get<int>();
        }
      } else if (key == "image_side") {
        spec.image_side = value.get<int>();
      } else if (key == "missing_view_rate") {
        spec.missing_view_rate = value.get<double>();
      } else if (key == "marker_contrast") {
        spec.marker_contrast = value.get<double>();
      } else if (key == "noise_sigma") {
        spec.noise_sigma = value.get<double>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw Error(ErrorKind::SchemaViolation, key + ": unknown key");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, e.what());
  }
  spec.validate();
  return spec;
}

std::string synth_spec_to_string(const SynthSpec& spec) {
  ordered_json doc;
  ordered_json counts;
  for (auto label : kAllClasses) counts[std::string(label_name(label))] = spec.subjects_per_class[class_index(label)];
  doc["subjects_per_class"] = counts;
  doc["image_side"] = spec.image_side;
  doc["missing_view_rate"] = spec.missing_view_rate;
  doc["marker_contrast"] = spec.marker_contrast;
  doc["noise_sigma"] = spec.noise_sigma;
  doc["seed"] = spec.seed;
  return doc.dump(2) + "\n";
}

ClassLabel oracle_label(const ViewBits& bits) {
  const int r1 = bits[view_index({Eye::Right, ViewType::V1})];
  const int l1 = bits[view_index({Eye::Left, ViewType::V1})];
  const int r2 = bits[view_index({Eye::Right, ViewType::V2})];
  const int l2 = bits[view_index({Eye::Left, ViewType::V2})];
  if ((r1 ^ l1) == 0) return ClassLabel::Control;
  return (r2 ^ l2) == 0 ? ClassLabel::Stroke : ClassLabel::Tia;
}

ViewBits draw_bits(ClassLabel label, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  ViewBits bits{};
  const int r1 = coin(rng), r2 = coin(rng), free_bit = coin(rng);
  const int positive = is_positive(label) ? 1 : 0;
  const int l2 = label == ClassLabel::Control ? free_bit : (r2 ^ (label == ClassLabel::Tia ? 1 : 0));
  bits[view_index({Eye::Right, ViewType::V1})] = r1;
  bits[view_index({Eye::Left, ViewType::V1})] = r1 ^ positive;
  bits[view_index({Eye::Right, ViewType::V2})] = r2;
  bits[view_index({Eye::Left, ViewType::V2})] = l2;
  return bits;
}

Image render_view(ViewKey key, int bit, int side, double contrast, double noise_sigma, Rng& rng) {
  constexpr double kDiscRadius = 0.46;
  constexpr std::array<double, 3> kTint{1.0, 0.55, 0.25};
  const double pi = std::numbers::pi;

  // Cosmetic texture: a faint vessel-like ripple with a random orientation.
  const double angle = uniform(rng, 0.0, pi);
  const double phase = uniform(rng, 0.0, 2.0 * pi);
  const double freq = uniform(rng, 6.0, 10.0);
  // Optic disc (bright) or macula (dark) at the centre, mirrored between eyes.
  const double centre_x = key.eye == Eye::Right ? 0.56 : 0.44;
  const double centre_gain = key.view == ViewType::V1 ? 0.18 : -0.12;

  const double lo = bit == 0 ? kMarkerOffset : 1.0 - kMarkerOffset - kMarkerSize;
  const double hi = lo + kMarkerSize;

  std::normal_distribution<double> noise(0.0, 1.0);
  Image image(side, side);
  for (int y = 0; y < side; ++y) {
    const double v = (y + 0.5) / side;
    for (int x = 0; x < side; ++x) {
      const double u = (x + 0.5) / side;
      const double r = std::hypot(u - 0.5, v - 0.5) / kDiscRadius;
      double base = 0.0;
      if (r <= 1.0) {
        const double illumination = 0.15 + 0.85 * 0.5 * (u + v);
        const double ripple = 1.0 + 0.06 * std::sin(2 * pi * freq * (u * std::cos(angle) + v * std::sin(angle)) + phase);
        const double spot = centre_gain * std::exp(-(std::pow(u - centre_x, 2) + std::pow(v - 0.5, 2)) / 0.004);
        base = std::max(0.0, (0.75 - 0.35 * r * r) * illumination * ripple + spot);
      }
      const bool marker = u >= lo && u < hi && v >= lo && v < hi;
      for (int c = 0; c < 3; ++c) {
        double value = base * kTint[c];
        if (marker) value += contrast * (1.0 - value);
        if (noise_sigma > 0) value += noise_sigma * noise(rng);
        image(c, y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return image;
}

SyntheticSubject synthesize_subject(const SynthSpec& spec, std::size_t index, ClassLabel label,
                                    std::array<Image, kNumViews>* images) {
  auto rng = make_stream(spec.seed, {tag(StreamTag::Synthetic), index});
  SyntheticSubject subject;
  char id[32];
  std::snprintf(id, sizeof id, "S%04zu", index + 1);
  subject.record.id = id;
  subject.record.label = label;
  subject.record.source = Source::Synthetic;
  subject.bits = draw_bits(label, rng);

  std::array<bool, kNumViews> present{true, true, true, true};
  std::bernoulli_distribution missing(spec.missing_view_rate);
  std::bernoulli_distribution pick_right(0.5);
  for (auto type : {ViewType::V1, ViewType::V2}) {
    const bool drop = missing(rng);
    const bool right = pick_right(rng);
    if (drop) present[view_index({right ? Eye::Right : Eye::Left, type})] = false;
  }

  for (auto key : kCanonicalViews) {
    const auto i = view_index(key);
    // Render even absent views so the stream position never depends on which are missing.
    Image image = render_view(key, subject.bits[i], spec.image_side, spec.marker_contrast, spec.noise_sigma, rng);
    if (!present[i]) continue;
    subject.record.views[i] = std::filesystem::path("images") / (subject.record.id + "_" + std::string(view_name(key)) + ".png");
    if (images) (*images)[i] = std::move(image);
  }
  return subject;
}

DatasetManifest generate_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw Error(ErrorKind::IOFailure, "cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  ordered_json truth = ordered_json::object();
  std::size_t index = 0;
  for (auto label : kAllClasses) {
    for (int n = 0; n < spec.subjects_per_class[class_index(label)]; ++n, ++index) {
      std::array<Image, kNumViews> images;
      auto subject = synthesize_subject(spec, index, label, &images);
      for (auto key : kCanonicalViews) {
        const auto i = view_index(key);
        if (subject.record.views[i]) write_png(out_dir / *subject.record.views[i], images[i]);
      }
      ordered_json bits;
      for (auto key : kCanonicalViews) bits[std::string(view_name(key))] = subject.bits[view_index(key)];
      truth[subject.record.id] = bits;
      manifest.subjects.push_back(std::move(subject.record));
    }
  }
  manifest.summary = summarize(manifest);
  write_manifest(manifest, out_dir / "manifest.json");

  std::ofstream out(out_dir / "truth.json", std::ios::binary);
  out << truth.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::IOFailure, "cannot write truth.json");
  return manifest;
}

}  // namespace mvs
