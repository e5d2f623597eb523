#include "mvs/dataset.hpp"

#include "mvs/error.hpp"
#include "mvs/image_io.hpp"
#include "mvs/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace mvs {

using nlohmann::ordered_json;

std::string_view view_name(ViewKey key) {
  static constexpr std::array<std::string_view, kNumViews> names{"R_v1", "R_v2", "L_v1", "L_v2"};
  return names[view_index(key)];
}

std::optional<ViewKey> parse_view(std::string_view name) {
  for (auto key : kCanonicalViews)
    if (view_name(key) == name) return key;
  return std::nullopt;
}

std::string_view label_name(ClassLabel label) {
  switch (label) {
    case ClassLabel::Control: return "control";
    case ClassLabel::Stroke: return "stroke";
    case ClassLabel::Tia: return "tia";
  }
  return "?";
}

std::optional<ClassLabel> parse_label(std::string_view name) {
  for (auto label : kAllClasses)
    if (label_name(label) == name) return label;
  return std::nullopt;
}

std::size_t SubjectRecord::bound_views() const {
  return static_cast<std::size_t>(std::count_if(views.begin(), views.end(), [](const auto& v) { return v.has_value(); }));
}

int CountTable::view_total(ViewKey key) const {
  int sum = 0;
  for (const auto& row : images) sum += row[view_index(key)];
  return sum;
}

int CountTable::class_total(ClassLabel label) const {
  int sum = 0;
  for (int v : images[class_index(label)]) sum += v;
  return sum;
}

int CountTable::total() const {
  int sum = 0;
  for (auto label : kAllClasses) sum += class_total(label);
  return sum;
}

CountTable summarize(const DatasetManifest& manifest) {
  CountTable table;
  for (const auto& s : manifest.subjects) {
    const int c = class_index(s.label);
    ++table.participants[c];
    for (std::size_t v = 0; v < kNumViews; ++v)
      if (s.views[v]) ++table.images[c][v];
  }
  return table;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  throw Error(ErrorKind::SchemaViolation, field + ": " + what);
}

const ordered_json& require(const ordered_json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(where + "." + key, "missing");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) schema_error(where + "." + key, "expected string");
  return v.get<std::string>();
}

std::string_view source_name(Source s) { return s == Source::Clinical ? "clinical" : "synthetic"; }

}  // namespace

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    schema_error("<document>", e.what());
  }
  if (!doc.is_object()) schema_error("<document>", "expected object");
  for (const auto& [key, _] : doc.items())
    if (key != "schema_version" && key != "subjects") schema_error(key, "unknown key");

  DatasetManifest manifest;
  manifest.base_dir = base_dir;
  manifest.schema_version = require_string(doc, "schema_version", "manifest");
  if (manifest.schema_version != kManifestSchemaVersion)
    schema_error("schema_version", "unsupported version " + manifest.schema_version);

  const auto& subjects = require(doc, "subjects", "manifest");
  if (!subjects.is_array()) schema_error("subjects", "expected array");

  std::set<std::string> seen;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    const std::string where = "subjects[" + std::to_string(i) + "]";
    if (!s.is_object()) schema_error(where, "expected object");
    for (const auto& [key, _] : s.items())
      if (key != "id" && key != "label" && key != "views" && key != "source")
        schema_error(where + "." + key, "unknown key");

    SubjectRecord record;
    record.id = require_string(s, "id", where);
    if (record.id.empty()) schema_error(where + ".id", "empty");
    const auto label = parse_label(require_string(s, "label", where));
    if (!label) schema_error(where + ".label", "expected one of control, stroke, tia");
    record.label = *label;
    if (auto it = s.find("source"); it != s.end()) {
      if (*it == "clinical") record.source = Source::Clinical;
      else if (*it == "synthetic") record.source = Source::Synthetic;
      else schema_error(where + ".source", "expected clinical or synthetic");
    }
    const auto& views = require(s, "views", where);
    if (!views.is_object()) schema_error(where + ".views", "expected object");
    for (const auto& [key, value] : views.items()) {
      const auto view = parse_view(key);
      if (!view) schema_error(where + ".views." + key, "unknown view key");
      if (!value.is_string() || value.get<std::string>().empty())
        schema_error(where + ".views." + key, "expected non-empty path");
      record.views[view_index(*view)] = std::filesystem::path(value.get<std::string>());
    }
    if (!seen.insert(record.id).second) throw Error(ErrorKind::DuplicateSubject, record.id);
    manifest.subjects.push_back(std::move(record));
  }
  manifest.summary = summarize(manifest);
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), path.parent_path());
}

std::string manifest_to_string(const DatasetManifest& manifest) {
  ordered_json doc;
  doc["schema_version"] = manifest.schema_version;
  doc["subjects"] = ordered_json::array();
  for (const auto& s : manifest.subjects) {
    ordered_json entry;
    entry["id"] = s.id;
    entry["label"] = std::string(label_name(s.label));
    entry["source"] = std::string(source_name(s.source));
    ordered_json views = ordered_json::object();
    for (auto key : kCanonicalViews)
      if (const auto& p = s.views[view_index(key)]) views[std::string(view_name(key))] = p->generic_string();
    entry["views"] = std::move(views);
    doc["subjects"].push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  out << manifest_to_string(manifest);
  if (!out) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Completion

Completion complete_or_exclude(const std::string& subject_id, ClassLabel label,
                               const std::array<std::optional<Image>, kNumViews>& views) {
  for (auto type : {ViewType::V1, ViewType::V2}) {
    const ViewKey right{Eye::Right, type};
    if (!views[view_index(right)] && !views[view_index(contralateral(right))]) {
      return ExcludedSubject{subject_id, label,
                             std::string("no contralateral ") + (type == ViewType::V1 ? "v1" : "v2")};
    }
  }
  ImageSet set;
  set.subject_id = subject_id;
  set.label = label;
  for (auto key : kCanonicalViews) {
    const auto i = view_index(key);
    if (views[i]) {
      set.images[i] = std::make_shared<const Image>(*views[i]);
      set.provenance[i] = Provenance::Original;
    } else {
      set.images[i] = std::make_shared<const Image>(mirror_horizontal(*views[view_index(contralateral(key))]));
      set.provenance[i] = Provenance::MirroredFromContralateral;
    }
  }
  return set;
}

Image load_standardized(const std::filesystem::path& path) { return standardize(read_image(path)); }

Completion complete_or_exclude(const SubjectRecord& record, const std::filesystem::path& base_dir,
                               const ImageLoader& loader) {
  std::array<std::optional<Image>, kNumViews> views;
  for (auto key : kCanonicalViews) {
    const auto& rel = record.views[view_index(key)];
    if (!rel) continue;
    const auto path = rel->is_absolute() ? *rel : base_dir / *rel;
    try {
      views[view_index(key)] = loader(path);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::UnreadableImage,
                  record.id + " view " + std::string(view_name(key)) + " (" + path.string() + "): " + e.what());
    }
  }
  return complete_or_exclude(record.id, record.label, views);
}

LoadedDataset load_dataset(const DatasetManifest& manifest, const ImageLoader& loader) {
  LoadedDataset out;
  out.sets.reserve(manifest.subjects.size());
  for (const auto& record : manifest.subjects) {
    auto result = complete_or_exclude(record, manifest.base_dir, loader);
    if (auto* set = std::get_if<ImageSet>(&result)) out.sets.push_back(std::move(*set));
    else out.excluded.push_back(std::get<ExcludedSubject>(std::move(result)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Folds

int FoldPlan::fold_of(std::string_view subject_id) const {
  for (const auto& [id, fold] : assignment)
    if (id == subject_id) return fold;
  return -1;
}

std::vector<std::string> FoldPlan::test_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignment)
    if (f == fold) ids.push_back(id);
  return ids;
}

std::vector<std::string> FoldPlan::train_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignment)
    if (f != fold) ids.push_back(id);
  return ids;
}

FoldPlan make_folds(std::span<const SubjectLabel> subjects, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "fold count must be at least 2");
  std::set<std::string_view> ids;
  for (const auto& s : subjects)
    if (!ids.insert(s.id).second) throw Error(ErrorKind::DuplicateSubject, s.id);

  std::vector<int> fold(subjects.size(), -1);
  int next = 0;
  for (auto label : kAllClasses) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (subjects[i].label == label) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < static_cast<std::size_t>(k))
      throw Error(ErrorKind::TooFewSubjectsInClass, std::string(label_name(label)) + " has " +
                                                        std::to_string(members.size()) + " subjects for " +
                                                        std::to_string(k) + " folds");
    auto rng = make_stream(seed, {tag(StreamTag::Folds), static_cast<std::uint64_t>(class_index(label))});
    std::shuffle(members.begin(), members.end(), rng);
    for (auto i : members) {
      fold[i] = next;
      next = (next + 1) % k;
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.reserve(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) plan.assignment.emplace_back(subjects[i].id, fold[i]);
  return plan;
}

FoldPlan make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  std::vector<SubjectLabel> subjects;
  subjects.reserve(manifest.subjects.size());
  for (const auto& s : manifest.subjects) subjects.push_back({s.id, s.label});
  return make_folds(subjects, k, seed);
}

std::string fold_plan_to_string(const FoldPlan& plan) {
  ordered_json doc;
  doc["k"] = plan.k;
  doc["seed"] = plan.seed;
  ordered_json assignment = ordered_json::object();
  for (const auto& [id, fold] : plan.assignment) assignment[id] = fold;
  doc["assignment"] = std::move(assignment);
  return doc.dump(2) + "\n";
}

FoldPlan parse_fold_plan(std::string_view text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    schema_error("<fold plan>", e.what());
  }
  FoldPlan plan;
  if (!doc.contains("k") || !doc["k"].is_number_integer()) schema_error("k", "expected integer");
  if (!doc.contains("seed") || !doc["seed"].is_number_unsigned()) schema_error("seed", "expected unsigned integer");
  if (!doc.contains("assignment") || !doc["assignment"].is_object()) schema_error("assignment", "expected object");
  plan.k = doc["k"].get<int>();
  plan.seed = doc["seed"].get<std::uint64_t>();
  for (const auto& [id, fold] : doc["assignment"].items()) {
    if (!fold.is_number_integer() || fold.get<int>() < 0 || fold.get<int>() >= plan.k)
      schema_error("assignment." + id, "fold index out of range");
    plan.assignment.emplace_back(id, fold.get<int>());
  }
  return plan;
}

}  // namespace mvs
