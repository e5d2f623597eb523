#pragma once

#include "mvs/image.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mvs {

// ---------------------------------------------------------------------------
// Views and labels

enum class Eye : std::uint8_t { Right, Left };
/// v1 is optic-nerve-head centred, v2 is macula centred.
enum class ViewType : std::uint8_t { V1, V2 };

struct ViewKey {
  Eye eye;
  ViewType view;
  auto operator<=>(const ViewKey&) const = default;
};

inline constexpr std::size_t kNumViews = 4;

/// (R,v1), (R,v2), (L,v1), (L,v2).
inline constexpr std::array<ViewKey, kNumViews> kCanonicalViews{{
    {Eye::Right, ViewType::V1},
    {Eye::Right, ViewType::V2},
    {Eye::Left, ViewType::V1},
    {Eye::Left, ViewType::V2},
}};

constexpr std::size_t view_index(ViewKey key) {
  return (key.eye == Eye::Right ? 0 : 2) + (key.view == ViewType::V1 ? 0 : 1);
}
constexpr ViewKey contralateral(ViewKey key) {
  return {key.eye == Eye::Right ? Eye::Left : Eye::Right, key.view};
}
std::string_view view_name(ViewKey key);
std::optional<ViewKey> parse_view(std::string_view name);

enum class ClassLabel : std::uint8_t { Control = 0, Stroke = 1, Tia = 2 };
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses{ClassLabel::Control, ClassLabel::Stroke,
                                                                 ClassLabel::Tia};

constexpr int class_index(ClassLabel label) { return static_cast<int>(label); }
/// Stroke and TIA are the positive class of the binary task.
constexpr bool is_positive(ClassLabel label) { return label != ClassLabel::Control; }
constexpr int binary_label(ClassLabel label) { return is_positive(label) ? 1 : 0; }
std::string_view label_name(ClassLabel label);
std::optional<ClassLabel> parse_label(std::string_view name);

enum class Task : std::uint8_t { Binary, Multiclass };
constexpr int num_outputs(Task task) { return task == Task::Binary ? 2 : 3; }
/// Target index of a label under the task's class encoding.
constexpr int target_index(ClassLabel label, Task task) {
  return task == Task::Binary ? binary_label(label) : class_index(label);
}

enum class Source : std::uint8_t { Clinical, Synthetic };

// ---------------------------------------------------------------------------
// Manifest

struct SubjectRecord {
  std::string id;
  ClassLabel label = ClassLabel::Control;
  /// Indexed by view_index(); paths are relative to the manifest directory.
  std::array<std::optional<std::filesystem::path>, kNumViews> views;
  Source source = Source::Clinical;

  std::size_t bound_views() const;
};

/// Image counts per class and view, plus participants per class.
struct CountTable {
  std::array<std::array<int, kNumViews>, kNumClasses> images{};
  std::array<int, kNumClasses> participants{};

  int view_total(ViewKey key) const;
  int class_total(ClassLabel label) const;
  int total() const;
  friend bool operator==(const CountTable&, const CountTable&) = default;
};

struct DatasetManifest {
  std::string schema_version = "1.0";
  std::vector<SubjectRecord> subjects;
  CountTable summary;
  /// Directory that relative image paths resolve against.
  std::filesystem::path base_dir;
};

inline constexpr std::string_view kManifestSchemaVersion = "1.0";

DatasetManifest load_manifest(const std::filesystem::path& path);
/// Parse an in-memory manifest document; `base_dir` anchors image paths.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
std::string manifest_to_string(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

CountTable summarize(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Completion of missing views

enum class Provenance : std::uint8_t { Original, MirroredFromContralateral };

using ImageRef = std::shared_ptr<const Image>;

/// The four standardized views of one subject in canonical order.
struct ImageSet {
  std::string subject_id;
  ClassLabel label = ClassLabel::Control;
  std::array<ImageRef, kNumViews> images;
  std::array<Provenance, kNumViews> provenance{};
  /// Set on augmented copies; subject_id then names the source subject.
  bool augmented = false;

  const Image& image(ViewKey key) const { return *images[view_index(key)]; }
};

struct ExcludedSubject {
  std::string subject_id;
  ClassLabel label = ClassLabel::Control;
  std::string reason;
};

using Completion = std::variant<ImageSet, ExcludedSubject>;

/// Fill each missing view with the horizontal mirror of the same view from
/// the other eye; exclude the subject when a view type is missing from both.
Completion complete_or_exclude(const std::string& subject_id, ClassLabel label,
                               const std::array<std::optional<Image>, kNumViews>& views);

using ImageLoader = std::function<Image(const std::filesystem::path&)>;

/// Loads and standardizes every bound view before completing the record.
/// Loader failures surface as UnreadableImage naming the view.
Completion complete_or_exclude(const SubjectRecord& record, const std::filesystem::path& base_dir,
                               const ImageLoader& loader);

Image load_standardized(const std::filesystem::path& path);

struct LoadedDataset {
  std::vector<ImageSet> sets;
  std::vector<ExcludedSubject> excluded;
};

/// Complete every subject of the manifest, preserving manifest order.
LoadedDataset load_dataset(const DatasetManifest& manifest, const ImageLoader& loader = load_standardized);

// ---------------------------------------------------------------------------
// Patient-wise stratified folds

struct SubjectLabel {
  std::string id;
  ClassLabel label;
};

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  /// (subject id, fold) in the order the subjects were supplied.
  std::vector<std::pair<std::string, int>> assignment;

  int fold_of(std::string_view subject_id) const;
  std::vector<std::string> test_ids(int fold) const;
  std::vector<std::string> train_ids(int fold) const;
  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Shuffle each class with a seeded stream and deal round-robin. The deal
/// position carries over from one class to the next, so fold sizes (and any
/// union of consecutive classes) stay balanced to within one.
FoldPlan make_folds(std::span<const SubjectLabel> subjects, int k, std::uint64_t seed);
FoldPlan make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

std::string fold_plan_to_string(const FoldPlan& plan);
FoldPlan parse_fold_plan(std::string_view text);

}  // namespace mvs
