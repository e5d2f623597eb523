// mvsnet: synthetic cohorts, manifest validation, fold plans, cross-validated
// training, reports and parameter accounting from one entry point.

#include "mvs/error.hpp"
#include "mvs/model.hpp"
#include "mvs/report.hpp"
#include "mvs/run.hpp"
#include "mvs/synthetic.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

using namespace mvs;

void print_summary(const CountTable& t) {
  std::printf("%-10s %6s %6s %6s %6s %7s %8s\n", "class", "R_v1", "R_v2", "L_v1", "L_v2", "images", "subjects");
  for (auto label : kAllClasses) {
    const auto c = class_index(label);
    std::printf("%-10s %6d %6d %6d %6d %7d %8d\n", std::string(label_name(label)).c_str(), t.images[c][0],
                t.images[c][1], t.images[c][2], t.images[c][3], t.class_total(label), t.participants[c]);
  }
  int subjects = 0;
  for (int p : t.participants) subjects += p;
  std::printf("%-10s %6d %6d %6d %6d %7d %8d\n", "total", t.view_total(kCanonicalViews[0]),
              t.view_total(kCanonicalViews[1]), t.view_total(kCanonicalViews[2]), t.view_total(kCanonicalViews[3]),
              t.total(), subjects);
}

/// Completion actions implied by the bound views alone; empty optional means excluded.
std::optional<std::vector<std::string>> completion_actions(const SubjectRecord& s) {
  std::vector<std::string> actions;
  for (auto key : kCanonicalViews) {
    if (s.views[view_index(key)]) continue;
    const auto other = contralateral(key);
    if (!s.views[view_index(other)]) return std::nullopt;
    actions.push_back("fill " + std::string(view_name(key)) + " from mirrored " + std::string(view_name(other)));
  }
  return actions;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = parse_synth_spec(read_text(spec_path));
  if (const auto seed = parse_seed_override(std::getenv("MVS_SEED"))) spec.seed = *seed;
  const DatasetManifest manifest = generate_cohort(spec, out_dir);
  std::printf("wrote %zu subjects to %s\n", manifest.subjects.size(), out_dir.c_str());
  print_summary(manifest.summary);
  return 0;
}

int cmd_validate(const std::string& manifest_path, bool load_images) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  int filled = 0, excluded = 0;
  for (const auto& s : manifest.subjects) {
    const auto actions = completion_actions(s);
    if (!actions) {
      std::printf("%s: excluded (no contralateral v1/v2)\n", s.id.c_str());
      ++excluded;
      continue;
    }
    for (const auto& a : *actions) std::printf("%s: %s\n", s.id.c_str(), a.c_str());
    filled += int(actions->size());
    if (load_images) complete_or_exclude(s, manifest.base_dir, load_standardized);
  }
  std::printf("%zu subjects, %d views to fill, %d excluded\n", manifest.subjects.size(), filled, excluded);
  print_summary(manifest.summary);
  return 0;
}

int cmd_folds(const std::string& manifest_path, int k, std::uint64_t seed, const std::string& out) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<SubjectLabel> subjects;
  for (const auto& s : manifest.subjects)
    if (completion_actions(s)) subjects.push_back({s.id, s.label});
  const FoldPlan plan = make_folds(subjects, k, seed);
  for (int f = 0; f < k; ++f) {
    std::array<int, kNumClasses> per_class{};
    for (const auto& [id, fold] : plan.assignment)
      if (fold == f)
        for (const auto& s : subjects)
          if (s.id == id) ++per_class[class_index(s.label)];
    std::printf("fold %d: %zu subjects (control %d, stroke %d, tia %d)\n", f, plan.test_ids(f).size(), per_class[0],
                per_class[1], per_class[2]);
  }
  if (!out.empty()) write_text(out, fold_plan_to_string(plan));
  return 0;
}

int cmd_train(const std::string& config_path, int jobs, const std::optional<std::string>& output,
              const std::optional<std::uint64_t>& seed) {
  RunConfig config = load_run_config(config_path);
  if (output) config.output = std::filesystem::absolute(*output);
  if (seed) config.train.seed = *seed;
  apply_seed_override(config, std::getenv("MVS_SEED"));
  const auto result = execute_run(config, jobs, [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
  std::printf("%s", metrics_table(result.report, std::string(variant_name(config.variant)) + " " +
                                                     config.output.string())
                        .c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
  std::vector<RunArtifacts> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  const std::filesystem::path out_dir =
      out.empty() ? std::filesystem::path(run_dirs.front()) / "report" : std::filesystem::path(out);
  std::printf("%s", write_report(runs, out_dir).c_str());
  std::printf("report written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_params(const std::string& backbone, std::optional<int> d_view, int views, int classes, bool separate,
               bool frozen) {
  BackboneSpec spec = backbone_spec(backbone, d_view);
  if (frozen) spec.trainable = false;
  const auto head = head_parameter_count(spec.feature_dim, views, classes);
  const std::int64_t bodies = separate ? views : 1;
  const ParameterCount body = backbone_parameters(spec);
  const ParameterCount total = bodies * body + ParameterCount{head, 0};
  std::printf("backbone      %s (d_view %d, %s)\n", spec.name.c_str(), spec.feature_dim,
              spec.trainable ? "trainable" : "frozen");
  std::printf("views         %d\nclasses       %d\nhidden width  %d\n", views, classes,
              hidden_width_for(spec.feature_dim, views));
  std::printf("head          %lld\n", static_cast<long long>(head));
  std::printf("body          %lld x %lld\n", static_cast<long long>(bodies), static_cast<long long>(body.total()));
  std::printf("trainable     %lld\nnon-trainable %lld\ntotal         %lld\n", static_cast<long long>(total.trainable),
              static_cast<long long>(total.non_trainable), static_cast<long long>(total.total()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view fundus classifier toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic four-view cohort");
  synth->add_option("spec", spec_path, "Synthetic cohort spec (JSON)")->required();
  synth->add_option("out", out_dir, "Output directory")->required();

  std::string manifest_path;
  bool load_images = false;
  auto* validate = app.add_subcommand("validate", "List completion actions and exclusions of a manifest");
  validate->add_option("manifest", manifest_path, "Dataset manifest (JSON)")->required();
  validate->add_flag("--load-images", load_images, "Also decode and standardize every bound image");

  int k = 5;
  std::uint64_t fold_seed = 0;
  std::string folds_out;
  auto* folds = app.add_subcommand("folds", "Patient-wise stratified fold plan");
  folds->add_option("manifest", manifest_path, "Dataset manifest (JSON)")->required();
  folds->add_option("-k,--folds", k, "Number of folds")->capture_default_str();
  folds->add_option("--seed", fold_seed, "Master seed")->capture_default_str();
  folds->add_option("-o,--out", folds_out, "Write the plan as JSON");

  std::string config_path;
  int jobs = 1;
  std::optional<std::string> train_output;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Cross-validated training from a run config");
  train->add_option("config", config_path, "Run config (JSON)")->required();
  train->add_option("-j,--jobs", jobs, "Folds trained concurrently")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("-o,--output", train_output, "Override the run directory");
  train->add_option("--seed", train_seed, "Override the master seed");

  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Metrics tables and plot data for one or two runs");
  report->add_option("runs", run_dirs, "Run directories")->required()->expected(1, 2);
  report->add_option("-o,--out", report_out, "Output directory (default <first run>/report)");

  std::string backbone = "tinyconv";
  std::optional<int> d_view;
  int views = 4, classes = 2;
  bool separate = false, frozen = false;
  auto* params = app.add_subcommand("params", "Parameter counts of a model configuration");
  params->add_option("-b,--backbone", backbone, "Backbone name")->capture_default_str();
  params->add_option("-d,--d-view", d_view, "Per-view feature length");
  params->add_option("-v,--views", views, "Number of views")->capture_default_str()->check(CLI::PositiveNumber);
  params->add_option("-c,--classes", classes, "Number of classes")->capture_default_str()->check(CLI::Range(2, 1000));
  params->add_flag("--separate-bodies", separate, "One backbone body per view");
  params->add_flag("--frozen", frozen, "Count the backbone as non-trainable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  retain_freed_memory();
  try {
    if (*synth) return cmd_synth(spec_path, out_dir);
    if (*validate) return cmd_validate(manifest_path, load_images);
    if (*folds) return cmd_folds(manifest_path, k, fold_seed, folds_out);
    if (*train) return cmd_train(config_path, jobs, train_output, train_seed);
    if (*report) return cmd_report(run_dirs, report_out);
    if (*params) return cmd_params(backbone, d_view, views, classes, separate, frozen);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    // Reports treat absent artifacts as a usage problem, not an I/O fault.
    if (*report && e.kind() == ErrorKind::MissingFile) return 2;
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error [IOFailure]: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
