#pragma once

// End-to-end pipeline commands: cohort generation, model training, normative
// scoring, survival analysis, and cross-run reporting. Each command reads a
// shared plain-text config, writes its artifacts under an output directory,
// and finishes by writing a JSON run manifest.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normdae/model.hpp"
#include "normdae/phantom.hpp"
#include "normdae/tabular.hpp"

namespace normdae::pipe {

// Fixed artifact names inside the output directory.
inline constexpr const char* kHealthyImages = "healthy_images.ndri";
inline constexpr const char* kHealthyMeta = "healthy_meta.csv";
inline constexpr const char* kPatientImages = "patient_images.ndri";
inline constexpr const char* kPatientMeta = "patient_meta.csv";
inline constexpr const char* kCheckpoint = "hdae_checkpoint.bin";
inline constexpr const char* kLossCurve = "loss_curve.csv";
inline constexpr const char* kAgeCheckpoint = "age_checkpoint.bin";
inline constexpr const char* kAgeLossCurve = "age_loss_curve.csv";
inline constexpr const char* kScores = "scores.csv";
inline constexpr const char* kReference = "healthy_reference.json";
inline constexpr const char* kAssociations = "associations.csv";
inline constexpr const char* kCoxFitPrefix = "cox_fit_";      // cox_fit_<score_type>.csv
inline constexpr const char* kKsSplit = "ks_split.csv";
inline constexpr const char* kKmSplitPrefix = "km_split_";    // km_split_<group>.csv
inline constexpr const char* kKmPartialCsv = "km_partial.csv";
inline constexpr const char* kScoreDistCsv = "score_distributions.csv";
inline constexpr const char* kKmSplitSvg = "km_split.svg";
inline constexpr const char* kKmPartialSvg = "km_partial.svg";
inline constexpr const char* kScoreDistSvg = "score_distributions.svg";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kReportCsv = "report.csv";

// All pipeline options, parsed and validated before any work starts. Unknown
// config keys are rejected.
struct Settings {
    phantom::PhantomConfig phantom;
    model::ModelConfig model;

    int diffusion_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int encode_steps = 25;  // deterministic sampling-plan size

    model::TrainConfig train;
    int age_epochs = 0;  // 0: reuse train.epochs for the age baseline

    std::string score_age_baseline = "auto";  // "auto" | "on" | "off"
    std::string score_reference;              // optional pre-existing reference JSON

    std::string ks_durations = "deceased";  // "deceased" | "all"
    int nmi_bins = 0;                       // 0: floor(sqrt(n))
    std::vector<double> partial_quantiles = {0.1, 0.25, 0.5, 0.75, 0.9};

    std::vector<std::string> report_runs;  // manifest paths; empty: scan out dir

    uint64_t seed = 1;
};

// Parses a config (already loaded) into Settings, consuming every legal key
// and rejecting unknown ones. `parse_settings({})` yields all defaults.
Settings parse_settings(const tab::Config& cfg);

// Loads the config file when `config_path` is non-empty, applies the optional
// seed override, and returns validated settings.
Settings load_settings(const std::string& config_path,
                       std::optional<uint64_t> seed_override);

void cmd_generate(const Settings& s, const std::string& out_dir);
void cmd_train(const Settings& s, const std::string& out_dir);
void cmd_train_age_baseline(const Settings& s, const std::string& out_dir);
void cmd_score(const Settings& s, const std::string& out_dir);
void cmd_survival(const Settings& s, const std::string& out_dir);
void cmd_report(const Settings& s, const std::string& out_dir);

// ISO-8601 UTC timestamp; honors the SOURCE_DATE_EPOCH convention so runs can
// be made fully reproducible including manifests.
std::string now_iso8601();

} // namespace normdae::pipe
