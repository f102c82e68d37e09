// End-to-end tests for the pipeline commands: config parsing, artifact
// schemas, leakage guards, determinism, resilience, and CLI exit codes.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "normdae/errors.hpp"
#include "normdae/fsio.hpp"
#include "normdae/pipeline.hpp"
#include "normdae/tabular.hpp"

namespace fs = std::filesystem;
using namespace normdae;
using nlohmann::json;

namespace {

// Fresh directory under the system temp root, cleaned up on destruction.
struct TempDir {
    explicit TempDir(const std::string& tag) {
        path = (fs::temp_directory_path() / ("normdae_test_" + tag)).string();
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return path + "/" + name; }
    std::string path;
};

// Small, fast configuration shared by the end-to-end tests.
const char* kSmallIni = R"ini(
seed = 11

[phantom]
healthy_n = 12
patient_n = 14
image_size = 16
noise_sigma = 0.02

[model]
channels = 8,16
latent_dim = 8
time_embed_dim = 8
age_embed_dim = 8
groups = 4

[diffusion]
steps = 30
encode_steps = 6

[train]
epochs = 3
age_epochs = 12
batch_size = 8
lr = 0.002
holdout_fraction = 0.2
threads = 1
)ini";

pipe::Settings small_settings() {
    return pipe::parse_settings(tab::Config::parse(kSmallIni));
}

void run_full_pipeline(const pipe::Settings& s, const std::string& dir) {
    pipe::cmd_generate(s, dir);
    pipe::cmd_train(s, dir);
    pipe::cmd_train_age_baseline(s, dir);
    pipe::cmd_score(s, dir);
    pipe::cmd_survival(s, dir);
    pipe::cmd_report(s, dir);
}

std::vector<double> column_values(const tab::Csv& csv, const std::string& name) {
    const size_t idx = tab::column_index(csv, name);
    std::vector<double> out;
    for (const auto& row : csv.rows) out.push_back(std::stod(row[idx]));
    return out;
}

double mean_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
}

double pop_std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Writes a hand-made scores.csv + patient_meta.csv pair so the survival
// command can run without a trained model.
void write_survival_fixture(const std::string& dir, bool constant_raw_similarity,
                            bool constant_sex) {
    const int n = 12;
    const double raw_sim[n] = {0.91, 0.82, 0.95, 0.70, 0.88, 0.78,
                               0.93, 0.65, 0.85, 0.74, 0.90, 0.80};
    const double raw_mse[n] = {0.010, 0.020, 0.006, 0.035, 0.014, 0.026,
                               0.008, 0.041, 0.017, 0.030, 0.011, 0.022};
    const double ages[n] = {55, 61, 48, 70, 58, 66, 52, 73, 59, 68, 54, 63};
    const int sexes[n] = {0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0};
    // Durations deliberately scrambled relative to the scores so the Cox fit
    // stays identifiable (no monotone relationship).
    const double durations[n] = {210, 400, 150, 300, 90, 480, 330, 260, 560, 120, 200, 430};
    const bool events[n] = {true, true, true, true,  true, false,
                            true, true, true, true, false, true};

    std::vector<double> sim(raw_sim, raw_sim + n), mse(raw_mse, raw_mse + n);
    std::vector<double> sim_std(n), mse_std(n);
    const double sim_mu = mean_of(sim), sim_sd = pop_std_of(sim);
    const double mse_mu = mean_of(mse), mse_sd = pop_std_of(mse);
    for (int i = 0; i < n; ++i) {
        sim_std[i] = (sim[i] - sim_mu) / sim_sd;
        mse_std[i] = (mse[i] - mse_mu) / mse_sd;
    }

    tab::Csv scores;
    scores.header = {"subject_id",            "age",       "sex", "latent_similarity",
                     "latent_similarity_std", "image_mse", "image_mse_std"};
    tab::Csv meta;
    meta.header = {"subject_id", "cohort", "age", "sex", "severity", "duration_days", "event"};
    for (int i = 0; i < n; ++i) {
        const std::string id = "PT" + std::to_string(100 + i);
        const double sex = constant_sex ? 0.0 : static_cast<double>(sexes[i]);
        scores.rows.push_back({id, tab::format_double(ages[i]), tab::format_double(sex),
                               tab::format_double(constant_raw_similarity ? 0.9 : sim[i]),
                               tab::format_double(sim_std[i]), tab::format_double(mse[i]),
                               tab::format_double(mse_std[i])});
        meta.rows.push_back({id, "patient", tab::format_double(ages[i]),
                             tab::format_double(sex), "1.0", tab::format_double(durations[i]),
                             events[i] ? "true" : "false"});
    }
    tab::write_csv(dir + "/" + pipe::kScores, scores);
    tab::write_csv(dir + "/" + pipe::kPatientMeta, meta);
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("NORMDAE_CLI");
    REQUIRE(cli != nullptr);
    const std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("settings: defaults parse and every section round-trips") {
    const pipe::Settings d = pipe::parse_settings(tab::Config::parse(""));
    CHECK(d.seed == 1);
    CHECK(d.phantom.healthy_n == 64);
    CHECK(d.model.channels == std::vector<int>{32, 64, 128});
    CHECK(d.diffusion_steps == 100);
    CHECK(d.encode_steps == 25);
    CHECK(d.train.epochs == 20);
    CHECK(d.score_age_baseline == "auto");
    CHECK(d.ks_durations == "deceased");
    CHECK(d.partial_quantiles == std::vector<double>{0.1, 0.25, 0.5, 0.75, 0.9});

    const pipe::Settings s = small_settings();
    CHECK(s.seed == 11);
    CHECK(s.phantom.healthy_n == 12);
    CHECK(s.phantom.patient_n == 14);
    CHECK(s.model.channels == std::vector<int>{8, 16});
    CHECK(s.diffusion_steps == 30);
    CHECK(s.encode_steps == 6);
    CHECK(s.train.holdout_fraction == doctest::Approx(0.2));
    // The master seed feeds both generation and training.
    CHECK(s.phantom.seed == 11);
    CHECK(s.train.seed == 11);
}

TEST_CASE("settings: unknown keys and bad values are configuration errors") {
    auto parse = [](const std::string& text) {
        return pipe::parse_settings(tab::Config::parse(text));
    };
    CHECK_THROWS_WITH_AS(parse("sede = 3\n"), doctest::Contains("sede"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\nhealty_n = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse("[train]\nholdout_fraction = 0.95\n"), ConfigError);
    CHECK_THROWS_AS(parse("[train]\nepochs = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("[train]\nlr = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("[diffusion]\nsteps = 20\nencode_steps = 21\n"), ConfigError);
    CHECK_THROWS_AS(parse("[diffusion]\nencode_steps = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nchannels = 8,x\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nchannels = 12\ngroups = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse("[score]\nage_baseline = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse("[survival]\nks_durations = some\n"), ConfigError);
    CHECK_THROWS_AS(parse("[survival]\nnmi_bins = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[survival]\nquantiles = 0.5,1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse("[survival]\nquantiles =\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\nimage_size = 15\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\ncensor_rate = 1.5\n"), ConfigError);
}

TEST_CASE("settings: load_settings applies the seed override everywhere") {
    TempDir tmp("settings_load");
    io::atomic_write(tmp.file("cfg.ini"), std::string(kSmallIni));
    const pipe::Settings s = pipe::load_settings(tmp.file("cfg.ini"), uint64_t{99});
    CHECK(s.seed == 99);
    CHECK(s.phantom.seed == 99);
    CHECK(s.train.seed == 99);
    CHECK_THROWS_AS(pipe::load_settings(tmp.file("missing.ini"), std::nullopt), ConfigError);
}

TEST_CASE("pipeline: full run produces the pinned artifacts and schemas") {
    TempDir tmp("full_run");
    const pipe::Settings s = small_settings();
    run_full_pipeline(s, tmp.path);

    // Generation: metadata row counts sum to healthy_n + patient_n.
    const tab::Csv hmeta = tab::read_csv(tmp.file(pipe::kHealthyMeta));
    const tab::Csv pmeta = tab::read_csv(tmp.file(pipe::kPatientMeta));
    CHECK(hmeta.rows.size() + pmeta.rows.size() ==
          static_cast<size_t>(s.phantom.healthy_n + s.phantom.patient_n));
    CHECK(hmeta.header == std::vector<std::string>{"subject_id", "cohort", "age", "sex",
                                                   "severity", "duration_days", "event"});

    // Training: loss curve has one row per epoch with monotone epoch indices.
    const tab::Csv loss = tab::read_csv(tmp.file(pipe::kLossCurve));
    CHECK(loss.header == std::vector<std::string>{"epoch", "mean_loss"});
    REQUIRE(loss.rows.size() == static_cast<size_t>(s.train.epochs));
    for (size_t i = 0; i < loss.rows.size(); ++i) {
        CHECK(loss.rows[i][0] == std::to_string(i + 1));
    }

    // Scoring: pinned column set (age baseline present), standardized columns
    // are zero-mean unit-std within 1e-9, one row per patient.
    const tab::Csv scores = tab::read_csv(tmp.file(pipe::kScores));
    CHECK(scores.header ==
          std::vector<std::string>{"subject_id", "age", "sex", "latent_similarity",
                                   "latent_similarity_std", "image_mse", "image_mse_std",
                                   "brain_pad", "brain_pad_std"});
    CHECK(scores.rows.size() == static_cast<size_t>(s.phantom.patient_n));
    for (const char* col : {"latent_similarity_std", "image_mse_std", "brain_pad_std"}) {
        const std::vector<double> v = column_values(scores, col);
        CHECK(std::fabs(mean_of(v)) < 1e-9);
        CHECK(std::fabs(pop_std_of(v) - 1.0) < 1e-9);
    }

    // Healthy reference carries the checkpoint digest and latent dimension.
    const json ref = json::parse(io::read_file(tmp.file(pipe::kReference)));
    CHECK(ref.at("n").get<int>() > 0);
    CHECK(ref.at("mu").size() == static_cast<size_t>(s.model.latent_dim));

    // Survival: fit report per score type with the pinned columns.
    for (const char* type : {"latent_similarity", "image_mse", "brain_pad"}) {
        const tab::Csv fit =
            tab::read_csv(tmp.file(std::string(pipe::kCoxFitPrefix) + type + ".csv"));
        CHECK(fit.header == std::vector<std::string>{"covariate", "coef", "se", "HR", "CI_low",
                                                     "CI_high", "p"});
        REQUIRE(fit.rows.size() == 3);
        CHECK(fit.rows[0][0] == "sex");
        CHECK(fit.rows[1][0] == "age");
        CHECK(fit.rows[2][0] == std::string(type) + "_std");
        for (const auto& row : fit.rows) {
            const double coef = std::stod(row[1]);
            const double hr = std::stod(row[3]);
            CHECK(hr == doctest::Approx(std::exp(coef)).epsilon(1e-9));
            CHECK(std::stod(row[4]) <= hr);
            CHECK(hr <= std::stod(row[5]));
        }
    }

    // KM per split group: pinned columns, survival non-increasing from 1.
    for (const char* group : {"high_similarity", "low_similarity"}) {
        const tab::Csv km =
            tab::read_csv(tmp.file(std::string(pipe::kKmSplitPrefix) + group + ".csv"));
        CHECK(km.header ==
              std::vector<std::string>{"time", "survival", "at_risk", "deaths"});
        REQUIRE(!km.rows.empty());
        double prev = 1.0;
        for (const auto& row : km.rows) {
            const double sv = std::stod(row[1]);
            CHECK(sv <= prev + 1e-12);
            prev = sv;
        }
    }

    const tab::Csv assoc = tab::read_csv(tmp.file(pipe::kAssociations));
    CHECK(assoc.header == std::vector<std::string>{"score_type", "n_deceased", "pearson_r",
                                                   "pearson_p", "kendall_tau", "kendall_p",
                                                   "nmi", "nmi_bins"});
    CHECK(assoc.rows.size() == 3);  // latent, image, brain_pad

    const tab::Csv ks = tab::read_csv(tmp.file(pipe::kKsSplit));
    CHECK(ks.header ==
          std::vector<std::string>{"score_type", "durations", "D", "p", "n_low", "n_high"});

    const tab::Csv partial = tab::read_csv(tmp.file(pipe::kKmPartialCsv));
    CHECK(partial.header ==
          std::vector<std::string>{"quantile", "score_value", "time", "survival"});
    CHECK(!partial.rows.empty());

    const tab::Csv dist = tab::read_csv(tmp.file(pipe::kScoreDistCsv));
    CHECK(dist.header == std::vector<std::string>{"score_type", "bin_lo", "bin_hi", "count"});

    // SVG plots exist under their pinned names and are well-formed XML shells.
    for (const char* name : {pipe::kKmSplitSvg, pipe::kKmPartialSvg, pipe::kScoreDistSvg}) {
        const std::string svg = io::read_file(tmp.file(name));
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find("</svg>") != std::string::npos);
    }

    // Manifests: one per command, every listed artifact exists with the
    // recorded size and content hash.
    for (const char* name :
         {"manifest_generate.json", "manifest_train.json", "manifest_train_age_baseline.json",
          "manifest_score.json", "manifest_survival.json", "manifest_report.json"}) {
        const json m = json::parse(io::read_file(tmp.file(name)));
        CHECK(m.at("seed").get<uint64_t>() == s.seed);
        for (const auto& [key, art] : m.at("artifacts").items()) {
            (void)key;
            const std::string path = tmp.file(art.at("path").get<std::string>());
            REQUIRE(fs::exists(path));
            const std::string bytes = io::read_file(path);
            CHECK(bytes.size() == art.at("bytes").get<size_t>());
        }
    }

    // Report: aggregates exist for the training metrics.
    const tab::Csv report = tab::read_csv(tmp.file(pipe::kReportCsv));
    CHECK(report.header == std::vector<std::string>{"command", "metric", "n_runs", "mean",
                                                    "sd", "min", "max"});
    bool saw_final_loss = false;
    for (const auto& row : report.rows) {
        if (row[0] == "train" && row[1] == "final_loss") saw_final_loss = true;
    }
    CHECK(saw_final_loss);
    CHECK(io::read_file(tmp.file(pipe::kReportMd)).find("## Metrics") != std::string::npos);
}

TEST_CASE("pipeline: fixed seed reruns are byte-identical") {
    // Pin the manifest clock so even timestamps cannot differ between runs.
    setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
    TempDir a("rerun_a"), b("rerun_b");
    const pipe::Settings s = small_settings();
    run_full_pipeline(s, a.path);
    run_full_pipeline(s, b.path);
    unsetenv("SOURCE_DATE_EPOCH");

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(a.path)) {
        names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    REQUIRE(names.size() > 20);  // all artifacts from all six commands
    size_t checked = 0;
    for (const std::string& name : names) {
        CAPTURE(name);
        REQUIRE(fs::exists(b.file(name)));
        CHECK(io::read_file(a.file(name)) == io::read_file(b.file(name)));
        ++checked;
    }
    CHECK(checked == names.size());
    // Same file count in both directories.
    CHECK(std::distance(fs::directory_iterator(b.path), fs::directory_iterator{}) ==
          static_cast<long>(names.size()));
}

TEST_CASE("pipeline: training rejects a patient id planted in the healthy cohort") {
    TempDir tmp("leak_train");
    const pipe::Settings s = small_settings();
    pipe::cmd_generate(s, tmp.path);

    tab::Csv hmeta = tab::read_csv(tmp.file(pipe::kHealthyMeta));
    const tab::Csv pmeta = tab::read_csv(tmp.file(pipe::kPatientMeta));
    const std::string planted = pmeta.rows[0][0];
    hmeta.rows[1][0] = planted;  // id collision with a patient record
    tab::write_csv(tmp.file(pipe::kHealthyMeta), hmeta);

    CHECK_THROWS_WITH_AS(pipe::cmd_train(s, tmp.path), doctest::Contains(planted.c_str()),
                         DataError);
    CHECK_THROWS_AS(pipe::cmd_train_age_baseline(s, tmp.path), DataError);
}

TEST_CASE("pipeline: scoring rejects patients that entered training") {
    TempDir tmp("leak_score");
    pipe::Settings s = small_settings();
    s.train.holdout_fraction = 0.0;  // every healthy subject becomes a training id
    pipe::cmd_generate(s, tmp.path);
    pipe::cmd_train(s, tmp.path);

    tab::Csv pmeta = tab::read_csv(tmp.file(pipe::kPatientMeta));
    const tab::Csv hmeta = tab::read_csv(tmp.file(pipe::kHealthyMeta));
    pmeta.rows[0][0] = hmeta.rows[0][0];  // pretend a training subject is a patient
    tab::write_csv(tmp.file(pipe::kPatientMeta), pmeta);

    CHECK_THROWS_WITH_AS(pipe::cmd_score(s, tmp.path),
                         doctest::Contains("was part of the training cohort"), DataError);
}

TEST_CASE("pipeline: external healthy reference must match the checkpoint digest") {
    TempDir tmp("ext_ref");
    pipe::Settings s = small_settings();
    pipe::cmd_generate(s, tmp.path);
    pipe::cmd_train(s, tmp.path);
    pipe::cmd_score(s, tmp.path);

    // Re-scoring against the reference this run produced succeeds.
    pipe::Settings with_ref = s;
    with_ref.score_reference = tmp.file(pipe::kReference);
    pipe::cmd_score(with_ref, tmp.path);

    // A reference recorded for a different checkpoint digest is rejected.
    json ref = json::parse(io::read_file(tmp.file(pipe::kReference)));
    ref["model_digest"] = "0000000000000000";
    io::atomic_write(tmp.file("stale_reference.json"), ref.dump(2) + "\n");
    with_ref.score_reference = tmp.file("stale_reference.json");
    CHECK_THROWS_WITH_AS(pipe::cmd_score(with_ref, tmp.path), doctest::Contains("digest"),
                         DataError);

    // Malformed reference files are data errors, not crashes.
    io::atomic_write(tmp.file("broken_reference.json"), "{\"model_digest\": 12");
    with_ref.score_reference = tmp.file("broken_reference.json");
    CHECK_THROWS_AS(pipe::cmd_score(with_ref, tmp.path), DataError);

    // Missing checkpoint is a data error.
    TempDir empty("ext_ref_empty");
    CHECK_THROWS_AS(pipe::cmd_score(s, empty.path), DataError);
}

TEST_CASE("pipeline: degenerate median split is a manifest warning, not a failure") {
    TempDir tmp("degenerate_split");
    write_survival_fixture(tmp.path, /*constant_raw_similarity=*/true, /*constant_sex=*/false);
    const pipe::Settings s = small_settings();
    pipe::cmd_survival(s, tmp.path);

    const json m = json::parse(io::read_file(tmp.file("manifest_survival.json")));
    bool warned = false;
    for (const auto& w : m.at("warnings")) {
        if (w.get<std::string>().find("degenerate median split") != std::string::npos) {
            warned = true;
        }
    }
    CHECK(warned);
    // No KM group files and no split plot for a degenerate split.
    CHECK(!fs::exists(tmp.file(std::string(pipe::kKmSplitPrefix) + "high_similarity.csv")));
    CHECK(!fs::exists(tmp.file(pipe::kKmSplitSvg)));
    // The rest of the analysis still ran.
    CHECK(fs::exists(tmp.file(std::string(pipe::kCoxFitPrefix) + "latent_similarity.csv")));
    CHECK(fs::exists(tmp.file(pipe::kKmPartialCsv)));
}

TEST_CASE("pipeline: survival join failures are data errors") {
    TempDir tmp("join_fail");
    write_survival_fixture(tmp.path, false, false);
    const pipe::Settings s = small_settings();

    // A scored subject without metadata.
    const tab::Csv original = tab::read_csv(tmp.file(pipe::kPatientMeta));
    tab::Csv meta = original;
    meta.rows.pop_back();
    tab::write_csv(tmp.file(pipe::kPatientMeta), meta);
    CHECK_THROWS_WITH_AS(pipe::cmd_survival(s, tmp.path),
                         doctest::Contains("missing from survival metadata"), DataError);

    // A metadata subject without a score row.
    meta = original;
    meta.rows.push_back(original.rows.back());
    meta.rows.back()[0] = "PT999";
    tab::write_csv(tmp.file(pipe::kPatientMeta), meta);
    CHECK_THROWS_WITH_AS(pipe::cmd_survival(s, tmp.path),
                         doctest::Contains("has no score row"), DataError);
}

TEST_CASE("pipeline: report skips corrupted manifests with a named warning") {
    TempDir tmp("report_resilience");
    const pipe::Settings s = small_settings();
    pipe::cmd_generate(s, tmp.path);

    const std::string good = tmp.file("manifest_generate.json");
    const std::string bad = tmp.file("manifest_broken.json");
    io::atomic_write(bad, "this is not json\n");

    pipe::Settings r = s;
    r.report_runs = {bad, good};
    pipe::cmd_report(r, tmp.path);

    const json m = json::parse(io::read_file(tmp.file("manifest_report.json")));
    CHECK(m.at("final_metrics").at("n_manifests").get<double>() == 1.0);
    CHECK(m.at("final_metrics").at("n_skipped").get<double>() == 1.0);
    bool named = false;
    for (const auto& w : m.at("warnings")) {
        if (w.get<std::string>().find("manifest_broken.json") != std::string::npos) named = true;
    }
    CHECK(named);

    // With no readable manifest at all the command fails with a data error.
    pipe::Settings all_bad = s;
    all_bad.report_runs = {bad};
    CHECK_THROWS_AS(pipe::cmd_report(all_bad, tmp.path), DataError);
}

TEST_CASE("pipeline: report aggregates metrics across seeds") {
    TempDir tmp("report_seeds");
    std::vector<std::string> manifests;
    for (uint64_t seed : {21u, 22u, 23u}) {
        pipe::Settings s = small_settings();
        s.seed = seed;
        s.phantom.seed = seed;
        s.train.seed = seed;
        const std::string dir = tmp.file("run" + std::to_string(seed));
        fs::create_directories(dir);
        pipe::cmd_generate(s, dir);
        manifests.push_back(dir + "/manifest_generate.json");
    }
    pipe::Settings r = small_settings();
    r.report_runs = manifests;
    pipe::cmd_report(r, tmp.path);

    const tab::Csv report = tab::read_csv(tmp.file(pipe::kReportCsv));
    bool saw = false;
    for (const auto& row : report.rows) {
        if (row[0] == "generate" && row[1] == "patient_n") {
            saw = true;
            CHECK(row[2] == "3");
            CHECK(std::stod(row[3]) == doctest::Approx(14.0));  // mean over equal sizes
            CHECK(std::stod(row[4]) == doctest::Approx(0.0));  // sd of a constant
        }
    }
    CHECK(saw);
}

TEST_CASE("cli: exit codes follow the config/data/numeric contract") {
    if (std::getenv("NORMDAE_CLI") == nullptr) {
        MESSAGE("NORMDAE_CLI not set; skipping CLI exit-code checks");
        return;
    }
    TempDir tmp("cli_codes");

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("generate --help") == 0);

    // Configuration errors: unknown key, bad flag, missing config file.
    io::atomic_write(tmp.file("bad.ini"), "definitely_not_a_key = 1\n");
    CHECK(run_cli("generate --config " + tmp.file("bad.ini") + " --out " + tmp.path) == 2);
    CHECK(run_cli("generate --definitely-not-a-flag") == 2);
    CHECK(run_cli("generate --config " + tmp.file("missing.ini")) == 2);
    CHECK(run_cli("") == 2);  // a subcommand is required

    // Data error: scoring without a checkpoint.
    CHECK(run_cli("score --out " + tmp.path) == 3);

    // Numeric error: a constant covariate makes the Cox fit unidentifiable.
    TempDir flat("cli_flat");
    write_survival_fixture(flat.path, false, /*constant_sex=*/true);
    CHECK(run_cli("survival --out " + flat.path) == 4);

    // Success: a fast generate run.
    io::atomic_write(tmp.file("ok.ini"),
                     "[phantom]\nhealthy_n = 4\npatient_n = 2\nimage_size = 16\n");
    CHECK(run_cli("generate --config " + tmp.file("ok.ini") + " --out " + tmp.path) == 0);
    CHECK(fs::exists(tmp.file(pipe::kHealthyMeta)));
    const tab::Csv hmeta = tab::read_csv(tmp.file(pipe::kHealthyMeta));
    const tab::Csv pmeta = tab::read_csv(tmp.file(pipe::kPatientMeta));
    CHECK(hmeta.rows.size() + pmeta.rows.size() == 6);  // N + M records round-trip
}
