#include "normdae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <set>

#include <json.hpp>

#include "normdae/diffusion.hpp"
#include "normdae/errors.hpp"
#include "normdae/fsio.hpp"
#include "normdae/scoring.hpp"
#include "normdae/survival.hpp"
#include "normdae/svg.hpp"

namespace normdae::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& raw) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= raw.size()) {
        const size_t comma = raw.find(',', start);
        const std::string item =
            comma == std::string::npos ? raw.substr(start) : raw.substr(start, comma - start);
        size_t b = 0, e = item.size();
        while (b < e && item[b] == ' ') ++b;
        while (e > b && item[e - 1] == ' ') --e;
        if (e > b) out.push_back(item.substr(b, e - b));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void require_file(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) {
        throw DataError("missing input file '" + path + "' (" + hint + ")");
    }
}

// Canonical one-line-per-field dump of the effective settings; its digest ties
// manifests to the exact configuration that produced them.
std::string canonical_settings(const Settings& s) {
    std::string t;
    auto kv = [&t](const std::string& k, const std::string& v) { t += k + "=" + v + "\n"; };
    auto kvd = [&](const std::string& k, double v) { kv(k, tab::format_double(v)); };
    auto kvi = [&](const std::string& k, long long v) { kv(k, std::to_string(v)); };
    kvi("seed", static_cast<long long>(s.seed));
    kvi("phantom.image_size", s.phantom.image_size);
    kvi("phantom.healthy_n", s.phantom.healthy_n);
    kvi("phantom.patient_n", s.phantom.patient_n);
    kvd("phantom.healthy_age_lo", s.phantom.healthy_age_lo);
    kvd("phantom.healthy_age_hi", s.phantom.healthy_age_hi);
    kvd("phantom.patient_age_lo", s.phantom.patient_age_lo);
    kvd("phantom.patient_age_hi", s.phantom.patient_age_hi);
    kvd("phantom.severity_max", s.phantom.severity_max);
    kvd("phantom.b_true", s.phantom.b_true);
    kvd("phantom.lambda0", s.phantom.lambda0);
    kvd("phantom.censor_rate", s.phantom.censor_rate);
    kvd("phantom.noise_sigma", s.phantom.noise_sigma);
    kvi("model.image_size", s.model.image_size);
    std::string ch;
    for (size_t i = 0; i < s.model.channels.size(); ++i) {
        if (i) ch += ",";
        ch += std::to_string(s.model.channels[i]);
    }
    kv("model.channels", ch);
    kvi("model.latent_dim", s.model.latent_dim);
    kvi("model.time_embed_dim", s.model.time_embed_dim);
    kvi("model.age_embed_dim", s.model.age_embed_dim);
    kvi("model.groups", s.model.groups);
    kvi("diffusion.steps", s.diffusion_steps);
    kvd("diffusion.beta_start", s.beta_start);
    kvd("diffusion.beta_end", s.beta_end);
    kvi("diffusion.encode_steps", s.encode_steps);
    kvi("train.epochs", s.train.epochs);
    kvi("train.batch_size", s.train.batch_size);
    kvd("train.lr", s.train.lr);
    kvd("train.holdout_fraction", s.train.holdout_fraction);
    kvi("train.threads", s.train.threads);
    kvi("train.age_epochs", s.age_epochs);
    kv("score.age_baseline", s.score_age_baseline);
    kv("score.reference", s.score_reference);
    kv("survival.ks_durations", s.ks_durations);
    kvi("survival.nmi_bins", s.nmi_bins);
    std::string q;
    for (size_t i = 0; i < s.partial_quantiles.size(); ++i) {
        if (i) q += ",";
        q += tab::format_double(s.partial_quantiles[i]);
    }
    kv("survival.quantiles", q);
    std::string runs;
    for (size_t i = 0; i < s.report_runs.size(); ++i) {
        if (i) runs += ",";
        runs += s.report_runs[i];
    }
    kv("report.runs", runs);
    return t;
}

std::string settings_digest(const Settings& s) {
    return hex64(io::fnv1a64(canonical_settings(s)));
}

// Accumulates a command's outputs and writes the run manifest last, so a
// manifest's presence implies the command completed.
class ManifestBuilder {
public:
    ManifestBuilder(std::string command, const Settings& s)
        : command_(std::move(command)),
          seed_(s.seed),
          config_digest_(settings_digest(s)),
          started_at_(now_iso8601()) {}

    void add_artifact(const std::string& name, const std::string& path) {
        artifacts_.emplace_back(name, path);
    }
    void metric(const std::string& name, double value) { metrics_[name] = value; }
    void warn(const std::string& message) { warnings_.push_back(message); }
    const std::vector<std::string>& warnings() const { return warnings_; }

    std::string manifest_name() const {
        std::string cmd = command_;
        std::replace(cmd.begin(), cmd.end(), '-', '_');
        return "manifest_" + cmd + ".json";
    }

    void write(const std::string& out_dir) {
        json j;
        j["command"] = command_;
        j["seed"] = seed_;
        j["config_digest"] = config_digest_;
        j["started_at"] = started_at_;
        j["finished_at"] = now_iso8601();
        json arts = json::object();
        for (const auto& [name, path] : artifacts_) {
            const std::string bytes = io::read_file(path);
            arts[name] = {{"path", fs::path(path).filename().string()},
                          {"bytes", bytes.size()},
                          {"fnv1a64", hex64(io::fnv1a64(bytes))}};
        }
        j["artifacts"] = arts;
        j["final_metrics"] = metrics_;
        j["warnings"] = warnings_;
        io::atomic_write(join_path(out_dir, manifest_name()), j.dump(2) + "\n");
    }

private:
    std::string command_;
    uint64_t seed_;
    std::string config_digest_;
    std::string started_at_;
    std::vector<std::pair<std::string, std::string>> artifacts_;
    std::map<std::string, double> metrics_;
    std::vector<std::string> warnings_;
};

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory '" + out_dir + "': " + ec.message());
}

// --- cohort loading with guards --------------------------------------------------

std::set<std::string> csv_id_set(const std::string& meta_path) {
    const tab::Csv csv = tab::read_csv(meta_path);
    const size_t c_id = tab::column_index(csv, "subject_id");
    std::set<std::string> ids;
    for (const auto& row : csv.rows) ids.insert(row[c_id]);
    return ids;
}

std::vector<phantom::SubjectRecord> load_cohort_checked(const std::string& out_dir,
                                                        const char* images_name,
                                                        const char* meta_name,
                                                        const std::string& expect_cohort) {
    const std::string images = join_path(out_dir, images_name);
    const std::string meta = join_path(out_dir, meta_name);
    require_file(images, "run the generate command first");
    require_file(meta, "run the generate command first");
    std::vector<phantom::SubjectRecord> records = phantom::load_cohort(images, meta);
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (!expect_cohort.empty() && r.cohort != expect_cohort) {
            throw DataError("cohort file " + std::string(meta_name) + " contains a record '" +
                            r.id + "' tagged '" + r.cohort + "', expected '" + expect_cohort +
                            "'");
        }
        if (!seen.insert(r.id).second) {
            throw DataError("cohort file " + std::string(meta_name) + " has duplicate id '" +
                            r.id + "'");
        }
    }
    return records;
}

void check_image_size(const std::vector<phantom::SubjectRecord>& records, int expected) {
    for (const auto& r : records) {
        const auto& sh = r.image.shape();
        if (sh.size() != 3 || sh[1] != expected || sh[2] != expected) {
            throw DataError("subject " + r.id + " image does not match configured size " +
                            std::to_string(expected));
        }
    }
}

std::vector<model::Sample> to_samples(const std::vector<phantom::SubjectRecord>& records) {
    std::vector<model::Sample> samples;
    samples.reserve(records.size());
    for (const auto& r : records) {
        model::Sample s;
        s.id = r.id;
        s.age = r.age;
        s.image.assign(r.image.data(), r.image.data() + r.image.size());
        samples.push_back(std::move(s));
    }
    return samples;
}

// --- batched inference helpers ---------------------------------------------------

ag::Tensor stack_images(const std::vector<phantom::SubjectRecord>& records, size_t begin,
                        size_t end) {
    const int size = records[begin].image.shape()[1];
    ag::Tensor x({static_cast<int>(end - begin), 1, size, size}, 0.0f);
    float* dst = x.data();
    for (size_t i = begin; i < end; ++i) {
        std::copy(records[i].image.data(), records[i].image.data() + records[i].image.size(),
                  dst + (i - begin) * records[i].image.size());
    }
    return x;
}

ag::Tensor image_row(const ag::Tensor& batch, size_t row) {
    const auto& sh = batch.shape();
    ag::Tensor out({1, sh[2], sh[3]}, 0.0f);
    const size_t plane = out.size();
    std::copy(batch.data() + row * plane, batch.data() + (row + 1) * plane, out.data());
    return out;
}

constexpr size_t kInferBatch = 32;

std::vector<std::vector<double>> encode_all(const model::HDAEModel& model,
                                            const std::vector<phantom::SubjectRecord>& records) {
    std::vector<std::vector<double>> latents;
    latents.reserve(records.size());
    for (size_t begin = 0; begin < records.size(); begin += kInferBatch) {
        const size_t end = std::min(records.size(), begin + kInferBatch);
        std::vector<double> ages;
        for (size_t i = begin; i < end; ++i) ages.push_back(records[i].age);
        const ag::Tensor z = model.encode(nullptr, stack_images(records, begin, end), ages);
        const int d = z.shape()[1];
        for (size_t i = begin; i < end; ++i) {
            std::vector<double> row(static_cast<size_t>(d));
            const float* src = z.data() + (i - begin) * d;
            for (int k = 0; k < d; ++k) row[static_cast<size_t>(k)] = src[k];
            latents.push_back(std::move(row));
        }
    }
    return latents;
}

// --- quantiles & histograms -------------------------------------------------------

double quantile_linear(std::vector<double> sorted, double q) {
    const size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(n - 1, lo + 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Histogram {
    std::vector<double> edges;
    std::vector<double> counts;
};

Histogram make_histogram(const std::vector<double>& values, int bins) {
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(lo < hi)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.counts.assign(static_cast<size_t>(bins), 0.0);
    for (int b = 0; b <= bins; ++b) {
        h.edges.push_back(lo + (hi - lo) * b / bins);
    }
    for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<size_t>(b)] += 1.0;
    }
    return h;
}

} // namespace

std::string now_iso8601() {
    std::time_t t;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    } else {
        t = std::time(nullptr);
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Settings parse_settings(const tab::Config& cfg) {
    Settings s;
    s.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

    s.phantom.image_size = static_cast<int>(cfg.get_int("phantom.image_size", 32));
    s.phantom.healthy_n = static_cast<int>(cfg.get_int("phantom.healthy_n", 64));
    s.phantom.patient_n = static_cast<int>(cfg.get_int("phantom.patient_n", 32));
    s.phantom.healthy_age_lo = cfg.get_double("phantom.healthy_age_lo", 40.0);
    s.phantom.healthy_age_hi = cfg.get_double("phantom.healthy_age_hi", 80.0);
    s.phantom.patient_age_lo = cfg.get_double("phantom.patient_age_lo", 50.0);
    s.phantom.patient_age_hi = cfg.get_double("phantom.patient_age_hi", 85.0);
    s.phantom.severity_max = cfg.get_double("phantom.severity_max", 3.0);
    s.phantom.b_true = cfg.get_double("phantom.b_true", 0.8);
    s.phantom.lambda0 = cfg.get_double("phantom.lambda0", 1.0 / 1000.0);
    s.phantom.censor_rate = cfg.get_double("phantom.censor_rate", 0.2);
    s.phantom.noise_sigma = cfg.get_double("phantom.noise_sigma", 0.02);
    s.phantom.seed = s.seed;
    s.phantom.validate();

    s.model.image_size =
        static_cast<int>(cfg.get_int("model.image_size", s.phantom.image_size));
    const std::string channels = cfg.get_string("model.channels", "32,64,128");
    s.model.channels.clear();
    for (const std::string& c : split_list(channels)) {
        try {
            s.model.channels.push_back(std::stoi(c));
        } catch (const std::exception&) {
            throw ConfigError("config: model.channels has non-integer entry '" + c + "'");
        }
    }
    s.model.latent_dim = static_cast<int>(cfg.get_int("model.latent_dim", 64));
    s.model.time_embed_dim = static_cast<int>(cfg.get_int("model.time_embed_dim", 64));
    s.model.age_embed_dim = static_cast<int>(cfg.get_int("model.age_embed_dim", 64));
    s.model.groups = static_cast<int>(cfg.get_int("model.groups", 8));
    s.model.validate();

    s.diffusion_steps = static_cast<int>(cfg.get_int("diffusion.steps", 100));
    s.beta_start = cfg.get_double("diffusion.beta_start", 1e-4);
    s.beta_end = cfg.get_double("diffusion.beta_end", 0.02);
    s.encode_steps = static_cast<int>(cfg.get_int("diffusion.encode_steps", 25));
    if (s.diffusion_steps < 2) throw ConfigError("config: diffusion.steps must be >= 2");
    if (s.encode_steps < 2 || s.encode_steps > s.diffusion_steps) {
        throw ConfigError("config: diffusion.encode_steps must lie in [2, diffusion.steps]");
    }

    s.train.epochs = static_cast<int>(cfg.get_int("train.epochs", 20));
    s.train.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 32));
    s.train.lr = cfg.get_double("train.lr", 1e-4);
    s.train.holdout_fraction = cfg.get_double("train.holdout_fraction", 0.1);
    s.train.threads = static_cast<int>(cfg.get_int("train.threads", 1));
    s.train.seed = s.seed;
    s.age_epochs = static_cast<int>(cfg.get_int("train.age_epochs", 0));
    if (s.train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    if (s.train.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
    if (!(s.train.lr > 0.0)) throw ConfigError("config: train.lr must be > 0");
    if (s.train.holdout_fraction < 0.0 || s.train.holdout_fraction > 0.9) {
        throw ConfigError("config: train.holdout_fraction must lie in [0, 0.9]");
    }
    if (s.train.threads < 1) throw ConfigError("config: train.threads must be >= 1");
    if (s.age_epochs < 0) throw ConfigError("config: train.age_epochs must be >= 0");

    s.score_age_baseline = cfg.get_string("score.age_baseline", "auto");
    if (s.score_age_baseline != "auto" && s.score_age_baseline != "on" &&
        s.score_age_baseline != "off") {
        throw ConfigError("config: score.age_baseline must be auto, on, or off");
    }
    s.score_reference = cfg.get_string("score.reference", "");

    s.ks_durations = cfg.get_string("survival.ks_durations", "deceased");
    if (s.ks_durations != "deceased" && s.ks_durations != "all") {
        throw ConfigError("config: survival.ks_durations must be 'deceased' or 'all'");
    }
    s.nmi_bins = static_cast<int>(cfg.get_int("survival.nmi_bins", 0));
    if (s.nmi_bins != 0 && s.nmi_bins < 2) {
        throw ConfigError("config: survival.nmi_bins must be 0 (auto) or >= 2");
    }
    const std::string quantiles = cfg.get_string("survival.quantiles", "0.1,0.25,0.5,0.75,0.9");
    s.partial_quantiles.clear();
    for (const std::string& q : split_list(quantiles)) {
        try {
            s.partial_quantiles.push_back(std::stod(q));
        } catch (const std::exception&) {
            throw ConfigError("config: survival.quantiles has non-numeric entry '" + q + "'");
        }
        if (!(s.partial_quantiles.back() > 0.0) || !(s.partial_quantiles.back() < 1.0)) {
            throw ConfigError("config: survival.quantiles entries must lie in (0, 1)");
        }
    }
    if (s.partial_quantiles.empty()) {
        throw ConfigError("config: survival.quantiles must not be empty");
    }
    std::sort(s.partial_quantiles.begin(), s.partial_quantiles.end());

    s.report_runs = split_list(cfg.get_string("report.runs", ""));

    cfg.require_all_consumed();
    return s;
}

Settings load_settings(const std::string& config_path,
                       std::optional<uint64_t> seed_override) {
    tab::Config cfg;
    if (!config_path.empty()) {
        if (!io::file_exists(config_path)) {
            throw ConfigError("config file '" + config_path + "' does not exist");
        }
        cfg = tab::Config::load(config_path);
    }
    Settings s = parse_settings(cfg);
    if (seed_override) {
        s.seed = *seed_override;
        s.phantom.seed = s.seed;
        s.train.seed = s.seed;
    }
    return s;
}

// --- commands --------------------------------------------------------------------

void cmd_generate(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("generate", s);

    const phantom::Cohorts cohorts = phantom::generate_cohorts(s.phantom);

    std::vector<ag::Tensor> himgs, pimgs;
    for (const auto& r : cohorts.healthy) himgs.push_back(r.image);
    for (const auto& r : cohorts.patients) pimgs.push_back(r.image);
    const std::string h_images = join_path(out_dir, kHealthyImages);
    const std::string h_meta = join_path(out_dir, kHealthyMeta);
    const std::string p_images = join_path(out_dir, kPatientImages);
    const std::string p_meta = join_path(out_dir, kPatientMeta);
    phantom::save_images(h_images, himgs);
    phantom::save_metadata(h_meta, cohorts.healthy);
    phantom::save_images(p_images, pimgs);
    phantom::save_metadata(p_meta, cohorts.patients);

    int events = 0;
    double mean_severity = 0.0;
    for (const auto& r : cohorts.patients) {
        events += r.event ? 1 : 0;
        mean_severity += r.severity;
    }
    mean_severity /= static_cast<double>(cohorts.patients.size());

    manifest.add_artifact("healthy_images", h_images);
    manifest.add_artifact("healthy_meta", h_meta);
    manifest.add_artifact("patient_images", p_images);
    manifest.add_artifact("patient_meta", p_meta);
    manifest.metric("healthy_n", static_cast<double>(cohorts.healthy.size()));
    manifest.metric("patient_n", static_cast<double>(cohorts.patients.size()));
    manifest.metric("patient_events", static_cast<double>(events));
    manifest.metric("patient_censored_fraction",
                    1.0 - static_cast<double>(events) /
                              static_cast<double>(cohorts.patients.size()));
    manifest.metric("patient_mean_severity", mean_severity);
    manifest.write(out_dir);
}

namespace {

// Shared by cmd_train and cmd_train_age_baseline.
std::vector<model::Sample> load_training_cohort(const Settings& s, const std::string& out_dir) {
    const std::vector<phantom::SubjectRecord> healthy =
        load_cohort_checked(out_dir, kHealthyImages, kHealthyMeta, "healthy");
    check_image_size(healthy, s.model.image_size);

    // Leakage guard: a patient smuggled into the healthy file under a healthy
    // tag is still caught by its id appearing in the patient metadata.
    const std::string p_meta = join_path(out_dir, kPatientMeta);
    if (fs::exists(p_meta)) {
        const std::set<std::string> patient_ids = csv_id_set(p_meta);
        for (const auto& r : healthy) {
            if (patient_ids.count(r.id)) {
                throw DataError("leakage guard: id '" + r.id +
                                "' appears in both the healthy training cohort and the patient "
                                "cohort");
            }
        }
    }
    return to_samples(healthy);
}

void write_loss_curve(const std::string& path, const std::vector<double>& losses) {
    tab::Csv csv;
    csv.header = {"epoch", "mean_loss"};
    for (size_t e = 0; e < losses.size(); ++e) {
        csv.rows.push_back({std::to_string(e + 1), tab::format_double(losses[e])});
    }
    tab::write_csv(path, csv);
}

} // namespace

void cmd_train(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("train", s);
    const std::vector<model::Sample> samples = load_training_cohort(s, out_dir);

    model::HDAEModel hdae(s.model, s.seed);
    const diff::NoiseSchedule schedule =
        diff::NoiseSchedule::linear(s.diffusion_steps, s.beta_start, s.beta_end);
    const model::TrainResult result = model::train_hdae(
        hdae, samples, schedule, s.train, [&](int epoch, double loss) {
            std::fprintf(stderr, "[train] epoch %d/%d  loss %.6f\n", epoch, s.train.epochs, loss);
        });

    hdae.meta.epochs = s.train.epochs;
    hdae.meta.seed = s.seed;
    hdae.meta.final_loss = result.final_loss;

    const std::string loss_path = join_path(out_dir, kLossCurve);
    write_loss_curve(loss_path, result.epoch_losses);

    model::CheckpointInfo info;
    info.kind = "hdae";
    info.config = s.model;
    info.schedule_steps = s.diffusion_steps;
    info.beta_start = s.beta_start;
    info.beta_end = s.beta_end;
    info.age_mean = hdae.age_mean;
    info.age_std = hdae.age_std;
    info.meta = hdae.meta;
    for (size_t i : result.train_indices) info.train_ids.push_back(samples[i].id);
    const std::string ckpt_path = join_path(out_dir, kCheckpoint);
    model::save_checkpoint(ckpt_path, info, hdae.params);

    manifest.add_artifact("checkpoint", ckpt_path);
    manifest.add_artifact("loss_curve", loss_path);
    manifest.metric("untrained_loss", result.untrained_loss);
    manifest.metric("final_loss", result.final_loss);
    manifest.metric("loss_ratio", result.final_loss / result.untrained_loss);
    manifest.metric("n_train", static_cast<double>(result.train_indices.size()));
    manifest.metric("n_holdout", static_cast<double>(result.holdout_indices.size()));
    manifest.write(out_dir);
}

void cmd_train_age_baseline(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("train-age-baseline", s);
    const std::vector<model::Sample> samples = load_training_cohort(s, out_dir);

    model::AgeRegressor reg(s.model, s.seed + 1);
    model::TrainConfig tc = s.train;
    if (s.age_epochs > 0) tc.epochs = s.age_epochs;
    const model::TrainResult result =
        model::train_age_regressor(reg, samples, tc, [&](int epoch, double loss) {
            std::fprintf(stderr, "[train-age] epoch %d/%d  loss %.6f\n", epoch, tc.epochs, loss);
        });

    reg.meta.epochs = tc.epochs;
    reg.meta.seed = s.seed;
    reg.meta.final_loss = result.final_loss;

    const std::string loss_path = join_path(out_dir, kAgeLossCurve);
    write_loss_curve(loss_path, result.epoch_losses);

    model::CheckpointInfo info;
    info.kind = "age-regressor";
    info.config = s.model;
    info.age_mean = reg.age_mean;
    info.age_std = reg.age_std;
    info.meta = reg.meta;
    for (size_t i : result.train_indices) info.train_ids.push_back(samples[i].id);
    const std::string ckpt_path = join_path(out_dir, kAgeCheckpoint);
    model::save_checkpoint(ckpt_path, info, reg.params);

    manifest.add_artifact("checkpoint", ckpt_path);
    manifest.add_artifact("loss_curve", loss_path);
    manifest.metric("untrained_loss", result.untrained_loss);
    manifest.metric("final_loss", result.final_loss);
    manifest.metric("n_train", static_cast<double>(result.train_indices.size()));
    manifest.metric("n_holdout", static_cast<double>(result.holdout_indices.size()));
    manifest.write(out_dir);
}

void cmd_score(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("score", s);

    const std::string ckpt_path = join_path(out_dir, kCheckpoint);
    require_file(ckpt_path, "run the train command first");
    const std::string age_ckpt_path = join_path(out_dir, kAgeCheckpoint);
    const bool want_age = s.score_age_baseline == "on" ||
                          (s.score_age_baseline == "auto" && fs::exists(age_ckpt_path));
    if (s.score_age_baseline == "on") {
        require_file(age_ckpt_path, "run the train-age-baseline command first");
    }

    const std::vector<phantom::SubjectRecord> healthy =
        load_cohort_checked(out_dir, kHealthyImages, kHealthyMeta, "healthy");
    const std::vector<phantom::SubjectRecord> patients =
        load_cohort_checked(out_dir, kPatientImages, kPatientMeta, "patient");

    diff::NoiseSchedule schedule;
    const model::HDAEModel hdae = model::load_hdae(ckpt_path, &schedule);
    const model::CheckpointInfo info = model::peek_checkpoint(ckpt_path);
    check_image_size(healthy, hdae.cfg.image_size);
    check_image_size(patients, hdae.cfg.image_size);

    // Leakage guard: no scored patient may have entered training.
    {
        const std::set<std::string> train_ids(info.train_ids.begin(), info.train_ids.end());
        for (const auto& p : patients) {
            if (train_ids.count(p.id)) {
                throw DataError("leakage guard: patient '" + p.id +
                                "' was part of the training cohort");
            }
        }
    }

    const std::string digest = hex64(model::file_digest(ckpt_path));

    const std::vector<std::vector<double>> healthy_latents = encode_all(hdae, healthy);
    scoring::HealthyReference ref = scoring::compute_reference(healthy_latents, digest);
    if (!s.score_reference.empty()) {
        require_file(s.score_reference, "score.reference points here");
        json j;
        try {
            j = json::parse(io::read_file(s.score_reference));
            scoring::HealthyReference loaded;
            loaded.model_digest = j.at("model_digest").get<std::string>();
            loaded.n = j.at("n").get<int>();
            loaded.mu = j.at("mu").get<std::vector<double>>();
            if (loaded.model_digest != digest) {
                throw DataError("healthy reference '" + s.score_reference +
                                "' was built for checkpoint digest " + loaded.model_digest +
                                ", current checkpoint digest is " + digest);
            }
            ref = std::move(loaded);
        } catch (const json::exception& e) {
            throw DataError("healthy reference '" + s.score_reference +
                            "' is malformed: " + e.what());
        }
    } else {
        json j;
        j["model_digest"] = ref.model_digest;
        j["n"] = ref.n;
        j["mu"] = ref.mu;
        io::atomic_write(join_path(out_dir, kReference), j.dump(2) + "\n");
    }

    // Healthy subjects' own similarity (reported for context).
    double healthy_sim = 0.0;
    for (const auto& z : healthy_latents) {
        healthy_sim += scoring::cosine_similarity(ref.mu, z);
    }
    healthy_sim /= static_cast<double>(healthy_latents.size());

    const diff::SamplingPlan plan =
        diff::SamplingPlan::evenly_spaced(schedule.steps(), s.encode_steps);

    const std::vector<std::vector<double>> patient_latents = encode_all(hdae, patients);
    std::vector<double> similarity(patients.size()), mse(patients.size());
    for (size_t begin = 0; begin < patients.size(); begin += kInferBatch) {
        const size_t end = std::min(patients.size(), begin + kInferBatch);
        std::vector<double> ages;
        for (size_t i = begin; i < end; ++i) ages.push_back(patients[i].age);
        const ag::Tensor x0 = stack_images(patients, begin, end);
        const ag::Tensor recon = model::reconstruct(hdae, schedule, plan, x0, ages);
        for (size_t i = begin; i < end; ++i) {
            similarity[i] = scoring::cosine_similarity(ref.mu, patient_latents[i]);
            mse[i] = scoring::image_deviation(image_row(x0, i - begin),
                                              image_row(recon, i - begin));
        }
        std::fprintf(stderr, "[score] reconstructed %zu/%zu patients\n", end, patients.size());
    }
    const std::vector<double> similarity_std = scoring::standardize(similarity);
    const std::vector<double> mse_std = scoring::standardize(mse);

    std::vector<double> brain_pad, brain_pad_std;
    if (want_age) {
        const model::AgeRegressor reg = model::load_age_regressor(age_ckpt_path);
        check_image_size(patients, reg.cfg.image_size);
        brain_pad.resize(patients.size());
        for (size_t begin = 0; begin < patients.size(); begin += kInferBatch) {
            const size_t end = std::min(patients.size(), begin + kInferBatch);
            const std::vector<double> preds =
                reg.predict_age(stack_images(patients, begin, end));
            for (size_t i = begin; i < end; ++i) {
                brain_pad[i] = preds[i - begin] - patients[i].age;
            }
        }
        brain_pad_std = scoring::standardize(brain_pad);
    }

    tab::Csv csv;
    csv.header = {"subject_id",           "age",       "sex", "latent_similarity",
                  "latent_similarity_std", "image_mse", "image_mse_std"};
    if (want_age) {
        csv.header.push_back("brain_pad");
        csv.header.push_back("brain_pad_std");
    }
    for (size_t i = 0; i < patients.size(); ++i) {
        std::vector<std::string> row = {patients[i].id,
                                        tab::format_double(patients[i].age),
                                        std::to_string(patients[i].sex),
                                        tab::format_double(similarity[i]),
                                        tab::format_double(similarity_std[i]),
                                        tab::format_double(mse[i]),
                                        tab::format_double(mse_std[i])};
        if (want_age) {
            row.push_back(tab::format_double(brain_pad[i]));
            row.push_back(tab::format_double(brain_pad_std[i]));
        }
        csv.rows.push_back(std::move(row));
    }
    const std::string scores_path = join_path(out_dir, kScores);
    tab::write_csv(scores_path, csv);

    double patient_sim = 0.0, patient_mse = 0.0;
    for (size_t i = 0; i < patients.size(); ++i) {
        patient_sim += similarity[i];
        patient_mse += mse[i];
    }
    patient_sim /= static_cast<double>(patients.size());
    patient_mse /= static_cast<double>(patients.size());

    manifest.add_artifact("scores", scores_path);
    if (s.score_reference.empty()) {
        manifest.add_artifact("healthy_reference", join_path(out_dir, kReference));
    }
    manifest.metric("n_patients", static_cast<double>(patients.size()));
    manifest.metric("n_healthy_reference", static_cast<double>(ref.n));
    manifest.metric("healthy_mean_similarity", healthy_sim);
    manifest.metric("patient_mean_similarity", patient_sim);
    manifest.metric("patient_mean_image_mse", patient_mse);
    manifest.metric("used_age_baseline", want_age ? 1.0 : 0.0);
    manifest.write(out_dir);
}

namespace {

struct ScoredSubject {
    std::string id;
    double age = 0.0;
    double sex = 0.0;
    double duration = 0.0;
    bool event = false;
    std::map<std::string, double> scores;  // score type -> standardized value
    std::map<std::string, double> raw;     // score type -> raw value
};

double parse_cell(const std::string& raw, const std::string& what) {
    try {
        size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw DataError("survival: bad " + what + " value '" + raw + "'");
    }
}

} // namespace

void cmd_survival(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("survival", s);

    const std::string scores_path = join_path(out_dir, kScores);
    const std::string meta_path = join_path(out_dir, kPatientMeta);
    require_file(scores_path, "run the score command first");
    require_file(meta_path, "run the generate command first");

    const tab::Csv scores = tab::read_csv(scores_path);
    const tab::Csv meta = tab::read_csv(meta_path);

    std::vector<std::string> score_types = {"latent_similarity", "image_mse"};
    if (std::find(scores.header.begin(), scores.header.end(), "brain_pad") !=
        scores.header.end()) {
        score_types.push_back("brain_pad");
    }

    // Join scores to survival metadata on subject_id; both id sets must match.
    const size_t sc_id = tab::column_index(scores, "subject_id");
    const size_t sc_age = tab::column_index(scores, "age");
    const size_t sc_sex = tab::column_index(scores, "sex");
    const size_t m_id = tab::column_index(meta, "subject_id");
    const size_t m_dur = tab::column_index(meta, "duration_days");
    const size_t m_event = tab::column_index(meta, "event");
    std::map<std::string, const std::vector<std::string>*> meta_by_id;
    for (const auto& row : meta.rows) meta_by_id[row[m_id]] = &row;
    if (meta_by_id.size() != meta.rows.size()) {
        throw DataError("survival: duplicate subject_id in " + std::string(kPatientMeta));
    }

    std::vector<ScoredSubject> subjects;
    std::set<std::string> scored_ids;
    for (const auto& row : scores.rows) {
        ScoredSubject subj;
        subj.id = row[sc_id];
        if (!scored_ids.insert(subj.id).second) {
            throw DataError("survival: duplicate subject_id '" + subj.id + "' in scores");
        }
        const auto it = meta_by_id.find(subj.id);
        if (it == meta_by_id.end()) {
            throw DataError("survival: scored subject '" + subj.id +
                            "' missing from survival metadata");
        }
        const auto& mrow = *it->second;
        subj.age = parse_cell(row[sc_age], "age");
        subj.sex = parse_cell(row[sc_sex], "sex");
        subj.duration = parse_cell(mrow[m_dur], "duration_days");
        const std::string& ev = mrow[m_event];
        subj.event = ev == "true" || ev == "1";
        for (const std::string& type : score_types) {
            subj.raw[type] = parse_cell(row[tab::column_index(scores, type)], type);
            subj.scores[type] =
                parse_cell(row[tab::column_index(scores, type + "_std")], type + "_std");
        }
        subjects.push_back(std::move(subj));
    }
    for (const auto& [id, row] : meta_by_id) {
        if (!scored_ids.count(id)) {
            throw DataError("survival: metadata subject '" + id + "' has no score row");
        }
    }
    if (subjects.size() < 3) throw DataError("survival: need at least 3 scored subjects");

    int n_events = 0;
    for (const auto& subj : subjects) n_events += subj.event ? 1 : 0;

    // (a) Associations vs survival time, deceased subjects only.
    tab::Csv assoc;
    assoc.header = {"score_type", "n_deceased", "pearson_r", "pearson_p",
                    "kendall_tau", "kendall_p", "nmi", "nmi_bins"};
    std::vector<double> deceased_durations;
    for (const auto& subj : subjects) {
        if (subj.event) deceased_durations.push_back(subj.duration);
    }
    for (const std::string& type : score_types) {
        std::vector<double> xs;
        for (const auto& subj : subjects) {
            if (subj.event) xs.push_back(subj.scores.at(type));
        }
        const surv::TestResult pr = surv::pearson(xs, deceased_durations);
        const surv::TestResult kt = surv::kendall_tau(xs, deceased_durations);
        const int bins = s.nmi_bins > 0
                             ? s.nmi_bins
                             : std::max(2, static_cast<int>(std::floor(
                                               std::sqrt(static_cast<double>(xs.size())))));
        const double nmi = surv::normalized_mutual_info(xs, deceased_durations, bins);
        assoc.rows.push_back({type, std::to_string(xs.size()), tab::format_double(pr.statistic),
                              tab::format_double(pr.p_value), tab::format_double(kt.statistic),
                              tab::format_double(kt.p_value), tab::format_double(nmi),
                              std::to_string(bins)});
        manifest.metric("pearson_r_" + type, pr.statistic);
        manifest.metric("kendall_tau_" + type, kt.statistic);
    }
    const std::string assoc_path = join_path(out_dir, kAssociations);
    tab::write_csv(assoc_path, assoc);
    manifest.add_artifact("associations", assoc_path);

    // (b) Cox fits with covariates {sex, age, standardized score}: one fit
    // report per score type with columns covariate,coef,se,HR,CI_low,CI_high,p.
    std::map<std::string, surv::CoxFit> fits;
    for (const std::string& type : score_types) {
        std::vector<surv::SurvivalRecord> recs;
        for (const auto& subj : subjects) {
            recs.push_back(
                {subj.id, subj.duration, subj.event, {subj.sex, subj.age, subj.scores.at(type)}});
        }
        const std::vector<std::string> names = {"sex", "age", type + "_std"};
        const surv::CoxFit fit = surv::cox_fit(recs, names);
        tab::Csv coxcsv;
        coxcsv.header = {"covariate", "coef", "se", "HR", "CI_low", "CI_high", "p"};
        for (size_t k = 0; k < names.size(); ++k) {
            coxcsv.rows.push_back({names[k], tab::format_double(fit.coef[k]),
                                   tab::format_double(fit.se[k]),
                                   tab::format_double(fit.hazard_ratio[k]),
                                   tab::format_double(fit.ci_low[k]),
                                   tab::format_double(fit.ci_high[k]),
                                   tab::format_double(fit.p_value[k])});
        }
        const std::string cox_path = join_path(out_dir, kCoxFitPrefix + type + ".csv");
        tab::write_csv(cox_path, coxcsv);
        manifest.add_artifact("cox_fit_" + type, cox_path);
        manifest.metric("cox_hr_" + type, fit.hazard_ratio[2]);
        manifest.metric("cox_p_" + type, fit.p_value[2]);
        fits.emplace(type, fit);
    }

    // (c) Median split on latent similarity: KM per group + KS between groups.
    std::vector<surv::SurvivalRecord> latent_recs;
    std::vector<std::pair<std::string, double>> latent_scores;
    for (const auto& subj : subjects) {
        latent_recs.push_back({subj.id,
                               subj.duration,
                               subj.event,
                               {subj.sex, subj.age, subj.scores.at("latent_similarity")}});
        latent_scores.emplace_back(subj.id, subj.raw.at("latent_similarity"));
    }
    const surv::SplitGroups split = surv::median_split_by_id(latent_scores, latent_recs);

    std::vector<svg::Series> km_series;
    bool split_ok = true;
    if (split.low.empty() || split.high.empty()) {
        split_ok = false;
        manifest.warn("degenerate median split on latent_similarity: one group is empty");
    } else {
        struct Group {
            const char* name;
            const std::vector<surv::SurvivalRecord>* records;
        };
        for (const Group& g : {Group{"high_similarity", &split.high},
                               Group{"low_similarity", &split.low}}) {
            const std::vector<surv::KMPoint> curve = surv::km_estimate(*g.records);
            tab::Csv kmcsv;
            kmcsv.header = {"time", "survival", "at_risk", "deaths"};
            svg::Series series;
            series.label = std::string(g.name) + " (n=" + std::to_string(g.records->size()) + ")";
            series.step = true;
            series.xs.push_back(0.0);
            series.ys.push_back(1.0);
            for (const surv::KMPoint& p : curve) {
                kmcsv.rows.push_back({tab::format_double(p.time),
                                      tab::format_double(p.survival), std::to_string(p.at_risk),
                                      std::to_string(p.deaths)});
                series.xs.push_back(p.time);
                series.ys.push_back(p.survival);
            }
            const std::string km_path =
                join_path(out_dir, kKmSplitPrefix + std::string(g.name) + ".csv");
            tab::write_csv(km_path, kmcsv);
            manifest.add_artifact("km_split_" + std::string(g.name), km_path);
            km_series.push_back(std::move(series));
        }
    }

    tab::Csv kscsv;
    kscsv.header = {"score_type", "durations", "D", "p", "n_low", "n_high"};
    std::string ks_title_suffix;
    if (split_ok) {
        auto durations_of = [&](const std::vector<surv::SurvivalRecord>& recs) {
            std::vector<double> out;
            for (const auto& r : recs) {
                if (s.ks_durations == "all" || r.event) out.push_back(r.duration);
            }
            return out;
        };
        const std::vector<double> low = durations_of(split.low);
        const std::vector<double> high = durations_of(split.high);
        if (low.empty() || high.empty()) {
            manifest.warn("KS on median split skipped: a group has no usable durations (" +
                          s.ks_durations + " variant)");
        } else {
            const surv::TestResult ks = surv::ks_two_sample(low, high);
            kscsv.rows.push_back({"latent_similarity", s.ks_durations,
                                  tab::format_double(ks.statistic), tab::format_double(ks.p_value),
                                  std::to_string(low.size()), std::to_string(high.size())});
            manifest.metric("ks_D", ks.statistic);
            manifest.metric("ks_p", ks.p_value);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "  (KS D=%.3f, p=%.3g)", ks.statistic, ks.p_value);
            ks_title_suffix = buf;
        }
    }
    const std::string ks_path = join_path(out_dir, kKsSplit);
    tab::write_csv(ks_path, kscsv);
    manifest.add_artifact("ks_split", ks_path);

    if (split_ok) {
        svg::PlotSpec spec;
        spec.title = "Survival by median-split latent similarity" + ks_title_suffix;
        spec.xlabel = "days";
        spec.ylabel = "survival probability";
        spec.fix_y01 = true;
        io::atomic_write(join_path(out_dir, kKmSplitSvg), svg::line_plot(spec, km_series));
        manifest.add_artifact("km_split_svg", join_path(out_dir, kKmSplitSvg));
    }

    // (d) Partial-effect survival curves at score quantiles (latent model).
    {
        const surv::CoxFit& fit = fits.at("latent_similarity");
        std::vector<double> sorted_scores;
        for (const auto& subj : subjects) {
            sorted_scores.push_back(subj.scores.at("latent_similarity"));
        }
        std::sort(sorted_scores.begin(), sorted_scores.end());
        std::vector<double> values;
        for (double q : s.partial_quantiles) values.push_back(quantile_linear(sorted_scores, q));
        const std::vector<surv::PartialEffectCurve> curves =
            surv::partial_effect_curves(latent_recs, fit, 2, values);

        tab::Csv pcsv;
        pcsv.header = {"quantile", "score_value", "time", "survival"};
        std::vector<svg::Series> pseries;
        for (size_t c = 0; c < curves.size(); ++c) {
            char label[64];
            std::snprintf(label, sizeof(label), "q=%.2f (score %.2f)", s.partial_quantiles[c],
                          curves[c].score_value);
            svg::Series series;
            series.label = label;
            series.step = true;
            series.xs.push_back(0.0);
            series.ys.push_back(1.0);
            for (size_t i = 0; i < curves[c].times.size(); ++i) {
                pcsv.rows.push_back({tab::format_double(s.partial_quantiles[c]),
                                     tab::format_double(curves[c].score_value),
                                     tab::format_double(curves[c].times[i]),
                                     tab::format_double(curves[c].survival[i])});
                series.xs.push_back(curves[c].times[i]);
                series.ys.push_back(curves[c].survival[i]);
            }
            pseries.push_back(std::move(series));
        }
        const std::string partial_path = join_path(out_dir, kKmPartialCsv);
        tab::write_csv(partial_path, pcsv);
        manifest.add_artifact("km_partial", partial_path);

        svg::PlotSpec spec;
        spec.title = "Cox partial effect of latent similarity";
        spec.xlabel = "days";
        spec.ylabel = "survival probability";
        spec.fix_y01 = true;
        io::atomic_write(join_path(out_dir, kKmPartialSvg), svg::line_plot(spec, pseries));
        manifest.add_artifact("km_partial_svg", join_path(out_dir, kKmPartialSvg));
    }

    // (e) Standardized score distributions.
    {
        const int bins = std::clamp(
            static_cast<int>(std::ceil(std::sqrt(static_cast<double>(subjects.size())))), 8, 30);
        tab::Csv dcsv;
        dcsv.header = {"score_type", "bin_lo", "bin_hi", "count"};
        std::vector<svg::HistogramSeries> hseries;
        for (const std::string& type : score_types) {
            std::vector<double> values;
            for (const auto& subj : subjects) values.push_back(subj.scores.at(type));
            const Histogram h = make_histogram(values, bins);
            svg::HistogramSeries series;
            series.label = type + "_std";
            series.edges = h.edges;
            series.counts = h.counts;
            for (size_t b = 0; b < h.counts.size(); ++b) {
                dcsv.rows.push_back({type, tab::format_double(h.edges[b]),
                                     tab::format_double(h.edges[b + 1]),
                                     tab::format_double(h.counts[b])});
            }
            hseries.push_back(std::move(series));
        }
        const std::string dist_path = join_path(out_dir, kScoreDistCsv);
        tab::write_csv(dist_path, dcsv);
        manifest.add_artifact("score_distributions", dist_path);

        svg::PlotSpec spec;
        spec.title = "Standardized normative score distributions";
        spec.xlabel = "standardized score";
        spec.ylabel = "patients";
        io::atomic_write(join_path(out_dir, kScoreDistSvg), svg::histogram_plot(spec, hseries));
        manifest.add_artifact("score_distributions_svg", join_path(out_dir, kScoreDistSvg));
    }

    manifest.metric("n_patients", static_cast<double>(subjects.size()));
    manifest.metric("n_events", static_cast<double>(n_events));
    manifest.write(out_dir);
}

void cmd_report(const Settings& s, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    ManifestBuilder manifest("report", s);

    std::vector<std::string> paths = s.report_runs;
    if (paths.empty()) {
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("manifest_", 0) == 0 && name.size() > 5 &&
                name.substr(name.size() - 5) == ".json" && name != "manifest_report.json") {
                paths.push_back(entry.path().string());
            }
        }
        std::sort(paths.begin(), paths.end());
    }
    if (paths.empty()) {
        throw DataError("report: no manifests found (pass report.runs or run commands first)");
    }

    struct Run {
        std::string path;
        std::string command;
        uint64_t seed = 0;
        std::map<std::string, double> metrics;
    };
    std::vector<Run> runs;
    int skipped = 0;
    for (const std::string& path : paths) {
        try {
            const json j = json::parse(io::read_file(path));
            Run run;
            run.path = path;
            run.command = j.at("command").get<std::string>();
            run.seed = j.at("seed").get<uint64_t>();
            for (const auto& [key, value] : j.at("final_metrics").items()) {
                run.metrics[key] = value.get<double>();
            }
            runs.push_back(std::move(run));
        } catch (const std::exception& e) {
            ++skipped;
            manifest.warn("skipping unreadable manifest '" + path + "': " + e.what());
            std::fprintf(stderr, "[report] warning: skipping '%s': %s\n", path.c_str(), e.what());
        }
    }
    if (runs.empty()) throw DataError("report: no readable manifests among the inputs");

    // Aggregate metrics per (command, metric).
    std::map<std::pair<std::string, std::string>, std::vector<double>> grouped;
    for (const Run& run : runs) {
        for (const auto& [metric, value] : run.metrics) {
            grouped[{run.command, metric}].push_back(value);
        }
    }
    tab::Csv rcsv;
    rcsv.header = {"command", "metric", "n_runs", "mean", "sd", "min", "max"};
    for (const auto& [key, values] : grouped) {
        double mean = 0.0, lo = values[0], hi = values[0];
        for (double v : values) {
            mean += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        mean /= static_cast<double>(values.size());
        double sd = 0.0;
        if (values.size() > 1) {
            for (double v : values) sd += (v - mean) * (v - mean);
            sd = std::sqrt(sd / static_cast<double>(values.size() - 1));
        }
        rcsv.rows.push_back({key.first, key.second, std::to_string(values.size()),
                             tab::format_double(mean), tab::format_double(sd),
                             tab::format_double(lo), tab::format_double(hi)});
    }
    const std::string csv_path = join_path(out_dir, kReportCsv);
    tab::write_csv(csv_path, rcsv);

    std::string md = "# Pipeline report\n\n";
    md += "Collated from " + std::to_string(runs.size()) + " manifest(s); " +
          std::to_string(skipped) + " skipped.\n\n";
    md += "## Runs\n\n| manifest | command | seed |\n|---|---|---|\n";
    for (const Run& run : runs) {
        md += "| " + fs::path(run.path).filename().string() + " | " + run.command + " | " +
              std::to_string(run.seed) + " |\n";
    }
    md += "\n## Metrics\n\n| command | metric | n | mean | sd | min | max |\n"
          "|---|---|---|---|---|---|---|\n";
    for (const auto& row : rcsv.rows) {
        md += "| " + row[0] + " | " + row[1] + " | " + row[2] + " | " + row[3] + " | " + row[4] +
              " | " + row[5] + " | " + row[6] + " |\n";
    }
    const std::string md_path = join_path(out_dir, kReportMd);
    io::atomic_write(md_path, md);

    manifest.add_artifact("report_csv", csv_path);
    manifest.add_artifact("report_md", md_path);
    manifest.metric("n_manifests", static_cast<double>(runs.size()));
    manifest.metric("n_skipped", static_cast<double>(skipped));
    manifest.write(out_dir);
}

} // namespace normdae::pipe
