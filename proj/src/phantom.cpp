#include "normdae/phantom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>

#include "normdae/errors.hpp"
#include "normdae/fsio.hpp"
#include "normdae/tabular.hpp"

namespace normdae::phantom {

namespace {

// Pixel intensities of each tissue region.
constexpr double kBackground = 0.02;
constexpr double kSkull = 0.85;
constexpr double kCortex = 0.75;
constexpr double kWhiteMatter = 0.55;
constexpr double kVentricle = 0.12;

// Skull ring occupies elliptical radius (0.92, 1.0].
constexpr double kSkullInner = 0.92;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Linear edge ramp: 0 well outside, 1 well inside, transition width 2w.
double edge(double signed_dist, double w) {
    return std::clamp(0.5 + signed_dist / (2.0 * w), 0.0, 1.0);
}

double mix(double a, double b, double m) { return a + (b - a) * m; }

} // namespace

void PhantomConfig::validate() const {
    if (image_size < 8) throw ConfigError("phantom: image_size must be >= 8");
    if (healthy_n < 1 || patient_n < 1) {
        throw ConfigError("phantom: cohort sizes must be >= 1");
    }
    if (!(healthy_age_lo < healthy_age_hi) || !(patient_age_lo < patient_age_hi)) {
        throw ConfigError("phantom: age ranges must be nondegenerate (lo < hi)");
    }
    if (healthy_age_lo < 0.0 || patient_age_lo < 0.0 || healthy_age_hi > 120.0 ||
        patient_age_hi > 120.0) {
        throw ConfigError("phantom: ages must lie in [0, 120] years");
    }
    if (!(severity_max > 0.0)) throw ConfigError("phantom: severity_max must be > 0");
    if (!(lambda0 > 0.0)) throw ConfigError("phantom: lambda0 must be > 0");
    if (!(censor_rate >= 0.0) || censor_rate >= 1.0) {
        throw ConfigError("phantom: censor_rate must lie in [0, 1)");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("phantom: noise_sigma must be >= 0");
}

ag::Tensor render_phantom(int image_size, double age, double severity, int sex,
                          rng::Key noise_key, double noise_sigma) {
    if (image_size < 8) throw ConfigError("phantom: image_size must be >= 8");
    if (age < 0.0 || age > 120.0) {
        throw DataError("phantom: age " + std::to_string(age) + " outside [0, 120]");
    }
    if (severity < 0.0) throw DataError("phantom: severity must be >= 0");
    if (sex != 0 && sex != 1) throw DataError("phantom: sex must be 0 or 1");

    const double wmod = sex == 1 ? 1.03 : 0.97;
    const double rx = 0.42 * wmod;
    const double ry = 0.46;
    const double age01 = std::clamp((age - 40.0) / 45.0, 0.0, 1.0);

    // Cortical band thins with age and severity; ventricles grow with both.
    const double cortex_th = std::max(0.03, 0.24 - 0.10 * age01 - 0.05 * severity);
    const double vent_rx = std::min(0.18, 0.055 + 0.03 * age01 + 0.02 * severity);
    const double vent_ry = 1.6 * vent_rx;
    const double vent_cx = 0.11 * wmod;
    const double vent_cy = -0.02;

    const double w_main = 0.75 / (image_size * std::min(rx, ry));
    const double w_vent = 0.75 / (image_size * vent_rx);

    ag::Tensor img({1, image_size, image_size}, 0.0f);
    float* px = img.data();
    const double inv = 1.0 / image_size;
    size_t idx = 0;
    for (int y = 0; y < image_size; ++y) {
        const double cy = (y + 0.5) * inv - 0.5;
        for (int x = 0; x < image_size; ++x, ++idx) {
            const double cx = (x + 0.5) * inv - 0.5;
            const double rho =
                std::sqrt((cx / rx) * (cx / rx) + (cy / ry) * (cy / ry));
            double v = kBackground;
            v = mix(v, kSkull, edge(1.0 - rho, w_main));
            v = mix(v, kCortex, edge(kSkullInner - rho, w_main));
            v = mix(v, kWhiteMatter, edge(kSkullInner - cortex_th - rho, w_main));
            for (const double sx : {-1.0, 1.0}) {
                const double dx = (cx - sx * vent_cx) / vent_rx;
                const double dy = (cy - vent_cy) / vent_ry;
                const double rho_v = std::sqrt(dx * dx + dy * dy);
                v = mix(v, kVentricle, edge(1.0 - rho_v, w_vent));
            }
            if (noise_sigma > 0.0) {
                v += noise_sigma * rng::gaussian_at(noise_key, idx);
            }
            px[idx] = static_cast<float>(clamp01(v));
        }
    }
    return img;
}

namespace {

std::string padded_id(const char* prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%04d", prefix, i);
    return std::string(buf);
}

// Finds the censoring hazard c such that the expected censored fraction,
// averaged over the cohort's death hazards, equals `rate`.
double tune_censor_hazard(const std::vector<double>& lambdas, double rate) {
    if (rate <= 0.0) return 0.0;
    auto censored_fraction = [&](double c) {
        double acc = 0.0;
        for (double l : lambdas) acc += c / (c + l);
        return acc / static_cast<double>(lambdas.size());
    };
    double lo = 0.0, hi = 1.0;
    while (censored_fraction(hi) < rate) {
        hi *= 2.0;
        if (hi > 1e12) throw NumericError("phantom: censor-rate tuning failed to bracket");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (censored_fraction(mid) < rate) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

Cohorts generate_cohorts(const PhantomConfig& cfg) {
    cfg.validate();
    const rng::Key root(cfg.seed);
    Cohorts out;

    const rng::Key hkey = root.with("healthy");
    for (int i = 0; i < cfg.healthy_n; ++i) {
        const rng::Key k = hkey.with(static_cast<unsigned long long>(i));
        SubjectRecord r;
        r.id = padded_id("HC", i);
        r.cohort = "healthy";
        r.age = cfg.healthy_age_lo +
                rng::uniform_at(k.with("age"), 0) * (cfg.healthy_age_hi - cfg.healthy_age_lo);
        r.sex = rng::uniform_at(k.with("sex"), 0) < 0.5 ? 0 : 1;
        r.severity = 0.0;
        r.image = render_phantom(cfg.image_size, r.age, 0.0, r.sex, k.with("img"),
                                 cfg.noise_sigma);
        // Healthy subjects carry a fixed administrative follow-up window and
        // never contribute events; survival analysis runs on patients only.
        r.duration = 3650.0;
        r.event = false;
        out.healthy.push_back(std::move(r));
    }

    const rng::Key pkey = root.with("patient");
    std::vector<double> lambdas(static_cast<size_t>(cfg.patient_n));
    for (int i = 0; i < cfg.patient_n; ++i) {
        const rng::Key k = pkey.with(static_cast<unsigned long long>(i));
        SubjectRecord r;
        r.id = padded_id("PT", i);
        r.cohort = "patient";
        r.age = cfg.patient_age_lo +
                rng::uniform_at(k.with("age"), 0) * (cfg.patient_age_hi - cfg.patient_age_lo);
        r.sex = rng::uniform_at(k.with("sex"), 0) < 0.5 ? 0 : 1;
        r.severity = rng::uniform_at(k.with("sev"), 0) * cfg.severity_max;
        r.image = render_phantom(cfg.image_size, r.age, r.severity, r.sex, k.with("img"),
                                 cfg.noise_sigma);
        lambdas[static_cast<size_t>(i)] = cfg.lambda0 * std::exp(cfg.b_true * r.severity);
        out.patients.push_back(std::move(r));
    }

    const double censor_hazard = tune_censor_hazard(lambdas, cfg.censor_rate);
    for (int i = 0; i < cfg.patient_n; ++i) {
        const rng::Key k = pkey.with(static_cast<unsigned long long>(i));
        SubjectRecord& r = out.patients[static_cast<size_t>(i)];
        const double death =
            -std::log(rng::uniform_at(k.with("death"), 0)) / lambdas[static_cast<size_t>(i)];
        double censor = std::numeric_limits<double>::infinity();
        if (censor_hazard > 0.0) {
            censor = -std::log(rng::uniform_at(k.with("cens"), 0)) / censor_hazard;
        }
        r.event = death <= censor;
        // Whole-day durations: rounding deliberately produces tied times.
        r.duration = std::max(1.0, std::round(std::min(death, censor)));
    }
    return out;
}

void save_images(const std::string& path, const std::vector<ag::Tensor>& images) {
    if (images.empty()) throw DataError("raster: no images to save");
    const auto& shape = images.front().shape();
    if (shape.size() != 3 || shape[0] != 1) {
        throw DimensionError("raster: images must have shape [1, h, w]");
    }
    const uint32_t h = static_cast<uint32_t>(shape[1]);
    const uint32_t w = static_cast<uint32_t>(shape[2]);
    std::string buf;
    buf.reserve(20 + images.size() * h * w * 4);
    buf.append("NDRI", 4);
    auto put_u32 = [&buf](uint32_t v) {
        char b[4];
        std::memcpy(b, &v, 4);
        buf.append(b, 4);
    };
    put_u32(1);  // version
    put_u32(static_cast<uint32_t>(images.size()));
    put_u32(w);
    put_u32(h);
    for (const ag::Tensor& img : images) {
        if (img.shape() != shape) throw DimensionError("raster: mixed image shapes");
        buf.append(reinterpret_cast<const char*>(img.data()), img.size() * sizeof(float));
    }
    io::atomic_write(path, buf);
}

std::vector<ag::Tensor> load_images(const std::string& path) {
    const std::string buf = io::read_file(path);
    if (buf.size() < 20 || buf.compare(0, 4, "NDRI") != 0) {
        throw DataError("raster: " + path + " is not a raster container (bad magic)");
    }
    auto get_u32 = [&buf](size_t off) {
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        return v;
    };
    const uint32_t version = get_u32(4);
    if (version != 1) {
        throw DataError("raster: unsupported container version " + std::to_string(version));
    }
    const uint32_t count = get_u32(8);
    const uint32_t w = get_u32(12);
    const uint32_t h = get_u32(16);
    const size_t plane = static_cast<size_t>(w) * h;
    const size_t expect = 20 + static_cast<size_t>(count) * plane * sizeof(float);
    if (buf.size() != expect) {
        throw DataError("raster: " + path + " truncated (expected " + std::to_string(expect) +
                        " bytes, got " + std::to_string(buf.size()) + ")");
    }
    std::vector<ag::Tensor> images;
    images.reserve(count);
    size_t off = 20;
    for (uint32_t i = 0; i < count; ++i) {
        ag::Tensor img({1, static_cast<int>(h), static_cast<int>(w)}, 0.0f);
        std::memcpy(img.data(), buf.data() + off, plane * sizeof(float));
        off += plane * sizeof(float);
        images.push_back(std::move(img));
    }
    return images;
}

void save_metadata(const std::string& path, const std::vector<SubjectRecord>& records) {
    tab::Csv csv;
    csv.header = {"subject_id", "cohort", "age", "sex", "severity", "duration_days", "event"};
    for (const SubjectRecord& r : records) {
        csv.rows.push_back({r.id, r.cohort, tab::format_double(r.age), std::to_string(r.sex),
                            tab::format_double(r.severity), tab::format_double(r.duration),
                            r.event ? "true" : "false"});
    }
    tab::write_csv(path, csv);
}

namespace {

double parse_double_field(const std::string& raw, const std::string& what, size_t row) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc{} || ptr != raw.data() + raw.size()) {
        throw DataError("metadata row " + std::to_string(row) + ": bad " + what + " value '" +
                        raw + "'");
    }
    return v;
}

} // namespace

std::vector<SubjectRecord> load_cohort(const std::string& images_path,
                                       const std::string& metadata_path) {
    const std::vector<ag::Tensor> images = load_images(images_path);
    const tab::Csv csv = tab::read_csv(metadata_path);
    if (csv.rows.size() != images.size()) {
        throw DataError("cohort: metadata has " + std::to_string(csv.rows.size()) +
                        " rows but raster container has " + std::to_string(images.size()) +
                        " images");
    }
    const size_t c_id = tab::column_index(csv, "subject_id");
    const size_t c_cohort = tab::column_index(csv, "cohort");
    const size_t c_age = tab::column_index(csv, "age");
    const size_t c_sex = tab::column_index(csv, "sex");
    const size_t c_sev = tab::column_index(csv, "severity");
    const size_t c_dur = tab::column_index(csv, "duration_days");
    const size_t c_event = tab::column_index(csv, "event");
    std::vector<SubjectRecord> records;
    records.reserve(images.size());
    for (size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& row = csv.rows[i];
        SubjectRecord r;
        r.id = row[c_id];
        r.cohort = row[c_cohort];
        if (r.cohort != "healthy" && r.cohort != "patient") {
            throw DataError("metadata row " + std::to_string(i + 1) + ": unknown cohort '" +
                            r.cohort + "'");
        }
        r.age = parse_double_field(row[c_age], "age", i + 1);
        const std::string& sex = row[c_sex];
        if (sex != "0" && sex != "1") {
            throw DataError("metadata row " + std::to_string(i + 1) + ": sex must be 0 or 1");
        }
        r.sex = sex == "1" ? 1 : 0;
        r.severity = parse_double_field(row[c_sev], "severity", i + 1);
        r.duration = parse_double_field(row[c_dur], "duration_days", i + 1);
        const std::string& ev = row[c_event];
        if (ev == "true" || ev == "1") r.event = true;
        else if (ev == "false" || ev == "0") r.event = false;
        else {
            throw DataError("metadata row " + std::to_string(i + 1) + ": bad event value '" + ev +
                            "'");
        }
        r.image = images[i];
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace normdae::phantom
