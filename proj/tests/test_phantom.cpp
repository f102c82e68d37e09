// Synthetic cohort generator: planted-anatomy monotonicity, determinism,
// survival calibration, and the raster container round trip.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "normdae/errors.hpp"
#include "normdae/phantom.hpp"
#include "normdae/survival.hpp"

using namespace normdae;

namespace {

// Count of clearly dark pixels inside the head region; grows with ventricle
// size and cortex thinning, so it must increase with severity.
int dark_pixels(const ag::Tensor& img) {
    int n = 0;
    for (size_t i = 0; i < img.size(); ++i) {
        if (img.data()[i] < 0.3f) ++n;
    }
    return n;
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "normdae-phantom-test";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("severity strictly increases the dark area, with and without noise") {
    for (double sigma : {0.0, 0.02}) {
        int prev = -1;
        for (double sev : {0.0, 0.75, 1.5, 2.25, 3.0}) {
            const ag::Tensor img =
                phantom::render_phantom(32, 65.0, sev, 0, rng::Key(9).with("img"), sigma);
            const int dark = dark_pixels(img);
            INFO("sigma=" << sigma << " severity=" << sev << " dark=" << dark);
            CHECK(dark > prev);
            prev = dark;
        }
    }
}

TEST_CASE("age increases the dark area at fixed severity") {
    const int young = dark_pixels(phantom::render_phantom(32, 45.0, 1.0, 0, rng::Key(9), 0.0));
    const int old = dark_pixels(phantom::render_phantom(32, 83.0, 1.0, 0, rng::Key(9), 0.0));
    CHECK(old > young);
}

TEST_CASE("rendering is bit-deterministic and bounded to [0,1]") {
    const ag::Tensor a = phantom::render_phantom(32, 61.0, 1.3, 1, rng::Key(4).with("img"), 0.02);
    const ag::Tensor b = phantom::render_phantom(32, 61.0, 1.3, 1, rng::Key(4).with("img"), 0.02);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.data()[i] == b.data()[i]);
        CHECK(a.data()[i] >= 0.0f);
        CHECK(a.data()[i] <= 1.0f);
    }
}

TEST_CASE("cohort generation is deterministic and obeys the config") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 16;
    cfg.healthy_n = 10;
    cfg.patient_n = 6;
    cfg.seed = 123;
    const phantom::Cohorts a = phantom::generate_cohorts(cfg);
    const phantom::Cohorts b = phantom::generate_cohorts(cfg);
    REQUIRE(a.healthy.size() == 10);
    REQUIRE(a.patients.size() == 6);
    for (size_t i = 0; i < a.patients.size(); ++i) {
        CHECK(a.patients[i].id == b.patients[i].id);
        CHECK(a.patients[i].duration == b.patients[i].duration);
        CHECK(a.patients[i].severity == b.patients[i].severity);
        for (size_t j = 0; j < a.patients[i].image.size(); ++j) {
            CHECK(a.patients[i].image.data()[j] == b.patients[i].image.data()[j]);
        }
    }
    for (const auto& h : a.healthy) {
        CHECK(h.cohort == "healthy");
        CHECK(h.severity == 0.0);
        CHECK(h.event == false);
        CHECK(h.age >= cfg.healthy_age_lo);
        CHECK(h.age <= cfg.healthy_age_hi);
    }
    for (const auto& p : a.patients) {
        CHECK(p.cohort == "patient");
        CHECK(p.severity >= 0.0);
        CHECK(p.severity <= cfg.severity_max);
        CHECK(p.duration >= 1.0);
        CHECK(p.duration == std::floor(p.duration));  // whole days -> ties occur
    }
}

TEST_CASE("censoring rate lands near the configured target") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 8;  // images irrelevant here, keep it cheap
    cfg.healthy_n = 1;
    cfg.patient_n = 400;
    cfg.censor_rate = 0.2;
    cfg.seed = 77;
    const phantom::Cohorts c = phantom::generate_cohorts(cfg);
    int censored = 0;
    for (const auto& p : c.patients) censored += p.event ? 0 : 1;
    const double rate = static_cast<double>(censored) / 400.0;
    INFO("empirical censor rate " << rate);
    CHECK(rate > 0.12);
    CHECK(rate < 0.28);
}

TEST_CASE("planted severity effect is recovered by the cox model") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 8;
    cfg.healthy_n = 1;
    cfg.patient_n = 300;
    cfg.b_true = 0.8;
    cfg.seed = 2024;
    const phantom::Cohorts c = phantom::generate_cohorts(cfg);
    std::vector<surv::SurvivalRecord> records;
    for (const auto& p : c.patients) {
        records.push_back({p.id, p.duration, p.event, {p.severity}});
    }
    const surv::CoxFit fit = surv::cox_fit(records, {"severity"});
    INFO("recovered coefficient " << fit.coef[0] << " +- " << fit.se[0]);
    CHECK(fit.coef[0] > 0.5);
    CHECK(fit.coef[0] < 1.1);
    // The reported interval is on the hazard-ratio scale; it must cover the
    // planted effect exp(0.8).
    CHECK(fit.ci_low[0] < std::exp(0.8));
    CHECK(fit.ci_high[0] > std::exp(0.8));
}

TEST_CASE("zero planted effect gives a null association") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 8;
    cfg.healthy_n = 1;
    cfg.patient_n = 300;
    cfg.b_true = 0.0;
    cfg.seed = 31;
    const phantom::Cohorts c = phantom::generate_cohorts(cfg);
    std::vector<surv::SurvivalRecord> records;
    for (const auto& p : c.patients) {
        records.push_back({p.id, p.duration, p.event, {p.severity}});
    }
    const surv::CoxFit fit = surv::cox_fit(records, {"severity"});
    INFO("null-effect coefficient " << fit.coef[0] << " p " << fit.p_value[0]);
    CHECK(std::fabs(fit.coef[0]) < 0.25);
    CHECK(fit.p_value[0] > 0.05);
}

TEST_CASE("severity correlates with the visible dark area across patients") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.healthy_n = 1;
    cfg.patient_n = 60;
    cfg.seed = 5;
    const phantom::Cohorts c = phantom::generate_cohorts(cfg);
    std::vector<double> dark, sev;
    for (const auto& p : c.patients) {
        dark.push_back(dark_pixels(p.image));
        sev.push_back(p.severity);
    }
    const surv::TestResult tau = surv::kendall_tau(dark, sev);
    INFO("kendall tau " << tau.statistic);
    CHECK(tau.statistic > 0.5);
}

TEST_CASE("raster container round trips byte-identically") {
    const auto dir = temp_dir();
    const std::string path = (dir / "imgs.ndri").string();
    std::vector<ag::Tensor> imgs;
    for (int i = 0; i < 3; ++i) {
        imgs.push_back(
            phantom::render_phantom(12, 50.0 + i, 0.5 * i, i % 2, rng::Key(i).with("img"), 0.01));
    }
    phantom::save_images(path, imgs);
    const std::vector<ag::Tensor> back = phantom::load_images(path);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(back[i].shape() == imgs[i].shape());
        for (size_t j = 0; j < imgs[i].size(); ++j) {
            CHECK(back[i].data()[j] == imgs[i].data()[j]);
        }
    }

    // Truncated payloads are rejected.
    {
        FILE* f = std::fopen(path.c_str(), "rb");
        REQUIRE(f != nullptr);
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fseek(f, 0, SEEK_SET);
        std::vector<char> bytes(static_cast<size_t>(size));
        REQUIRE(std::fread(bytes.data(), 1, bytes.size(), f) == bytes.size());
        std::fclose(f);
        const std::string trunc_path = (dir / "trunc.ndri").string();
        FILE* g = std::fopen(trunc_path.c_str(), "wb");
        std::fwrite(bytes.data(), 1, bytes.size() - 7, g);
        std::fclose(g);
        CHECK_THROWS_AS(phantom::load_images(trunc_path), DataError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cohort save/load round trips metadata and images together") {
    const auto dir = temp_dir();
    phantom::PhantomConfig cfg;
    cfg.image_size = 12;
    cfg.healthy_n = 4;
    cfg.patient_n = 5;
    cfg.seed = 9;
    const phantom::Cohorts c = phantom::generate_cohorts(cfg);

    const std::string imgs = (dir / "p.ndri").string();
    const std::string meta = (dir / "p.csv").string();
    std::vector<ag::Tensor> planes;
    for (const auto& p : c.patients) planes.push_back(p.image);
    phantom::save_images(imgs, planes);
    phantom::save_metadata(meta, c.patients);
    const std::vector<phantom::SubjectRecord> back = phantom::load_cohort(imgs, meta);
    REQUIRE(back.size() == c.patients.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == c.patients[i].id);
        CHECK(back[i].age == c.patients[i].age);
        CHECK(back[i].sex == c.patients[i].sex);
        CHECK(back[i].severity == c.patients[i].severity);
        CHECK(back[i].duration == c.patients[i].duration);
        CHECK(back[i].event == c.patients[i].event);
        for (size_t j = 0; j < back[i].image.size(); ++j) {
            CHECK(back[i].image.data()[j] == c.patients[i].image.data()[j]);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation rejects bad bounds") {
    phantom::PhantomConfig cfg;
    cfg.image_size = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.censor_rate = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.healthy_age_lo = 80;
    cfg.healthy_age_hi = 40;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
