#pragma once

// Deterministic synthetic cohort generator: brain-like 2D phantoms whose
// anatomy varies with age and a planted disease severity, plus ground-truth
// survival times drawn from a proportional-hazards model with exponential
// baseline. Stands in for clinical data so the full pipeline can be
// exercised and verified at desk scale.

#include <string>
#include <vector>

#include "normdae/rng.hpp"
#include "normdae/tensor.hpp"

namespace normdae::phantom {

struct PhantomConfig {
    int image_size = 32;
    int healthy_n = 64;
    int patient_n = 32;
    double healthy_age_lo = 40.0;
    double healthy_age_hi = 80.0;
    double patient_age_lo = 50.0;
    double patient_age_hi = 85.0;
    double severity_max = 3.0;         // severity ~ Uniform[0, severity_max]
    double b_true = 0.8;               // log hazard ratio per unit severity
    double lambda0 = 1.0 / 1000.0;     // baseline hazard per day
    double censor_rate = 0.2;          // expected fraction censored, in [0,1)
    double noise_sigma = 0.02;         // additive Gaussian pixel noise
    unsigned long long seed = 1;

    void validate() const;
};

struct SubjectRecord {
    std::string id;
    ag::Tensor image;       // [1, size, size], values in [0,1]
    double age = 0.0;       // years
    int sex = 0;            // 0/1
    double severity = 0.0;  // 0 for healthy
    double duration = 0.0;  // days
    bool event = false;
    std::string cohort;     // "healthy" | "patient"
};

// Renders one phantom slice: skull ellipse, cortex band thinning with age and
// severity, ventricles growing with both, a sex-linked width modifier, and
// additive Gaussian noise. Pure function of its arguments.
ag::Tensor render_phantom(int image_size, double age, double severity, int sex,
                          rng::Key noise_key, double noise_sigma);

struct Cohorts {
    std::vector<SubjectRecord> healthy;
    std::vector<SubjectRecord> patients;
};

Cohorts generate_cohorts(const PhantomConfig& cfg);

// Binary raster container: magic "NDRI", u32 version=1, u32 count, u32 width,
// u32 height, then count row-major float32 little-endian planes.
void save_images(const std::string& path, const std::vector<ag::Tensor>& images);
std::vector<ag::Tensor> load_images(const std::string& path);

// Metadata CSV: subject_id, cohort, age, sex, severity, duration_days, event.
void save_metadata(const std::string& path, const std::vector<SubjectRecord>& records);

// Loads a cohort previously written by save_images + save_metadata; images are
// matched to metadata rows by position.
std::vector<SubjectRecord> load_cohort(const std::string& images_path,
                                       const std::string& metadata_path);

} // namespace normdae::phantom
