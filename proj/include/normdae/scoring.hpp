#pragma once

// Normative scoring: a healthy-cohort latent reference, latent cosine
// similarity against it, image-space reconstruction MSE, and z-score
// standardization of score sequences.

#include <string>
#include <vector>

#include "normdae/tensor.hpp"

namespace normdae::scoring {

// Mean latent of a healthy cohort; `model_digest` ties the reference to the
// checkpoint whose encoder produced the latents.
struct HealthyReference {
    std::vector<double> mu;
    int n = 0;
    std::string model_digest;
};

// Per-subject deviation scores. Standardized variants are z-scores over the
// cohort the caller standardized against.
struct NormativeScore {
    std::string subject_id;
    double latent_similarity = 0.0;
    double image_mse = 0.0;
    double latent_similarity_std = 0.0;
    double image_mse_std = 0.0;
};

// Arithmetic mean of the latents, accumulated left-to-right in double.
// Throws DataError on empty input, DimensionError on ragged dimensions.
HealthyReference compute_reference(const std::vector<std::vector<double>>& latents,
                                   std::string model_digest = {});

// dot(a,b)/(|a||b|), clamped to [-1,1]. Throws DimensionError on length
// mismatch and DegenerateInputError when either norm is zero.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Mean squared pixel difference between an image and its reconstruction.
// Throws DimensionError on shape mismatch.
double image_deviation(const ag::Tensor& x0, const ag::Tensor& reconstruction);

// (x - mean)/std with the population (divide-by-n) standard deviation.
// Throws DataError for length < 2, DegenerateInputError for zero variance.
std::vector<double> standardize(const std::vector<double>& values);

} // namespace normdae::scoring
