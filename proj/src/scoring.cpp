#include "normdae/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "normdae/errors.hpp"

namespace normdae::scoring {

HealthyReference compute_reference(const std::vector<std::vector<double>>& latents,
                                   std::string model_digest) {
    if (latents.empty()) throw DataError("healthy reference: no latents given");
    const size_t d = latents.front().size();
    if (d == 0) throw DataError("healthy reference: zero-dimensional latents");
    HealthyReference ref;
    ref.mu.assign(d, 0.0);
    ref.n = static_cast<int>(latents.size());
    ref.model_digest = std::move(model_digest);
    for (size_t i = 0; i < latents.size(); ++i) {
        if (latents[i].size() != d) {
            throw DimensionError("healthy reference: latent " + std::to_string(i) + " has dim " +
                                 std::to_string(latents[i].size()) + ", expected " +
                                 std::to_string(d));
        }
        for (size_t k = 0; k < d; ++k) ref.mu[k] += latents[i][k];
    }
    const double inv = 1.0 / static_cast<double>(latents.size());
    for (double& v : ref.mu) v *= inv;
    return ref;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine similarity: dimension mismatch (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
    }
    if (a.empty()) throw DataError("cosine similarity: empty vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw DegenerateInputError("cosine similarity: zero-norm vector");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double image_deviation(const ag::Tensor& x0, const ag::Tensor& reconstruction) {
    if (x0.shape() != reconstruction.shape()) {
        throw DimensionError("image deviation: shape mismatch");
    }
    if (x0.size() == 0) throw DataError("image deviation: empty image");
    const float* a = x0.data();
    const float* b = reconstruction.data();
    double acc = 0.0;
    for (int64_t i = 0; i < x0.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(x0.size());
}

std::vector<double> standardize(const std::vector<double>& values) {
    if (values.size() < 2) throw DataError("standardize: need at least 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    if (!(var > 0.0)) throw DegenerateInputError("standardize: zero variance");
    const double inv_sd = 1.0 / std::sqrt(var);
    std::vector<double> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) * inv_sd;
    return out;
}

} // namespace normdae::scoring
