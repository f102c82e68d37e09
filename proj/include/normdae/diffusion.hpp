#pragma once

#include <functional>
#include <vector>

#include "normdae/tensor.hpp"

namespace normdae::diff {

// Linear-beta variance schedule over T discrete noising steps. Timesteps are
// 1-based: beta(t) and alpha_bar(t) are defined for t in [1, T]; alpha_bar(0)
// is the no-noise limit 1 by convention, which makes the deterministic encode
// and decode loops below uniform in their endpoints.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    int steps() const { return T_; }
    double beta(int t) const;       // t in [1, T]
    double alpha_bar(int t) const;  // t in [0, T]; alpha_bar(0) == 1

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

private:
    int T_ = 0;
    std::vector<double> betas_;       // betas_[i] = beta(i+1)
    std::vector<double> alpha_bars_;  // alpha_bars_[i] = alpha_bar(i+1)
};

// Strictly decreasing subsequence of timesteps, starting at T, used for the
// deterministic (eta = 0) reverse traversal and its inversion.
struct SamplingPlan {
    std::vector<int> timesteps;

    static SamplingPlan evenly_spaced(int total_steps, int sample_steps);
    void validate(int total_steps) const;
};

// Closed-form forward corruption: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
ag::Tensor forward_noise(const ag::Tensor& x0, int t, const ag::Tensor& eps,
                         const NoiseSchedule& schedule);

// Mean squared error between predicted and true noise; differentiable.
ag::Tensor diffusion_loss(ag::Tape* tape, const ag::Tensor& eps_pred, const ag::Tensor& eps);

// Noise-prediction callback: (x_t, t, z) -> eps_hat, evaluated without
// gradient tracking. z is an [N, d] latent batch.
using NoisePredictorFn =
    std::function<ag::Tensor(const ag::Tensor& xt, int t, const ag::Tensor& z)>;

// Deterministic reverse traversal over the plan. At each step the current
// state is projected to a clean-image estimate x0_hat (clamped to the [0,1]
// data range) and re-noised to the next, smaller timestep; the final output is
// the last x0_hat.
ag::Tensor reverse_sample(const ag::Tensor& xT, const ag::Tensor& z, const NoisePredictorFn& model,
                          const NoiseSchedule& schedule, const SamplingPlan& plan);

// Inverse of reverse_sample: runs the same deterministic update in the
// forward direction (0 up to T over the reversed plan) without clamping,
// yielding an xT whose reverse traversal approximately reproduces x0.
ag::Tensor deterministic_encode(const ag::Tensor& x0, const ag::Tensor& z,
                                const NoisePredictorFn& model, const NoiseSchedule& schedule,
                                const SamplingPlan& plan);

} // namespace normdae::diff
