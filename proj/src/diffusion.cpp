#include "normdae/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "normdae/errors.hpp"

namespace normdae::diff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw ConfigError("schedule: need at least 2 steps, got " + std::to_string(steps));
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got " +
                          std::to_string(beta_start) + " .. " + std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.T_ = steps;
    s.betas_.resize(static_cast<size_t>(steps));
    s.alpha_bars_.resize(static_cast<size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double b =
            steps == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                          static_cast<double>(steps - 1);
        s.betas_[static_cast<size_t>(i)] = b;
        prod *= (1.0 - b);
        s.alpha_bars_[static_cast<size_t>(i)] = prod;
    }
    return s;
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T_) {
        throw ConfigError("schedule: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(T_) + "]");
    }
    return betas_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > T_) {
        throw ConfigError("schedule: timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(T_) + "]");
    }
    return alpha_bars_[static_cast<size_t>(t - 1)];
}

SamplingPlan SamplingPlan::evenly_spaced(int total_steps, int sample_steps) {
    if (sample_steps < 2) {
        throw ConfigError("sampling plan: need at least 2 steps, got " +
                          std::to_string(sample_steps));
    }
    if (sample_steps > total_steps) {
        throw ConfigError("sampling plan: " + std::to_string(sample_steps) +
                          " steps requested from a " + std::to_string(total_steps) +
                          "-step schedule");
    }
    SamplingPlan plan;
    // i = sample_steps .. 1 yields a strictly decreasing ladder ending at
    // roughly total_steps / sample_steps.
    for (int i = sample_steps; i >= 1; --i) {
        int t = static_cast<int>(std::llround(static_cast<double>(total_steps) *
                                              static_cast<double>(i) /
                                              static_cast<double>(sample_steps)));
        t = std::max(1, std::min(total_steps, t));
        if (plan.timesteps.empty() || t < plan.timesteps.back()) plan.timesteps.push_back(t);
    }
    plan.validate(total_steps);
    return plan;
}

void SamplingPlan::validate(int total_steps) const {
    if (timesteps.size() < 2) {
        throw ConfigError("sampling plan: need at least 2 timesteps, got " +
                          std::to_string(timesteps.size()));
    }
    if (timesteps.front() != total_steps) {
        throw ConfigError("sampling plan: must start at the final timestep " +
                          std::to_string(total_steps) + ", got " +
                          std::to_string(timesteps.front()));
    }
    for (size_t i = 0; i < timesteps.size(); ++i) {
        if (timesteps[i] < 1 || timesteps[i] > total_steps) {
            throw ConfigError("sampling plan: timestep " + std::to_string(timesteps[i]) +
                              " outside [1, " + std::to_string(total_steps) + "]");
        }
        if (i > 0 && timesteps[i] >= timesteps[i - 1]) {
            throw ConfigError("sampling plan: timesteps must be strictly decreasing");
        }
    }
}

ag::Tensor forward_noise(const ag::Tensor& x0, int t, const ag::Tensor& eps,
                         const NoiseSchedule& schedule) {
    if (x0.shape() != eps.shape()) {
        throw DimensionError("forward_noise: x0 " + ag::shape_str(x0.shape()) + " vs eps " +
                             ag::shape_str(eps.shape()));
    }
    if (t < 1 || t > schedule.steps()) {
        throw ConfigError("forward_noise: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(schedule.steps()) + "]");
    }
    const double ab = schedule.alpha_bar(t);
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    ag::Tensor out(x0.shape());
    const float* px = x0.data();
    const float* pe = eps.data();
    float* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) {
        po[i] = static_cast<float>(sa * px[i] + sb * pe[i]);
    }
    ag::check_finite("forward_noise", out);
    return out;
}

ag::Tensor diffusion_loss(ag::Tape* tape, const ag::Tensor& eps_pred, const ag::Tensor& eps) {
    return ag::mse(tape, eps_pred, eps);
}

namespace {

// One deterministic transition a -> b (either direction): the clean-image
// estimate is formed at timestep a and re-noised to timestep b.
ag::Tensor ddim_transition(const ag::Tensor& x, const ag::Tensor& eps_hat, double abar_a,
                           double abar_b, bool clamp01) {
    const double ca = std::sqrt(1.0 - abar_a);
    const double inv_sa = 1.0 / std::sqrt(abar_a);
    const double sb = std::sqrt(abar_b);
    const double cb = std::sqrt(1.0 - abar_b);
    ag::Tensor out(x.shape());
    const float* px = x.data();
    const float* pe = eps_hat.data();
    float* po = out.data();
    for (int64_t i = 0; i < x.size(); ++i) {
        double x0_hat = (static_cast<double>(px[i]) - ca * pe[i]) * inv_sa;
        if (clamp01) x0_hat = std::clamp(x0_hat, 0.0, 1.0);
        po[i] = static_cast<float>(sb * x0_hat + cb * pe[i]);
    }
    return out;
}

ag::Tensor eval_model(const NoisePredictorFn& model, const ag::Tensor& x, int t,
                      const ag::Tensor& z) {
    ag::Tensor eps_hat = model(x, t, z);
    if (eps_hat.shape() != x.shape()) {
        throw DimensionError("noise predictor returned " + ag::shape_str(eps_hat.shape()) +
                             " for input " + ag::shape_str(x.shape()));
    }
    ag::check_finite("noise predictor output", eps_hat);
    return eps_hat;
}

} // namespace

ag::Tensor reverse_sample(const ag::Tensor& xT, const ag::Tensor& z, const NoisePredictorFn& model,
                          const NoiseSchedule& schedule, const SamplingPlan& plan) {
    plan.validate(schedule.steps());
    ag::Tensor x = xT.detached();
    for (size_t i = 0; i < plan.timesteps.size(); ++i) {
        const int a = plan.timesteps[i];
        const int b = (i + 1 < plan.timesteps.size()) ? plan.timesteps[i + 1] : 0;
        ag::Tensor eps_hat = eval_model(model, x, a, z);
        x = ddim_transition(x, eps_hat, schedule.alpha_bar(a), schedule.alpha_bar(b),
                            /*clamp01=*/true);
    }
    // The last transition targets timestep 0, where alpha_bar == 1, so x is
    // exactly the final clamped clean-image estimate.
    return x;
}

ag::Tensor deterministic_encode(const ag::Tensor& x0, const ag::Tensor& z,
                                const NoisePredictorFn& model, const NoiseSchedule& schedule,
                                const SamplingPlan& plan) {
    plan.validate(schedule.steps());
    ag::Tensor x = x0.detached();
    const auto& ts = plan.timesteps;
    for (size_t i = ts.size(); i-- > 0;) {
        const int a = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        const int b = ts[i];
        // alpha_bar(0) == 1 so the first hop out of the clean image reduces to
        // pure re-noising of x0; the predictor is never queried below t = 1.
        ag::Tensor eps_hat = eval_model(model, x, std::max(a, 1), z);
        x = ddim_transition(x, eps_hat, schedule.alpha_bar(a), schedule.alpha_bar(b),
                            /*clamp01=*/false);
    }
    return x;
}

} // namespace normdae::diff
