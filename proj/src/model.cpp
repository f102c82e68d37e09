#include "normdae/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "normdae/errors.hpp"
#include "normdae/fsio.hpp"

namespace normdae::model {

using json = nlohmann::json;

namespace {
// Spreads typical +-2 sigma normalized ages over enough sinusoidal phase to
// make the embedding informative.
constexpr double kAgeEmbedScale = 50.0;
} // namespace

void ModelConfig::validate() const {
    if (channels.empty()) throw ConfigError("model: channels must be non-empty");
    const int levels = static_cast<int>(channels.size());
    if (image_size < (1 << (levels - 1)) || image_size % (1 << (levels - 1)) != 0) {
        throw ConfigError("model: image_size " + std::to_string(image_size) +
                          " not divisible by 2^" + std::to_string(levels - 1));
    }
    if (in_channels < 1) throw ConfigError("model: in_channels must be positive");
    if (latent_dim < 1) throw ConfigError("model: latent_dim must be positive");
    if (groups < 1) throw ConfigError("model: groups must be positive");
    for (int c : channels) {
        if (c < 1 || c % groups != 0 || (2 * c) % groups != 0) {
            throw ConfigError("model: channel width " + std::to_string(c) +
                              " not divisible by groups " + std::to_string(groups));
        }
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw ConfigError("model: time_embed_dim must be even and >= 2");
    }
    if (age_embed_dim < 2 || age_embed_dim % 2 != 0) {
        throw ConfigError("model: age_embed_dim must be even and >= 2");
    }
}

// --- ParamStore -----------------------------------------------------------------

size_t ParamStore::add(const std::string& name, ag::Shape shape, Init init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    ag::Tensor t(shape);
    const int64_t n = t.size();
    float* p = t.data();
    switch (init) {
        case Init::Zero:
            break;
        case Init::One:
            std::fill(p, p + n, 1.0f);
            break;
        case Init::He:
        case Init::HeTenth: {
            int64_t fan_in = 1;
            if (shape.size() == 4) {
                fan_in = static_cast<int64_t>(shape[1]) * shape[2] * shape[3];
            } else if (shape.size() == 2) {
                fan_in = shape[0];
            } else {
                throw std::logic_error("He init needs a 2-d or 4-d shape for " + name);
            }
            double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            if (init == Init::HeTenth) sd *= 0.1;
            const rng::Key k = init_key_.with(name);
            for (int64_t i = 0; i < n; ++i) {
                p[i] = static_cast<float>(sd * rng::gaussian_at(k, static_cast<uint64_t>(i)));
            }
            break;
        }
    }
    items_.emplace_back(name, std::move(t));
    index_[name] = items_.size() - 1;
    return items_.size() - 1;
}

int64_t ParamStore::total_values() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

std::vector<ag::Tensor*> ParamStore::pointers() {
    std::vector<ag::Tensor*> out;
    out.reserve(items_.size());
    for (auto& [name, t] : items_) out.push_back(&t);
    return out;
}

void ParamStore::track_all(ag::Tape& tape) {
    for (auto& [name, t] : items_) tape.track(t);
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
}

ParamStore ParamStore::shared_data_view() const {
    ParamStore view(init_key_);
    view.items_ = items_;  // tensors share data buffers
    view.index_ = index_;
    for (auto& [name, t] : view.items_) {
        t.make_own_grad();
        t.untrack();
    }
    return view;
}

// --- blocks ----------------------------------------------------------------------

namespace {

CondBlock make_cond_block(ParamStore& P, const std::string& prefix, int c_in, int c_out,
                          int embed_dim, int film_dim, int groups) {
    CondBlock b;
    b.c_in = c_in;
    b.c_out = c_out;
    b.groups1 = groups;
    b.groups2 = groups;
    b.has_film = film_dim > 0;
    b.has_skip = c_in != c_out;
    b.gn1_g = P.add(prefix + ".gn1.g", {c_in}, Init::One);
    b.gn1_b = P.add(prefix + ".gn1.b", {c_in}, Init::Zero);
    b.conv1_w = P.add(prefix + ".conv1.w", {c_out, c_in, 3, 3}, Init::He);
    b.conv1_b = P.add(prefix + ".conv1.b", {c_out}, Init::Zero);
    b.cond_w = P.add(prefix + ".cond.w", {embed_dim, c_out}, Init::He);
    b.cond_b = P.add(prefix + ".cond.b", {c_out}, Init::Zero);
    if (b.has_film) {
        b.film_scale_w = P.add(prefix + ".film_s.w", {film_dim, c_out}, Init::HeTenth);
        b.film_scale_b = P.add(prefix + ".film_s.b", {c_out}, Init::Zero);
        b.film_shift_w = P.add(prefix + ".film_t.w", {film_dim, c_out}, Init::HeTenth);
        b.film_shift_b = P.add(prefix + ".film_t.b", {c_out}, Init::Zero);
    }
    b.gn2_g = P.add(prefix + ".gn2.g", {c_out}, Init::One);
    b.gn2_b = P.add(prefix + ".gn2.b", {c_out}, Init::Zero);
    b.conv2_w = P.add(prefix + ".conv2.w", {c_out, c_out, 3, 3}, Init::He);
    b.conv2_b = P.add(prefix + ".conv2.b", {c_out}, Init::Zero);
    if (b.has_skip) {
        b.skip_w = P.add(prefix + ".skip.w", {c_out, c_in, 1, 1}, Init::He);
        b.skip_b = P.add(prefix + ".skip.b", {c_out}, Init::Zero);
    }
    return b;
}

int64_t cond_block_values(int c_in, int c_out, int embed_dim, int film_dim) {
    int64_t n = 2 * c_in;                                      // gn1
    n += 9LL * c_in * c_out + c_out;                           // conv1
    n += static_cast<int64_t>(embed_dim) * c_out + c_out;      // cond projection
    if (film_dim > 0) n += 2 * (static_cast<int64_t>(film_dim) * c_out + c_out);
    n += 2 * c_out;                                            // gn2
    n += 9LL * c_out * c_out + c_out;                          // conv2
    if (c_in != c_out) n += static_cast<int64_t>(c_in) * c_out + c_out;  // 1x1 skip
    return n;
}

} // namespace

ag::Tensor CondBlock::forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& x,
                              const ag::Tensor& cond_vec, const ag::Tensor* z) const {
    ag::Tensor h = ag::group_norm(tape, x, groups1, P[gn1_g], P[gn1_b]);
    h = ag::silu(tape, h);
    h = ag::conv2d(tape, h, P[conv1_w], 1, 1);
    h = ag::add_channel_bias(tape, h, P[conv1_b]);
    ag::Tensor cv = ag::linear(tape, cond_vec, P[cond_w], P[cond_b]);
    h = ag::add_channel_vec(tape, h, cv);
    if (has_film) {
        if (!z) throw std::logic_error("CondBlock: latent required by this block");
        ag::Tensor s = ag::linear(tape, *z, P[film_scale_w], P[film_scale_b]);
        ag::Tensor t = ag::linear(tape, *z, P[film_shift_w], P[film_shift_b]);
        h = ag::film(tape, h, s, t);
    }
    h = ag::group_norm(tape, h, groups2, P[gn2_g], P[gn2_b]);
    h = ag::silu(tape, h);
    h = ag::conv2d(tape, h, P[conv2_w], 1, 1);
    h = ag::add_channel_bias(tape, h, P[conv2_b]);
    if (has_skip) {
        ag::Tensor r = ag::conv2d(tape, x, P[skip_w], 1, 0);
        r = ag::add_channel_bias(tape, r, P[skip_b]);
        return ag::add(tape, r, h);
    }
    return ag::add(tape, x, h);
}

ag::Tensor sinusoidal_rows(const std::vector<double>& values, int dim) {
    if (dim < 2 || dim % 2 != 0) {
        throw ConfigError("sinusoidal embedding dimension must be even and >= 2");
    }
    const int half = dim / 2;
    const int n = static_cast<int>(values.size());
    ag::Tensor out(ag::Shape{n, dim});
    float* p = out.data();
    for (int r = 0; r < n; ++r) {
        const double v = values[static_cast<size_t>(r)];
        for (int k = 0; k < half; ++k) {
            const double w =
                half == 1 ? 1.0
                          : std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                     static_cast<double>(half - 1));
            p[static_cast<size_t>(r) * dim + k] = static_cast<float>(std::sin(v * w));
            p[static_cast<size_t>(r) * dim + half + k] = static_cast<float>(std::cos(v * w));
        }
    }
    ag::check_finite("sinusoidal_rows", out);
    return out;
}

// --- NoisePredictor ---------------------------------------------------------------

NoisePredictor::NoisePredictor(const ModelConfig& cfg, ParamStore& P) : cfg_(cfg) {
    cfg.validate();
    const int L = static_cast<int>(cfg.channels.size());
    const int E = cfg.time_embed_dim;
    stem_w = P.add("pred.stem.w", {cfg.channels[0], cfg.in_channels, 3, 3}, Init::He);
    stem_b = P.add("pred.stem.b", {cfg.channels[0]}, Init::Zero);
    tmlp1_w = P.add("pred.temb.l1.w", {E, E}, Init::He);
    tmlp1_b = P.add("pred.temb.l1.b", {E}, Init::Zero);
    tmlp2_w = P.add("pred.temb.l2.w", {E, E}, Init::He);
    tmlp2_b = P.add("pred.temb.l2.b", {E}, Init::Zero);
    for (int i = 0; i < L; ++i) {
        down_.push_back(make_cond_block(P, "pred.down" + std::to_string(i), cfg.channels[i],
                                        cfg.channels[i], E, cfg.latent_dim, cfg.groups));
        if (i + 1 < L) {
            dsamp_w_.push_back(P.add("pred.dsamp" + std::to_string(i) + ".w",
                                     {cfg.channels[i + 1], cfg.channels[i], 3, 3}, Init::He));
            dsamp_b_.push_back(
                P.add("pred.dsamp" + std::to_string(i) + ".b", {cfg.channels[i + 1]}, Init::Zero));
        }
    }
    for (int i = L - 2; i >= 0; --i) {
        usamp_w_.push_back(P.add("pred.usamp" + std::to_string(i) + ".w",
                                 {cfg.channels[i], cfg.channels[i + 1], 3, 3}, Init::He));
        usamp_b_.push_back(
            P.add("pred.usamp" + std::to_string(i) + ".b", {cfg.channels[i]}, Init::Zero));
        up_.push_back(make_cond_block(P, "pred.upblk" + std::to_string(i), 2 * cfg.channels[i],
                                      cfg.channels[i], E, cfg.latent_dim, cfg.groups));
    }
    head_gn_g = P.add("pred.head.gn.g", {cfg.channels[0]}, Init::One);
    head_gn_b = P.add("pred.head.gn.b", {cfg.channels[0]}, Init::Zero);
    // A small-magnitude head keeps the untrained predictor near zero output
    // (loss ~ 1 against unit noise) without killing its gradients.
    head_w = P.add("pred.head.w", {cfg.in_channels, cfg.channels[0], 3, 3}, Init::HeTenth);
    head_b = P.add("pred.head.b", {cfg.in_channels}, Init::Zero);
}

int64_t NoisePredictor::expected_param_values(const ModelConfig& cfg) {
    const int L = static_cast<int>(cfg.channels.size());
    const int E = cfg.time_embed_dim;
    int64_t n = 9LL * cfg.in_channels * cfg.channels[0] + cfg.channels[0];  // stem
    n += 2 * (static_cast<int64_t>(E) * E + E);                             // timestep MLP
    for (int i = 0; i < L; ++i) {
        n += cond_block_values(cfg.channels[i], cfg.channels[i], E, cfg.latent_dim);
        if (i + 1 < L) n += 9LL * cfg.channels[i] * cfg.channels[i + 1] + cfg.channels[i + 1];
    }
    for (int i = L - 2; i >= 0; --i) {
        n += 9LL * cfg.channels[i + 1] * cfg.channels[i] + cfg.channels[i];
        n += cond_block_values(2 * cfg.channels[i], cfg.channels[i], E, cfg.latent_dim);
    }
    n += 2 * cfg.channels[0];                                               // head norm
    n += 9LL * cfg.channels[0] * cfg.in_channels + cfg.in_channels;         // head conv
    return n;
}

ag::Tensor NoisePredictor::forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& xt,
                                   const std::vector<int>& timesteps, const ag::Tensor& z) const {
    const int N = xt.dim(0);
    if (xt.ndim() != 4 || xt.dim(1) != cfg_.in_channels || xt.dim(2) != cfg_.image_size ||
        xt.dim(3) != cfg_.image_size) {
        throw DimensionError("predict_noise: input " + ag::shape_str(xt.shape()) +
                             " does not match configured image " +
                             std::to_string(cfg_.image_size));
    }
    if (static_cast<int>(timesteps.size()) != N) {
        throw DimensionError("predict_noise: " + std::to_string(timesteps.size()) +
                             " timesteps for batch of " + std::to_string(N));
    }
    if (z.ndim() != 2 || z.dim(0) != N || z.dim(1) != cfg_.latent_dim) {
        throw DimensionError("predict_noise: latent " + ag::shape_str(z.shape()) +
                             " does not match [N," + std::to_string(cfg_.latent_dim) + "]");
    }
    std::vector<double> tvals(timesteps.begin(), timesteps.end());
    ag::Tensor temb = sinusoidal_rows(tvals, cfg_.time_embed_dim);
    temb = ag::linear(tape, temb, P[tmlp1_w], P[tmlp1_b]);
    temb = ag::silu(tape, temb);
    temb = ag::linear(tape, temb, P[tmlp2_w], P[tmlp2_b]);

    ag::Tensor h = ag::conv2d(tape, xt, P[stem_w], 1, 1);
    h = ag::add_channel_bias(tape, h, P[stem_b]);

    const int L = static_cast<int>(cfg_.channels.size());
    std::vector<ag::Tensor> skips;
    for (int i = 0; i < L; ++i) {
        h = down_[static_cast<size_t>(i)].forward(tape, P, h, temb, &z);
        if (i + 1 < L) {
            skips.push_back(h);
            h = ag::conv2d(tape, h, P[dsamp_w_[static_cast<size_t>(i)]], 2, 1);
            h = ag::add_channel_bias(tape, h, P[dsamp_b_[static_cast<size_t>(i)]]);
        }
    }
    for (size_t k = 0; k < up_.size(); ++k) {
        const int i = L - 2 - static_cast<int>(k);
        h = ag::upsample_nearest2(tape, h);
        h = ag::conv2d(tape, h, P[usamp_w_[k]], 1, 1);
        h = ag::add_channel_bias(tape, h, P[usamp_b_[k]]);
        h = ag::concat_channels(tape, h, skips[static_cast<size_t>(i)]);
        h = up_[k].forward(tape, P, h, temb, &z);
    }
    h = ag::group_norm(tape, h, cfg_.groups, P[head_gn_g], P[head_gn_b]);
    h = ag::silu(tape, h);
    h = ag::conv2d(tape, h, P[head_w], 1, 1);
    h = ag::add_channel_bias(tape, h, P[head_b]);
    return h;
}

// --- SemanticEncoder ----------------------------------------------------------------

SemanticEncoder::SemanticEncoder(const ModelConfig& cfg, ParamStore& P) : cfg_(cfg) {
    cfg.validate();
    const int L = static_cast<int>(cfg.channels.size());
    const int E = cfg.age_embed_dim;
    stem_w = P.add("enc.stem.w", {cfg.channels[0], cfg.in_channels, 3, 3}, Init::He);
    stem_b = P.add("enc.stem.b", {cfg.channels[0]}, Init::Zero);
    amlp1_w = P.add("enc.aemb.l1.w", {E, E}, Init::He);
    amlp1_b = P.add("enc.aemb.l1.b", {E}, Init::Zero);
    amlp2_w = P.add("enc.aemb.l2.w", {E, E}, Init::He);
    amlp2_b = P.add("enc.aemb.l2.b", {E}, Init::Zero);
    for (int i = 0; i < L; ++i) {
        down_.push_back(make_cond_block(P, "enc.down" + std::to_string(i), cfg.channels[i],
                                        cfg.channels[i], E, /*film_dim=*/0, cfg.groups));
        if (i + 1 < L) {
            dsamp_w_.push_back(P.add("enc.dsamp" + std::to_string(i) + ".w",
                                     {cfg.channels[i + 1], cfg.channels[i], 3, 3}, Init::He));
            dsamp_b_.push_back(
                P.add("enc.dsamp" + std::to_string(i) + ".b", {cfg.channels[i + 1]}, Init::Zero));
        }
    }
    head_w = P.add("enc.head.w", {cfg.channels.back(), cfg.latent_dim}, Init::He);
    head_b = P.add("enc.head.b", {cfg.latent_dim}, Init::Zero);
}

int64_t SemanticEncoder::expected_param_values(const ModelConfig& cfg) {
    const int L = static_cast<int>(cfg.channels.size());
    const int E = cfg.age_embed_dim;
    int64_t n = 9LL * cfg.in_channels * cfg.channels[0] + cfg.channels[0];
    n += 2 * (static_cast<int64_t>(E) * E + E);
    for (int i = 0; i < L; ++i) {
        n += cond_block_values(cfg.channels[i], cfg.channels[i], E, 0);
        if (i + 1 < L) n += 9LL * cfg.channels[i] * cfg.channels[i + 1] + cfg.channels[i + 1];
    }
    n += static_cast<int64_t>(cfg.channels.back()) * cfg.latent_dim + cfg.latent_dim;
    return n;
}

ag::Tensor SemanticEncoder::forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& x0,
                                    const std::vector<double>& ages_norm) const {
    const int N = x0.dim(0);
    if (x0.ndim() != 4 || x0.dim(1) != cfg_.in_channels || x0.dim(2) != cfg_.image_size ||
        x0.dim(3) != cfg_.image_size) {
        throw DimensionError("encode: input " + ag::shape_str(x0.shape()) +
                             " does not match configured image " +
                             std::to_string(cfg_.image_size));
    }
    if (static_cast<int>(ages_norm.size()) != N) {
        throw DimensionError("encode: " + std::to_string(ages_norm.size()) + " ages for batch of " +
                             std::to_string(N));
    }
    std::vector<double> scaled(ages_norm.size());
    for (size_t i = 0; i < ages_norm.size(); ++i) {
        if (!std::isfinite(ages_norm[i])) throw DataError("encode: non-finite age");
        scaled[i] = ages_norm[i] * kAgeEmbedScale;
    }
    ag::Tensor aemb = sinusoidal_rows(scaled, cfg_.age_embed_dim);
    aemb = ag::linear(tape, aemb, P[amlp1_w], P[amlp1_b]);
    aemb = ag::silu(tape, aemb);
    aemb = ag::linear(tape, aemb, P[amlp2_w], P[amlp2_b]);

    ag::Tensor h = ag::conv2d(tape, x0, P[stem_w], 1, 1);
    h = ag::add_channel_bias(tape, h, P[stem_b]);
    const int L = static_cast<int>(cfg_.channels.size());
    for (int i = 0; i < L; ++i) {
        h = down_[static_cast<size_t>(i)].forward(tape, P, h, aemb, nullptr);
        if (i + 1 < L) {
            h = ag::conv2d(tape, h, P[dsamp_w_[static_cast<size_t>(i)]], 2, 1);
            h = ag::add_channel_bias(tape, h, P[dsamp_b_[static_cast<size_t>(i)]]);
        }
    }
    h = ag::global_avg_pool(tape, h);
    return ag::linear(tape, h, P[head_w], P[head_b]);
}

// --- HDAEModel / AgeRegressor ----------------------------------------------------------

HDAEModel::HDAEModel(ModelConfig c, uint64_t init_seed)
    : cfg(std::move(c)), params(rng::Key(init_seed).with("init")) {
    cfg.validate();
    encoder = SemanticEncoder(cfg, params);
    predictor = NoisePredictor(cfg, params);
    const int64_t expected =
        SemanticEncoder::expected_param_values(cfg) + NoisePredictor::expected_param_values(cfg);
    if (params.total_values() != expected) {
        throw std::logic_error("parameter accounting mismatch: registered " +
                               std::to_string(params.total_values()) + ", expected " +
                               std::to_string(expected));
    }
}

double HDAEModel::normalize_age(double age_years) const {
    if (!(age_std > 0.0)) throw DataError("model: age statistics not initialized");
    return (age_years - age_mean) / age_std;
}

ag::Tensor HDAEModel::encode(ag::Tape* tape, const ag::Tensor& x0,
                             const std::vector<double>& ages) const {
    std::vector<double> norm(ages.size());
    for (size_t i = 0; i < ages.size(); ++i) norm[i] = normalize_age(ages[i]);
    return encoder.forward(tape, params, x0, norm);
}

ag::Tensor HDAEModel::predict_noise(ag::Tape* tape, const ag::Tensor& xt,
                                    const std::vector<int>& timesteps, const ag::Tensor& z) const {
    return predictor.forward(tape, params, xt, timesteps, z);
}

diff::NoisePredictorFn HDAEModel::predictor_fn() const {
    return [this](const ag::Tensor& xt, int t, const ag::Tensor& z) {
        return predictor.forward(nullptr, params, xt,
                                 std::vector<int>(static_cast<size_t>(xt.dim(0)), t), z);
    };
}

AgeRegressor::AgeRegressor(ModelConfig c, uint64_t init_seed)
    : cfg(std::move(c)), params(rng::Key(init_seed).with("init")) {
    cfg.validate();
    encoder = SemanticEncoder(cfg, params);
    head_w = params.add("agehead.w", {cfg.latent_dim, 1}, Init::He);
    head_b = params.add("agehead.b", {1}, Init::Zero);
    const int64_t expected = SemanticEncoder::expected_param_values(cfg) + cfg.latent_dim + 1;
    if (params.total_values() != expected) {
        throw std::logic_error("parameter accounting mismatch in age regressor");
    }
}

ag::Tensor AgeRegressor::forward_norm(ag::Tape* tape, const ag::Tensor& x0) const {
    // The conditioning slot is held at zero so the encoder never sees the
    // quantity it is asked to predict.
    std::vector<double> zeros(static_cast<size_t>(x0.dim(0)), 0.0);
    ag::Tensor z = encoder.forward(tape, params, x0, zeros);
    return ag::linear(tape, z, params[head_w], params[head_b]);
}

std::vector<double> AgeRegressor::predict_age(const ag::Tensor& x0) const {
    if (!(age_std > 0.0)) throw DataError("age regressor: age statistics not initialized");
    ag::Tensor out = forward_norm(nullptr, x0);
    std::vector<double> ages(static_cast<size_t>(out.dim(0)));
    for (size_t i = 0; i < ages.size(); ++i) {
        ages[i] = static_cast<double>(out.data()[i]) * age_std + age_mean;
    }
    return ages;
}

// --- training --------------------------------------------------------------------------

namespace {

struct AgeStats {
    double mean = 0.0, sd = 1.0;
};

AgeStats cohort_age_stats(const std::vector<Sample>& cohort) {
    if (cohort.empty()) throw DataError("training: empty cohort");
    double mean = 0.0;
    for (const Sample& s : cohort) mean += s.age;
    mean /= static_cast<double>(cohort.size());
    double var = 0.0;
    for (const Sample& s : cohort) var += (s.age - mean) * (s.age - mean);
    var /= static_cast<double>(cohort.size());
    if (!(var > 0.0)) {
        throw DegenerateInputError("training: cohort age distribution has zero variance");
    }
    return {mean, std::sqrt(var)};
}

void validate_samples(const std::vector<Sample>& cohort, const ModelConfig& cfg) {
    const size_t want = static_cast<size_t>(cfg.image_size) * cfg.image_size * cfg.in_channels;
    for (const Sample& s : cohort) {
        if (s.image.size() != want) {
            throw DimensionError("training: subject " + s.id + " has " +
                                 std::to_string(s.image.size()) + " pixels, expected " +
                                 std::to_string(want));
        }
        for (float v : s.image) {
            if (!(v >= -1e-6f && v <= 1.0f + 1e-6f)) {
                throw DataError("training: subject " + s.id + " has pixel " + std::to_string(v) +
                                " outside [0,1]");
            }
        }
        if (!std::isfinite(s.age)) throw DataError("training: subject " + s.id + " has bad age");
    }
}

std::vector<size_t> seeded_shuffle(size_t n, rng::Key key) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    rng::Stream st(key);
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(st.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

struct SplitResult {
    std::vector<size_t> train, holdout;
};

SplitResult split_cohort(size_t n, double holdout_fraction, rng::Key key) {
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("training: holdout_fraction must be in [0,1)");
    }
    std::vector<size_t> shuffled = seeded_shuffle(n, key.with("split"));
    const size_t nh = static_cast<size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
    SplitResult r;
    r.holdout.assign(shuffled.end() - static_cast<std::ptrdiff_t>(nh), shuffled.end());
    r.train.assign(shuffled.begin(), shuffled.end() - static_cast<std::ptrdiff_t>(nh));
    std::sort(r.train.begin(), r.train.end());
    std::sort(r.holdout.begin(), r.holdout.end());
    if (r.train.empty()) throw ConfigError("training: holdout leaves no training subjects");
    return r;
}

// Per-sample noising draws are keyed by (seed, purpose, epoch, subject
// ordinal) so batch composition and threading cannot change them.
struct DiffusionBatch {
    ag::Tensor x0, xt, eps;
    std::vector<int> ts;
    std::vector<double> ages;
};

DiffusionBatch build_diffusion_batch(const std::vector<Sample>& cohort,
                                     const std::vector<size_t>& rows, const ModelConfig& cfg,
                                     const diff::NoiseSchedule& schedule, rng::Key base,
                                     int epoch) {
    const int n = static_cast<int>(rows.size());
    const int64_t pix = static_cast<int64_t>(cfg.image_size) * cfg.image_size * cfg.in_channels;
    DiffusionBatch b{ag::Tensor(ag::Shape{n, cfg.in_channels, cfg.image_size, cfg.image_size}),
                     ag::Tensor(ag::Shape{n, cfg.in_channels, cfg.image_size, cfg.image_size}),
                     ag::Tensor(ag::Shape{n, cfg.in_channels, cfg.image_size, cfg.image_size}),
                     {},
                     {}};
    b.ts.resize(static_cast<size_t>(n));
    b.ages.resize(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const size_t o = rows[static_cast<size_t>(r)];
        const Sample& s = cohort[o];
        b.ages[static_cast<size_t>(r)] = s.age;
        const rng::Key kt = base.with("t").with(static_cast<uint64_t>(epoch)).with(o);
        const rng::Key ke = base.with("eps").with(static_cast<uint64_t>(epoch)).with(o);
        const int T = schedule.steps();
        int t = 1 + static_cast<int>(rng::uniform_at(kt, 0) * T);
        t = std::min(t, T);
        b.ts[static_cast<size_t>(r)] = t;
        const double sa = std::sqrt(schedule.alpha_bar(t));
        const double sb = std::sqrt(1.0 - schedule.alpha_bar(t));
        float* px0 = b.x0.data() + static_cast<int64_t>(r) * pix;
        float* pxt = b.xt.data() + static_cast<int64_t>(r) * pix;
        float* pe = b.eps.data() + static_cast<int64_t>(r) * pix;
        for (int64_t i = 0; i < pix; ++i) {
            const double e = rng::gaussian_at(ke, static_cast<uint64_t>(i));
            px0[i] = s.image[static_cast<size_t>(i)];
            pe[i] = static_cast<float>(e);
            pxt[i] = static_cast<float>(sa * px0[i] + sb * e);
        }
    }
    return b;
}

std::vector<std::vector<size_t>> chunk(const std::vector<size_t>& order, int batch_size) {
    std::vector<std::vector<size_t>> out;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

void validate_train_config(const TrainConfig& tc) {
    if (tc.epochs < 1) throw ConfigError("training: epochs must be >= 1");
    if (tc.batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (!(tc.lr > 0.0)) throw ConfigError("training: lr must be positive");
    if (tc.threads < 1) throw ConfigError("training: threads must be >= 1");
}

// Contiguous row shards, one per worker; empty shards are dropped.
std::vector<std::vector<size_t>> shard_rows(const std::vector<size_t>& rows, int threads) {
    std::vector<std::vector<size_t>> shards;
    const size_t n = rows.size();
    const size_t per = (n + static_cast<size_t>(threads) - 1) / static_cast<size_t>(threads);
    for (size_t i = 0; i < n; i += per) {
        const size_t end = std::min(n, i + per);
        shards.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(i),
                            rows.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return shards;
}

} // namespace

TrainResult train_hdae(HDAEModel& model, const std::vector<Sample>& healthy,
                       const diff::NoiseSchedule& schedule, const TrainConfig& tc,
                       const EpochCallback& on_epoch) {
    validate_train_config(tc);
    validate_samples(healthy, model.cfg);
    const AgeStats stats = cohort_age_stats(healthy);
    model.age_mean = stats.mean;
    model.age_std = stats.sd;
    model.meta.seed = tc.seed;

    const rng::Key base = rng::Key(tc.seed).with("hdae-train");
    SplitResult split = split_cohort(healthy.size(), tc.holdout_fraction, base);

    TrainResult result;
    result.train_indices = split.train;
    result.holdout_indices = split.holdout;

    auto eval_mean_loss = [&](const std::vector<size_t>& rows, int epoch_tag) {
        double total = 0.0;
        for (const auto& batch_rows : chunk(rows, tc.batch_size)) {
            DiffusionBatch b =
                build_diffusion_batch(healthy, batch_rows, model.cfg, schedule, base, epoch_tag);
            ag::Tensor z = model.encode(nullptr, b.x0, b.ages);
            ag::Tensor pred = model.predict_noise(nullptr, b.xt, b.ts, z);
            total += diff::diffusion_loss(nullptr, pred, b.eps).item() *
                     static_cast<double>(batch_rows.size());
        }
        return total / static_cast<double>(rows.size());
    };
    result.untrained_loss = eval_mean_loss(split.train, /*epoch_tag=*/0);

    ag::AdamConfig acfg;
    acfg.lr = tc.lr;
    ag::AdamState adam;
    auto param_ptrs = model.params.pointers();
    adam.init(param_ptrs, acfg);

    std::vector<ParamStore> worker_stores;
    for (int k = 1; k < tc.threads; ++k) worker_stores.push_back(model.params.shared_data_view());

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<size_t> order = split.train;
        {
            std::vector<size_t> perm =
                seeded_shuffle(order.size(), base.with("perm").with(static_cast<uint64_t>(epoch)));
            std::vector<size_t> shuffled(order.size());
            for (size_t i = 0; i < order.size(); ++i) shuffled[i] = order[perm[i]];
            order = std::move(shuffled);
        }
        double epoch_total = 0.0;
        size_t batch_no = 0;
        for (const auto& batch_rows : chunk(order, tc.batch_size)) {
            ++batch_no;
            try {
                double batch_loss = 0.0;
                model.params.zero_grads();
                if (tc.threads == 1 || batch_rows.size() < 2) {
                    ag::Tape tape;
                    model.params.track_all(tape);
                    DiffusionBatch b = build_diffusion_batch(healthy, batch_rows, model.cfg,
                                                             schedule, base, epoch);
                    ag::Tensor z = model.encode(&tape, b.x0, b.ages);
                    ag::Tensor pred = model.predict_noise(&tape, b.xt, b.ts, z);
                    ag::Tensor loss = diff::diffusion_loss(&tape, pred, b.eps);
                    tape.backward(loss);
                    batch_loss = loss.item();
                } else {
                    const auto shards = shard_rows(batch_rows, tc.threads);
                    std::vector<double> losses(shards.size(), 0.0);
                    std::vector<std::exception_ptr> errors(shards.size());
                    std::vector<std::thread> threads;
                    for (size_t k = 0; k < shards.size(); ++k) {
                        ParamStore& store = k == 0 ? model.params : worker_stores[k - 1];
                        if (k > 0) store.zero_grads();
                        threads.emplace_back([&, k, &store_ = store]() {
                            try {
                                ag::Tape tape;
                                store_.track_all(tape);
                                DiffusionBatch b = build_diffusion_batch(
                                    healthy, shards[k], model.cfg, schedule, base, epoch);
                                std::vector<double> norm(b.ages.size());
                                for (size_t i = 0; i < norm.size(); ++i) {
                                    norm[i] = model.normalize_age(b.ages[i]);
                                }
                                ag::Tensor z = model.encoder.forward(&tape, store_, b.x0, norm);
                                ag::Tensor pred =
                                    model.predictor.forward(&tape, store_, b.xt, b.ts, z);
                                ag::Tensor loss = diff::diffusion_loss(&tape, pred, b.eps);
                                const double w = static_cast<double>(shards[k].size()) /
                                                 static_cast<double>(batch_rows.size());
                                tape.backward(loss, w);
                                losses[k] = loss.item() * w;
                            } catch (...) {
                                errors[k] = std::current_exception();
                            }
                        });
                    }
                    for (auto& th : threads) th.join();
                    for (const auto& e : errors) {
                        if (e) std::rethrow_exception(e);
                    }
                    // Deterministic ordered reduction of worker gradients.
                    for (size_t k = 1; k < shards.size(); ++k) {
                        ParamStore& store = worker_stores[k - 1];
                        for (size_t i = 0; i < store.count(); ++i) {
                            const float* src = store[i].grad();
                            float* dst = model.params[i].grad();
                            for (int64_t j = 0; j < store[i].size(); ++j) dst[j] += src[j];
                        }
                    }
                    for (double l : losses) batch_loss += l;
                }
                ag::adam_step(param_ptrs, adam);
                epoch_total += batch_loss * static_cast<double>(batch_rows.size());
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no) + ": " + e.what());
            }
        }
        const double mean_loss = epoch_total / static_cast<double>(order.size());
        result.epoch_losses.push_back(mean_loss);
        if (on_epoch) on_epoch(epoch, mean_loss);
    }
    result.final_loss = result.epoch_losses.back();
    model.meta.epochs = tc.epochs;
    model.meta.final_loss = result.final_loss;
    return result;
}

TrainResult train_age_regressor(AgeRegressor& model, const std::vector<Sample>& healthy,
                                const TrainConfig& tc, const EpochCallback& on_epoch) {
    validate_train_config(tc);
    validate_samples(healthy, model.cfg);
    const AgeStats stats = cohort_age_stats(healthy);
    model.age_mean = stats.mean;
    model.age_std = stats.sd;
    model.meta.seed = tc.seed;

    const rng::Key base = rng::Key(tc.seed).with("age-train");
    SplitResult split = split_cohort(healthy.size(), tc.holdout_fraction, base);
    TrainResult result;
    result.train_indices = split.train;
    result.holdout_indices = split.holdout;

    const int64_t pix =
        static_cast<int64_t>(model.cfg.image_size) * model.cfg.image_size * model.cfg.in_channels;
    auto build = [&](const std::vector<size_t>& rows) {
        const int n = static_cast<int>(rows.size());
        ag::Tensor x0(
            ag::Shape{n, model.cfg.in_channels, model.cfg.image_size, model.cfg.image_size});
        ag::Tensor target(ag::Shape{n, 1});
        for (int r = 0; r < n; ++r) {
            const Sample& s = healthy[rows[static_cast<size_t>(r)]];
            std::memcpy(x0.data() + static_cast<int64_t>(r) * pix, s.image.data(),
                        sizeof(float) * static_cast<size_t>(pix));
            target.data()[r] = static_cast<float>((s.age - stats.mean) / stats.sd);
        }
        return std::make_pair(x0, target);
    };

    auto eval_mean_loss = [&](const std::vector<size_t>& rows) {
        double total = 0.0;
        for (const auto& batch_rows : chunk(rows, tc.batch_size)) {
            auto [x0, target] = build(batch_rows);
            ag::Tensor pred = model.forward_norm(nullptr, x0);
            total += ag::mse(nullptr, pred, target).item() * static_cast<double>(batch_rows.size());
        }
        return total / static_cast<double>(rows.size());
    };
    result.untrained_loss = eval_mean_loss(split.train);

    ag::AdamConfig acfg;
    acfg.lr = tc.lr;
    ag::AdamState adam;
    auto param_ptrs = model.params.pointers();
    adam.init(param_ptrs, acfg);

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<size_t> order = split.train;
        std::vector<size_t> perm =
            seeded_shuffle(order.size(), base.with("perm").with(static_cast<uint64_t>(epoch)));
        std::vector<size_t> shuffled(order.size());
        for (size_t i = 0; i < order.size(); ++i) shuffled[i] = order[perm[i]];
        order = std::move(shuffled);

        double epoch_total = 0.0;
        size_t batch_no = 0;
        for (const auto& batch_rows : chunk(order, tc.batch_size)) {
            ++batch_no;
            try {
                model.params.zero_grads();
                ag::Tape tape;
                model.params.track_all(tape);
                auto [x0, target] = build(batch_rows);
                ag::Tensor pred = model.forward_norm(&tape, x0);
                ag::Tensor loss = ag::mse(&tape, pred, target);
                tape.backward(loss);
                ag::adam_step(param_ptrs, adam);
                epoch_total += loss.item() * static_cast<double>(batch_rows.size());
            } catch (const NumericError& e) {
                throw NumericError("age training diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no) + ": " + e.what());
            }
        }
        const double mean_loss = epoch_total / static_cast<double>(order.size());
        result.epoch_losses.push_back(mean_loss);
        if (on_epoch) on_epoch(epoch, mean_loss);
    }
    result.final_loss = result.epoch_losses.back();
    model.meta.epochs = tc.epochs;
    model.meta.final_loss = result.final_loss;
    return result;
}

ag::Tensor reconstruct(const HDAEModel& model, const diff::NoiseSchedule& schedule,
                       const diff::SamplingPlan& plan, const ag::Tensor& x0,
                       const std::vector<double>& ages) {
    ag::Tensor z = model.encode(nullptr, x0, ages);
    const diff::NoisePredictorFn fn = model.predictor_fn();
    ag::Tensor xT = diff::deterministic_encode(x0, z, fn, schedule, plan);
    return diff::reverse_sample(xT, z, fn, schedule, plan);
}

// --- checkpoint container ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

struct ByteWriter {
    std::string buf;
    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) throw DataError("checkpoint truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str(size_t n) {
        if (pos + n > buf.size()) throw DataError("checkpoint truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

json info_to_json(const CheckpointInfo& info) {
    json j;
    j["format_version"] = info.format_version;
    j["kind"] = info.kind;
    j["config"] = {{"image_size", info.config.image_size},
                   {"in_channels", info.config.in_channels},
                   {"channels", info.config.channels},
                   {"latent_dim", info.config.latent_dim},
                   {"time_embed_dim", info.config.time_embed_dim},
                   {"age_embed_dim", info.config.age_embed_dim},
                   {"groups", info.config.groups}};
    j["schedule_steps"] = info.schedule_steps;
    j["beta_start"] = info.beta_start;
    j["beta_end"] = info.beta_end;
    j["age_mean"] = info.age_mean;
    j["age_std"] = info.age_std;
    j["meta"] = {{"epochs", info.meta.epochs},
                 {"seed", info.meta.seed},
                 {"final_loss", info.meta.final_loss}};
    j["train_ids"] = info.train_ids;
    return j;
}

CheckpointInfo info_from_json(const json& j) {
    CheckpointInfo info;
    try {
        info.format_version = j.at("format_version").get<int>();
        info.kind = j.at("kind").get<std::string>();
        const json& c = j.at("config");
        info.config.image_size = c.at("image_size").get<int>();
        info.config.in_channels = c.at("in_channels").get<int>();
        info.config.channels = c.at("channels").get<std::vector<int>>();
        info.config.latent_dim = c.at("latent_dim").get<int>();
        info.config.time_embed_dim = c.at("time_embed_dim").get<int>();
        info.config.age_embed_dim = c.at("age_embed_dim").get<int>();
        info.config.groups = c.at("groups").get<int>();
        info.schedule_steps = j.at("schedule_steps").get<int>();
        info.beta_start = j.at("beta_start").get<double>();
        info.beta_end = j.at("beta_end").get<double>();
        info.age_mean = j.at("age_mean").get<double>();
        info.age_std = j.at("age_std").get<double>();
        info.meta.epochs = j.at("meta").at("epochs").get<int>();
        info.meta.seed = j.at("meta").at("seed").get<uint64_t>();
        info.meta.final_loss = j.at("meta").at("final_loss").get<double>();
        info.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header malformed: ") + e.what());
    }
    return info;
}

std::string verified_payload(const std::string& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 4 + 4 + 8 + 8) throw DataError("checkpoint too small: " + path);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    const uint64_t computed = io::fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != computed) throw DataError("checkpoint digest mismatch: " + path);
    return bytes;
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointInfo& info,
                     const ParamStore& params) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    const std::string header = info_to_json(info).dump();
    w.u64(header.size());
    w.raw(header.data(), header.size());
    w.u32(static_cast<uint32_t>(params.count()));
    for (size_t i = 0; i < params.count(); ++i) {
        const std::string& name = params.name(i);
        const ag::Tensor& t = params[i];
        w.u32(static_cast<uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u32(static_cast<uint32_t>(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d) w.u32(static_cast<uint32_t>(t.dim(d)));
        w.u64(static_cast<uint64_t>(t.size()));
        w.raw(t.data(), sizeof(float) * static_cast<size_t>(t.size()));
    }
    w.u64(io::fnv1a64(w.buf));
    io::atomic_write(path, w.buf);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
    const std::string bytes = verified_payload(path);
    ByteReader r{bytes};
    r.pos = 4;
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path);
    }
    const uint64_t hlen = r.u64();
    const std::string header = r.str(hlen);
    json j = json::parse(header, nullptr, false);
    if (j.is_discarded()) throw DataError("checkpoint header is not valid JSON: " + path);
    return info_from_json(j);
}

CheckpointInfo load_checkpoint(const std::string& path, ParamStore& params) {
    const std::string bytes = verified_payload(path);
    ByteReader r{bytes};
    r.pos = 4;
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path);
    }
    const uint64_t hlen = r.u64();
    json j = json::parse(r.str(hlen), nullptr, false);
    if (j.is_discarded()) throw DataError("checkpoint header is not valid JSON: " + path);
    const CheckpointInfo info = info_from_json(j);
    const uint32_t count = r.u32();
    if (count != params.count()) {
        throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model wants " +
                        std::to_string(params.count()));
    }
    for (size_t i = 0; i < params.count(); ++i) {
        const std::string name = r.str(r.u32());
        if (name != params.name(i)) {
            throw DataError("checkpoint parameter '" + name + "' does not match model parameter '" +
                            params.name(i) + "'");
        }
        const uint32_t ndim = r.u32();
        ag::Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(r.u32());
        if (shape != params[i].shape()) {
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            ag::shape_str(shape) + ", model wants " +
                            ag::shape_str(params[i].shape()));
        }
        const uint64_t nvals = r.u64();
        if (nvals != static_cast<uint64_t>(params[i].size())) {
            throw DataError("checkpoint parameter '" + name + "' value count mismatch");
        }
        r.raw(params[i].data(), sizeof(float) * nvals);
    }
    return info;
}

uint64_t file_digest(const std::string& path) {
    const std::string bytes = io::read_file(path);
    return io::fnv1a64(bytes);
}

HDAEModel load_hdae(const std::string& path, diff::NoiseSchedule* schedule_out) {
    const CheckpointInfo info = peek_checkpoint(path);
    if (info.kind != "hdae") {
        throw DataError("checkpoint kind '" + info.kind + "' is not an autoencoder: " + path);
    }
    HDAEModel model(info.config, /*init_seed=*/0);
    load_checkpoint(path, model.params);
    model.age_mean = info.age_mean;
    model.age_std = info.age_std;
    model.meta = info.meta;
    if (schedule_out) {
        if (info.schedule_steps < 2) throw DataError("checkpoint lacks a noise schedule: " + path);
        *schedule_out =
            diff::NoiseSchedule::linear(info.schedule_steps, info.beta_start, info.beta_end);
    }
    return model;
}

AgeRegressor load_age_regressor(const std::string& path) {
    const CheckpointInfo info = peek_checkpoint(path);
    if (info.kind != "age-regressor") {
        throw DataError("checkpoint kind '" + info.kind + "' is not an age regressor: " + path);
    }
    AgeRegressor model(info.config, /*init_seed=*/0);
    load_checkpoint(path, model.params);
    model.age_mean = info.age_mean;
    model.age_std = info.age_std;
    model.meta = info.meta;
    return model;
}

} // namespace normdae::model
