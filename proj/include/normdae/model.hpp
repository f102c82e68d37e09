#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "normdae/diffusion.hpp"
#include "normdae/rng.hpp"
#include "normdae/tensor.hpp"

namespace normdae::model {

struct ModelConfig {
    int image_size = 32;
    int in_channels = 1;
    std::vector<int> channels = {32, 64, 128};  // per resolution level, top to bottom
    int latent_dim = 64;
    int time_embed_dim = 64;
    int age_embed_dim = 64;
    int groups = 8;  // group-norm group count

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class Init { Zero, One, He, HeTenth };

// Flat, insertion-ordered registry of named parameters. Layout objects hold
// indices into the store, so a worker can run the same layout against a
// shared-data view with private gradient buffers.
class ParamStore {
public:
    explicit ParamStore(rng::Key init_key = rng::Key{0}) : init_key_(init_key) {}

    size_t add(const std::string& name, ag::Shape shape, Init init);

    ag::Tensor& operator[](size_t i) { return items_[i].second; }
    const ag::Tensor& operator[](size_t i) const { return items_[i].second; }
    const std::string& name(size_t i) const { return items_[i].first; }
    size_t count() const { return items_.size(); }
    int64_t total_values() const;

    std::vector<ag::Tensor*> pointers();
    void track_all(ag::Tape& tape);
    void zero_grads();

    // Same underlying data buffers, fresh private gradient buffers.
    ParamStore shared_data_view() const;

private:
    rng::Key init_key_;
    std::vector<std::pair<std::string, ag::Tensor>> items_;
    std::map<std::string, size_t> index_;
};

// Pre-activation residual block with a per-channel additive conditioning
// vector (timestep or age embedding) and optional feature-wise affine
// modulation from the semantic latent.
struct CondBlock {
    int c_in = 0, c_out = 0, groups1 = 1, groups2 = 1;
    bool has_film = false, has_skip = false;
    size_t gn1_g, gn1_b, conv1_w, conv1_b;
    size_t cond_w, cond_b;
    size_t film_scale_w, film_scale_b, film_shift_w, film_shift_b;
    size_t gn2_g, gn2_b, conv2_w, conv2_b;
    size_t skip_w, skip_b;

    ag::Tensor forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& x,
                       const ag::Tensor& cond_vec, const ag::Tensor* z) const;
};

// Sinusoidal position-style embedding rows, one per value; dim must be even.
ag::Tensor sinusoidal_rows(const std::vector<double>& values, int dim);

// U-Net noise predictor: stem, conditioned residual blocks down a resolution
// pyramid, mirrored back up with skip concatenation, and a projection head.
// Timesteps enter via a sinusoidal embedding and latents via per-block
// feature-wise modulation.
class NoisePredictor {
public:
    NoisePredictor() = default;
    NoisePredictor(const ModelConfig& cfg, ParamStore& P);

    ag::Tensor forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& xt,
                       const std::vector<int>& timesteps, const ag::Tensor& z) const;

    static int64_t expected_param_values(const ModelConfig& cfg);

private:
    ModelConfig cfg_;
    size_t stem_w, stem_b;
    size_t tmlp1_w, tmlp1_b, tmlp2_w, tmlp2_b;
    std::vector<CondBlock> down_;
    std::vector<size_t> dsamp_w_, dsamp_b_;
    std::vector<size_t> usamp_w_, usamp_b_;
    std::vector<CondBlock> up_;
    size_t head_gn_g, head_gn_b, head_w, head_b;
};

// The predictor's downward path followed by global average pooling and a
// linear head onto the latent space; conditioned on (normalized) age instead
// of the timestep and without latent modulation.
class SemanticEncoder {
public:
    SemanticEncoder() = default;
    SemanticEncoder(const ModelConfig& cfg, ParamStore& P);

    ag::Tensor forward(ag::Tape* tape, const ParamStore& P, const ag::Tensor& x0,
                       const std::vector<double>& ages_norm) const;

    static int64_t expected_param_values(const ModelConfig& cfg);

private:
    ModelConfig cfg_;
    size_t stem_w, stem_b;
    size_t amlp1_w, amlp1_b, amlp2_w, amlp2_b;
    std::vector<CondBlock> down_;
    std::vector<size_t> dsamp_w_, dsamp_b_;
    size_t head_w, head_b;
};

struct TrainMeta {
    int epochs = 0;
    uint64_t seed = 0;
    double final_loss = 0.0;
};

// Joint semantic-encoder + noise-predictor model.
class HDAEModel {
public:
    HDAEModel(ModelConfig cfg, uint64_t init_seed);

    // ages in years; normalization uses the stored healthy-cohort statistics.
    ag::Tensor encode(ag::Tape* tape, const ag::Tensor& x0, const std::vector<double>& ages) const;
    ag::Tensor predict_noise(ag::Tape* tape, const ag::Tensor& xt,
                             const std::vector<int>& timesteps, const ag::Tensor& z) const;
    double normalize_age(double age_years) const;

    // Adapter for the deterministic sampling loops (inference, no tape).
    diff::NoisePredictorFn predictor_fn() const;

    ModelConfig cfg;
    ParamStore params;
    SemanticEncoder encoder;
    NoisePredictor predictor;
    double age_mean = 0.0;
    double age_std = 1.0;
    TrainMeta meta;
};

// Encoder with a scalar regression head, trained to predict normalized age as
// a pretext task; the age-conditioning input is held at a constant zero so the
// architecture stays parameter-compatible with the semantic encoder.
class AgeRegressor {
public:
    AgeRegressor(ModelConfig cfg, uint64_t init_seed);

    // Returns predicted age in years, one per row.
    std::vector<double> predict_age(const ag::Tensor& x0) const;
    ag::Tensor forward_norm(ag::Tape* tape, const ag::Tensor& x0) const;  // [N,1] normalized

    ModelConfig cfg;
    ParamStore params;
    SemanticEncoder encoder;
    size_t head_w, head_b;
    double age_mean = 0.0;
    double age_std = 1.0;
    TrainMeta meta;
};

// --- training -----------------------------------------------------------------

struct Sample {
    std::string id;
    std::vector<float> image;  // image_size^2 pixels in [0,1]
    double age = 0.0;          // years
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double lr = 1e-4;
    double holdout_fraction = 0.1;
    int threads = 1;
    uint64_t seed = 1;
};

struct TrainResult {
    std::vector<double> epoch_losses;  // mean loss per epoch, in order
    double untrained_loss = 0.0;       // same evaluation before any update
    double final_loss = 0.0;
    std::vector<size_t> train_indices;
    std::vector<size_t> holdout_indices;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

TrainResult train_hdae(HDAEModel& model, const std::vector<Sample>& healthy,
                       const diff::NoiseSchedule& schedule, const TrainConfig& tc,
                       const EpochCallback& on_epoch = nullptr);

TrainResult train_age_regressor(AgeRegressor& model, const std::vector<Sample>& healthy,
                                const TrainConfig& tc, const EpochCallback& on_epoch = nullptr);

// Full autoencoding round trip: encode the latent, invert the deterministic
// sampler, then traverse it back down to an image.
ag::Tensor reconstruct(const HDAEModel& model, const diff::NoiseSchedule& schedule,
                       const diff::SamplingPlan& plan, const ag::Tensor& x0,
                       const std::vector<double>& ages);

// --- checkpoint container -------------------------------------------------------

struct CheckpointInfo {
    int format_version = 1;
    std::string kind;  // "hdae" | "age-regressor"
    ModelConfig config;
    int schedule_steps = 0;  // 0 when no schedule applies
    double beta_start = 0.0;
    double beta_end = 0.0;
    double age_mean = 0.0;
    double age_std = 1.0;
    TrainMeta meta;
    // Ids of the subjects the model was trained on; lets downstream consumers
    // assert that scored subjects never entered training.
    std::vector<std::string> train_ids;
};

void save_checkpoint(const std::string& path, const CheckpointInfo& info, const ParamStore& params);
CheckpointInfo peek_checkpoint(const std::string& path);
// Store must already hold identically named/shaped parameters (construct the
// model from the peeked config first); values are overwritten in place.
CheckpointInfo load_checkpoint(const std::string& path, ParamStore& params);
uint64_t file_digest(const std::string& path);

HDAEModel load_hdae(const std::string& path, diff::NoiseSchedule* schedule_out = nullptr);
AgeRegressor load_age_regressor(const std::string& path);

} // namespace normdae::model
