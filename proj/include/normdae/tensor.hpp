#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace normdae::ag {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense float32 array with an optional gradient buffer. Value-semantic
// handle: copies share the underlying data and gradient storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    std::vector<float>& vec() { return *data_; }
    const std::vector<float>& vec() const { return *data_; }

    // Scalar access; throws unless the tensor holds exactly one value.
    float item() const;

    bool tracked() const { return node_ >= 0; }
    int node() const { return node_; }

    bool has_grad() const { return static_cast<bool>(grad_); }
    float* grad() { return grad_->data(); }
    const float* grad() const { return grad_->data(); }
    std::vector<float>& grad_vec() { return *grad_; }
    const std::vector<float>& grad_vec() const { return *grad_; }

    void ensure_grad();
    void zero_grad();
    // Fresh gradient buffer not shared with any other view of this tensor.
    void make_own_grad();
    // Forget tape membership in place; data and grad buffers are kept.
    void untrack() { node_ = -1; }
    // Forget tape membership; keeps data, drops the gradient buffer.
    Tensor detached() const;

private:
    friend struct Tape;
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    int node_ = -1;
};

// Recorded reverse-mode program. Ops append records in execution order, so
// the list is topologically sorted by construction; backward() replays it
// once in reverse.
struct Tape {
    struct Record {
        std::string op;
        // Gradient buffers this record writes; scanned for NaN/Inf after
        // the rule runs so numeric faults name their producer.
        std::vector<std::shared_ptr<std::vector<float>>> touched;
        std::function<void()> rule;
    };

    std::vector<Record> records;
    int next_node = 0;

    int track(Tensor& t);
    void record(std::string op, std::vector<Tensor> grad_targets, std::function<void()> rule);

    // Seeds d(loss)/d(loss) = seed and accumulates gradients into every
    // tracked tensor reachable from it. loss must be a tracked scalar.
    void backward(Tensor& loss, double seed = 1.0);

    void clear();
};

// Throws NumericError naming `op` if any value is non-finite.
void check_finite(const char* op, const float* p, int64_t n);
void check_finite(const char* op, const Tensor& t);

// --- Operations -----------------------------------------------------------
// All ops are pure in their inputs. `tape` may be null, in which case no
// gradient bookkeeping happens (inference mode).

// 2D cross-correlation, NCHW input, OCkk kernel.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding);
// x[N,C,H,W] + b[C] broadcast over N,H,W.
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias);
// x[N,C,H,W] + v[N,C] broadcast over H,W (conditioning injection).
Tensor add_channel_vec(Tape* tape, const Tensor& x, const Tensor& v);
// x[N,C,H,W] * (1 + scale[N,C]) + shift[N,C] (feature-wise modulation).
Tensor film(Tape* tape, const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor group_norm(Tape* tape, const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor silu(Tape* tape, const Tensor& x);
Tensor linear(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor upsample_nearest2(Tape* tape, const Tensor& x);
Tensor global_avg_pool(Tape* tape, const Tensor& x); // [N,C,H,W] -> [N,C]
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sum_all(Tape* tape, const Tensor& x);
Tensor mean_all(Tape* tape, const Tensor& x);
// Mean squared difference, the training objective.
Tensor mse(Tape* tape, const Tensor& pred, const Tensor& target);

// --- Adam -----------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Moment buffers mirror parameter shapes; the step
// counter advances by exactly one per update.
struct AdamState {
    AdamConfig cfg;
    int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    void init(const std::vector<Tensor*>& params, AdamConfig cfg);
};

// Applies one update from each param's gradient buffer. Params without an
// allocated gradient are treated as zero-gradient.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

} // namespace normdae::ag
