#include "normdae/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "normdae/errors.hpp"

namespace normdae::ag {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<float>>(static_cast<size_t>(shape_numel(shape_)), fill)) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != static_cast<int64_t>(values.size())) {
        throw DimensionError("tensor: shape " + shape_str(shape_) + " wants " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(values.size()));
    }
    data_ = std::make_shared<std::vector<float>>(std::move(values));
}

float Tensor::item() const {
    if (!data_ || data_->size() != 1) {
        throw DimensionError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
    }
    return (*data_)[0];
}

void Tensor::ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

void Tensor::make_own_grad() {
    grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

int Tape::track(Tensor& t) {
    t.ensure_grad();
    t.node_ = next_node++;
    return t.node_;
}

void Tape::record(std::string op, std::vector<Tensor> grad_targets, std::function<void()> rule) {
    Record r;
    r.op = std::move(op);
    for (Tensor& t : grad_targets) {
        if (t.tracked()) r.touched.push_back(t.grad_ ? t.grad_ : nullptr);
    }
    r.rule = std::move(rule);
    records.push_back(std::move(r));
}

void Tape::backward(Tensor& loss, double seed) {
    if (loss.size() != 1) {
        throw DataError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.tracked()) {
        throw DataError("backward: loss is not tracked on this tape");
    }
    check_finite("backward seed", loss);
    loss.grad_vec()[0] += static_cast<float>(seed);
    for (auto it = records.rbegin(); it != records.rend(); ++it) {
        it->rule();
        for (const auto& g : it->touched) {
            if (g) check_finite(it->op.c_str(), g->data(), static_cast<int64_t>(g->size()));
        }
    }
}

void Tape::clear() {
    records.clear();
    next_node = 0;
}

void check_finite(const char* op, const float* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
        }
    }
}

void check_finite(const char* op, const Tensor& t) {
    check_finite(op, t.data(), t.size());
}

// --- small BLAS-ish kernels -------------------------------------------------

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C) {
    for (int i = 0; i < M; ++i) {
        float* __restrict c = C + static_cast<size_t>(i) * N;
        const float* a = A + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const float av = a[k];
            const float* __restrict b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<size_t>(i) * K;
        float* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<size_t>(j) * K;
            float acc = 0.0f;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C) {
    for (int k = 0; k < K; ++k) {
        const float* a = A + static_cast<size_t>(k) * M;
        const float* __restrict b = B + static_cast<size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const float av = a[i];
            float* __restrict c = C + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

struct ConvDims {
    int N, C, H, W, O, K, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw DimensionError("conv2d: expected 4-d input and kernel, got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    }
    if (w.dim(2) != w.dim(3)) {
        throw DimensionError("conv2d: kernel must be square, got " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("conv2d: channel mismatch between input " + shape_str(x.shape()) +
                             " and kernel " + shape_str(w.shape()));
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be positive");
    if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");
    ConvDims d;
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.O = w.dim(0);
    d.K = w.dim(2);
    if (d.H + 2 * padding < d.K || d.W + 2 * padding < d.K) {
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) +
                             " larger than padded input " + shape_str(x.shape()));
    }
    d.Ho = (d.H + 2 * padding - d.K) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.K) / stride + 1;
    return d;
}

// cols[C*K*K, Ho*Wo] from one sample plane.
void im2col(const float* x, const ConvDims& d, int stride, int padding, float* cols) {
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        for (int ki = 0; ki < d.K; ++ki) {
            for (int kj = 0; kj < d.K; ++kj) {
                float* row = cols + static_cast<size_t>((c * d.K + ki) * d.K + kj) * HoWo;
                for (int oi = 0; oi < d.Ho; ++oi) {
                    const int ih = oi * stride - padding + ki;
                    float* out = row + static_cast<size_t>(oi) * d.Wo;
                    if (ih < 0 || ih >= d.H) {
                        std::memset(out, 0, sizeof(float) * static_cast<size_t>(d.Wo));
                        continue;
                    }
                    const float* src = x + static_cast<size_t>(c * d.H + ih) * d.W;
                    for (int oj = 0; oj < d.Wo; ++oj) {
                        const int iw = oj * stride - padding + kj;
                        out[oj] = (iw >= 0 && iw < d.W) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-accumulate cols gradients back into one sample plane.
void col2im_acc(const float* cols, const ConvDims& d, int stride, int padding, float* gx) {
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        for (int ki = 0; ki < d.K; ++ki) {
            for (int kj = 0; kj < d.K; ++kj) {
                const float* row = cols + static_cast<size_t>((c * d.K + ki) * d.K + kj) * HoWo;
                for (int oi = 0; oi < d.Ho; ++oi) {
                    const int ih = oi * stride - padding + ki;
                    if (ih < 0 || ih >= d.H) continue;
                    float* dst = gx + static_cast<size_t>(c * d.H + ih) * d.W;
                    const float* src = row + static_cast<size_t>(oi) * d.Wo;
                    for (int oj = 0; oj < d.Wo; ++oj) {
                        const int iw = oj * stride - padding + kj;
                        if (iw >= 0 && iw < d.W) dst[iw] += src[oj];
                    }
                }
            }
        }
    }
}

thread_local std::vector<float> g_cols_scratch;

bool any_tracked(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->tracked()) return true;
    }
    return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

} // namespace

// --- ops ---------------------------------------------------------------------

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const ConvDims d = conv_dims(input, kernel, stride, padding);
    const int HoWo = d.Ho * d.Wo;
    const int CKK = d.C * d.K * d.K;
    Tensor out(Shape{d.N, d.O, d.Ho, d.Wo});

    g_cols_scratch.resize(static_cast<size_t>(CKK) * HoWo);
    float* cols = g_cols_scratch.data();
    for (int n = 0; n < d.N; ++n) {
        im2col(input.data() + static_cast<size_t>(n) * d.C * d.H * d.W, d, stride, padding, cols);
        gemm_nn(d.O, HoWo, CKK, kernel.data(), cols, out.data() + static_cast<size_t>(n) * d.O * HoWo);
    }
    check_finite("conv2d", out);

    if (tape && any_tracked({&input, &kernel})) {
        tape->track(out);
        Tensor x = input, w = kernel, y = out;
        tape->record("conv2d", {x, w}, [x, w, y, d, stride, padding]() mutable {
            const int HoWo_ = d.Ho * d.Wo;
            const int CKK_ = d.C * d.K * d.K;
            std::vector<float> cols_(static_cast<size_t>(CKK_) * HoWo_);
            std::vector<float> gcols;
            if (x.tracked()) gcols.resize(cols_.size());
            for (int n = 0; n < d.N; ++n) {
                const float* gout = y.grad() + static_cast<size_t>(n) * d.O * HoWo_;
                im2col(x.data() + static_cast<size_t>(n) * d.C * d.H * d.W, d, stride, padding,
                       cols_.data());
                if (w.tracked()) gemm_nt(d.O, CKK_, HoWo_, gout, cols_.data(), w.grad());
                if (x.tracked()) {
                    std::fill(gcols.begin(), gcols.end(), 0.0f);
                    gemm_tn(CKK_, HoWo_, d.O, w.data(), gout, gcols.data());
                    col2im_acc(gcols.data(), d, stride, padding,
                               x.grad() + static_cast<size_t>(n) * d.C * d.H * d.W);
                }
            }
        });
    }
    return out;
}

Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 4 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_channel_bias: input " + shape_str(x.shape()) + " vs bias " +
                             shape_str(bias.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float b = bias.data()[c];
            const float* src = x.data() + (static_cast<size_t>(n) * C + c) * HW;
            float* dst = out.data() + (static_cast<size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) dst[i] = src[i] + b;
        }
    }
    check_finite("add_channel_bias", out);
    if (tape && any_tracked({&x, &bias})) {
        tape->track(out);
        Tensor xi = x, bi = bias, y = out;
        tape->record("add_channel_bias", {xi, bi}, [xi, bi, y, N, C, HW]() mutable {
            if (xi.tracked()) {
                float* gx = xi.grad();
                const float* gy = y.grad();
                for (int64_t i = 0; i < y.size(); ++i) gx[i] += gy[i];
            }
            if (bi.tracked()) {
                float* gb = bi.grad();
                for (int n = 0; n < N; ++n) {
                    for (int c = 0; c < C; ++c) {
                        const float* gy = y.grad() + (static_cast<size_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int i = 0; i < HW; ++i) acc += gy[i];
                        gb[c] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

Tensor add_channel_vec(Tape* tape, const Tensor& x, const Tensor& v) {
    if (x.ndim() != 4 || v.ndim() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1)) {
        throw DimensionError("add_channel_vec: input " + shape_str(x.shape()) + " vs vec " +
                             shape_str(v.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float b = v.data()[static_cast<size_t>(n) * C + c];
            const float* src = x.data() + (static_cast<size_t>(n) * C + c) * HW;
            float* dst = out.data() + (static_cast<size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) dst[i] = src[i] + b;
        }
    }
    check_finite("add_channel_vec", out);
    if (tape && any_tracked({&x, &v})) {
        tape->track(out);
        Tensor xi = x, vi = v, y = out;
        tape->record("add_channel_vec", {xi, vi}, [xi, vi, y, N, C, HW]() mutable {
            if (xi.tracked()) {
                float* gx = xi.grad();
                const float* gy = y.grad();
                for (int64_t i = 0; i < y.size(); ++i) gx[i] += gy[i];
            }
            if (vi.tracked()) {
                float* gv = vi.grad();
                for (int n = 0; n < N; ++n) {
                    for (int c = 0; c < C; ++c) {
                        const float* gy = y.grad() + (static_cast<size_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int i = 0; i < HW; ++i) acc += gy[i];
                        gv[static_cast<size_t>(n) * C + c] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

Tensor film(Tape* tape, const Tensor& x, const Tensor& scale_in, const Tensor& shift) {
    if (x.ndim() != 4 || scale_in.ndim() != 2 || shift.ndim() != 2 ||
        scale_in.dim(0) != x.dim(0) || scale_in.dim(1) != x.dim(1) ||
        shift.shape() != scale_in.shape()) {
        throw DimensionError("film: input " + shape_str(x.shape()) + " vs scale " +
                             shape_str(scale_in.shape()) + " vs shift " + shape_str(shift.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const size_t nc = static_cast<size_t>(n) * C + c;
            const float s = 1.0f + scale_in.data()[nc];
            const float t = shift.data()[nc];
            const float* src = x.data() + nc * HW;
            float* dst = out.data() + nc * HW;
            for (int i = 0; i < HW; ++i) dst[i] = src[i] * s + t;
        }
    }
    check_finite("film", out);
    if (tape && any_tracked({&x, &scale_in, &shift})) {
        tape->track(out);
        Tensor xi = x, si = scale_in, ti = shift, y = out;
        tape->record("film", {xi, si, ti}, [xi, si, ti, y, N, C, HW]() mutable {
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const size_t nc = static_cast<size_t>(n) * C + c;
                    const float* gy = y.grad() + nc * HW;
                    if (xi.tracked()) {
                        const float s = 1.0f + si.data()[nc];
                        float* gx = xi.grad() + nc * HW;
                        for (int i = 0; i < HW; ++i) gx[i] += gy[i] * s;
                    }
                    if (si.tracked()) {
                        const float* xv = xi.data() + nc * HW;
                        double acc = 0.0;
                        for (int i = 0; i < HW; ++i) acc += static_cast<double>(gy[i]) * xv[i];
                        si.grad()[nc] += static_cast<float>(acc);
                    }
                    if (ti.tracked()) {
                        double acc = 0.0;
                        for (int i = 0; i < HW; ++i) acc += gy[i];
                        ti.grad()[nc] += static_cast<float>(acc);
                    }
                }
            }
        });
    }
    return out;
}

Tensor group_norm(Tape* tape, const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (x.ndim() != 4) {
        throw DimensionError("group_norm: expected 4-d input, got " + shape_str(x.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (groups < 1 || C % groups != 0) {
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    }
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C) {
        throw DimensionError("group_norm: affine params " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " must be [" + std::to_string(C) + "]");
    }
    const int cpg = C / groups;
    const int64_t m = static_cast<int64_t>(cpg) * HW;
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const float* src = x.data() + (static_cast<size_t>(n) * C + static_cast<size_t>(g) * cpg) * HW;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += src[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double inv = 1.0 / std::sqrt(var + eps);
            float* dst = out.data() + (static_cast<size_t>(n) * C + static_cast<size_t>(g) * cpg) * HW;
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const float gm = gamma.data()[c], bt = beta.data()[c];
                for (int i = 0; i < HW; ++i) {
                    const int64_t idx = static_cast<int64_t>(cc) * HW + i;
                    dst[idx] = static_cast<float>((src[idx] - mean) * inv) * gm + bt;
                }
            }
        }
    }
    check_finite("group_norm", out);
    if (tape && any_tracked({&x, &gamma, &beta})) {
        tape->track(out);
        Tensor xi = x, gi = gamma, bi = beta, y = out;
        tape->record("group_norm", {xi, gi, bi}, [xi, gi, bi, y, N, C, HW, cpg, groups, eps, m]() mutable {
            std::vector<float> xhat(static_cast<size_t>(m));
            for (int n = 0; n < N; ++n) {
                for (int g = 0; g < groups; ++g) {
                    const size_t base = (static_cast<size_t>(n) * C + static_cast<size_t>(g) * cpg) *
                                        static_cast<size_t>(HW);
                    const float* src = xi.data() + base;
                    const float* gy = y.grad() + base;
                    double mean = 0.0;
                    for (int64_t i = 0; i < m; ++i) mean += src[i];
                    mean /= static_cast<double>(m);
                    double var = 0.0;
                    for (int64_t i = 0; i < m; ++i) {
                        const double d = src[i] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(m);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    for (int64_t i = 0; i < m; ++i) {
                        xhat[static_cast<size_t>(i)] = static_cast<float>((src[i] - mean) * inv);
                    }
                    if (gi.tracked() || bi.tracked()) {
                        for (int cc = 0; cc < cpg; ++cc) {
                            const int c = g * cpg + cc;
                            double dg = 0.0, db = 0.0;
                            for (int i = 0; i < HW; ++i) {
                                const int64_t idx = static_cast<int64_t>(cc) * HW + i;
                                dg += static_cast<double>(gy[idx]) * xhat[static_cast<size_t>(idx)];
                                db += gy[idx];
                            }
                            if (gi.tracked()) gi.grad()[c] += static_cast<float>(dg);
                            if (bi.tracked()) bi.grad()[c] += static_cast<float>(db);
                        }
                    }
                    if (xi.tracked()) {
                        // t = gy * gamma; gx = inv * (t - mean(t) - xhat * mean(t*xhat))
                        double tmean = 0.0, txmean = 0.0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const float gm = gi.data()[g * cpg + cc];
                            for (int i = 0; i < HW; ++i) {
                                const int64_t idx = static_cast<int64_t>(cc) * HW + i;
                                const double t = static_cast<double>(gy[idx]) * gm;
                                tmean += t;
                                txmean += t * xhat[static_cast<size_t>(idx)];
                            }
                        }
                        tmean /= static_cast<double>(m);
                        txmean /= static_cast<double>(m);
                        float* gx = xi.grad() + base;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const float gm = gi.data()[g * cpg + cc];
                            for (int i = 0; i < HW; ++i) {
                                const int64_t idx = static_cast<int64_t>(cc) * HW + i;
                                const double t = static_cast<double>(gy[idx]) * gm;
                                gx[idx] += static_cast<float>(
                                    inv * (t - tmean - xhat[static_cast<size_t>(idx)] * txmean));
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor silu(Tape* tape, const Tensor& x) {
    Tensor out(x.shape());
    const float* src = x.data();
    float* dst = out.data();
    for (int64_t i = 0; i < x.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-src[i]));
        dst[i] = src[i] * s;
    }
    check_finite("silu", out);
    if (tape && x.tracked()) {
        tape->track(out);
        Tensor xi = x, y = out;
        tape->record("silu", {xi}, [xi, y]() mutable {
            const float* src = xi.data();
            const float* gy = y.grad();
            float* gx = xi.grad();
            for (int64_t i = 0; i < xi.size(); ++i) {
                const float s = 1.0f / (1.0f + std::exp(-src[i]));
                gx[i] += gy[i] * s * (1.0f + src[i] * (1.0f - s));
            }
        });
    }
    return out;
}

Tensor linear(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 2 || weight.ndim() != 2 || bias.ndim() != 1 ||
        input.dim(1) != weight.dim(0) || bias.dim(0) != weight.dim(1)) {
        throw DimensionError("linear: input " + shape_str(input.shape()) + " weight " +
                             shape_str(weight.shape()) + " bias " + shape_str(bias.shape()));
    }
    const int N = input.dim(0), F = input.dim(1), G = weight.dim(1);
    Tensor out(Shape{N, G});
    for (int n = 0; n < N; ++n) {
        float* dst = out.data() + static_cast<size_t>(n) * G;
        for (int g = 0; g < G; ++g) dst[g] = bias.data()[g];
    }
    gemm_nn(N, G, F, input.data(), weight.data(), out.data());
    check_finite("linear", out);
    if (tape && any_tracked({&input, &weight, &bias})) {
        tape->track(out);
        Tensor xi = input, wi = weight, bi = bias, y = out;
        tape->record("linear", {xi, wi, bi}, [xi, wi, bi, y, N, F, G]() mutable {
            const float* gy = y.grad();
            if (xi.tracked()) gemm_nt(N, F, G, gy, wi.data(), xi.grad());
            if (wi.tracked()) gemm_tn(F, G, N, xi.data(), gy, wi.grad());
            if (bi.tracked()) {
                float* gb = bi.grad();
                for (int n = 0; n < N; ++n) {
                    const float* row = gy + static_cast<size_t>(n) * G;
                    for (int g = 0; g < G; ++g) gb[g] += row[g];
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest2(Tape* tape, const Tensor& x) {
    if (x.ndim() != 4) {
        throw DimensionError("upsample_nearest2: expected 4-d input, got " + shape_str(x.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out(Shape{N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x.data() + static_cast<size_t>(nc) * H * W;
        float* dst = out.data() + static_cast<size_t>(nc) * 4 * H * W;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                const float v = src[static_cast<size_t>(i) * W + j];
                float* d0 = dst + (static_cast<size_t>(2 * i) * 2 * W + 2 * j);
                d0[0] = v;
                d0[1] = v;
                d0[2 * W] = v;
                d0[2 * W + 1] = v;
            }
        }
    }
    if (tape && x.tracked()) {
        tape->track(out);
        Tensor xi = x, y = out;
        tape->record("upsample_nearest2", {xi}, [xi, y, N, C, H, W]() mutable {
            for (int nc = 0; nc < N * C; ++nc) {
                float* gx = xi.grad() + static_cast<size_t>(nc) * H * W;
                const float* gy = y.grad() + static_cast<size_t>(nc) * 4 * H * W;
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        const float* s0 = gy + (static_cast<size_t>(2 * i) * 2 * W + 2 * j);
                        gx[static_cast<size_t>(i) * W + j] +=
                            s0[0] + s0[1] + s0[2 * W] + s0[2 * W + 1];
                    }
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(Tape* tape, const Tensor& x) {
    if (x.ndim() != 4) {
        throw DimensionError("global_avg_pool: expected 4-d input, got " + shape_str(x.shape()));
    }
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(Shape{N, C});
    for (int nc = 0; nc < N * C; ++nc) {
        const float* src = x.data() + static_cast<size_t>(nc) * HW;
        double acc = 0.0;
        for (int i = 0; i < HW; ++i) acc += src[i];
        out.data()[nc] = static_cast<float>(acc / HW);
    }
    check_finite("global_avg_pool", out);
    if (tape && x.tracked()) {
        tape->track(out);
        Tensor xi = x, y = out;
        tape->record("global_avg_pool", {xi}, [xi, y, N, C, HW]() mutable {
            for (int nc = 0; nc < N * C; ++nc) {
                const float g = y.grad()[nc] / static_cast<float>(HW);
                float* gx = xi.grad() + static_cast<size_t>(nc) * HW;
                for (int i = 0; i < HW; ++i) gx[i] += g;
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(Tape* tape, const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                          Bwd bwd) {
    require_same_shape(name, a, b);
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = fwd(pa[i], pb[i]);
    check_finite(name, out);
    if (tape && any_tracked({&a, &b})) {
        tape->track(out);
        Tensor ai = a, bi = b, y = out;
        tape->record(name, {ai, bi}, [ai, bi, y, bwd]() mutable {
            const float* gy = y.grad();
            const float* pa = ai.data();
            const float* pb = bi.data();
            float* ga = ai.tracked() ? ai.grad() : nullptr;
            float* gb = bi.tracked() ? bi.grad() : nullptr;
            for (int64_t i = 0; i < ai.size(); ++i) bwd(gy[i], pa[i], pb[i], ga ? ga + i : nullptr,
                                                        gb ? gb + i : nullptr);
        });
    }
    return out;
}

} // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, "add", a, b, [](float x, float y) { return x + y; },
        [](float g, float, float, float* ga, float* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, "sub", a, b, [](float x, float y) { return x - y; },
        [](float g, float, float, float* ga, float* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, "mul", a, b, [](float x, float y) { return x * y; },
        [](float g, float x, float y, float* ga, float* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
    Tensor out(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    const float sf = static_cast<float>(s);
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * sf;
    check_finite("scale", out);
    if (tape && a.tracked()) {
        tape->track(out);
        Tensor ai = a, y = out;
        tape->record("scale", {ai}, [ai, y, sf]() mutable {
            const float* gy = y.grad();
            float* ga = ai.grad();
            for (int64_t i = 0; i < ai.size(); ++i) ga[i] += gy[i] * sf;
        });
    }
    return out;
}

Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
    Tensor out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
    for (int n = 0; n < N; ++n) {
        std::memcpy(out.data() + static_cast<size_t>(n) * (Ca + Cb) * HW,
                    a.data() + static_cast<size_t>(n) * Ca * HW,
                    sizeof(float) * static_cast<size_t>(Ca) * HW);
        std::memcpy(out.data() + (static_cast<size_t>(n) * (Ca + Cb) + Ca) * HW,
                    b.data() + static_cast<size_t>(n) * Cb * HW,
                    sizeof(float) * static_cast<size_t>(Cb) * HW);
    }
    if (tape && any_tracked({&a, &b})) {
        tape->track(out);
        Tensor ai = a, bi = b, y = out;
        tape->record("concat_channels", {ai, bi}, [ai, bi, y, N, Ca, Cb, HW]() mutable {
            for (int n = 0; n < N; ++n) {
                const float* gy = y.grad() + static_cast<size_t>(n) * (Ca + Cb) * HW;
                if (ai.tracked()) {
                    float* ga = ai.grad() + static_cast<size_t>(n) * Ca * HW;
                    for (int64_t i = 0; i < static_cast<int64_t>(Ca) * HW; ++i) ga[i] += gy[i];
                }
                if (bi.tracked()) {
                    float* gb = bi.grad() + static_cast<size_t>(n) * Cb * HW;
                    const float* gyb = gy + static_cast<size_t>(Ca) * HW;
                    for (int64_t i = 0; i < static_cast<int64_t>(Cb) * HW; ++i) gb[i] += gyb[i];
                }
            }
        });
    }
    return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
    double acc = 0.0;
    const float* p = x.data();
    for (int64_t i = 0; i < x.size(); ++i) acc += p[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite("sum_all", out);
    if (tape && x.tracked()) {
        tape->track(out);
        Tensor xi = x, y = out;
        tape->record("sum_all", {xi}, [xi, y]() mutable {
            const float g = y.grad()[0];
            float* gx = xi.grad();
            for (int64_t i = 0; i < xi.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
    double acc = 0.0;
    const float* p = x.data();
    for (int64_t i = 0; i < x.size(); ++i) acc += p[i];
    const double inv = 1.0 / static_cast<double>(x.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc * inv));
    check_finite("mean_all", out);
    if (tape && x.tracked()) {
        tape->track(out);
        Tensor xi = x, y = out;
        tape->record("mean_all", {xi}, [xi, y, inv]() mutable {
            const float g = y.grad()[0] * static_cast<float>(inv);
            float* gx = xi.grad();
            for (int64_t i = 0; i < xi.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mse(Tape* tape, const Tensor& pred, const Tensor& target) {
    require_same_shape("mse", pred, target);
    double acc = 0.0;
    const float* pa = pred.data();
    const float* pb = target.data();
    for (int64_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pa[i]) - pb[i];
        acc += d * d;
    }
    const double inv = 1.0 / static_cast<double>(pred.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc * inv));
    check_finite("mse", out);
    if (tape && any_tracked({&pred, &target})) {
        tape->track(out);
        Tensor ai = pred, bi = target, y = out;
        tape->record("mse", {ai, bi}, [ai, bi, y, inv]() mutable {
            const float g = y.grad()[0] * static_cast<float>(2.0 * inv);
            const float* pa = ai.data();
            const float* pb = bi.data();
            float* ga = ai.tracked() ? ai.grad() : nullptr;
            float* gb = bi.tracked() ? bi.grad() : nullptr;
            for (int64_t i = 0; i < ai.size(); ++i) {
                const float d = pa[i] - pb[i];
                if (ga) ga[i] += g * d;
                if (gb) gb[i] -= g * d;
            }
        });
    }
    return out;
}

// --- Adam ---------------------------------------------------------------------

void AdamState::init(const std::vector<Tensor*>& params, AdamConfig c) {
    cfg = c;
    step = 0;
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
        m.emplace_back(static_cast<size_t>(p->size()), 0.0f);
        v.emplace_back(static_cast<size_t>(p->size()), 0.0f);
    }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
    if (params.size() != state.m.size()) {
        throw DimensionError("adam_step: state holds " + std::to_string(state.m.size()) +
                             " buffers for " + std::to_string(params.size()) + " params");
    }
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (state.m[i].size() != static_cast<size_t>(p.size())) {
            throw DimensionError("adam_step: param " + std::to_string(i) + " shape changed");
        }
        const float* g = p.has_grad() ? p.grad() : nullptr;
        float* pd = p.data();
        float* mi = state.m[i].data();
        float* vi = state.v[i].data();
        for (int64_t j = 0; j < p.size(); ++j) {
            const double gj = g ? static_cast<double>(g[j]) : 0.0;
            const double mj = b1 * mi[j] + (1.0 - b1) * gj;
            const double vj = b2 * vi[j] + (1.0 - b2) * gj * gj;
            mi[j] = static_cast<float>(mj);
            vi[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            pd[j] = static_cast<float>(pd[j] - state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps));
        }
    }
}

} // namespace normdae::ag
