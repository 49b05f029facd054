#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "tessflow/rng.hpp"

namespace tessflow::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
};

// Dense f64 tensor with value semantics over a shared immutable buffer.
// Mutation is reserved for parameter updates (raw_data) between passes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t extent(int64_t axis) const { return impl_->shape[static_cast<size_t>(axis)]; }

    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& raw_data() { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    // Gradient buffer; zeros if backward never touched this tensor.
    const std::vector<double>& grad() const;
    void zero_grad();

    double value() const; // scalar tensors only
    double at(std::initializer_list<int64_t> index) const;

    Tensor detach() const; // shares data, drops grad tracking

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Construction makes it the active tape for the thread;
// primitives record backward steps in forward order, and backward() replays
// them reversed (creation order is a topological order of the graph).
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(root)/d(root) = 1 and propagates to every recorded input.
    // root must be scalar. A second call on the same tape throws.
    void backward(const Tensor& root);

    size_t num_ops() const { return steps_.size(); }

    static Tape* active();
    static void record(std::function<void()> step);

private:
    std::vector<std::function<void()>> steps_;
    bool spent_ = false;
    Tape* prev_ = nullptr;
};

void ensure_grad(TensorImpl* t);

// ---- elementwise (right-aligned broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- contractions ----
Tensor matmul(const Tensor& a, const Tensor& b); // [M,K] x [K,N]
// x: [Cin,X,Y,Z], w: [Cout,Cin,kx,ky,kz], zero padding, per-axis stride/pad
Tensor conv3d(const Tensor& x, const Tensor& w,
              const std::array<int64_t, 3>& stride = {1, 1, 1},
              const std::array<int64_t, 3>& pad = {0, 0, 0});

// ---- reductions ----
Tensor sum(const Tensor& x);                       // scalar
Tensor sum_axis(const Tensor& x, int64_t axis);    // keeps the axis with extent 1
Tensor max_axis(const Tensor& x, int64_t axis);    // keeps the axis; grad to first argmax
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int64_t axis);

// ---- structure ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor slice(const Tensor& x, const std::vector<int64_t>& offsets, const Shape& extents);
Tensor pad(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& lo_hi); // zero fill
// [C,X,Y,Z] -> [C, f*X, f*Y, f*Z]
Tensor upsample_nearest3(const Tensor& x, int64_t factor);

// ---- sampling ----
// volume [C,X,Y,Z], coords [3,N] in bin units; border clamp, differentiable
// in both arguments (coordinate gradient is zero where the clamp saturates).
Tensor sample_points(const Tensor& volume, const Tensor& coords);
// volume [C,R,A,E], coords [3,R,A,E] with matching spatial extents
Tensor trilinear_sample(const Tensor& volume, const Tensor& coords);

// ---- softmax family ----
Tensor softmax(const Tensor& x, int64_t axis); // max-subtraction stabilized
// Forward: one-hot of argmax along axis. Backward: identity (straight-through).
Tensor st_onehot(const Tensor& x, int64_t axis);
Tensor gumbel_softmax(const Tensor& x, int64_t axis, double temperature, bool hard, uint64_t seed);

// ---- normalization ----
// Normalizes along `axis`; gamma/beta are 1-D with that axis extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int64_t axis, double eps = 1e-5);

// ---- operators / scalar conveniences ----
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

} // namespace tessflow::ad
