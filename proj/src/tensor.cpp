#include "tessflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tessflow::ad {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int64_t d = static_cast<int64_t>(shape.size()) - 2; d >= 0; --d)
        strides[d] = strides[d + 1] * shape[d + 1];
    return strides;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

static void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    check(numel(shape) == static_cast<int64_t>(data.size()),
          "tensor: data length does not match shape");
    for (int64_t e : shape) check(e > 0, "tensor: extents must be positive");
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<double>(static_cast<size_t>(numel(shape)), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(static_cast<size_t>(numel(shape)), value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(numel(shape)));
    for (double& v : d) v = rng.normal(0.0, stddev);
    return Tensor(shape, std::move(d), requires_grad);
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(numel(shape)));
    for (double& v : d) v = rng.uniform(lo, hi);
    return Tensor(shape, std::move(d), requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

double Tensor::value() const {
    check(size() == 1, "value(): tensor is not scalar");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    check(static_cast<int64_t>(index.size()) == rank(), "at(): wrong index rank");
    auto strides = row_major_strides(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : index) off += i * strides[d++];
    return impl_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detach() const {
    return Tensor(impl_->shape, impl_->data, false);
}

void ensure_grad(TensorImpl* t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
}

// ---------------------------------------------------------------- Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> step) {
    if (g_active_tape) g_active_tape->steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& root) {
    if (spent_) throw std::logic_error("tape: backward called twice without a new forward");
    if (root.size() != 1) throw std::invalid_argument("tape: backward root must be scalar");
    spent_ = true;
    ensure_grad(root.impl());
    root.impl()->grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
}

// ------------------------------------------------------- broadcasting

namespace {

struct BroadcastPlan {
    Shape out_shape;
    std::vector<int64_t> a_strides;
    std::vector<int64_t> b_strides;
    int64_t n = 0;
};

BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    size_t rank = std::max(a.size(), b.size());
    plan.out_shape.resize(rank);
    Shape ae(rank, 1), be(rank, 1);
    std::copy(a.begin(), a.end(), ae.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), be.begin() + (rank - b.size()));
    for (size_t d = 0; d < rank; ++d) {
        check(ae[d] == be[d] || ae[d] == 1 || be[d] == 1,
              "broadcast: incompatible shapes");
        plan.out_shape[d] = std::max(ae[d], be[d]);
    }
    auto astr = row_major_strides(ae);
    auto bstr = row_major_strides(be);
    plan.a_strides.resize(rank);
    plan.b_strides.resize(rank);
    for (size_t d = 0; d < rank; ++d) {
        plan.a_strides[d] = (ae[d] == 1) ? 0 : astr[d];
        plan.b_strides[d] = (be[d] == 1) ? 0 : bstr[d];
    }
    plan.n = numel(plan.out_shape);
    return plan;
}

// Visits every output element with the matching input offsets.
template <class Fn>
void broadcast_for_each(const BroadcastPlan& plan, Fn&& fn) {
    const int64_t rank = static_cast<int64_t>(plan.out_shape.size());
    if (rank == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t aoff = 0, boff = 0;
    for (int64_t i = 0; i < plan.n; ++i) {
        fn(i, aoff, boff);
        for (int64_t d = rank - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            aoff += plan.a_strides[static_cast<size_t>(d)];
            boff += plan.b_strides[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < plan.out_shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            aoff -= plan.a_strides[static_cast<size_t>(d)] * plan.out_shape[static_cast<size_t>(d)];
            boff -= plan.b_strides[static_cast<size_t>(d)] * plan.out_shape[static_cast<size_t>(d)];
        }
    }
}

using BinFwd = double (*)(double, double);
using BinGrad = double (*)(double g, double av, double bv, double yv);

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinFwd fwd,
                          BinGrad dfda, BinGrad dfdb) {
    const auto& ad = a.data();
    const auto& bd = b.data();
    Tensor out;
    bool fast_same = same_shape(a.shape(), b.shape());
    bool fast_bscalar = (b.size() == 1);
    bool fast_ascalar = (a.size() == 1) && !fast_same;
    BroadcastPlan plan;
    if (fast_same) {
        std::vector<double> od(ad.size());
        for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i], bd[i]);
        out = Tensor(a.shape(), std::move(od));
    } else if (fast_bscalar) {
        std::vector<double> od(ad.size());
        const double bv = bd[0];
        for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i], bv);
        out = Tensor(a.shape(), std::move(od));
    } else if (fast_ascalar) {
        std::vector<double> od(bd.size());
        const double av = ad[0];
        for (size_t i = 0; i < bd.size(); ++i) od[i] = fwd(av, bd[i]);
        out = Tensor(b.shape(), std::move(od));
    } else {
        plan = make_broadcast_plan(a.shape(), b.shape());
        std::vector<double> od(static_cast<size_t>(plan.n));
        broadcast_for_each(plan, [&](int64_t i, int64_t ao, int64_t bo) {
            od[static_cast<size_t>(i)] = fwd(ad[static_cast<size_t>(ao)], bd[static_cast<size_t>(bo)]);
        });
        out = Tensor(plan.out_shape, std::move(od));
    }

    if (Tape::active() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr();
        auto bi = b.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            const auto& g = oi->grad;
            const auto& av = ai->data;
            const auto& bv = bi->data;
            const auto& yv = oi->data;
            bool ga = ai->requires_grad, gb = bi->requires_grad;
            if (ga) ensure_grad(ai.get());
            if (gb) ensure_grad(bi.get());
            if (fast_same) {
                for (size_t i = 0; i < g.size(); ++i) {
                    if (ga) ai->grad[i] += dfda(g[i], av[i], bv[i], yv[i]);
                    if (gb) bi->grad[i] += dfdb(g[i], av[i], bv[i], yv[i]);
                }
            } else if (fast_bscalar) {
                for (size_t i = 0; i < g.size(); ++i) {
                    if (ga) ai->grad[i] += dfda(g[i], av[i], bv[0], yv[i]);
                    if (gb) bi->grad[0] += dfdb(g[i], av[i], bv[0], yv[i]);
                }
            } else if (fast_ascalar) {
                for (size_t i = 0; i < g.size(); ++i) {
                    if (ga) ai->grad[0] += dfda(g[i], av[0], bv[i], yv[i]);
                    if (gb) bi->grad[i] += dfdb(g[i], av[0], bv[i], yv[i]);
                }
            } else {
                broadcast_for_each(plan, [&](int64_t i, int64_t ao, int64_t bo) {
                    size_t si = static_cast<size_t>(i), sa = static_cast<size_t>(ao), sb = static_cast<size_t>(bo);
                    if (ga) ai->grad[sa] += dfda(g[si], av[sa], bv[sb], yv[si]);
                    if (gb) bi->grad[sb] += dfdb(g[si], av[sa], bv[sb], yv[si]);
                });
            }
        });
    }
    return out;
}

using UnFwd = double (*)(double);
using UnGrad = double (*)(double g, double xv, double yv);

Tensor unary_elementwise(const Tensor& x, UnFwd fwd, UnGrad dfdx) {
    const auto& xd = x.data();
    std::vector<double> od(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
    Tensor out(x.shape(), std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(xi.get());
            const auto& g = oi->grad;
            for (size_t i = 0; i < g.size(); ++i)
                xi->grad[i] += dfdx(g[i], xi->data[i], oi->data[i]);
        });
    }
    return out;
}

} // namespace

// ------------------------------------------------------- elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x + y; },
        [](double g, double, double, double) { return g; },
        [](double g, double, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x - y; },
        [](double g, double, double, double) { return g; },
        [](double g, double, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x * y; },
        [](double g, double, double bv, double) { return g * bv; },
        [](double g, double av, double, double) { return g * av; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x / y; },
        [](double g, double, double bv, double) { return g / bv; },
        [](double g, double av, double bv, double) { return -g * av / (bv * bv); });
}

Tensor neg(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return -v; },
        [](double g, double, double) { return -g; });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::exp(v); },
        [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::log(v); },
        [](double g, double xv, double) { return g / xv; });
}

Tensor sqrt(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::sqrt(v); },
        [](double g, double, double y) { return 0.5 * g / y; });
}

Tensor abs(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return std::fabs(v); },
        [](double g, double xv, double) { return xv > 0.0 ? g : (xv < 0.0 ? -g : 0.0); });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double g, double xv, double) { return xv > 0.0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double g, double, double y) { return g * y * (1.0 - y); });
}

// ------------------------------------------------------- matmul / conv3d

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
    const int64_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    check(k == k2, "matmul: inner extents differ");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<double> od(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = ad[static_cast<size_t>(i * k + kk)];
            if (av == 0.0) continue;
            const double* brow = bd.data() + kk * n;
            double* orow = od.data() + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor out({m, n}, std::move(od));
    if (Tape::active() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr();
        auto bi = b.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            const auto& g = oi->grad;
            if (ai->requires_grad) {
                ensure_grad(ai.get());
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const double* grow = g.data() + i * n;
                        const double* brow = bi->data.data() + kk * n;
                        double acc = 0.0;
                        for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ai->grad[static_cast<size_t>(i * k + kk)] += acc;
                    }
            }
            if (bi->requires_grad) {
                ensure_grad(bi.get());
                for (int64_t kk = 0; kk < k; ++kk)
                    for (int64_t i = 0; i < m; ++i) {
                        const double av = ai->data[static_cast<size_t>(i * k + kk)];
                        if (av == 0.0) continue;
                        const double* grow = g.data() + i * n;
                        double* brow = bi->grad.data() + kk * n;
                        for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w,
              const std::array<int64_t, 3>& stride, const std::array<int64_t, 3>& pad) {
    check(x.rank() == 4, "conv3d: input must be [Cin,X,Y,Z]");
    check(w.rank() == 5, "conv3d: weight must be [Cout,Cin,kx,ky,kz]");
    const int64_t ci = x.extent(0), X = x.extent(1), Y = x.extent(2), Z = x.extent(3);
    const int64_t co = w.extent(0), kx = w.extent(2), ky = w.extent(3), kz = w.extent(4);
    check(w.extent(1) == ci, "conv3d: channel mismatch");
    const int64_t sx = stride[0], sy = stride[1], sz = stride[2];
    const int64_t px = pad[0], py = pad[1], pz = pad[2];
    const int64_t OX = (X + 2 * px - kx) / sx + 1;
    const int64_t OY = (Y + 2 * py - ky) / sy + 1;
    const int64_t OZ = (Z + 2 * pz - kz) / sz + 1;
    check(OX > 0 && OY > 0 && OZ > 0, "conv3d: kernel larger than padded input");

    const auto& xd = x.data();
    const auto& wd = w.data();
    std::vector<double> od(static_cast<size_t>(co * OX * OY * OZ), 0.0);

    for (int64_t c = 0; c < co; ++c) {
        for (int64_t ic = 0; ic < ci; ++ic) {
            const double* wbase = wd.data() + ((c * ci + ic) * kx) * ky * kz;
            const double* xbase = xd.data() + ic * X * Y * Z;
            for (int64_t ox = 0; ox < OX; ++ox) {
                const int64_t ix0 = ox * sx - px;
                for (int64_t fx = std::max<int64_t>(0, -ix0);
                     fx < std::min(kx, X - ix0); ++fx) {
                    const int64_t ix = ix0 + fx;
                    for (int64_t oy = 0; oy < OY; ++oy) {
                        const int64_t iy0 = oy * sy - py;
                        for (int64_t fy = std::max<int64_t>(0, -iy0);
                             fy < std::min(ky, Y - iy0); ++fy) {
                            const int64_t iy = iy0 + fy;
                            const double* wrow = wbase + (fx * ky + fy) * kz;
                            const double* xrow = xbase + (ix * Y + iy) * Z;
                            double* orow = od.data() + ((c * OX + ox) * OY + oy) * OZ;
                            for (int64_t oz = 0; oz < OZ; ++oz) {
                                const int64_t iz0 = oz * sz - pz;
                                const int64_t f0 = std::max<int64_t>(0, -iz0);
                                const int64_t f1 = std::min(kz, Z - iz0);
                                double acc = 0.0;
                                for (int64_t fz = f0; fz < f1; ++fz)
                                    acc += wrow[fz] * xrow[iz0 + fz];
                                orow[oz] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor out({co, OX, OY, OZ}, std::move(od));

    if (Tape::active() && (x.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto wi = w.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            const auto& g = oi->grad;
            if (xi->requires_grad) {
                ensure_grad(xi.get());
                // scatter formulation: walk the forward loops, accumulate into input
                for (int64_t c = 0; c < co; ++c)
                    for (int64_t ic = 0; ic < ci; ++ic) {
                        const double* wbase = wi->data.data() + ((c * ci + ic) * kx) * ky * kz;
                        double* xgbase = xi->grad.data() + ic * X * Y * Z;
                        for (int64_t ox = 0; ox < OX; ++ox) {
                            const int64_t ix0 = ox * sx - px;
                            for (int64_t fx = std::max<int64_t>(0, -ix0); fx < std::min(kx, X - ix0); ++fx) {
                                const int64_t ix = ix0 + fx;
                                for (int64_t oy = 0; oy < OY; ++oy) {
                                    const int64_t iy0 = oy * sy - py;
                                    for (int64_t fy = std::max<int64_t>(0, -iy0); fy < std::min(ky, Y - iy0); ++fy) {
                                        const int64_t iy = iy0 + fy;
                                        const double* wrow = wbase + (fx * ky + fy) * kz;
                                        double* xgrow = xgbase + (ix * Y + iy) * Z;
                                        const double* grow = g.data() + ((c * OX + ox) * OY + oy) * OZ;
                                        for (int64_t oz = 0; oz < OZ; ++oz) {
                                            const int64_t iz0 = oz * sz - pz;
                                            const int64_t f0 = std::max<int64_t>(0, -iz0);
                                            const int64_t f1 = std::min(kz, Z - iz0);
                                            const double gv = grow[oz];
                                            if (gv == 0.0) continue;
                                            for (int64_t fz = f0; fz < f1; ++fz)
                                                xgrow[iz0 + fz] += wrow[fz] * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
            }
            if (wi->requires_grad) {
                ensure_grad(wi.get());
                for (int64_t c = 0; c < co; ++c)
                    for (int64_t ic = 0; ic < ci; ++ic) {
                        double* wgbase = wi->grad.data() + ((c * ci + ic) * kx) * ky * kz;
                        const double* xbase = xi->data.data() + ic * X * Y * Z;
                        for (int64_t ox = 0; ox < OX; ++ox) {
                            const int64_t ix0 = ox * sx - px;
                            for (int64_t fx = std::max<int64_t>(0, -ix0); fx < std::min(kx, X - ix0); ++fx) {
                                const int64_t ix = ix0 + fx;
                                for (int64_t oy = 0; oy < OY; ++oy) {
                                    const int64_t iy0 = oy * sy - py;
                                    for (int64_t fy = std::max<int64_t>(0, -iy0); fy < std::min(ky, Y - iy0); ++fy) {
                                        const int64_t iy = iy0 + fy;
                                        double* wgrow = wgbase + (fx * ky + fy) * kz;
                                        const double* xrow = xbase + (ix * Y + iy) * Z;
                                        const double* grow = g.data() + ((c * OX + ox) * OY + oy) * OZ;
                                        for (int64_t oz = 0; oz < OZ; ++oz) {
                                            const int64_t iz0 = oz * sz - pz;
                                            const int64_t f0 = std::max<int64_t>(0, -iz0);
                                            const int64_t f1 = std::min(kz, Z - iz0);
                                            const double gv = grow[oz];
                                            if (gv == 0.0) continue;
                                            for (int64_t fz = f0; fz < f1; ++fz)
                                                wgrow[fz] += xrow[iz0 + fz] * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// ------------------------------------------------------- reductions

namespace {
struct AxisSplit {
    int64_t outer, n, inner;
};
AxisSplit split_axis(const Shape& s, int64_t axis) {
    check(axis >= 0 && axis < static_cast<int64_t>(s.size()), "axis out of range");
    AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
    for (int64_t d = 0; d < axis; ++d) sp.outer *= s[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < static_cast<int64_t>(s.size()); ++d) sp.inner *= s[static_cast<size_t>(d)];
    return sp;
}
} // namespace

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            const double g = oi->grad[0];
            for (double& v : xi->grad) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, int64_t axis) {
    auto sp = split_axis(x.shape(), axis);
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] = 1;
    std::vector<double> od(static_cast<size_t>(sp.outer * sp.inner), 0.0);
    const auto& xd = x.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.n; ++i) {
            const double* src = xd.data() + (o * sp.n + i) * sp.inner;
            double* dst = od.data() + o * sp.inner;
            for (int64_t j = 0; j < sp.inner; ++j) dst[j] += src[j];
        }
    Tensor out(oshape, std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.n; ++i) {
                    double* dst = xi->grad.data() + (o * sp.n + i) * sp.inner;
                    const double* src = oi->grad.data() + o * sp.inner;
                    for (int64_t j = 0; j < sp.inner; ++j) dst[j] += src[j];
                }
        });
    }
    return out;
}

Tensor mean_axis(const Tensor& x, int64_t axis) {
    return sum_axis(x, axis) * (1.0 / static_cast<double>(x.extent(axis)));
}

Tensor max_axis(const Tensor& x, int64_t axis) {
    auto sp = split_axis(x.shape(), axis);
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] = 1;
    std::vector<double> od(static_cast<size_t>(sp.outer * sp.inner));
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.outer * sp.inner), 0);
    const auto& xd = x.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < sp.inner; ++j) {
            double best = xd[static_cast<size_t>(o * sp.n * sp.inner + j)];
            int64_t bi = 0;
            for (int64_t i = 1; i < sp.n; ++i) {
                double v = xd[static_cast<size_t>((o * sp.n + i) * sp.inner + j)];
                if (v > best) {
                    best = v;
                    bi = i;
                }
            }
            od[static_cast<size_t>(o * sp.inner + j)] = best;
            (*arg)[static_cast<size_t>(o * sp.inner + j)] = bi;
        }
    Tensor out(oshape, std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t j = 0; j < sp.inner; ++j) {
                    int64_t i = (*arg)[static_cast<size_t>(o * sp.inner + j)];
                    xi->grad[static_cast<size_t>((o * sp.n + i) * sp.inner + j)] +=
                        oi->grad[static_cast<size_t>(o * sp.inner + j)];
                }
        });
    }
    return out;
}

// ------------------------------------------------------- structure ops

Tensor reshape(const Tensor& x, const Shape& shape) {
    check(numel(shape) == x.size(), "reshape: element count mismatch");
    Tensor out(shape, x.data());
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& perm) {
    check(static_cast<int64_t>(perm.size()) == x.rank(), "permute: rank mismatch");
    const auto& xs = x.shape();
    Shape os(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) os[d] = xs[static_cast<size_t>(perm[d])];
    auto xstr = row_major_strides(xs);
    std::vector<int64_t> src_strides(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) src_strides[d] = xstr[static_cast<size_t>(perm[d])];

    const int64_t n = x.size();
    const int64_t rank = x.rank();
    std::vector<double> od(static_cast<size_t>(n));
    std::vector<int64_t> idx(perm.size(), 0);
    const auto& xd = x.data();
    int64_t soff = 0;
    for (int64_t i = 0; i < n; ++i) {
        od[static_cast<size_t>(i)] = xd[static_cast<size_t>(soff)];
        for (int64_t d = rank - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            soff += src_strides[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            soff -= src_strides[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
        }
    }
    Tensor out(os, std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            std::vector<int64_t> ix(os.size(), 0);
            int64_t so = 0;
            for (int64_t i = 0; i < n; ++i) {
                xi->grad[static_cast<size_t>(so)] += oi->grad[static_cast<size_t>(i)];
                for (int64_t d = rank - 1; d >= 0; --d) {
                    ix[static_cast<size_t>(d)]++;
                    so += src_strides[static_cast<size_t>(d)];
                    if (ix[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
                    ix[static_cast<size_t>(d)] = 0;
                    so -= src_strides[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
                }
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
    check(!parts.empty(), "concat: no inputs");
    const auto& s0 = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        check(p.rank() == parts[0].rank(), "concat: rank mismatch");
        for (int64_t d = 0; d < p.rank(); ++d)
            if (d != axis) check(p.shape()[static_cast<size_t>(d)] == s0[static_cast<size_t>(d)], "concat: extent mismatch");
        total += p.extent(axis);
    }
    Shape os = s0;
    os[static_cast<size_t>(axis)] = total;
    auto sp0 = split_axis(os, axis);
    std::vector<double> od(static_cast<size_t>(numel(os)));
    int64_t at = 0;
    for (const auto& p : parts) {
        const int64_t pn = p.extent(axis);
        const auto& pd = p.data();
        for (int64_t o = 0; o < sp0.outer; ++o)
            for (int64_t i = 0; i < pn; ++i) {
                const double* src = pd.data() + (o * pn + i) * sp0.inner;
                double* dst = od.data() + (o * total + at + i) * sp0.inner;
                std::copy(src, src + sp0.inner, dst);
            }
        at += pn;
    }
    Tensor out(os, std::move(od));
    bool any_rg = false;
    for (const auto& p : parts) any_rg |= p.requires_grad();
    if (Tape::active() && any_rg) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl_ptr());
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            int64_t off = 0;
            for (const auto& pi : impls) {
                const int64_t pn = pi->shape[static_cast<size_t>(axis)];
                if (pi->requires_grad) {
                    ensure_grad(pi.get());
                    for (int64_t o = 0; o < sp0.outer; ++o)
                        for (int64_t i = 0; i < pn; ++i) {
                            const double* src = oi->grad.data() + (o * total + off + i) * sp0.inner;
                            double* dst = pi->grad.data() + (o * pn + i) * sp0.inner;
                            for (int64_t j = 0; j < sp0.inner; ++j) dst[j] += src[j];
                        }
                }
                off += pn;
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, const std::vector<int64_t>& offsets, const Shape& extents) {
    check(static_cast<int64_t>(offsets.size()) == x.rank() &&
              static_cast<int64_t>(extents.size()) == x.rank(),
          "slice: rank mismatch");
    for (int64_t d = 0; d < x.rank(); ++d)
        check(offsets[static_cast<size_t>(d)] >= 0 &&
                  offsets[static_cast<size_t>(d)] + extents[static_cast<size_t>(d)] <= x.extent(d),
              "slice: out of bounds");
    auto xstr = row_major_strides(x.shape());
    const int64_t rank = x.rank();
    const int64_t n = numel(extents);
    std::vector<double> od(static_cast<size_t>(n));
    const auto& xd = x.data();
    std::vector<int64_t> idx(extents.size(), 0);
    int64_t base = 0;
    for (int64_t d = 0; d < rank; ++d) base += offsets[static_cast<size_t>(d)] * xstr[static_cast<size_t>(d)];
    int64_t soff = base;
    for (int64_t i = 0; i < n; ++i) {
        od[static_cast<size_t>(i)] = xd[static_cast<size_t>(soff)];
        for (int64_t d = rank - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            soff += xstr[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < extents[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            soff -= xstr[static_cast<size_t>(d)] * extents[static_cast<size_t>(d)];
        }
    }
    Tensor out(extents, std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            std::vector<int64_t> ix(extents.size(), 0);
            int64_t so = base;
            for (int64_t i = 0; i < n; ++i) {
                xi->grad[static_cast<size_t>(so)] += oi->grad[static_cast<size_t>(i)];
                for (int64_t d = rank - 1; d >= 0; --d) {
                    ix[static_cast<size_t>(d)]++;
                    so += xstr[static_cast<size_t>(d)];
                    if (ix[static_cast<size_t>(d)] < extents[static_cast<size_t>(d)]) break;
                    ix[static_cast<size_t>(d)] = 0;
                    so -= xstr[static_cast<size_t>(d)] * extents[static_cast<size_t>(d)];
                }
            }
        });
    }
    return out;
}

Tensor pad(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& lo_hi) {
    check(static_cast<int64_t>(lo_hi.size()) == x.rank(), "pad: rank mismatch");
    Shape os = x.shape();
    for (int64_t d = 0; d < x.rank(); ++d) {
        check(lo_hi[static_cast<size_t>(d)].first >= 0 && lo_hi[static_cast<size_t>(d)].second >= 0,
              "pad: negative padding");
        os[static_cast<size_t>(d)] += lo_hi[static_cast<size_t>(d)].first + lo_hi[static_cast<size_t>(d)].second;
    }
    Tensor out = Tensor::zeros(os);
    auto ostr = row_major_strides(os);
    const int64_t rank = x.rank();
    const int64_t n = x.size();
    std::vector<int64_t> idx(os.size(), 0);
    int64_t base = 0;
    for (int64_t d = 0; d < rank; ++d) base += lo_hi[static_cast<size_t>(d)].first * ostr[static_cast<size_t>(d)];
    int64_t doff = base;
    const auto& xd = x.data();
    auto& od = out.raw_data();
    const auto& xs = x.shape();
    for (int64_t i = 0; i < n; ++i) {
        od[static_cast<size_t>(doff)] = xd[static_cast<size_t>(i)];
        for (int64_t d = rank - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            doff += ostr[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < xs[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            doff -= ostr[static_cast<size_t>(d)] * xs[static_cast<size_t>(d)];
        }
    }
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            std::vector<int64_t> ix(os.size(), 0);
            int64_t so = base;
            for (int64_t i = 0; i < n; ++i) {
                xi->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(so)];
                for (int64_t d = rank - 1; d >= 0; --d) {
                    ix[static_cast<size_t>(d)]++;
                    so += ostr[static_cast<size_t>(d)];
                    if (ix[static_cast<size_t>(d)] < xs[static_cast<size_t>(d)]) break;
                    ix[static_cast<size_t>(d)] = 0;
                    so -= ostr[static_cast<size_t>(d)] * xs[static_cast<size_t>(d)];
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest3(const Tensor& x, int64_t factor) {
    check(x.rank() == 4, "upsample_nearest3: input must be [C,X,Y,Z]");
    check(factor >= 1, "upsample_nearest3: factor must be >= 1");
    const int64_t C = x.extent(0), X = x.extent(1), Y = x.extent(2), Z = x.extent(3);
    const int64_t OX = X * factor, OY = Y * factor, OZ = Z * factor;
    std::vector<double> od(static_cast<size_t>(C * OX * OY * OZ));
    const auto& xd = x.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ox = 0; ox < OX; ++ox)
            for (int64_t oy = 0; oy < OY; ++oy) {
                const double* srow = xd.data() + ((c * X + ox / factor) * Y + oy / factor) * Z;
                double* drow = od.data() + ((c * OX + ox) * OY + oy) * OZ;
                for (int64_t oz = 0; oz < OZ; ++oz) drow[oz] = srow[oz / factor];
            }
    Tensor out({C, OX, OY, OZ}, std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            for (int64_t c = 0; c < C; ++c)
                for (int64_t ox = 0; ox < OX; ++ox)
                    for (int64_t oy = 0; oy < OY; ++oy) {
                        double* drow = xi->grad.data() + ((c * X + ox / factor) * Y + oy / factor) * Z;
                        const double* srow = oi->grad.data() + ((c * OX + ox) * OY + oy) * OZ;
                        for (int64_t oz = 0; oz < OZ; ++oz) drow[oz / factor] += srow[oz];
                    }
        });
    }
    return out;
}

// ------------------------------------------------------- sampling

namespace {
struct LerpAxis {
    int64_t i0;
    double frac;
    bool clamped;
};
inline LerpAxis lerp_axis(double c, int64_t extent) {
    LerpAxis r{};
    r.clamped = (c < 0.0) || (c > static_cast<double>(extent - 1));
    double cc = std::min(std::max(c, 0.0), static_cast<double>(extent - 1));
    if (extent == 1) {
        r.i0 = 0;
        r.frac = 0.0;
        r.clamped = true; // constant along this axis: no coordinate gradient
        return r;
    }
    int64_t i0 = static_cast<int64_t>(std::floor(cc));
    if (i0 > extent - 2) i0 = extent - 2;
    r.i0 = i0;
    r.frac = cc - static_cast<double>(i0);
    return r;
}
} // namespace

Tensor sample_points(const Tensor& volume, const Tensor& coords) {
    check(volume.rank() == 4, "sample_points: volume must be [C,X,Y,Z]");
    check(coords.rank() == 2 && coords.extent(0) == 3, "sample_points: coords must be [3,N]");
    const int64_t C = volume.extent(0), X = volume.extent(1), Y = volume.extent(2), Z = volume.extent(3);
    const int64_t N = coords.extent(1);
    const auto& vd = volume.data();
    const auto& cd = coords.data();
    for (double c : cd) check(std::isfinite(c), "sample_points: coords must be finite");

    std::vector<double> od(static_cast<size_t>(C * N));
    const int64_t sx = Y * Z, sy = Z;
    for (int64_t n = 0; n < N; ++n) {
        const LerpAxis ax = lerp_axis(cd[static_cast<size_t>(n)], X);
        const LerpAxis ay = lerp_axis(cd[static_cast<size_t>(N + n)], Y);
        const LerpAxis az = lerp_axis(cd[static_cast<size_t>(2 * N + n)], Z);
        const double wx[2] = {1.0 - ax.frac, ax.frac};
        const double wy[2] = {1.0 - ay.frac, ay.frac};
        const double wz[2] = {1.0 - az.frac, az.frac};
        const int64_t x1 = (X > 1) ? 1 : 0, y1 = (Y > 1) ? 1 : 0, z1 = (Z > 1) ? 1 : 0;
        for (int64_t c = 0; c < C; ++c) {
            const double* base = vd.data() + c * X * Y * Z + ax.i0 * sx + ay.i0 * sy + az.i0;
            double acc = 0.0;
            for (int dx = 0; dx <= 1; ++dx)
                for (int dy = 0; dy <= 1; ++dy)
                    for (int dz = 0; dz <= 1; ++dz) {
                        double w = wx[dx] * wy[dy] * wz[dz];
                        if (w == 0.0) continue;
                        acc += w * base[dx * x1 * sx + dy * y1 * sy + dz * z1];
                    }
            od[static_cast<size_t>(c * N + n)] = acc;
        }
    }
    Tensor out({C, N}, std::move(od));

    if (Tape::active() && (volume.requires_grad() || coords.requires_grad())) {
        out.set_requires_grad(true);
        auto vi = volume.impl_ptr();
        auto ci = coords.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            const auto& g = oi->grad;
            const bool gv = vi->requires_grad, gc = ci->requires_grad;
            if (gv) ensure_grad(vi.get());
            if (gc) ensure_grad(ci.get());
            for (int64_t n = 0; n < N; ++n) {
                const LerpAxis ax = lerp_axis(ci->data[static_cast<size_t>(n)], X);
                const LerpAxis ay = lerp_axis(ci->data[static_cast<size_t>(N + n)], Y);
                const LerpAxis az = lerp_axis(ci->data[static_cast<size_t>(2 * N + n)], Z);
                const double wx[2] = {1.0 - ax.frac, ax.frac};
                const double wy[2] = {1.0 - ay.frac, ay.frac};
                const double wz[2] = {1.0 - az.frac, az.frac};
                const double dwx[2] = {-1.0, 1.0};
                const int64_t x1 = (X > 1) ? 1 : 0, y1 = (Y > 1) ? 1 : 0, z1 = (Z > 1) ? 1 : 0;
                double gx = 0.0, gy = 0.0, gz = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    const double gO = g[static_cast<size_t>(c * N + n)];
                    if (gO == 0.0) continue;
                    const int64_t cbase = c * X * Y * Z + ax.i0 * sx + ay.i0 * sy + az.i0;
                    for (int dx = 0; dx <= 1; ++dx)
                        for (int dy = 0; dy <= 1; ++dy)
                            for (int dz = 0; dz <= 1; ++dz) {
                                const int64_t off = cbase + dx * x1 * sx + dy * y1 * sy + dz * z1;
                                const double v = vi->data[static_cast<size_t>(off)];
                                if (gv) vi->grad[static_cast<size_t>(off)] += gO * wx[dx] * wy[dy] * wz[dz];
                                if (gc) {
                                    gx += gO * dwx[dx] * wy[dy] * wz[dz] * v;
                                    gy += gO * wx[dx] * dwx[dy] * wz[dz] * v;
                                    gz += gO * wx[dx] * wy[dy] * dwx[dz] * v;
                                }
                            }
                }
                if (gc) {
                    if (!ax.clamped) ci->grad[static_cast<size_t>(n)] += gx;
                    if (!ay.clamped) ci->grad[static_cast<size_t>(N + n)] += gy;
                    if (!az.clamped) ci->grad[static_cast<size_t>(2 * N + n)] += gz;
                }
            }
        });
    }
    return out;
}

Tensor trilinear_sample(const Tensor& volume, const Tensor& coords) {
    check(volume.rank() == 4, "trilinear_sample: volume must be [C,R,A,E]");
    check(coords.rank() == 4 && coords.extent(0) == 3,
          "trilinear_sample: coords must be [3,R,A,E]");
    for (int64_t d = 1; d < 4; ++d)
        check(coords.extent(d) == volume.extent(d),
              "trilinear_sample: coords spatial extents must match volume");
    const int64_t C = volume.extent(0), R = volume.extent(1), A = volume.extent(2), E = volume.extent(3);
    Tensor flat = reshape(coords, {3, R * A * E});
    Tensor sampled = sample_points(volume, flat);
    return reshape(sampled, {C, R, A, E});
}

// ------------------------------------------------------- softmax family

Tensor softmax(const Tensor& x, int64_t axis) {
    check(axis >= 0 && axis < x.rank(), "softmax: axis out of range");
    Tensor m = max_axis(x.detach(), axis);
    Tensor e = exp(sub(x, m));
    Tensor s = sum_axis(e, axis);
    return div(e, s);
}

Tensor st_onehot(const Tensor& x, int64_t axis) {
    auto sp = split_axis(x.shape(), axis);
    std::vector<double> od(x.data().size(), 0.0);
    const auto& xd = x.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < sp.inner; ++j) {
            double best = xd[static_cast<size_t>(o * sp.n * sp.inner + j)];
            int64_t bi = 0;
            for (int64_t i = 1; i < sp.n; ++i) {
                double v = xd[static_cast<size_t>((o * sp.n + i) * sp.inner + j)];
                if (v > best) {
                    best = v;
                    bi = i;
                }
            }
            od[static_cast<size_t>((o * sp.n + bi) * sp.inner + j)] = 1.0;
        }
    Tensor out(x.shape(), std::move(od));
    if (Tape::active() && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr();
        auto oi = out.impl_ptr();
        Tape::record([=]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor gumbel_softmax(const Tensor& x, int64_t axis, double temperature, bool hard, uint64_t seed) {
    if (temperature <= 0.0) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
    Rng rng(derive_seed(seed, 0x67756d62ULL));
    std::vector<double> noise(x.data().size());
    for (double& v : noise) v = rng.gumbel();
    Tensor g(x.shape(), std::move(noise));
    Tensor y = softmax(add(x, g) * (1.0 / temperature), axis);
    if (!hard) return y;
    return st_onehot(y, axis);
}

// ------------------------------------------------------- layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int64_t axis, double eps) {
    check(gamma.rank() == 1 && beta.rank() == 1, "layer_norm: gamma/beta must be rank 1");
    check(gamma.extent(0) == x.extent(axis) && beta.extent(0) == x.extent(axis),
          "layer_norm: gamma/beta extent must match axis");
    Tensor mu = mean_axis(x, axis);
    Tensor d = sub(x, mu);
    Tensor var = mean_axis(mul(d, d), axis);
    Tensor y = div(d, sqrt(var + eps));
    Shape bshape(static_cast<size_t>(x.rank()), 1);
    bshape[static_cast<size_t>(axis)] = x.extent(axis);
    return add(mul(y, reshape(gamma, bshape)), reshape(beta, bshape));
}

} // namespace tessflow::ad
