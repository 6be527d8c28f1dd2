#include "pi/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pi/error.hpp"

namespace pi {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Index = Eigen::Index;

constexpr double masked_value = -1e30;

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current().enabled()) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

Buffer& grad_buffer(TensorStorage& s) {
    if (s.grad.empty()) {
        s.grad.assign(s.data.size(), 0.0);
    }
    return s.grad;
}

void check_defined(const Tensor& t, const char* op) {
    require(t.defined(), ErrorKind::contract, std::string(op) + ": undefined tensor");
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
    const auto r = static_cast<std::ptrdiff_t>(rank);
    const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
    require(a >= 0 && a < r, ErrorKind::dimension,
            "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisView {
    std::size_t outer = 1;
    std::size_t length = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

// Broadcast pairing: returns the numel of the smaller operand (the period).
std::size_t broadcast_period(const Tensor& a, const Tensor& b, Shape& out_shape, bool& a_is_big) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        out_shape = sa;
        a_is_big = true;
        return a.numel();
    }
    a_is_big = a.numel() >= b.numel();
    const Tensor& big = a_is_big ? a : b;
    const Tensor& small = a_is_big ? b : a;
    const Shape& bs = big.shape();
    const Shape& ss = small.shape();
    const bool scalar = small.numel() == 1 && ss.size() <= 1;
    const bool suffix = ss.size() + 1 == bs.size() && std::equal(ss.begin(), ss.end(), bs.begin() + 1);
    require(scalar || suffix, ErrorKind::dimension,
            "cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
    out_shape = bs;
    return small.numel();
}

enum class BinaryOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op) {
    check_defined(a, "binary op");
    check_defined(b, "binary op");
    Shape out_shape;
    bool a_is_big = true;
    const std::size_t period = broadcast_period(a, b, out_shape, a_is_big);
    const std::size_t n = shape_numel(out_shape);
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[na == n ? i : i % period];
        const double y = bd[nb == n ? i : i % period];
        switch (op) {
            case BinaryOp::add: out[i] = x + y; break;
            case BinaryOp::sub: out[i] = x - y; break;
            case BinaryOp::mul: out[i] = x * y; break;
        }
    }
    Tensor result = make_tensor(out_shape, std::move(out));
    if (tracking({&a, &b})) {
        TensorStorage* sa = &const_cast<Tensor&>(a).storage();
        TensorStorage* sb = &const_cast<Tensor&>(b).storage();
        TensorStorage* so = &result.storage();
        Tape::current().record({a, b}, result, [sa, sb, so, op, n, period]() {
            const auto& g = so->grad;
            const std::size_t na = sa->data.size();
            const std::size_t nb = sb->data.size();
            if (sa->requires_grad) {
                auto& ga = grad_buffer(*sa);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ib = nb == n ? i : i % period;
                    const double d = op == BinaryOp::mul ? g[i] * sb->data[ib] : g[i];
                    ga[na == n ? i : i % period] += d;
                }
            }
            if (sb->requires_grad) {
                auto& gb = grad_buffer(*sb);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = na == n ? i : i % period;
                    double d = g[i];
                    if (op == BinaryOp::sub) d = -d;
                    if (op == BinaryOp::mul) d *= sa->data[ia];
                    gb[nb == n ? i : i % period] += d;
                }
            }
        });
    }
    return result;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward forward, Derivative derivative) {
    check_defined(x, "unary op");
    const auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = forward(xd[i]);
    Tensor result = make_tensor(x.shape(), std::move(out));
    if (tracking({&x})) {
        TensorStorage* sx = &const_cast<Tensor&>(x).storage();
        TensorStorage* so = &result.storage();
        Tape::current().record({x}, result, [sx, so, derivative]() {
            auto& gx = grad_buffer(*sx);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += so->grad[i] * derivative(sx->data[i], so->data[i]);
            }
        });
    }
    return result;
}

void record_if(const std::vector<const Tensor*>& inputs, Tensor& result,
               std::function<void()> rule) {
    if (!Tape::current().enabled()) return;
    bool any = false;
    std::vector<Tensor> held;
    held.reserve(inputs.size());
    for (const Tensor* t : inputs) {
        any = any || t->requires_grad();
        held.push_back(*t);
    }
    if (any) {
        Tape::current().record(std::move(held), result, std::move(rule));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor make_tensor(Shape shape, Buffer values) {
    for (std::size_t d : shape) {
        require(d > 0, ErrorKind::dimension, "zero extent in shape " + shape_str(shape));
    }
    require(shape_numel(shape) == values.size(), ErrorKind::dimension,
            "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                " values");
    auto impl = std::make_shared<TensorStorage>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return make_tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return make_tensor(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    const std::size_t n = shape_numel(shape);
    Buffer v(n);
    for (double& x : v) x = rng.normal() * stddev;
    return make_tensor(std::move(shape), std::move(v));
}

double Tensor::item() const {
    require(defined() && numel() == 1, ErrorKind::contract,
            "item() requires a one-element tensor, got " + (defined() ? shape_str(shape()) : "undefined"));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

std::span<double> Tensor::mutable_grad() { return grad_buffer(*impl_); }

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
}

void Tensor::clear_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
    check_defined(*this, "clone");
    return make_tensor(impl_->shape, impl_->data);
}

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    output.set_requires_grad(true);
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    require(loss.numel() == 1, ErrorKind::contract,
            "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Tape& tape = Tape::current();
    require(loss.requires_grad(), ErrorKind::contract, "loss does not depend on any trainable tensor");
    require(tape.size() > 0, ErrorKind::contract, "backward called on an empty tape");
    auto& g = grad_buffer(const_cast<Tensor&>(loss).storage());
    g[0] += 1.0;
    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (!it->output.storage().grad.empty()) {
            it->backward();
        }
    }
    tape.clear();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const auto mismatch = [&]() {
        fail(ErrorKind::dimension, "matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    };
    std::size_t batch = 1;
    bool shared_b = true;
    if (sa.size() == 2 && sb.size() == 2) {
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0]) mismatch();
        batch = sa[0];
        shared_b = false;
    } else if (sa.size() == 3 && sb.size() == 2) {
        batch = sa[0];
    } else {
        mismatch();
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t kb = sb[sb.size() - 2];
    const std::size_t n = sb[sb.size() - 1];
    if (k != kb) mismatch();

    Shape out_shape = sa.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
    Buffer out(batch * m * n);
    if (shared_b) {
        // (batch*m, k) x (k, n) as one product
        MapMat(out.data(), static_cast<Index>(batch * m), static_cast<Index>(n)).noalias() =
            ConstMapMat(a.data().data(), static_cast<Index>(batch * m), static_cast<Index>(k)) *
            ConstMapMat(b.data().data(), static_cast<Index>(k), static_cast<Index>(n));
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            MapMat(out.data() + i * m * n, static_cast<Index>(m), static_cast<Index>(n)).noalias() =
                ConstMapMat(a.data().data() + i * m * k, static_cast<Index>(m), static_cast<Index>(k)) *
                ConstMapMat(b.data().data() + i * k * n, static_cast<Index>(k), static_cast<Index>(n));
        }
    }
    Tensor result = make_tensor(std::move(out_shape), std::move(out));
    if (tracking({&a, &b})) {
        TensorStorage* pa = &const_cast<Tensor&>(a).storage();
        TensorStorage* pb = &const_cast<Tensor&>(b).storage();
        TensorStorage* po = &result.storage();
        Tape::current().record({a, b}, result, [=]() {
            const auto M = static_cast<Index>(m);
            const auto K = static_cast<Index>(k);
            const auto N = static_cast<Index>(n);
            if (shared_b) {
                const auto BM = static_cast<Index>(batch * m);
                ConstMapMat g(po->grad.data(), BM, N);
                if (pa->requires_grad) {
                    MapMat(grad_buffer(*pa).data(), BM, K).noalias() +=
                        g * ConstMapMat(pb->data.data(), K, N).transpose();
                }
                if (pb->requires_grad) {
                    MapMat(grad_buffer(*pb).data(), K, N).noalias() +=
                        ConstMapMat(pa->data.data(), BM, K).transpose() * g;
                }
                return;
            }
            for (std::size_t i = 0; i < batch; ++i) {
                ConstMapMat g(po->grad.data() + i * m * n, M, N);
                if (pa->requires_grad) {
                    MapMat(grad_buffer(*pa).data() + i * m * k, M, K).noalias() +=
                        g * ConstMapMat(pb->data.data() + i * k * n, K, N).transpose();
                }
                if (pb->requires_grad) {
                    MapMat(grad_buffer(*pb).data() + i * k * n, K, N).noalias() +=
                        ConstMapMat(pa->data.data() + i * m * k, M, K).transpose() * g;
                }
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& x) {
    check_defined(x, "transpose");
    require(x.rank() >= 2, ErrorKind::dimension, "transpose needs rank >= 2, got " + shape_str(x.shape()));
    Shape s = x.shape();
    const std::size_t r = s[s.size() - 2];
    const std::size_t c = s[s.size() - 1];
    const std::size_t batch = x.numel() / (r * c);
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    Buffer out(x.numel());
    const auto xd = x.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = xd.data() + b * r * c;
        double* dst = out.data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    Tensor result = make_tensor(std::move(s), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = po->grad.data() + b * r * c;
            double* dst = gx.data() + b * r * c;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
        }
    });
    return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check_defined(x, "linear");
    check_defined(weight, "linear");
    require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(0), ErrorKind::dimension,
            "linear shape mismatch: " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
    const bool has_bias = bias.defined();
    const std::size_t rows = x.dim(0);
    const std::size_t in = x.dim(1);
    const std::size_t out_dim = weight.dim(1);
    if (has_bias) {
        require(bias.rank() == 1 && bias.dim(0) == out_dim, ErrorKind::dimension,
                "linear bias " + shape_str(bias.shape()) + " does not match weight " +
                    shape_str(weight.shape()));
    }
    const auto R = static_cast<Index>(rows);
    const auto I = static_cast<Index>(in);
    const auto O = static_cast<Index>(out_dim);
    Buffer out(rows * out_dim);
    MapMat y(out.data(), R, O);
    y.noalias() = ConstMapMat(x.data().data(), R, I) * ConstMapMat(weight.data().data(), I, O);
    if (has_bias) {
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), O);
    }
    Tensor result = make_tensor({rows, out_dim}, std::move(out));
    const bool track = has_bias ? tracking({&x, &weight, &bias}) : tracking({&x, &weight});
    if (track) {
        TensorStorage* px = &const_cast<Tensor&>(x).storage();
        TensorStorage* pw = &const_cast<Tensor&>(weight).storage();
        TensorStorage* pb = has_bias ? &const_cast<Tensor&>(bias).storage() : nullptr;
        TensorStorage* po = &result.storage();
        std::vector<Tensor> inputs{x, weight};
        if (has_bias) inputs.push_back(bias);
        Tape::current().record(std::move(inputs), result, [=]() {
            ConstMapMat g(po->grad.data(), R, O);
            if (px->requires_grad) {
                MapMat(grad_buffer(*px).data(), R, I).noalias() +=
                    g * ConstMapMat(pw->data.data(), I, O).transpose();
            }
            if (pw->requires_grad) {
                MapMat(grad_buffer(*pw).data(), I, O).noalias() +=
                    ConstMapMat(px->data.data(), R, I).transpose() * g;
            }
            if (pb && pb->requires_grad) {
                Eigen::Map<Eigen::RowVectorXd>(grad_buffer(*pb).data(), O) += g.colwise().sum();
            }
        });
    }
    return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::mul); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        require(v > 0.0, ErrorKind::input, "log of non-positive value");
    }
    return unary(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    check_defined(x, "gelu");
    const auto xd = x.data();
    auto cdf = std::make_shared<std::vector<double>>(xd.size());
    Buffer out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        (*cdf)[i] = 0.5 * (1.0 + std::erf(xd[i] * inv_sqrt2));
        out[i] = xd[i] * (*cdf)[i];
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double v = px->data[i];
            gx[i] += po->grad[i] * ((*cdf)[i] + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
        }
    });
    return result;
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
    check_defined(x, "sum");
    const auto xd = x.data();
    double total = 0.0;
    for (double v : xd) total += v;
    Tensor result = Tensor::scalar(total);
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        const double g = po->grad[0];
        for (double& v : gx) v += g;
    });
    return result;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_last(const Tensor& x) {
    check_defined(x, "sum_last");
    require(x.rank() >= 1, ErrorKind::dimension, "sum_last needs rank >= 1");
    Shape s = x.shape();
    const std::size_t n = s.back();
    s.pop_back();
    const std::size_t rows = x.numel() / n;
    Buffer out(rows, 0.0);
    const auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r] += xd[r * n + j];
    Tensor result = make_tensor(std::move(s), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += po->grad[r];
    });
    return result;
}

namespace {

Tensor softmax_impl(const Tensor& x, std::ptrdiff_t axis, bool log_space) {
    check_defined(x, "softmax");
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisView v = axis_view(x.shape(), ax);
    const auto xd = x.data();
    Buffer out(x.numel());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.length * v.inner + in;
            double mx = xd[base];
            for (std::size_t j = 1; j < v.length; ++j) mx = std::max(mx, xd[base + j * v.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < v.length; ++j) total += std::exp(xd[base + j * v.inner] - mx);
            const double log_total = std::log(total);
            for (std::size_t j = 0; j < v.length; ++j) {
                const double shifted = xd[base + j * v.inner] - mx;
                out[base + j * v.inner] = log_space ? shifted - log_total : std::exp(shifted) / total;
            }
        }
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        const auto& y = po->data;
        const auto& g = po->grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.length * v.inner + in;
                double acc = 0.0;
                for (std::size_t j = 0; j < v.length; ++j) {
                    const std::size_t idx = base + j * v.inner;
                    acc += log_space ? g[idx] : g[idx] * y[idx];
                }
                for (std::size_t j = 0; j < v.length; ++j) {
                    const std::size_t idx = base + j * v.inner;
                    gx[idx] += log_space ? g[idx] - std::exp(y[idx]) * acc : y[idx] * (g[idx] - acc);
                }
            }
        }
    });
    return result;
}

}  // namespace

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis) { return softmax_impl(x, axis, true); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_defined(x, "layer_norm");
    require(eps > 0.0, ErrorKind::contract, "layer_norm eps must be positive");
    require(x.rank() >= 1, ErrorKind::dimension, "layer_norm needs rank >= 1");
    const std::size_t n = x.shape().back();
    require(gain.numel() == n && bias.numel() == n, ErrorKind::dimension,
            "layer_norm affine " + shape_str(gain.shape()) + " does not match " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    Buffer out(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var *= inv_n;
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (row[j] - mu) * rs;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = h * gd[j] + bd[j];
        }
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* pg = &const_cast<Tensor&>(gain).storage();
    TensorStorage* pb = &const_cast<Tensor&>(bias).storage();
    TensorStorage* po = &result.storage();
    record_if({&x, &gain, &bias}, result, [=]() {
        const auto& g = po->grad;
        const auto& h = *xhat;
        if (pg->requires_grad || pb->requires_grad) {
            auto& gg = grad_buffer(*pg);
            auto& gb = grad_buffer(*pb);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) {
                    gg[j] += g[r * n + j] * h[r * n + j];
                    gb[j] += g[r * n + j];
                }
        }
        if (px->requires_grad) {
            auto& gx = grad_buffer(*px);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0;
                double mean_dh = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = g[r * n + j] * pg->data[j];
                    mean_d += d;
                    mean_dh += d * h[r * n + j];
                }
                mean_d *= inv_n;
                mean_dh *= inv_n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = g[r * n + j] * pg->data[j];
                    gx[r * n + j] += (*rstd)[r] * (d - mean_d - h[r * n + j] * mean_dh);
                }
            }
        }
    });
    return result;
}

Tensor l2_normalize(const Tensor& x, double eps) {
    check_defined(x, "l2_normalize");
    require(x.rank() >= 1, ErrorKind::dimension, "l2_normalize needs rank >= 1");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto xd = x.data();
    Buffer out(x.numel());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) ss += xd[r * n + j] * xd[r * n + j];
        const double norm = std::sqrt(ss);
        (*norms)[r] = norm;
        const double denom = norm + eps;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xd[r * n + j] / denom;
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        const auto& g = po->grad;
        for (std::size_t r = 0; r < rows; ++r) {
            const double norm = (*norms)[r];
            const double denom = norm + eps;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * px->data[r * n + j];
            // d/dx_i of x_j / (|x| + eps) = delta_ij / s - x_j x_i / (|x| s^2)
            const double coef = norm > 0.0 ? dot / (norm * denom * denom) : 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gx[r * n + j] += g[r * n + j] / denom - coef * px->data[r * n + j];
            }
        }
    });
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    require(shape_numel(shape) == x.numel(), ErrorKind::dimension,
            "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor result = make_tensor(std::move(shape), Buffer(x.data().begin(), x.data().end()));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += po->grad[i];
    });
    return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    check_defined(x, "permute");
    const std::size_t r = x.rank();
    require(order.size() == r, ErrorKind::dimension, "permute order length does not match rank");
    std::vector<bool> seen(r, false);
    for (std::size_t a : order) {
        require(a < r && !seen[a], ErrorKind::dimension, "permute order is not a permutation");
        seen[a] = true;
    }
    const Shape& in_shape = x.shape();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    // source offset for each output element
    auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < x.numel(); ++flat) {
        (*src)[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            const std::size_t stride = in_strides[order[i]];
            if (++idx[i] < out_shape[i]) {
                off += stride;
                break;
            }
            off -= stride * (idx[i] - 1);
            idx[i] = 0;
        }
    }
    const auto xd = x.data();
    Buffer out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*src)[i]];
    Tensor result = make_tensor(std::move(out_shape), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += po->grad[i];
    });
    return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    require(!parts.empty(), ErrorKind::contract, "concat of zero tensors");
    const Shape& first = parts.front().shape();
    require(axis < first.size(), ErrorKind::dimension, "concat axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        check_defined(p, "concat");
        Shape s = p.shape();
        require(s.size() == first.size(), ErrorKind::dimension,
                "concat rank mismatch: " + shape_str(first) + " vs " + shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i) {
            require(i == axis || s[i] == first[i], ErrorKind::dimension,
                    "concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
        }
        out_shape[axis] += s[axis];
    }
    const AxisView v = axis_view(out_shape, axis);
    Buffer out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t chunk = p.dim(axis) * v.inner;
        const auto pd = p.data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * v.length * v.inner + offset);
        }
        offset += chunk;
    }
    Tensor result = make_tensor(out_shape, std::move(out));
    if (Tape::current().enabled() &&
        std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); })) {
        std::vector<TensorStorage*> ps;
        for (const Tensor& p : parts) ps.push_back(&const_cast<Tensor&>(p).storage());
        TensorStorage* po = &result.storage();
        Tape::current().record(parts, result, [=]() {
            std::size_t off = 0;
            for (TensorStorage* p : ps) {
                const std::size_t chunk = p->shape[axis] * v.inner;
                if (p->requires_grad) {
                    auto& gp = grad_buffer(*p);
                    for (std::size_t o = 0; o < v.outer; ++o) {
                        const double* g = po->grad.data() + o * v.length * v.inner + off;
                        for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[i];
                    }
                }
                off += chunk;
            }
        });
    }
    return result;
}

Tensor repeat(const Tensor& x, std::size_t count) {
    check_defined(x, "repeat");
    require(count > 0, ErrorKind::dimension, "repeat count must be positive");
    Shape s = x.shape();
    s.insert(s.begin(), count);
    const std::size_t n = x.numel();
    Buffer out(n * count);
    for (std::size_t c = 0; c < count; ++c) std::copy_n(x.data().data(), n, out.data() + c * n);
    Tensor result = make_tensor(std::move(s), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t c = 0; c < count; ++c)
            for (std::size_t i = 0; i < n; ++i) gx[i] += po->grad[c * n + i];
    });
    return result;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
    check_defined(table, "gather_rows");
    require(table.rank() >= 1, ErrorKind::dimension, "gather_rows needs rank >= 1");
    require(!rows.empty(), ErrorKind::dimension, "gather_rows with no rows");
    const std::size_t count = table.dim(0);
    const std::size_t width = table.numel() / count;
    Shape s = table.shape();
    s[0] = rows.size();
    Buffer out(rows.size() * width);
    const auto td = table.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < count, ErrorKind::dimension,
                "row index " + std::to_string(rows[i]) + " out of range " + std::to_string(count));
        std::copy_n(td.data() + rows[i] * width, width, out.data() + i * width);
    }
    Tensor result = make_tensor(std::move(s), std::move(out));
    if (tracking({&table})) {
        auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
        TensorStorage* pt = &const_cast<Tensor&>(table).storage();
        TensorStorage* po = &result.storage();
        Tape::current().record({table}, result, [=]() {
            auto& gt = grad_buffer(*pt);
            for (std::size_t i = 0; i < idx->size(); ++i) {
                const double* g = po->grad.data() + i * width;
                double* dst = gt.data() + (*idx)[i] * width;
                for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
            }
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    check_defined(x, "slice_rows");
    require(x.rank() >= 1 && begin < end && end <= x.dim(0), ErrorKind::dimension,
            "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                shape_str(x.shape()));
    std::vector<std::size_t> rows(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    return gather_rows(x, rows);
}

Tensor diagonal(const Tensor& x) {
    check_defined(x, "diagonal");
    require(x.rank() == 2 && x.dim(0) == x.dim(1), ErrorKind::dimension,
            "diagonal needs a square matrix, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i * n + i];
    Tensor result = make_tensor({n}, std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += po->grad[i];
    });
    return result;
}

Tensor causal_mask(const Tensor& x) {
    check_defined(x, "causal_mask");
    require(x.rank() >= 2 && x.shape()[x.rank() - 1] == x.shape()[x.rank() - 2], ErrorKind::dimension,
            "causal_mask needs square trailing axes, got " + shape_str(x.shape()));
    const std::size_t t = x.shape().back();
    const std::size_t batch = x.numel() / (t * t);
    Buffer out(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = i + 1; j < t; ++j) out[b * t * t + i * t + j] = masked_value;
    Tensor result = make_tensor(x.shape(), std::move(out));
    TensorStorage* px = &const_cast<Tensor&>(x).storage();
    TensorStorage* po = &result.storage();
    record_if({&x}, result, [=]() {
        auto& gx = grad_buffer(*px);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j <= i; ++j) gx[b * t * t + i * t + j] += po->grad[b * t * t + i * t + j];
    });
    return result;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
                           double tol, double floor) {
    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    Tape::current().clear();
    Tensor y = f(probe);
    require(y.numel() == 1, ErrorKind::contract, "grad_check needs a scalar-valued function");
    std::vector<double> analytic(probe.numel(), 0.0);
    if (y.requires_grad()) {
        backward(y);
        if (probe.has_grad()) {
            std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());
        }
    }
    Tape::current().clear();

    GradCheckReport report;
    NoGradGuard guard;
    auto data = probe.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = f(probe).item();
        data[i] = saved - h;
        const double down = f(probe).item();
        data[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({floor, std::abs(analytic[i]), std::abs(numeric)});
        const double err = std::abs(analytic[i] - numeric) / denom;
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        ++report.checked;
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace pi
