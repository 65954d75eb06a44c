#include "iod/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace iod {

std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {

namespace {
std::atomic<std::uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

static void set_grad_enabled(bool on) { g_grad_enabled = on; }

static std::shared_ptr<Node> new_node(Shape shape, Eigen::ArrayXd value) {
    auto n = std::make_shared<Node>();
    if (static_cast<std::int64_t>(value.size()) != shape_size(shape))
        throw DimensionError("tensor: data length " + std::to_string(value.size()) +
                             " does not match shape " + shape_str(shape));
    for (int d : shape)
        if (d <= 0) throw DimensionError("tensor: non-positive dimension in " + shape_str(shape));
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return n;
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(previous_); }

// --- Tensor ------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Eigen::ArrayXd v = Eigen::ArrayXd::Zero(shape_size(shape));
    return from_array(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Eigen::ArrayXd v = Eigen::ArrayXd::Constant(shape_size(shape), value);
    return from_array(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd data, bool requires_grad) {
    auto node = detail::new_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& data, bool requires_grad) {
    Eigen::ArrayXd v(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) v[static_cast<Eigen::Index>(i)] = data[i];
    return from_array(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

static const detail::Node& deref(const std::shared_ptr<detail::Node>& n, const char* what) {
    if (!n) throw ContractError(std::string(what) + ": undefined tensor");
    return *n;
}

const Shape& Tensor::shape() const { return deref(node_, "shape").shape; }

int Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    return s[axis];
}

std::int64_t Tensor::size() const { return deref(node_, "size").value.size(); }

const Eigen::ArrayXd& Tensor::data() const { return deref(node_, "data").value; }

Eigen::ArrayXd& Tensor::data() {
    deref(node_, "data");
    return node_->value;
}

double Tensor::operator[](std::int64_t i) const {
    const auto& v = data();
    if (i < 0 || i >= v.size())
        throw ContractError("tensor index " + std::to_string(i) + " out of range");
    return v[i];
}

double Tensor::value() const {
    if (size() != 1)
        throw ContractError("value(): tensor of shape " + shape_str(shape()) + " is not scalar");
    return data()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    deref(node_, "set_requires_grad");
    node_->requires_grad = rg;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

const Eigen::ArrayXd& Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient has been accumulated");
    return node_->grad;
}

void Tensor::zero_grad() {
    deref(node_, "zero_grad");
    node_->grad.resize(0);
}

void Tensor::accumulate_grad(const Eigen::ArrayXd& g) {
    deref(node_, "accumulate_grad");
    if (g.size() != node_->value.size())
        throw DimensionError("accumulate_grad: gradient length mismatch");
    node_->ensure_grad();
    node_->grad += g;
}

Tensor Tensor::clone_detached(bool requires_grad) const {
    return from_array(shape(), data(), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

// --- op plumbing --------------------------------------------------------

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// Builds an op node. If no parent needs gradients (or grads are disabled),
// the result is a plain constant tensor and the graph stays empty.
Tensor make_op(const char* op, Shape shape, Eigen::ArrayXd value,
               std::vector<Tensor> parents, std::function<void(Node&)> backprop) {
    bool needs = false;
    if (detail::grad_enabled())
        for (const auto& p : parents) needs = needs || p.requires_grad();
    Tensor out = Tensor::from_array(std::move(shape), std::move(value), false);
    if (needs) {
        auto n = out.node();
        n->requires_grad = true;
        n->op = op;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

void add_grad(const NodePtr& p, const Eigen::ArrayXd& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad += g;
}

}  // namespace

// --- backward -----------------------------------------------------------

void backward(const Tensor& root) {
    if (!root.defined()) throw ContractError("backward: undefined tensor");
    if (root.size() != 1)
        throw ContractError("backward: root of shape " + shape_str(root.shape()) +
                            " is not scalar");
    auto rn = root.node();
    if (!rn->requires_grad) return;  // constant loss, nothing reachable

    // Collect the reachable differentiable subgraph.
    std::vector<NodePtr> nodes;
    std::unordered_set<const Node*> seen;
    std::vector<NodePtr> stack{rn};
    seen.insert(rn.get());
    while (!stack.empty()) {
        NodePtr n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    // Construction order is a topological order: parents precede children.
    std::sort(nodes.begin(), nodes.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

    rn->ensure_grad();
    rn->grad[0] += 1.0;
    for (auto& n : nodes)
        if (n->backprop) n->backprop(*n);
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
    check_contract(h > 0.0, "finite_difference_gradient: h must be positive");
    Tensor probe = x.clone_detached(false);
    Eigen::ArrayXd g(probe.size());
    for (Eigen::Index i = 0; i < probe.size(); ++i) {
        const double v = probe.data()[i];
        probe.data()[i] = v + h;
        const double fp = f(probe);
        probe.data()[i] = v - h;
        const double fm = f(probe);
        probe.data()[i] = v;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor::from_array(x.shape(), std::move(g));
}

// --- elementwise binaries -----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    return make_op("add", a.shape(), a.data() + b.data(), {a, b}, [](Node& n) {
        add_grad(n.parents[0], n.grad);
        add_grad(n.parents[1], n.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    return make_op("sub", a.shape(), a.data() - b.data(), {a, b}, [](Node& n) {
        add_grad(n.parents[0], n.grad);
        add_grad(n.parents[1], Eigen::ArrayXd(-n.grad));
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    return make_op("mul", a.shape(), a.data() * b.data(), {a, b}, [](Node& n) {
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * n.parents[1]->value));
        add_grad(n.parents[1], Eigen::ArrayXd(n.grad * n.parents[0]->value));
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    return make_op("div", a.shape(), a.data() / b.data(), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad / bv));
        add_grad(n.parents[1], Eigen::ArrayXd(-n.grad * av / (bv * bv)));
    });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    require_same_shape("minimum", a, b);
    return make_op("minimum", a.shape(), a.data().min(b.data()), {a, b}, [](Node& n) {
        // Ties route to the first argument.
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        Eigen::ArrayXd take_a = (av <= bv).cast<double>();
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * take_a));
        add_grad(n.parents[1], Eigen::ArrayXd(n.grad * (1.0 - take_a)));
    });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    require_same_shape("maximum", a, b);
    return make_op("maximum", a.shape(), a.data().max(b.data()), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        Eigen::ArrayXd take_a = (av >= bv).cast<double>();
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * take_a));
        add_grad(n.parents[1], Eigen::ArrayXd(n.grad * (1.0 - take_a)));
    });
}

// --- const scalar variants ----------------------------------------------

Tensor add_const(const Tensor& x, double c) {
    return make_op("add_const", x.shape(), x.data() + c, {x},
                   [](Node& n) { add_grad(n.parents[0], n.grad); });
}

Tensor mul_const(const Tensor& x, double c) {
    return make_op("mul_const", x.shape(), x.data() * c, {x},
                   [c](Node& n) { add_grad(n.parents[0], Eigen::ArrayXd(n.grad * c)); });
}

Tensor rsub_const(double c, const Tensor& x) {
    return make_op("rsub_const", x.shape(), c - x.data(), {x},
                   [](Node& n) { add_grad(n.parents[0], Eigen::ArrayXd(-n.grad)); });
}

Tensor clamp_min(const Tensor& x, double c) {
    return make_op("clamp_min", x.shape(), x.data().max(c), {x}, [c](Node& n) {
        Eigen::ArrayXd pass = (n.parents[0]->value > c).cast<double>();
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * pass));
    });
}

Tensor pow_const(const Tensor& x, double p) {
    return make_op("pow_const", x.shape(), x.data().pow(p), {x}, [p](Node& n) {
        Eigen::ArrayXd d = p * n.parents[0]->value.pow(p - 1.0);
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * d));
    });
}

// --- learnable scalar broadcast ------------------------------------------

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    check_contract(s.size() == 1, "mul_scalar: scale must be scalar");
    const double sv = s.data()[0];
    return make_op("mul_scalar", x.shape(), x.data() * sv, {x, s}, [](Node& n) {
        const double sv2 = n.parents[1]->value[0];
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * sv2));
        if (n.parents[1]->requires_grad) {
            Eigen::ArrayXd gs(1);
            gs[0] = (n.grad * n.parents[0]->value).sum();
            add_grad(n.parents[1], gs);
        }
    });
}

Tensor add_scalar(const Tensor& x, const Tensor& s) {
    check_contract(s.size() == 1, "add_scalar: shift must be scalar");
    return make_op("add_scalar", x.shape(), x.data() + s.data()[0], {x, s}, [](Node& n) {
        add_grad(n.parents[0], n.grad);
        if (n.parents[1]->requires_grad) {
            Eigen::ArrayXd gs(1);
            gs[0] = n.grad.sum();
            add_grad(n.parents[1], gs);
        }
    });
}

// --- unaries --------------------------------------------------------------

Tensor neg(const Tensor& x) { return mul_const(x, -1.0); }

Tensor relu(const Tensor& x) {
    return make_op("relu", x.shape(), x.data().max(0.0), {x}, [](Node& n) {
        Eigen::ArrayXd pass = (n.parents[0]->value > 0.0).cast<double>();
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * pass));
    });
}

namespace {
double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

Eigen::ArrayXd sigmoid_array(const Eigen::ArrayXd& x) {
    Eigen::ArrayXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
    return y;
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
    Eigen::ArrayXd y = sigmoid_array(x.data());
    return make_op("sigmoid", x.shape(), y, {x}, [y](Node& n) {
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * y * (1.0 - y)));
    });
}

Tensor silu(const Tensor& x) {
    Eigen::ArrayXd s = sigmoid_array(x.data());
    Eigen::ArrayXd y = x.data() * s;
    return make_op("silu", x.shape(), y, {x}, [s](Node& n) {
        const auto& xv = n.parents[0]->value;
        Eigen::ArrayXd d = s * (1.0 + xv * (1.0 - s));
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * d));
    });
}

Tensor exp(const Tensor& x) {
    Eigen::ArrayXd y = x.data().exp();
    return make_op("exp", x.shape(), y, {x},
                   [y](Node& n) { add_grad(n.parents[0], Eigen::ArrayXd(n.grad * y)); });
}

Tensor log(const Tensor& x) {
    return make_op("log", x.shape(), x.data().log(), {x}, [](Node& n) {
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad / n.parents[0]->value));
    });
}

Tensor abs(const Tensor& x) {
    return make_op("abs", x.shape(), x.data().abs(), {x}, [](Node& n) {
        const auto& xv = n.parents[0]->value;
        Eigen::ArrayXd sign = (xv > 0.0).cast<double>() - (xv < 0.0).cast<double>();
        add_grad(n.parents[0], Eigen::ArrayXd(n.grad * sign));
    });
}

// --- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Eigen::ArrayXd v(1);
    v[0] = x.data().sum();
    return make_op("sum", {1}, v, {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    Eigen::ArrayXd v(1);
    v[0] = x.data().sum() * inv;
    return make_op("mean", {1}, v, {x}, [inv](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad[0] * inv;
    });
}

Tensor reduce_max(const Tensor& x) {
    Eigen::Index arg = 0;
    const double m = x.data().maxCoeff(&arg);
    Eigen::ArrayXd v(1);
    v[0] = m;
    return make_op("reduce_max", {1}, v, {x}, [arg](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad[arg] += n.grad[0];
    });
}

// --- matmul -----------------------------------------------------------------

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner axes disagree (a axis 1 = " + std::to_string(k) +
                             ", b axis 0 = " + std::to_string(k2) + ")");
    MapMat A(a.data().data(), m, k), B(b.data().data(), k, n);
    RowMat C = A * B;
    Eigen::ArrayXd v = Eigen::Map<Eigen::ArrayXd>(C.data(), C.size());
    return make_op("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](Node& nd) {
        MapMat G(nd.grad.data(), m, n);
        MapMat Av(nd.parents[0]->value.data(), m, k);
        MapMat Bv(nd.parents[1]->value.data(), k, n);
        if (nd.parents[0]->requires_grad) {
            RowMat GA = G * Bv.transpose();
            nd.parents[0]->ensure_grad();
            nd.parents[0]->grad += Eigen::Map<Eigen::ArrayXd>(GA.data(), GA.size());
        }
        if (nd.parents[1]->requires_grad) {
            RowMat GB = Av.transpose() * G;
            nd.parents[1]->ensure_grad();
            nd.parents[1]->grad += Eigen::Map<Eigen::ArrayXd>(GB.data(), GB.size());
        }
    });
}

// --- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.shape().size() != 3)
        throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    if (kernels.shape().size() != 4)
        throw DimensionError("conv2d: kernels must be [C_out,C_in,kh,kw], got " +
                             shape_str(kernels.shape()));
    check_contract(stride >= 1, "conv2d: stride must be >= 1");
    check_contract(padding >= 0, "conv2d: padding must be >= 0");
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = kernels.dim(0), kcin = kernels.dim(1), kh = kernels.dim(2),
              kw = kernels.dim(3);
    if (cin != kcin)
        throw DimensionError("conv2d: input channels (input axis 0 = " + std::to_string(cin) +
                             ") disagree with kernel input channels (kernel axis 1 = " +
                             std::to_string(kcin) + ")");
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                             std::to_string(w + 2 * padding));
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;

    const double* in = input.data().data();
    const double* ker = kernels.data().data();
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(cout) * oh * ow);
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += in[(static_cast<std::int64_t>(ci) * h + iy) * w + ix] *
                                   ker[((static_cast<std::int64_t>(co) * cin + ci) * kh + ky) * kw +
                                       kx];
                        }
                    }
                out[(static_cast<std::int64_t>(co) * oh + oy) * ow + ox] = acc;
            }

    auto bp = [cin, h, w, cout, kh, kw, oh, ow, stride, padding](Node& n) {
        const double* g = n.grad.data();
        const double* inv = n.parents[0]->value.data();
        const double* kv = n.parents[1]->value.data();
        const bool gi = n.parents[0]->requires_grad;
        const bool gk = n.parents[1]->requires_grad;
        if (gi) n.parents[0]->ensure_grad();
        if (gk) n.parents[1]->ensure_grad();
        double* ging = gi ? n.parents[0]->grad.data() : nullptr;
        double* gker = gk ? n.parents[1]->grad.data() : nullptr;
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double go = g[(static_cast<std::int64_t>(co) * oh + oy) * ow + ox];
                    if (go == 0.0) continue;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= w) continue;
                                const std::int64_t ii =
                                    (static_cast<std::int64_t>(ci) * h + iy) * w + ix;
                                const std::int64_t kk =
                                    ((static_cast<std::int64_t>(co) * cin + ci) * kh + ky) * kw +
                                    kx;
                                if (ging) ging[ii] += go * kv[kk];
                                if (gker) gker[kk] += go * inv[ii];
                            }
                        }
                }
    };
    return make_op("conv2d", {cout, oh, ow}, std::move(out), {input, kernels}, std::move(bp));
}

Tensor channel_bias_add(const Tensor& x, const Tensor& bias) {
    if (x.shape().size() != 3)
        throw DimensionError("channel_bias_add: x must be [C,H,W], got " + shape_str(x.shape()));
    if (bias.shape().size() != 1 || bias.dim(0) != x.dim(0))
        throw DimensionError("channel_bias_add: bias axis 0 = " + shape_str(bias.shape()) +
                             " must match x axis 0 = " + std::to_string(x.dim(0)));
    const int c = x.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
    Eigen::ArrayXd v = x.data();
    for (int i = 0; i < c; ++i) v.segment(i * plane, plane) += bias.data()[i];
    return make_op("channel_bias_add", x.shape(), std::move(v), {x, bias},
                   [c, plane](Node& n) {
                       add_grad(n.parents[0], n.grad);
                       if (n.parents[1]->requires_grad) {
                           n.parents[1]->ensure_grad();
                           for (int i = 0; i < c; ++i)
                               n.parents[1]->grad[i] += n.grad.segment(i * plane, plane).sum();
                       }
                   });
}

// --- structural ops -----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    return make_op("reshape", std::move(shape), x.data(), {x},
                   [](Node& n) { add_grad(n.parents[0], n.grad); });
}

Tensor gather(const Tensor& x, const std::vector<std::int64_t>& indices) {
    check_contract(!indices.empty(), "gather: empty index list");
    Eigen::ArrayXd v(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t idx = indices[i];
        if (idx < 0 || idx >= x.size())
            throw ContractError("gather: index " + std::to_string(idx) + " out of range");
        v[static_cast<Eigen::Index>(i)] = x.data()[idx];
    }
    return make_op("gather", {static_cast<int>(indices.size())}, std::move(v), {x},
                   [indices](Node& n) {
                       if (!n.parents[0]->requires_grad) return;
                       n.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < indices.size(); ++i)
                           n.parents[0]->grad[indices[i]] += n.grad[static_cast<Eigen::Index>(i)];
                   });
}

Tensor slice_axis0(const Tensor& x, int index) {
    check_contract(x.shape().size() >= 1, "slice_axis0: needs at least one axis");
    const int n0 = x.dim(0);
    if (index < 0 || index >= n0)
        throw ContractError("slice_axis0: index " + std::to_string(index) + " out of range [0," +
                            std::to_string(n0) + ")");
    const std::int64_t slab = x.size() / n0;
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    if (out_shape.empty()) out_shape = {1};
    Eigen::ArrayXd v = x.data().segment(index * slab, slab);
    return make_op("slice_axis0", std::move(out_shape), std::move(v), {x},
                   [index, slab](Node& n) {
                       if (!n.parents[0]->requires_grad) return;
                       n.parents[0]->ensure_grad();
                       n.parents[0]->grad.segment(index * slab, slab) += n.grad;
                   });
}

Tensor stack_axis0(const std::vector<Tensor>& parts) {
    check_contract(!parts.empty(), "stack_axis0: empty part list");
    const Shape& s0 = parts[0].shape();
    for (const auto& p : parts) require_same_shape("stack_axis0", parts[0], p);
    const std::int64_t slab = parts[0].size();
    Shape out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), s0.begin(), s0.end());
    Eigen::ArrayXd v(static_cast<Eigen::Index>(slab) * parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) v.segment(i * slab, slab) = parts[i].data();
    return make_op("stack_axis0", std::move(out_shape), std::move(v), parts, [slab](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i)
            add_grad(n.parents[i], Eigen::ArrayXd(n.grad.segment(i * slab, slab)));
    });
}

Tensor l2_normalize(const Tensor& x) {
    check_contract(x.shape().size() >= 1, "l2_normalize: needs at least one axis");
    const int d = x.dim(0);
    const std::int64_t cells = x.size() / d;
    Eigen::ArrayXd norms(cells);
    for (std::int64_t c = 0; c < cells; ++c) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
            const double v = x.data()[k * cells + c];
            acc += v * v;
        }
        norms[c] = std::sqrt(acc);
        if (norms[c] == 0.0)
            throw DegenerateInputError("l2_normalize: zero-norm input at cell " +
                                       std::to_string(c));
    }
    Eigen::ArrayXd y(x.size());
    for (std::int64_t c = 0; c < cells; ++c)
        for (int k = 0; k < d; ++k) y[k * cells + c] = x.data()[k * cells + c] / norms[c];
    return make_op("l2_normalize", x.shape(), y, {x}, [d, cells, norms, y](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::int64_t c = 0; c < cells; ++c) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += n.grad[k * cells + c] * y[k * cells + c];
            for (int k = 0; k < d; ++k)
                n.parents[0]->grad[k * cells + c] +=
                    (n.grad[k * cells + c] - y[k * cells + c] * dot) / norms[c];
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, const Eigen::ArrayXd& targets,
                       const Eigen::ArrayXd& weights) {
    if (targets.size() != logits.size() || weights.size() != logits.size())
        throw DimensionError("bce_with_logits: targets/weights length must match logits (" +
                             std::to_string(logits.size()) + ")");
    const auto& z = logits.data();
    Eigen::ArrayXd per = z.max(0.0) - z * targets + (1.0 + (-z.abs()).exp()).log();
    Eigen::ArrayXd v(1);
    v[0] = (per * weights).sum();
    return make_op("bce_with_logits", {1}, v, {logits}, [targets, weights](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        Eigen::ArrayXd s = sigmoid_array(n.parents[0]->value);
        n.parents[0]->grad += n.grad[0] * weights * (s - targets);
    });
}

}  // namespace iod
