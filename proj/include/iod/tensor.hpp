#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "iod/errors.hpp"

namespace iod {

using Shape = std::vector<int>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the define-by-run differentiation graph. Nodes are created in
// forward order; `seq` is strictly increasing, so every node's parents have
// smaller sequence numbers and a reverse-seq sweep is a topological order.
struct Node {
    Eigen::ArrayXd value;
    Eigen::ArrayXd grad;  // empty until backward (or an accumulation) touches it
    Shape shape;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Eigen::ArrayXd::Zero(value.size());
    }
};

bool grad_enabled();

}  // namespace detail

// Disables graph construction in scope; used for inference passes.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// Dense N-D array of doubles, optionally attached to the differentiation
// graph. Copies are shallow (shared node); clone_detached() deep-copies.
// A Tensor without graph attachment is immutable by convention after
// construction and safe to share across threads.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_array(Shape shape, Eigen::ArrayXd data, bool requires_grad = false);
    static Tensor from_vector(Shape shape, const std::vector<double>& data,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim(int axis) const;
    std::int64_t size() const;

    const Eigen::ArrayXd& data() const;
    Eigen::ArrayXd& data();  // in-place mutation; caller owns graph consistency
    double operator[](std::int64_t flat_index) const;
    double value() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool requires_grad);
    bool has_grad() const;
    const Eigen::ArrayXd& grad() const;
    void zero_grad();
    void accumulate_grad(const Eigen::ArrayXd& g);

    // Value copy detached from any graph.
    Tensor clone_detached(bool requires_grad = false) const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

  private:
    std::shared_ptr<detail::Node> node_;
};

// --- graph ------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Each reachable node is visited
// exactly once; leaf gradients accumulate additively until zero_grad().
void backward(const Tensor& root);

// Central-difference gradient of a scalar function, the testing oracle for
// backward(). x is restored to its original values on return.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

// --- elementwise and linear ops ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_const(const Tensor& x, double c);
Tensor mul_const(const Tensor& x, double c);
Tensor rsub_const(double c, const Tensor& x);  // c - x
Tensor clamp_min(const Tensor& x, double c);
Tensor pow_const(const Tensor& x, double p);  // requires x >= 0 for fractional p

// Broadcast a learnable scalar over a tensor (eta / zeta style parameters).
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor add_scalar(const Tensor& x, const Tensor& s);

Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reduce_max(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

// Standard cross-correlation. input [C_in,H,W], kernels [C_out,C_in,kh,kw];
// output spatial dims H' = floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);
Tensor channel_bias_add(const Tensor& x, const Tensor& bias);  // x [C,H,W], bias [C]

Tensor reshape(const Tensor& x, Shape shape);
Tensor gather(const Tensor& x, const std::vector<std::int64_t>& indices);
Tensor slice_axis0(const Tensor& x, int index);       // one slab of axis 0
Tensor stack_axis0(const std::vector<Tensor>& parts);  // K x [rest] -> [K,rest]

// Normalizes along axis 0: every trailing "cell" becomes unit Euclidean
// norm. For a 1-D tensor this is plain vector normalization.
Tensor l2_normalize(const Tensor& x);

// Numerically stable sum_i w_i * (max(z,0) - z*y + log(1 + exp(-|z|))).
// targets/weights are fixed arrays of the same length as logits.
Tensor bce_with_logits(const Tensor& logits, const Eigen::ArrayXd& targets,
                       const Eigen::ArrayXd& weights);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_const(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_const(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_const(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return rsub_const(c, a); }
inline Tensor operator*(const Tensor& a, double c) { return mul_const(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_const(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul_const(a, 1.0 / c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace iod
