// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a define-by-run reverse-mode tape.
//
// Every op builds a new value; inputs are never mutated. When any input
// requires a gradient (and grad mode is on), the result records its parents
// and a backward closure. `backward()` topologically orders the reachable
// graph and runs the closures once each in reverse order.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adamoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode;
}

class Tensor {
  public:
    /// Empty tensor (rank 1, extent 0).
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable view for leaves only (parameter updates, finite-difference probes).
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;
    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Gradient buffer; zeros when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Copy of the values with no graph attached.
    Tensor detach() const;
    /// Deep copy of the values that is a fresh leaf with the given flag.
    Tensor clone(bool requires_grad) const;

    /// Reverse-mode pass from this scalar. Leaves accumulate into their
    /// gradient buffers; repeated calls without zero_grad() add up.
    void backward() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend struct TensorAccess;
};

/// One recorded operation as seen by Tape.
struct TapeEntry {
    std::size_t id = 0;
    std::string op;
    std::vector<std::size_t> inputs;  // ids of parent entries
};

/// Topologically ordered view of the graph reachable from a root.
class Tape {
  public:
    static Tape record(const Tensor& root);
    const std::vector<TapeEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    /// True when every entry appears after all of its inputs.
    bool is_topological() const;

  private:
    std::vector<TapeEntry> entries_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]. Each output element sums over k in ascending
/// order, so a row's result never depends on the other rows in the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise ops. The smaller operand may be broadcast when its shape is a
/// suffix of the larger one (leading-dimension expansion only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor silu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Mean of squared differences over all elements. Shapes must match.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Max-subtracted softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& z, int axis = -1);

/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// out[rows[i]] += src[i] into a zero [out_rows, d] tensor.
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> rows, std::size_t out_rows);
/// Flat element pick: out[i] = x.data[flat[i]], shape [flat.size()].
Tensor take(const Tensor& x, std::span<const std::size_t> flat);
/// out[i, :] = x[i, :] * w[i] for x [N,d], w [N].
Tensor mul_rows(const Tensor& x, const Tensor& w);
/// Column means of a 2-D tensor: [N,d] -> [d].
Tensor mean_rows(const Tensor& x);
/// [N,p] ++ [N,q] -> [N,p+q].
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);

/// Layout for fused multi-head attention over packed sequences. Rows of q/k/v
/// are [batch * seq, d_model]; position p of a sequence may attend to keys
/// [0, key_limit[p]) of the same sequence.
struct AttentionLayout {
    std::size_t batch = 1;
    std::size_t seq = 1;
    std::size_t heads = 1;
    std::vector<std::size_t> key_limit;  // size seq; empty means full attention
};

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    bool passed = true;
};

/// Compares tape gradients of `loss_fn()` w.r.t. each tensor in `params`
/// against central differences with the given step. The relative error of an
/// element is |g_tape - g_fd| / max(|g_tape|, |g_fd|, magnitude_floor).
/// Parameters are restored bit-exactly afterwards.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                   double step = 1e-5, double tol = 1e-4,
                                   double magnitude_floor = 1e-3);

/// Single-input form: checks d f(x) / dx.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                   double step = 1e-5, double tol = 1e-4,
                                   double magnitude_floor = 1e-3);

}  // namespace adamoe
