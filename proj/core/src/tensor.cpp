// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "adamoe/errors.hpp"

namespace adamoe {

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads self.grad and accumulates into the parents that require grad.
    std::function<void(TensorNode&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

}  // namespace detail

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorAccess {
    static const NodePtr& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;

const NodePtr& node_of(const Tensor& t) { return TensorAccess::node(t); }

[[maybe_unused]] bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Builds an op result. Records parents only when a gradient can flow.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const Tensor* in : inputs) {
        inputs_finite = inputs_finite && all_finite(node_of(*in)->data);
    }
    if (inputs_finite && !all_finite(node->data)) {
        throw NumericalError(std::string("non-finite output from ") + op + " on finite inputs");
    }
#endif
    if (g_grad_enabled) {
        bool any = false;
        for (const Tensor* in : inputs) {
            any = any || node_of(*in)->requires_grad;
        }
        if (any) {
            node->requires_grad = true;
            for (const Tensor* in : inputs) {
                node->parents.push_back(node_of(*in));
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return TensorAccess::wrap(std::move(node));
}

std::string two_shapes(const Tensor& a, const Tensor& b) {
    return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// C[m,n] (+)= A[m,k] B[k,n], i-p-j order.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

std::vector<double> transpose(const double* x, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    return out;
}

// Shared implementation of add/sub/mul with suffix broadcasting.
enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
    const bool a_big = is_suffix(b.shape(), a.shape());
    const bool b_big = !a_big && is_suffix(a.shape(), b.shape());
    if (!a_big && !b_big) {
        throw DimensionError(std::string(op) + ": incompatible shapes " + two_shapes(a, b));
    }
    const Shape out_shape = a_big ? a.shape() : b.shape();
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    std::vector<double> out(n);
    if (n > 0 && (na == 0 || nb == 0)) {
        throw DimensionError(std::string(op) + ": empty operand " + two_shapes(a, b));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[na == n ? i : i % na];
        const double y = bd[nb == n ? i : i % nb];
        switch (kind) {
            case BinaryKind::Add: out[i] = x + y; break;
            case BinaryKind::Sub: out[i] = x - y; break;
            case BinaryKind::Mul: out[i] = x * y; break;
        }
    }
    return make_result(op, out_shape, std::move(out), {&a, &b}, [kind, n, na, nb](TensorNode& self) {
        TensorNode& pa = *self.parents[0];
        TensorNode& pb = *self.parents[1];
        const std::vector<double>& g = self.grad;
        if (pa.requires_grad) {
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = kind == BinaryKind::Mul ? g[i] * pb.data[nb == n ? i : i % nb] : g[i];
                ga[na == n ? i : i % na] += gi;
            }
        }
        if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                double gi = g[i];
                if (kind == BinaryKind::Sub) {
                    gi = -gi;
                } else if (kind == BinaryKind::Mul) {
                    gi *= pa.data[na == n ? i : i % na];
                }
                gb[nb == n ? i : i % nb] += gi;
            }
        }
    });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) { node_->shape = {0}; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
    if (node_->backward_fn) {
        throw ContractError("mutable_data() on a non-leaf tensor (" + std::string(node_->op) + ")");
    }
    return node_->data;
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i) const {
    if (i >= numel()) {
        throw IndexError("flat index " + std::to_string(i) + " out of range for " + shape_str(shape()));
    }
    return node_->data[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    require_rank(*this, 2, "at");
    if (row >= dim(0) || col >= dim(1)) {
        throw IndexError("index (" + std::to_string(row) + "," + std::to_string(col) + ") out of range for " +
                         shape_str(shape()));
    }
    return node_->data[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }

std::span<const double> Tensor::grad() const { return node_->ensure_grad(); }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

namespace {

// Post-order over nodes that require grad; parents precede children.
std::vector<TensorNode*> topo_order(TensorNode* root, bool grad_only) {
    std::vector<TensorNode*> order;
    std::unordered_map<TensorNode*, bool> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited[root] = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if ((!grad_only || parent->requires_grad) && !visited[parent]) {
                visited[parent] = true;
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    const std::vector<TensorNode*> order = topo_order(node_.get(), true);
    for (TensorNode* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->backward_fn(*n);
            if (n != node_.get()) {
                std::vector<double>().swap(n->grad);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
    Tape tape;
    const std::vector<TensorNode*> order = topo_order(node_of(root).get(), false);
    std::unordered_map<const TensorNode*, std::size_t> ids;
    for (TensorNode* n : order) {
        TapeEntry entry;
        entry.id = tape.entries_.size();
        entry.op = n->op;
        for (const auto& p : n->parents) {
            entry.inputs.push_back(ids.at(p.get()));
        }
        ids[n] = entry.id;
        tape.entries_.push_back(std::move(entry));
    }
    return tape;
}

bool Tape::is_topological() const {
    for (const TapeEntry& e : entries_) {
        for (std::size_t in : e.inputs) {
            if (in >= e.id) {
                return false;
            }
        }
    }
    return true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: shape mismatch " + two_shapes(a, b));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode& self) {
        TensorNode& pa = *self.parents[0];
        TensorNode& pb = *self.parents[1];
        if (pa.requires_grad) {
            // dA = dC B^T
            const std::vector<double> bt = transpose(pb.data.data(), k, n);
            gemm_nn(self.grad.data(), bt.data(), pa.ensure_grad().data(), m, n, k);
        }
        if (pb.requires_grad) {
            // dB = A^T dC
            const std::vector<double> at = transpose(pa.data.data(), m, k);
            gemm_nn(at.data(), self.grad.data(), pb.ensure_grad().data(), k, m, n);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& x : out) {
        x *= factor;
    }
    return make_result("scale", a.shape(), std::move(out), {&a}, [factor](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += factor * self.grad[i];
        }
    });
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * sigmoid(x[i]);
    }
    return make_result("silu", a.shape(), std::move(out), {&a}, [](TensorNode& self) {
        TensorNode& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = sigmoid(p.data[i]);
            g[i] += self.grad[i] * s * (1.0 + p.data[i] * (1.0 - s));
        }
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mse: shape mismatch " + two_shapes(a, b));
    }
    const std::size_t n = a.numel();
    if (n == 0) {
        throw DimensionError("mse: empty operands");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    return make_result("mse", {}, {acc / static_cast<double>(n)}, {&a, &b}, [n](TensorNode& self) {
        TensorNode& pa = *self.parents[0];
        TensorNode& pb = *self.parents[1];
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += c * (pa.data[i] - pb.data[i]);
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] -= c * (pa.data[i] - pb.data[i]);
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) {
        acc += x;
    }
    return make_result("sum", {}, {acc}, {&a}, [](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& x : g) {
            x += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) {
        throw DimensionError("mean: empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& z, int axis) {
    const int r = static_cast<int>(z.rank());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(z.shape()));
    }
    const std::size_t n = z.shape()[ax];
    if (n == 0) {
        throw DimensionError("softmax: empty axis in " + shape_str(z.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= z.shape()[i];
    for (int i = ax + 1; i < r; ++i) inner *= z.shape()[i];

    const auto x = z.data();
    std::vector<double> out(z.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = x[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(x[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    }
    return make_result("softmax", z.shape(), std::move(out), {&z}, [outer, inner, n](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.data;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t idx = base + j * inner;
                    g[idx] += y[idx] * (gy[idx] - dot);
                }
            }
        }
    });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    if (x.rank() == 0 || gain.rank() != 1 || x.shape().back() != gain.dim(0) || gain.dim(0) == 0) {
        throw DimensionError("rms_norm: shape mismatch " + two_shapes(x, gain));
    }
    const std::size_t d = gain.dim(0);
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    const auto gv = gain.data();
    std::vector<double> out(x.numel());
    auto inv = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) ms += xv[r * d + j] * xv[r * d + j];
        ms /= static_cast<double>(d);
        const double ri = 1.0 / std::sqrt(ms + eps);
        (*inv)[r] = ri;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * ri * gv[j];
    }
    return make_result("rms_norm", x.shape(), std::move(out), {&x, &gain}, [inv, rows, d](TensorNode& self) {
        TensorNode& px = *self.parents[0];
        TensorNode& pg = *self.parents[1];
        const auto& gy = self.grad;
        std::vector<double>* gx = px.requires_grad ? &px.ensure_grad() : nullptr;
        std::vector<double>* gg = pg.requires_grad ? &pg.ensure_grad() : nullptr;
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double ri = (*inv)[r];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double xhat = px.data[r * d + j] * ri;
                if (gg) (*gg)[j] += gy[r * d + j] * xhat;
                dxhat[j] = gy[r * d + j] * pg.data[j];
                dot += dxhat[j] * xhat;
            }
            if (gx) {
                dot /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double xhat = px.data[r * d + j] * ri;
                    (*gx)[r * d + j] += ri * (dxhat[j] - xhat * dot);
                }
            }
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    const std::size_t t = x.dim(0), d = x.dim(1);
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= t) {
            throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                             shape_str(x.shape()));
        }
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("gather_rows", {rows.size(), d}, std::move(out), {&x},
                       [idx = std::move(idx), d](TensorNode& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
                           }
                       });
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> rows, std::size_t out_rows) {
    require_rank(src, 2, "scatter_add_rows");
    if (src.dim(0) != rows.size()) {
        throw DimensionError("scatter_add_rows: " + std::to_string(rows.size()) + " indices for source " +
                             shape_str(src.shape()));
    }
    const std::size_t d = src.dim(1);
    std::vector<double> out(out_rows * d, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= out_rows) {
            throw IndexError("scatter_add_rows: row " + std::to_string(rows[i]) + " out of range [0, " +
                             std::to_string(out_rows) + ")");
        }
        for (std::size_t j = 0; j < d; ++j) out[rows[i] * d + j] += src.data()[i * d + j];
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("scatter_add_rows", {out_rows, d}, std::move(out), {&src},
                       [idx = std::move(idx), d](TensorNode& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[idx[i] * d + j];
                           }
                       });
}

Tensor take(const Tensor& x, std::span<const std::size_t> flat) {
    std::vector<double> out(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        if (flat[i] >= x.numel()) {
            throw IndexError("take: index " + std::to_string(flat[i]) + " out of range for " + shape_str(x.shape()));
        }
        out[i] = x.data()[flat[i]];
    }
    std::vector<std::size_t> idx(flat.begin(), flat.end());
    return make_result("take", {flat.size()}, std::move(out), {&x}, [idx = std::move(idx)](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

Tensor mul_rows(const Tensor& x, const Tensor& w) {
    require_rank(x, 2, "mul_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (w.numel() != n || (w.rank() != 1 && !(w.rank() == 2 && w.dim(1) == 1))) {
        throw DimensionError("mul_rows: shape mismatch " + two_shapes(x, w));
    }
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.data()[i * d + j] * w.data()[i];
    }
    return make_result("mul_rows", x.shape(), std::move(out), {&x, &w}, [n, d](TensorNode& self) {
        TensorNode& px = *self.parents[0];
        TensorNode& pw = *self.parents[1];
        if (px.requires_grad) {
            auto& g = px.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * pw.data[i];
        }
        if (pw.requires_grad) {
            auto& g = pw.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * px.data[i * d + j];
                g[i] += acc;
            }
        }
    });
}

Tensor mean_rows(const Tensor& x) {
    require_rank(x, 2, "mean_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (n == 0) {
        throw ContractError("mean_rows: no rows");
    }
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
    for (double& v : out) v /= static_cast<double>(n);
    return make_result("mean_rows", {d}, std::move(out), {&x}, [n, d](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[j] * inv;
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_cols");
    require_rank(b, 2, "concat_cols");
    if (a.dim(0) != b.dim(0)) {
        throw DimensionError("concat_cols: row mismatch " + two_shapes(a, b));
    }
    const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
    std::vector<double> out(n * (p + q));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) out[i * (p + q) + j] = a.data()[i * p + j];
        for (std::size_t j = 0; j < q; ++j) out[i * (p + q) + p + j] = b.data()[i * q + j];
    }
    return make_result("concat_cols", {n, p + q}, std::move(out), {&a, &b}, [n, p, q](TensorNode& self) {
        TensorNode& pa = *self.parents[0];
        TensorNode& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < p; ++j) g[i * p + j] += self.grad[i * (p + q) + j];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < q; ++j) g[i * q + j] += self.grad[i * (p + q) + p + j];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {&x}, [](TensorNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
    require_rank(q, 2, "attention");
    if (q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError("attention: q/k/v shapes differ " + two_shapes(q, k) + ", " + shape_str(v.shape()));
    }
    const std::size_t B = layout.batch, T = layout.seq, H = layout.heads;
    const std::size_t D = q.dim(1);
    if (B * T != q.dim(0) || H == 0 || D % H != 0) {
        throw DimensionError("attention: layout batch=" + std::to_string(B) + " seq=" + std::to_string(T) +
                             " heads=" + std::to_string(H) + " does not fit " + shape_str(q.shape()));
    }
    std::vector<std::size_t> limit = layout.key_limit;
    if (limit.empty()) {
        limit.assign(T, T);
    }
    if (limit.size() != T) {
        throw DimensionError("attention: key_limit has " + std::to_string(limit.size()) + " entries for seq " +
                             std::to_string(T));
    }
    for (std::size_t l : limit) {
        if (l == 0 || l > T) {
            throw DimensionError("attention: key limit " + std::to_string(l) + " outside [1, " + std::to_string(T) + "]");
        }
    }
    const std::size_t dh = D / H;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto qd = q.data(), kd = k.data(), vd = v.data();
    auto probs = std::make_shared<std::vector<double>>(B * H * T * T, 0.0);
    std::vector<double> out(q.numel(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                const double* qi = &qd[(b * T + i) * D + h * dh];
                double* p = &(*probs)[((b * H + h) * T + i) * T];
                double mx = -INFINITY;
                for (std::size_t j = 0; j < limit[i]; ++j) {
                    const double* kj = &kd[(b * T + j) * D + h * dh];
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    p[j] = s * sc;
                    mx = std::max(mx, p[j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < limit[i]; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    total += p[j];
                }
                double* oi = &out[(b * T + i) * D + h * dh];
                for (std::size_t j = 0; j < limit[i]; ++j) {
                    p[j] /= total;
                    const double* vj = &vd[(b * T + j) * D + h * dh];
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
                }
            }
        }
    }
    return make_result("attention", q.shape(), std::move(out), {&q, &k, &v},
                       [probs, limit, B, T, H, D, dh, sc](TensorNode& self) {
                           TensorNode& pq = *self.parents[0];
                           TensorNode& pk = *self.parents[1];
                           TensorNode& pv = *self.parents[2];
                           auto& gq = pq.ensure_grad();
                           auto& gk = pk.ensure_grad();
                           auto& gv = pv.ensure_grad();
                           std::vector<double> dp(T);
                           for (std::size_t b = 0; b < B; ++b) {
                               for (std::size_t h = 0; h < H; ++h) {
                                   for (std::size_t i = 0; i < T; ++i) {
                                       const double* p = &(*probs)[((b * H + h) * T + i) * T];
                                       const std::size_t qoff = (b * T + i) * D + h * dh;
                                       const double* go = &self.grad[qoff];
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < limit[i]; ++j) {
                                           const std::size_t koff = (b * T + j) * D + h * dh;
                                           double s = 0.0;
                                           for (std::size_t c = 0; c < dh; ++c) {
                                               s += go[c] * pv.data[koff + c];
                                               gv[koff + c] += p[j] * go[c];
                                           }
                                           dp[j] = s;
                                           dot += p[j] * s;
                                       }
                                       for (std::size_t j = 0; j < limit[i]; ++j) {
                                           const double ds = p[j] * (dp[j] - dot) * sc;
                                           const std::size_t koff = (b * T + j) * D + h * dh;
                                           for (std::size_t c = 0; c < dh; ++c) {
                                               gq[qoff + c] += ds * pk.data[koff + c];
                                               gk[koff + c] += ds * pq.data[qoff + c];
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

}  // namespace adamoe
