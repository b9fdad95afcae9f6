// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

SMLD_NAMESPACE_BEGIN

namespace detail {

struct Node {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), real(0));
    }
    bool leaf() const { return parents.empty(); }
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

void require_rank2(const Tensor& t, const char* op) {
    require(t.rank() == 2, std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                        " vs " + shape_string(b.shape()));
}

// Builds a result node. History is kept only when recording is enabled and at
// least one input requires gradients.
Tensor make_result(Shape shape, std::vector<real> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

// Gradient buffer of parent `i`, or nullptr when that parent takes no grad.
real* parent_grad(Node& out, std::size_t i) {
    Node& p = *out.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, Fwd fwd, Dfdx dfdx) {
    auto xs = x.data();
    std::vector<real> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
    return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
        real* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& xd = self.parents[0]->data;
        for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += self.grad[i] * dfdx(xd[i], self.data[i]);
    });
}

}  // namespace

// ---- shape helpers --------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "×" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real(0), requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    std::vector<real> data(shape_numel(shape), value);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
    require(shape_numel(shape) == data.size(),
            "Tensor::from: shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(real value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
    require(rank() == 2, "rows(): tensor is not rank 2");
    return shape()[0];
}

std::size_t Tensor::cols() const {
    require(rank() == 2, "cols(): tensor is not rank 2");
    return shape()[1];
}

std::span<const real> Tensor::data() const { return node_->data; }
std::span<real> Tensor::mutable_data() { return node_->data; }

real Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

real Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
std::vector<real> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = value;
    if (!value) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_->leaf(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const real> Tensor::grad() const { return node_->grad; }

std::span<real> Tensor::mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

// ---- tape -----------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const Node*> visited;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const NodePtr& parent = node->parents[next++];
            if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
        } else {
            tape.nodes_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

void Tape::replay_backward() const {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
    for (const auto& node : nodes_) {
        if (!node->leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    if (!loss.requires_grad()) return;
    Tape tape = Tape::record(loss);
    loss.node()->ensure_grad();
    loss.node()->grad[0] += real(1);
    tape.replay_backward();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra -------------------------------------------------------

namespace {

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        real* ci = c + i * n;
        const real* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = ai[p];
            const real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* ai = a + i * n;
        real* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const real* bp = b + p * n;
            real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* ai = a + i * k;
        const real* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real av = ai[p];
            real* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    require(b.rows() == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " · " +
                               shape_string(b.shape()));
    std::vector<real> out(m * n, real(0));
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto& ad = self.parents[0]->data;
        const auto& bd = self.parents[1]->data;
        if (real* ga = parent_grad(self, 0)) gemm_nt(self.grad.data(), bd.data(), ga, m, n, k);
        if (real* gb = parent_grad(self, 1)) gemm_tn(ad.data(), self.grad.data(), gb, m, k, n);
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank2(x, "linear");
    require_rank2(weight, "linear");
    const std::size_t m = x.rows(), k = x.cols(), n = weight.cols();
    require(weight.rows() == k, "linear: input width " + std::to_string(k) + " vs weight " +
                                    shape_string(weight.shape()));
    require(bias.numel() == n, "linear: bias size mismatch");
    std::vector<real> out(m * n);
    auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
    gemm_nn(x.data().data(), weight.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {x, weight, bias}, [m, k, n](Node& self) {
        const auto& xd = self.parents[0]->data;
        const auto& wd = self.parents[1]->data;
        if (real* gx = parent_grad(self, 0)) gemm_nt(self.grad.data(), wd.data(), gx, m, n, k);
        if (real* gw = parent_grad(self, 1)) gemm_tn(xd.data(), self.grad.data(), gw, m, k, n);
        if (real* gb = parent_grad(self, 2)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<real> out(r * c);
    auto xd = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
    return make_result({c, r}, std::move(out), {x}, [r, c](Node& self) {
        if (real* gx = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
        }
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto ad = a.data(), bd = b.data();
    std::vector<real> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (real* g = parent_grad(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto ad = a.data(), bd = b.data();
    std::vector<real> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto ad = a.data(), bd = b.data();
    std::vector<real> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& ad = self.parents[0]->data;
        const auto& bd = self.parents[1]->data;
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
    });
}

Tensor scale(const Tensor& x, real factor) {
    return unary(x, [factor](real v) { return v * factor; }, [factor](real, real) { return factor; });
}

Tensor add_scalar(const Tensor& x, real value) {
    return unary(x, [value](real v) { return v + value; }, [](real, real) { return real(1); });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](real v) { return v > 0 ? v : real(0); }, [](real v, real) { return v > 0 ? real(1) : real(0); });
}

namespace {
constexpr real kGeluC = real(0.7978845608028654);  // sqrt(2/pi)
constexpr real kGeluA = real(0.044715);
}  // namespace

Tensor gelu(const Tensor& x) {
    return unary(
        x,
        [](real v) { return real(0.5) * v * (real(1) + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
        [](real v, real) {
            const real u = kGeluC * (v + kGeluA * v * v * v);
            const real t = std::tanh(u);
            const real du = kGeluC * (real(1) + real(3) * kGeluA * v * v);
            return real(0.5) * (real(1) + t) + real(0.5) * v * (real(1) - t * t) * du;
        });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](real v) { return std::tanh(v); }, [](real, real y) { return real(1) - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](real v) { return std::exp(v); }, [](real, real y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](real v) { return std::log(v); }, [](real v, real) { return real(1) / v; });
}

Tensor square(const Tensor& x) {
    return unary(x, [](real v) { return v * v; }, [](real v, real) { return real(2) * v; });
}

Tensor pow_scalar(const Tensor& x, real exponent) {
    return unary(
        x, [exponent](real v) { return std::pow(v, exponent); },
        [exponent](real v, real) { return exponent * std::pow(v, exponent - real(1)); });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
    return unary(
        x, [lo, hi](real v) { return std::clamp(v, lo, hi); },
        [lo, hi](real v, real) { return (v >= lo && v <= hi) ? real(1) : real(0); });
}

// ---- broadcasting ---------------------------------------------------------

Tensor add_row(const Tensor& x, const Tensor& row) {
    require_rank2(x, "add_row");
    const std::size_t r = x.rows(), c = x.cols();
    require(row.numel() == c, "add_row: row size mismatch");
    auto xd = x.data(), rd = row.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] + rd[j];
    return make_result(x.shape(), std::move(out), {x, row}, [r, c](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    });
}

Tensor mul_row(const Tensor& x, const Tensor& row) {
    require_rank2(x, "mul_row");
    const std::size_t r = x.rows(), c = x.cols();
    require(row.numel() == c, "mul_row: row size mismatch");
    auto xd = x.data(), rd = row.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] * rd[j];
    return make_result(x.shape(), std::move(out), {x, row}, [r, c](Node& self) {
        const auto& xd = self.parents[0]->data;
        const auto& rd = self.parents[1]->data;
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * rd[j];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xd[i * c + j];
    });
}

Tensor sub_col(const Tensor& x, const Tensor& col) {
    require_rank2(x, "sub_col");
    const std::size_t r = x.rows(), c = x.cols();
    require(col.numel() == r, "sub_col: column size mismatch");
    auto xd = x.data(), cd = col.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] - cd[i];
    return make_result(x.shape(), std::move(out), {x, col}, [r, c](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i] -= self.grad[i * c + j];
    });
}

Tensor mul_col(const Tensor& x, const Tensor& col) {
    require_rank2(x, "mul_col");
    const std::size_t r = x.rows(), c = x.cols();
    require(col.numel() == r, "mul_col: column size mismatch");
    auto xd = x.data(), cd = col.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] * cd[i];
    return make_result(x.shape(), std::move(out), {x, col}, [r, c](Node& self) {
        const auto& xd = self.parents[0]->data;
        const auto& cd = self.parents[1]->data;
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * cd[i];
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j] * xd[i * c + j];
    });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto xd = x.data();
    real acc = 0;
    for (real v : xd) acc += v;
    return make_result({}, {acc}, {x}, [](Node& self) {
        if (real* g = parent_grad(self, 0)) {
            const std::size_t n = self.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    auto xd = x.data();
    real acc = 0;
    for (real v : xd) acc += v;
    const real inv = real(1) / static_cast<real>(xd.size());
    return make_result({}, {acc * inv}, {x}, [inv](Node& self) {
        if (real* g = parent_grad(self, 0)) {
            const std::size_t n = self.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0] * inv;
        }
    });
}

Tensor row_sum(const Tensor& x) {
    require_rank2(x, "row_sum");
    const std::size_t r = x.rows(), c = x.cols();
    auto xd = x.data();
    std::vector<real> out(r, real(0));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += xd[i * c + j];
    return make_result({r, 1}, std::move(out), {x}, [r, c](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
    });
}

Tensor row_mean(const Tensor& x) {
    require_rank2(x, "row_mean");
    require(x.cols() >= 1, "row_mean: empty rows");
    return scale(row_sum(x), real(1) / static_cast<real>(x.cols()));
}

Tensor group_mean_rows(const Tensor& x, std::size_t group) {
    require_rank2(x, "group_mean_rows");
    const std::size_t r = x.rows(), c = x.cols();
    require(group > 0 && r % group == 0, "group_mean_rows: rows not divisible by group");
    const std::size_t g = r / group;
    const real inv = real(1) / static_cast<real>(group);
    auto xd = x.data();
    std::vector<real> out(g * c, real(0));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[(i / group) * c + j] += xd[i * c + j] * inv;
    return make_result({g, c}, std::move(out), {x}, [r, c, group, inv](Node& self) {
        if (real* gx = parent_grad(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[(i / group) * c + j] * inv;
    });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
    require_same_shape(prediction, target, "mse_loss");
    auto pd = prediction.data(), td = target.data();
    const std::size_t n = pd.size();
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const real d = pd[i] - td[i];
        acc += d * d;
    }
    const real inv = real(1) / static_cast<real>(n);
    return make_result({}, {acc * inv}, {prediction, target}, [n, inv](Node& self) {
        const auto& pd = self.parents[0]->data;
        const auto& td = self.parents[1]->data;
        const real s = real(2) * inv * self.grad[0];
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < n; ++i) g[i] += s * (pd[i] - td[i]);
        if (real* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < n; ++i) g[i] -= s * (pd[i] - td[i]);
    });
}

// ---- normalization / probabilities ----------------------------------------

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows");
    const std::size_t r = x.rows(), c = x.cols();
    auto xd = x.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const real* xi = xd.data() + i * c;
        real* oi = out.data() + i * c;
        const real mx = *std::max_element(xi, xi + c);
        real s = 0;
        for (std::size_t j = 0; j < c; ++j) s += (oi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < c; ++j) oi[j] /= s;
    }
    return make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
        if (real* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < r; ++i) {
                const real* yi = self.data.data() + i * c;
                const real* gi = self.grad.data() + i * c;
                real dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += yi[j] * (gi[j] - dot);
            }
        }
    });
}

Tensor log_softmax_rows(const Tensor& x) {
    require_rank2(x, "log_softmax_rows");
    const std::size_t r = x.rows(), c = x.cols();
    auto xd = x.data();
    std::vector<real> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const real* xi = xd.data() + i * c;
        const real mx = *std::max_element(xi, xi + c);
        real s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
        const real lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
    }
    return make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
        if (real* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < r; ++i) {
                const real* yi = self.data.data() + i * c;
                const real* gi = self.grad.data() + i * c;
                real gs = 0;
                for (std::size_t j = 0; j < c; ++j) gs += gi[j];
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gi[j] - std::exp(yi[j]) * gs;
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, real eps) {
    require_rank2(x, "layer_norm");
    const std::size_t r = x.rows(), c = x.cols();
    require(c >= 1, "layer_norm: last dimension must be >= 1");
    auto xd = x.data();
    std::vector<real> out(r * c);
    std::vector<real> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const real* xi = xd.data() + i * c;
        real mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<real>(c);
        real var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<real>(c);
        inv_std[i] = real(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xi[j] - mu) * inv_std[i];
    }
    return make_result(x.shape(), std::move(out), {x}, [r, c, inv_std = std::move(inv_std)](Node& self) {
        real* g = parent_grad(self, 0);
        if (!g) return;
        const real inv_c = real(1) / static_cast<real>(c);
        for (std::size_t i = 0; i < r; ++i) {
            const real* yi = self.data.data() + i * c;
            const real* gi = self.grad.data() + i * c;
            real gsum = 0, gy = 0;
            for (std::size_t j = 0; j < c; ++j) {
                gsum += gi[j];
                gy += gi[j] * yi[j];
            }
            for (std::size_t j = 0; j < c; ++j)
                g[i * c + j] += inv_std[i] * (gi[j] - gsum * inv_c - yi[j] * gy * inv_c);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank2(logits, "cross_entropy");
    const std::size_t r = logits.rows(), c = logits.cols();
    require(labels.size() == r, "cross_entropy: label count differs from rows");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c) throw ContractError("cross_entropy: label out of range");
    Tensor logp = log_softmax_rows(logits);
    std::vector<std::size_t> idx(r);
    for (std::size_t i = 0; i < r; ++i) idx[i] = i * c + static_cast<std::size_t>(labels[i]);
    auto ld = logp.data();
    real acc = 0;
    for (std::size_t i : idx) acc += ld[i];
    const real inv = real(1) / static_cast<real>(r);
    return make_result({}, {-acc * inv}, {logp}, [idx = std::move(idx), inv](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i : idx) g[i] -= self.grad[0] * inv;
    });
}

Tensor l2_normalize_rows(const Tensor& x, real eps) {
    return mul_col(x, pow_scalar(add_scalar(row_sum(square(x)), eps), real(-0.5)));
}

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape) + " changes element count");
    return make_result(std::move(shape), x.to_vector(), {x}, [](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
    require_rank2(x, "gather_rows");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    for (std::size_t i : idx) require(i < r, "gather_rows: index out of range");
    auto xd = x.data();
    std::vector<real> out(idx.size() * c);
    for (std::size_t o = 0; o < idx.size(); ++o)
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(idx[o] * c), c, out.begin() + static_cast<std::ptrdiff_t>(o * c));
    const std::size_t n = idx.size();
    return make_result({n, c}, std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t o = 0; o < idx.size(); ++o)
                for (std::size_t j = 0; j < c; ++j) g[idx[o] * c + j] += self.grad[o * c + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        require(p.cols() == c, "concat_rows: column mismatch");
        total += p.rows();
    }
    std::vector<real> out;
    out.reserve(total * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result({total, c}, std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t n = self.parents[p]->data.size();
            if (real* g = parent_grad(self, p))
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            offset += n;
        }
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t r = x.rows(), c = x.cols();
    require(start + count <= c, "slice_cols: range out of bounds");
    auto xd = x.data();
    std::vector<real> out(r * count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xd[i * c + start + j];
    return make_result({r, count}, std::move(out), {x}, [r, c, start, count](Node& self) {
        if (real* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t group, std::size_t heads) {
    require_rank2(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const std::size_t r = q.rows(), c = q.cols();
    require(group > 0 && r % group == 0, "attention: rows not divisible by group size");
    require(heads > 0 && c % heads == 0, "attention: width not divisible by heads");
    const std::size_t hd = c / heads, groups = r / group;
    const real sc = real(1) / std::sqrt(static_cast<real>(hd));
    auto qd = q.data(), kd = k.data(), vd = v.data();
    std::vector<real> out(r * c, real(0));
    // probs[(g*heads + h)][i][j]
    std::vector<real> probs(groups * heads * group * group);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
            real* P = probs.data() + (g * heads + h) * group * group;
            for (std::size_t i = 0; i < group; ++i) {
                const real* qi = qd.data() + (g * group + i) * c + h * hd;
                real mx = -std::numeric_limits<real>::infinity();
                for (std::size_t j = 0; j < group; ++j) {
                    const real* kj = kd.data() + (g * group + j) * c + h * hd;
                    real s = 0;
                    for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
                    P[i * group + j] = s * sc;
                    mx = std::max(mx, P[i * group + j]);
                }
                real z = 0;
                for (std::size_t j = 0; j < group; ++j) z += (P[i * group + j] = std::exp(P[i * group + j] - mx));
                for (std::size_t j = 0; j < group; ++j) P[i * group + j] /= z;
                real* oi = out.data() + (g * group + i) * c + h * hd;
                for (std::size_t j = 0; j < group; ++j) {
                    const real p = P[i * group + j];
                    const real* vj = vd.data() + (g * group + j) * c + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) oi[e] += p * vj[e];
                }
            }
        }
    }
    return make_result(
        q.shape(), std::move(out), {q, k, v},
        [r, c, group, heads, hd, groups, sc, probs = std::move(probs)](Node& self) {
            const auto& qd = self.parents[0]->data;
            const auto& kd = self.parents[1]->data;
            const auto& vd = self.parents[2]->data;
            real* gq = parent_grad(self, 0);
            real* gk = parent_grad(self, 1);
            real* gv = parent_grad(self, 2);
            std::vector<real> dP(group);
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const real* P = probs.data() + (g * heads + h) * group * group;
                    for (std::size_t i = 0; i < group; ++i) {
                        const real* go = self.grad.data() + (g * group + i) * c + h * hd;
                        real dot = 0;
                        for (std::size_t j = 0; j < group; ++j) {
                            const real* vj = vd.data() + (g * group + j) * c + h * hd;
                            real s = 0;
                            for (std::size_t e = 0; e < hd; ++e) s += go[e] * vj[e];
                            dP[j] = s;
                            dot += s * P[i * group + j];
                            if (gv) {
                                real* gvj = gv + (g * group + j) * c + h * hd;
                                const real p = P[i * group + j];
                                for (std::size_t e = 0; e < hd; ++e) gvj[e] += p * go[e];
                            }
                        }
                        const real* qi = qd.data() + (g * group + i) * c + h * hd;
                        for (std::size_t j = 0; j < group; ++j) {
                            const real ds = P[i * group + j] * (dP[j] - dot) * sc;
                            const real* kj = kd.data() + (g * group + j) * c + h * hd;
                            if (gq) {
                                real* gqi = gq + (g * group + i) * c + h * hd;
                                for (std::size_t e = 0; e < hd; ++e) gqi[e] += ds * kj[e];
                            }
                            if (gk) {
                                real* gkj = gk + (g * group + j) * c + h * hd;
                                for (std::size_t e = 0; e < hd; ++e) gkj[e] += ds * qi[e];
                            }
                        }
                    }
                }
            }
            (void)r;
        });
}

// ---- gradient checking ----------------------------------------------------

// Components with a true gradient of zero (e.g. biases under a shift
// invariance) carry only cancellation noise; they are compared at this scale.
constexpr double kGradientFloor = 1e-6;

double finite_diff_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h) {
    if (h <= 0) throw ContractError("finite_diff_check: step must be positive");
    for (auto& leaf : leaves) {
        if (!leaf.is_leaf()) throw ContractError("finite_diff_check: inputs must be leaves");
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    backward(f());
    double worst = 0;
    for (auto& leaf : leaves) {
        std::vector<real> analytic(leaf.numel(), real(0));
        if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const real saved = values[i];
            // The perturbed values are rounded to `real`; divide by the step
            // actually taken.
            const real hi = static_cast<real>(saved + h);
            const real lo = static_cast<real>(saved - h);
            double up = 0, down = 0;
            {
                NoGradGuard guard;
                values[i] = hi;
                up = static_cast<double>(f().item());
                values[i] = lo;
                down = static_cast<double>(f().item());
            }
            values[i] = saved;
            const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double a = static_cast<double>(analytic[i]);
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradientFloor}));
        }
        leaf.zero_grad();
    }
    return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor leaf = x.clone();
    return finite_diff_check_leaves([&] { return f(leaf); }, {leaf}, h);
}

SMLD_NAMESPACE_END
