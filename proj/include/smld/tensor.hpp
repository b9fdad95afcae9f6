// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their inputs and a backward closure; `backward`
// orders the recorded graph into a Tape and replays it in reverse.
//
// Gradients accumulate: calling backward twice without `zero_grad` sums the
// two contributions on every leaf. Interior (non-leaf) gradients are released
// after each replay.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smld/errors.hpp"
#include "smld/precision.hpp"

SMLD_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
  public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    /// Leading dimension of a rank-2 tensor.
    std::size_t rows() const;
    /// Trailing dimension of a rank-2 tensor.
    std::size_t cols() const;

    std::span<const real> data() const;
    /// In-place access, intended for optimizers and initializers on leaves.
    std::span<real> mutable_data();
    real item() const;
    real at(std::size_t r, std::size_t c) const;
    std::vector<real> to_vector() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const real> grad() const;
    std::span<real> mutable_grad();
    void zero_grad();

    /// Same values, no history.
    Tensor detach() const;
    /// Deep copy of values (no history), independent storage.
    Tensor clone() const;

    bool defined() const { return node_ != nullptr; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Internal.
    explicit Tensor(std::shared_ptr<detail::Node> node);
    const std::shared_ptr<detail::Node>& node() const { return node_; }

  private:
    std::shared_ptr<detail::Node> node_;
};

/// Ordered list of recorded operations reachable from a root, parents before
/// children. Replaying in reverse visits every node exactly once.
class Tape {
  public:
    static Tape record(const Tensor& root);
    std::size_t size() const { return nodes_.size(); }
    void replay_backward() const;

  private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad leaf.
void backward(const Tensor& loss);

/// Disables graph recording for the current thread while alive.
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

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[m×k] · W[k×n] + bias[n]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor transpose(const Tensor& x);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real value);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor pow_scalar(const Tensor& x, real exponent);
/// Values outside [lo, hi] are clamped and pass no gradient.
Tensor clamp(const Tensor& x, real lo, real hi);

// ---- broadcasting against rows / columns of a rank-2 tensor ---------------

/// x[R×C] + row[C]
Tensor add_row(const Tensor& x, const Tensor& row);
/// x[R×C] ⊙ row[C]
Tensor mul_row(const Tensor& x, const Tensor& row);
/// x[R×C] − col[R]
Tensor sub_col(const Tensor& x, const Tensor& col);
/// x[R×C] ⊙ col[R]
Tensor mul_col(const Tensor& x, const Tensor& col);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per-row mean, shape [R×1].
Tensor row_mean(const Tensor& x);
/// Per-row sum, shape [R×1].
Tensor row_sum(const Tensor& x);
/// Mean over consecutive groups of `group` rows: [R×C] → [R/group × C].
Tensor group_mean_rows(const Tensor& x, std::size_t group);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// ---- normalization / probabilities ----------------------------------------

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
/// Per-row zero mean, unit variance (biased), no affine terms.
Tensor layer_norm(const Tensor& x, real eps);
/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor l2_normalize_rows(const Tensor& x, real eps = real(1e-12));

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// Rows of a rank-2 tensor picked (with repetition) by index.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

/// Multi-head scaled dot-product attention, independently within consecutive
/// groups of `group` rows (one group per sequence in a batch).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t group,
                 std::size_t heads);

// ---- gradient checking ----------------------------------------------------

/// Max over elements of |analytic − numeric| / max(|analytic|, |numeric|, 1e-6),
/// with the numeric gradient a central difference.
/// `f` must build a scalar from its argument through recorded operations.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-3);

/// Same measure for a scalar function of several leaves that `f` closes over.
/// Each leaf is perturbed in place and restored.
double finite_diff_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                double h = 1e-3);

SMLD_NAMESPACE_END
