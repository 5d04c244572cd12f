#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value in the model is a 2-D matrix; sequences are stored
// one position per row, images one pixel per row.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace seglm::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
    Mat value;
    Mat grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Mat& g);
};

class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.resize(0, 0); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const { return node_->value(0, 0); }
    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

/// Leaf that collects gradients (a trainable or freezable parameter).
Var parameter(Mat value, bool requires_grad = true);
/// Leaf that never receives gradients.
Var constant(Mat value);
Var scalar(double v);

/// Seeds d(loss)/d(loss) = 1 and propagates through the graph.
void backward(const Var& loss);

/// While alive, ops record no graph (inference mode).
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

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1×c row over every row of a
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a · bᵀ
Var linear(const Var& x, const Var& weight, const Var& bias);  // x·W + b, bias may be undefined

Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Multi-head scaled dot-product attention. q has batch·tq rows, k and v have
/// batch·tk rows; attention never crosses batch blocks. causal requires tq == tk.
Var attention(const Var& q, const Var& k, const Var& v, int n_heads, int batch, bool causal);

// Row manipulation.
Var gather_rows(const Var& table, std::span<const int> rows);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var repeat_rows(const Var& x, int times);

/// Fixed sparse linear map over flattened elements: out[i] = Σ w·in[src].
/// Patch extraction, pixel shuffle, im2col and bilinear resampling are all
/// instances of this.
struct SparseMap {
    Eigen::Index in_rows = 0, in_cols = 0, out_rows = 0, out_cols = 0;
    std::vector<int> offsets;  // size out_rows·out_cols + 1
    std::vector<int> sources;
    std::vector<double> weights;
};
Var apply_map(const Var& x, std::shared_ptr<const SparseMap> map);

/// out[b·p + i] = ⟨a[b], e[b·p + i]⟩ for batch b and p = e.rows()/a.rows().
Var grouped_row_dot(const Var& a, const Var& e);

Var sum_all(const Var& a);
Var mean_all(const Var& a);

// Fused losses, each returning a 1×1 scalar.
/// Mean softmax cross-entropy of logits rows against integer targets.
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);
/// Mean logistic cross-entropy of a logit column against {0,1} targets.
Var bce_with_logits(const Var& logits, std::span<const unsigned char> targets);
/// 1 − (2Σσ·m + ε)/(Σσ + Σm + ε) with σ the sigmoid of the logits.
Var soft_dice(const Var& logits, std::span<const unsigned char> targets, double eps);

}  // namespace seglm::ag
