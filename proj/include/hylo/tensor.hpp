#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "hylo/error.hpp"
#include "hylo/rng.hpp"

namespace hylo {

// Dense rank-<=2 tensor of 64-bit reals, row-major. A vector is rows x 1.
// grad is empty until a backward pass fills it (only when requires_grad).
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw shape_error("tensor: negative dimension");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor vec(std::initializer_list<double> v);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor randn(int r, int c, Rng& rng, double scale);

    int size() const { return rows * cols; }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    bool all_finite() const;
    std::string shape_str() const;
};

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int node = -1;
    int rows = 0;
    int cols = 0;

    bool valid() const { return tape != nullptr && node >= 0; }
    int size() const { return rows * cols; }
    double scalar() const;   // value of a 1x1 node
    Tensor value() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which keeps the
// record topologically sorted; backward is a single reverse sweep. One tape
// per loss evaluation; never shared between threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. param() binds the tensor so backward can write its grad slot;
    // tensors with requires_grad == false behave exactly like constants and
    // never receive (or allocate) a gradient.
    Var param(Tensor& t);
    Var constant(const Tensor& t);
    Var constant(double v);

    // C[i,j] = sum_t A[i,t] * B[t,j]
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);               // elementwise
    Var affine(Var a, double k, double c);  // k*a + c elementwise
    Var tanh(Var a);
    // row-wise softmax with per-row max subtraction
    Var softmax_rows(Var a);
    // column-wise mean over rows; result is a cols x 1 vector
    Var mean_rows(Var a);
    Var sum(Var a);                      // scalar
    Var frob_norm(Var a);                // scalar ||A||_F
    // a.b / (|a||b| + 1e-12), column vectors of equal length
    Var cosine(Var a, Var b);
    // column vectors: a stacked above b
    Var concat(Var a, Var b);
    // n column vectors of equal length d -> n x d matrix (vector i is row i)
    Var stack_rows(std::span<const Var> vs);
    // v (d x 1) becomes row 0, rows of m follow unchanged
    Var prepend_row(Var m, Var v);
    // row r of m as a cols x 1 vector
    Var select_row(Var m, int r);
    Var reshape(Var a, int r, int c);
    // -sum_c t[c] * log(max(p[c], 1e-12)); t must sum to 1 within 1e-6
    Var ce_loss(Var probs, const Tensor& target);

    // Fills grad slots of every bound requires_grad leaf with d(loss)/d(leaf).
    void backward(Var loss);

    Tensor value_of(Var v) const;
    Tensor grad_of(Var v) const;         // zeros if the node holds no gradient
    size_t node_count() const { return nodes_.size(); }

    // Introspection for tests: (node index -> input node indices) and the
    // set of externally bound tensors.
    std::vector<std::vector<int>> edges() const;
    std::vector<const Tensor*> bound_tensors() const;

    // Testing hook: scales the cosine backward rule to verify that the
    // finite-difference checker detects a wrong gradient. Never set in
    // normal operation.
    void inject_gradient_fault(double factor) { fault_factor_ = factor; }

private:
    enum class Op {
        leaf,
        constant,
        matmul,
        transpose,
        add,
        sub,
        mul,
        affine,
        tanh_,
        softmax_rows,
        mean_rows,
        sum,
        frob_norm,
        cosine,
        concat,
        stack_rows,
        prepend_row,
        select_row,
        reshape,
        ce_loss,
    };

    struct Node {
        Op op;
        int rows, cols;
        std::vector<int> in;
        std::vector<double> val;
        std::vector<double> grad;   // sized lazily during backward
        bool needs_grad = false;
        double k = 0.0, c = 0.0;
        int i0 = 0;
        std::vector<double> aux;
        Tensor* bind = nullptr;
    };

    int push(Node&& n);
    Var wrap(int idx) const;
    const Node& node(Var v) const;
    void check_same_tape(Var v) const;
    std::vector<double>& grad_buf(int idx);
    void backprop_node(int idx);
    void check_finite(const Node& n, const char* what) const;

    std::vector<Node> nodes_;
    double fault_factor_ = 1.0;
};

// Central-difference gradient checker. f must evaluate the scalar objective
// at the current parameter values and fill each parameter's grad slot via a
// backward pass. Returns the max over coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const std::function<double()>& f, std::span<Tensor* const> params, double eps);

}  // namespace hylo
