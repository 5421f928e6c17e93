#include "hylo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hylo {

namespace {
constexpr double kCosEps = 1e-12;
constexpr double kLogClamp = 1e-12;

std::string shape_of(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }
}  // namespace

Tensor Tensor::vec(std::initializer_list<double> v) {
    Tensor t(static_cast<int>(v.size()), 1);
    std::copy(v.begin(), v.end(), t.data.begin());
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) throw shape_error("from_rows: ragged rows");
        std::copy(row.begin(), row.end(), t.data.begin() + static_cast<size_t>(i) * c);
        ++i;
    }
    return t;
}

Tensor Tensor::randn(int r, int c, Rng& rng, double scale) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const { return shape_of(rows, cols); }

double Var::scalar() const {
    if (!valid()) throw state_error("scalar: invalid var");
    if (rows != 1 || cols != 1) throw contract_error("scalar: node is " + shape_of(rows, cols) + ", expected 1x1");
    return tape->value_of(*this).data[0];
}

Tensor Var::value() const {
    if (!valid()) throw state_error("value: invalid var");
    return tape->value_of(*this);
}

int Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::wrap(int idx) const {
    const Node& n = nodes_[idx];
    return Var{const_cast<Tape*>(this), idx, n.rows, n.cols};
}

const Tape::Node& Tape::node(Var v) const {
    check_same_tape(v);
    return nodes_[v.node];
}

void Tape::check_same_tape(Var v) const {
    if (v.tape != this || v.node < 0 || v.node >= static_cast<int>(nodes_.size()))
        throw state_error("var does not belong to this tape");
}

void Tape::check_finite(const Node& n, const char* what) const {
    for (double v : n.val)
        if (!std::isfinite(v)) throw numeric_error(std::string(what) + ": non-finite result");
}

Var Tape::param(Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.rows = t.rows;
    n.cols = t.cols;
    n.val = t.data;
    n.needs_grad = t.requires_grad;
    n.bind = t.requires_grad ? &t : nullptr;
    return wrap(push(std::move(n)));
}

Var Tape::constant(const Tensor& t) {
    Node n;
    n.op = Op::constant;
    n.rows = t.rows;
    n.cols = t.cols;
    n.val = t.data;
    return wrap(push(std::move(n)));
}

Var Tape::constant(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return constant(t);
}

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.cols != b.rows)
        throw shape_error("matmul: " + shape_of(a.rows, a.cols) + " x " + shape_of(b.rows, b.cols));
    Node n;
    n.op = Op::matmul;
    n.rows = a.rows;
    n.cols = b.cols;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    n.val.assign(static_cast<size_t>(a.rows) * b.cols, 0.0);
    const auto& av = nodes_[a.node].val;
    const auto& bv = nodes_[b.node].val;
    for (int i = 0; i < a.rows; ++i) {
        for (int t = 0; t < a.cols; ++t) {
            double x = av[static_cast<size_t>(i) * a.cols + t];
            if (x == 0.0) continue;
            const double* brow = bv.data() + static_cast<size_t>(t) * b.cols;
            double* orow = n.val.data() + static_cast<size_t>(i) * b.cols;
            for (int j = 0; j < b.cols; ++j) orow[j] += x * brow[j];
        }
    }
    check_finite(n, "matmul");
    return wrap(push(std::move(n)));
}

Var Tape::transpose(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::transpose;
    n.rows = a.cols;
    n.cols = a.rows;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.val.assign(static_cast<size_t>(a.rows) * a.cols, 0.0);
    const auto& av = nodes_[a.node].val;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
            n.val[static_cast<size_t>(j) * a.rows + i] = av[static_cast<size_t>(i) * a.cols + j];
    return wrap(push(std::move(n)));
}

Var Tape::add(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.rows != b.rows || a.cols != b.cols)
        throw shape_error("add: " + shape_of(a.rows, a.cols) + " vs " + shape_of(b.rows, b.cols));
    Node n;
    n.op = Op::add;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    n.val = nodes_[a.node].val;
    const auto& bv = nodes_[b.node].val;
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] += bv[i];
    check_finite(n, "add");
    return wrap(push(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.rows != b.rows || a.cols != b.cols)
        throw shape_error("sub: " + shape_of(a.rows, a.cols) + " vs " + shape_of(b.rows, b.cols));
    Node n;
    n.op = Op::sub;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    n.val = nodes_[a.node].val;
    const auto& bv = nodes_[b.node].val;
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] -= bv[i];
    check_finite(n, "sub");
    return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.rows != b.rows || a.cols != b.cols)
        throw shape_error("mul: " + shape_of(a.rows, a.cols) + " vs " + shape_of(b.rows, b.cols));
    Node n;
    n.op = Op::mul;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    n.val = nodes_[a.node].val;
    const auto& bv = nodes_[b.node].val;
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] *= bv[i];
    check_finite(n, "mul");
    return wrap(push(std::move(n)));
}

Var Tape::affine(Var a, double k, double c) {
    check_same_tape(a);
    Node n;
    n.op = Op::affine;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.k = k;
    n.c = c;
    n.val = nodes_[a.node].val;
    for (auto& v : n.val) v = k * v + c;
    check_finite(n, "affine");
    return wrap(push(std::move(n)));
}

Var Tape::tanh(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::tanh_;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.val = nodes_[a.node].val;
    for (auto& v : n.val) v = std::tanh(v);
    return wrap(push(std::move(n)));
}

Var Tape::softmax_rows(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::softmax_rows;
    n.rows = a.rows;
    n.cols = a.cols;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.val = nodes_[a.node].val;
    for (int i = 0; i < a.rows; ++i) {
        double* row = n.val.data() + static_cast<size_t>(i) * a.cols;
        double m = row[0];
        for (int j = 1; j < a.cols; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            row[j] = std::exp(row[j] - m);
            s += row[j];
        }
        for (int j = 0; j < a.cols; ++j) row[j] /= s;
    }
    check_finite(n, "softmax_rows");
    return wrap(push(std::move(n)));
}

Var Tape::mean_rows(Var a) {
    check_same_tape(a);
    if (a.rows < 1) throw empty_error("mean_rows: zero rows");
    Node n;
    n.op = Op::mean_rows;
    n.rows = a.cols;
    n.cols = 1;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.val.assign(a.cols, 0.0);
    const auto& av = nodes_[a.node].val;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) n.val[j] += av[static_cast<size_t>(i) * a.cols + j];
    for (auto& v : n.val) v /= a.rows;
    return wrap(push(std::move(n)));
}

Var Tape::sum(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::sum;
    n.rows = 1;
    n.cols = 1;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    double s = 0.0;
    for (double v : nodes_[a.node].val) s += v;
    n.val = {s};
    check_finite(n, "sum");
    return wrap(push(std::move(n)));
}

Var Tape::frob_norm(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::frob_norm;
    n.rows = 1;
    n.cols = 1;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    double s = 0.0;
    for (double v : nodes_[a.node].val) s += v * v;
    n.val = {std::sqrt(s)};
    check_finite(n, "frob_norm");
    return wrap(push(std::move(n)));
}

Var Tape::cosine(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.cols != 1 || b.cols != 1)
        throw shape_error("cosine: expects column vectors, got " + shape_of(a.rows, a.cols) + " and " +
                          shape_of(b.rows, b.cols));
    if (a.rows != b.rows)
        throw shape_error("cosine: length " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
    Node n;
    n.op = Op::cosine;
    n.rows = 1;
    n.cols = 1;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    const auto& av = nodes_[a.node].val;
    const auto& bv = nodes_[b.node].val;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        dot += av[i] * bv[i];
        na += av[i] * av[i];
        nb += bv[i] * bv[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    n.val = {dot / (na * nb + kCosEps)};
    check_finite(n, "cosine");
    return wrap(push(std::move(n)));
}

Var Tape::concat(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (a.cols != 1 || b.cols != 1)
        throw shape_error("concat: expects column vectors, got " + shape_of(a.rows, a.cols) + " and " +
                          shape_of(b.rows, b.cols));
    Node n;
    n.op = Op::concat;
    n.rows = a.rows + b.rows;
    n.cols = 1;
    n.in = {a.node, b.node};
    n.needs_grad = nodes_[a.node].needs_grad || nodes_[b.node].needs_grad;
    n.val = nodes_[a.node].val;
    n.val.insert(n.val.end(), nodes_[b.node].val.begin(), nodes_[b.node].val.end());
    return wrap(push(std::move(n)));
}

Var Tape::stack_rows(std::span<const Var> vs) {
    if (vs.empty()) throw empty_error("stack_rows: no vectors");
    int d = vs[0].rows;
    Node n;
    n.op = Op::stack_rows;
    n.rows = static_cast<int>(vs.size());
    n.cols = d;
    for (const Var& v : vs) {
        check_same_tape(v);
        if (v.cols != 1 || v.rows != d)
            throw shape_error("stack_rows: expected " + shape_of(d, 1) + ", got " + shape_of(v.rows, v.cols));
        n.in.push_back(v.node);
        n.needs_grad = n.needs_grad || nodes_[v.node].needs_grad;
        n.val.insert(n.val.end(), nodes_[v.node].val.begin(), nodes_[v.node].val.end());
    }
    return wrap(push(std::move(n)));
}

Var Tape::prepend_row(Var m, Var v) {
    check_same_tape(m);
    check_same_tape(v);
    if (v.cols != 1 || v.rows != m.cols)
        throw shape_error("prepend_row: vector " + shape_of(v.rows, v.cols) + " vs matrix " +
                          shape_of(m.rows, m.cols));
    Node n;
    n.op = Op::prepend_row;
    n.rows = m.rows + 1;
    n.cols = m.cols;
    n.in = {m.node, v.node};
    n.needs_grad = nodes_[m.node].needs_grad || nodes_[v.node].needs_grad;
    n.val = nodes_[v.node].val;
    n.val.insert(n.val.end(), nodes_[m.node].val.begin(), nodes_[m.node].val.end());
    return wrap(push(std::move(n)));
}

Var Tape::select_row(Var m, int r) {
    check_same_tape(m);
    if (r < 0 || r >= m.rows)
        throw index_error("select_row: row " + std::to_string(r) + " out of " + std::to_string(m.rows));
    Node n;
    n.op = Op::select_row;
    n.rows = m.cols;
    n.cols = 1;
    n.in = {m.node};
    n.needs_grad = nodes_[m.node].needs_grad;
    n.i0 = r;
    const auto& mv = nodes_[m.node].val;
    n.val.assign(mv.begin() + static_cast<size_t>(r) * m.cols, mv.begin() + static_cast<size_t>(r + 1) * m.cols);
    return wrap(push(std::move(n)));
}

Var Tape::reshape(Var a, int r, int c) {
    check_same_tape(a);
    if (r * c != a.rows * a.cols)
        throw shape_error("reshape: " + shape_of(a.rows, a.cols) + " -> " + shape_of(r, c));
    Node n;
    n.op = Op::reshape;
    n.rows = r;
    n.cols = c;
    n.in = {a.node};
    n.needs_grad = nodes_[a.node].needs_grad;
    n.val = nodes_[a.node].val;
    return wrap(push(std::move(n)));
}

Var Tape::ce_loss(Var probs, const Tensor& target) {
    check_same_tape(probs);
    if (probs.cols != 1) throw shape_error("ce_loss: expects a column vector, got " + shape_of(probs.rows, probs.cols));
    if (target.rows != probs.rows || target.cols != 1)
        throw shape_error("ce_loss: target " + target.shape_str() + " vs probs " + shape_of(probs.rows, probs.cols));
    double tsum = 0.0;
    for (double v : target.data) tsum += v;
    if (std::abs(tsum - 1.0) > 1e-6)
        throw contract_error("ce_loss: target sums to " + std::to_string(tsum) + ", expected 1");
    Node n;
    n.op = Op::ce_loss;
    n.rows = 1;
    n.cols = 1;
    n.in = {probs.node};
    n.needs_grad = nodes_[probs.node].needs_grad;
    n.aux = target.data;
    const auto& pv = nodes_[probs.node].val;
    double loss = 0.0;
    for (size_t i = 0; i < pv.size(); ++i) loss -= n.aux[i] * std::log(std::max(pv[i], kLogClamp));
    n.val = {loss};
    check_finite(n, "ce_loss");
    return wrap(push(std::move(n)));
}

std::vector<double>& Tape::grad_buf(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
}

void Tape::backprop_node(int idx) {
    Node& n = nodes_[idx];
    const auto& g = n.grad;
    auto needs = [&](int in_idx) { return nodes_[in_idx].needs_grad; };
    switch (n.op) {
        case Op::leaf:
        case Op::constant:
            break;
        case Op::matmul: {
            int ai = n.in[0], bi = n.in[1];
            const Node& a = nodes_[ai];
            const Node& b = nodes_[bi];
            if (needs(ai)) {
                auto& ga = grad_buf(ai);
                for (int i = 0; i < a.rows; ++i)
                    for (int t = 0; t < a.cols; ++t) {
                        double acc = 0.0;
                        const double* grow = g.data() + static_cast<size_t>(i) * n.cols;
                        const double* brow = b.val.data() + static_cast<size_t>(t) * b.cols;
                        for (int j = 0; j < n.cols; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * a.cols + t] += acc;
                    }
            }
            if (needs(bi)) {
                auto& gb = grad_buf(bi);
                for (int t = 0; t < b.rows; ++t)
                    for (int i = 0; i < a.rows; ++i) {
                        double x = a.val[static_cast<size_t>(i) * a.cols + t];
                        if (x == 0.0) continue;
                        const double* grow = g.data() + static_cast<size_t>(i) * n.cols;
                        double* brow = gb.data() + static_cast<size_t>(t) * b.cols;
                        for (int j = 0; j < n.cols; ++j) brow[j] += x * grow[j];
                    }
            }
            break;
        }
        case Op::transpose: {
            int ai = n.in[0];
            if (!needs(ai)) break;
            auto& ga = grad_buf(ai);
            const Node& a = nodes_[ai];
            for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j)
                    ga[static_cast<size_t>(j) * a.cols + i] += g[static_cast<size_t>(i) * n.cols + j];
            break;
        }
        case Op::add: {
            for (int s = 0; s < 2; ++s) {
                int ii = n.in[s];
                if (!needs(ii)) continue;
                auto& gi = grad_buf(ii);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            break;
        }
        case Op::sub: {
            if (needs(n.in[0])) {
                auto& ga = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (needs(n.in[1])) {
                auto& gb = grad_buf(n.in[1]);
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
            break;
        }
        case Op::mul: {
            if (needs(n.in[0])) {
                auto& ga = grad_buf(n.in[0]);
                const auto& bv = nodes_[n.in[1]].val;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (needs(n.in[1])) {
                auto& gb = grad_buf(n.in[1]);
                const auto& av = nodes_[n.in[0]].val;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
            break;
        }
        case Op::affine: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += n.k * g[i];
            break;
        }
        case Op::tanh_: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
            break;
        }
        case Op::softmax_rows: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            for (int i = 0; i < n.rows; ++i) {
                const double* p = n.val.data() + static_cast<size_t>(i) * n.cols;
                const double* gr = g.data() + static_cast<size_t>(i) * n.cols;
                double dot = 0.0;
                for (int j = 0; j < n.cols; ++j) dot += gr[j] * p[j];
                double* out = ga.data() + static_cast<size_t>(i) * n.cols;
                for (int j = 0; j < n.cols; ++j) out[j] += p[j] * (gr[j] - dot);
            }
            break;
        }
        case Op::mean_rows: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            const Node& a = nodes_[n.in[0]];
            double inv = 1.0 / a.rows;
            for (int i = 0; i < a.rows; ++i)
                for (int j = 0; j < a.cols; ++j) ga[static_cast<size_t>(i) * a.cols + j] += g[j] * inv;
            break;
        }
        case Op::sum: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            for (auto& v : ga) v += g[0];
            break;
        }
        case Op::frob_norm: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            const auto& av = nodes_[n.in[0]].val;
            double scale = g[0] / std::max(n.val[0], 1e-12);
            for (size_t i = 0; i < av.size(); ++i) ga[i] += scale * av[i];
            break;
        }
        case Op::cosine: {
            const auto& av = nodes_[n.in[0]].val;
            const auto& bv = nodes_[n.in[1]].val;
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (size_t i = 0; i < av.size(); ++i) {
                dot += av[i] * bv[i];
                na2 += av[i] * av[i];
                nb2 += bv[i] * bv[i];
            }
            double na = std::sqrt(na2), nb = std::sqrt(nb2);
            double den = na * nb + kCosEps;
            double g0 = g[0] * fault_factor_;
            if (needs(n.in[0])) {
                auto& ga = grad_buf(n.in[0]);
                double t = na > 1e-300 ? dot * nb / (na * den * den) : 0.0;
                for (size_t i = 0; i < av.size(); ++i) ga[i] += g0 * (bv[i] / den - t * av[i]);
            }
            if (needs(n.in[1])) {
                auto& gb = grad_buf(n.in[1]);
                double t = nb > 1e-300 ? dot * na / (nb * den * den) : 0.0;
                for (size_t i = 0; i < bv.size(); ++i) gb[i] += g0 * (av[i] / den - t * bv[i]);
            }
            break;
        }
        case Op::concat: {
            const Node& a = nodes_[n.in[0]];
            if (needs(n.in[0])) {
                auto& ga = grad_buf(n.in[0]);
                for (int i = 0; i < a.rows; ++i) ga[i] += g[i];
            }
            if (needs(n.in[1])) {
                auto& gb = grad_buf(n.in[1]);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[a.rows + i];
            }
            break;
        }
        case Op::stack_rows: {
            for (size_t s = 0; s < n.in.size(); ++s) {
                if (!needs(n.in[s])) continue;
                auto& gi = grad_buf(n.in[s]);
                const double* grow = g.data() + s * n.cols;
                for (int j = 0; j < n.cols; ++j) gi[j] += grow[j];
            }
            break;
        }
        case Op::prepend_row: {
            if (needs(n.in[1])) {
                auto& gv = grad_buf(n.in[1]);
                for (int j = 0; j < n.cols; ++j) gv[j] += g[j];
            }
            if (needs(n.in[0])) {
                auto& gm = grad_buf(n.in[0]);
                for (size_t i = 0; i < gm.size(); ++i) gm[i] += g[n.cols + i];
            }
            break;
        }
        case Op::select_row: {
            if (!needs(n.in[0])) break;
            auto& gm = grad_buf(n.in[0]);
            const Node& m = nodes_[n.in[0]];
            for (int j = 0; j < m.cols; ++j) gm[static_cast<size_t>(n.i0) * m.cols + j] += g[j];
            break;
        }
        case Op::reshape: {
            if (!needs(n.in[0])) break;
            auto& ga = grad_buf(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            break;
        }
        case Op::ce_loss: {
            if (!needs(n.in[0])) break;
            auto& gp = grad_buf(n.in[0]);
            const auto& pv = nodes_[n.in[0]].val;
            for (size_t i = 0; i < pv.size(); ++i)
                if (pv[i] > kLogClamp) gp[i] -= g[0] * n.aux[i] / pv[i];
            break;
        }
    }
}

void Tape::backward(Var loss) {
    check_same_tape(loss);
    if (loss.rows != 1 || loss.cols != 1)
        throw contract_error("backward: loss is " + shape_of(loss.rows, loss.cols) + ", expected 1x1 scalar");
    for (Node& n : nodes_) n.grad.clear();
    // Zero bound grad slots first so unreachable parameters read as zero.
    for (Node& n : nodes_)
        if (n.bind) n.bind->grad.assign(n.bind->data.size(), 0.0);
    grad_buf(loss.node)[0] = 1.0;
    for (int i = loss.node; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        backprop_node(i);
    }
    for (Node& n : nodes_) {
        if (!n.bind || n.grad.empty()) continue;
        for (size_t i = 0; i < n.grad.size(); ++i) n.bind->grad[i] += n.grad[i];
    }
}

Tensor Tape::value_of(Var v) const {
    const Node& n = node(v);
    Tensor t(n.rows, n.cols);
    t.data = n.val;
    return t;
}

Tensor Tape::grad_of(Var v) const {
    const Node& n = node(v);
    Tensor t(n.rows, n.cols);
    if (!n.grad.empty()) t.data = n.grad;
    return t;
}

std::vector<std::vector<int>> Tape::edges() const {
    std::vector<std::vector<int>> e;
    e.reserve(nodes_.size());
    for (const Node& n : nodes_) e.push_back(n.in);
    return e;
}

std::vector<const Tensor*> Tape::bound_tensors() const {
    std::vector<const Tensor*> out;
    for (const Node& n : nodes_)
        if (n.bind) out.push_back(n.bind);
    return out;
}

double grad_check(const std::function<double()>& f, std::span<Tensor* const> params, double eps) {
    if (eps <= 0.0) throw contract_error("grad_check: eps must be positive");
    double f0 = f();
    if (!std::isfinite(f0)) throw numeric_error("grad_check: objective non-finite at base point");
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor* p : params) {
        if (p->grad.size() != p->data.size())
            throw contract_error("grad_check: objective did not fill gradient for a parameter");
        analytic.push_back(p->grad);
    }
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        for (size_t i = 0; i < p->data.size(); ++i) {
            double saved = p->data[i];
            p->data[i] = saved + eps;
            double fp = f();
            p->data[i] = saved - eps;
            double fm = f();
            p->data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw numeric_error("grad_check: objective non-finite at probe point");
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[pi][i];
            double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    f();  // restore grads at the unperturbed point
    return worst;
}

}  // namespace hylo
