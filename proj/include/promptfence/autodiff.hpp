#pragma once

#include <string>
#include <vector>

#include "promptfence/core.hpp"

namespace pfence::ad {

// Reverse-mode autodiff over dense double matrices. Values are computed
// eagerly when an op is recorded; backward() replays the tape in reverse.
// The op set is exactly what the prompt/attention/loss pipeline needs --
// this is not a general tensor library and does not try to be one.

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
    enum class Op {
        leaf,
        matmul,
        transpose,
        add,
        sub,
        scale,
        add_rowvec,
        hadamard,
        tanh_fn,
        exp_fn,
        mean_rows,
        vconcat,
        normalize_rows,
        softmax_rows,
        log_softmax_rows,
        sum_all,
        gather_labels,
        min_const,
    };

    struct Node {
        Op op;
        Mat value;
        Mat grad;  // allocated lazily in backward()
        int a = -1, b = -1;
        double c = 0.0;
        std::vector<int> parts;       // vconcat inputs
        std::vector<int> labels;      // gather_labels
        bool needs_grad = false;
    };

public:
    Var leaf(Mat v, bool needs_grad = false) {
        Node n;
        n.op = Op::leaf;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    Var matmul(Var a, Var b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        if (A.cols() != B.rows()) throw ConfigError("matmul: inner dimensions disagree");
        Node n;
        n.op = Op::matmul;
        n.a = a.id;
        n.b = b.id;
        n.value = A * B;
        return push2(std::move(n), a, b);
    }

    Var transpose(Var a) {
        Node n;
        n.op = Op::transpose;
        n.a = a.id;
        n.value = val(a).transpose();
        return push1(std::move(n), a);
    }

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        Node n;
        n.op = Op::add;
        n.a = a.id;
        n.b = b.id;
        n.value = val(a) + val(b);
        return push2(std::move(n), a, b);
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        Node n;
        n.op = Op::sub;
        n.a = a.id;
        n.b = b.id;
        n.value = val(a) - val(b);
        return push2(std::move(n), a, b);
    }

    Var scale(Var a, double s) {
        Node n;
        n.op = Op::scale;
        n.a = a.id;
        n.c = s;
        n.value = val(a) * s;
        return push1(std::move(n), a);
    }

    // [m,n] + broadcast [1,n]
    Var add_rowvec(Var m, Var row) {
        const Mat& M = val(m);
        const Mat& R = val(row);
        if (R.rows() != 1 || R.cols() != M.cols())
            throw ConfigError("add_rowvec: bias shape mismatch");
        Node n;
        n.op = Op::add_rowvec;
        n.a = m.id;
        n.b = row.id;
        n.value = M.rowwise() + R.row(0);
        return push2(std::move(n), m, row);
    }

    Var hadamard(Var a, Var b) {
        check_same_shape(a, b, "hadamard");
        Node n;
        n.op = Op::hadamard;
        n.a = a.id;
        n.b = b.id;
        n.value = val(a).cwiseProduct(val(b));
        return push2(std::move(n), a, b);
    }

    Var tanh(Var a) {
        Node n;
        n.op = Op::tanh_fn;
        n.a = a.id;
        n.value = val(a).array().tanh().matrix();
        return push1(std::move(n), a);
    }

    Var exp(Var a) {
        Node n;
        n.op = Op::exp_fn;
        n.a = a.id;
        n.value = val(a).array().exp().matrix();
        return push1(std::move(n), a);
    }

    Var mean_rows(Var a) {
        Node n;
        n.op = Op::mean_rows;
        n.a = a.id;
        n.value = val(a).colwise().mean();
        return push1(std::move(n), a);
    }

    Var vconcat(const std::vector<Var>& parts) {
        if (parts.empty()) throw ConfigError("vconcat: no inputs");
        Eigen::Index cols = val(parts[0]).cols(), rows = 0;
        for (Var p : parts) {
            if (val(p).cols() != cols) throw ConfigError("vconcat: column mismatch");
            rows += val(p).rows();
        }
        Node n;
        n.op = Op::vconcat;
        n.value.resize(rows, cols);
        Eigen::Index at = 0;
        for (Var p : parts) {
            n.value.middleRows(at, val(p).rows()) = val(p);
            at += val(p).rows();
            n.parts.push_back(p.id);
            n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
        }
        return push(std::move(n));
    }

    // L2-normalize each row
    Var normalize_rows(Var a) {
        const Mat& A = val(a);
        Node n;
        n.op = Op::normalize_rows;
        n.a = a.id;
        n.value = A;
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            double nr = A.row(i).norm();
            if (nr == 0.0) throw NumericError("normalize_rows: zero-norm row");
            n.value.row(i) /= nr;
        }
        return push1(std::move(n), a);
    }

    Var softmax_rows(Var a) {
        Node n;
        n.op = Op::softmax_rows;
        n.a = a.id;
        n.value = rows_softmax(val(a));
        return push1(std::move(n), a);
    }

    Var log_softmax_rows(Var a) {
        const Mat& A = val(a);
        Node n;
        n.op = Op::log_softmax_rows;
        n.a = a.id;
        n.value = A;
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            double mx = A.row(i).maxCoeff();
            double lse = mx + std::log((A.row(i).array() - mx).exp().sum());
            n.value.row(i).array() -= lse;
        }
        return push1(std::move(n), a);
    }

    Var sum_all(Var a) {
        Node n;
        n.op = Op::sum_all;
        n.a = a.id;
        n.value = Mat::Constant(1, 1, val(a).sum());
        return push1(std::move(n), a);
    }

    // out[i,0] = a(i, labels[i])
    Var gather_labels(Var a, const std::vector<int>& labels) {
        const Mat& A = val(a);
        if (static_cast<Eigen::Index>(labels.size()) != A.rows())
            throw ConfigError("gather_labels: label count mismatch");
        Node n;
        n.op = Op::gather_labels;
        n.a = a.id;
        n.labels = labels;
        n.value.resize(A.rows(), 1);
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            int y = labels[static_cast<std::size_t>(i)];
            if (y < 0 || y >= A.cols()) throw DataError("gather_labels: label out of range");
            n.value(i, 0) = A(i, y);
        }
        return push1(std::move(n), a);
    }

    // elementwise min(a, cap); subgradient 0 on the capped side
    Var min_const(Var a, double cap) {
        Node n;
        n.op = Op::min_const;
        n.a = a.id;
        n.c = cap;
        n.value = val(a).cwiseMin(cap);
        return push1(std::move(n), a);
    }

    const Mat& value(Var v) const { return val(v); }

    const Mat& grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (n.grad.size() == 0) throw ConfigError("grad: not computed for this node");
        return n.grad;
    }

    void backward(Var root) {
        const Node& r = nodes_[check(root)];
        if (r.value.rows() != 1 || r.value.cols() != 1)
            throw ConfigError("backward: root must be a 1x1 scalar");
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        if (!nodes_[root.id].needs_grad) return;  // nothing trainable feeds the root
        nodes_[root.id].grad(0, 0) = 1.0;

        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            const Mat& g = n.grad;
            switch (n.op) {
                case Op::leaf:
                    break;
                case Op::matmul:
                    accum(n.a, g * nodes_[n.b].value.transpose());
                    accum(n.b, nodes_[n.a].value.transpose() * g);
                    break;
                case Op::transpose:
                    accum(n.a, g.transpose());
                    break;
                case Op::add:
                    accum(n.a, g);
                    accum(n.b, g);
                    break;
                case Op::sub:
                    accum(n.a, g);
                    accum(n.b, -g);
                    break;
                case Op::scale:
                    accum(n.a, g * n.c);
                    break;
                case Op::add_rowvec:
                    accum(n.a, g);
                    accum(n.b, g.colwise().sum());
                    break;
                case Op::hadamard:
                    accum(n.a, g.cwiseProduct(nodes_[n.b].value));
                    accum(n.b, g.cwiseProduct(nodes_[n.a].value));
                    break;
                case Op::tanh_fn:
                    accum(n.a, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
                    break;
                case Op::exp_fn:
                    accum(n.a, g.cwiseProduct(n.value));
                    break;
                case Op::mean_rows: {
                    double inv = 1.0 / static_cast<double>(nodes_[n.a].value.rows());
                    accum(n.a, (g * inv).replicate(nodes_[n.a].value.rows(), 1));
                    break;
                }
                case Op::vconcat: {
                    Eigen::Index at = 0;
                    for (int pid : n.parts) {
                        Eigen::Index r = nodes_[pid].value.rows();
                        accum(pid, g.middleRows(at, r));
                        at += r;
                    }
                    break;
                }
                case Op::normalize_rows: {
                    const Mat& x = nodes_[n.a].value;
                    Mat gx(x.rows(), x.cols());
                    for (Eigen::Index r = 0; r < x.rows(); ++r) {
                        double nr = x.row(r).norm();
                        double dot = n.value.row(r).dot(g.row(r));
                        gx.row(r) = (g.row(r) - n.value.row(r) * dot) / nr;
                    }
                    accum(n.a, gx);
                    break;
                }
                case Op::softmax_rows: {
                    Mat gx(n.value.rows(), n.value.cols());
                    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
                        double dot = n.value.row(r).dot(g.row(r));
                        gx.row(r) = n.value.row(r).cwiseProduct(
                            (g.row(r).array() - dot).matrix());
                    }
                    accum(n.a, gx);
                    break;
                }
                case Op::log_softmax_rows: {
                    Mat p = n.value.array().exp().matrix();
                    Mat gx(n.value.rows(), n.value.cols());
                    for (Eigen::Index r = 0; r < n.value.rows(); ++r)
                        gx.row(r) = g.row(r) - p.row(r) * g.row(r).sum();
                    accum(n.a, gx);
                    break;
                }
                case Op::sum_all:
                    accum(n.a, Mat::Constant(nodes_[n.a].value.rows(),
                                             nodes_[n.a].value.cols(), g(0, 0)));
                    break;
                case Op::gather_labels: {
                    Mat gx = Mat::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
                    for (Eigen::Index r = 0; r < gx.rows(); ++r)
                        gx(r, n.labels[static_cast<std::size_t>(r)]) += g(r, 0);
                    accum(n.a, gx);
                    break;
                }
                case Op::min_const: {
                    const Mat& x = nodes_[n.a].value;
                    accum(n.a, g.cwiseProduct(
                        (x.array() < n.c).cast<double>().matrix()));
                    break;
                }
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;

    int check(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw ConfigError("autodiff: dangling Var");
        return v.id;
    }
    const Mat& val(Var v) const { return nodes_[check(v)].value; }

    void check_same_shape(Var a, Var b, const char* where) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw ConfigError(std::string(where) + ": shape mismatch");
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }
    Var push1(Node n, Var a) {
        n.needs_grad = nodes_[check(a)].needs_grad;
        return push(std::move(n));
    }
    Var push2(Node n, Var a, Var b) {
        n.needs_grad = nodes_[check(a)].needs_grad || nodes_[check(b)].needs_grad;
        return push(std::move(n));
    }

    void accum(int id, const Mat& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad += g;
    }

    static Mat rows_softmax(const Mat& a) {
        Mat out = a;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            double mx = a.row(i).maxCoeff();
            Eigen::ArrayXd e = (a.row(i).array() - mx).exp();
            out.row(i) = (e / e.sum()).matrix();
        }
        return out;
    }
};

}  // namespace pfence::ad
