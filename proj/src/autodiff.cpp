#include "sesim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sesim::ad {

namespace {

constexpr double kEps = 1e-12;  // probability clamp for bce

void check_finite(const Matrix& m, const char* op) {
    if (!m.all_finite())
        throw NumericError(std::string("non-finite result in ") + op);
}

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a,
                              const Matrix& b) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a) +
                        " vs " + shape_str(b));
}

}  // namespace

const Matrix& Tensor::grad() const {
    if (!node_->requires_grad)
        throw StateError("Tensor::grad: tensor does not require grad");
    if (node_->grad.empty())
        throw StateError("Tensor::grad: backward has not run");
    return node_->grad;
}

Tensor Tape::make(Matrix value, const char* op, std::vector<Tensor> parents,
                  std::function<void(detail::Node&)> backprop) {
    check_finite(value, op);
    auto node = std::make_unique<detail::Node>();
    node->value = std::move(value);
    node->op = op;
    node->owner = this;
    for (const Tensor& p : parents) {
        node->parents.push_back(p.node_);
        node->requires_grad = node->requires_grad || p.node_->requires_grad;
    }
    if (node->requires_grad) node->backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Tensor(nodes_.back().get());
}

void Tape::own_check(const Tensor& t, const char* op) const {
    if (!t.valid() || t.node_->owner != this)
        throw ArgumentError(std::string(op) + ": tensor not on this tape");
}

Tensor Tape::input(Matrix value, bool requires_grad) {
    check_finite(value, "input");
    auto node = std::make_unique<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->owner = this;
    nodes_.push_back(std::move(node));
    return Tensor(nodes_.back().get());
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    own_check(a, "matmul");
    own_check(b, "matmul");
    if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
    Matrix out = sesim::matmul(a.value(), b.value());
    detail::Node* an = a.node_;
    detail::Node* bn = b.node_;
    return make(std::move(out), "matmul", {a, b}, [an, bn](detail::Node& n) {
        if (an->requires_grad) axpy(an->grad, 1.0, sesim::matmul(n.grad, transpose(bn->value)));
        if (bn->requires_grad) axpy(bn->grad, 1.0, sesim::matmul(transpose(an->value), n.grad));
    });
}

Tensor Tape::add(Tensor a, Tensor b) {
    own_check(a, "add");
    own_check(b, "add");
    const bool row_bcast = b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1;
    if (!row_bcast && !a.value().same_shape(b.value()))
        shape_error("add", a.value(), b.value());
    Matrix out = a.value();
    if (row_bcast) {
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out(i, j) += b.value()(0, j);
    } else {
        axpy(out, 1.0, b.value());
    }
    detail::Node* an = a.node_;
    detail::Node* bn = b.node_;
    return make(std::move(out), "add", {a, b},
                [an, bn, row_bcast](detail::Node& n) {
                    if (an->requires_grad) axpy(an->grad, 1.0, n.grad);
                    if (bn->requires_grad) {
                        if (row_bcast) {
                            for (int i = 0; i < n.grad.rows(); ++i)
                                for (int j = 0; j < n.grad.cols(); ++j)
                                    bn->grad(0, j) += n.grad(i, j);
                        } else {
                            axpy(bn->grad, 1.0, n.grad);
                        }
                    }
                });
}

Tensor Tape::sub(Tensor a, Tensor b) {
    own_check(a, "sub");
    own_check(b, "sub");
    if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
    Matrix out = a.value();
    axpy(out, -1.0, b.value());
    detail::Node* an = a.node_;
    detail::Node* bn = b.node_;
    return make(std::move(out), "sub", {a, b}, [an, bn](detail::Node& n) {
        if (an->requires_grad) axpy(an->grad, 1.0, n.grad);
        if (bn->requires_grad) axpy(bn->grad, -1.0, n.grad);
    });
}

Tensor Tape::mul(Tensor a, Tensor b) {
    own_check(a, "mul");
    own_check(b, "mul");
    if (!a.value().same_shape(b.value())) shape_error("mul", a.value(), b.value());
    Matrix out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
    detail::Node* an = a.node_;
    detail::Node* bn = b.node_;
    return make(std::move(out), "mul", {a, b}, [an, bn](detail::Node& n) {
        if (an->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i)
                an->grad.data()[i] += n.grad.data()[i] * bn->value.data()[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i)
                bn->grad.data()[i] += n.grad.data()[i] * an->value.data()[i];
    });
}

Tensor Tape::abs(Tensor a) {
    own_check(a, "abs");
    Matrix out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::fabs(out.data()[i]);
    detail::Node* an = a.node_;
    return make(std::move(out), "abs", {a}, [an](detail::Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double x = an->value.data()[i];
            const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            an->grad.data()[i] += n.grad.data()[i] * s;
        }
    });
}

Tensor Tape::relu(Tensor a) {
    own_check(a, "relu");
    Matrix out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
    detail::Node* an = a.node_;
    return make(std::move(out), "relu", {a}, [an](detail::Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (an->value.data()[i] > 0.0)
                an->grad.data()[i] += n.grad.data()[i];
    });
}

Tensor Tape::sigmoid(Tensor a) {
    own_check(a, "sigmoid");
    Matrix out = a.value();
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = out.data()[i];
        out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                 : std::exp(x) / (1.0 + std::exp(x));
    }
    detail::Node* an = a.node_;
    return make(std::move(out), "sigmoid", {a}, [an](detail::Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.value.data()[i];
            an->grad.data()[i] += n.grad.data()[i] * y * (1.0 - y);
        }
    });
}

Tensor Tape::softmax_rows(Tensor a) {
    own_check(a, "softmax_rows");
    Matrix out = a.value();
    for (int i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        double mx = row[0];
        for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < out.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < out.cols(); ++j) row[j] /= sum;
    }
    detail::Node* an = a.node_;
    return make(std::move(out), "softmax_rows", {a}, [an](detail::Node& n) {
        // dx = y * (dy - sum_j dy_j y_j) per row
        for (int i = 0; i < n.grad.rows(); ++i) {
            double dot = 0.0;
            for (int j = 0; j < n.grad.cols(); ++j)
                dot += n.grad(i, j) * n.value(i, j);
            for (int j = 0; j < n.grad.cols(); ++j)
                an->grad(i, j) += n.value(i, j) * (n.grad(i, j) - dot);
        }
    });
}

Tensor Tape::sum_all(Tensor a) {
    own_check(a, "sum_all");
    double s = 0.0;
    for (size_t i = 0; i < a.value().size(); ++i) s += a.value().data()[i];
    detail::Node* an = a.node_;
    return make(Matrix(1, 1, s), "sum_all", {a}, [an](detail::Node& n) {
        const double g = n.grad(0, 0);
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad.data()[i] += g;
    });
}

Tensor Tape::mean_all(Tensor a) {
    own_check(a, "mean_all");
    if (a.value().size() == 0) throw ArgumentError("mean_all: empty tensor");
    double s = 0.0;
    for (size_t i = 0; i < a.value().size(); ++i) s += a.value().data()[i];
    const double inv = 1.0 / static_cast<double>(a.value().size());
    detail::Node* an = a.node_;
    return make(Matrix(1, 1, s * inv), "mean_all", {a},
                [an, inv](detail::Node& n) {
                    const double g = n.grad(0, 0) * inv;
                    for (size_t i = 0; i < an->grad.size(); ++i)
                        an->grad.data()[i] += g;
                });
}

Tensor Tape::scale(Tensor a, double c) {
    own_check(a, "scale");
    Matrix out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    detail::Node* an = a.node_;
    return make(std::move(out), "scale", {a}, [an, c](detail::Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i)
            an->grad.data()[i] += n.grad.data()[i] * c;
    });
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: empty list");
    int rows = 0;
    const int cols = parts[0].cols();
    for (const Tensor& p : parts) {
        own_check(p, "concat_rows");
        if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
        rows += p.rows();
    }
    Matrix out(rows, cols);
    int r = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < p.rows(); ++i, ++r)
            std::copy(p.value().row(i), p.value().row(i) + cols, out.row(r));
    }
    std::vector<detail::Node*> pn;
    for (const Tensor& p : parts) pn.push_back(p.node_);
    return make(std::move(out), "concat_rows", parts, [pn, cols](detail::Node& n) {
        int r = 0;
        for (detail::Node* p : pn) {
            if (p->requires_grad)
                for (int i = 0; i < p->value.rows(); ++i)
                    for (int j = 0; j < cols; ++j)
                        p->grad(i, j) += n.grad(r + i, j);
            r += p->value.rows();
        }
    });
}

Tensor Tape::gather_rows(Tensor a, std::vector<int> idx) {
    own_check(a, "gather_rows");
    for (int i : idx)
        if (i < 0 || i >= a.rows())
            throw ArgumentError("gather_rows: row index out of range");
    Matrix out(static_cast<int>(idx.size()), a.cols());
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(a.value().row(idx[r]), a.value().row(idx[r]) + a.cols(),
                  out.row(static_cast<int>(r)));
    detail::Node* an = a.node_;
    return make(std::move(out), "gather_rows", {a},
                [an, idx = std::move(idx)](detail::Node& n) {
                    for (size_t r = 0; r < idx.size(); ++r)
                        for (int j = 0; j < n.grad.cols(); ++j)
                            an->grad(idx[r], j) += n.grad(static_cast<int>(r), j);
                });
}

Tensor Tape::bce(Tensor probs, const std::vector<double>& targets) {
    own_check(probs, "bce");
    const int n = probs.rows();
    if (n == 0) throw ArgumentError("bce: empty batch");
    if (probs.cols() != 1 || static_cast<int>(targets.size()) != n)
        throw ArgumentError("bce: needs n x 1 probabilities and n targets");
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = std::clamp(probs.value()(i, 0), kEps, 1.0 - kEps);
        loss -= targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
    }
    loss /= n;
    detail::Node* pn = probs.node_;
    return make(Matrix(1, 1, loss), "bce", {probs},
                [pn, targets, n](detail::Node& nd) {
                    const double g = nd.grad(0, 0) / n;
                    for (int i = 0; i < n; ++i) {
                        const double raw = pn->value(i, 0);
                        if (raw <= kEps || raw >= 1.0 - kEps) continue;  // clamped
                        pn->grad(i, 0) += g * (raw - targets[i]) / (raw * (1.0 - raw));
                    }
                });
}

namespace {

// log-softmax row with max subtraction; returns per-sample -log p[label].
double ce_row(const double* row, int cols, int label, double* softmax_out) {
    double mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    const double log_z = mx + std::log(sum);
    if (softmax_out)
        for (int j = 0; j < cols; ++j)
            softmax_out[j] = std::exp(row[j] - log_z);
    return log_z - row[label];
}

}  // namespace

Tensor Tape::cross_entropy_each(Tensor logits, const std::vector<int>& labels) {
    own_check(logits, "cross_entropy");
    const int n = logits.rows();
    const int c = logits.cols();
    if (n == 0) throw ArgumentError("cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != n)
        throw ArgumentError("cross_entropy: batch length mismatch");
    for (int y : labels)
        if (y < 0 || y >= c)
            throw ArgumentError("cross_entropy: label out of range");
    Matrix out(n, 1);
    for (int i = 0; i < n; ++i)
        out(i, 0) = ce_row(logits.value().row(i), c, labels[i], nullptr);
    detail::Node* ln = logits.node_;
    return make(std::move(out), "cross_entropy_each", {logits},
                [ln, labels, c](detail::Node& nd) {
                    std::vector<double> sm(static_cast<size_t>(c));
                    for (int i = 0; i < nd.grad.rows(); ++i) {
                        const double g = nd.grad(i, 0);
                        if (g == 0.0) continue;
                        ce_row(ln->value.row(i), c, labels[i], sm.data());
                        for (int j = 0; j < c; ++j)
                            ln->grad(i, j) +=
                                g * (sm[j] - (j == labels[i] ? 1.0 : 0.0));
                    }
                });
}

Tensor Tape::cross_entropy(Tensor logits, const std::vector<int>& labels) {
    return mean_all(cross_entropy_each(logits, labels));
}

Tensor Tape::mse(Tensor pred, const std::vector<double>& targets) {
    own_check(pred, "mse");
    const int n = pred.rows();
    if (n == 0) throw ArgumentError("mse: empty batch");
    if (pred.cols() != 1 || static_cast<int>(targets.size()) != n)
        throw ArgumentError("mse: needs n x 1 predictions and n targets");
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = pred.value()(i, 0) - targets[i];
        loss += d * d;
    }
    loss /= n;
    detail::Node* pn = pred.node_;
    return make(Matrix(1, 1, loss), "mse", {pred},
                [pn, targets, n](detail::Node& nd) {
                    const double g = nd.grad(0, 0) * 2.0 / n;
                    for (int i = 0; i < n; ++i)
                        pn->grad(i, 0) += g * (pn->value(i, 0) - targets[i]);
                });
}

void Tape::backward(Tensor loss) {
    own_check(loss, "backward");
    if (backward_done_)
        throw StateError("backward: tape already replayed; reset first");
    if (loss.rows() != 1 || loss.cols() != 1)
        throw ArgumentError("backward: loss must be 1x1");
    if (!loss.node_->requires_grad)
        throw StateError("backward: loss does not depend on any grad input");
    backward_done_ = true;

    for (auto& n : nodes_)
        if (n->requires_grad)
            n->grad = Matrix(n->value.rows(), n->value.cols());
    loss.node_->grad(0, 0) = 1.0;

    // Nodes were recorded in topological order; replay in reverse. Only
    // nodes on a path between a grad input and the loss can carry
    // nonzero gradient, so replaying everything is correct if wasteful.
    bool seen_loss = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node* n = it->get();
        if (n == loss.node_) seen_loss = true;
        if (!seen_loss || !n->requires_grad || !n->backprop) continue;
        n->backprop(*n);
    }
}

void Tape::reset_backward() {
    backward_done_ = false;
    for (auto& n : nodes_) n->grad = Matrix();
}

}  // namespace sesim::ad
