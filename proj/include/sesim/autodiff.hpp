#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sesim/matrix.hpp"

namespace sesim::ad {

class Tape;

namespace detail {
struct Node {
    Matrix value;
    Matrix grad;  // allocated by Tape::backward for grad-requiring nodes
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Node*> parents;
    std::function<void(Node&)> backprop;  // pushes node.grad into parents
    const Tape* owner = nullptr;
};
}  // namespace detail

// Handle to a node on a tape. Cheap to copy; the tape owns the node.
class Tensor {
public:
    Tensor() = default;
    const Matrix& value() const { return node_->value; }
    // Valid after Tape::backward; zero matrix for grad leaves the loss
    // never touched.
    const Matrix& grad() const;
    bool requires_grad() const { return node_->requires_grad; }
    int rows() const { return node_->value.rows(); }
    int cols() const { return node_->value.cols(); }
    bool valid() const { return node_ != nullptr; }

private:
    friend class Tape;
    explicit Tensor(detail::Node* n) : node_(n) {}
    detail::Node* node_ = nullptr;
};

// Record of forward primitives in topological (creation) order, replayed
// in reverse exactly once by backward(). Confine a tape and its tensors
// to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor input(Matrix value, bool requires_grad);
    Tensor constant(Matrix value) { return input(std::move(value), false); }

    Tensor matmul(Tensor a, Tensor b);
    // Same shape, or b a 1 x cols row vector broadcast over a's rows.
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);  // elementwise
    Tensor abs(Tensor a);            // subgradient 0 at 0
    Tensor relu(Tensor a);           // subgradient 0 at 0
    Tensor sigmoid(Tensor a);
    Tensor softmax_rows(Tensor a);   // row-max subtracted for stability
    Tensor sum_all(Tensor a);        // 1x1
    Tensor mean_all(Tensor a);       // 1x1
    Tensor scale(Tensor a, double c);
    Tensor concat_rows(const std::vector<Tensor>& parts);
    Tensor gather_rows(Tensor a, std::vector<int> idx);

    // Mean losses over the batch, scalar output on the tape.
    // Probabilities are clamped to [eps, 1-eps], eps = 1e-12.
    Tensor bce(Tensor probs, const std::vector<double>& targets);
    Tensor cross_entropy(Tensor logits, const std::vector<int>& labels);
    // n x 1 vector of per-sample cross entropies, for per-sample weighting.
    Tensor cross_entropy_each(Tensor logits, const std::vector<int>& labels);
    Tensor mse(Tensor pred, const std::vector<double>& targets);

    // Accumulates d loss / d tensor into every grad-requiring tensor
    // reachable from the 1x1 loss. A tape replays once; a second call
    // without reset() is a state error.
    void backward(Tensor loss);
    void reset_backward();

    size_t num_nodes() const { return nodes_.size(); }

private:
    Tensor make(Matrix value, const char* op, std::vector<Tensor> parents,
                std::function<void(detail::Node&)> backprop);
    void own_check(const Tensor& t, const char* op) const;

    std::vector<std::unique_ptr<detail::Node>> nodes_;
    bool backward_done_ = false;
};

}  // namespace sesim::ad
