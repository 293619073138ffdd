#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "balf/tensor.hpp"

namespace balf {

/// Tape of executed operations. Ops append themselves during the forward
/// pass; backward() replays the tape in exact reverse order, accumulating
/// gradients by summation into every tensor that requires them.
template <typename T>
class GraphT {
public:
    using Tensor = TensorT<T>;

    void record(const Tensor& out, std::function<void()> bwd) {
        produced_.insert(out.storage());
        nodes_.push_back(Node{out.storage_ptr(), std::move(bwd)});
    }

    bool produced(const Tensor& t) const {
        return t.defined() && produced_.count(t.storage()) > 0;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates. Intermediate (tape-produced)
    /// gradients are reset first so repeated calls add exactly one more copy
    /// of the gradient into leaf tensors (parameters, inputs).
    /// With release=true each node's buffers are freed right after its
    /// backward closure runs, bounding peak memory near the forward cost;
    /// the tape is consumed and cannot be replayed.
    void backward(Tensor& loss, bool release = false) {
        if (!loss.defined() || loss.numel() != 1)
            throw Error("backward: seed must be a defined scalar tensor");
        if (!produced(loss))
            throw Error("backward: loss was not produced by this graph");
        if (!loss.requires_grad())
            throw Error("backward: loss does not require grad");

        for (auto& n : nodes_) {
            auto* st = n.out.get();
            if (st->requires_grad)
                for (auto& gv : st->grad) gv = T(0);
        }
        loss.grad()[0] = T(1);

        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->bwd) it->bwd();
            if (release) it->out->release_buffers();
        }
        if (release) clear();
    }

    void clear() {
        nodes_.clear();
        produced_.clear();
    }

private:
    struct Node {
        std::shared_ptr<detail::Storage<T>> out;
        std::function<void()> bwd;
    };
    std::vector<Node> nodes_;
    std::unordered_set<const detail::Storage<T>*> produced_;
};

using Graph = GraphT<float>;

}  // namespace balf
