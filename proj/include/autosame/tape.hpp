#pragma once

#include "autosame/core.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace autosame::ad {

namespace detail {
inline std::atomic<std::uint64_t> node_counter{1};
inline thread_local bool grad_enabled = true;
}  // namespace detail

/// Scoped guard disabling graph construction (inference mode).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev; }
};

template <typename T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // empty until the first accumulation
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;
    bool requires_grad = false;
    std::uint64_t id = 0;

    bool has_grad() const { return grad.size() != 0; }

    template <typename D>
    void accumulate(const Eigen::MatrixBase<D>& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }

    Matrix<T>& ensure_grad() {
        if (grad.size() == 0) grad = Matrix<T>::Zero(value.rows(), value.cols());
        return grad;
    }
};

/// Value-semantics handle to one autodiff node. Creation order gives a valid
/// topological order because parents always exist before their children.
template <typename T>
class Var {
public:
    Var() = default;

    static Var constant(Matrix<T> v) { return Var(std::move(v), false); }

    /// Leaf that collects gradient (parameter snapshot).
    static Var leaf(Matrix<T> v) { return Var(std::move(v), detail::grad_enabled); }

    template <typename F>
    static Var op(Matrix<T> v, std::vector<Var> parents, F&& bp) {
        bool rg = false;
        if (detail::grad_enabled)
            for (const Var& p : parents) rg = rg || p.requires_grad();
        Var out(std::move(v), rg);
        if (rg) {
            out.n_->parents.reserve(parents.size());
            for (Var& p : parents) out.n_->parents.push_back(p.n_);
            out.n_->backprop = std::forward<F>(bp);
        }
        return out;
    }

    bool defined() const { return static_cast<bool>(n_); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const Matrix<T>& value() const { return n_->value; }
    const Matrix<T>& grad() const { return n_->grad; }
    Eigen::Index rows() const { return n_->value.rows(); }
    Eigen::Index cols() const { return n_->value.cols(); }
    T scalar() const {
        ASAME_CHECK_SHAPE(rows() == 1 && cols() == 1, "Var::scalar: not a 1x1 value");
        return n_->value(0, 0);
    }
    const std::shared_ptr<Node<T>>& node() const { return n_; }

private:
    Var(Matrix<T> v, bool rg) : n_(std::make_shared<Node<T>>()) {
        n_->value = std::move(v);
        n_->requires_grad = rg;
        n_->id = detail::node_counter.fetch_add(1, std::memory_order_relaxed);
    }

    std::shared_ptr<Node<T>> n_;
};

/// Reverse-mode sweep from a scalar root. Nodes are processed in decreasing
/// creation id, a topological order of the DAG.
template <typename T>
void backward(const Var<T>& root) {
    ASAME_CHECK_SHAPE(root.rows() == 1 && root.cols() == 1, "backward: root must be scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    root.node()->grad = Matrix<T>::Ones(1, 1);
    for (Node<T>* n : order)
        if (n->backprop && n->has_grad()) n->backprop(*n);
}

/// Persistent named tensor updated by the optimizer. Frozen parameters take
/// part in forward passes and checkpoints but never receive gradient.
template <typename T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    bool trainable = true;
};

/// Ordered parameter registry; insertion order fixes the optimizer update
/// order and the gradient accumulation order, keeping runs reproducible.
template <typename T>
class ParamStore {
public:
    Parameter<T>& add(const std::string& name, Matrix<T> init, bool trainable = true) {
        ASAME_CHECK(!index_.count(name), "ParamStore: duplicate parameter name " + name);
        auto p = std::make_shared<Parameter<T>>();
        p->name = name;
        p->value = std::move(init);
        p->grad = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        p->trainable = trainable;
        index_[name] = items_.size();
        items_.push_back(std::move(p));
        return *items_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    const std::vector<std::shared_ptr<Parameter<T>>>& items() const { return items_; }

    void zero_grad() {
        for (auto& p : items_) p->grad.setZero();
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

private:
    std::vector<std::shared_ptr<Parameter<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Per-graph snapshot of parameters as leaf Vars. Each forward pass (e.g. one
/// batch item) gets its own binding, so item graphs stay independent and can
/// run on separate threads; `harvest` folds leaf gradients back into the
/// parameters in first-use order.
template <typename T>
class Binding {
public:
    explicit Binding(bool collect_grads = true) : collect_(collect_grads) {}

    Var<T> operator()(Parameter<T>& p) {
        auto it = map_.find(&p);
        if (it != map_.end()) return it->second;
        Var<T> v = (collect_ && p.trainable) ? Var<T>::leaf(p.value) : Var<T>::constant(p.value);
        map_.emplace(&p, v);
        bound_.emplace_back(&p, v);
        return v;
    }

    void harvest() {
        for (auto& [p, v] : bound_)
            if (v.requires_grad() && v.node()->has_grad()) p->grad += v.node()->grad;
    }

private:
    bool collect_;
    std::unordered_map<Parameter<T>*, Var<T>> map_;
    std::vector<std::pair<Parameter<T>*, Var<T>>> bound_;
};

}  // namespace autosame::ad
