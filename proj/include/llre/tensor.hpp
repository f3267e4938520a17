#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "llre/error.hpp"

namespace llre {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Gradient storage shared between a tensor and all views of it. The buffer is
// allocated lazily: an empty vector means "no gradient has reached this value".
template <typename T>
struct GradCell {
    std::vector<T> g;
};

// Dense N-dimensional array with value semantics on the handle and shared
// ownership of the payload, so reshapes alias both data and gradient.
template <typename T>
class Tensor {
  public:
    Tensor() : impl_(std::make_shared<Impl>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
        impl_->shape = std::move(shape);
        impl_->data = std::make_shared<std::vector<T>>(shape_numel(impl_->shape), fill);
        impl_->grad = std::make_shared<GradCell<T>>();
    }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("from_data: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) + " values");
        Tensor t;
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::make_shared<std::vector<T>>(std::move(values));
        t.impl_->grad = std::make_shared<GradCell<T>>();
        return t;
    }

    static Tensor scalar(T v) { return from_data({}, {v}); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data ? impl_->data->size() : 0; }
    std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

    // The handle is shallow-const: payload buffers stay mutable through a
    // const Tensor, which lets backward closures capture inputs by value.
    T* data() const { return impl_->data->data(); }
    std::vector<T>& vec() const { return *impl_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of " + std::to_string(numel()) + " elements");
        return (*impl_->data)[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        return *this;
    }

    bool grad_allocated() const { return !impl_->grad->g.empty(); }

    // gradient buffer, allocating zeros on first touch
    std::vector<T>& grad() const {
        auto& g = impl_->grad->g;
        if (g.size() != numel()) g.assign(numel(), T(0));
        return g;
    }
    const std::vector<T>& grad_view() const { return impl_->grad->g; }

    void zero_grad() const {
        auto& g = impl_->grad->g;
        if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
    }
    void drop_grad() const { impl_->grad->g.clear(); }

    // new handle over the same data/grad buffers
    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("reshape " + shape_str(impl_->shape) + " -> " + shape_str(new_shape));
        Tensor t;
        t.impl_->shape = std::move(new_shape);
        t.impl_->data = impl_->data;
        t.impl_->grad = impl_->grad;
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = std::make_shared<std::vector<T>>(*impl_->data);
        t.impl_->grad = std::make_shared<GradCell<T>>();
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    std::shared_ptr<GradCell<T>> grad_cell() const { return impl_->grad; }
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        Shape shape;
        std::shared_ptr<std::vector<T>> data;
        std::shared_ptr<GradCell<T>> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

// Named learnable tensor. Construction marks the value as requiring grad.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;

    Param() = default;
    Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) { value.set_requires_grad(true); }
};

// Ordered record of executed operations. Each op appends a closure that knows
// how to push its output gradient back to its inputs; backward() replays the
// record in exact reverse execution order.
template <typename T>
class GradTape {
  public:
    void record(const Tensor<T>& out, std::function<void()> fn) {
        nodes_.push_back(Node{out.grad_cell(), std::move(fn)});
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss)=1 and replays the record. Intermediate gradients
    // (anything produced by a recorded op) are reset first, so leaves --
    // params and user inputs -- accumulate across repeated calls.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        for (auto& n : nodes_) n.out->g.clear();
        auto& lg = loss.grad_cell()->g;
        lg.assign(1, T(1));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

    static GradTape*& current() {
        static thread_local GradTape* cur = nullptr;
        return cur;
    }

  private:
    struct Node {
        std::shared_ptr<GradCell<T>> out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;

    template <typename U>
    friend class Tensor;
};

// RAII installation of the active tape for the current thread.
template <typename T>
class TapeScope {
  public:
    explicit TapeScope(GradTape<T>& tape) : prev_(GradTape<T>::current()) { GradTape<T>::current() = &tape; }
    ~TapeScope() { GradTape<T>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    GradTape<T>* prev_;
};

template <typename T>
void backward(const Tensor<T>& loss, GradTape<T>& tape) {
    tape.backward(loss);
}

} // namespace llre
