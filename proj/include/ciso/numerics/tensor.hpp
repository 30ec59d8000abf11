#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ciso::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string name;
};

// Shared handle over a dense row-major buffer. Copies alias the same storage;
// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->value.size(); }

    std::span<double> values() { return impl_->value; }
    std::span<const double> values() const { return impl_->value; }
    double& operator[](std::size_t i) { return impl_->value[i]; }
    double operator[](std::size_t i) const { return impl_->value[i]; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    const std::string& name() const { return impl_->name; }
    void set_name(std::string n) { impl_->name = std::move(n); }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Allocates zeros on first use. Handle semantics: const handles still
    // expose the gradient buffer for accumulation.
    std::span<double> grad() const;
    std::span<const double> grad_view() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    Tensor clone() const;
    // Copy of the values with requires_grad off and no gradient.
    Tensor detach() const;

    const TensorData* id() const { return impl_.get(); }

private:
    std::shared_ptr<TensorData> impl_;
};

// Reverse-mode tape. Nodes run backward in reverse recording order, which is a
// valid topological order because a node can only consume tensors that exist.
class Tape {
public:
    struct Node {
        std::string op;
        std::function<void()> backward;
    };

    void record(std::string op, std::function<void()> backward);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1, runs every node once, then clears the tape.
    void backward(Tensor& loss);

private:
    std::vector<Node> nodes_;
};

// Activates a tape for ops executed on this thread while in scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

}  // namespace ciso::num
