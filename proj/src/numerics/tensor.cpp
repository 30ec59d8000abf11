#include "ciso/numerics/tensor.hpp"

#include <sstream>

namespace ciso::num {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorData>()) {
    impl_->value.assign(shape_size(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorData>()) {
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
    impl_->requires_grad = requires_grad;
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->value[0];
}

std::span<double> Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

Tensor Tensor::clone() const {
    Tensor out(impl_->shape, impl_->value, impl_->requires_grad);
    out.impl_->grad = impl_->grad;
    out.impl_->name = impl_->name;
    return out;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->value, false); }

void Tape::record(std::string op, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(op), std::move(backward)});
}

void Tape::backward(Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::logic_error("backward() requires a scalar loss, got shape " +
                               (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward() on a loss that is not on the tape");
    }
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace ciso::num
