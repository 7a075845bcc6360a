#include "darn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "darn/error.hpp"

namespace darn {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " + std::to_string(data.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("at(): index rank does not match tensor rank");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= impl_->shape[axis]) throw DimensionError("at(): index out of range");
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

std::span<double> Tensor::mutable_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

Tensor Tensor::clone() const { return from(shape(), impl_->data, false); }

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string op_name, Tensor output, BackwardFn backward) {
    if (consumed_) throw TapeError("record on a tape whose backward already ran");
    output.set_requires_grad(true);
    records_.push_back({std::move(op_name), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
    if (consumed_) throw TapeError("backward called twice on the same tape");
    if (!root.defined() || root.numel() != 1) {
        throw TapeError("backward root must be a scalar, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
    }
    if (records_.empty()) throw TapeError("backward on an empty tape");
    if (!root.requires_grad()) throw TapeError("backward root does not depend on any tracked tensor");

    Tensor seed = root;
    seed.mutable_grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // no path from root
        it->backward();
    }
    consumed_ = true;
    // Drop closures so cached activations are released.
    for (auto& r : records_) r.backward = nullptr;
}

std::vector<std::string> Tape::op_names() const {
    std::vector<std::string> names;
    names.reserve(records_.size());
    for (const auto& r : records_) names.push_back(r.op);
    return names;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

void accumulate_grad(const Tensor& t, std::span<const double> delta) {
    auto g = t.mutable_grad();
    if (g.size() != delta.size()) throw DimensionError("accumulate_grad: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace darn
