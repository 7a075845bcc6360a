#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace darn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
};
}  // namespace detail

// Dense row-major f64 array with an optional gradient buffer.
//
// Tensor is a handle: copies share storage. Forward ops always allocate a
// fresh output, so values are immutable once produced; only gradients
// accumulate and parameters are rewritten in place by the optimizer.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    // Allocates a zero-filled gradient buffer on first use. Const because the
    // gradient lives in the shared storage, not in the handle.
    std::span<double> mutable_grad() const;
    void zero_grad() { impl_->grad.clear(); }

    // Deep copy of data (gradient and tracking flag are not copied).
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

   private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable ops. Recording happens only while a
// Tape::Recording guard is alive on the current thread, and only for ops with
// at least one input that requires grad.
class Tape {
   public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // RAII guard that makes `tape` the active tape for this thread.
    class Recording {
       public:
        explicit Recording(Tape& tape);
        ~Recording();
        Recording(const Recording&) = delete;
        Recording& operator=(const Recording&) = delete;

       private:
        Tape* previous_;
    };

    static Tape* active();

    // Called by op implementations. The output is flagged requires_grad and
    // `backward` is run during Tape::backward with the output's gradient
    // available through the captured handle.
    void record(std::string op_name, Tensor output, BackwardFn backward);

    // Seeds d(root)/d(root) = 1 and replays records in reverse order.
    void backward(const Tensor& root);

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }
    std::vector<std::string> op_names() const;

   private:
    struct Record {
        std::string op;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Record> records_;
    bool consumed_ = false;
};

// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);

// Adds `delta` into t's gradient buffer (allocating it if needed).
void accumulate_grad(const Tensor& t, std::span<const double> delta);

}  // namespace darn
