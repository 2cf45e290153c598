#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace aen {

class Tape;

// Shared storage behind a Tensor handle. Values are double precision and
// stored flat in row-major order. `grad` is either empty (no gradient yet)
// or the same length as `values`.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  // Producing tape and node index, when this tensor is the output of a
  // recorded operation. Null/-1 for leaves. The pointer is only ever
  // dereferenced after an identity check against the active tape, so a
  // tensor may safely outlive the tape that produced it.
  const Tape* tape = nullptr;
  int node = -1;
};

// Value-semantics handle over shared TensorImpl storage. Copying a Tensor
// aliases the same data, like the usual array-framework convention.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(impl_->values.size());
  }

  const std::vector<double>& values() const { return impl_->values; }
  // Mutable access is for parameter updates and buffer maintenance, not for
  // tweaking intermediates mid-graph.
  std::vector<double>& mutable_values() { return impl_->values; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  // Scalar extraction; throws ShapeError unless numel() == 1.
  double item() const;
  // Row-major element access by multi-index, bounds-checked.
  double at(std::initializer_list<int> index) const;

  // Internal: direct access to the shared storage, used by the operator
  // layer and the serializer.
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Gradient tape for reverse-mode differentiation. Operations executed while
// a tape is active (see TapeScope) append one entry each; backward() then
// replays the entries in reverse, invoking each stored closure to push
// gradients from an operation's output to its inputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Thread-local active tape; null when no TapeScope is open.
  static Tape* active();

  // Records one operation. `parents` lists the node indices of those inputs
  // that were themselves produced on this tape (leaves contribute nothing);
  // `backward_fn` pushes the output's gradient into the inputs' buffers.
  int record(std::vector<int> parents, std::function<void()> backward_fn);

  int size() const { return static_cast<int>(entries_.size()); }

  // Reverse sweep seeded at `root` (a node index). Only entries reachable
  // from the root are visited, each exactly once, in reverse topological
  // order (which for a tape is simply descending index order).
  void backward_from(int root) const;

 private:
  struct Entry {
    std::vector<int> parents;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;

  friend class TapeScope;
};

// RAII activation of a tape on the current thread. Scopes nest; the
// destructor restores the previously active tape.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Runs the reverse sweep from a scalar loss produced on the active tape.
// Seeds d(loss)/d(loss) = 1 and accumulates into the .grad buffers of all
// tensors that require gradients. Throws ShapeError if the loss is not a
// scalar, ValueError if it was not produced on the currently active tape.
void backward(const Tensor& loss);

// Formats a shape like [2, 3, 4] for error messages.
std::string shape_str(const std::vector<int>& shape);

}  // namespace aen
