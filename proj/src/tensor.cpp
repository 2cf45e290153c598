#include "aen/tensor.h"

#include <sstream>

#include "aen/error.h"

namespace aen {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::int64_t checked_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  const std::int64_t n = checked_numel(shape);
  impl->shape = std::move(shape);
  impl->values.assign(static_cast<size_t>(n), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  const std::int64_t n = checked_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " wants " +
                     std::to_string(n) + " elements, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw ValueError("tensor has no gradient; call backward() first");
  }
  return impl_->grad;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  if (static_cast<int>(index.size()) != ndim()) {
    throw ShapeError("at(): " + std::to_string(index.size()) +
                     " indices for shape " + shape_str(shape()));
  }
  std::int64_t flat = 0;
  auto it = index.begin();
  for (int d = 0; d < ndim(); ++d, ++it) {
    if (*it < 0 || *it >= dim(d)) {
      throw ShapeError("at(): index " + std::to_string(*it) +
                       " out of range for axis " + std::to_string(d) +
                       " of shape " + shape_str(shape()));
    }
    flat = flat * dim(d) + *it;
  }
  return impl_->values[static_cast<size_t>(flat)];
}

Tape* Tape::active() { return g_active_tape; }

int Tape::record(std::vector<int> parents, std::function<void()> backward_fn) {
  entries_.push_back(Entry{std::move(parents), std::move(backward_fn)});
  return static_cast<int>(entries_.size()) - 1;
}

void Tape::backward_from(int root) const {
  if (root < 0 || root >= size()) {
    throw ValueError("backward_from: node " + std::to_string(root) +
                     " is not on this tape");
  }
  // Mark the entries reachable from the root...
  std::vector<char> needed(entries_.size(), 0);
  needed[static_cast<size_t>(root)] = 1;
  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    for (int p : entries_[static_cast<size_t>(i)].parents) {
      needed[static_cast<size_t>(p)] = 1;
    }
  }
  // ...then run them newest-first. Producers always have lower indices than
  // consumers, so this is a valid reverse topological order and every node
  // runs exactly once, after all of its output's gradient contributions
  // have been accumulated.
  for (int i = root; i >= 0; --i) {
    if (needed[static_cast<size_t>(i)]) entries_[static_cast<size_t>(i)].backward_fn();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  }
  Tape* tape = Tape::active();
  if (tape == nullptr) {
    throw ValueError("backward: no active tape");
  }
  TensorImpl* impl = loss.impl();
  if (impl->tape != tape || impl->node < 0) {
    throw ValueError("backward: loss was not produced on the active tape");
  }
  impl->grad.assign(1, 1.0);
  tape->backward_from(impl->node);
}

}  // namespace aen
