#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hds/errors.hpp"

namespace hds {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape);

template <typename Scalar>
class Tensor;

/// Backward record of the operation that produced a tensor. `backward`
/// receives the gradient w.r.t. the output and accumulates into the
/// parents' gradient buffers.
template <typename Scalar>
struct Node {
  std::string op;
  std::vector<Tensor<Scalar>> parents;
  std::function<void(const Vec<Scalar>&)> backward;
};

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Vec<Scalar> values;
  Vec<Scalar> grad;  // empty until allocated
  bool requires_grad = false;
  std::shared_ptr<Node<Scalar>> node;
};

/// Dense row-major tensor (NCHW for 4-D) with optional gradient buffer.
/// Copies share storage; use clone() or detach() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : impl_(std::make_shared<TensorImpl<Scalar>>()) {
    impl_->values = Vec<Scalar>::Constant(numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, Vec<Scalar> values) : impl_(std::make_shared<TensorImpl<Scalar>>()) {
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  Index size() const { return impl_->values.size(); }

  Vec<Scalar>& values() { return impl_->values; }
  const Vec<Scalar>& values() const { return impl_->values; }
  Scalar* data() { return impl_->values.data(); }
  const Scalar* data() const { return impl_->values.data(); }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->values[0];
  }

  Scalar& at(Index n, Index c, Index h, Index w) { return impl_->values[offset(n, c, h, w)]; }
  Scalar at(Index n, Index c, Index h, Index w) const { return impl_->values[offset(n, c, h, w)]; }

  bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }
  Vec<Scalar>& grad() { return impl_->grad; }
  const Vec<Scalar>& grad() const { return impl_->grad; }
  Vec<Scalar>& ensure_grad() {
    if (!has_grad()) impl_->grad = Vec<Scalar>::Zero(size());
    return impl_->grad;
  }
  void zero_grad() { impl_->grad = Vec<Scalar>::Zero(size()); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  const std::shared_ptr<Node<Scalar>>& node() const { return impl_->node; }
  void set_node(std::shared_ptr<Node<Scalar>> node) { impl_->node = std::move(node); }

  /// Deep copy of values; no graph, no gradient.
  Tensor detach() const { return Tensor(shape(), values()); }

  TensorImpl<Scalar>* impl() const { return impl_.get(); }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  Index offset(Index n, Index c, Index h, Index w) const {
    const Shape& s = impl_->shape;
    return ((n * s[1] + c) * s[2] + h) * s[3] + w;
  }

  std::shared_ptr<TensorImpl<Scalar>> impl_;
};

/// Whether operations record backward nodes on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Trainable tensor with a stable name. Gradient is always allocated.
template <typename Scalar>
struct Parameter {
  enum class Group { main, seg_path, cls_path };

  Tensor<Scalar> tensor;
  std::string name;
  bool decay = true;
  Group group = Group::main;

  Parameter() = default;
  Parameter(std::string name_, Shape shape, bool decay_, Group group_ = Group::main)
      : tensor(std::move(shape)), name(std::move(name_)), decay(decay_), group(group_) {
    tensor.set_requires_grad(true);
    tensor.zero_grad();
  }
};

}  // namespace hds
