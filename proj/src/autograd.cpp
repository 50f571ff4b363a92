#include "hds/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace hds {

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; `order` ends up topologically sorted with the
  // loss last.
  struct Frame {
    Tensor<Scalar> t;
    std::size_t next;
  };
  std::vector<Tensor<Scalar>> order;
  std::unordered_set<const TensorImpl<Scalar>*> seen{loss.impl()};
  std::vector<Frame> stack{{loss, 0}};
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& node = top.t.node();
    if (node && top.next < node->parents.size()) {
      const Tensor<Scalar>& parent = node->parents[top.next++];
      if (parent.defined() && parent.requires_grad() && seen.insert(parent.impl()).second) {
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.t);
      stack.pop_back();
    }
  }

  for (auto& t : order) {
    if (t.node()) {
      t.grad() = Vec<Scalar>::Zero(t.size());
    } else {
      t.ensure_grad();
    }
  }
  Tensor<Scalar> root = loss;
  root.grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node()) it->node()->backward(it->grad());
  }
  for (auto& t : order) {
    if (t.node()) t.grad().resize(0);
  }
}

template <typename Scalar>
Tensor<Scalar> finite_difference_grad(const std::function<Scalar()>& f, Tensor<Scalar> p,
                                      double eps) {
  NoGradGuard guard;
  Tensor<Scalar> g(p.shape());
  const Scalar h = static_cast<Scalar>(eps);
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar saved = p.values()[i];
    p.values()[i] = saved + h;
    const Scalar plus = f();
    p.values()[i] = saved - h;
    const Scalar minus = f();
    p.values()[i] = saved;
    g.values()[i] = (plus - minus) / (Scalar(2) * h);
  }
  return g;
}

template <typename Scalar>
double relative_error(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  const double diff = (a.template cast<double>() - b.template cast<double>()).matrix().norm();
  const double scale =
      std::max(a.template cast<double>().matrix().norm(), b.template cast<double>().matrix().norm());
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> finite_difference_grad<float>(const std::function<float()>&, Tensor<float>,
                                                     double);
template Tensor<double> finite_difference_grad<double>(const std::function<double()>&,
                                                       Tensor<double>, double);
template double relative_error<float>(const Vec<float>&, const Vec<float>&);
template double relative_error<double>(const Vec<double>&, const Vec<double>&);

}  // namespace hds
