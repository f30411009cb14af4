/* Copyright 2026 The VidConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "vidconv/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vidconv {

namespace {
thread_local bool g_grad_mode = true;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
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

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  // v - v is NaN exactly when v is NaN or infinite.
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(
      values.data(), static_cast<Eigen::Index>(values.size()));
  if (!values.empty() && (a - a).sum() != T(0)) {
    throw NumericalError(std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data,
                            bool requires_grad) {
  if (shape.empty() && data.size() != 1) {
    throw ShapeError("rank-0 tensor needs exactly one value");
  }
  if (shape.size() > 4) throw ShapeError("at most four axes are supported");
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape),
                     std::vector<T>(static_cast<std::size_t>(n), value),
                     requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::int64_t BasicTensor<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis out of range for shape " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw AutogradError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

template <typename T>
void BasicTensor<T>::backward() {
  if (node_->data.size() != 1) {
    throw AutogradError("backward() needs a scalar root, got shape " +
                        shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw AutogradError("backward() on a tensor that does not track gradients");
  }
  if (node_->backward_done) {
    throw AutogradError("backward() called twice on the same graph");
  }

  // Iterative post-order DFS gives a topological order of the tape. The
  // order holds owning pointers so nodes survive until the walk finishes.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{node_, 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<Node> p = top.first->parents[top.second++];
      if (p != nullptr && p->requires_grad && visited.insert(p.get()).second) {
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (!n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    n->backward = nullptr;
    if (!n->retain_grad && n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  for (auto& n : order) n->parents.clear();
  node_->backward_done = true;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(node_->shape, node_->data, node_->requires_grad && is_leaf());
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " +
                     shape_str(shape));
  }
  return make_result<T>(std::move(shape), node_->data, {this},
                        [](Node& self) {
                          auto& pg = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < pg.size(); ++i) {
                            pg[i] += self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           typename TensorNode<T>::BackwardFn backward) {
  check_finite<T>(data, "tensor op");
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (!grad_mode_enabled()) return out;
  bool track = false;
  for (const auto* in : inputs) {
    if (in != nullptr && in->defined() && in->requires_grad()) track = true;
  }
  if (!track) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  for (const auto* in : inputs) {
    // Untracked inputs still occupy their slot so backward closures can
    // index parents positionally; they are skipped during traversal.
    node.parents.push_back(in != nullptr && in->defined() ? in->node_
                                                          : nullptr);
  }
  node.backward = std::move(backward);
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template Tensor make_result<float>(
    Shape, std::vector<float>, std::initializer_list<const Tensor*>,
    TensorNode<float>::BackwardFn);
template Tensor64 make_result<double>(
    Shape, std::vector<double>, std::initializer_list<const Tensor64*>,
    TensorNode<double>::BackwardFn);

}  // namespace vidconv
