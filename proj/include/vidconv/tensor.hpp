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

#ifndef VIDCONV_TENSOR_HPP_
#define VIDCONV_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vidconv/error.hpp"

namespace vidconv {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread only, so concurrent tapes on other threads are unaffected.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorNode {
  using BackwardFn = std::function<void(TensorNode&)>;

  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool retain_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  BackwardFn backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }

  // Parent i if it tracks gradients, else nullptr.
  TensorNode* tracked_parent(std::size_t i) const {
    if (i >= parents.size() || parents[i] == nullptr) return nullptr;
    return parents[i]->requires_grad ? parents[i].get() : nullptr;
  }
};

/// Dense row-major tensor of up to four axes with optional reverse-mode
/// gradient tracking. Copies share storage; use clone() for a deep copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->data.size());
  }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  // Keep this node's gradient after backward even if it is not a leaf.
  void retain_grad() { node_->retain_grad = true; }
  bool is_leaf() const { return !node_->backward; }

  /// Runs reverse-mode accumulation from this scalar through the recorded
  /// graph. The graph is released afterwards; a second call throws.
  void backward();

  BasicTensor detach() const;
  BasicTensor clone() const;
  // Same storage viewed under a new shape with the same element count.
  BasicTensor reshape(Shape shape) const;

  Node& node() { return *node_; }
  const Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  template <typename U>
  friend BasicTensor<U> make_result(
      Shape shape, std::vector<U> data,
      std::initializer_list<const BasicTensor<U>*> inputs,
      typename TensorNode<U>::BackwardFn backward);

  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Wraps an op output. Checks that every value is finite and, when grad mode
/// is on and any input tracks gradients, records the backward closure.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           typename TensorNode<T>::BackwardFn backward);

template <typename T>
void check_finite(std::span<const T> values, const char* op);

// Converts between precisions; the result is a fresh leaf.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x) {
  std::vector<To> out(x.values().begin(), x.values().end());
  return BasicTensor<To>(x.shape(), std::move(out));
}

}  // namespace vidconv

#endif  // VIDCONV_TENSOR_HPP_
