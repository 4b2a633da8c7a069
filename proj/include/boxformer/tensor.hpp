#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace boxformer {

#ifdef BOXFORMER_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::int64_t>;
using NodeId = std::int64_t;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Enables the non-finite check performed on every op output. On by default
/// in debug builds.
void set_debug_checks(bool enabled);
bool debug_checks();

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<Real>> storage;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_uid = 0;
  NodeId node = -1;
};

/// Dense row-major array with optional gradient tracking.
///
/// Tensors are cheap handles: copies share storage. Values are treated as
/// immutable once created; parameters are the exception and are updated in
/// place by the optimizer through `mutable_data()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor from(Shape shape, std::vector<Real> values);
  static Tensor scalar(Real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  /// Size of dimension `axis`; negative axes count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  const Real* ptr() const { return impl_->storage->data(); }
  Real item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  /// Marks a leaf tensor for gradient tracking.
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->leaf; }

  /// Same values, no gradient tracking, shared storage.
  Tensor detach() const;
  /// Deep copy of the values into fresh storage (untracked).
  Tensor clone() const;

  /// Node on the currently active tape, or -1.
  NodeId node_id() const;
  std::uint64_t tape_uid() const { return impl_ ? impl_->tape_uid : 0; }

  TensorImpl& impl() const { return *impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(Shape, std::shared_ptr<std::vector<Real>>);

  std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor(Shape shape, std::shared_ptr<std::vector<Real>> storage);

/// Receives the output gradient of a node and accumulates (+=) into the
/// gradient buffers of its inputs. A null buffer means that input is not
/// tracked.
using BackwardFn =
    std::function<void(std::span<const Real> grad_out, std::span<std::vector<Real>*> grad_in)>;

/// Recording of differentiable operations in execution order.
///
/// Node ids index into the recording; every node's inputs precede it, so the
/// recording order is a topological order. A tape is confined to one thread.
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<NodeId> inputs;
    Shape shape;
    BackwardFn backward;  // empty for leaves
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t uid() const { return uid_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  NodeId add_leaf(const Shape& shape);
  NodeId add_node(std::string_view op, std::vector<NodeId> inputs, Shape shape, BackwardFn fn);

  /// Drops every node and assigns a fresh uid so tensors recorded on the old
  /// contents are recognisably stale.
  void clear();

 private:
  std::uint64_t uid_;
  std::vector<Node> nodes_;
};

/// Tape that new operations record onto, or null when recording is off.
Tape* active_tape();

/// Makes `tape` the active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Gradient map produced by `backward`, keyed by node id on the consumed tape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::uint64_t tape_uid, std::unordered_map<NodeId, Tensor> grads)
      : tape_uid_(tape_uid), grads_(std::move(grads)) {}

  bool has(const Tensor& t) const;
  /// Gradient of a tracked leaf; throws if the leaf was unreachable.
  const Tensor& of(const Tensor& t) const;
  const std::unordered_map<NodeId, Tensor>& by_node() const { return grads_; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::uint64_t tape_uid_ = 0;
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Reverse-mode sweep from a one-element loss over the active tape. Returns
/// gradients for every reachable tracked leaf and consumes the tape.
Gradients backward(const Tensor& loss);

namespace detail {

/// Node id of `t` on `tape`, registering tracked leaves lazily; -1 when
/// untracked. Throws when an interior tensor from another tape is used.
NodeId node_on(Tape& tape, const Tensor& t);

/// Wraps a freshly computed output: checks finiteness in debug mode and
/// records a node when recording is active and any input is tracked.
Tensor finish(std::string_view op, Shape shape, std::vector<Real> values,
              std::initializer_list<const Tensor*> inputs, BackwardFn fn);
Tensor finish(std::string_view op, Shape shape, std::vector<Real> values,
              const std::vector<const Tensor*>& inputs, BackwardFn fn);
/// Variant whose backward closure may hold on to the output storage.
Tensor finish_shared(std::string_view op, Shape shape, std::shared_ptr<std::vector<Real>> values,
                     const std::vector<const Tensor*>& inputs, BackwardFn fn);

}  // namespace detail

}  // namespace boxformer
