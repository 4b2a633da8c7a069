#include "boxformer/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace boxformer {

namespace {

#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

thread_local Tape* t_active = nullptr;
std::atomic<std::uint64_t> g_next_uid{1};

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, std::shared_ptr<std::vector<Real>> storage) {
  if (numel(shape) != static_cast<std::int64_t>(storage->size())) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(storage->size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::move(storage);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), Real(0)); }

Tensor Tensor::full(Shape shape, Real value) {
  auto n = boxformer::numel(shape);
  return make_tensor(std::move(shape),
                     std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values) {
  return make_tensor(std::move(shape), std::make_shared<std::vector<Real>>(std::move(values)));
}

Tensor Tensor::scalar(Real value) { return full({1}, value); }

const Shape& Tensor::shape() const {
  if (!impl_) throw AutogradError("use of an undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return shape()[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->storage->size()); }

std::span<const Real> Tensor::data() const { return {impl_->storage->data(), impl_->storage->size()}; }

std::span<Real> Tensor::mutable_data() {
  if (!impl_->leaf) throw AutogradError("cannot mutate the output of a recorded op");
  return {impl_->storage->data(), impl_->storage->size()};
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return (*impl_->storage)[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_->leaf) throw AutogradError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
  impl_->tape_uid = 0;
  impl_->node = -1;
  return *this;
}

Tensor Tensor::detach() const { return make_tensor(impl_->shape, impl_->storage); }

Tensor Tensor::clone() const {
  return make_tensor(impl_->shape, std::make_shared<std::vector<Real>>(*impl_->storage));
}

NodeId Tensor::node_id() const {
  Tape* tape = active_tape();
  if (!impl_ || !tape || impl_->tape_uid != tape->uid()) return -1;
  return impl_->node;
}

Tape::Tape() : uid_(g_next_uid.fetch_add(1)) {}

NodeId Tape::add_leaf(const Shape& shape) {
  nodes_.push_back(Node{"leaf", {}, shape, {}});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::add_node(std::string_view op, std::vector<NodeId> inputs, Shape shape, BackwardFn fn) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(shape), std::move(fn)});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
  uid_ = g_next_uid.fetch_add(1);
}

Tape* active_tape() { return t_active; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = previous_; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

bool Gradients::has(const Tensor& t) const {
  if (!t.defined() || t.impl().tape_uid != tape_uid_) return false;
  return grads_.count(t.impl().node) != 0;
}

const Tensor& Gradients::of(const Tensor& t) const {
  if (!has(t)) throw AutogradError("no gradient recorded for this tensor");
  return grads_.at(t.impl().node);
}

Gradients backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward needs a one-element loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!tape || !loss.requires_grad() || loss.impl().tape_uid != tape->uid()) {
    throw AutogradError("backward called on a loss that is not on the active tape");
  }
  const NodeId root = loss.impl().node;
  std::vector<std::vector<Real>> grads(static_cast<std::size_t>(root) + 1);
  grads[static_cast<std::size_t>(root)] = {Real(1)};

  std::unordered_map<NodeId, Tensor> result;
  std::vector<std::vector<Real>*> buffers;
  for (NodeId id = root; id >= 0; --id) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    const auto& node = tape->node(id);
    if (!node.backward) {
      result.emplace(id, Tensor::from(node.shape, std::move(g)));
      continue;
    }
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId in = node.inputs[i];
      if (in < 0) continue;
      auto& buf = grads[static_cast<std::size_t>(in)];
      if (buf.empty()) buf.assign(static_cast<std::size_t>(numel(tape->node(in).shape)), Real(0));
      buffers[i] = &buf;
    }
    node.backward(g, buffers);
    std::vector<Real>().swap(g);
  }
  const auto uid = tape->uid();
  tape->clear();
  return Gradients(uid, std::move(result));
}

namespace detail {

NodeId node_on(Tape& tape, const Tensor& t) {
  if (!t.requires_grad()) return -1;
  auto& impl = t.impl();
  if (impl.tape_uid == tape.uid()) return impl.node;
  if (!impl.leaf) {
    throw AutogradError("tensor recorded on another tape used as an op input; detach() it first");
  }
  impl.node = tape.add_leaf(impl.shape);
  impl.tape_uid = tape.uid();
  return impl.node;
}

Tensor finish(std::string_view op, Shape shape, std::vector<Real> values,
              const std::vector<const Tensor*>& inputs, BackwardFn fn) {
  return finish_shared(op, std::move(shape), std::make_shared<std::vector<Real>>(std::move(values)),
                       inputs, std::move(fn));
}

Tensor finish_shared(std::string_view op, Shape shape, std::shared_ptr<std::vector<Real>> values,
                     const std::vector<const Tensor*>& inputs, BackwardFn fn) {
  if (g_debug_checks) {
    for (Real v : *values) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value produced by ") + std::string(op));
      }
    }
  }
  Tensor out = make_tensor(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (!tape) return out;
  bool tracked = false;
  for (const Tensor* in : inputs) tracked = tracked || (in && in->requires_grad());
  if (!tracked) return out;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor* in : inputs) ids.push_back(in ? node_on(*tape, *in) : -1);
  auto& impl = out.impl();
  impl.requires_grad = true;
  impl.leaf = false;
  impl.node = tape->add_node(op, std::move(ids), impl.shape, std::move(fn));
  impl.tape_uid = tape->uid();
  return out;
}

Tensor finish(std::string_view op, Shape shape, std::vector<Real> values,
              std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  return finish(op, std::move(shape), std::move(values), std::vector<const Tensor*>(inputs),
                std::move(fn));
}

}  // namespace detail

}  // namespace boxformer
