#include "itae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "itae/errors.hpp"

namespace itae {

std::string Shape5::str() const {
  std::ostringstream os;
  os << dims[0] << 'x' << dims[1] << 'x' << dims[2] << 'x' << dims[3] << 'x' << dims[4];
  return os.str();
}

std::vector<double>& detail::TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor5::Tensor5(const Shape5& shape, double fill)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape.dims) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor5::Tensor5(const Shape5& shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

Tensor5 Tensor5::randn(const Shape5& shape, std::mt19937_64& rng, double stddev) {
  Tensor5 t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor5 Tensor5::uniform(const Shape5& shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor5 t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.impl_->data) v = dist(rng);
  return t;
}

const Shape5& Tensor5::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::span<const double> Tensor5::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor5::mutable_data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::int64_t Tensor5::offset(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h,
                             std::int64_t w) const {
  const auto& s = shape();
  return (((n * s.c() + c) * s.t() + t) * s.h() + h) * s.w() + w;
}

double Tensor5::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

bool Tensor5::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor5& Tensor5::set_requires_grad(bool flag) {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor5::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor5::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

Tensor5 Tensor5::grad_tensor() const {
  if (!has_grad()) return Tensor5::zeros(shape());
  return Tensor5(shape(), impl_->grad);
}

void Tensor5::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor5 Tensor5::detach() const { return Tensor5(shape(), impl_->data); }

bool Tensor5::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor5::check_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError("non-finite values in " + what);
}

namespace {
thread_local bool g_grad_enabled = true;
}

GradTape& GradTape::current() {
  thread_local GradTape tape;
  return tape;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor5& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  auto& tape = GradTape::current();
  if (tape.empty()) throw ContractError("backward() called with an empty tape");
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any trainable tensor");

  loss.impl()->ensure_grad()[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  tape.clear();
}

Tensor5 detail::make_result(const Shape5& shape, std::vector<double> values,
                            std::vector<Tensor5> parents,
                            const std::function<GradTape::BackwardFn(TensorImpl*)>& make_backward) {
  Tensor5 out(shape, std::move(values));
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor5& p) { return p.requires_grad(); });
  if (!needs) return out;
  out.set_requires_grad(true);
  GradTape::Node node;
  node.output = out.impl_ptr();
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.impl_ptr());
  node.backward = make_backward(out.impl());
  GradTape::current().record(std::move(node));
  return out;
}

}  // namespace itae
