#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace itae {

enum Axis : int { kBatch = 0, kChannel = 1, kTime = 2, kHeight = 3, kWidth = 4 };

struct Shape5 {
  std::array<std::int64_t, 5> dims{1, 1, 1, 1, 1};

  Shape5() = default;
  Shape5(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w)
      : dims{n, c, t, h, w} {}

  std::int64_t n() const { return dims[0]; }
  std::int64_t c() const { return dims[1]; }
  std::int64_t t() const { return dims[2]; }
  std::int64_t h() const { return dims[3]; }
  std::int64_t w() const { return dims[4]; }
  std::int64_t operator[](int axis) const { return dims[static_cast<std::size_t>(axis)]; }
  std::int64_t& operator[](int axis) { return dims[static_cast<std::size_t>(axis)]; }

  std::int64_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3] * dims[4]; }
  // Elements of one batch sample.
  std::int64_t sample_size() const { return dims[1] * dims[2] * dims[3] * dims[4]; }
  std::int64_t spatial_size() const { return dims[2] * dims[3] * dims[4]; }

  bool operator==(const Shape5&) const = default;
  std::string str() const;
};

namespace detail {

struct TensorImpl {
  Shape5 shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense rank-5 real64 array (batch, channel, time, height, width), row-major.
// Copies share storage; use clone() for an independent copy.
class Tensor5 {
 public:
  Tensor5() = default;
  explicit Tensor5(const Shape5& shape, double fill = 0.0);
  Tensor5(const Shape5& shape, std::vector<double> values);

  static Tensor5 zeros(const Shape5& shape) { return Tensor5(shape, 0.0); }
  static Tensor5 ones(const Shape5& shape) { return Tensor5(shape, 1.0); }
  static Tensor5 scalar(double v) { return Tensor5(Shape5{}, v); }
  static Tensor5 randn(const Shape5& shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor5 uniform(const Shape5& shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape5& shape() const;
  std::int64_t numel() const { return shape().numel(); }

  std::span<const double> data() const;
  // Writable view. Only meaningful for leaves (parameters, inputs); writing
  // into a recorded intermediate does not update the tape.
  std::span<double> mutable_data();

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h,
                      std::int64_t w) const;
  double at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h,
            std::int64_t w) const {
    return data()[static_cast<std::size_t>(offset(n, c, t, h, w))];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) {
    return mutable_data()[static_cast<std::size_t>(offset(n, c, t, h, w))];
  }
  double item() const;

  bool requires_grad() const;
  Tensor5& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor5 grad_tensor() const;
  void zero_grad();

  // New leaf with copied data and no graph history.
  Tensor5 detach() const;
  Tensor5 clone() const { return detach(); }

  bool all_finite() const;
  // Throws NumericError naming `what` when any element is NaN/Inf.
  void check_finite(const std::string& what) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Recorded operations in execution order. One tape per thread.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    BackwardFn backward;
  };

  static GradTape& current();

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

// Disables recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse pass from a scalar loss. Leaves that require grad accumulate
// d(loss)/d(leaf); the tape is cleared afterwards.
void backward(const Tensor5& loss);

namespace detail {

// Builds an op result. When recording is enabled and any parent requires grad,
// the result requires grad and `make_backward(result_impl)` is stored on the tape.
Tensor5 make_result(const Shape5& shape, std::vector<double> values,
                    std::vector<Tensor5> parents,
                    const std::function<GradTape::BackwardFn(TensorImpl*)>& make_backward);

}  // namespace detail

}  // namespace itae
