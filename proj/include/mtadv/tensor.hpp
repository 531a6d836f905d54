#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtadv {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape);

// Dense n-dimensional array of doubles, row-major, value semantics.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                  " does not match data length " +
                                  std::to_string(data_.size()));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i) { return data_.at(i); }
  double at(std::size_t i) const { return data_.at(i); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void validate_shape() const {
    for (std::size_t e : shape_)
      if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
  }

  Shape shape_;
  std::vector<double> data_;
};

// elementwise / reduction helpers
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sign(const Tensor& a);  // sign(0) = 0
Tensor clamp(const Tensor& a, double lo, double hi);
double dot(const Tensor& a, const Tensor& b);
double norm_l1(const Tensor& a);
double norm_l2(const Tensor& a);
double norm_linf(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

// p-norm of a perturbation, p in {1, 2, inf}; inf is encoded below.
enum class PNorm { l1 = 1, l2 = 2, linf = 3 };

double p_norm(const Tensor& v, PNorm p);

// ||v||_q with q dual to p (1/p + 1/q = 1): p=1 -> q=inf, p=2 -> q=2,
// p=inf -> q=1.
double dual_norm(const Tensor& v, PNorm p);

PNorm pnorm_from_string(const std::string& s);
std::string pnorm_to_string(PNorm p);

// Central-difference gradient estimate of a scalar function, the
// independent oracle used to check the reverse-mode engine.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h);

}  // namespace mtadv
