#include "mtadv/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mtadv {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

static void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return out;
}

Tensor sign(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = out[i] > 0.0 ? 1.0 : (out[i] < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, out[i]));
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_l1(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i]);
  return s;
}

double norm_l2(const Tensor& a) { return std::sqrt(dot(a, a)); }

double norm_linf(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i]));
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s = std::max(s, std::abs(a[i] - b[i]));
  return s;
}

double p_norm(const Tensor& v, PNorm p) {
  switch (p) {
    case PNorm::l1:
      return norm_l1(v);
    case PNorm::l2:
      return norm_l2(v);
    case PNorm::linf:
      return norm_linf(v);
  }
  throw std::invalid_argument("p_norm: unsupported norm");
}

double dual_norm(const Tensor& v, PNorm p) {
  switch (p) {
    case PNorm::l1:
      return norm_linf(v);
    case PNorm::l2:
      return norm_l2(v);
    case PNorm::linf:
      return norm_l1(v);
  }
  throw std::invalid_argument("dual_norm: unsupported norm, p must be 1, 2 or inf");
}

PNorm pnorm_from_string(const std::string& s) {
  if (s == "1" || s == "l1") return PNorm::l1;
  if (s == "2" || s == "l2") return PNorm::l2;
  if (s == "inf" || s == "linf") return PNorm::linf;
  throw std::invalid_argument("unknown norm '" + s + "' (expected l1, l2 or linf)");
}

std::string pnorm_to_string(PNorm p) {
  switch (p) {
    case PNorm::l1:
      return "l1";
    case PNorm::l2:
      return "l2";
    case PNorm::linf:
      return "linf";
  }
  return "?";
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double fp = f(probe);
    probe[k] = orig - h;
    const double fm = f(probe);
    probe[k] = orig;
    grad[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace mtadv
