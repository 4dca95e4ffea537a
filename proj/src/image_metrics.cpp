#include "splq/image_metrics.hpp"

#include "splq/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace splq {

namespace {

// Dense single-channel plane.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> v;
  Plane(int w, int h, double fill = 0.0) : width(w), height(h), v(static_cast<std::size_t>(w) * h, fill) {}
  double &operator()(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double c = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += k[i];
  }
  for (auto &x : k) x /= sum;
  return k;
}

Plane luminance(const Image &img) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < p.v.size(); ++i)
    p.v[i] = (img.data[i * 3] + img.data[i * 3 + 1] + img.data[i * 3 + 2]) / 3.0;
  return p;
}

// Separable correlation keeping only fully-contained windows.
Plane filter_valid(const Plane &in, const std::vector<double> &k) {
  const int n = static_cast<int>(k.size());
  const int ow = in.width - n + 1, oh = in.height - n + 1;
  Plane tmp(ow, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * in(x + i, y);
      tmp(x, y) = s;
    }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp(x, y + i);
      out(x, y) = s;
    }
  return out;
}

// Adjoint of filter_valid: scatter each window value back over its support.
Plane filter_valid_adjoint(const Plane &in, const std::vector<double> &k, int width, int height) {
  const int n = static_cast<int>(k.size());
  Plane tmp(in.width, height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int i = 0; i < n; ++i) tmp(x, y + i) += k[i] * in(x, y);
  Plane out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int i = 0; i < n; ++i) out(x + i, y) += k[i] * tmp(x, y);
  return out;
}

void check_shapes(const Image &a, const Image &b, const SsimOptions &o) {
  if (!a.same_shape(b)) throw ContractError("ssim: image shapes differ");
  if (std::min(a.width, a.height) < o.window) throw ArgumentError("ssim: image smaller than window");
}

SsimGradient ssim_impl(const Image &a, const Image &b, const SsimOptions &o, bool want_grad) {
  check_shapes(a, b, o);
  const auto kernel = gaussian_kernel(o.window, o.sigma);
  const double c1 = (o.k1) * (o.k1), c2 = (o.k2) * (o.k2);
  const Plane la = luminance(a), lb = luminance(b);
  Plane aa(la.width, la.height), bb(la.width, la.height), ab(la.width, la.height);
  for (std::size_t i = 0; i < la.v.size(); ++i) {
    aa.v[i] = la.v[i] * la.v[i];
    bb.v[i] = lb.v[i] * lb.v[i];
    ab.v[i] = la.v[i] * lb.v[i];
  }
  const Plane mu_a = filter_valid(la, kernel), mu_b = filter_valid(lb, kernel);
  const Plane s_aa = filter_valid(aa, kernel), s_bb = filter_valid(bb, kernel), s_ab = filter_valid(ab, kernel);

  const std::size_t windows = mu_a.v.size();
  Plane d_mu(mu_a.width, mu_a.height), d_saa(mu_a.width, mu_a.height), d_sab(mu_a.width, mu_a.height);
  double total = 0.0;
  for (std::size_t i = 0; i < windows; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double var_a = s_aa.v[i] - ma * ma, var_b = s_bb.v[i] - mb * mb, cov = s_ab.v[i] - ma * mb;
    const double a1 = 2.0 * ma * mb + c1, a2 = 2.0 * cov + c2;
    const double b1 = ma * ma + mb * mb + c1, b2 = var_a + var_b + c2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (!want_grad) continue;
    d_mu.v[i] = (2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) - s * (2.0 * ma / b1 - 2.0 * ma / b2);
    d_saa.v[i] = -s / b2;
    d_sab.v[i] = 2.0 * a1 / (b1 * b2);
  }
  SsimGradient out;
  out.value = total / static_cast<double>(windows);
  if (!want_grad) return out;

  const double scale = 1.0 / static_cast<double>(windows);
  const Plane g_mu = filter_valid_adjoint(d_mu, kernel, la.width, la.height);
  const Plane g_saa = filter_valid_adjoint(d_saa, kernel, la.width, la.height);
  const Plane g_sab = filter_valid_adjoint(d_sab, kernel, la.width, la.height);
  out.grad = Image(a.width, a.height);
  for (std::size_t i = 0; i < la.v.size(); ++i) {
    const double g = scale * (g_mu.v[i] + 2.0 * la.v[i] * g_saa.v[i] + lb.v[i] * g_sab.v[i]) / 3.0;
    out.grad.data[i * 3] = g;
    out.grad.data[i * 3 + 1] = g;
    out.grad.data[i * 3 + 2] = g;
  }
  return out;
}

} // namespace

double psnr(const Image &a, const Image &b) {
  if (!a.same_shape(b)) throw ContractError("psnr: image shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrClamp;
  return std::min(kPsnrClamp, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image &a, const Image &b, const SsimOptions &options) {
  return ssim_impl(a, b, options, false).value;
}

SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimOptions &options) {
  return ssim_impl(a, b, options, true);
}

} // namespace splq
