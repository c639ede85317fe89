#include "rfd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rfd::kernels {

namespace {

void check_conv(const ConvGeometry& g, std::size_t x_size, std::size_t w_size, std::size_t b_size) {
  if (g.kernel == 0 || (g.padding == Padding::Valid && (g.kernel > g.in_h || g.kernel > g.in_w))) {
    throw std::invalid_argument("conv2d: kernel does not fit the input");
  }
  if (x_size != g.batch * g.in_h * g.in_w * g.in_c) throw std::invalid_argument("conv2d: input size mismatch");
  if (w_size != g.kernel * g.kernel * g.in_c * g.out_c) throw std::invalid_argument("conv2d: weight size mismatch");
  if (b_size != g.out_c) throw std::invalid_argument("conv2d: bias size mismatch");
}

}  // namespace

namespace {

// Output-channel count fixed at compile time keeps the accumulator row in
// registers; kDyn falls back to a runtime count.
constexpr std::size_t kDyn = 0;

template <std::size_t kCout>
void conv2d_forward_impl(const ConvGeometry& g, const double* __restrict x, const double* __restrict weight,
                         const double* __restrict bias, double* __restrict out) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const auto pad = static_cast<std::ptrdiff_t>(g.pad_before());
  const std::size_t cin = g.in_c, k = g.kernel;
  const std::size_t cout = kCout == kDyn ? g.out_c : kCout;
  std::vector<double> dyn_acc(kCout == kDyn ? cout : 0);
  double fixed_acc[kCout == kDyn ? 1 : kCout];
  double* acc = kCout == kDyn ? dyn_acc.data() : fixed_acc;

  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x + n * g.in_h * g.in_w * cin;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        for (std::size_t co = 0; co < cout; ++co) acc[co] = bias[co];
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kw) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const double* xp = xn + (static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw)) * cin;
            const double* wp = weight + (kh * k + kw) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double xv = xp[ci];
              const double* wr = wp + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) acc[co] += xv * wr[co];
            }
          }
        }
        double* o = out + ((n * oh_n + oh) * ow_n + ow) * cout;
        for (std::size_t co = 0; co < cout; ++co) o[co] = acc[co];
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  check_conv(g, x.size(), weight.size(), bias.size());
  if (out.size() != g.batch * g.out_h() * g.out_w() * g.out_c) {
    throw std::invalid_argument("conv2d: output size mismatch");
  }
  switch (g.out_c) {
    case 32: conv2d_forward_impl<32>(g, x.data(), weight.data(), bias.data(), out.data()); break;
    case 64: conv2d_forward_impl<64>(g, x.data(), weight.data(), bias.data(), out.data()); break;
    default: conv2d_forward_impl<kDyn>(g, x.data(), weight.data(), bias.data(), out.data()); break;
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b) {
  check_conv(g, x.size(), weight.size(), g.out_c);
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const std::size_t cin = g.in_c, cout = g.out_c, k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad_before());
  if (grad_out.size() != g.batch * oh_n * ow_n * cout) throw std::invalid_argument("conv2d: grad size mismatch");
  if (!grad_x.empty() && grad_x.size() != x.size()) throw std::invalid_argument("conv2d: grad_x size mismatch");
  if (!grad_w.empty() && grad_w.size() != weight.size()) throw std::invalid_argument("conv2d: grad_w size mismatch");
  if (!grad_b.empty() && grad_b.size() != cout) throw std::invalid_argument("conv2d: grad_b size mismatch");

  // Transposed copy [kh, kw, cout, cin] so the input-gradient inner loop is contiguous.
  std::vector<double> wt;
  if (!grad_x.empty()) {
    wt.resize(weight.size());
    for (std::size_t t = 0; t < k * k; ++t) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t co = 0; co < cout; ++co) {
          wt[(t * cout + co) * cin + ci] = weight[(t * cin + ci) * cout + co];
        }
      }
    }
  }

  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x.data() + n * g.in_h * g.in_w * cin;
    double* gxn = grad_x.empty() ? nullptr : grad_x.data() + n * g.in_h * g.in_w * cin;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const double* go = grad_out.data() + ((n * oh_n + oh) * ow_n + ow) * cout;
        if (!grad_b.empty()) {
          for (std::size_t co = 0; co < cout; ++co) grad_b[co] += go[co];
        }
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kw) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const std::size_t pix = static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw);
            const std::size_t tap = kh * k + kw;
            if (!grad_w.empty()) {
              const double* xp = xn + pix * cin;
              double* gw = grad_w.data() + tap * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double xv = xp[ci];
                if (xv == 0.0) continue;
                double* gr = gw + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) gr[co] += xv * go[co];
              }
            }
            if (gxn) {
              double* gx = gxn + pix * cin;
              const double* wr = wt.data() + tap * cout * cin;
              for (std::size_t co = 0; co < cout; ++co) {
                const double gv = go[co];
                if (gv == 0.0) continue;
                const double* wc = wr + co * cin;
                for (std::size_t ci = 0; ci < cin; ++ci) gx[ci] += gv * wc[ci];
              }
            }
          }
        }
      }
    }
  }
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> x, std::span<double> out,
                     std::span<std::uint32_t> argmax_out) {
  if (g.size == 0 || g.in_h < g.size || g.in_w < g.size) throw std::invalid_argument("maxpool: window does not fit");
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w(), c = g.channels;
  if (x.size() != g.batch * g.in_h * g.in_w * c) throw std::invalid_argument("maxpool: input size mismatch");
  if (out.size() != g.batch * oh_n * ow_n * c) throw std::invalid_argument("maxpool: output size mismatch");
  if (!argmax_out.empty() && argmax_out.size() != out.size()) throw std::invalid_argument("maxpool: argmax size mismatch");

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t ph = 0; ph < g.size; ++ph) {
            for (std::size_t pw = 0; pw < g.size; ++pw) {
              const std::size_t idx =
                  ((n * g.in_h + oh * g.size + ph) * g.in_w + ow * g.size + pw) * c + ch;
              if (first || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
                first = false;
              }
            }
          }
          const std::size_t o = ((n * oh_n + oh) * ow_n + ow) * c + ch;
          out[o] = best;
          if (!argmax_out.empty()) argmax_out[o] = static_cast<std::uint32_t>(best_idx);
        }
      }
    }
  }
}

void maxpool_backward(std::span<const std::uint32_t> argmax, std::span<const double> grad_out,
                      std::span<double> grad_x) {
  if (argmax.size() != grad_out.size()) throw std::invalid_argument("maxpool: grad size mismatch");
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad_x[argmax[o]] += grad_out[o];
}

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> weight, std::span<const double> bias, std::span<double> y) {
  if (x.size() != batch * in || weight.size() != in * out || bias.size() != out || y.size() != batch * out) {
    throw std::invalid_argument("dense: size mismatch");
  }
  for (std::size_t n = 0; n < batch; ++n) {
    double* yr = y.data() + n * out;
    std::copy(bias.begin(), bias.end(), yr);
    const double* xr = x.data() + n * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      const double* wr = weight.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
}

void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                    std::span<const double> weight, std::span<const double> grad_y,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b) {
  if (x.size() != batch * in || weight.size() != in * out || grad_y.size() != batch * out) {
    throw std::invalid_argument("dense: size mismatch");
  }
  for (std::size_t n = 0; n < batch; ++n) {
    const double* gy = grad_y.data() + n * out;
    const double* xr = x.data() + n * in;
    if (!grad_b.empty()) {
      for (std::size_t j = 0; j < out; ++j) grad_b[j] += gy[j];
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = weight.data() + i * out;
      if (!grad_x.empty()) {
        double s = 0.0;
        for (std::size_t j = 0; j < out; ++j) s += gy[j] * wr[j];
        grad_x[n * in + i] += s;
      }
      if (!grad_w.empty()) {
        const double xv = xr[i];
        if (xv == 0.0) continue;
        double* gw = grad_w.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) gw[j] += xv * gy[j];
      }
    }
  }
}

void relu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void log_softmax_rows(std::size_t rows, std::size_t classes, std::span<const double> logits,
                      std::span<double> out) {
  if (logits.size() != rows * classes || out.size() != logits.size()) {
    throw std::invalid_argument("log_softmax: size mismatch");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double m = z[0];
    for (std::size_t j = 1; j < classes; ++j) m = std::max(m, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < classes; ++j) out[r * classes + j] = z[j] - lse;
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  log_softmax_rows(1, logits.size(), logits, out);
  for (double& v : out) v = std::exp(v);
  return out;
}

}  // namespace rfd::kernels
