#pragma once

// Direct-loop numeric kernels shared by inference and the autodiff tape.
//
// Layouts: images are NHWC, convolution weights are [kh, kw, cin, cout],
// dense weights are [in, out]. Every kernel has a fixed accumulation order
// that does not depend on the batch size, so a row evaluated alone and the
// same row evaluated inside a batch produce identical bits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rfd::kernels {

enum class Padding : std::uint32_t { Valid = 0, Same = 1 };

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t kernel = 0;
  std::size_t out_c = 0;
  Padding padding = Padding::Valid;

  std::size_t pad_before() const { return padding == Padding::Same ? (kernel - 1) / 2 : 0; }
  std::size_t out_h() const { return padding == Padding::Same ? in_h : in_h - kernel + 1; }
  std::size_t out_w() const { return padding == Padding::Same ? in_w : in_w - kernel + 1; }
};

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);

/// Accumulates into grad_x, grad_w and grad_b; any of them may be empty to skip.
void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b);

struct PoolGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, channels = 0;
  std::size_t size = 2;

  std::size_t out_h() const { return in_h / size; }
  std::size_t out_w() const { return in_w / size; }
};

/// Max pooling with stride == window. `argmax_out` receives, per output
/// element, the flat input index of the first maximal element in row-major
/// window order.
void maxpool_forward(const PoolGeometry& g, std::span<const double> x, std::span<double> out,
                     std::span<std::uint32_t> argmax_out);
void maxpool_backward(std::span<const std::uint32_t> argmax, std::span<const double> grad_out,
                      std::span<double> grad_x);

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> weight, std::span<const double> bias, std::span<double> y);
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                    std::span<const double> weight, std::span<const double> grad_y,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b);

void relu_forward(std::span<const double> x, std::span<double> y);

/// Row-wise log-softmax over the trailing `classes` entries of each row.
void log_softmax_rows(std::size_t rows, std::size_t classes, std::span<const double> logits,
                      std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace rfd::kernels
