#include "refineseg/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "refineseg/kernels.hpp"
#include "refineseg/random.hpp"

namespace refineseg {

namespace {

void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

void require_rank4(const Tensor& t, const char* what) {
  require(t.rank() == 4, ErrorCode::kShapeMismatch,
          std::string(what) + ": expected rank-4 tensor, got " +
              shape_string(t.shape()));
}

struct ConvGeometry {
  int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           const Tensor& bias, int stride, int padding) {
  require_rank4(input, "conv2d input");
  require_rank4(weight, "conv2d weight");
  require(stride >= 1, ErrorCode::kInvalidArgument, "conv2d: stride must be >= 1");
  require(padding >= 0, ErrorCode::kInvalidArgument,
          "conv2d: padding must be >= 0");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  require(weight.dim(1) == g.cin, ErrorCode::kShapeMismatch,
          "conv2d: input channels " + std::to_string(g.cin) +
              " != weight in-channels " + std::to_string(weight.dim(1)));
  require(bias.rank() == 1 && bias.dim(0) == g.cout, ErrorCode::kShapeMismatch,
          "conv2d: bias " + shape_string(bias.shape()) +
              " does not match out-channels " + std::to_string(g.cout));
  require(g.h + 2 * g.pad >= g.kh && g.w + 2 * g.pad >= g.kw,
          ErrorCode::kShapeMismatch,
          "conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
              " larger than padded input " + shape_string(input.shape()));
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// cols[(ci*kh + ky)*kw + kx, oy*wo + ox] = x[ci, oy*s - p + ky, ox*s - p + kx]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const size_t plane = static_cast<size_t>(g.ho) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    const double* xc = x + static_cast<size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((static_cast<size_t>(ci) * g.kh + ky) * g.kw + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  const size_t plane = static_cast<size_t>(g.ho) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    double* xc = dx + static_cast<size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row =
            cols + ((static_cast<size_t>(ci) * g.kh + ky) * g.kw + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<size_t>(oy) * g.wo;
          double* dst = xc + static_cast<size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

Tensor conv2d_forward(const ConvGeometry& g, const Tensor& input,
                      const Tensor& weight, const Tensor& bias) {
  Tensor out({g.n, g.cout, g.ho, g.wo});
  const int kdim = g.cin * g.kh * g.kw;
  const int plane = g.ho * g.wo;
  std::vector<double> cols;
  if (!is_pointwise(g)) cols.resize(static_cast<size_t>(kdim) * plane);
  const auto& k = kernels::active();
  for (int n = 0; n < g.n; ++n) {
    const double* x = input.ptr() + static_cast<size_t>(n) * g.cin * g.h * g.w;
    double* y = out.ptr() + static_cast<size_t>(n) * g.cout * plane;
    for (int co = 0; co < g.cout; ++co) {
      std::fill(y + static_cast<size_t>(co) * plane,
                y + static_cast<size_t>(co + 1) * plane, bias[co]);
    }
    const double* b = x;
    if (!is_pointwise(g)) {
      im2col(g, x, cols.data());
      b = cols.data();
    }
    k.gemm_nn(g.cout, plane, kdim, weight.ptr(), kdim, b, plane, y, plane);
  }
  return out;
}

void conv2d_backward(const ConvGeometry& g, const Tensor& input,
                     const Tensor& weight, const Tensor& dout, Tensor* dinput,
                     Tensor* dweight, Tensor* dbias) {
  const int kdim = g.cin * g.kh * g.kw;
  const int plane = g.ho * g.wo;
  const bool pointwise = is_pointwise(g);
  std::vector<double> cols;
  std::vector<double> dcols;
  if (!pointwise) {
    cols.resize(static_cast<size_t>(kdim) * plane);
    dcols.resize(static_cast<size_t>(kdim) * plane);
  }
  const auto& k = kernels::active();
  for (int n = 0; n < g.n; ++n) {
    const double* x = input.ptr() + static_cast<size_t>(n) * g.cin * g.h * g.w;
    const double* dy = dout.ptr() + static_cast<size_t>(n) * g.cout * plane;
    if (dbias) {
      for (int co = 0; co < g.cout; ++co) {
        double s = 0.0;
        const double* row = dy + static_cast<size_t>(co) * plane;
        for (int p = 0; p < plane; ++p) s += row[p];
        (*dbias)[co] += s;
      }
    }
    if (dweight) {
      const double* b = x;
      if (!pointwise) {
        im2col(g, x, cols.data());
        b = cols.data();
      }
      k.gemm_nt(g.cout, kdim, plane, dy, plane, b, plane, dweight->ptr(), kdim);
    }
    if (dinput) {
      double* dx = dinput->ptr() + static_cast<size_t>(n) * g.cin * g.h * g.w;
      if (pointwise) {
        k.gemm_tn(kdim, plane, g.cout, weight.ptr(), kdim, dy, plane, dx, plane);
      } else {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        k.gemm_tn(kdim, plane, g.cout, weight.ptr(), kdim, dy, plane,
                  dcols.data(), plane);
        col2im_add(g, dcols.data(), dx);
      }
    }
  }
}

struct UpGeometry {
  int n, cin, h, w, cout, k, stride, ho, wo;
};

UpGeometry up_geometry(const Tensor& input, const Tensor& weight,
                       const Tensor& bias, int stride) {
  require_rank4(input, "transposed_conv2d input");
  require_rank4(weight, "transposed_conv2d weight");
  require(stride >= 1, ErrorCode::kInvalidArgument,
          "transposed_conv2d: stride must be >= 1");
  UpGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(1);
  g.k = weight.dim(2);
  g.stride = stride;
  require(weight.dim(0) == g.cin, ErrorCode::kShapeMismatch,
          "transposed_conv2d: input channels " + std::to_string(g.cin) +
              " != weight in-channels " + std::to_string(weight.dim(0)));
  require(weight.dim(3) == g.k, ErrorCode::kShapeMismatch,
          "transposed_conv2d: kernel must be square, got " +
              shape_string(weight.shape()));
  require(bias.rank() == 1 && bias.dim(0) == g.cout, ErrorCode::kShapeMismatch,
          "transposed_conv2d: bias " + shape_string(bias.shape()) +
              " does not match out-channels " + std::to_string(g.cout));
  g.ho = (g.h - 1) * stride + g.k;
  g.wo = (g.w - 1) * stride + g.k;
  return g;
}

// cols[(co*k + ky)*k + kx, i*w + j] scatters to y[co, i*s + ky, j*s + kx].
void up_scatter(const UpGeometry& g, const double* cols, double* y) {
  const size_t plane = static_cast<size_t>(g.h) * g.w;
  for (int co = 0; co < g.cout; ++co) {
    double* yc = y + static_cast<size_t>(co) * g.ho * g.wo;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((static_cast<size_t>(co) * g.k + ky) * g.k + kx) * plane;
        for (int i = 0; i < g.h; ++i) {
          double* dst = yc + static_cast<size_t>(i * g.stride + ky) * g.wo + kx;
          const double* src = row + static_cast<size_t>(i) * g.w;
          for (int j = 0; j < g.w; ++j) dst[static_cast<size_t>(j) * g.stride] += src[j];
        }
      }
    }
  }
}

void up_gather(const UpGeometry& g, const double* dy, double* dcols) {
  const size_t plane = static_cast<size_t>(g.h) * g.w;
  for (int co = 0; co < g.cout; ++co) {
    const double* yc = dy + static_cast<size_t>(co) * g.ho * g.wo;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = dcols + ((static_cast<size_t>(co) * g.k + ky) * g.k + kx) * plane;
        for (int i = 0; i < g.h; ++i) {
          const double* src = yc + static_cast<size_t>(i * g.stride + ky) * g.wo + kx;
          double* dst = row + static_cast<size_t>(i) * g.w;
          for (int j = 0; j < g.w; ++j) dst[j] = src[static_cast<size_t>(j) * g.stride];
        }
      }
    }
  }
}

Tensor up_forward(const UpGeometry& g, const Tensor& input, const Tensor& weight,
                  const Tensor& bias) {
  Tensor out({g.n, g.cout, g.ho, g.wo});
  const int rows = g.cout * g.k * g.k;
  const int plane = g.h * g.w;
  const size_t oplane = static_cast<size_t>(g.ho) * g.wo;
  std::vector<double> cols(static_cast<size_t>(rows) * plane);
  const auto& k = kernels::active();
  for (int n = 0; n < g.n; ++n) {
    const double* x = input.ptr() + static_cast<size_t>(n) * g.cin * plane;
    double* y = out.ptr() + static_cast<size_t>(n) * g.cout * oplane;
    for (int co = 0; co < g.cout; ++co) {
      std::fill(y + co * oplane, y + (co + 1) * oplane, bias[co]);
    }
    std::fill(cols.begin(), cols.end(), 0.0);
    k.gemm_tn(rows, plane, g.cin, weight.ptr(), rows, x, plane, cols.data(), plane);
    up_scatter(g, cols.data(), y);
  }
  return out;
}

void up_backward(const UpGeometry& g, const Tensor& input, const Tensor& weight,
                 const Tensor& dout, Tensor* dinput, Tensor* dweight,
                 Tensor* dbias) {
  const int rows = g.cout * g.k * g.k;
  const int plane = g.h * g.w;
  const size_t oplane = static_cast<size_t>(g.ho) * g.wo;
  std::vector<double> dcols(static_cast<size_t>(rows) * plane);
  const auto& k = kernels::active();
  for (int n = 0; n < g.n; ++n) {
    const double* x = input.ptr() + static_cast<size_t>(n) * g.cin * plane;
    const double* dy = dout.ptr() + static_cast<size_t>(n) * g.cout * oplane;
    if (dbias) {
      for (int co = 0; co < g.cout; ++co) {
        double s = 0.0;
        for (size_t p = 0; p < oplane; ++p) s += dy[co * oplane + p];
        (*dbias)[co] += s;
      }
    }
    // Windows never overlap (k <= stride), so the adjoint of the scatter is a
    // plain gather.
    up_gather(g, dy, dcols.data());
    if (dweight) {
      k.gemm_nt(g.cin, rows, plane, x, plane, dcols.data(), plane,
                dweight->ptr(), rows);
    }
    if (dinput) {
      double* dx = dinput->ptr() + static_cast<size_t>(n) * g.cin * plane;
      k.gemm_nn(g.cin, plane, rows, weight.ptr(), rows, dcols.data(), plane, dx,
                plane);
    }
  }
}

struct ResizeAxis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

ResizeAxis resize_axis(int in, int out) {
  ResizeAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - lo;
  }
  return a;
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
              " vs " + shape_string(b.shape()));
}

}  // namespace

namespace ops {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, weight, bias, stride, padding);
  return conv2d_forward(g, input, weight, bias);
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& weight,
                         const Tensor& bias, int stride) {
  const UpGeometry g = up_geometry(input, weight, bias, stride);
  require(g.k <= stride, ErrorCode::kInvalidArgument,
          "transposed_conv2d: kernel larger than stride is not supported");
  return up_forward(g, input, weight, bias);
}

Tensor maxpool2(const Tensor& input) {
  require_rank4(input, "maxpool2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2) / 2,
            w = input.dim(3) / 2;
  require(h >= 1 && w >= 1, ErrorCode::kShapeMismatch,
          "maxpool2: input too small " + shape_string(input.shape()));
  Tensor out({n, c, h, w});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          out.at(b, ch, i, j) = std::max(
              std::max(input.at(b, ch, 2 * i, 2 * j),
                       input.at(b, ch, 2 * i, 2 * j + 1)),
              std::max(input.at(b, ch, 2 * i + 1, 2 * j),
                       input.at(b, ch, 2 * i + 1, 2 * j + 1)));
        }
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor logit(const Tensor& prob) {
  Tensor out = prob;
  for (double& v : out.data()) {
    const double p = std::clamp(v, kBceEpsilon, 1.0 - kBceEpsilon);
    v = std::log(p / (1.0 - p));
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          ErrorCode::kShapeMismatch,
          "concat_channels: incompatible " + shape_string(a.shape()) + " and " +
              shape_string(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const size_t plane = static_cast<size_t>(a.dim(2)) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + i * ca * plane, ca * plane,
                out.ptr() + i * (ca + cb) * plane);
    std::copy_n(b.ptr() + i * cb * plane, cb * plane,
                out.ptr() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

Tensor bilinear_resize(const Tensor& input, int height, int width) {
  require_rank4(input, "bilinear_resize");
  require(height >= 1 && width >= 1, ErrorCode::kInvalidArgument,
          "bilinear_resize: target extent must be positive");
  const int n = input.dim(0), c = input.dim(1);
  const ResizeAxis ry = resize_axis(input.dim(2), height);
  const ResizeAxis rx = resize_axis(input.dim(3), width);
  Tensor out({n, c, height, width});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < height; ++i) {
        const double fy = ry.frac[i];
        for (int j = 0; j < width; ++j) {
          const double fx = rx.frac[j];
          const double top = input.at(b, ch, ry.lo[i], rx.lo[j]) * (1 - fx) +
                             input.at(b, ch, ry.lo[i], rx.hi[j]) * fx;
          const double bot = input.at(b, ch, ry.hi[i], rx.lo[j]) * (1 - fx) +
                             input.at(b, ch, ry.hi[i], rx.hi[j]) * fx;
          out.at(b, ch, i, j) = top * (1 - fy) + bot * fy;
        }
      }
    }
  }
  return out;
}

double bce_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "bce_loss");
  double s = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = target[i];
    s += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return -s / static_cast<double>(pred.numel());
}

}  // namespace ops

namespace ad {

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

Var Tape::leaf(Tensor value) {
  Node node;
  node.grad = Tensor(value.shape(), 0.0);
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<int> parents, Backward backward) {
  Node node;
  node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [&](int p) { return nodes_[p].requires_grad; });
  if (node.requires_grad) {
    node.grad = Tensor(value.shape(), 0.0);
    node.backward = std::move(backward);
  }
  node.value = std::move(value);
  node.parents = std::move(parents);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_mut(int id) { return nodes_[id].grad; }

void Tape::backward(Var loss) {
  require(loss.tape == this, ErrorCode::kInvalidArgument,
          "backward: variable belongs to another tape");
  Node& root = nodes_.at(loss.id);
  require(root.value.numel() == 1, ErrorCode::kShapeMismatch,
          "backward: loss must be a scalar, got " +
              shape_string(root.value.shape()));
  if (!root.requires_grad) return;
  root.grad[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.requires_grad && node.backward) node.backward(*this, id);
  }
}

namespace {

void same_tape(Var a, Var b) {
  require(a.tape == b.tape && a.tape != nullptr, ErrorCode::kInvalidArgument,
          "variables belong to different tapes");
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias, int stride, int padding) {
  same_tape(input, weight);
  same_tape(input, bias);
  Tape& t = *input.tape;
  const ConvGeometry g =
      conv_geometry(input.value(), weight.value(), bias.value(), stride, padding);
  Tensor y = conv2d_forward(g, input.value(), weight.value(), bias.value());
  const int xi = input.id, wi = weight.id, bi = bias.id;
  return t.record(std::move(y), {xi, wi, bi}, [g, xi, wi, bi](Tape& tp, int self) {
    conv2d_backward(g, tp.value_of(xi), tp.value_of(wi), tp.grad_mut(self),
                    tp.needs_grad(xi) ? &tp.grad_mut(xi) : nullptr,
                    tp.needs_grad(wi) ? &tp.grad_mut(wi) : nullptr,
                    tp.needs_grad(bi) ? &tp.grad_mut(bi) : nullptr);
  });
}

Var transposed_conv2d(Var input, Var weight, Var bias, int stride) {
  same_tape(input, weight);
  same_tape(input, bias);
  Tape& t = *input.tape;
  const UpGeometry g = up_geometry(input.value(), weight.value(), bias.value(), stride);
  require(g.k <= stride, ErrorCode::kInvalidArgument,
          "transposed_conv2d: kernel larger than stride is not supported");
  Tensor y = up_forward(g, input.value(), weight.value(), bias.value());
  const int xi = input.id, wi = weight.id, bi = bias.id;
  return t.record(std::move(y), {xi, wi, bi}, [g, xi, wi, bi](Tape& tp, int self) {
    up_backward(g, tp.value_of(xi), tp.value_of(wi), tp.grad_mut(self),
                tp.needs_grad(xi) ? &tp.grad_mut(xi) : nullptr,
                tp.needs_grad(wi) ? &tp.grad_mut(wi) : nullptr,
                tp.needs_grad(bi) ? &tp.grad_mut(bi) : nullptr);
  });
}

Var maxpool2(Var input) {
  Tape& t = *input.tape;
  const Tensor& x = input.value();
  Tensor y = ops::maxpool2(x);
  // Flat index of the winning input element per output element; ties go to
  // the first element in row-major window order.
  std::vector<size_t> arg(y.numel());
  const int n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
  const int xh = x.dim(2), xw = x.dim(3);
  size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const size_t base = (static_cast<size_t>(b) * c + ch) * xh * xw;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j, ++o) {
          size_t best = base + static_cast<size_t>(2 * i) * xw + 2 * j;
          for (size_t cand : {best + 1, best + xw, best + xw + 1}) {
            if (x[cand] > x[best]) best = cand;
          }
          arg[o] = best;
        }
      }
    }
  }
  const int xi = input.id;
  return t.record(std::move(y), {xi},
                  [xi, arg = std::move(arg)](Tape& tp, int self) {
                    Tensor& dx = tp.grad_mut(xi);
                    const Tensor& dy = tp.grad_mut(self);
                    for (size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += dy[i];
                  });
}

Var relu(Var input) {
  Tape& t = *input.tape;
  const int xi = input.id;
  return t.record(ops::relu(input.value()), {xi}, [xi](Tape& tp, int self) {
    Tensor& dx = tp.grad_mut(xi);
    const Tensor& x = tp.value_of(xi);
    const Tensor& dy = tp.grad_mut(self);
    for (size_t i = 0; i < dx.numel(); ++i) {
      if (x[i] > 0.0) dx[i] += dy[i];
    }
  });
}

Var sigmoid(Var input) {
  Tape& t = *input.tape;
  const int xi = input.id;
  return t.record(ops::sigmoid(input.value()), {xi}, [xi](Tape& tp, int self) {
    Tensor& dx = tp.grad_mut(xi);
    const Tensor& y = tp.value_of(self);
    const Tensor& dy = tp.grad_mut(self);
    for (size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var concat_channels(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  const int ai = a.id, bi = b.id;
  return t.record(ops::concat_channels(a.value(), b.value()), {ai, bi},
                  [ai, bi](Tape& tp, int self) {
                    const Tensor& dy = tp.grad_mut(self);
                    const Tensor& av = tp.value_of(ai);
                    const Tensor& bv = tp.value_of(bi);
                    const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
                    const size_t plane = static_cast<size_t>(av.dim(2)) * av.dim(3);
                    for (int i = 0; i < n; ++i) {
                      const double* src = dy.ptr() + i * (ca + cb) * plane;
                      if (tp.needs_grad(ai)) {
                        double* da = tp.grad_mut(ai).ptr() + i * ca * plane;
                        for (size_t k = 0; k < ca * plane; ++k) da[k] += src[k];
                      }
                      if (tp.needs_grad(bi)) {
                        double* db = tp.grad_mut(bi).ptr() + i * cb * plane;
                        for (size_t k = 0; k < cb * plane; ++k) {
                          db[k] += src[ca * plane + k];
                        }
                      }
                    }
                  });
}

Var bilinear_resize(Var input, int height, int width) {
  Tape& t = *input.tape;
  const int xi = input.id;
  const int ih = input.value().dim(2), iw = input.value().dim(3);
  return t.record(
      ops::bilinear_resize(input.value(), height, width), {xi},
      [xi, ih, iw, height, width](Tape& tp, int self) {
        const ResizeAxis ry = resize_axis(ih, height);
        const ResizeAxis rx = resize_axis(iw, width);
        Tensor& dx = tp.grad_mut(xi);
        const Tensor& dy = tp.grad_mut(self);
        const int n = dy.dim(0), c = dy.dim(1);
        for (int b = 0; b < n; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            for (int i = 0; i < height; ++i) {
              const double fy = ry.frac[i];
              for (int j = 0; j < width; ++j) {
                const double fx = rx.frac[j];
                const double g = dy.at(b, ch, i, j);
                dx.at(b, ch, ry.lo[i], rx.lo[j]) += g * (1 - fy) * (1 - fx);
                dx.at(b, ch, ry.lo[i], rx.hi[j]) += g * (1 - fy) * fx;
                dx.at(b, ch, ry.hi[i], rx.lo[j]) += g * fy * (1 - fx);
                dx.at(b, ch, ry.hi[i], rx.hi[j]) += g * fy * fx;
              }
            }
          }
        }
      });
}

Var bce_loss(Var pred, const Tensor& target) {
  Tape& t = *pred.tape;
  const double loss = ops::bce_loss(pred.value(), target);
  const int pi = pred.id;
  return t.record(Tensor({1}, loss), {pi}, [pi, target](Tape& tp, int self) {
    const Tensor& p = tp.value_of(pi);
    Tensor& dp = tp.grad_mut(pi);
    const double g = tp.grad_mut(self)[0] / static_cast<double>(p.numel());
    for (size_t i = 0; i < p.numel(); ++i) {
      const double v = p[i];
      // Zero gradient where the clamp is active.
      if (v < ops::kBceEpsilon || v > 1.0 - ops::kBceEpsilon) continue;
      const double tv = target[i];
      dp[i] += g * (-(tv / v) + (1.0 - tv) / (1.0 - v));
    }
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require(a.value().shape() == b.value().shape(), ErrorCode::kShapeMismatch,
          "add: " + shape_string(a.value().shape()) + " vs " +
              shape_string(b.value().shape()));
  Tape& t = *a.tape;
  const int ai = a.id, bi = b.id;
  Tensor sum = a.value();
  for (size_t i = 0; i < sum.numel(); ++i) sum[i] += b.value()[i];
  return t.record(std::move(sum), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& dy = tp.grad_mut(self);
    for (int k : {ai, bi}) {
      if (!tp.needs_grad(k)) continue;
      Tensor& dx = tp.grad_mut(k);
      for (size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
    }
  });
}

Var logit(Var prob) {
  Tape& t = *prob.tape;
  const int xi = prob.id;
  return t.record(ops::logit(prob.value()), {xi}, [xi](Tape& tp, int self) {
    Tensor& dx = tp.grad_mut(xi);
    const Tensor& x = tp.value_of(xi);
    const Tensor& dy = tp.grad_mut(self);
    for (size_t i = 0; i < dx.numel(); ++i) {
      const double v = x[i];
      if (v < ops::kBceEpsilon || v > 1.0 - ops::kBceEpsilon) continue;
      dx[i] += dy[i] / (v * (1.0 - v));
    }
  });
}

Var scale(Var a, double factor) {
  require(a.value().numel() == 1, ErrorCode::kShapeMismatch,
          "scale: operand must be a scalar");
  Tape& t = *a.tape;
  const int ai = a.id;
  return t.record(Tensor({1}, a.value()[0] * factor), {ai},
                  [ai, factor](Tape& tp, int self) {
                    tp.grad_mut(ai)[0] += factor * tp.grad_mut(self)[0];
                  });
}

}  // namespace ad

GradCheckResult grad_check(const LossFunction& f, const ModelParams& params,
                           int probes, std::uint64_t rng_seed) {
  require(probes >= 1, ErrorCode::kInvalidArgument, "grad_check: probes must be >= 1");
  require(params.numel() > 0, ErrorCode::kInvalidArgument,
          "grad_check: no parameters");
  ModelParams grad = params.zeros_like();
  f(params, &grad);
  if (!grad.all_finite()) {
    throw Error(ErrorCode::kNumeric, "grad_check: non-finite analytic gradient");
  }
  ModelParams probe = params;
  Rng rng(rng_seed);
  GradCheckResult result;
  const size_t total = params.numel();
  for (int k = 0; k < probes; ++k) {
    size_t flat = rng.below(total);
    size_t e = 0;
    while (flat >= params.entries()[e].value.numel()) {
      flat -= params.entries()[e].value.numel();
      ++e;
    }
    Tensor& slot = probe.entries()[e].value;
    const double orig = slot[flat];
    slot[flat] = orig + kGradCheckStep;
    const double up = f(probe, nullptr);
    slot[flat] = orig - kGradCheckStep;
    const double down = f(probe, nullptr);
    slot[flat] = orig;
    const double numeric = (up - down) / (2.0 * kGradCheckStep);
    const double analytic = grad.entries()[e].value[flat];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel >= result.max_relative_error) {
      result = {rel, params.entries()[e].name, flat, analytic, numeric};
    }
  }
  return result;
}

}  // namespace refineseg
