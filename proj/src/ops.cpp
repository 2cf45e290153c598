#include "aen/ops.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "aen/error.h"
#include "detail/gemm.h"

namespace aen {

namespace {

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

// Returns the gradient buffer of `t`, allocating it zero-filled on first
// use, or null when `t` does not participate in differentiation.
double* grad_buf(const std::shared_ptr<TensorImpl>& t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return t->grad.data();
}

// Gradient of an op's output inside its backward closure; null when the
// output turned out not to lie on the path to the loss.
const double* out_grad(const std::shared_ptr<TensorImpl>& t) {
  return t->grad.empty() ? nullptr : t->grad.data();
}

// Collects the bookkeeping every op repeats: which inputs are tracked on
// the active tape, whether recording is needed at all, and wiring the
// output tensor to its tape node.
struct Rec {
  Tape* tape = Tape::active();
  bool any_grad = false;
  std::vector<int> parents;

  void input(const Tensor& t) {
    TensorImpl* i = t.impl();
    if (i->requires_grad) any_grad = true;
    if (tape != nullptr && i->tape == tape && i->node >= 0) {
      parents.push_back(i->node);
    }
  }

  bool live() const { return tape != nullptr && any_grad; }

  void output(Tensor& out, std::function<void()> backward_fn) {
    if (!live()) return;
    out.set_requires_grad(true);
    TensorImpl* i = out.impl();
    i->tape = tape;
    i->node = tape->record(std::move(parents), std::move(backward_fn));
  }
};

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) {
    throw ValueError(std::string(who) + ": undefined tensor argument");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Dfn>
Tensor unary_elementwise(const Tensor& x, const char* who, Fwd fwd, Dfn dfn) {
  check_defined(x, who);
  const size_t n = x.values().size();
  std::vector<double> out_vals(n);
  for (size_t i = 0; i < n; ++i) out_vals[i] = fwd(x.values()[i]);

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values(x.shape(), std::move(out_vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, dfn] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      const size_t n = px->values.size();
      for (size_t i = 0; i < n; ++i) {
        dx[i] += g[i] * dfn(px->values[i], po->values[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_elementwise(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  check_same_shape(a, b, "add");
  const size_t n = a.values().size();
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) vals[i] = a.values()[i] + b.values()[i];

  Rec rec;
  rec.input(a);
  rec.input(b);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  if (rec.live()) {
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pa, pb, po] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      const size_t n = po->values.size();
      if (double* da = grad_buf(pa)) {
        for (size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (double* db = grad_buf(pb)) {
        for (size_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  check_same_shape(a, b, "sub");
  const size_t n = a.values().size();
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) vals[i] = a.values()[i] - b.values()[i];

  Rec rec;
  rec.input(a);
  rec.input(b);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  if (rec.live()) {
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pa, pb, po] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      const size_t n = po->values.size();
      if (double* da = grad_buf(pa)) {
        for (size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (double* db = grad_buf(pb)) {
        for (size_t i = 0; i < n; ++i) db[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  check_same_shape(a, b, "mul");
  const size_t n = a.values().size();
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) vals[i] = a.values()[i] * b.values()[i];

  Rec rec;
  rec.input(a);
  rec.input(b);
  Tensor out = Tensor::from_values(a.shape(), std::move(vals));
  if (rec.live()) {
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pa, pb, po] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      const size_t n = po->values.size();
      if (double* da = grad_buf(pa)) {
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * pb->values[i];
      }
      if (double* db = grad_buf(pb)) {
        for (size_t i = 0; i < n; ++i) db[i] += g[i] * pa->values[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double s) {
  check_defined(x, "scale");
  const size_t n = x.values().size();
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) vals[i] = s * x.values()[i];

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values(x.shape(), std::move(vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, s] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      const size_t n = px->values.size();
      for (size_t i = 0; i < n; ++i) dx[i] += s * g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double total = 0.0;
  for (double v : x.values()) total += v;

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::scalar(total);
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      const size_t n = px->values.size();
      for (size_t i = 0; i < n; ++i) dx[i] += g[0];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  check_defined(x, "reshape");
  std::int64_t n = 1;
  for (int d : new_shape) {
    if (d < 0) throw ShapeError("reshape: negative dimension");
    n *= d;
  }
  if (n != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values(std::move(new_shape), x.values());
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      const size_t n = px->values.size();
      for (size_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  check_defined(x, "softmax");
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) {
    throw ValueError("softmax: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  const std::int64_t len = x.dim(axis);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
  if (len == 0) throw ShapeError("softmax: empty axis");
  for (double v : x.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("softmax: non-finite input value");
    }
  }

  std::vector<double> vals(x.values().size());
  const double* in = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double m = in[base];
      for (std::int64_t l = 1; l < len; ++l) {
        m = std::max(m, in[base + l * inner]);
      }
      double z = 0.0;
      for (std::int64_t l = 0; l < len; ++l) {
        const double e = std::exp(in[base + l * inner] - m);
        vals[base + l * inner] = e;
        z += e;
      }
      for (std::int64_t l = 0; l < len; ++l) vals[base + l * inner] /= z;
    }
  }

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values(x.shape(), std::move(vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, outer, len, inner] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      const double* y = po->values.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::int64_t l = 0; l < len; ++l) {
            const std::int64_t k = base + l * inner;
            dot += g[k] * y[k];
          }
          for (std::int64_t l = 0; l < len; ++l) {
            const std::int64_t k = base + l * inner;
            dx[k] += y[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Expands one batch item of [Cin,H,W] into the im2col matrix
// cols[Cin*kh*kw][Hout*Wout] for a stride-1, zero-padded convolution.
void im2col(const double* img, int Cin, int H, int W, int kh, int kw, int pad,
            int Hout, int Wout, double* cols) {
  for (int ci = 0; ci < Cin; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (ci * kh + ki) * kw + kj;
        double* dst = cols + static_cast<size_t>(row) * Hout * Wout;
        for (int oh = 0; oh < Hout; ++oh, dst += Wout) {
          const int ih = oh - pad + ki;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wout, 0.0);
            continue;
          }
          const double* src = img + (static_cast<size_t>(ci) * H + ih) * W;
          const int lo = std::max(0, pad - kj);
          const int hi = std::min(Wout, W + pad - kj);
          std::fill(dst, dst + std::min(lo, Wout), 0.0);
          for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow - pad + kj];
          if (hi < Wout) std::fill(dst + std::max(hi, 0), dst + Wout, 0.0);
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds dcols back onto the image gradient.
void col2im_add(const double* dcols, int Cin, int H, int W, int kh, int kw,
                int pad, int Hout, int Wout, double* dimg) {
  for (int ci = 0; ci < Cin; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (ci * kh + ki) * kw + kj;
        const double* src = dcols + static_cast<size_t>(row) * Hout * Wout;
        for (int oh = 0; oh < Hout; ++oh, src += Wout) {
          const int ih = oh - pad + ki;
          if (ih < 0 || ih >= H) continue;
          double* dst = dimg + (static_cast<size_t>(ci) * H + ih) * W;
          const int lo = std::max(0, pad - kj);
          const int hi = std::min(Wout, W + pad - kj);
          for (int ow = lo; ow < hi; ++ow) dst[ow - pad + kj] += src[ow];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int padding) {
  check_defined(input, "conv2d");
  check_defined(weight, "conv2d");
  check_defined(bias, "conv2d");
  if (input.ndim() != 4) {
    throw ShapeError("conv2d: input must be [B,C,H,W], got " +
                     shape_str(input.shape()));
  }
  if (weight.ndim() != 4) {
    throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " +
                     shape_str(weight.shape()));
  }
  const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (kh != kw) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (kh % 2 == 0) {
    throw ValueError("conv2d: even kernel size " + std::to_string(kh) +
                     " rejected; same-padding needs an odd kernel");
  }
  if (weight.dim(1) != Cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(Cin));
  }
  if (bias.ndim() != 1 || bias.dim(0) != Cout) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(Cout) +
                     "], got " + shape_str(bias.shape()));
  }
  if (padding < 0) throw ValueError("conv2d: negative padding");
  const int Hout = H + 2 * padding - kh + 1;
  const int Wout = W + 2 * padding - kw + 1;
  if (Hout <= 0 || Wout <= 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " with padding " +
                     std::to_string(padding) + " does not fit input " +
                     shape_str(input.shape()));
  }

  const int K = Cin * kh * kw;
  const int Npos = Hout * Wout;
  std::vector<double> vals(static_cast<size_t>(B) * Cout * Npos, 0.0);
  std::vector<double> cols(static_cast<size_t>(K) * Npos);
  for (int b = 0; b < B; ++b) {
    const double* img =
        input.values().data() + static_cast<size_t>(b) * Cin * H * W;
    im2col(img, Cin, H, W, kh, kw, padding, Hout, Wout, cols.data());
    double* out_b = vals.data() + static_cast<size_t>(b) * Cout * Npos;
    gemm_nn(Cout, Npos, K, weight.values().data(), cols.data(), out_b);
    for (int c = 0; c < Cout; ++c) {
      const double bc = bias.values()[static_cast<size_t>(c)];
      double* row = out_b + static_cast<size_t>(c) * Npos;
      for (int j = 0; j < Npos; ++j) row[j] += bc;
    }
  }

  Rec rec;
  rec.input(input);
  rec.input(weight);
  rec.input(bias);
  Tensor out = Tensor::from_values({B, Cout, Hout, Wout}, std::move(vals));
  if (rec.live()) {
    auto pi = input.impl_ptr();
    auto pw = weight.impl_ptr();
    auto pb = bias.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pi, pw, pb, po, B, Cin, H, W, Cout, kh, kw, padding, Hout,
                     Wout, K, Npos] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      double* din = grad_buf(pi);
      double* dw = grad_buf(pw);
      double* db = grad_buf(pb);
      std::vector<double> cols;
      std::vector<double> dcols;
      if (dw != nullptr) cols.resize(static_cast<size_t>(K) * Npos);
      if (din != nullptr) dcols.resize(static_cast<size_t>(K) * Npos);
      for (int b = 0; b < B; ++b) {
        const double* g_b = g + static_cast<size_t>(b) * Cout * Npos;
        if (db != nullptr) {
          for (int c = 0; c < Cout; ++c) {
            const double* row = g_b + static_cast<size_t>(c) * Npos;
            double s = 0.0;
            for (int j = 0; j < Npos; ++j) s += row[j];
            db[c] += s;
          }
        }
        if (dw != nullptr) {
          const double* img =
              pi->values.data() + static_cast<size_t>(b) * Cin * H * W;
          im2col(img, Cin, H, W, kh, kw, padding, Hout, Wout, cols.data());
          gemm_nt(Cout, K, Npos, g_b, cols.data(), dw);
        }
        if (din != nullptr) {
          std::fill(dcols.begin(), dcols.end(), 0.0);
          gemm_tn(K, Npos, Cout, pw->values.data(), g_b, dcols.data());
          col2im_add(dcols.data(), Cin, H, W, kh, kw, padding, Hout, Wout,
                     din + static_cast<size_t>(b) * Cin * H * W);
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input) {
  check_defined(input, "maxpool2d");
  if (input.ndim() != 4) {
    throw ShapeError("maxpool2d: input must be [B,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  const int Hout = H / 2, Wout = W / 2;
  if (Hout == 0 || Wout == 0) {
    throw ShapeError("maxpool2d: input " + shape_str(input.shape()) +
                     " too small for a 2x2 window");
  }

  std::vector<double> vals(static_cast<size_t>(B) * C * Hout * Wout);
  std::vector<std::int64_t> argmax(vals.size());
  const double* in = input.values().data();
  size_t o = 0;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const size_t plane = (static_cast<size_t>(b) * C + c) * H * W;
      for (int oh = 0; oh < Hout; ++oh) {
        for (int ow = 0; ow < Wout; ++ow, ++o) {
          const size_t base = plane + static_cast<size_t>(2 * oh) * W + 2 * ow;
          // Scan order fixes the argmax for ties: first element wins.
          size_t best = base;
          double bv = in[base];
          const size_t cands[3] = {base + 1, base + W, base + W + 1};
          for (size_t cand : cands) {
            if (in[cand] > bv) {
              bv = in[cand];
              best = cand;
            }
          }
          vals[o] = bv;
          argmax[o] = static_cast<std::int64_t>(best);
        }
      }
    }
  }

  Rec rec;
  rec.input(input);
  Tensor out = Tensor::from_values({B, C, Hout, Wout}, std::move(vals));
  if (rec.live()) {
    auto pi = input.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pi, po, argmax = std::move(argmax)] {
      const double* g = out_grad(po);
      double* dx = grad_buf(pi);
      if (g == nullptr || dx == nullptr) return;
      for (size_t i = 0; i < argmax.size(); ++i) {
        dx[static_cast<size_t>(argmax[i])] += g[i];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_defined(input, "linear");
  check_defined(weight, "linear");
  check_defined(bias, "linear");
  if (input.ndim() != 2 || weight.ndim() != 2) {
    throw ShapeError("linear: input " + shape_str(input.shape()) +
                     " and weight " + shape_str(weight.shape()) +
                     " must both be 2-d");
  }
  const int B = input.dim(0), In = input.dim(1);
  const int Out = weight.dim(0);
  if (weight.dim(1) != In) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) +
                     " does not match input " + shape_str(input.shape()));
  }
  if (bias.ndim() != 1 || bias.dim(0) != Out) {
    throw ShapeError("linear: bias must be [" + std::to_string(Out) +
                     "], got " + shape_str(bias.shape()));
  }

  std::vector<double> vals(static_cast<size_t>(B) * Out);
  for (int b = 0; b < B; ++b) {
    double* row = vals.data() + static_cast<size_t>(b) * Out;
    std::memcpy(row, bias.values().data(), sizeof(double) * Out);
  }
  gemm_nt(B, Out, In, input.values().data(), weight.values().data(),
          vals.data());

  Rec rec;
  rec.input(input);
  rec.input(weight);
  rec.input(bias);
  Tensor out = Tensor::from_values({B, Out}, std::move(vals));
  if (rec.live()) {
    auto pi = input.impl_ptr();
    auto pw = weight.impl_ptr();
    auto pb = bias.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pi, pw, pb, po, B, In, Out] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      if (double* din = grad_buf(pi)) {
        gemm_nn(B, In, Out, g, pw->values.data(), din);
      }
      if (double* dw = grad_buf(pw)) {
        gemm_tn(Out, In, B, g, pi->values.data(), dw);
      }
      if (double* db = grad_buf(pb)) {
        for (int b = 0; b < B; ++b) {
          const double* row = g + static_cast<size_t>(b) * Out;
          for (int o = 0; o < Out; ++o) db[o] += row[o];
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, bool training, double eps,
                   double momentum) {
  check_defined(input, "batchnorm2d");
  if (input.ndim() != 4) {
    throw ShapeError("batchnorm2d: input must be [B,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2),
            W = input.dim(3);
  for (const Tensor* t : {&gamma, &beta, const_cast<const Tensor*>(&running_mean),
                          const_cast<const Tensor*>(&running_var)}) {
    check_defined(*t, "batchnorm2d");
    if (t->ndim() != 1 || t->dim(0) != C) {
      throw ShapeError("batchnorm2d: per-channel tensors must be [" +
                       std::to_string(C) + "], got " + shape_str(t->shape()));
    }
  }
  const std::int64_t N = static_cast<std::int64_t>(B) * H * W;
  if (training && N < 2) {
    throw ValueError("batchnorm2d: batch statistics need at least 2 values "
                     "per channel");
  }

  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const double* in = input.values().data();
  std::vector<double> mean(C), var(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* p = in + (static_cast<std::int64_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(N);
      double sq = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* p = in + (static_cast<std::int64_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      mean[c] = mu;
      var[c] = sq / static_cast<double>(N);  // biased, used to normalise
      // Running estimates use the unbiased variance, framework convention.
      const double unbiased = sq / static_cast<double>(N - 1);
      auto& rm = running_mean.mutable_values();
      auto& rv = running_var.mutable_values();
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      var[c] = running_var.values()[c];
    }
  }

  std::vector<double> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  std::vector<double> vals(input.values().size());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const double g = gamma.values()[c], bt = beta.values()[c];
      const double mu = mean[c], is = inv_std[c];
      const double* p = in + (static_cast<std::int64_t>(b) * C + c) * plane;
      double* q = vals.data() + (static_cast<std::int64_t>(b) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        q[i] = g * (p[i] - mu) * is + bt;
      }
    }
  }

  Rec rec;
  rec.input(input);
  rec.input(gamma);
  rec.input(beta);
  Tensor out = Tensor::from_values(input.shape(), std::move(vals));
  if (rec.live()) {
    auto pi = input.impl_ptr();
    auto pg = gamma.impl_ptr();
    auto pb = beta.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pi, pg, pb, po, B, C, plane, N, training,
                     mean = std::move(mean), inv_std = std::move(inv_std)] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      double* din = grad_buf(pi);
      double* dgamma = grad_buf(pg);
      double* dbeta = grad_buf(pb);
      const double* in = pi->values.data();
      for (int c = 0; c < C; ++c) {
        const double mu = mean[static_cast<size_t>(c)];
        const double is = inv_std[static_cast<size_t>(c)];
        // Per-channel reductions: sum of gradients and of grad * x_hat.
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < B; ++b) {
          const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double gi = g[base + i];
            sum_g += gi;
            sum_gx += gi * (in[base + i] - mu) * is;
          }
        }
        if (dgamma != nullptr) dgamma[c] += sum_gx;
        if (dbeta != nullptr) dbeta[c] += sum_g;
        if (din == nullptr) continue;
        const double gam = pg->values[static_cast<size_t>(c)];
        if (training) {
          // Differentiates through the batch statistics.
          const double invN = 1.0 / static_cast<double>(N);
          for (int b = 0; b < B; ++b) {
            const std::int64_t base =
                (static_cast<std::int64_t>(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double xh = (in[base + i] - mu) * is;
              din[base + i] += gam * is * invN *
                               (static_cast<double>(N) * g[base + i] - sum_g -
                                xh * sum_gx);
            }
          }
        } else {
          // Running stats are constants.
          for (int b = 0; b < B; ++b) {
            const std::int64_t base =
                (static_cast<std::int64_t>(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              din[base + i] += gam * is * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng* rng) {
  check_defined(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) {
    throw ValueError("dropout: probability " + std::to_string(p) +
                     " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) {
    throw ValueError("dropout: random source required in training mode");
  }

  const size_t n = x.values().size();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n);
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) {
    mask[i] = rng->uniform() >= p ? keep_scale : 0.0;
    vals[i] = x.values()[i] * mask[i];
  }

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values(x.shape(), std::move(vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, mask = std::move(mask)] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      for (size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
    });
  }
  return out;
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev,
                                    const LstmParams& p) {
  check_defined(x, "lstm_cell");
  check_defined(h_prev, "lstm_cell");
  check_defined(c_prev, "lstm_cell");
  if (x.ndim() != 2 || h_prev.ndim() != 2 || c_prev.ndim() != 2) {
    throw ShapeError("lstm_cell: x, h, c must be 2-d");
  }
  const int fourH = p.w_ih.dim(0);
  const int Hdim = fourH / 4;
  if (fourH % 4 != 0 || p.w_hh.shape() != std::vector<int>{fourH, Hdim} ||
      h_prev.dim(1) != Hdim) {
    throw ShapeError("lstm_cell: inconsistent gate dimensions, w_ih " +
                     shape_str(p.w_ih.shape()) + ", w_hh " +
                     shape_str(p.w_hh.shape()) + ", h " +
                     shape_str(h_prev.shape()));
  }
  check_same_shape(h_prev, c_prev, "lstm_cell");

  Tensor gates =
      add(linear(x, p.w_ih, p.b_ih), linear(h_prev, p.w_hh, p.b_hh));
  Tensor i = sigmoid(slice_cols(gates, 0, Hdim));
  Tensor f = sigmoid(slice_cols(gates, Hdim, 2 * Hdim));
  Tensor g = tanh(slice_cols(gates, 2 * Hdim, 3 * Hdim));
  Tensor o = sigmoid(slice_cols(gates, 3 * Hdim, 4 * Hdim));
  Tensor c_next = add(mul(f, c_prev), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Tensor to_frames(const Tensor& x) {
  check_defined(x, "to_frames");
  if (x.ndim() != 4) {
    throw ShapeError("to_frames: input must be [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = C * H;
  std::vector<double> vals(x.values().size());
  const double* in = x.values().data();
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < H; ++h) {
        const double* src =
            in + ((static_cast<size_t>(b) * C + c) * H + h) * W;
        double* dst =
            vals.data() + (static_cast<size_t>(b) * W) * F + c * H + h;
        for (int w = 0; w < W; ++w) dst[static_cast<size_t>(w) * F] = src[w];
      }
    }
  }

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values({B, W, F}, std::move(vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, B, C, H, W, F] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
          for (int h = 0; h < H; ++h) {
            double* dst =
                dx + ((static_cast<size_t>(b) * C + c) * H + h) * W;
            const double* src =
                g + (static_cast<size_t>(b) * W) * F + c * H + h;
            for (int w = 0; w < W; ++w) {
              dst[w] += src[static_cast<size_t>(w) * F];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor time_slice(const Tensor& seq, int t) {
  check_defined(seq, "time_slice");
  if (seq.ndim() != 3) {
    throw ShapeError("time_slice: input must be [B,T,F], got " +
                     shape_str(seq.shape()));
  }
  const int B = seq.dim(0), T = seq.dim(1), F = seq.dim(2);
  if (t < 0 || t >= T) {
    throw ShapeError("time_slice: step " + std::to_string(t) +
                     " out of range for T=" + std::to_string(T));
  }
  std::vector<double> vals(static_cast<size_t>(B) * F);
  const double* in = seq.values().data();
  for (int b = 0; b < B; ++b) {
    std::memcpy(vals.data() + static_cast<size_t>(b) * F,
                in + (static_cast<size_t>(b) * T + t) * F, sizeof(double) * F);
  }

  Rec rec;
  rec.input(seq);
  Tensor out = Tensor::from_values({B, F}, std::move(vals));
  if (rec.live()) {
    auto ps = seq.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [ps, po, B, T, F, t] {
      const double* g = out_grad(po);
      double* ds = grad_buf(ps);
      if (g == nullptr || ds == nullptr) return;
      for (int b = 0; b < B; ++b) {
        double* dst = ds + (static_cast<size_t>(b) * T + t) * F;
        const double* src = g + static_cast<size_t>(b) * F;
        for (int f = 0; f < F; ++f) dst[f] += src[f];
      }
    });
  }
  return out;
}

Tensor stack_time(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ValueError("stack_time: no steps");
  for (const Tensor& s : steps) {
    check_defined(s, "stack_time");
    if (s.ndim() != 2) {
      throw ShapeError("stack_time: steps must be [B,F], got " +
                       shape_str(s.shape()));
    }
    check_same_shape(s, steps.front(), "stack_time");
  }
  const int B = steps.front().dim(0), F = steps.front().dim(1);
  const int T = static_cast<int>(steps.size());
  std::vector<double> vals(static_cast<size_t>(B) * T * F);
  for (int t = 0; t < T; ++t) {
    const double* in = steps[static_cast<size_t>(t)].values().data();
    for (int b = 0; b < B; ++b) {
      std::memcpy(vals.data() + (static_cast<size_t>(b) * T + t) * F,
                  in + static_cast<size_t>(b) * F, sizeof(double) * F);
    }
  }

  Rec rec;
  for (const Tensor& s : steps) rec.input(s);
  Tensor out = Tensor::from_values({B, T, F}, std::move(vals));
  if (rec.live()) {
    std::vector<std::shared_ptr<TensorImpl>> ps;
    ps.reserve(steps.size());
    for (const Tensor& s : steps) ps.push_back(s.impl_ptr());
    auto po = out.impl_ptr();
    rec.output(out, [ps = std::move(ps), po, B, T, F] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      for (int t = 0; t < T; ++t) {
        double* ds = grad_buf(ps[static_cast<size_t>(t)]);
        if (ds == nullptr) continue;
        for (int b = 0; b < B; ++b) {
          const double* src = g + (static_cast<size_t>(b) * T + t) * F;
          double* dst = ds + static_cast<size_t>(b) * F;
          for (int f = 0; f < F; ++f) dst[f] += src[f];
        }
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int lo, int hi) {
  check_defined(x, "slice_cols");
  if (x.ndim() != 2) {
    throw ShapeError("slice_cols: input must be 2-d, got " +
                     shape_str(x.shape()));
  }
  const int B = x.dim(0), N = x.dim(1);
  if (lo < 0 || hi > N || lo >= hi) {
    throw ShapeError("slice_cols: range [" + std::to_string(lo) + ", " +
                     std::to_string(hi) + ") invalid for " +
                     std::to_string(N) + " columns");
  }
  const int M = hi - lo;
  std::vector<double> vals(static_cast<size_t>(B) * M);
  const double* in = x.values().data();
  for (int b = 0; b < B; ++b) {
    std::memcpy(vals.data() + static_cast<size_t>(b) * M,
                in + static_cast<size_t>(b) * N + lo, sizeof(double) * M);
  }

  Rec rec;
  rec.input(x);
  Tensor out = Tensor::from_values({B, M}, std::move(vals));
  if (rec.live()) {
    auto px = x.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [px, po, B, N, M, lo] {
      const double* g = out_grad(po);
      double* dx = grad_buf(px);
      if (g == nullptr || dx == nullptr) return;
      for (int b = 0; b < B; ++b) {
        const double* src = g + static_cast<size_t>(b) * M;
        double* dst = dx + static_cast<size_t>(b) * N + lo;
        for (int j = 0; j < M; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_cols");
  check_defined(b, "concat_cols");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: want [B,Na] and [B,Nb], got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int B = a.dim(0), Na = a.dim(1), Nb = b.dim(1);
  std::vector<double> vals(static_cast<size_t>(B) * (Na + Nb));
  for (int r = 0; r < B; ++r) {
    double* dst = vals.data() + static_cast<size_t>(r) * (Na + Nb);
    std::memcpy(dst, a.values().data() + static_cast<size_t>(r) * Na,
                sizeof(double) * Na);
    std::memcpy(dst + Na, b.values().data() + static_cast<size_t>(r) * Nb,
                sizeof(double) * Nb);
  }

  Rec rec;
  rec.input(a);
  rec.input(b);
  Tensor out = Tensor::from_values({B, Na + Nb}, std::move(vals));
  if (rec.live()) {
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pa, pb, po, B, Na, Nb] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      double* da = grad_buf(pa);
      double* db = grad_buf(pb);
      for (int r = 0; r < B; ++r) {
        const double* src = g + static_cast<size_t>(r) * (Na + Nb);
        if (da != nullptr) {
          double* dst = da + static_cast<size_t>(r) * Na;
          for (int j = 0; j < Na; ++j) dst[j] += src[j];
        }
        if (db != nullptr) {
          double* dst = db + static_cast<size_t>(r) * Nb;
          for (int j = 0; j < Nb; ++j) dst[j] += src[Na + j];
        }
      }
    });
  }
  return out;
}

Tensor attend(const Tensor& alpha, const Tensor& seq) {
  check_defined(alpha, "attend");
  check_defined(seq, "attend");
  if (alpha.ndim() != 2 || seq.ndim() != 3 || alpha.dim(0) != seq.dim(0) ||
      alpha.dim(1) != seq.dim(1)) {
    throw ShapeError("attend: want weights [B,T] and sequence [B,T,F], got " +
                     shape_str(alpha.shape()) + " and " +
                     shape_str(seq.shape()));
  }
  const int B = seq.dim(0), T = seq.dim(1), F = seq.dim(2);
  std::vector<double> vals(static_cast<size_t>(B) * F, 0.0);
  const double* w = alpha.values().data();
  const double* s = seq.values().data();
  for (int b = 0; b < B; ++b) {
    double* dst = vals.data() + static_cast<size_t>(b) * F;
    for (int t = 0; t < T; ++t) {
      const double a = w[static_cast<size_t>(b) * T + t];
      const double* src = s + (static_cast<size_t>(b) * T + t) * F;
      for (int f = 0; f < F; ++f) dst[f] += a * src[f];
    }
  }

  Rec rec;
  rec.input(alpha);
  rec.input(seq);
  Tensor out = Tensor::from_values({B, F}, std::move(vals));
  if (rec.live()) {
    auto pa = alpha.impl_ptr();
    auto ps = seq.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pa, ps, po, B, T, F] {
      const double* g = out_grad(po);
      if (g == nullptr) return;
      double* da = grad_buf(pa);
      double* ds = grad_buf(ps);
      for (int b = 0; b < B; ++b) {
        const double* gb = g + static_cast<size_t>(b) * F;
        for (int t = 0; t < T; ++t) {
          const size_t at = static_cast<size_t>(b) * T + t;
          const double* sv = ps->values.data() + at * F;
          if (da != nullptr) {
            double dot = 0.0;
            for (int f = 0; f < F; ++f) dot += gb[f] * sv[f];
            da[at] += dot;
          }
          if (ds != nullptr) {
            const double a = pa->values[at];
            double* dst = ds + at * F;
            for (int f = 0; f < F; ++f) dst[f] += a * gb[f];
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_defined(logits, "cross_entropy");
  if (logits.ndim() != 2) {
    throw ShapeError("cross_entropy: logits must be [B,C], got " +
                     shape_str(logits.shape()));
  }
  const int B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(B));
  }
  for (int y : labels) {
    if (y < 0 || y >= C) {
      throw ValueError("cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(C) + " classes");
    }
  }
  if (B == 0) throw ShapeError("cross_entropy: empty batch");

  const double* z = logits.values().data();
  std::vector<double> probs(static_cast<size_t>(B) * C);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* row = z + static_cast<size_t>(b) * C;
    double m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    double sum = 0.0;
    double* prow = probs.data() + static_cast<size_t>(b) * C;
    for (int c = 0; c < C; ++c) {
      prow[c] = std::exp(row[c] - m);
      sum += prow[c];
    }
    for (int c = 0; c < C; ++c) prow[c] /= sum;
    const double lse = m + std::log(sum);
    loss += lse - row[labels[static_cast<size_t>(b)]];
  }
  loss /= static_cast<double>(B);

  Rec rec;
  rec.input(logits);
  Tensor out = Tensor::scalar(loss);
  if (rec.live()) {
    auto pl = logits.impl_ptr();
    auto po = out.impl_ptr();
    rec.output(out, [pl, po, labels, probs = std::move(probs), B, C] {
      const double* g = out_grad(po);
      double* dz = grad_buf(pl);
      if (g == nullptr || dz == nullptr) return;
      const double scale = g[0] / static_cast<double>(B);
      for (int b = 0; b < B; ++b) {
        const double* prow = probs.data() + static_cast<size_t>(b) * C;
        double* drow = dz + static_cast<size_t>(b) * C;
        const int y = labels[static_cast<size_t>(b)];
        for (int c = 0; c < C; ++c) {
          drow[c] += scale * (prow[c] - (c == y ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace aen
