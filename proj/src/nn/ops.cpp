// SPDX-License-Identifier: Apache-2.0
#include "nn/ops.hpp"

#include <cmath>
#include <cstdint>
#include <memory>

#include <Eigen/Core>

#include "util/error.hpp"

namespace rdet::ops {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void check_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Parameter,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

template <typename Fn>
Var unary(const Var& a, Tensor out, Fn grad_fn) {
  return make_node(std::move(out), {a}, [grad_fn](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += grad_fn(in.value[i], self.value[i]) * self.grad[i];
    }
  });
}

}  // namespace

void im2col(const double* image, const ConvGeometry& g, double* col) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= g.height) {
            for (int ox = 0; ox < ow; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + static_cast<std::size_t>(oy) * ow;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require(x.value().rank() == 4, ErrorKind::Parameter, "conv2d: input must be NCHW");
  const int n_batch = x.value().dim(0);
  const bool per_image = weight.value().rank() == 5;
  const Shape& ws = weight.shape();
  const int out_ch = per_image ? ws[1] : ws[0];
  const int in_ch = per_image ? ws[2] : ws[1];
  const int k = per_image ? ws[3] : ws[2];
  require(in_ch == x.value().dim(1), ErrorKind::Parameter,
          "conv2d: channel mismatch " + shape_str(x.shape()) + " vs kernel " + shape_str(ws));
  require(!per_image || ws[0] == n_batch, ErrorKind::Parameter,
          "conv2d: per-image kernel batch mismatch");
  require(bias.value().size() == static_cast<std::size_t>((per_image ? n_batch : 1) * out_ch),
          ErrorKind::Parameter, "conv2d: bias shape mismatch");

  ConvGeometry g{in_ch, x.value().dim(2), x.value().dim(3), k, stride, pad};
  const int oh = g.out_height();
  const int ow = g.out_width();
  require(oh > 0 && ow > 0, ErrorKind::Parameter, "conv2d: empty output");
  const int rows = in_ch * k * k;
  const int cols = oh * ow;
  const std::size_t col_size = static_cast<std::size_t>(rows) * cols;
  const std::size_t in_stride = static_cast<std::size_t>(in_ch) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch) * cols;
  const std::size_t w_stride = static_cast<std::size_t>(out_ch) * rows;

  const bool keep_cols = weight.requires_grad();
  auto col_store = std::make_shared<std::vector<double>>(keep_cols ? col_size * n_batch : col_size);

  Tensor out({n_batch, out_ch, oh, ow});
  for (int n = 0; n < n_batch; ++n) {
    double* col = col_store->data() + (keep_cols ? col_size * n : 0);
    im2col(x.value().data() + in_stride * n, g, col);
    CMapR w(weight.value().data() + (per_image ? w_stride * n : 0), out_ch, rows);
    CMapR c(col, rows, cols);
    MapR o(out.data() + out_stride * n, out_ch, cols);
    o.noalias() = w * c;
    const double* b = bias.value().data() + (per_image ? static_cast<std::size_t>(out_ch) * n : 0);
    for (int oc = 0; oc < out_ch; ++oc) o.row(oc).array() += b[oc];
  }

  return make_node(std::move(out), {x, weight, bias},
                   [=](Node& self) {
                     Node& xin = *self.parents[0];
                     Node& win = *self.parents[1];
                     Node& bin = *self.parents[2];
                     std::vector<double> dcol(col_size);
                     for (int n = 0; n < n_batch; ++n) {
                       CMapR dout(self.grad.data() + out_stride * n, out_ch, cols);
                       const std::size_t woff = per_image ? w_stride * n : 0;
                       if (xin.requires_grad) {
                         CMapR w(win.value.data() + woff, out_ch, rows);
                         MapR dc(dcol.data(), rows, cols);
                         dc.noalias() = w.transpose() * dout;
                         col2im_add(dcol.data(), g, xin.grad_buffer().data() + in_stride * n);
                       }
                       if (win.requires_grad) {
                         CMapR c(col_store->data() + col_size * n, rows, cols);
                         MapR dw(win.grad_buffer().data() + woff, out_ch, rows);
                         dw.noalias() += dout * c.transpose();
                       }
                       if (bin.requires_grad) {
                         double* db = bin.grad_buffer().data() +
                                      (per_image ? static_cast<std::size_t>(out_ch) * n : 0);
                         for (int oc = 0; oc < out_ch; ++oc) db[oc] += dout.row(oc).sum();
                       }
                     }
                   });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require(x.value().rank() == 4 && weight.value().rank() == 4, ErrorKind::Parameter,
          "conv_transpose2d: expects NCHW input and (Cin,Cout,k,k) kernel");
  const int n_batch = x.value().dim(0);
  const int in_ch = x.value().dim(1);
  const int h = x.value().dim(2);
  const int w_in = x.value().dim(3);
  const Shape& ws = weight.shape();
  require(ws[0] == in_ch, ErrorKind::Parameter, "conv_transpose2d: channel mismatch");
  const int out_ch = ws[1];
  const int k = ws[2];
  require(bias.value().size() == static_cast<std::size_t>(out_ch), ErrorKind::Parameter,
          "conv_transpose2d: bias shape mismatch");
  const int oh = (h - 1) * stride - 2 * pad + k;
  const int ow = (w_in - 1) * stride - 2 * pad + k;
  require(oh > 0 && ow > 0, ErrorKind::Parameter, "conv_transpose2d: empty output");
  // Geometry of the equivalent forward convolution mapping output -> input.
  ConvGeometry g{out_ch, oh, ow, k, stride, pad};
  require(g.out_height() == h && g.out_width() == w_in, ErrorKind::Parameter,
          "conv_transpose2d: inconsistent stride/padding");
  const int rows = out_ch * k * k;
  const int cols = h * w_in;
  const std::size_t col_size = static_cast<std::size_t>(rows) * cols;
  const std::size_t in_stride = static_cast<std::size_t>(in_ch) * cols;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch) * oh * ow;

  Tensor out({n_batch, out_ch, oh, ow});
  std::vector<double> col(col_size);
  CMapR wm(weight.value().data(), in_ch, rows);
  for (int n = 0; n < n_batch; ++n) {
    CMapR xn(x.value().data() + in_stride * n, in_ch, cols);
    MapR c(col.data(), rows, cols);
    c.noalias() = wm.transpose() * xn;
    double* o = out.data() + out_stride * n;
    col2im_add(col.data(), g, o);
    for (int oc = 0; oc < out_ch; ++oc) {
      const double b = bias.value()[oc];
      double* plane = o + static_cast<std::size_t>(oc) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) plane[i] += b;
    }
  }

  return make_node(std::move(out), {x, weight, bias}, [=](Node& self) {
    Node& xin = *self.parents[0];
    Node& win = *self.parents[1];
    Node& bin = *self.parents[2];
    std::vector<double> dcol(col_size);
    CMapR wmat(win.value.data(), in_ch, rows);
    for (int n = 0; n < n_batch; ++n) {
      const double* dout = self.grad.data() + out_stride * n;
      im2col(dout, g, dcol.data());
      CMapR dc(dcol.data(), rows, cols);
      if (xin.requires_grad) {
        MapR dx(xin.grad_buffer().data() + in_stride * n, in_ch, cols);
        dx.noalias() += wmat * dc;
      }
      if (win.requires_grad) {
        CMapR xn(xin.value.data() + in_stride * n, in_ch, cols);
        MapR dw(win.grad_buffer().data(), in_ch, rows);
        dw.noalias() += xn * dc.transpose();
      }
      if (bin.requires_grad) {
        double* db = bin.grad_buffer().data();
        for (int oc = 0; oc < out_ch; ++oc) {
          const double* plane = dout + static_cast<std::size_t>(oc) * oh * ow;
          double s = 0.0;
          for (int i = 0; i < oh * ow; ++i) s += plane[i];
          db[oc] += s;
        }
      }
    }
  });
}

Var mix_bank(const Var& bank, const Var& mix) {
  require(mix.value().rank() == 2 && bank.value().rank() >= 1, ErrorKind::Parameter,
          "mix_bank: expects bank (M,...) and mix (N,M)");
  const int m = bank.value().dim(0);
  require(mix.value().dim(1) == m, ErrorKind::Parameter,
          "mix_bank: mixture length " + std::to_string(mix.value().dim(1)) +
              " does not match bank size " + std::to_string(m));
  const int n_batch = mix.value().dim(0);
  const std::size_t item = bank.value().size() / static_cast<std::size_t>(m);
  Shape shape = bank.shape();
  shape[0] = n_batch;
  Tensor out(shape, 0.0);
  for (int n = 0; n < n_batch; ++n) {
    double* dst = out.data() + item * n;
    for (int i = 0; i < m; ++i) {
      const double p = mix.value()[static_cast<std::size_t>(n) * m + i];
      const double* src = bank.value().data() + item * i;
      for (std::size_t j = 0; j < item; ++j) dst[j] += p * src[j];
    }
  }
  return make_node(std::move(out), {bank, mix}, [=](Node& self) {
    Node& bk = *self.parents[0];
    Node& mx = *self.parents[1];
    for (int n = 0; n < n_batch; ++n) {
      const double* g = self.grad.data() + item * n;
      for (int i = 0; i < m; ++i) {
        const double* src = bk.value.data() + item * i;
        if (mx.requires_grad) {
          double dot = 0.0;
          for (std::size_t j = 0; j < item; ++j) dot += g[j] * src[j];
          mx.grad_buffer()[static_cast<std::size_t>(n) * m + i] += dot;
        }
        if (bk.requires_grad) {
          const double p = mx.value[static_cast<std::size_t>(n) * m + i];
          double* dst = bk.grad_buffer().data() + item * i;
          for (std::size_t j = 0; j < item; ++j) dst[j] += p * g[j];
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return unary(x, std::move(out), [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var global_avg_pool(const Var& x) {
  require(x.value().rank() == 4, ErrorKind::Parameter, "global_avg_pool: expects NCHW");
  const int n_batch = x.value().dim(0);
  const int ch = x.value().dim(1);
  const int area = x.value().dim(2) * x.value().dim(3);
  Tensor out({n_batch, ch});
  for (int i = 0; i < n_batch * ch; ++i) {
    const double* src = x.value().data() + static_cast<std::size_t>(i) * area;
    double s = 0.0;
    for (int j = 0; j < area; ++j) s += src[j];
    out[i] = s / area;
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    double* g = in.grad_buffer().data();
    for (int i = 0; i < n_batch * ch; ++i) {
      const double v = self.grad[i] / area;
      for (int j = 0; j < area; ++j) g[static_cast<std::size_t>(i) * area + j] += v;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.value().rank() == 2 && weight.value().rank() == 2, ErrorKind::Parameter,
          "linear: expects (N,I) input and (O,I) weight");
  const int n_batch = x.value().dim(0);
  const int in_f = x.value().dim(1);
  const int out_f = weight.value().dim(0);
  require(weight.value().dim(1) == in_f && bias.value().size() == static_cast<std::size_t>(out_f),
          ErrorKind::Parameter, "linear: shape mismatch");
  Tensor out({n_batch, out_f});
  CMapR xm(x.value().data(), n_batch, in_f);
  CMapR wm(weight.value().data(), out_f, in_f);
  MapR om(out.data(), n_batch, out_f);
  om.noalias() = xm * wm.transpose();
  for (int n = 0; n < n_batch; ++n) {
    for (int o = 0; o < out_f; ++o) om(n, o) += bias.value()[o];
  }
  return make_node(std::move(out), {x, weight, bias}, [=](Node& self) {
    Node& xi = *self.parents[0];
    Node& wi = *self.parents[1];
    Node& bi = *self.parents[2];
    CMapR g(self.grad.data(), n_batch, out_f);
    if (xi.requires_grad) {
      MapR dx(xi.grad_buffer().data(), n_batch, in_f);
      dx.noalias() += g * CMapR(wi.value.data(), out_f, in_f);
    }
    if (wi.requires_grad) {
      MapR dw(wi.grad_buffer().data(), out_f, in_f);
      dw.noalias() += g.transpose() * CMapR(xi.value.data(), n_batch, in_f);
    }
    if (bi.requires_grad) {
      double* db = bi.grad_buffer().data();
      for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < out_f; ++o) db[o] += g(n, o);
      }
    }
  });
}

Var softmax_rows(const Var& x) {
  require(x.value().rank() == 2, ErrorKind::Parameter, "softmax_rows: expects a matrix");
  const int rows = x.value().dim(0);
  const int cols = x.value().dim(1);
  Tensor out = x.value();
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<std::size_t>(r) * cols;
    double mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += (row[c] = std::exp(row[c] - mx));
    for (int c = 0; c < cols; ++c) row[c] /= s;
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    double* g = in.grad_buffer().data();
    for (int r = 0; r < rows; ++r) {
      const double* y = self.value.data() + static_cast<std::size_t>(r) * cols;
      const double* dy = self.grad.data() + static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += y[c] * dy[c];
      for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Node& in = *self.parents[p];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return unary(a, std::move(out), [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double value) {
  Tensor out = a.value();
  for (double& v : out.values()) v += value;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return unary(a, std::move(out), [](double, double y) { return y; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_node(Tensor({1}, s), {a}, [](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, ErrorKind::Parameter, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  require(terms.size() == weights.size() && !terms.empty(), ErrorKind::Parameter,
          "weighted_sum: term/weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, ErrorKind::Parameter, "weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].value()[0];
  }
  return make_node(Tensor({1}, s), terms, [weights](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& in = *self.parents[i];
      if (in.requires_grad) in.grad_buffer()[0] += weights[i] * self.grad[0];
    }
  });
}

Var anchor_rows(const std::vector<Var>& heads, const std::vector<int>& anchors_per_cell,
                int row_width) {
  require(!heads.empty() && heads.size() == anchors_per_cell.size(), ErrorKind::Parameter,
          "anchor_rows: one anchor count per head required");
  const int n_batch = heads.front().value().dim(0);
  int total = 0;
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const Tensor& h = heads[s].value();
    require(h.rank() == 4 && h.dim(0) == n_batch && h.dim(1) == anchors_per_cell[s] * row_width,
            ErrorKind::Parameter, "anchor_rows: head shape " + shape_str(h.shape()) + " unexpected");
    total += anchors_per_cell[s] * h.dim(2) * h.dim(3);
  }
  Tensor out({n_batch, total, row_width});
  // source[d] = (head, flat offset in head) for output element d.
  auto source = std::make_shared<std::vector<std::pair<std::uint32_t, std::uint32_t>>>(out.size());
  for (int n = 0; n < n_batch; ++n) {
    std::size_t row = 0;
    for (std::size_t s = 0; s < heads.size(); ++s) {
      const Tensor& h = heads[s].value();
      const int gh = h.dim(2);
      const int gw = h.dim(3);
      for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
          for (int a = 0; a < anchors_per_cell[s]; ++a, ++row) {
            for (int k = 0; k < row_width; ++k) {
              const std::size_t src =
                  ((static_cast<std::size_t>(n) * h.dim(1) + a * row_width + k) * gh + y) * gw + x;
              const std::size_t dst = (static_cast<std::size_t>(n) * total + row) * row_width + k;
              (*source)[dst] = {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(src)};
              out[dst] = h[src];
            }
          }
        }
      }
    }
  }
  return make_node(std::move(out), heads, [source](Node& self) {
    for (std::size_t d = 0; d < source->size(); ++d) {
      const auto [s, src] = (*source)[d];
      Node& in = *self.parents[s];
      if (in.requires_grad) in.grad_buffer()[src] += self.grad[d];
    }
  });
}

}  // namespace rdet::ops
