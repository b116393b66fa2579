#pragma once

// Layers with hand-written backward passes. Every layer caches what its
// backward needs during forward, so forward/backward must alternate on one
// instance and an instance must not be shared between threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {

enum class Mode { train, eval };

struct Backprop {
  bool param_grads = true;  // accumulate into Parameter::grad
  bool input_grad = true;   // return dL/dx (may be skipped for the first layer)
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;  // false for running statistics
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out, Backprop bp) = 0;
  virtual Shape4 output_shape(Shape4 in) const = 0;
  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

namespace detail {

inline Parameter make_param(std::string name, Shape4 shape, bool trainable = true) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(trainable ? shape : Shape4{0, 0, 0, 0});
  p.trainable = trainable;
  return p;
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// One sample: (C, H, W) -> (C*k*k, OH*OW).
inline void im2col(const float* x, int channels, int height, int width, int k, int stride, int pad, int oh, int ow,
                   float* col) {
  const int ohw = oh * ow;
  for (int c = 0; c < channels; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* dst = row + oy * ow;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, width - shift);
            for (int ox = 0; ox < lo; ++ox) dst[ox] = 0.0f;
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox + shift];
            for (int ox = std::max(hi, lo); ox < ow; ++ox) dst[ox] = 0.0f;
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col; accumulates into dx.
inline void col2im(const float* col, int channels, int height, int width, int k, int stride, int pad, int oh, int ow,
                   float* dx) {
  const int ohw = oh * ow;
  for (int c = 0; c < channels; ++c) {
    float* plane = dx + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * width;
          const float* src = row + oy * ow;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, width - shift);
            for (int ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < width) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

class Conv2d final : public Layer {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad, bool bias = true)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    weight_ = detail::make_param(name + ".weight", Shape4{out_, in_, k_, k_});
    if (has_bias_) bias_ = detail::make_param(name + ".bias", Shape4{out_, 1, 1, 1});
  }

  Shape4 output_shape(Shape4 in) const override {
    return {in.n, out_, detail::conv_out(in.h, k_, stride_, pad_), detail::conv_out(in.w, k_, stride_, pad_)};
  }

  Tensor forward(const Tensor& x, Mode) override {
    if (x.shape().c != in_) throw ArgumentError("Conv2d " + weight_.name + ": expected " + std::to_string(in_) + " channels, got " + x.shape().str());
    input_ = x;
    const Shape4 os = output_shape(x.shape());
    Tensor out(os);
    const int ckk = in_ * k_ * k_;
    const Geometry g = geometry(x.shape());
    col_.resize(static_cast<std::size_t>(ckk) * g.cols);
    if (stride_ == 1) ybuf_.resize(static_cast<std::size_t>(out_) * g.cols);
    ConstMatrixMap w(weight_.value.data(), out_, ckk);
    for (int n = 0; n < x.shape().n; ++n) {
      build_columns(x.sample(n).data(), x.shape(), g);
      if (stride_ == 1) {
        MatrixMap y(ybuf_.data(), out_, g.cols);
        y.noalias() = w * ConstMatrixMap(col_.data(), ckk, g.cols);
        float* dst = out.sample(n).data();
        for (int o = 0; o < out_; ++o) {
          const float b = has_bias_ ? bias_.value[o] : 0.0f;
          for (int oy = 0; oy < os.h; ++oy) {
            const float* src = ybuf_.data() + static_cast<std::size_t>(o) * g.cols + static_cast<std::size_t>(oy) * g.row;
            float* d = dst + (static_cast<std::size_t>(o) * os.h + oy) * os.w;
            for (int ox = 0; ox < os.w; ++ox) d[ox] = src[ox] + b;
          }
        }
      } else {
        MatrixMap y(out.sample(n).data(), out_, g.cols);
        y.noalias() = w * ConstMatrixMap(col_.data(), ckk, g.cols);
        if (has_bias_) {
          for (int o = 0; o < out_; ++o) y.row(o).array() += bias_.value[o];
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) override {
    const Shape4 is = input_.shape();
    const Shape4 os = grad_out.shape();
    const int ckk = in_ * k_ * k_;
    const Geometry g = geometry(is);
    Tensor dx;
    if (bp.input_grad) dx = Tensor(is);
    col_.resize(static_cast<std::size_t>(ckk) * g.cols);
    dcol_.resize(col_.size());
    ConstMatrixMap w(weight_.value.data(), out_, ckk);
    MatrixMap gw(weight_.grad.data(), out_, ckk);
    if (stride_ == 1) ybuf_.assign(static_cast<std::size_t>(out_) * g.cols, 0.0f);
    for (int n = 0; n < is.n; ++n) {
      const float* dy_ptr = grad_out.sample(n).data();
      if (stride_ == 1) {
        // Scatter into the padded-row layout; the extra columns stay zero.
        for (int o = 0; o < out_; ++o) {
          for (int oy = 0; oy < os.h; ++oy) {
            const float* src = dy_ptr + (static_cast<std::size_t>(o) * os.h + oy) * os.w;
            std::copy(src, src + os.w, ybuf_.data() + static_cast<std::size_t>(o) * g.cols + static_cast<std::size_t>(oy) * g.row);
          }
        }
        dy_ptr = ybuf_.data();
      }
      ConstMatrixMap dy(dy_ptr, out_, g.cols);
      if (bp.param_grads) {
        build_columns(input_.sample(n).data(), is, g);
        gw.noalias() += dy * ConstMatrixMap(col_.data(), ckk, g.cols).transpose();
        if (has_bias_) {
          for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.row(o).sum();
        }
      }
      if (bp.input_grad) {
        MatrixMap dc(dcol_.data(), ckk, g.cols);
        dc.noalias() = w.transpose() * dy;
        scatter_columns(dx.sample(n).data(), is, g);
      }
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<Conv2d>(*this);
    c->input_ = Tensor();
    return c;
  }

 private:
  // Stride-1 convolutions work on a zero-padded copy of the input. In that
  // layout the input window for kernel tap (ky, kx) is one contiguous run per
  // channel, so each column-matrix row is a single copy. Output rows come out
  // `row` = padded-width apart; the trailing (row - OW) entries are discarded.
  struct Geometry {
    int cols;   // columns of the column matrix
    int row;    // distance between output rows in that matrix
    int ph, pw; // padded input size (stride 1 only)
  };

  Geometry geometry(Shape4 in) const {
    const Shape4 os = output_shape(in);
    if (stride_ != 1) return {os.h * os.w, os.w, 0, 0};
    const int pw = in.w + 2 * pad_;
    return {os.h * pw, pw, in.h + 2 * pad_, pw};
  }

  void build_columns(const float* x, Shape4 in, const Geometry& g) {
    if (stride_ != 1) {
      const Shape4 os = output_shape(in);
      detail::im2col(x, in_, in.h, in.w, k_, stride_, pad_, os.h, os.w, col_.data());
      return;
    }
    const std::size_t plane = static_cast<std::size_t>(g.ph) * g.pw;
    xpad_.assign(plane * in_ + k_, 0.0f);
    for (int c = 0; c < in_; ++c) {
      for (int y = 0; y < in.h; ++y) {
        const float* src = x + (static_cast<std::size_t>(c) * in.h + y) * in.w;
        std::copy(src, src + in.w, xpad_.data() + c * plane + static_cast<std::size_t>(y + pad_) * g.pw + pad_);
      }
    }
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const float* src = xpad_.data() + c * plane + static_cast<std::size_t>(ky) * g.pw + kx;
          std::copy(src, src + g.cols, col_.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * g.cols);
        }
      }
    }
  }

  // Adjoint of build_columns applied to dcol_, written (not accumulated) to dx.
  void scatter_columns(float* dx, Shape4 in, const Geometry& g) {
    if (stride_ != 1) {
      const Shape4 os = output_shape(in);
      detail::col2im(dcol_.data(), in_, in.h, in.w, k_, stride_, pad_, os.h, os.w, dx);
      return;
    }
    const std::size_t plane = static_cast<std::size_t>(g.ph) * g.pw;
    xpad_.assign(plane * in_ + k_, 0.0f);
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          float* dst = xpad_.data() + c * plane + static_cast<std::size_t>(ky) * g.pw + kx;
          const float* src = dcol_.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * g.cols;
          for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
        }
      }
    }
    for (int c = 0; c < in_; ++c) {
      for (int y = 0; y < in.h; ++y) {
        const float* src = xpad_.data() + c * plane + static_cast<std::size_t>(y + pad_) * g.pw + pad_;
        std::copy(src, src + in.w, dx + (static_cast<std::size_t>(c) * in.h + y) * in.w);
      }
    }
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter weight_, bias_;
  Tensor input_;
  FloatBuffer col_, dcol_, ybuf_, xpad_;
};

class Linear final : public Layer {
 public:
  Linear(const std::string& name, int in_features, int out_features) : in_(in_features), out_(out_features) {
    weight_ = detail::make_param(name + ".weight", Shape4{out_, in_, 1, 1});
    bias_ = detail::make_param(name + ".bias", Shape4{out_, 1, 1, 1});
  }

  Shape4 output_shape(Shape4 in) const override { return {in.n, out_, 1, 1}; }

  Tensor forward(const Tensor& x, Mode) override {
    if (static_cast<int>(x.shape().per_sample()) != in_) {
      throw ArgumentError("Linear " + weight_.name + ": expected " + std::to_string(in_) + " features, got " +
                          x.shape().str());
    }
    input_ = x;
    const int n = x.shape().n;
    Tensor out(Shape4{n, out_, 1, 1});
    MatrixMap y(out.data(), n, out_);
    y.noalias() = ConstMatrixMap(x.data(), n, in_) * ConstMatrixMap(weight_.value.data(), out_, in_).transpose();
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) override {
    const int n = input_.shape().n;
    ConstMatrixMap dy(grad_out.data(), n, out_);
    if (bp.param_grads) {
      MatrixMap(weight_.grad.data(), out_, in_).noalias() += dy.transpose() * ConstMatrixMap(input_.data(), n, in_);
      Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += dy.colwise().sum();
    }
    Tensor dx;
    if (bp.input_grad) {
      dx = Tensor(input_.shape());
      MatrixMap(dx.data(), n, in_).noalias() = dy * ConstMatrixMap(weight_.value.data(), out_, in_);
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<Linear>(*this);
    c->input_ = Tensor();
    return c;
  }

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReLU final : public Layer {
 public:
  Shape4 output_shape(Shape4 in) const override { return in; }

  Tensor forward(const Tensor& x, Mode) override {
    Tensor out = x;
    for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
    output_ = out;
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop) override {
    Tensor dx = grad_out;
    auto y = output_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(y[i] > 0.0f)) d[i] = 0.0f;
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(); }

 private:
  Tensor output_;
};

class Sigmoid final : public Layer {
 public:
  Shape4 output_shape(Shape4 in) const override { return in; }

  Tensor forward(const Tensor& x, Mode) override {
    Tensor out = x;
    for (float& v : out.values()) v = 1.0f / (1.0f + std::exp(-v));
    output_ = out;
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop) override {
    Tensor dx = grad_out;
    auto y = output_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (1.0f - y[i]);
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(); }

 private:
  Tensor output_;
};

// 2x2 window, stride 2, floor on odd sizes.
class MaxPool2d final : public Layer {
 public:
  Shape4 output_shape(Shape4 in) const override { return {in.n, in.c, in.h / 2, in.w / 2}; }

  Tensor forward(const Tensor& x, Mode) override {
    in_shape_ = x.shape();
    const Shape4 os = output_shape(x.shape());
    Tensor out(os);
    argmax_.assign(out.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < os.n; ++n) {
      for (int c = 0; c < os.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * in_shape_.c + c) * in_shape_.plane();
        for (int oy = 0; oy < os.h; ++oy) {
          for (int ox = 0; ox < os.w; ++ox, ++o) {
            std::size_t best = base + static_cast<std::size_t>(2 * oy) * in_shape_.w + 2 * ox;
            float bv = x[best];
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * in_shape_.w + 2 * ox + dx;
                if (x[idx] > bv) {
                  bv = x[idx];
                  best = idx;
                }
              }
            }
            out[o] = bv;
            argmax_[o] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop) override {
    Tensor dx(in_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(); }

 private:
  Shape4 in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

class Flatten final : public Layer {
 public:
  Shape4 output_shape(Shape4 in) const override { return {in.n, static_cast<int>(in.per_sample()), 1, 1}; }

  Tensor forward(const Tensor& x, Mode) override {
    in_shape_ = x.shape();
    Tensor out = x;
    out.reshape(output_shape(x.shape()));
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop) override {
    Tensor dx = grad_out;
    dx.reshape(in_shape_);
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(); }

 private:
  Shape4 in_shape_{};
};

class GlobalAvgPool final : public Layer {
 public:
  Shape4 output_shape(Shape4 in) const override { return {in.n, in.c, 1, 1}; }

  Tensor forward(const Tensor& x, Mode) override {
    in_shape_ = x.shape();
    Tensor out(output_shape(x.shape()));
    const std::size_t plane = in_shape_.plane();
    for (std::size_t i = 0; i < out.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
      out[i] = static_cast<float>(s / static_cast<double>(plane));
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop) override {
    Tensor dx(in_shape_);
    const std::size_t plane = in_shape_.plane();
    const float scale = 1.0f / static_cast<float>(plane);
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      for (std::size_t j = 0; j < plane; ++j) dx[i * plane + j] = grad_out[i] * scale;
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(); }

 private:
  Shape4 in_shape_{};
};

// Per-channel batch normalization. Training mode normalizes with batch
// statistics and updates the running estimates (unbiased variance, momentum
// 0.1); eval mode uses the running estimates.
class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(const std::string& name, int channels, float momentum = 0.1f, float eps = 1e-5f)
      : channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_ = detail::make_param(name + ".weight", Shape4{channels, 1, 1, 1});
    beta_ = detail::make_param(name + ".bias", Shape4{channels, 1, 1, 1});
    running_mean_ = detail::make_param(name + ".running_mean", Shape4{channels, 1, 1, 1}, false);
    running_var_ = detail::make_param(name + ".running_var", Shape4{channels, 1, 1, 1}, false);
    gamma_.value.fill(1.0f);
    running_var_.value.fill(1.0f);
  }

  Shape4 output_shape(Shape4 in) const override { return in; }

  Tensor forward(const Tensor& x, Mode mode) override {
    const Shape4 s = x.shape();
    mode_ = mode;
    in_shape_ = s;
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.n) * static_cast<double>(plane);
    inv_std_.assign(channels_, 0.0f);
    xhat_ = Tensor(s);
    Tensor out(s);
    for (int c = 0; c < channels_; ++c) {
      float mean, var;
      if (mode == Mode::train) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const float* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        }
        const double m = sum / count;
        for (int n = 0; n < s.n; ++n) {
          const float* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - m) * (p[j] - m);
        }
        const double v = sq / count;
        mean = static_cast<float>(m);
        var = static_cast<float>(v);
        const double unbiased = count > 1 ? sq / (count - 1) : v;
        running_mean_.value[c] = (1.0f - momentum_) * running_mean_.value[c] + momentum_ * mean;
        running_var_.value[c] =
            (1.0f - momentum_) * running_var_.value[c] + momentum_ * static_cast<float>(unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const float inv = 1.0f / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      const float g = gamma_.value[c], b = beta_.value[c];
      for (int n = 0; n < s.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const float xh = (x[off + j] - mean) * inv;
          xhat_[off + j] = xh;
          out[off + j] = g * xh + b;
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) override {
    const Shape4 s = in_shape_;
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.n) * static_cast<double>(plane);
    Tensor dx(s);
    for (int c = 0; c < channels_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += grad_out[off + j];
          sum_dy_xhat += grad_out[off + j] * xhat_[off + j];
        }
      }
      if (bp.param_grads) {
        gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
        beta_.grad[c] += static_cast<float>(sum_dy);
      }
      const float g = gamma_.value[c];
      const float inv = inv_std_[c];
      for (int n = 0; n < s.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (mode_ == Mode::train) {
            dx[off + j] = static_cast<float>(g * inv *
                                             (grad_out[off + j] - sum_dy / count - xhat_[off + j] * sum_dy_xhat / count));
          } else {
            dx[off + j] = g * inv * grad_out[off + j];
          }
        }
      }
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  std::unique_ptr<Layer> clone() const override {
    auto c = std::make_unique<BatchNorm2d>(*this);
    c->xhat_ = Tensor();
    return c;
  }

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Mode mode_ = Mode::eval;
  Shape4 in_shape_{};
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      layers_.clear();
      for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  std::size_t depth() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  Shape4 output_shape(Shape4 in) const override {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) override {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Backprop step = bp;
      step.input_grad = (i > 0) || bp.input_grad;
      g = layers_[i]->backward(g, step);
    }
    return g;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    for (auto& l : layers_) l->collect_parameters(out);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Two 3x3 conv/BN pairs plus an identity or 1x1-conv shortcut.
class BasicBlock final : public Layer {
 public:
  BasicBlock(const std::string& name, int in_channels, int out_channels, int stride) {
    main_.add<Conv2d>(name + ".conv1", in_channels, out_channels, 3, stride, 1, false);
    main_.add<BatchNorm2d>(name + ".bn1", out_channels);
    main_.add<ReLU>();
    main_.add<Conv2d>(name + ".conv2", out_channels, out_channels, 3, 1, 1, false);
    main_.add<BatchNorm2d>(name + ".bn2", out_channels);
    if (stride != 1 || in_channels != out_channels) {
      shortcut_.add<Conv2d>(name + ".shortcut.0", in_channels, out_channels, 1, stride, 0, false);
      shortcut_.add<BatchNorm2d>(name + ".shortcut.1", out_channels);
    }
  }

  Shape4 output_shape(Shape4 in) const override { return main_.output_shape(in); }

  Tensor forward(const Tensor& x, Mode mode) override {
    Tensor y = main_.forward(x, mode);
    if (shortcut_.depth() > 0) {
      y += shortcut_.forward(x, mode);
    } else {
      y += x;
    }
    return relu_.forward(y, mode);
  }

  Tensor backward(const Tensor& grad_out, Backprop bp) override {
    Tensor g = relu_.backward(grad_out, bp);
    Tensor dx = main_.backward(g, bp);
    if (shortcut_.depth() > 0) {
      Tensor ds = shortcut_.backward(g, bp);
      if (bp.input_grad) dx += ds;
    } else if (bp.input_grad) {
      dx += g;
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    main_.collect_parameters(out);
    shortcut_.collect_parameters(out);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BasicBlock>(*this); }

 private:
  Sequential main_;
  Sequential shortcut_;
  ReLU relu_;
};

}  // namespace poisonlab
