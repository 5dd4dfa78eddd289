#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "batod/dataset.hpp"
#include "batod/errors.hpp"
#include "batod/image.hpp"
#include "batod/rng.hpp"
#include "batod/triggers.hpp"

namespace batod::nets {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

/// Activations: rows = channels, columns = flattened positions, laid out as
/// p = ((n*h)+y)*w + x. Dense stages use h = w = 1.
struct Act {
  Mat a;
  int n = 0, h = 0, w = 0;

  Act() = default;
  Act(Mat m, int n_, int h_, int w_) : a(std::move(m)), n(n_), h(h_), w(w_) {}
  int channels() const { return static_cast<int>(a.rows()); }
};

using Tape = std::vector<Act>;

struct NamedTensor {
  std::string name;
  Mat* tensor;
  bool trainable;
};

namespace detail {

inline void softmax_inplace(Mat& logits) {
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto col = logits.col(j);
    const float m = col.maxCoeff();
    col = (col.array() - m).exp();
    col /= col.sum();
  }
}

inline int argmax_lowest_tie(const Eigen::Ref<const Vec>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;  // strict: first index wins ties
  return best;
}

}  // namespace detail

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Act forward(const Act& x, bool train, Tape& tape) = 0;
  /// Pops its own tape entries (in reverse of forward) and returns dL/dx.
  /// When `accumulate` is set, parameter gradients are added in place.
  virtual Act backward(const Act& dy, bool train, Tape& tape, bool accumulate) = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedTensor>& out) {}
  virtual void zero_grad() {}
};

/// Fixed per-channel standardization; part of the graph so that attack
/// gradients are taken in raw [0,1] pixel space.
class Standardize final : public Layer {
 public:
  Mat mean, inv_std;  // c x 1 each

  Act forward(const Act& x, bool, Tape&) override {
    Act y = x;
    y.a = ((x.a.colwise() - mean.col(0)).array().colwise() * inv_std.col(0).array()).matrix();
    return y;
  }
  Act backward(const Act& dy, bool, Tape&, bool) override {
    Act dx = dy;
    dx.a = (dy.a.array().colwise() * inv_std.col(0).array()).matrix();
    return dx;
  }
  void collect(const std::string& p, std::vector<NamedTensor>& out) override {
    out.push_back({p + ".mean", &mean, false});
    out.push_back({p + ".inv_std", &inv_std, false});
  }
};

class Conv2d final : public Layer {
 public:
  int in_c, out_c, ksize, stride, pad;
  Mat w, b;      // w: out_c x (in_c*k*k), b: out_c x 1
  Mat gw, gb;

  Conv2d(int in_c_, int out_c_, int k, int stride_, int pad_)
      : in_c(in_c_), out_c(out_c_), ksize(k), stride(stride_), pad(pad_) {
    w = Mat::Zero(out_c, in_c * k * k);
    b = Mat::Zero(out_c, 1);
    gw = Mat::Zero(w.rows(), w.cols());
    gb = Mat::Zero(out_c, 1);
  }

  void init(Rng& rng) {
    const float std_dev = std::sqrt(2.0f / static_cast<float>(in_c * ksize * ksize));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal_f() * std_dev;
    b.setZero();
  }

  int out_h(int h) const { return (h + 2 * pad - ksize) / stride + 1; }
  int out_w(int wdt) const { return (wdt + 2 * pad - ksize) / stride + 1; }

  Mat im2col(const Act& x) const {
    const int oh = out_h(x.h), ow = out_w(x.w);
    Mat col = Mat::Zero(in_c * ksize * ksize, static_cast<Eigen::Index>(x.n) * oh * ow);
    for (int n = 0; n < x.n; ++n)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index p = (static_cast<Eigen::Index>(n) * oh + oy) * ow + ox;
          for (int c = 0; c < in_c; ++c)
            for (int dy = 0; dy < ksize; ++dy) {
              const int iy = oy * stride - pad + dy;
              if (iy < 0 || iy >= x.h) continue;
              const Eigen::Index base_in = (static_cast<Eigen::Index>(n) * x.h + iy) * x.w;
              const int r0 = (c * ksize + dy) * ksize;
              for (int dx = 0; dx < ksize; ++dx) {
                const int ix = ox * stride - pad + dx;
                if (ix < 0 || ix >= x.w) continue;
                col(r0 + dx, p) = x.a(c, base_in + ix);
              }
            }
        }
    return col;
  }

  void col2im(const Mat& dcol, Act& dx) const {
    const int oh = out_h(dx.h), ow = out_w(dx.w);
    for (int n = 0; n < dx.n; ++n)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index p = (static_cast<Eigen::Index>(n) * oh + oy) * ow + ox;
          for (int c = 0; c < in_c; ++c)
            for (int dy = 0; dy < ksize; ++dy) {
              const int iy = oy * stride - pad + dy;
              if (iy < 0 || iy >= dx.h) continue;
              const Eigen::Index base_in = (static_cast<Eigen::Index>(n) * dx.h + iy) * dx.w;
              const int r0 = (c * ksize + dy) * ksize;
              for (int dxk = 0; dxk < ksize; ++dxk) {
                const int ix = ox * stride - pad + dxk;
                if (ix < 0 || ix >= dx.w) continue;
                dx.a(c, base_in + ix) += dcol(r0 + dxk, p);
              }
            }
        }
  }

  Act forward(const Act& x, bool, Tape& tape) override {
    Act y;
    y.n = x.n;
    y.h = out_h(x.h);
    y.w = out_w(x.w);
    Mat col = im2col(x);
    y.a.noalias() = w * col;
    y.a.colwise() += b.col(0);
    tape.emplace_back(std::move(col), x.n, x.h, x.w);  // remembers the input dims too
    return y;
  }

  Act backward(const Act& dy, bool, Tape& tape, bool accumulate) override {
    Act saved = std::move(tape.back());
    tape.pop_back();
    if (accumulate) {
      gw.noalias() += dy.a * saved.a.transpose();
      gb.col(0) += dy.a.rowwise().sum();
    }
    Mat dcol;
    dcol.noalias() = w.transpose() * dy.a;
    Act dx(Mat::Zero(in_c, static_cast<Eigen::Index>(saved.n) * saved.h * saved.w), saved.n,
           saved.h, saved.w);
    col2im(dcol, dx);
    return dx;
  }

  void collect(const std::string& p, std::vector<NamedTensor>& out) override {
    out.push_back({p + ".w", &w, true});
    out.push_back({p + ".b", &b, true});
  }
  void zero_grad() override {
    gw.setZero();
    gb.setZero();
  }
};

class BatchNorm2d final : public Layer {
 public:
  static constexpr float kEps = 1e-5f;
  float momentum = 0.1f;
  Mat gamma, beta, run_mean, run_var;  // c x 1
  Mat ggamma, gbeta;

  explicit BatchNorm2d(int c) {
    gamma = Mat::Ones(c, 1);
    beta = Mat::Zero(c, 1);
    run_mean = Mat::Zero(c, 1);
    run_var = Mat::Ones(c, 1);
    ggamma = Mat::Zero(c, 1);
    gbeta = Mat::Zero(c, 1);
  }

  Act forward(const Act& x, bool train, Tape& tape) override {
    const auto m = static_cast<float>(x.a.cols());
    Act y = x;
    if (train) {
      Mat mu = x.a.rowwise().mean();
      Mat var = (x.a.array().square().rowwise().mean() - mu.array().square()).matrix();
      var = var.cwiseMax(0.0f);
      Mat inv_std = (var.array() + kEps).rsqrt().matrix();
      Mat xhat = ((x.a.colwise() - mu.col(0)).array().colwise() * inv_std.col(0).array()).matrix();
      y.a = (xhat.array().colwise() * gamma.col(0).array()).matrix();
      y.a.colwise() += beta.col(0);
      run_mean = (1.0f - momentum) * run_mean + momentum * mu;
      // Unbiased variance feeds the running estimate, as is conventional.
      const float unbias = m > 1.0f ? m / (m - 1.0f) : 1.0f;
      run_var = (1.0f - momentum) * run_var + momentum * (unbias * var);
      tape.emplace_back(std::move(xhat), x.n, x.h, x.w);
      tape.emplace_back(std::move(inv_std), 0, 0, 0);
    } else {
      Mat inv_std = (run_var.array() + kEps).rsqrt().matrix();
      y.a = ((x.a.colwise() - run_mean.col(0)).array().colwise() *
             (inv_std.col(0).array() * gamma.col(0).array()))
                .matrix();
      y.a.colwise() += beta.col(0);
      tape.emplace_back(std::move(inv_std), 0, 0, 0);
    }
    return y;
  }

  Act backward(const Act& dy, bool train, Tape& tape, bool accumulate) override {
    if (!train) {
      Act inv_std = std::move(tape.back());
      tape.pop_back();
      Act dx = dy;
      dx.a = (dy.a.array().colwise() * (inv_std.a.col(0).array() * gamma.col(0).array())).matrix();
      return dx;
    }
    Act inv_std = std::move(tape.back());
    tape.pop_back();
    Act xhat = std::move(tape.back());
    tape.pop_back();

    const auto m = static_cast<float>(dy.a.cols());
    if (accumulate) {
      ggamma.col(0) += (dy.a.array() * xhat.a.array()).rowwise().sum().matrix();
      gbeta.col(0) += dy.a.rowwise().sum();
    }
    Mat dxhat = (dy.a.array().colwise() * gamma.col(0).array()).matrix();
    Mat sum_dxhat = dxhat.rowwise().sum();
    Mat sum_dxhat_xhat = (dxhat.array() * xhat.a.array()).rowwise().sum().matrix();
    Act dx = dy;
    dx.a = ((m * dxhat.array()).colwise() - sum_dxhat.col(0).array()).matrix();
    dx.a -= (xhat.a.array().colwise() * sum_dxhat_xhat.col(0).array()).matrix();
    dx.a = (dx.a.array().colwise() * (inv_std.a.col(0).array() / m)).matrix();
    return dx;
  }

  void collect(const std::string& p, std::vector<NamedTensor>& out) override {
    out.push_back({p + ".gamma", &gamma, true});
    out.push_back({p + ".beta", &beta, true});
    out.push_back({p + ".run_mean", &run_mean, false});
    out.push_back({p + ".run_var", &run_var, false});
  }
  void zero_grad() override {
    ggamma.setZero();
    gbeta.setZero();
  }
};

class ReLU final : public Layer {
 public:
  Act forward(const Act& x, bool, Tape& tape) override {
    Act y = x;
    y.a = x.a.cwiseMax(0.0f);
    tape.push_back(y);
    return y;
  }
  Act backward(const Act& dy, bool, Tape& tape, bool) override {
    Act y = std::move(tape.back());
    tape.pop_back();
    Act dx = dy;
    dx.a = (dy.a.array() * (y.a.array() > 0.0f).cast<float>()).matrix();
    return dx;
  }
};

class GlobalAvgPool final : public Layer {
 public:
  Act forward(const Act& x, bool, Tape& tape) override {
    const int hw = x.h * x.w;
    Act y(Mat::Zero(x.a.rows(), x.n), x.n, 1, 1);
    for (int n = 0; n < x.n; ++n)
      y.a.col(n) = x.a.middleCols(static_cast<Eigen::Index>(n) * hw, hw).rowwise().mean();
    tape.emplace_back(Mat{}, x.n, x.h, x.w);
    return y;
  }
  Act backward(const Act& dy, bool, Tape& tape, bool) override {
    Act dims = std::move(tape.back());
    tape.pop_back();
    const int hw = dims.h * dims.w;
    Act dx(Mat::Zero(dy.a.rows(), static_cast<Eigen::Index>(dims.n) * hw), dims.n, dims.h, dims.w);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int n = 0; n < dims.n; ++n)
      dx.a.middleCols(static_cast<Eigen::Index>(n) * hw, hw).colwise() = (dy.a.col(n) * inv);
    return dx;
  }
};

class Dense final : public Layer {
 public:
  Mat w, b, gw, gb;

  Dense(int in_dim, int out_dim) {
    w = Mat::Zero(out_dim, in_dim);
    b = Mat::Zero(out_dim, 1);
    gw = Mat::Zero(out_dim, in_dim);
    gb = Mat::Zero(out_dim, 1);
  }
  void init(Rng& rng) {
    const float std_dev = std::sqrt(2.0f / static_cast<float>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal_f() * std_dev;
    b.setZero();
  }

  Act forward(const Act& x, bool, Tape& tape) override {
    Act y(Mat{}, x.n, 1, 1);
    y.a.noalias() = w * x.a;
    y.a.colwise() += b.col(0);
    tape.push_back(x);
    return y;
  }
  Act backward(const Act& dy, bool, Tape& tape, bool accumulate) override {
    Act x = std::move(tape.back());
    tape.pop_back();
    if (accumulate) {
      gw.noalias() += dy.a * x.a.transpose();
      gb.col(0) += dy.a.rowwise().sum();
    }
    Act dx(Mat{}, x.n, x.h, x.w);
    dx.a.noalias() = w.transpose() * dy.a;
    return dx;
  }
  void collect(const std::string& p, std::vector<NamedTensor>& out) override {
    out.push_back({p + ".w", &w, true});
    out.push_back({p + ".b", &b, true});
  }
  void zero_grad() override {
    gw.setZero();
    gb.setZero();
  }
};

/// Flattens (c, n*h*w) activations into (c*h*w, n) feature columns.
class Flatten final : public Layer {
 public:
  Act forward(const Act& x, bool, Tape& tape) override {
    const int hw = x.h * x.w;
    const int c = x.channels();
    Act y(Mat::Zero(static_cast<Eigen::Index>(c) * hw, x.n), x.n, 1, 1);
    for (int n = 0; n < x.n; ++n)
      for (int ch = 0; ch < c; ++ch)
        y.a.col(n).segment(static_cast<Eigen::Index>(ch) * hw, hw) =
            x.a.row(ch).segment(static_cast<Eigen::Index>(n) * hw, hw).transpose();
    tape.emplace_back(Mat{}, x.n, x.h, x.w);
    return y;
  }
  Act backward(const Act& dy, bool, Tape& tape, bool) override {
    Act dims = std::move(tape.back());
    tape.pop_back();
    const int hw = dims.h * dims.w;
    const int c = static_cast<int>(dy.a.rows()) / hw;
    Act dx(Mat::Zero(c, static_cast<Eigen::Index>(dims.n) * hw), dims.n, dims.h, dims.w);
    for (int n = 0; n < dims.n; ++n)
      for (int ch = 0; ch < c; ++ch)
        dx.a.row(ch).segment(static_cast<Eigen::Index>(n) * hw, hw) =
            dy.a.col(n).segment(static_cast<Eigen::Index>(ch) * hw, hw).transpose();
    return dx;
  }
};

class ResidualBlock final : public Layer {
 public:
  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  ReLU relu1, relu_out;
  std::unique_ptr<Conv2d> sc_conv;  // 1x1 projection when shape changes
  std::unique_ptr<BatchNorm2d> sc_bn;

  ResidualBlock(int in_c, int out_c, int stride)
      : conv1(in_c, out_c, 3, stride, 1),
        conv2(out_c, out_c, 3, 1, 1),
        bn1(out_c),
        bn2(out_c) {
    if (in_c != out_c || stride != 1) {
      sc_conv = std::make_unique<Conv2d>(in_c, out_c, 1, stride, 0);
      sc_bn = std::make_unique<BatchNorm2d>(out_c);
    }
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (sc_conv) sc_conv->init(rng);
  }

  Act forward(const Act& x, bool train, Tape& tape) override {
    Act s = x;
    if (sc_conv) {
      s = sc_conv->forward(x, train, tape);
      s = sc_bn->forward(s, train, tape);
    }
    Act y = conv1.forward(x, train, tape);
    y = bn1.forward(y, train, tape);
    y = relu1.forward(y, train, tape);
    y = conv2.forward(y, train, tape);
    y = bn2.forward(y, train, tape);
    y.a += s.a;
    return relu_out.forward(y, train, tape);
  }

  Act backward(const Act& dy, bool train, Tape& tape, bool acc) override {
    Act dz = relu_out.backward(dy, train, tape, acc);
    Act dmain = bn2.backward(dz, train, tape, acc);
    dmain = conv2.backward(dmain, train, tape, acc);
    dmain = relu1.backward(dmain, train, tape, acc);
    dmain = bn1.backward(dmain, train, tape, acc);
    dmain = conv1.backward(dmain, train, tape, acc);
    if (sc_conv) {
      Act ds = sc_bn->backward(dz, train, tape, acc);
      ds = sc_conv->backward(ds, train, tape, acc);
      dmain.a += ds.a;
    } else {
      dmain.a += dz.a;
    }
    return dmain;
  }

  void collect(const std::string& p, std::vector<NamedTensor>& out) override {
    conv1.collect(p + ".conv1", out);
    bn1.collect(p + ".bn1", out);
    conv2.collect(p + ".conv2", out);
    bn2.collect(p + ".bn2", out);
    if (sc_conv) {
      sc_conv->collect(p + ".sc_conv", out);
      sc_bn->collect(p + ".sc_bn", out);
    }
  }
  void zero_grad() override {
    conv1.zero_grad();
    conv2.zero_grad();
    bn1.zero_grad();
    bn2.zero_grad();
    if (sc_conv) {
      sc_conv->zero_grad();
      sc_bn->zero_grad();
    }
  }
};

struct InputShape {
  int h = 0, w = 0, c = 0;
};

/// A trained model behind the differentiable-classifier contract: logits,
/// argmax prediction, MSP and input-space gradients, over 1-based labels.
class Classifier {
 public:
  Classifier() = default;

  static Classifier build(const std::string& arch, int class_count, InputShape in,
                          std::uint64_t init_seed) {
    Classifier m;
    m.arch_ = arch;
    m.k_ = class_count;
    m.in_ = in;
    auto std_layer = std::make_unique<Standardize>();
    std_layer->mean = Mat::Zero(in.c, 1);
    std_layer->inv_std = Mat::Ones(in.c, 1);
    m.standardize_ = std_layer.get();
    m.layers_.push_back(std::move(std_layer));

    Rng rng(derive_seed(init_seed, "init"));
    if (arch == "linear") {
      m.layers_.push_back(std::make_unique<Flatten>());
      auto fc = std::make_unique<Dense>(in.c * in.h * in.w, class_count);
      fc->init(rng);
      m.feature_tap_ = m.layers_.size();  // features = flattened input
      m.layers_.push_back(std::move(fc));
    } else if (arch.rfind("mlp_", 0) == 0) {
      const int hidden = std::stoi(arch.substr(4));
      require(hidden > 0, ErrorCode::config_error, "bad mlp width in arch id " + arch);
      m.layers_.push_back(std::make_unique<Flatten>());
      auto fc1 = std::make_unique<Dense>(in.c * in.h * in.w, hidden);
      fc1->init(rng);
      m.layers_.push_back(std::move(fc1));
      m.layers_.push_back(std::make_unique<ReLU>());
      m.feature_tap_ = m.layers_.size();
      auto fc2 = std::make_unique<Dense>(hidden, class_count);
      fc2->init(rng);
      m.layers_.push_back(std::move(fc2));
    } else if (arch.rfind("resnet_lite_", 0) == 0) {
      const int width = std::stoi(arch.substr(12));
      require(width > 0, ErrorCode::config_error, "bad width in arch id " + arch);
      auto stem = std::make_unique<Conv2d>(in.c, width, 3, 1, 1);
      stem->init(rng);
      m.layers_.push_back(std::move(stem));
      m.layers_.push_back(std::make_unique<BatchNorm2d>(width));
      m.layers_.push_back(std::make_unique<ReLU>());
      int c_now = width;
      const int stage_c[3] = {width, 2 * width, 4 * width};
      const int stage_s[3] = {1, 2, 2};
      for (int s = 0; s < 3; ++s) {
        auto block = std::make_unique<ResidualBlock>(c_now, stage_c[s], stage_s[s]);
        block->init(rng);
        c_now = stage_c[s];
        m.layers_.push_back(std::move(block));
      }
      m.layers_.push_back(std::make_unique<GlobalAvgPool>());
      m.feature_tap_ = m.layers_.size();
      auto fc = std::make_unique<Dense>(c_now, class_count);
      fc->init(rng);
      m.layers_.push_back(std::move(fc));
    } else {
      fail(ErrorCode::config_error, "unknown architecture id: " + arch);
    }
    return m;
  }

  int class_count() const { return k_; }
  const std::string& arch() const { return arch_; }
  InputShape input_shape() const { return in_; }
  Standardize& standardize() { return *standardize_; }

  // ---- batch packing ----

  Act pack(const std::vector<const Image*>& images) const {
    const int n = static_cast<int>(images.size());
    require(n > 0, ErrorCode::precondition, "empty batch");
    Act x(Mat::Zero(in_.c, static_cast<Eigen::Index>(n) * in_.h * in_.w), n, in_.h, in_.w);
    for (int i = 0; i < n; ++i) {
      const Image& im = *images[i];
      require(im.h == in_.h && im.w == in_.w && im.c == in_.c, ErrorCode::shape_mismatch,
              "image shape does not match model input shape");
      const Eigen::Index base = static_cast<Eigen::Index>(i) * in_.h * in_.w;
      for (int y = 0; y < in_.h; ++y)
        for (int xcol = 0; xcol < in_.w; ++xcol)
          for (int ch = 0; ch < in_.c; ++ch)
            x.a(ch, base + static_cast<Eigen::Index>(y) * in_.w + xcol) = im.at(y, xcol, ch);
    }
    return x;
  }

  Image unpack_one(const Act& x, int i) const {
    Image im(in_.h, in_.w, in_.c);
    const Eigen::Index base = static_cast<Eigen::Index>(i) * in_.h * in_.w;
    for (int y = 0; y < in_.h; ++y)
      for (int xcol = 0; xcol < in_.w; ++xcol)
        for (int ch = 0; ch < in_.c; ++ch)
          im.at(y, xcol, ch) = x.a(ch, base + static_cast<Eigen::Index>(y) * in_.w + xcol);
    return im;
  }

  // ---- forward paths ----

  Act forward(const Act& x, bool train, Tape& tape, Mat* features = nullptr) {
    Act cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (features && i == feature_tap_) *features = cur.a;
      cur = layers_[i]->forward(cur, train, tape);
    }
    if (features && feature_tap_ == layers_.size()) *features = cur.a;
    return cur;
  }

  Act backward_to_input(const Act& dlogits, bool train, Tape& tape, bool accumulate) {
    Act cur = dlogits;
    for (std::size_t i = layers_.size(); i-- > 0;)
      cur = layers_[i]->backward(cur, train, tape, accumulate);
    return cur;
  }

  /// Logits for a batch, eval mode: K x N.
  Mat logits_batch(const std::vector<const Image*>& images) {
    Tape tape;
    Act x = pack(images);
    return forward(x, false, tape).a;
  }

  Vec logits(const Image& image) { return logits_batch({&image}).col(0); }

  /// Penultimate features (eval mode): F x N.
  Mat features_batch(const std::vector<const Image*>& images) {
    Tape tape;
    Act x = pack(images);
    Mat feat;
    forward(x, false, tape, &feat);
    return feat;
  }

  static Vec softmax(Vec logits) {
    const float m = logits.maxCoeff();
    logits = (logits.array() - m).exp().matrix();
    logits /= logits.sum();
    return logits;
  }

  /// 1-based predicted label; lowest index wins exact ties.
  int predict(const Image& image) { return detail::argmax_lowest_tie(logits(image)) + 1; }

  float msp(const Image& image) { return softmax(logits(image)).maxCoeff(); }

  std::vector<int> predict_batch(const std::vector<const Image*>& images) {
    Mat lg = logits_batch(images);
    std::vector<int> out(images.size());
    for (Eigen::Index j = 0; j < lg.cols(); ++j)
      out[static_cast<std::size_t>(j)] = detail::argmax_lowest_tie(lg.col(j)) + 1;
    return out;
  }

  // ---- gradients (eval mode, raw pixel space) ----

  /// d/dx of cross-entropy(f(x), label); label is 1-based.
  Image input_gradient(const Image& image, int label) {
    require(label >= 1 && label <= k_, ErrorCode::precondition,
            "label " + std::to_string(label) + " outside [1, " + std::to_string(k_) + "]");
    Tape tape;
    Act x = pack({&image});
    Act lg = forward(x, false, tape);
    Mat p = lg.a;
    detail::softmax_inplace(p);
    p(label - 1, 0) -= 1.0f;
    Act dl(std::move(p), 1, 1, 1);
    Act dx = backward_to_input(dl, false, tape, false);
    return unpack_one(dx, 0);
  }

  /// Sum over the batch of d/dx cross-entropy(f(x_i), label). All samples
  /// share one (1-based) target label; the per-sample gradients coincide in
  /// delta-space, so the sum is the PGD update direction.
  Image ce_gradient_sum(const std::vector<const Image*>& images, int label) {
    require(label >= 1 && label <= k_, ErrorCode::precondition, "label out of range");
    Tape tape;
    Act x = pack(images);
    Act lg = forward(x, false, tape);
    Mat p = lg.a;
    detail::softmax_inplace(p);
    p.row(label - 1).array() -= 1.0f;
    Act dl(std::move(p), static_cast<int>(images.size()), 1, 1);
    Act dx = backward_to_input(dl, false, tape, false);
    Image sum(in_.h, in_.w, in_.c);
    for (int i = 0; i < dx.n; ++i) {
      const Eigen::Index base = static_cast<Eigen::Index>(i) * in_.h * in_.w;
      for (int y = 0; y < in_.h; ++y)
        for (int xcol = 0; xcol < in_.w; ++xcol)
          for (int ch = 0; ch < in_.c; ++ch)
            sum.at(y, xcol, ch) += dx.a(ch, base + static_cast<Eigen::Index>(y) * in_.w + xcol);
    }
    return sum;
  }

  /// d/dx of <seed, logits(x)>; the DeepFool building block.
  Image logit_gradient(const Image& image, const Vec& seed) {
    require(seed.size() == k_, ErrorCode::shape_mismatch, "seed length must equal class count");
    Tape tape;
    Act x = pack({&image});
    forward(x, false, tape);
    Act dl(seed, 1, 1, 1);
    Act dx = backward_to_input(dl, false, tape, false);
    return unpack_one(dx, 0);
  }

  // ---- training support ----

  std::vector<NamedTensor> named_tensors() {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect("layer" + std::to_string(i), out);
    return out;
  }

  std::vector<Layer*> layers() {
    std::vector<Layer*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
  }

  void zero_grads() {
    for (auto& l : layers_) l->zero_grad();
  }

  // ---- persistence ----

  void save(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_error, "cannot write checkpoint " + path.string());
    out.write("BMDL", 4);
    write_u32(out, 1);
    write_str(out, arch_);
    write_u32(out, static_cast<std::uint32_t>(k_));
    write_u32(out, static_cast<std::uint32_t>(in_.h));
    write_u32(out, static_cast<std::uint32_t>(in_.w));
    write_u32(out, static_cast<std::uint32_t>(in_.c));
    auto tensors = named_tensors();
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (auto& t : tensors) {
      write_str(out, t.name);
      write_u32(out, static_cast<std::uint32_t>(t.tensor->rows()));
      write_u32(out, static_cast<std::uint32_t>(t.tensor->cols()));
      // Row-major payload.
      for (Eigen::Index r = 0; r < t.tensor->rows(); ++r)
        for (Eigen::Index c = 0; c < t.tensor->cols(); ++c) {
          const float v = (*t.tensor)(r, c);
          out.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!out) fail(ErrorCode::io_error, "short write on " + path.string());
  }

  static Classifier load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_file, "cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "BMDL", 4) != 0)
      fail(ErrorCode::bad_magic, "not a model checkpoint: " + path.string());
    const auto version = read_u32(in, "version");
    if (version != 1) fail(ErrorCode::version_mismatch, "unsupported checkpoint version");
    const std::string arch = read_str(in, "arch");
    const int k = static_cast<int>(read_u32(in, "K"));
    InputShape shape;
    shape.h = static_cast<int>(read_u32(in, "H"));
    shape.w = static_cast<int>(read_u32(in, "W"));
    shape.c = static_cast<int>(read_u32(in, "C"));
    Classifier m = build(arch, k, shape, 0);
    auto tensors = m.named_tensors();
    const auto count = read_u32(in, "tensor count");
    require(count == tensors.size(), ErrorCode::shape_mismatch,
            "checkpoint tensor count mismatch in " + path.string());
    for (auto& t : tensors) {
      const std::string name = read_str(in, "tensor name");
      require(name == t.name, ErrorCode::shape_mismatch,
              "unexpected tensor '" + name + "', wanted '" + t.name + "'");
      const auto rows = read_u32(in, "rows");
      const auto cols = read_u32(in, "cols");
      require(rows == static_cast<std::uint32_t>(t.tensor->rows()) &&
                  cols == static_cast<std::uint32_t>(t.tensor->cols()),
              ErrorCode::shape_mismatch, "tensor '" + name + "' shape mismatch");
      for (Eigen::Index r = 0; r < t.tensor->rows(); ++r)
        for (Eigen::Index c = 0; c < t.tensor->cols(); ++c) {
          float v;
          in.read(reinterpret_cast<char*>(&v), 4);
          if (in.gcount() != 4) fail(ErrorCode::truncated, "truncated tensor payload");
          (*t.tensor)(r, c) = v;
        }
    }
    return m;
  }

 private:
  static void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) fail(ErrorCode::truncated, std::string("truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  static void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::istream& in, const char* what) {
    const auto len = read_u32(in, what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (static_cast<std::uint32_t>(in.gcount()) != len)
      fail(ErrorCode::truncated, std::string("truncated ") + what);
    return s;
  }

  std::string arch_;
  int k_ = 0;
  InputShape in_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Standardize* standardize_ = nullptr;
  std::size_t feature_tap_ = 0;
};

}  // namespace batod::nets
