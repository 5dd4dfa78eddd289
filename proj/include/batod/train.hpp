#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "batod/dataset.hpp"
#include "batod/errors.hpp"
#include "batod/net.hpp"
#include "batod/rng.hpp"

namespace batod::nets {

struct TrainingConfig {
  std::string arch = "resnet_lite_8";
  int epochs = 30;
  int batch_size = 128;
  double lr = 0.01;
  std::string optimizer = "adam";
  std::uint64_t seed = 1;
  double accuracy_floor = 0.85;
  bool cosine_decay = true;

  void validate() const {
    require(epochs >= 1 && batch_size >= 1, ErrorCode::precondition,
            "epochs and batch size must be positive");
    require(lr > 0.0, ErrorCode::precondition, "learning rate must be positive");
    require(optimizer == "adam", ErrorCode::config_error, "unknown optimizer: " + optimizer);
  }
};

struct TrainingHistory {
  std::vector<double> epoch_loss;        // mean cross-entropy per epoch, training mode
  double final_train_accuracy = 0.0;     // eval-mode accuracy on the training data
  double holdout_balanced_accuracy = 0;  // discriminator only
};

namespace detail {

class Adam {
 public:
  Adam(std::vector<std::pair<Mat*, Mat*>> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [p, g] : params_) {
      m_.emplace_back(Mat::Zero(p->rows(), p->cols()));
      v_.emplace_back(Mat::Zero(p->rows(), p->cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Mat& p = *params_[i].first;
      Mat& g = *params_[i].second;
      m_[i] = static_cast<float>(b1_) * m_[i] + static_cast<float>(1.0 - b1_) * g;
      v_[i] = (static_cast<float>(b2_) * v_[i].array() +
               static_cast<float>(1.0 - b2_) * g.array().square())
                  .matrix();
      const auto mhat = m_[i].array() / static_cast<float>(bc1);
      const auto vhat = v_[i].array() / static_cast<float>(bc2);
      p.array() -= static_cast<float>(lr) * mhat / (vhat.sqrt() + static_cast<float>(eps_));
    }
  }

 private:
  std::vector<std::pair<Mat*, Mat*>> params_;
  std::vector<Mat> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

inline void collect_params(Layer* layer, std::vector<std::pair<Mat*, Mat*>>& out) {
  if (auto* c = dynamic_cast<Conv2d*>(layer)) {
    out.push_back({&c->w, &c->gw});
    out.push_back({&c->b, &c->gb});
  } else if (auto* d = dynamic_cast<Dense*>(layer)) {
    out.push_back({&d->w, &d->gw});
    out.push_back({&d->b, &d->gb});
  } else if (auto* bn = dynamic_cast<BatchNorm2d*>(layer)) {
    out.push_back({&bn->gamma, &bn->ggamma});
    out.push_back({&bn->beta, &bn->gbeta});
  } else if (auto* r = dynamic_cast<ResidualBlock*>(layer)) {
    collect_params(&r->conv1, out);
    collect_params(&r->bn1, out);
    collect_params(&r->conv2, out);
    collect_params(&r->bn2, out);
    if (r->sc_conv) {
      collect_params(r->sc_conv.get(), out);
      collect_params(r->sc_bn.get(), out);
    }
  }
}

inline void fit_standardization(Classifier& model, const SampleList& data) {
  const int c = model.input_shape().c;
  std::vector<double> sum(static_cast<std::size_t>(c), 0.0), sq(static_cast<std::size_t>(c), 0.0);
  std::size_t count = 0;
  for (const auto& s : data) {
    for (int y = 0; y < s.image.h; ++y)
      for (int x = 0; x < s.image.w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          const double v = s.image.at(y, x, ch);
          sum[static_cast<std::size_t>(ch)] += v;
          sq[static_cast<std::size_t>(ch)] += v * v;
        }
    count += static_cast<std::size_t>(s.image.h) * s.image.w;
  }
  auto& std_layer = model.standardize();
  for (int ch = 0; ch < c; ++ch) {
    const double mean = sum[static_cast<std::size_t>(ch)] / static_cast<double>(count);
    const double var = sq[static_cast<std::size_t>(ch)] / static_cast<double>(count) - mean * mean;
    const double sd = std::sqrt(std::max(var, 1e-6));
    std_layer.mean(ch, 0) = static_cast<float>(mean);
    std_layer.inv_std(ch, 0) = static_cast<float>(1.0 / sd);
  }
}

}  // namespace detail

/// Eval-mode top-1 accuracy of `model` on `data`, computed in chunks.
inline double evaluate_accuracy(Classifier& model, const SampleList& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    std::vector<const Image*> batch;
    for (std::size_t j = i; j < std::min(i + chunk, data.size()); ++j)
      batch.push_back(&data[j].image);
    const auto pred = model.predict_batch(batch);
    for (std::size_t j = 0; j < pred.size(); ++j)
      if (pred[j] == data[i + j].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Trains a classifier with cross-entropy and Adam under a cosine-decayed
/// learning rate. Deterministic for a fixed seed. Fails with the final
/// training accuracy if the configured floor is not reached.
inline Classifier train_classifier(const SampleList& data, int class_count,
                                   const TrainingConfig& cfg, TrainingHistory* history = nullptr) {
  cfg.validate();
  require(!data.empty(), ErrorCode::precondition, "training data is empty");
  for (const auto& s : data)
    require(s.label >= 1 && s.label <= class_count, ErrorCode::precondition,
            "label " + std::to_string(s.label) + " outside [1, " + std::to_string(class_count) +
                "]");

  InputShape shape{data.front().image.h, data.front().image.w, data.front().image.c};
  Classifier model = Classifier::build(cfg.arch, class_count, shape, cfg.seed);
  detail::fit_standardization(model, data);

  std::vector<std::pair<Mat*, Mat*>> params;
  for (Layer* l : model.layers()) detail::collect_params(l, params);
  detail::Adam adam(params);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.cosine_decay
                          ? cfg.lr * 0.5 *
                                (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs))
                          : cfg.lr;
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Image*> images;
      std::vector<int> labels;
      images.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(&data[order[i]].image);
        labels.push_back(data[order[i]].label);
      }

      Tape tape;
      Act x = model.pack(images);
      Act lg = model.forward(x, true, tape);
      Mat p = lg.a;
      detail_softmax(p);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const float prob = std::max(p(labels[i] - 1, static_cast<Eigen::Index>(i)), 1e-12f);
        loss_sum -= std::log(prob);
      }
      const float inv_n = 1.0f / static_cast<float>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) p(labels[i] - 1, static_cast<Eigen::Index>(i)) -= 1.0f;
      p *= inv_n;

      model.zero_grads();
      Act dl(std::move(p), static_cast<int>(labels.size()), 1, 1);
      model.backward_to_input(dl, true, tape, true);
      adam.step(lr);
    }
    hist.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }

  hist.final_train_accuracy = evaluate_accuracy(model, data);
  if (history) *history = hist;
  if (hist.final_train_accuracy < cfg.accuracy_floor)
    fail(ErrorCode::training_failure,
         "final training accuracy " + std::to_string(hist.final_train_accuracy) +
             " below floor " + std::to_string(cfg.accuracy_floor));
  return model;
}

/// Binary inlier/outlier discriminator: class 1 = inlier (from the available
/// clean set), class 2 = outlier (from the synthesized proxies). 10% of each
/// side is held out to report a balanced accuracy.
inline Classifier train_discriminator(const SampleList& available, const SampleList& synthetic,
                                      const TrainingConfig& cfg,
                                      TrainingHistory* history = nullptr) {
  require(!available.empty() && !synthetic.empty(), ErrorCode::precondition,
          "discriminator needs both an inlier and an outlier set");

  auto split_side = [&](const SampleList& src, int label, const char* tag, SampleList& train,
                        SampleList& holdout) {
    std::vector<std::size_t> idx(src.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(cfg.seed, std::string("disc-holdout-") + tag));
    rng.shuffle(idx);
    const std::size_t held = std::max<std::size_t>(1, src.size() / 10);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      LabeledSample s{src[idx[i]].image, label};
      (i < held ? holdout : train).push_back(std::move(s));
    }
  };

  SampleList train, holdout;
  split_side(available, 1, "in", train, holdout);
  split_side(synthetic, 2, "out", train, holdout);

  TrainingHistory hist;
  Classifier model = train_classifier(train, 2, cfg, &hist);

  double correct[2] = {0, 0}, total[2] = {0, 0};
  for (const auto& s : holdout) {
    total[s.label - 1] += 1;
    if (model.predict(s.image) == s.label) correct[s.label - 1] += 1;
  }
  hist.holdout_balanced_accuracy =
      0.5 * (correct[0] / std::max(total[0], 1.0) + correct[1] / std::max(total[1], 1.0));
  if (history) *history = hist;
  return model;
}

}  // namespace batod::nets
