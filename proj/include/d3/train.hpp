#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "d3/backbone.hpp"
#include "d3/head.hpp"

namespace d3::head {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

template <typename Scalar>
class Adam {
 public:
  Adam(const AdamConfig& cfg, Eigen::Index size)
      : cfg_(cfg), m_(Vector<Scalar>::Zero(size)), v_(Vector<Scalar>::Zero(size)) {}

  void step(Vector<Scalar>& params, Vector<Scalar> grad) {
    if (cfg_.weight_decay != 0.0) grad += static_cast<Scalar>(cfg_.weight_decay) * params;
    ++t_;
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t_));
    const auto lr = static_cast<Scalar>(cfg_.learning_rate);
    const auto eps = static_cast<Scalar>(cfg_.epsilon);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector<Scalar> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 128;
  int epochs = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training data supplied lazily: `train_pair(i, epoch)` returns sample i as seen
/// in the given epoch (augmentation may differ per epoch).
struct TrainingSet {
  std::vector<synthbench::Label> train_labels;
  std::function<backbone::EmbeddingPair(std::size_t index, int epoch)> train_pair;
  std::vector<backbone::EmbeddingPair> val_pairs;
  std::vector<std::string> val_groups;  // architecture group per val pair
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mean_acc = 0.0;
};

struct TrainResult {
  HeadParams<double> params;  // weights of the selected epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Adam on mean BCE over shuffled minibatches. After each epoch the head is scored
/// on the validation pairs; the epoch with the highest mean accuracy (then lowest
/// loss, then earliest) is kept.
TrainResult train(HeadKind kind, BranchMode branches, int dim, const TrainingSet& data,
                  const TrainConfig& cfg);

/// Mean validation accuracy and loss of `params`.
EpochLog score(const HeadParams<double>& params, const std::vector<backbone::EmbeddingPair>& pairs,
               const std::vector<std::string>& groups);

}  // namespace d3::head
