#include "d3/train.hpp"

#include <algorithm>
#include <numeric>

#include "d3/metrics.hpp"

namespace d3::head {

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (epochs < 1) throw InvalidInput("epochs must be >= 1");
  if (!(adam.learning_rate > 0)) throw InvalidInput("learning_rate must be > 0");
  if (adam.weight_decay < 0) throw InvalidInput("weight_decay must be >= 0");
  if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1)
    throw InvalidInput("adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0)) throw InvalidInput("adam epsilon must be > 0");
}

EpochLog score(const HeadParams<double>& params, const std::vector<backbone::EmbeddingPair>& pairs,
               const std::vector<std::string>& groups) {
  if (groups.size() != pairs.size()) throw InvalidInput("one group per validation pair is required");
  EpochLog log;
  if (pairs.empty()) return log;
  const auto probs = predict_batch(params, pairs);
  std::vector<metrics::ScoredSample> scored;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int y = static_cast<int>(pairs[i].label);
    loss_sum += bce_loss(probs[i], y);
    scored.push_back({probs[i], y, pairs[i].generator_id, groups[i], metrics::Domain::id});
  }
  log.val_loss = loss_sum / static_cast<double>(pairs.size());
  log.val_mean_acc = *metrics::mean_accuracy(scored).total_mean;
  return log;
}

TrainResult train(HeadKind kind, BranchMode branches, int dim, const TrainingSet& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.train_labels.size();
  if (n == 0) throw InvalidInput("training set is empty");
  const auto fakes = std::count(data.train_labels.begin(), data.train_labels.end(), synthbench::Label::fake);
  if (fakes == 0 || fakes == static_cast<long>(n))
    throw InvalidInput("training set contains a single class");

  Rng init_rng = derive_stream(cfg.seed, "head-init");
  Rng order_rng = derive_stream(cfg.seed, "batch-order");
  TrainResult result;
  HeadParams<double> params = init_params<double>(kind, branches, dim, init_rng);
  Adam<double> adam(cfg.adam, params.values.size());
  std::vector<std::size_t> order(n);
  bool have_best = false;
  EpochLog best;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    HeadGrad<double> grad(kind, branches, dim);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      grad.values.setZero();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const auto pair = data.train_pair(order[b], epoch);
        if (pair.original.size() != dim) throw InvalidInput("embedding dimension does not match head");
        batch_loss += loss_and_gradient(params, make_tokens<double>(pair, branches),
                                        static_cast<int>(pair.label), grad);
      }
      const double count = static_cast<double>(stop - start);
      adam.step(params.values, grad.values / count);
      epoch_loss += batch_loss;
    }
    EpochLog log = score(params, data.val_pairs, data.val_groups);
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(n);
    result.log.push_back(log);
    const bool better = !have_best || log.val_mean_acc > best.val_mean_acc ||
                        (log.val_mean_acc == best.val_mean_acc && log.val_loss < best.val_loss);
    if (better) {
      have_best = true;
      best = log;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace d3::head
