#pragma once

// Training loops. train_reference runs the min-max loop: per harmful example
// a fresh worst-case perturbation, then one optimizer step on the combined
// toward + alpha * utility loss. train_dpo runs the preference loop against
// a frozen reference; at-dpo/adpo recompute the perturbation per example per
// step. Loops are single-threaded with order-fixed accumulation, so runs are
// bit-reproducible from the config seed.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "adpo/dataset.hpp"
#include "adpo/losses.hpp"
#include "adpo/optimizer.hpp"

namespace adpo {

struct TrainCfg {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 2;
  LossCfg loss;
  PerturbCfg perturb;
  std::uint64_t seed = 0;
  double utility_mix = 5.0 / 7.0;  // fraction of each reference batch drawn from utility data
  OptCfg optimizer;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (!(utility_mix >= 0.0 && utility_mix <= 1.0))
      throw std::invalid_argument("train: utility_mix must be in [0,1]");
    perturb.validate();
  }
};

struct EpochStats {
  double mean_loss = 0.0;
  double mean_toward = 0.0;
  double mean_utility = 0.0;
  double mean_dpo_argument = 0.0;
};

struct TrainRun {
  ToyVlmParams params;
  std::vector<EpochStats> trace;
  double wall_seconds = 0.0;
  TrainCfg config;
  std::string checkpoint_path;
};

namespace detail {

inline void require_finite_loss(double loss, int epoch, int batch) {
  if (!std::isfinite(loss))
    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(batch));
}

// Deterministic cycling sampler over a dataset: reshuffles with a fresh
// derived stream each time the index pool runs dry.
class CycleSampler {
 public:
  CycleSampler(std::size_t n, std::uint64_t seed, const char* stream)
      : seed_(seed), stream_(stream) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;  // exhausted: the first next() shuffles
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      Rng rng(derive_seed(seed_, stream_, round_++));
      rng.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::uint64_t seed_;
  const char* stream_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t round_ = 0;
};

}  // namespace detail

inline TrainRun train_reference(const ToyVlmParams& init, const std::vector<PreferenceExample>& harmful,
                                const std::vector<PreferenceExample>& utility, const TrainCfg& cfg) {
  cfg.validate();
  if (harmful.empty()) throw std::invalid_argument("train_reference: harmful dataset is empty");
  if (utility.empty()) throw std::invalid_argument("train_reference: utility dataset is empty");

  int n_util = static_cast<int>(std::llround(cfg.batch_size * cfg.utility_mix));
  n_util = std::min(n_util, cfg.batch_size - 1);
  int n_harm = cfg.batch_size - n_util;

  auto t0 = std::chrono::steady_clock::now();
  TrainRun run;
  run.config = cfg;
  ToyVlmParams params = init;
  OptimizerState state = OptimizerState::init(params);

  detail::CycleSampler util_sampler(utility.size(), cfg.seed, "shuffle-utility");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(harmful.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle-harmful", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(n_harm)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(n_harm));
      int nh = static_cast<int>(stop - start);

      ParamGrads grads = ParamGrads::zeros_like(params);
      double toward_sum = 0.0, util_sum = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        LossGrads lg = toward_loss_grad(params, harmful[order[i]], cfg.perturb);
        toward_sum += lg.value.total;
        axpy(grads, lg.grads, 1.0 / nh);
      }
      int nu = std::max(1, n_util);
      for (int i = 0; i < nu; ++i) {
        const PreferenceExample& ex = utility[util_sampler.next()];
        LossGrads lg = detail::nll_grad(params, ex.query, ex.y_p);
        util_sum += lg.value.total;
        axpy(grads, lg.grads, cfg.loss.alpha / nu);
      }

      double batch_loss = toward_sum / nh + cfg.loss.alpha * (util_sum / nu);
      detail::require_finite_loss(batch_loss, epoch, batches);
      auto [next_params, next_state] =
          optimizer_step(params, grads, std::move(state), cfg.learning_rate, cfg.optimizer);
      params = std::move(next_params);
      state = std::move(next_state);

      stats.mean_loss += batch_loss;
      stats.mean_toward += toward_sum / nh;
      stats.mean_utility += util_sum / nu;
      ++batches;
    }
    stats.mean_loss /= batches;
    stats.mean_toward /= batches;
    stats.mean_utility /= batches;
    run.trace.push_back(stats);
  }

  run.params = std::move(params);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

inline TrainRun train_dpo(const ToyVlmParams& init, const ToyVlmParams& ref,
                          const std::vector<PreferenceExample>& prefs, const TrainCfg& cfg) {
  cfg.validate();
  cfg.loss.validate();
  if (prefs.empty()) throw std::invalid_argument("train_dpo: preference dataset is empty");
  bool attack = variant_uses_perturbation(cfg.loss.variant);

  auto t0 = std::chrono::steady_clock::now();
  TrainRun run;
  run.config = cfg;
  ToyVlmParams params = init;
  OptimizerState state = OptimizerState::init(params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(prefs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      int n = static_cast<int>(stop - start);

      ParamGrads grads = ParamGrads::zeros_like(params);
      double loss_sum = 0.0, arg_sum = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const PreferenceExample& ex = prefs[order[i]];
        LossGrads lg;
        if (attack) {
          Perturbation delta = attack_example(params, ex, cfg.perturb);
          lg = dpo_loss_grad(params, ref, ex, cfg.loss, &delta);
        } else {
          lg = dpo_loss_grad(params, ref, ex, cfg.loss);
        }
        loss_sum += lg.value.total;
        arg_sum += lg.value.components.dpo_argument;
        axpy(grads, lg.grads, 1.0 / n);
      }

      double batch_loss = loss_sum / n;
      detail::require_finite_loss(batch_loss, epoch, batches);
      auto [next_params, next_state] =
          optimizer_step(params, grads, std::move(state), cfg.learning_rate, cfg.optimizer);
      params = std::move(next_params);
      state = std::move(next_state);

      stats.mean_loss += batch_loss;
      stats.mean_dpo_argument += arg_sum / n;
      ++batches;
    }
    stats.mean_loss /= batches;
    stats.mean_dpo_argument /= batches;
    run.trace.push_back(stats);
  }

  run.params = std::move(params);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// Supervised fine-tuning on the preferred responses.
inline TrainRun train_sft(const ToyVlmParams& init, const std::vector<PreferenceExample>& data,
                          const TrainCfg& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_sft: dataset is empty");

  auto t0 = std::chrono::steady_clock::now();
  TrainRun run;
  run.config = cfg;
  ToyVlmParams params = init;
  OptimizerState state = OptimizerState::init(params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      int n = static_cast<int>(stop - start);

      ParamGrads grads = ParamGrads::zeros_like(params);
      double loss_sum = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        LossGrads lg = sft_loss_grad(params, data[order[i]]);
        loss_sum += lg.value.total;
        axpy(grads, lg.grads, 1.0 / n);
      }

      double batch_loss = loss_sum / n;
      detail::require_finite_loss(batch_loss, epoch, batches);
      auto [next_params, next_state] =
          optimizer_step(params, grads, std::move(state), cfg.learning_rate, cfg.optimizer);
      params = std::move(next_params);
      state = std::move(next_state);

      stats.mean_loss += batch_loss;
      ++batches;
    }
    stats.mean_loss /= batches;
    stats.mean_toward = stats.mean_loss;
    run.trace.push_back(stats);
  }

  run.params = std::move(params);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void write_trace_csv(const TrainRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trace: cannot open '" + path + "' for writing");
  out << "epoch,mean_loss,mean_toward,mean_utility,mean_dpo_argument\n";
  for (std::size_t e = 0; e < run.trace.size(); ++e) {
    const EpochStats& s = run.trace[e];
    out << e << "," << format_double(s.mean_loss) << "," << format_double(s.mean_toward) << ","
        << format_double(s.mean_utility) << "," << format_double(s.mean_dpo_argument) << "\n";
  }
}

}  // namespace adpo
