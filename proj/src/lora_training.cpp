#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "headprobe/common.hpp"
#include "headprobe/micro_transformer.hpp"

namespace headprobe {

namespace {

struct AdamState {
  Matrix m_a, v_a, m_b, v_b;
};

std::vector<std::vector<Token>> tokenize_all(std::span<const LabeledText> data, int max_context) {
  std::vector<std::vector<Token>> out;
  out.reserve(data.size());
  for (const auto& item : data) {
    out.push_back(format_prompt(item.text, static_cast<std::size_t>(max_context)).tokens);
  }
  return out;
}

void adam_update(Matrix& param, Matrix& m, Matrix& v, const Matrix& g, double lr, std::size_t t) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace

double mean_answer_loss(const MicroTransformer& model, std::span<const LabeledText> data, unsigned workers) {
  if (data.empty()) return 0.0;
  auto prompts = tokenize_all(data, model.config.max_context);
  std::vector<double> losses(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    losses[i] = answer_loss(model, prompts[i], answer_token(data[i].label));
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

TrainResult train_lora(MicroTransformer model, std::span<const LabeledText> data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train_lora needs a non-empty dataset");
  if (!model.lora) throw InvalidArgument("train_lora needs adapters; call apply_lora first");

  const auto prompts = tokenize_all(data, model.config.max_context);
  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

  std::vector<AdamState> adam(model.blocks.size() * kNumProjections);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (auto p : kAllProjections) {
      const auto& layer = model.blocks[l][p];
      if (!layer.adapter) continue;
      auto& s = adam[l * kNumProjections + static_cast<std::size_t>(p)];
      s.m_a = s.v_a = Matrix::Zero(layer.adapter->a.rows(), layer.adapter->a.cols());
      s.m_b = s.v_b = Matrix::Zero(layer.adapter->b.rows(), layer.adapter->b.cols());
    }
  }

  TrainResult result{std::move(model), {}, 0};
  auto& m = result.model;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t count = std::min(batch, n - start);
      std::vector<LossAndGrad> per_sample(count);
      parallel_for(count, cfg.workers, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        DropoutContext drop{derive_seed(cfg.seed, step, idx)};
        per_sample[i] = answer_loss_and_gradients(m, prompts[idx], answer_token(data[idx].label), &drop);
      });

      double batch_loss = 0.0;
      for (const auto& s : per_sample) batch_loss += s.loss;
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite training loss at step " + std::to_string(step));
      }
      epoch_loss += batch_loss * static_cast<double>(count);

      const double lr = learning_rate_at(cfg, step, total_steps);
      for (std::size_t slot = 0; slot < adam.size(); ++slot) {
        auto& layer = m.blocks[slot / kNumProjections][kAllProjections[slot % kNumProjections]];
        if (!layer.adapter) continue;
        Matrix ga = per_sample[0].grads[slot].a;
        Matrix gb = per_sample[0].grads[slot].b;
        for (std::size_t i = 1; i < count; ++i) {
          ga += per_sample[i].grads[slot].a;
          gb += per_sample[i].grads[slot].b;
        }
        ga /= static_cast<double>(count);
        gb /= static_cast<double>(count);
        auto& s = adam[slot];
        adam_update(layer.adapter->a, s.m_a, s.v_a, ga, lr, step + 1);
        adam_update(layer.adapter->b, s.m_b, s.v_b, gb, lr, step + 1);
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  result.steps = step;
  return result;
}

}  // namespace headprobe
