#include "digen/train.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

namespace digen {

void TrainConfig::validate() const {
  if (steps < 1) throw InvalidParam("TrainConfig: steps must be >= 1");
  if (batch_size < 1) throw InvalidParam("TrainConfig: batch_size must be >= 1");
  if (lr <= 0.0) throw InvalidParam("TrainConfig: lr must be > 0");
  if (lambda_edge < 0.0) throw InvalidParam("TrainConfig: lambda_edge must be >= 0");
  if (weight_decay < 0.0) throw InvalidParam("TrainConfig: weight_decay must be >= 0");
  if (threads < 1) throw InvalidParam("TrainConfig: threads must be >= 1");
  if (log_every < 0) throw InvalidParam("TrainConfig: log_every must be >= 0");
}

TrainResult train_denoiser(const TrainConfig& tc, Checkpoint& ckpt,
                           const std::vector<DiGraph>& data, const Corruptor& corrupt) {
  tc.validate();
  ckpt.model.validate();
  if (data.empty()) throw EmptyDataset("train_denoiser: no training graphs");
  if (!corrupt) throw InvalidParam("train_denoiser: corruptor is empty");

  if (ckpt.opt.m.empty()) ckpt.opt.init(ckpt.params.tensors);
  ckpt.opt.lr = tc.lr;
  ckpt.opt.weight_decay = tc.weight_decay;
  ckpt.has_opt = true;

  std::ofstream csv;
  if (!tc.loss_csv_path.empty()) {
    csv.open(tc.loss_csv_path, std::ios::trunc);
    if (!csv) throw IoError("train_denoiser: cannot open " + tc.loss_csv_path);
    csv << "step,loss\n";
  }

  int B = tc.batch_size;
  std::vector<std::vector<Tensor>> sample_grads(static_cast<size_t>(B));
  std::vector<double> sample_loss(static_cast<size_t>(B), 0.0);
  std::vector<std::int64_t> sample_clamps(static_cast<size_t>(B), 0);

  TrainResult result;
  double interval_sum = 0.0;
  int interval_count = 0;
  int interval = tc.log_every > 0 ? tc.log_every : tc.steps;

  for (int s = 0; s < tc.steps; ++s) {
    std::int64_t step_index = ckpt.step + s;

    auto run_sample = [&](int b) {
      std::uint64_t idx = static_cast<std::uint64_t>(step_index) * static_cast<std::uint64_t>(B) +
                          static_cast<std::uint64_t>(b);
      Rng rng(derive_seed(ckpt.seed, "train", idx));
      const DiGraph& clean =
          data[static_cast<size_t>(rng.uniform_int(static_cast<int>(data.size())))];
      auto [noisy, t] = corrupt(clean, rng);
      PEFeatures pe = pe_features(noisy, ckpt.pe);
      sample_clamps[static_cast<size_t>(b)] = 0;
      sample_loss[static_cast<size_t>(b)] =
          loss_and_grad(ckpt.model, ckpt.params, noisy, pe, t, clean, tc.lambda_edge,
                        &sample_grads[static_cast<size_t>(b)],
                        &sample_clamps[static_cast<size_t>(b)]);
    };

    if (tc.threads == 1 || B == 1) {
      for (int b = 0; b < B; ++b) run_sample(b);
    } else {
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      int workers = std::min(tc.threads, B);
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
          for (int b = next.fetch_add(1); b < B; b = next.fetch_add(1)) run_sample(b);
        });
      for (std::thread& th : pool) th.join();
    }

    // Reduce in sample order so the float sums match any thread count.
    std::vector<Tensor> grads = std::move(sample_grads[0]);
    double loss_sum = sample_loss[0];
    for (int b = 1; b < B; ++b) {
      loss_sum += sample_loss[static_cast<size_t>(b)];
      const std::vector<Tensor>& g = sample_grads[static_cast<size_t>(b)];
      for (size_t k = 0; k < grads.size(); ++k)
        for (size_t i = 0; i < grads[k].v.size(); ++i) grads[k].v[i] += g[k].v[i];
    }
    double inv = 1.0 / B;
    for (Tensor& g : grads) {
      for (double& x : g.v) x *= inv;
      g.check_finite("train_denoiser gradient");
    }
    double loss = loss_sum * inv;
    if (!std::isfinite(loss)) throw NonFinite("train_denoiser: batch loss is not finite");
    for (std::int64_t c : sample_clamps) result.clamp_events += c;
    sample_grads[0] = std::move(grads);

    ckpt.opt.update(ckpt.params.tensors, sample_grads[0]);

    interval_sum += loss;
    ++interval_count;
    if ((s + 1) % interval == 0 || s + 1 == tc.steps) {
      double mean = interval_sum / interval_count;
      result.loss_trace.push_back(mean);
      if (csv.is_open()) csv << (step_index + 1) << "," << mean << "\n";
      interval_sum = 0.0;
      interval_count = 0;
    }
  }

  ckpt.step += tc.steps;
  if (csv.is_open() && !csv) throw IoError("train_denoiser: short write to loss CSV");
  result.first_interval_loss = result.loss_trace.front();
  result.last_interval_loss = result.loss_trace.back();
  return result;
}

}  // namespace digen
