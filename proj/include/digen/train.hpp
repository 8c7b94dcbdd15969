#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "digen/denoiser.hpp"

namespace digen {

// Maps a clean graph to a corrupted copy and the time it was corrupted at.
// The time is drawn inside so the trainer stays agnostic of which
// generative process (flow or diffusion) produced the corruption.
using Corruptor = std::function<std::pair<DiGraph, double>(const DiGraph& clean, Rng& rng)>;

struct TrainConfig {
  int steps = 1000;
  int batch_size = 16;
  double lr = 2e-4;
  double lambda_edge = 5.0;
  double weight_decay = 1e-12;
  int threads = 1;
  int log_every = 50;         // steps per loss-trace entry; 0 logs once at the end
  std::string loss_csv_path;  // empty disables the CSV

  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_trace;  // mean batch loss per logging interval
  double first_interval_loss = 0.0;
  double last_interval_loss = 0.0;
  std::int64_t clamp_events = 0;
};

// Optimizes ckpt.params in place with AdamW, advancing ckpt.step by
// tc.steps. Every sample's randomness comes from a stream derived from
// (ckpt.seed, global sample index), and per-sample gradients are reduced
// in sample order, so results are independent of the thread count and a
// resumed run replays exactly.
TrainResult train_denoiser(const TrainConfig& tc, Checkpoint& ckpt,
                           const std::vector<DiGraph>& data, const Corruptor& corrupt);

}  // namespace digen
