#pragma once

// Super-convergence style piecewise-linear schedule:
//
//   [0, I_pre)              lr 4e-4 -> 4e-3, momentum 0.95   (pre-training, no AugF)
//   [I_pre, I_pre+I_c)      lr 4e-3 -> 4e-2, momentum 0.95 -> 0.85
//   [.., I_pre+2 I_c)       lr 4e-2 -> 4e-3, momentum 0.85 -> 0.95
//   [.., I_pre+2 I_c+I_e)   lr 4e-3 -> 4e-6, momentum 0.95
//   afterwards              lr 4e-6
//
// Every learning rate is multiplied by lr_scale.

#include <array>
#include <cstddef>
#include <cstdint>

namespace featmatch {

struct ScheduleConfig {
  std::uint64_t pretrain_iters = 0;  // I_pre
  std::uint64_t cycle_iters = 0;     // I_c, length of each of the up and down ramps
  std::uint64_t converge_iters = 0;  // I_e
  double lr_start = 4e-4;
  double lr_base = 4e-3;
  double lr_peak = 4e-2;
  double lr_final = 4e-6;
  double momentum_high = 0.95;
  double momentum_low = 0.85;
  double lr_scale = 1.0;

  std::uint64_t total_iters() const { return pretrain_iters + 2 * cycle_iters + converge_iters; }
};

struct ScheduleValue {
  double lr = 0.0;
  double momentum = 0.0;
};

inline ScheduleValue lr_schedule(std::uint64_t iter, const ScheduleConfig& c) {
  struct Segment {
    std::uint64_t length;
    double lr0, lr1, m0, m1;
  };
  const std::array<Segment, 4> segments{{
      {c.pretrain_iters, c.lr_start, c.lr_base, c.momentum_high, c.momentum_high},
      {c.cycle_iters, c.lr_base, c.lr_peak, c.momentum_high, c.momentum_low},
      {c.cycle_iters, c.lr_peak, c.lr_base, c.momentum_low, c.momentum_high},
      {c.converge_iters, c.lr_base, c.lr_final, c.momentum_high, c.momentum_high},
  }};
  std::uint64_t start = 0;
  for (const auto& s : segments) {
    if (iter < start + s.length) {
      const double t = static_cast<double>(iter - start) / static_cast<double>(s.length);
      return {c.lr_scale * (s.lr0 + (s.lr1 - s.lr0) * t), s.m0 + (s.m1 - s.m0) * t};
    }
    start += s.length;
  }
  return {c.lr_scale * c.lr_final, c.momentum_high};
}

}  // namespace featmatch
