#pragma once

// Wall-clock benchmarking of attention kernels and whole models. Medians over
// fixed-warmup repetition sets; inputs generated from a seed so runs are
// comparable. Measurement never feeds correctness: equivalence checks happen
// outside the timed region.

#include <chrono>

#include "y12/attention.hpp"
#include "y12/model.hpp"

namespace y12 {

struct BenchResult {
  std::string label;
  std::string kernel;  // naive | area | tiled | model
  std::size_t n = 0, heads = 0, head_dim = 0, segments = 1;
  std::size_t threads = 1;
  std::size_t repetitions = 0;
  std::size_t warmup = 0;
  double median_ms = 0, p5_ms = 0, p95_ms = 0;
  double throughput_per_s = 0;
  bool skipped = false;
};

namespace detail {

// Nearest-rank percentile on a sorted copy.
inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double rank = pct / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

template <typename Fn>
std::vector<double> time_reps(std::size_t reps, std::size_t warmup, Fn&& fn) {
  if (reps < 20) throw ConfigError("bench: at least 20 repetitions required");
  if (warmup < 5) throw ConfigError("bench: at least 5 warmup runs required");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  return ms;
}

inline void fill_stats(BenchResult& r, const std::vector<double>& ms) {
  r.median_ms = percentile(ms, 50.0);
  r.p5_ms = percentile(ms, 5.0);
  r.p95_ms = percentile(ms, 95.0);
  r.throughput_per_s = r.median_ms > 0 ? 1000.0 / r.median_ms : 0.0;
}

}  // namespace detail

enum class AttentionKernel { naive, area, tiled };

inline const char* kernel_name(AttentionKernel k) {
  switch (k) {
    case AttentionKernel::naive: return "naive";
    case AttentionKernel::area: return "area";
    case AttentionKernel::tiled: return "tiled";
  }
  return "?";
}

struct AttentionGridPoint {
  std::size_t n = 1024, heads = 2, head_dim = 32, segments = 1;
  AttentionKernel kernel = AttentionKernel::naive;
  std::size_t tile_block = 64;  // tiled kernel only
};

// fp32 kernel benchmark over a grid. Grid points whose segment count does not
// divide n are reported as skipped rows rather than failing the sweep.
inline std::vector<BenchResult> bench_attention(const std::vector<AttentionGridPoint>& grid,
                                                std::size_t reps = 25, std::size_t warmup = 5,
                                                std::uint64_t seed = 42,
                                                std::size_t threads = 1) {
  std::vector<BenchResult> out;
  for (const auto& point : grid) {
    BenchResult r;
    r.kernel = kernel_name(point.kernel);
    r.n = point.n;
    r.heads = point.heads;
    r.head_dim = point.head_dim;
    r.segments = point.kernel == AttentionKernel::area ? point.segments : 1;
    r.threads = threads;
    r.label = std::string(r.kernel) + " n=" + std::to_string(r.n) +
              " h=" + std::to_string(r.heads) + " d=" + std::to_string(r.head_dim) +
              (point.kernel == AttentionKernel::area
                   ? " L=" + std::to_string(point.segments)
                   : "") +
              (point.kernel == AttentionKernel::tiled
                   ? " block=" + std::to_string(point.tile_block)
                   : "");
    if (point.kernel == AttentionKernel::area && point.n % point.segments != 0) {
      r.skipped = true;
      r.label += " [skipped: n % L != 0]";
      out.push_back(std::move(r));
      continue;
    }
    const std::size_t total = point.n * point.heads * point.head_dim;
    SplitMix64 rng(seed);
    std::vector<float> q(total), k(total), v(total), y(total);
    for (auto& x : q) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& x : k) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto run = [&] {
      switch (point.kernel) {
        case AttentionKernel::naive:
          kernels::naive_attention(q.data(), k.data(), v.data(), y.data(), point.n,
                                   point.heads, point.head_dim, threads);
          break;
        case AttentionKernel::area:
          kernels::area_attention(q.data(), k.data(), v.data(), y.data(), point.n,
                                  point.heads, point.head_dim, point.segments, threads);
          break;
        case AttentionKernel::tiled:
          kernels::tiled_attention_heads(q.data(), k.data(), v.data(), y.data(), point.n,
                                         point.heads, point.head_dim, point.tile_block,
                                         threads);
          break;
      }
    };
    r.repetitions = reps;
    r.warmup = warmup;
    detail::fill_stats(r, detail::time_reps(reps, warmup, run));
    out.push_back(std::move(r));
  }
  return out;
}

// fp32 whole-model forward latency at a given input size.
inline BenchResult bench_model(Scale scale, std::size_t input_size, std::size_t reps = 25,
                               std::size_t warmup = 5, std::uint64_t seed = 42) {
  Model<float> model = build_model<float>(ModelConfig::for_scale(scale, 80, input_size));
  SplitMix64 rng(seed);
  Tensor<float> image = rand_uniform<float>({1, 3, input_size, input_size}, rng, 0.f, 1.f);
  BenchResult r;
  r.kernel = "model";
  r.label = std::string("model scale=") + scale_char(scale) +
            " size=" + std::to_string(input_size);
  r.n = input_size;
  r.repetitions = reps;
  r.warmup = warmup;
  detail::fill_stats(r, detail::time_reps(reps, warmup, [&] { model.forward(image); }));
  return r;
}

}  // namespace y12
