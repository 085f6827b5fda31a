#include <algorithm>
#include <chrono>
#include <functional>
#include <stdexcept>

#include "faim/eval.hpp"
#include "faim/flops.hpp"
#include "faim/ops.hpp"
#include "faim/pipeline.hpp"
#include "faim/rng.hpp"

namespace faim {

namespace {

Tensor random_tensor(Shape shape, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = rng.uniform(-1.0f, 1.0f);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Builds the workload for one (stage, size) cell; the returned closure runs
// one forward pass.
std::function<void()> make_workload(const std::string& stage, int size) {
  if (stage == "conv") {
    auto x = random_tensor({16, size, size}, 11);
    auto k = random_tensor({16, 16, 3, 3}, 12);
    auto b = random_tensor({16}, 13);
    return [x, k, b]() { conv2d(x, k, b, 1); };
  }
  if (stage == "attention") {
    auto params = std::make_shared<Parameters>(7);
    const int d = 64;
    for (const char* mat : {"wq", "wk", "wv", "wo"}) params->add_linear(std::string("a.") + mat, d, d);
    for (const char* vec : {"bq", "bk", "bv", "bo"}) params->add_zeros(std::string("a.") + vec, {d});
    auto q = random_tensor({size, d}, 21);
    return [params, q]() { multi_head_attention(q, q, q, *params, "a", 4); };
  }
  if (stage == "roi_align") {
    auto fmap = random_tensor({16, 32, 32}, 31);
    const Box roi{4.0f, 4.0f, 28.0f, 28.0f};
    return [fmap, roi, size]() { roi_align(fmap, roi, size, size, 2); };
  }
  if (stage == "detector") {
    if (size % 32 != 0) throw std::invalid_argument("benchmark: detector size must be /32");
    ModelConfig cfg;
    auto pipe = std::make_shared<Pipeline>(build_pipeline(cfg, 5));
    auto frame = random_tensor({3, size, size}, 41);
    return [pipe, frame]() { detector_forward(frame, pipe->params, pipe->model, true); };
  }
  if (stage == "inference") {
    ModelConfig cfg;
    auto pipe = std::make_shared<Pipeline>(build_pipeline(cfg, 5));
    auto frames = std::make_shared<std::vector<Tensor>>();
    for (int t = 0; t < 4; ++t) frames->push_back(random_tensor({3, 64, 64}, 50 + t));
    RuntimeConfig rt;
    rt.n_cap = size;
    rt.k = std::max(rt.k, size);
    return [pipe, frames, rt]() { infer_clip(*pipe, *frames, rt); };
  }
  throw std::invalid_argument("benchmark: unknown stage '" + stage + "'");
}

}  // namespace

std::vector<BenchRow> run_benchmark(const std::string& stage, const std::vector<int>& sizes,
                                    int repeats, int warmup) {
  if (warmup < 3) throw std::invalid_argument("benchmark: warmup must be >= 3");
  if (repeats < 1) throw std::invalid_argument("benchmark: repeats must be >= 1");
  std::vector<BenchRow> rows;
  for (int size : sizes) {
    auto work = make_workload(stage, size);
    BenchRow row;
    row.size = size;
    {
      FlopCounts counts;
      FlopScope scope(&counts);
      work();
      row.flops = counts.total_flops();
    }
    for (int i = 0; i < warmup; ++i) work();
    std::vector<double> samples;
    for (int i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      work();
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    row.median_ms = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    rows.push_back(row);
  }
  return rows;
}

std::string benchmark_csv(const std::vector<BenchRow>& rows) {
  std::string out = "size,flops,median_ms\n";
  for (const BenchRow& row : rows) {
    char line[96];
    std::snprintf(line, sizeof(line), "%d,%llu,%.6g\n", row.size,
                  static_cast<unsigned long long>(row.flops), row.median_ms);
    out += line;
  }
  return out;
}

}  // namespace faim
