// Serial reference vs OpenMP kernels, plus few-shot evaluation throughput.
//
//   ancor_bench [--reps N] [--threads T] [--episodes E]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "ancor/data.hpp"
#include "ancor/fewshot.hpp"
#include "ancor/kernels.hpp"
#include "ancor/model.hpp"

using namespace ancor;

namespace {

double time_ms(int reps, const std::function<void()>& f) {
  f();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
}

Matrix random(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ancor kernel benchmark"};
  int reps = 20, threads = 0;
  std::size_t episodes = 100;
  app.add_option("--reps", reps, "repetitions per timing")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  app.add_option("--episodes", episodes, "episodes for the evaluation timing")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_threads(threads);

  std::printf("threads: %d\n\n", kernels::max_threads());
  std::printf("%-10s %-16s %10s %10s %8s %10s\n", "kernel", "shape", "serial ms", "omp ms", "speedup", "max diff");
  std::mt19937_64 rng(7);
  const std::size_t shapes[][3] = {{128, 64, 128}, {256, 128, 256}, {512, 256, 512}, {1280, 64, 64}};
  for (const auto& s : shapes) {
    const Matrix a = random(s[0], s[1], rng), b = random(s[1], s[2], rng);
    const Matrix bt = random(s[2], s[1], rng), at = random(s[1], s[0], rng);
    struct Case {
      const char* name;
      std::function<Matrix()> ser, par;
    } cases[] = {
        {"matmul", [&] { return serial::matmul(a, b); }, [&] { return kernels::matmul(a, b); }},
        {"matmul_nt", [&] { return serial::matmul_nt(a, bt); }, [&] { return kernels::matmul_nt(a, bt); }},
        {"matmul_tn", [&] { return serial::matmul_tn(at, b); }, [&] { return kernels::matmul_tn(at, b); }},
    };
    for (const Case& c : cases) {
      const double ts = time_ms(reps, [&] { (void)c.ser(); });
      const double tp = time_ms(reps, [&] { (void)c.par(); });
      char shape[32];
      std::snprintf(shape, sizeof shape, "%zux%zux%zu", s[0], s[1], s[2]);
      std::printf("%-10s %-16s %10.3f %10.3f %7.2fx %10.2g\n", c.name, shape, ts, tp, ts / tp,
                  max_diff(c.ser(), c.par()));
    }
  }

  // Episode evaluation on the default synthetic split with a fresh model.
  const DatasetSplit data = generate_synthetic(HierarchySpec{});
  ModelDims dims;
  dims.input = data.train.features.cols();
  dims.classes = data.hierarchy.num_coarse;
  const AncorModel model = init_model(dims, ModelVariant::Seq, 0);
  std::printf("\n%-16s %10s %14s\n", "eval mode", "episodes", "ms/episode");
  for (EvalMode mode : {EvalMode::FiveWay, EvalMode::AllWay, EvalMode::IntraClass, EvalMode::CoarseAllWay}) {
    EvalConfig ec;
    ec.mode = mode;
    ec.episodes = episodes;
    const auto t0 = std::chrono::steady_clock::now();
    (void)evaluate(model, data.test, data.hierarchy, ec);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-16s %10zu %14.3f\n", to_string(mode).c_str(), episodes, ms / episodes);
  }
}
