// Serial reference vs OpenMP kernels: feature extraction, example
// preparation and batch gradients. Also confirms the outputs agree.
//
//   crossalign_bench [--reps N] [--threads T]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>

#include <omp.h>

#include "crossalign/train.hpp"

using namespace crossalign;
using Clock = std::chrono::steady_clock;

namespace {

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-28s %10.4f %10.4f %8.2fx  %s\n", name, serial, parallel, serial / parallel,
              same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 3;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (!std::strcmp(argv[i], "--reps")) reps = std::stoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--threads")) omp_set_num_threads(std::stoi(argv[i + 1]));
  }
  std::printf("threads %d, best of %d\n", omp_get_max_threads(), reps);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial s", "openmp s", "speedup");

  Rng rng(1);
  dsp::AudioBuffer audio;
  for (int i = 0; i < 16000 * 30; ++i) audio.samples.push_back(0.3 * rng.normal());
  dsp::FeatureSequence a, b;
  const double ts = best_of(reps, [&] { a = dsp::extract_features_serial(audio); });
  const double tp = best_of(reps, [&] { b = dsp::extract_features(audio); });
  row("extract_features (30 s)", ts, tp, a.values == b.values);

  data::SyntheticSpec spec;
  spec.n_utterances = 64;
  const auto table = data::synthetic_embeddings(spec);
  const auto utts = data::generate_utterances(spec);
  std::vector<train::Example> ex_s, ex_p;
  const double ps = best_of(reps, [&] { ex_s = train::prepare_synthetic(utts, table, false); });
  const double pp = best_of(reps, [&] { ex_p = train::prepare_synthetic(utts, table, true); });
  bool same = ex_s.size() == ex_p.size();
  for (std::size_t i = 0; same && i < ex_s.size(); ++i) same = ex_s[i].features == ex_p[i].features;
  row("prepare_synthetic (64 utt)", ps, pp, same);

  for (bool f64 : {false, true}) {
    train::RunConfig run;
    run.double_precision = f64;
    std::vector<std::size_t> batch(32);
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
    auto measure = [&](auto tag) {
      using T = decltype(tag);
      train::Session<T> session(run, ex_s);
      auto g1 = session.model().params().make_grad_buffer();
      auto g2 = session.model().params().make_grad_buffer();
      const double s = best_of(reps, [&] {
        for (auto& g : g1) g.zero();
        session.batch_gradients_serial(batch, g1);
      });
      const double p = best_of(reps, [&] {
        for (auto& g : g2) g.zero();
        session.batch_gradients(batch, g2);
      });
      bool eq = true;
      for (std::size_t k = 0; k < g1.size(); ++k) eq &= g1[k] == g2[k];
      row(f64 ? "batch_gradients f64 (B=32)" : "batch_gradients f32 (B=32)", s, p, eq);
    };
    if (f64) measure(double{});
    else measure(float{});
  }
  return 0;
}
