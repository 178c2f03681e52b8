#include "lipcde/cde.hpp"
#include "lipcde/model.hpp"
#include "lipcde/sim.hpp"
#include "lipcde/spectral.hpp"

#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>

using namespace lipcde;

namespace {

void BM_SpectralSplit(benchmark::State& state) {
  const auto n = state.range(0);
  nn::Rng rng(7);
  const ad::Matrix seq = nn::uniform_init(n, 4, 1.0, rng);
  spectral::FilterSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(spectral::spectral_split(seq, spec));
}
BENCHMARK(BM_SpectralSplit)->Arg(16)->Arg(32)->Arg(64);

void BM_CdeSolve(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  cde::CdeConfig cfg;
  nn::Rng rng(3);
  cde::LipschitzRnnField field(cfg.latent_dim, 3, cfg, rng);
  std::vector<double> times(static_cast<std::size_t>(n));
  std::iota(times.begin(), times.end(), 0.0);
  for (auto _ : state) {
    ad::Tape tape(false);
    std::vector<ad::Var> knots;
    for (int i = 0; i < n; ++i) knots.push_back(tape.constant(nn::uniform_init(3, 1, 1.0, rng)));
    cde::ControlPath path(times, knots, cfg.interp);
    const auto f = field.bind(tape);
    const auto u0 = tape.constant(ad::Matrix::Zero(cfg.latent_dim, 1));
    benchmark::DoNotOptimize(cde::cde_solve(tape, f, u0, path, times, cfg));
  }
}
BENCHMARK(BM_CdeSolve)->Arg(10)->Arg(30);

struct ModelFixture {
  sim::Dataset data;
  model::Standardizer standardizer;
  std::vector<model::PreparedPatient> patients;
  std::unique_ptr<model::LipCdeModel> model;

  ModelFixture() {
    sim::SimConfig s;
    s.n_patients = 8;
    s.t_min = 20;
    s.t_max = 30;
    data = sim::simulate_factual(s);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    standardizer = model::Standardizer::fit(data, idx);
    patients = model::prepare(data, idx, standardizer);
    model = std::make_unique<model::LipCdeModel>(model::Variant::kFull, data.front().covariates.cols(),
                                                 data.front().treatments.cols(), model::ModelConfig{}, 1);
  }
};

void BM_ModelPredict(benchmark::State& state) {
  ModelFixture fx;
  for (auto _ : state) benchmark::DoNotOptimize(fx.model->predict(fx.patients.front()));
}
BENCHMARK(BM_ModelPredict);

void BM_ModelForwardBackward(benchmark::State& state) {
  ModelFixture fx;
  for (auto _ : state) {
    ad::Tape tape;
    auto out = fx.model->forward(tape, fx.patients.front());
    auto loss = ad::sum(ad::square(ad::concat_rows(out.y_hat)));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_ModelForwardBackward);

}  // namespace

BENCHMARK_MAIN();
