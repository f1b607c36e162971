// Trains a small EENED model on synthetic spike/bump waveforms and scores the
// held-out rows. Usage: toy_classifier [seed]
#include <cstdlib>
#include <iostream>

#include "eened/eened.hpp"

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 7;

  eened::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.head_dim = 8;
  cfg.d_pwff = 32;
  cfg.classifier_hidden = 16;
  cfg.t_in = 48;
  cfg.seed = seed;

  eened::Dataset ds = eened::make_toy_dataset(128, cfg.t_in, seed);
  eened::split(ds, eened::SplitPlan::stratified(ds, 0.25), seed);
  eened::normalize(ds);

  eened::TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 16;
  tc.lr = 2e-3;
  tc.seed = seed;

  auto result = eened::train(eened::model_init<float>(cfg), ds, tc,
                             [](const eened::EpochLog& e) { std::cout << e.line() << '\n'; });
  const auto& m = result.best_metrics;
  std::cout << "best epoch " << result.best_epoch << ": accuracy " << m.accuracy() << ", tp=" << m.tp
            << " fp=" << m.fp << " tn=" << m.tn << " fn=" << m.fn << '\n';

  // Fresh segments go through the normalization stored with the model.
  eened::Dataset fresh = eened::make_toy_dataset(200, cfg.t_in, seed + 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const double p = eened::predict_raw(result.best, fresh.row(i));
    correct += (p >= 0.5) == (fresh.y[i] == 1);
    if (i < 4) std::cout << "fresh " << i << " (label " << int(fresh.y[i]) << "): p=" << p << '\n';
  }
  std::cout << "fresh accuracy " << static_cast<double>(correct) / static_cast<double>(fresh.size()) << '\n';
  return 0;
}
