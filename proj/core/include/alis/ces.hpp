#pragma once

#include <string>

#include "alis/emulator.hpp"
#include "alis/spaces.hpp"

namespace alis {

/// Calibrate - encode - emulate - sample configuration. Calibration runs EKI
/// in the full spaces with stops on a regular alpha grid; the reduced space
/// is built from those samples; the emulator trains on the encoded pairs of
/// one stop; sampling runs adaptive RWM on the emulated reduced posterior.
struct CesConfig {
  int ensemble_size = 200;
  double alpha_step = 0.1;
  EkiSchedule eki_schedule{EkiSchedule::Kind::Uniform, 10, 1.0};
  SpaceBuildConfig reduction;
  double train_alpha = 0.5;
  RffOptions rff;
  RwmOptions mcmc{2000, -1, 0.234, 0.5};
  int chain_thin = 1;
};

struct CesResult {
  ReducedSpace space;  // original coordinates
  RffModel emulator;
  McmcChain chain;   // reduced coordinates, post burn-in
  Mat full_samples;  // d_x x n, thinned and reconstructed
  TemperedEnsemble calibration;
  std::string provenance_json;
};

CesResult ces_run(const InverseProblem& p, const CesConfig& config, Rng& rng);

}  // namespace alis
