// Bias of the naive estimator divided by alpha, for a few (beta, phi) pairs.

#include <cstdio>

#include "lkate/bias.hpp"

using namespace lkate;

int main() {
  std::printf("%6s %6s %10s %10s %10s\n", "beta", "phi", "I", "II", "III");
  for (double beta : {0.0, 1.0, 2.0, 3.0}) {
    for (double phi : {-1.0, 0.0, 1.0}) {
      const BiasModelSpec s = BiasModelSpec::figure_family(beta, phi, 1.0);
      std::printf("%6.1f %6.1f %10.4f %10.4f %10.4f\n", beta, phi, bias_scenario_I(s), bias_scenario_II(s),
                  bias_scenario_III(s));
    }
  }
  return 0;
}
