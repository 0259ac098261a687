// Number-basis states where conditional peak separation and discord disagree.
#include <cstdio>

#include "cvdiscord/cvdiscord.hpp"

int main() {
  using namespace cvdiscord::fock;
  const auto zero = build_ce_zero_discord(1.0);
  const auto z = analyze_counterexample(zero);
  std::printf("zero discord: classical on B = %s, peak separation = %.4f\n",
              verify_classical_on_B(zero, plus_minus_basis(zero.dim_b())) ? "yes" : "no",
              z.peak_separation);

  const auto hidden = build_ce_hidden_discord();
  const auto h = analyze_counterexample(hidden);
  std::printf("hidden discord: peak separation = %.2e, variance ratio = %.3f, ||[rho+, rho-]|| = %.4f\n",
              h.peak_separation, h.variance_ratio, h.commutator);
}
