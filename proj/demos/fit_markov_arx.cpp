// Fits Gaussian and Student-t jump Markov ARX models to a simulated
// three-mode system and reports recursive one-step R^2 on held-out data.
//
//   demo_fit_markov_arx [outlier probability] [seed]

#include <cstdlib>
#include <iostream>

#include "swid/swid.hpp"

using namespace swid;

int main(int argc, char** argv) {
  const double p = argc > 1 ? std::atof(argv[1]) : 0.0;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 11;

  const Benchmark b = gen_markov_arx(10000, seed);
  const OutlierResult noisy = inject_outliers(b.traj, p, seed + 1, IndexRange{0, 5000});
  std::cout << "perturbed " << noisy.perturbed << " training rows\n";

  const RegressorConfig cfg{2, 2, true};
  const Trajectory train = slice(noisy.traj, cfg, {0, 5000});
  const Trajectory val = slice(noisy.traj, cfg, {5000, 7500});
  for (const FamilyKind& fam : {FamilyKind::gaussian(), FamilyKind::student_t(4.0)}) {
    FitOptions opts;
    opts.n_restarts = 5;
    const FitReport rep = multistart_fit({SwitchStructure::Full, fam, 3, cfg}, train, {}, opts, val);
    const Prediction pred = recursive_one_step_predict(rep.model, rep.alpha0, noisy.traj, {7501, 10000}, {});
    std::cout << family_name(fam.tag) << ": " << rep.m_steps() << " iterations (" << stop_reason_name(rep.stop)
              << "), test R^2 " << r2_score(b.traj.y.middleRows(7501, 2500), pred.mean) << '\n';
  }
}
