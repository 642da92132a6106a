// Identifies a two-region piecewise affine system and simulates it open loop
// on the test inputs. Writes truth, trimmed mean and the 25-75% band as CSV.
//
//   demo_pwa_open_loop [out.csv]

#include <fstream>
#include <iostream>

#include "swid/swid.hpp"

using namespace swid;

int main(int argc, char** argv) {
  const Benchmark b = gen_pwa(10000, 13);
  const RegressorConfig cfg{2, 2, true};
  const Trajectory train = slice(b.traj, cfg, {0, 5000});
  const Trajectory val = slice(b.traj, cfg, {5000, 7500});

  FitOptions opts;
  opts.n_restarts = 5;
  const FitReport rep = multistart_fit({SwitchStructure::Full, FamilyKind::student_t(4.0), 2, cfg}, train, {}, opts, val);

  PredictionConfig pc;
  pc.mode = PredictMode::OpenLoop;
  pc.quantiles = true;
  const Vector start = warmup_mode_distribution(rep.model, rep.alpha0, b.traj, 7500);
  const Prediction pred = open_loop_predict(rep.model, start, b.traj, {7501, 10000}, pc);
  const Matrix truth = b.traj.y.middleRows(7501, 2500);
  std::cout << "open-loop R^2 " << r2_score(truth, pred.mean) << ", RMSE " << rmse(truth, pred.mean) << '\n';

  if (argc > 1) {
    std::ofstream out(argv[1]);
    out << "t,y,y_hat,q25,q75\n";
    for (Eigen::Index h = 0; h < truth.rows(); ++h)
      out << 7501 + h << ',' << truth(h, 0) << ',' << pred.mean(h, 0) << ',' << (*pred.q25)(h, 0) << ','
          << (*pred.q75)(h, 0) << '\n';
  }
}
