// swid: fit, simulate, predict and evaluate switching systems from the shell.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "swid/swid.hpp"

namespace {

using namespace swid;

struct PredictArgs {
  std::string mode = "recursive";
  int warmup = 1;
  int samples = 0;
  std::uint64_t seed = 0;
  double trim = 0.01;
};

void add_predict_flags(CLI::App* cmd, PredictArgs& a) {
  cmd->add_option("--mode", a.mode, "recursive | open-loop")->check(CLI::IsMember({"recursive", "open-loop"}));
  cmd->add_option("--warmup", a.warmup, "rows before the first predicted row")->check(CLI::PositiveNumber);
  cmd->add_option("--samples", a.samples, "draws per time (default 20 recursive, 500 open-loop)");
  cmd->add_option("--seed", a.seed, "sampling seed");
  cmd->add_option("--trim", a.trim, "trim fraction of the open-loop mean");
}

Prediction run_prediction(const ModelFile& mf, const Trajectory& traj, const PredictArgs& a, bool quantiles) {
  if (a.warmup > traj.horizon()) throw ConfigError("--warmup leaves no rows to predict");
  PredictionConfig pc;
  pc.mode = a.mode == "open-loop" ? PredictMode::OpenLoop : PredictMode::RecursiveOneStep;
  pc.n_samples = a.samples;
  pc.seed = a.seed;
  pc.trim_fraction = a.trim;
  pc.quantiles = quantiles;
  const IndexRange r{a.warmup, traj.horizon()};
  if (pc.mode == PredictMode::RecursiveOneStep) return recursive_one_step_predict(mf.model, mf.alpha0, traj, r, pc);
  const Vector dist = a.warmup >= 2 ? warmup_mode_distribution(mf.model, mf.alpha0, traj, a.warmup - 1) : mf.alpha0;
  return open_loop_predict(mf.model, dist, traj, r, pc);
}

Trajectory load_data(const std::string& path) {
  Trajectory t = load_csv(path);
  t.validate();
  return t;
}

std::string report_path_for(const std::string& out) {
  const std::string ext = ".json";
  if (out.size() > ext.size() && out.compare(out.size() - ext.size(), ext.size(), ext) == 0)
    return out.substr(0, out.size() - ext.size()) + ".report.json";
  return out + ".report.json";
}

int cmd_fit(const std::string& data_path, const std::string& config_path, const std::string& out,
            std::string report_path, bool quiet) {
  const FitConfig cfg = load_fit_config(config_path);
  const Trajectory traj = load_data(data_path);
  const int rows = traj.horizon() + 1;
  const int n_train = cfg.n_train > 0 ? cfg.n_train : rows;
  if (n_train + cfg.n_validation > rows)
    throw ConfigError("config: field 'split' asks for " + std::to_string(n_train + cfg.n_validation) +
                      " rows, data has " + std::to_string(rows));
  const DatasetSplit split = DatasetSplit::consecutive(n_train, cfg.n_validation, 0);
  const Trajectory train = scored_slice(traj, cfg.spec.cfg, split.train);
  std::optional<Trajectory> validation;
  if (split.validation) validation = scored_slice(traj, cfg.spec.cfg, *split.validation);

  std::optional<FitReport> best;
  Regularizer best_reg;
  double best_score = std::numeric_limits<double>::infinity();
  for (const Regularizer& reg : cfg.grid) {
    FitReport rep = multistart_fit(cfg.spec, train, reg, cfg.options, validation);
    const double score = validation ? nll(rep.model, *validation) : rep.final_reg_nll();
    if (!quiet && cfg.grid.size() > 1)
      std::cout << "grid gamma=(" << reg.gamma1 << ", " << reg.gamma2 << ", " << reg.gamma3
                << ") validation nll " << score << '\n';
    if (!best || score < best_score) {
      best_score = score;
      best = std::move(rep);
      best_reg = reg;
    }
  }
  if (!quiet) {
    std::cout << "iter  reg_nll                 grad_norm\n" << std::setprecision(12);
    for (std::size_t k = 0; k < best->iterations.size(); ++k)
      std::cout << std::setw(4) << k << "  " << std::setw(22) << best->iterations[k].reg_nll << "  "
                << best->iterations[k].grad_norm << '\n';
    std::cout << "stop: " << stop_reason_name(best->stop) << ", best restart " << best->best_restart << '\n';
  }
  ModelFile mf{best->model, best->alpha0, best_reg, cfg.options.seed, trajectory_hash(traj)};
  save_model(mf, out);
  if (report_path.empty()) report_path = report_path_for(out);
  Json rep = report_to_json(*best);
  rep["regularizer"] = {{"gamma1", best_reg.gamma1}, {"gamma2", best_reg.gamma2}, {"gamma3", best_reg.gamma3}};
  std::ofstream r(report_path);
  if (!r) throw ConfigError("cannot write report '" + report_path + "'");
  r << rep.dump(2) << '\n';
  return 0;
}

int cmd_simulate(const std::string& model_path, int horizon, std::uint64_t seed, const std::string& out,
                 const std::string& inputs_path) {
  const ModelFile mf = load_model(model_path);
  std::optional<Matrix> inputs;
  if (mf.model.cfg.t_u > 0) {
    if (inputs_path.empty()) throw ConfigError("--inputs is required: the model uses exogenous inputs");
    const Trajectory in = load_data(inputs_path);
    if (!in.u || in.n_u() != mf.model.n_u) throw DataError(inputs_path + ": expected " + std::to_string(mf.model.n_u) + " input columns");
    if (in.u->rows() < horizon + 1) throw DataError(inputs_path + ": needs at least " + std::to_string(horizon + 1) + " rows");
    inputs = in.u->topRows(horizon + 1);
  }
  const Simulation sim = simulate(mf.model, horizon, mf.alpha0, seed, {}, inputs);
  save_csv(sim.traj, out);
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path, const PredictArgs& a,
                const std::string& out) {
  const ModelFile mf = load_model(model_path);
  const Trajectory traj = load_data(data_path);
  const bool open_loop = a.mode == "open-loop";
  const Prediction p = run_prediction(mf, traj, a, open_loop);
  std::ofstream os(out);
  if (!os) throw ConfigError("cannot write '" + out + "'");
  os << "t";
  for (int c = 1; c <= mf.model.n_y; ++c) os << ",y" << c << "_hat";
  if (p.q25)
    for (int c = 1; c <= mf.model.n_y; ++c) os << ",y" << c << "_q25,y" << c << "_q75";
  os << '\n' << std::setprecision(17);
  for (Eigen::Index r = 0; r < p.mean.rows(); ++r) {
    os << a.warmup + r;
    for (Eigen::Index c = 0; c < p.mean.cols(); ++c) os << ',' << p.mean(r, c);
    if (p.q25)
      for (Eigen::Index c = 0; c < p.mean.cols(); ++c) os << ',' << (*p.q25)(r, c) << ',' << (*p.q75)(r, c);
    os << '\n';
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& metric,
             const PredictArgs& a) {
  const ModelFile mf = load_model(model_path);
  const Trajectory traj = load_data(data_path);
  const Prediction p = run_prediction(mf, traj, a, false);
  const Matrix truth = traj.y.bottomRows(p.mean.rows());
  Json out = {{"metric", metric}, {"mode", a.mode}, {"n", truth.rows()}};
  if (metric == "r2") {
    out["value"] = r2_score(truth, p.mean);
    out["per_component"] = detail::vector_to_json(r2_per_component(truth, p.mean));
  } else {
    out["value"] = rmse(truth, p.mean);
    Vector per(truth.cols());
    for (Eigen::Index c = 0; c < truth.cols(); ++c) per[c] = rmse(truth.col(c), p.mean.col(c));
    out["per_component"] = detail::vector_to_json(per);
  }
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of switching systems"};
  app.require_subcommand(1);

  std::string data, config, out, report, model, inputs, metric = "r2";
  int horizon = 0;
  std::uint64_t seed = 0;
  bool quiet = false;
  PredictArgs pa;

  auto* fit = app.add_subcommand("fit", "estimate a model from a trajectory CSV");
  fit->add_option("--data", data, "trajectory CSV")->required();
  fit->add_option("--config", config, "fit configuration JSON")->required();
  fit->add_option("--out", out, "model file to write")->required();
  fit->add_option("--report", report, "fit report JSON (default: <out>.report.json)");
  fit->add_flag("--quiet", quiet, "suppress the iteration table");

  auto* sim = app.add_subcommand("simulate", "sample a trajectory from a model");
  sim->add_option("--model", model, "model file")->required();
  sim->add_option("--horizon", horizon, "number of transitions T")->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed, "random seed");
  sim->add_option("--out", out, "trajectory CSV to write")->required();
  sim->add_option("--inputs", inputs, "CSV whose u columns drive the model");

  auto* pred = app.add_subcommand("predict", "predict the rows after the warm-up");
  pred->add_option("--model", model, "model file")->required();
  pred->add_option("--data", data, "trajectory CSV")->required();
  pred->add_option("--out", out, "prediction CSV to write")->required();
  add_predict_flags(pred, pa);

  auto* ev = app.add_subcommand("eval", "score predictions of the rows after the warm-up");
  ev->add_option("--model", model, "model file")->required();
  ev->add_option("--data", data, "trajectory CSV")->required();
  ev->add_option("--metric", metric, "r2 | rmse")->check(CLI::IsMember({"r2", "rmse"}));
  add_predict_flags(ev, pa);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fit) return cmd_fit(data, config, out, report, quiet);
    if (*sim) return cmd_simulate(model, horizon, seed, out, inputs);
    if (*pred) return cmd_predict(model, data, pa, out);
    if (*ev) return cmd_eval(model, data, metric, pa);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
