#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"
#include "aipw/gmm.hpp"
#include "aipw/model.hpp"
#include "aipw/moments.hpp"
#include "aipw/nuisance.hpp"

namespace aipw {

enum class Misspec { None, WrongYImputations, WrongDImputation, WrongPyOmitsD };

inline const char* misspec_name(Misspec m) {
  switch (m) {
    case Misspec::None: return "none";
    case Misspec::WrongYImputations: return "wrong-y-imputations";
    case Misspec::WrongDImputation: return "wrong-d-imputation";
    default: return "wrong-py-omits-d";
  }
}

// Simulation design: a binary endogenous treatment driven by a scalar
// instrument, jointly normal errors with correlation gamma, and missingness
// indicators driven by uniform latents from a Gaussian copula.  The outcome
// missingness propensity depends on the observed treatment, so the mechanism
// is sequentially ignorable but not ignorable given (z, x) alone.
struct SimScenario {
  int n = 1000;
  int replications = 500;
  double gamma = 0.5;  // corr(eps, u)
  double alpha_true = 0.3;
  double beta_true = 0.5;
  std::array<double, 3> pd_coef{0.2, 0.2, 0.3};      // intercept, x, z
  std::array<double, 4> py_coef{0.3, -0.05, 0.2, 0.3};  // intercept, x, z, observed d
  double rho_latents = 0.3;  // corr of the two missingness latents
  double rho_ry_eps = 0.0;   // corr of the outcome-missingness latent with eps
  Misspec misspec = Misspec::None;
  std::uint64_t seed = 987654321ULL;

  // Latent order: (eps, u, v_rd, v_ry).
  MatrixXd latent_correlation() const {
    MatrixXd c = MatrixXd::Identity(4, 4);
    c(0, 1) = c(1, 0) = gamma;
    c(2, 3) = c(3, 2) = rho_latents;
    c(0, 3) = c(3, 0) = rho_ry_eps;
    return c;
  }
};

inline void validate_scenario(const SimScenario& s) {
  std::string bad;
  if (s.n < 10) bad += " n";
  if (s.replications < 1) bad += " replications";
  if (std::abs(s.gamma) >= 1.0) bad += " gamma";
  if (std::abs(s.rho_latents) >= 1.0) bad += " rho_latents";
  if (std::abs(s.rho_ry_eps) >= 1.0) bad += " rho_ry_eps";
  // Propensities must stay inside (0,1) over the supports x in [0,1],
  // z in {0,1}, observed-treatment term in {0,1}.
  for (double x : {0.0, 1.0})
    for (double z : {0.0, 1.0}) {
      const double pd = s.pd_coef[0] + s.pd_coef[1] * x + s.pd_coef[2] * z;
      if (pd <= 0.0 || pd >= 1.0) bad += " pd_coef";
      for (double dd : {0.0, 1.0}) {
        const double py = s.py_coef[0] + s.py_coef[1] * x + s.py_coef[2] * z + s.py_coef[3] * dd;
        if (py <= 0.0 || py >= 1.0) bad += " py_coef";
      }
    }
  Eigen::LLT<MatrixXd> llt(s.latent_correlation());
  if (llt.info() != Eigen::Success) bad += " latent-correlations(not positive definite)";
  if (!bad.empty()) throw ConfigError("scenario validation failed; offending fields:" + bad);
}

// One draw of the design.  Deterministic in (seed, replication_index).
inline Dataset generate(const SimScenario& s, int replication_index) {
  validate_scenario(s);
  Rng rng = Rng::substream(s.seed, static_cast<std::uint64_t>(replication_index));
  const MatrixXd L = s.latent_correlation().llt().matrixL();

  MatrixXd zmat(s.n, 2), xmat(s.n, 1);
  std::vector<std::optional<double>> d(static_cast<std::size_t>(s.n));
  std::vector<std::optional<double>> y(static_cast<std::size_t>(s.n));
  VectorXd raw(4), mixed(4);
  for (int i = 0; i < s.n; ++i) {
    const double x = rng.uniform();
    const double z = rng.uniform() < 0.5 ? 0.0 : 1.0;
    for (int k = 0; k < 4; ++k) raw[k] = rng.normal();
    mixed = L * raw;
    const double eps = mixed[0];
    const double u = mixed[1];
    const double u_rd = normal_cdf(mixed[2]);
    const double u_ry = normal_cdf(mixed[3]);

    const double di = 0.1 + 0.3 * z + 0.1 * x >= normal_cdf(u) ? 1.0 : 0.0;
    const double yi = s.alpha_true * di + s.beta_true * x + eps;
    const double pd = s.pd_coef[0] + s.pd_coef[1] * x + s.pd_coef[2] * z;
    const int rd = pd >= u_rd ? 1 : 0;
    const double py =
        s.py_coef[0] + s.py_coef[1] * x + s.py_coef[2] * z + s.py_coef[3] * (rd == 1 ? di : 0.0);
    const int ry = py >= u_ry ? 1 : 0;

    zmat(i, 0) = z;
    zmat(i, 1) = x;
    xmat(i, 0) = x;
    if (rd == 1) d[static_cast<std::size_t>(i)] = di;
    if (ry == 1) y[static_cast<std::size_t>(i)] = yi;
  }
  return Dataset(std::move(zmat), std::move(xmat), std::move(d), std::move(y));
}

// Swaps the stated first-stage objects for deliberately wrong ones while the
// rest of the context is untouched.
inline MomentContext inject_misspecification(const MomentContext& ctx, Misspec misspec,
                                             const SieveSpec& refit_spec = SieveSpec{}) {
  MomentContext out = ctx;
  if (misspec == Misspec::None) return out;
  const Dataset& data = *ctx.data;

  if (misspec == Misspec::WrongYImputations) {
    double sum_m3 = 0.0, sum_m1 = 0.0;
    int n_m3 = 0, n_m1 = 0;
    for (int i = 0; i < data.n(); ++i) {
      if (data.pattern(i) == MissingPattern::M3) {
        sum_m3 += data.y(i);
        ++n_m3;
      } else if (data.pattern(i) == MissingPattern::M1) {
        sum_m1 += data.y(i);
        ++n_m1;
      }
    }
    const double mean_m3 = n_m3 > 0 ? sum_m3 / n_m3 : 0.0;
    const double mean_m1 = n_m1 > 0 ? sum_m1 / n_m1 : 0.0;
    out.e_y_zx.setConstant(mean_m3);
    out.e_y_dzx_avg.setConstant(mean_m1);
    for (int i = 0; i < data.n(); ++i)
      if (data.r_d(i) == 1) out.e_y_dzx[i] = mean_m1;
    return out;
  }

  if (misspec == Misspec::WrongDImputation) {
    double sum_d = 0.0;
    int n1 = 0;
    for (int i = 0; i < data.n(); ++i)
      if (data.r_d(i) == 1) {
        sum_d += data.d(i);
        ++n1;
      }
    const double mean_d = n1 > 0 ? sum_d / n1 : 0.0;
    out.e_d_zx.setConstant(mean_d);
    if (out.d_probs.cols() > 0) {
      for (int v = 0; v < out.d_probs.cols(); ++v) {
        double share = 0.0;
        int cnt = 0;
        for (int i = 0; i < data.n(); ++i)
          if (data.r_d(i) == 1) {
            ++cnt;
            if (data.d(i) == out.d_support[static_cast<std::size_t>(v)]) share += 1.0;
          }
        out.d_probs.col(v).setConstant(cnt > 0 ? share / cnt : 1.0 / out.d_probs.cols());
      }
    }
    return out;
  }

  // WrongPyOmitsD: refit the outcome-observation propensity on (z, x) only,
  // discarding the treatment regressor.
  const auto zx = detail::pooled_zx(data);
  std::vector<int> rows1;
  for (int i = 0; i < data.n(); ++i)
    if (data.r_d(i) == 1) rows1.push_back(i);
  VectorXd target(static_cast<Eigen::Index>(rows1.size()));
  for (std::size_t i = 0; i < rows1.size(); ++i)
    target[static_cast<Eigen::Index>(i)] = data.r_y(rows1[i]);
  const SievePredictor fit =
      fit_least_squares(target, detail::select_rows(zx.values, rows1), refit_spec);
  VectorXd pred = fit.predict(zx.values);
  for (int i = 0; i < data.n(); ++i) out.p_y1[i] = std::clamp(pred[i], 0.01, 1.0);
  return out;
}

struct EstimatorSummary {
  std::string name;
  double mean_alpha = 0.0, bias_alpha = 0.0, rmse_alpha = 0.0;
  double mean_beta = 0.0, bias_beta = 0.0, rmse_beta = 0.0;
  std::vector<double> alpha_draws, beta_draws, alpha_ses, beta_ses;
};

struct SimReport {
  SimScenario scenario;
  int replications_used = 0;
  int failures = 0;
  bool failure_flagged = false;
  std::vector<EstimatorSummary> estimators;

  std::string to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "Monte Carlo  n=" << scenario.n << "  reps=" << scenario.replications
       << "  gamma=" << scenario.gamma << "  misspec=" << misspec_name(scenario.misspec)
       << "  seed=" << scenario.seed << "\n";
    os << "rho_latents=" << scenario.rho_latents << "  rho_ry_eps=" << scenario.rho_ry_eps
       << "  alpha=" << scenario.alpha_true << "  beta=" << scenario.beta_true << "\n";
    os << "                   alpha-hat   MeanBias       RMSE   beta-hat   MeanBias       RMSE\n";
    for (const auto& e : estimators) {
      os << e.name;
      for (std::size_t k = e.name.size(); k < 16; ++k) os << ' ';
      auto cell = [&os](double v) {
        std::ostringstream c;
        c.setf(std::ios::fixed);
        c.precision(4);
        c << v;
        std::string s = c.str();
        for (std::size_t k = s.size(); k < 11; ++k) os << ' ';
        os << s;
      };
      cell(e.mean_alpha);
      cell(e.bias_alpha);
      cell(e.rmse_alpha);
      cell(e.mean_beta);
      cell(e.bias_beta);
      cell(e.rmse_beta);
      os << "\n";
    }
    os << "replications used: " << replications_used << "/" << scenario.replications
       << "  failures: " << failures;
    if (failure_flagged) os << "  [FLAGGED: more than 5% of replications failed]";
    os << "\n";
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json scen{{"n", scenario.n},
                        {"replications", scenario.replications},
                        {"gamma", scenario.gamma},
                        {"alpha_true", scenario.alpha_true},
                        {"beta_true", scenario.beta_true},
                        {"pd_coef", scenario.pd_coef},
                        {"py_coef", scenario.py_coef},
                        {"rho_latents", scenario.rho_latents},
                        {"rho_ry_eps", scenario.rho_ry_eps},
                        {"misspec", misspec_name(scenario.misspec)},
                        {"seed", scenario.seed}};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : estimators) {
      rows.push_back({{"name", e.name},
                      {"alpha", {{"mean", e.mean_alpha}, {"bias", e.bias_alpha}, {"rmse", e.rmse_alpha}}},
                      {"beta", {{"mean", e.mean_beta}, {"bias", e.bias_beta}, {"rmse", e.rmse_beta}}}});
    }
    return nlohmann::json{{"scenario", scen},
                          {"replications_used", replications_used},
                          {"failures", failures},
                          {"failure_flagged", failure_flagged},
                          {"estimators", rows}};
  }
};

namespace detail {

inline SieveSpec simulation_sieve() {
  SieveSpec spec;
  spec.basis = SieveBasis::Power;
  spec.degree = 2;
  spec.include_interactions = true;
  return spec;
}

}  // namespace detail

// Runs the full replication study: draw, fit the first stage under the
// sequential assumption, inject the scenario's misspecification, and solve
// the complete-case, inverse-weighted, and augmented estimators.
inline SimReport run_scenario(const SimScenario& scenario, int threads = 0) {
  validate_scenario(scenario);
  const int reps = scenario.replications;
  const ModelSpec model = ModelSpec::linear(1);
  const SieveSpec sieve = detail::simulation_sieve();

  constexpr int kEstimators = 3;
  const std::array<MomentKind, kEstimators> kinds{MomentKind::CC, MomentKind::IPW,
                                                  MomentKind::AIPW};
  const std::array<const char*, kEstimators> names{"Complete Case", "IPW", "AIPW"};

  std::vector<std::array<VectorXd, kEstimators>> draws(static_cast<std::size_t>(reps));
  std::vector<std::array<VectorXd, kEstimators>> ses(static_cast<std::size_t>(reps));
  std::vector<char> failed(static_cast<std::size_t>(reps), 0);

  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      try {
        const Dataset data = generate(scenario, static_cast<int>(r));
        MechanismOptions mopts;
        const MissingMechanism mech =
            fit_mechanism(data, Assumption::SMAR, sieve, mopts, nullptr);
        ImputationOptions iopts;
        iopts.d_support = {0.0, 1.0};
        const NuisanceFit nuis = fit_imputations(data, Assumption::SMAR, sieve, iopts, nullptr);
        MomentContext ctx = make_context(data, mech, nuis, model);
        ctx = inject_misspecification(ctx, scenario.misspec, sieve);
        for (int e = 0; e < kEstimators; ++e) {
          GmmConfig config;
          config.kind = kinds[static_cast<std::size_t>(e)];
          config.weight_mode = WeightMode::ZzInverse;
          const GmmResult res = solve(ctx, config);
          draws[r][static_cast<std::size_t>(e)] = res.beta_hat;
          ses[r][static_cast<std::size_t>(e)] = res.std_errors;
        }
      } catch (const std::exception&) {
        failed[r] = 1;
      }
    }
  });

  SimReport report;
  report.scenario = scenario;
  for (int e = 0; e < kEstimators; ++e) {
    EstimatorSummary s;
    s.name = names[static_cast<std::size_t>(e)];
    report.estimators.push_back(s);
  }
  for (int r = 0; r < reps; ++r) {
    if (failed[static_cast<std::size_t>(r)]) {
      ++report.failures;
      continue;
    }
    ++report.replications_used;
    for (int e = 0; e < kEstimators; ++e) {
      auto& s = report.estimators[static_cast<std::size_t>(e)];
      s.alpha_draws.push_back(draws[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][0]);
      s.beta_draws.push_back(draws[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][1]);
      s.alpha_ses.push_back(ses[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][0]);
      s.beta_ses.push_back(ses[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][1]);
    }
  }
  report.failure_flagged = report.failures > 0.05 * reps;

  for (auto& s : report.estimators) {
    const auto n = static_cast<double>(s.alpha_draws.size());
    if (n == 0) continue;
    auto summarize = [n](const std::vector<double>& v, double truth, double* mean, double* bias,
                         double* rmse) {
      double sum = 0.0, sq = 0.0;
      for (double t : v) {
        sum += t;
        sq += (t - truth) * (t - truth);
      }
      *mean = sum / n;
      *bias = *mean - truth;
      *rmse = std::sqrt(sq / n);
    };
    summarize(s.alpha_draws, report.scenario.alpha_true, &s.mean_alpha, &s.bias_alpha,
              &s.rmse_alpha);
    summarize(s.beta_draws, report.scenario.beta_true, &s.mean_beta, &s.bias_beta, &s.rmse_beta);
  }
  return report;
}

}  // namespace aipw
