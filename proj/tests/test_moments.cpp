#include <catch2/catch_amalgamated.hpp>

#include "aipw/moments.hpp"
#include "test_helpers.hpp"
#include "toyworld.hpp"

using namespace aipw;
using testutil::make_dataset;

namespace {

// Hand-assembled one-row context: scalar instrument, explicit nuisances.
struct HandObs {
  double z = 1.0, x = 0.0;
  std::optional<double> d, y;
  double p_d = 0.5, p_y1 = 0.5, p_y0 = 0.5;
  double ey = 0.0, eyd = 0.0, pr_d1 = 0.5;
};

struct HandWorld {
  std::optional<Dataset> data;
  ModelSpec model = ModelSpec::linear(1);
  MomentContext ctx;

  explicit HandWorld(const std::vector<HandObs>& obs, Assumption a = Assumption::SMAR) {
    const auto n = static_cast<Eigen::Index>(obs.size());
    MatrixXd zm(n, 2), xm(n, 1);
    std::vector<std::optional<double>> d, y;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = obs[static_cast<std::size_t>(i)];
      zm(i, 0) = o.z;
      zm(i, 1) = o.x;
      xm(i, 0) = o.x;
      d.push_back(o.d);
      y.push_back(o.y);
    }
    data.emplace(std::move(zm), std::move(xm), std::move(d), std::move(y));
    ctx.data = &*data;
    ctx.model = &model;
    ctx.assumption = a;
    ctx.p_d.resize(n);
    ctx.p_y1.resize(n);
    ctx.p_y0.resize(n);
    ctx.e_y_zx.resize(n);
    ctx.e_y_dzx.resize(n);
    ctx.e_y_dzx_avg.resize(n);
    ctx.e_d_zx.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = obs[static_cast<std::size_t>(i)];
      ctx.p_d[i] = o.p_d;
      ctx.p_y1[i] = o.p_y1;
      ctx.p_y0[i] = o.p_y0;
      ctx.e_y_zx[i] = o.ey;
      ctx.e_y_dzx[i] = o.d ? o.eyd : std::numeric_limits<double>::quiet_NaN();
      ctx.e_y_dzx_avg[i] = o.eyd;
      ctx.e_d_zx[i] = o.pr_d1;
    }
  }
};

}  // namespace

TEST_CASE("augmentation weights and the hand-evaluated value", "[moments]") {
  // r_d = 1, r_y = 0, z = 1, p_d = 0.5, p_y1 = 0.5, p_11 = 0.25.
  HandObs o;
  o.d = 1.0;
  o.y = std::nullopt;
  o.p_d = 0.5;
  o.p_y1 = 0.5;
  o.eyd = 1.0;
  o.ey = 0.9;
  // Choose beta and the treatment distribution so g = 0.6 and E[g|z,x] = 0.55:
  // beta = (0.6, 0), Pr[D=1|z,x] implies eg = 0.6 * pr_d1.
  o.pr_d1 = 0.55 / 0.6;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.6, 0.0;
  const VectorXd phi = augmentation_phi(w.ctx, 0, beta);
  // weights (0, 2, 1): 2 * ((1.0 - 0.6) - (0.9 - 0.55)) + 1 * (0.9 - 0.55) = 0.45
  CHECK(phi[0] == Catch::Approx(0.45).margin(1e-12));
}

TEST_CASE("augmentation vanishes with no missingness and unit propensities", "[moments]") {
  HandObs o;
  o.d = 1.0;
  o.y = 0.8;
  o.p_d = 1.0;
  o.p_y1 = 1.0;
  o.ey = 0.4;
  o.eyd = 0.7;
  o.pr_d1 = 0.3;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.3, 0.5;
  CHECK(augmentation_phi(w.ctx, 0, beta).norm() == 0.0);
  // Degeneracy chain: every moment kind equals the full-data moment.
  const VectorXd full = full_moment(*w.data, 0, w.model, beta);
  for (MomentKind k : {MomentKind::CC, MomentKind::IPW, MomentKind::AIPW,
                       MomentKind::AIPW_GENERAL})
    CHECK((moment(w.ctx, 0, beta, k) - full).norm() == 0.0);
}

TEST_CASE("fully missing rows keep only the third component", "[moments]") {
  HandObs o;
  o.d = std::nullopt;
  o.y = std::nullopt;
  o.ey = 0.9;
  o.pr_d1 = 0.5;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.6, 0.0;
  const double eg = 0.6 * 0.5;
  const VectorXd phi = augmentation_phi(w.ctx, 0, beta);
  CHECK(phi[0] == Catch::Approx(0.9 - eg).margin(1e-12));
  CHECK((aipw_moment(w.ctx, 0, beta) - phi).norm() == 0.0);
}

TEST_CASE("ipw scales the full moment by the joint observation propensity", "[moments]") {
  HandObs o;
  o.d = 1.0;
  o.y = 0.8;
  o.p_d = 0.5;
  o.p_y1 = 0.5;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.3, 0.5;
  const VectorXd full = full_moment(*w.data, 0, w.model, beta);
  CHECK((ipw_moment(w.ctx, 0, beta) - 4.0 * full).norm() < 1e-14);

  HandObs off = o;
  off.y = std::nullopt;
  HandWorld w2({off});
  CHECK(ipw_moment(w2.ctx, 0, beta).norm() == 0.0);
  CHECK(cc_moment(w2.ctx, 0, beta).norm() == 0.0);
}

TEST_CASE("smar correction hand value and degeneracies", "[moments]") {
  HandObs o;
  o.d = 1.0;
  o.y = 0.8;
  o.p_d = 0.5;
  o.p_y1 = 0.5;  // p_11 = 0.25
  o.eyd = 1.1;
  o.ey = 0.9;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.3, 0.5;
  const VectorXd corr = smar_correction(w.ctx, 0, beta);
  // (1 - 0.5) * (4 - 1) * 0.2 = 0.3
  CHECK(corr[0] == Catch::Approx(0.3).margin(1e-12));

  HandObs certain = o;
  certain.p_d = 1.0;
  HandWorld w2({certain});
  CHECK(smar_correction(w2.ctx, 0, beta).norm() == 0.0);

  HandObs indep = o;
  indep.eyd = indep.ey;
  HandWorld w3({indep});
  CHECK(smar_correction(w3.ctx, 0, beta).norm() == 0.0);

  HandWorld mar({o}, Assumption::MAR);
  CHECK_THROWS_AS(smar_correction(mar.ctx, 0, beta), ConfigError);
}

TEST_CASE("general moment scales the first component by p01", "[moments]") {
  HandObs o;
  o.d = 1.0;
  o.y = 0.8;
  o.p_d = 0.4;
  o.p_y1 = 0.5;
  o.p_y0 = 0.7;
  o.ey = 0.3;
  o.eyd = 0.6;
  o.pr_d1 = 0.45;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.25, 0.1;
  const double p01 = (1.0 - 0.4) * 0.7;
  const VectorXd plain = aipw_moment(w.ctx, 0, beta);
  const VectorXd general = general_aipw_moment(w.ctx, 0, beta);
  // They differ exactly by (p01 - 1) times the first component.
  const double w1 = 1.0 / 0.5 - 1.0 / (0.4 * 0.5);
  const VectorXd first = w1 * (0.8 - 0.3) * w.data->z().row(0).transpose();
  CHECK((general - plain - (p01 - 1.0) * first).norm() < 1e-12);

  // p_01 = 1 with p_y0 = 1 leaves the first component unchanged.
  HandObs unit = o;
  unit.p_d = 0.0;
  unit.p_y0 = 1.0;
  unit.d = std::nullopt;
  HandWorld w2({unit});
  const VectorXd p = aipw_moment(w2.ctx, 0, beta);
  const VectorXd g = general_aipw_moment(w2.ctx, 0, beta);
  CHECK((p - g).norm() < 1e-12);
}

TEST_CASE("moments never read masked fields or undefined propensities", "[moments]") {
  // Treatment missing: p_y1 is NaN, d is absent; every moment must evaluate.
  HandObs m3;
  m3.d = std::nullopt;
  m3.y = 1.0;
  m3.p_y1 = std::numeric_limits<double>::quiet_NaN();
  m3.ey = 0.4;
  m3.pr_d1 = 0.5;
  HandObs m4 = m3;
  m4.y = std::nullopt;
  HandWorld w({m3, m4});
  VectorXd beta(2);
  beta << 0.2, 0.3;
  for (int i = 0; i < 2; ++i) {
    for (MomentKind k : {MomentKind::CC, MomentKind::IPW, MomentKind::AIPW,
                         MomentKind::AIPW_GENERAL}) {
      const VectorXd m = moment(w.ctx, i, beta, k);
      CHECK(m.allFinite());
    }
    CHECK(std::isfinite(two_step_residual(w.ctx, i, beta)));
    CHECK(smar_correction(w.ctx, i, beta).allFinite());
  }
}

TEST_CASE("two-step residual equivalence on randomized observations", "[moments]") {
  // All four patterns, random consistent nuisances: z * eps == m_aipw.
  Rng rng(101);
  std::vector<HandObs> obs;
  std::vector<int> pattern;
  for (int i = 0; i < 2000; ++i) {
    HandObs o;
    o.z = 2.0 * rng.uniform() - 1.0;
    o.x = rng.uniform();
    o.p_d = 0.15 + 0.7 * rng.uniform();
    o.p_y1 = 0.15 + 0.7 * rng.uniform();
    o.p_y0 = 0.15 + 0.7 * rng.uniform();
    o.ey = rng.normal();
    o.eyd = rng.normal();
    o.pr_d1 = rng.uniform();
    const int pat = i % 4;
    if (pat == 0 || pat == 1) o.d = rng.uniform() < 0.5 ? 0.0 : 1.0;
    if (pat == 0 || pat == 2) o.y = rng.normal();
    if (!o.d) o.p_y1 = std::numeric_limits<double>::quiet_NaN();
    obs.push_back(o);
    pattern.push_back(pat);
  }
  HandWorld w(obs);
  VectorXd beta(2);
  beta << 0.3, 0.5;
  double max_diff = 0.0;
  for (int i = 0; i < w.data->n(); ++i) {
    const VectorXd lhs = aipw_moment(w.ctx, i, beta);
    const double eps = two_step_residual(w.ctx, i, beta);
    const VectorXd rhs = w.data->z().row(i).transpose() * eps;
    max_diff = std::max(max_diff, (lhs - rhs).lpNorm<Eigen::Infinity>());
  }
  CHECK(max_diff < 1e-12);
}

TEST_CASE("two-step residual trivial collapses", "[moments]") {
  HandObs o;
  o.d = 1.0;
  o.y = 0.8;
  o.p_d = 1.0;
  o.p_y1 = 1.0;
  HandWorld w({o});
  VectorXd beta(2);
  beta << 0.3, 0.5;
  CHECK(two_step_residual(w.ctx, 0, beta) ==
        Catch::Approx(0.8 - 0.3 - 0.5 * o.x).margin(1e-14));
}

TEST_CASE("both displayed arrangements of the augmentation agree", "[moments]") {
  Rng rng(202);
  for (int i = 0; i < 500; ++i) {
    HandObs o;
    o.z = rng.normal();
    o.x = rng.uniform();
    o.p_d = 0.2 + 0.6 * rng.uniform();
    o.p_y1 = 0.2 + 0.6 * rng.uniform();
    o.p_y0 = 0.2 + 0.6 * rng.uniform();
    o.ey = rng.normal();
    o.eyd = rng.normal();
    o.pr_d1 = rng.uniform();
    const int pat = i % 4;
    if (pat == 0 || pat == 1) o.d = rng.uniform() < 0.5 ? 0.0 : 1.0;
    if (pat == 0 || pat == 2) o.y = rng.normal();
    HandWorld w({o});
    VectorXd beta(2);
    beta << rng.normal(), rng.normal();
    const VectorXd a = augmentation_phi(w.ctx, 0, beta);
    const VectorXd b = augmentation_phi_expanded(w.ctx, 0, beta);
    CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("exact zero mean on the enumerated worlds", "[moments][toyworld]") {
  const ModelSpec model = ModelSpec::linear(1);

  SECTION("sequentially ignorable world") {
    const auto w = toyworld::smar_world();
    const auto e = toyworld::enumerate_world(w);
    const auto ctx = toyworld::enumeration_context(e, model, Assumption::SMAR,
                                                   toyworld::oracle_nuisances(w));
    const VectorXd beta0 = w.beta0();
    const VectorXd mean =
        toyworld::enumerate_mean(e, [&](int i) { return aipw_moment(ctx, i, beta0); });
    CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SECTION("ignorable world") {
    const auto w = toyworld::mar_world();
    const auto e = toyworld::enumerate_world(w);
    const auto ctx = toyworld::enumeration_context(e, model, Assumption::MAR,
                                                   toyworld::oracle_nuisances(w));
    const VectorXd beta0 = w.beta0();
    const VectorXd mean =
        toyworld::enumerate_mean(e, [&](int i) { return aipw_moment(ctx, i, beta0); });
    CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SECTION("monotone world, general-pattern moment") {
    const auto w = toyworld::monotone_world();
    const auto e = toyworld::enumerate_world(w);
    REQUIRE(is_monotone(*e.data));
    const auto ctx = toyworld::enumeration_context(e, model, Assumption::SMAR,
                                                   toyworld::oracle_nuisances(w));
    const VectorXd beta0 = w.beta0();
    const VectorXd mean =
        toyworld::enumerate_mean(e, [&](int i) { return general_aipw_moment(ctx, i, beta0); });
    CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SECTION("strictly non-monotone world, general-pattern moment") {
    const auto w = toyworld::smar_world();
    const auto e = toyworld::enumerate_world(w);
    const auto ctx = toyworld::enumeration_context(e, model, Assumption::SMAR,
                                                   toyworld::oracle_nuisances(w));
    const VectorXd beta0 = w.beta0();
    const VectorXd mean =
        toyworld::enumerate_mean(e, [&](int i) { return general_aipw_moment(ctx, i, beta0); });
    CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("robustness structure of the moment condition", "[moments][toyworld]") {
  const ModelSpec model = ModelSpec::linear(1);

  SECTION("corrupted imputations, oracle propensities: zero under both") {
    for (bool smar : {true, false}) {
      const auto w = smar ? toyworld::smar_world() : toyworld::mar_world();
      const auto e = toyworld::enumerate_world(w);
      const auto nu = toyworld::corrupt_imputations(toyworld::oracle_nuisances(w));
      const auto ctx = toyworld::enumeration_context(
          e, model, smar ? Assumption::SMAR : Assumption::MAR, nu);
      const VectorXd beta0 = w.beta0();
      const VectorXd mean =
          toyworld::enumerate_mean(e, [&](int i) { return aipw_moment(ctx, i, beta0); });
      CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }

  SECTION("corrupted propensities, oracle imputations: zero under MAR only") {
    const auto wm = toyworld::mar_world();
    const auto em = toyworld::enumerate_world(wm);
    const auto num = toyworld::corrupt_propensities(toyworld::oracle_nuisances(wm));
    const auto ctxm = toyworld::enumeration_context(em, model, Assumption::MAR, num);
    const VectorXd beta0m = wm.beta0();
    const VectorXd mean_mar =
        toyworld::enumerate_mean(em, [&](int i) { return aipw_moment(ctxm, i, beta0m); });
    CHECK(mean_mar.lpNorm<Eigen::Infinity>() < 1e-12);

    const auto ws = toyworld::smar_world();
    const auto es = toyworld::enumerate_world(ws);
    const auto nus = toyworld::corrupt_propensities(toyworld::oracle_nuisances(ws));
    const auto ctxs = toyworld::enumeration_context(es, model, Assumption::MAR, nus);
    const VectorXd beta0s = ws.beta0();
    const VectorXd mean_smar =
        toyworld::enumerate_mean(es, [&](int i) { return aipw_moment(ctxs, i, beta0s); });
    CHECK(mean_smar.lpNorm<Eigen::Infinity>() > 1e-3);
  }
}
