#include <gtest/gtest.h>

#include "support.hpp"

using namespace attnprice;

namespace {

// One stock per residual; predicted = actual - residual.
ForecastSet constant_residuals(const std::vector<double>& alphas, std::size_t T = 4) {
  ForecastSet fs;
  fs.model = "m";
  for (std::size_t t = 0; t < T; ++t) fs.dates.push_back(make_month(2020, 1) + static_cast<MonthIndex>(t));
  Rng rng(1);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    StockForecast s;
    s.ticker = "S" + std::to_string(i);
    for (std::size_t t = 0; t < T; ++t) {
      s.actual.push_back(0.01 * rng.normal());
      s.predicted.push_back(s.actual.back() - alphas[i]);
    }
    fs.stocks.push_back(s);
  }
  return fs;
}

}  // namespace

TEST(OosR2, TrivialCases) {
  const std::vector<double> r{0.01, -0.02, 0.03};
  EXPECT_EQ(oos_r2(r, r, 0.0), 1.0);
  const std::vector<double> flat(3, 0.004);
  EXPECT_EQ(oos_r2(r, flat, 0.004), 0.0);
}

TEST(OosR2, HandFixture) {
  const double v = oos_r2(std::vector<double>{0.01, -0.02}, std::vector<double>{0.0, 0.0}, 0.005);
  EXPECT_NEAR(v, 1.0 - 0.0005 / 0.00065, 1e-12);
  EXPECT_NEAR(v, 0.2308, 1e-4);
}

TEST(OosR2, UndefinedWhenActualEqualsMean) {
  EXPECT_THROW(oos_r2(std::vector<double>{0.1, 0.1}, std::vector<double>{0.0, 0.2}, 0.1), UndefinedMetricError);
  EXPECT_THROW(oos_r2(std::vector<double>{0.1}, std::vector<double>{0.0, 0.2}, 0.1), ValidationError);
}

TEST(OosMse, PooledAndHomogeneous) {
  ForecastSet fs;
  fs.dates = {make_month(2020, 1)};
  fs.stocks = {{"A", {0.1}, {0.0}, 0.0}, {"B", {0.3}, {0.0}, 0.0}};
  EXPECT_NEAR(oos_mse(fs), 0.05, 1e-15);
  for (auto& s : fs.stocks) s.actual[0] *= 2.0;
  EXPECT_NEAR(oos_mse(fs), 0.2, 1e-15);
  for (auto& s : fs.stocks) s.predicted = s.actual;
  EXPECT_EQ(oos_mse(fs), 0.0);
}

TEST(Alpha, CrossSectionalTStatistic) {
  const AlphaStats a = residual_alpha(constant_residuals({0.01, 0.02, 0.03}));
  EXPECT_NEAR(a.average, 0.02, 1e-12);
  EXPECT_NEAR(a.annualized, 0.24, 1e-12);
  ASSERT_TRUE(a.t_stat.has_value());
  EXPECT_NEAR(*a.t_stat, 0.02 * std::sqrt(3.0) / 0.01, 1e-9);
  EXPECT_NEAR(*a.t_stat, 3.464, 1e-3);
}

TEST(Alpha, PerfectForecastsHaveNoTStatistic) {
  const ForecastSet fs = constant_residuals({0.0, 0.0, 0.0});
  EXPECT_THROW(residual_alpha(fs), UndefinedMetricError);
  const AlphaStats v = residual_alpha_values(fs);
  EXPECT_EQ(v.average, 0.0);
  EXPECT_FALSE(v.t_stat.has_value());
  EXPECT_THROW(residual_alpha(constant_residuals({0.01})), UndefinedMetricError);
}

TEST(Alpha, AnnualizationAgreesWithReferencePair) {
  EXPECT_NEAR(annualize_alpha(0.0035), 0.042, 1e-12);
  // 0.0417 per year is a monthly value that rounds to 0.0035.
  EXPECT_NEAR(0.0417 / 12.0, 0.0035, 0.00005);
}

TEST(DieboldMariano, HandFixture) {
  const Matrix em = Matrix::from_rows({{0.0}, {0.0}, {0.0}});
  const Matrix en = Matrix::from_rows({{1.0}, {-2.0}, {3.0}});
  EXPECT_EQ(mae_differential(em, en), (std::vector<double>{-1.0, -2.0, -3.0}));
  const DmResult r = dm_test(em, en);
  EXPECT_NEAR(r.statistic, -2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(r.statistic, -3.464, 1e-3);
  EXPECT_NEAR(dm_test(en, em).statistic, -r.statistic, 1e-15);
}

TEST(DieboldMariano, AntisymmetryOnRandomPanels) {
  Rng rng(3);
  const Matrix a = attnprice::testing::random_matrix(30, 4, rng), b = attnprice::testing::random_matrix(30, 4, rng);
  for (std::size_t lags : {0u, 3u}) {
    const DmResult ab = dm_test(a, b, lags), ba = dm_test(b, a, lags);
    EXPECT_NEAR(ab.statistic, -ba.statistic, 1e-12);
    EXPECT_NEAR(ab.p_value, ba.p_value, 1e-15);
  }
}

TEST(DieboldMariano, DegenerateAndShortSeries) {
  Rng rng(4);
  const Matrix a = attnprice::testing::random_matrix(10, 2, rng);
  EXPECT_THROW(dm_test(a, a), UndefinedMetricError);
  EXPECT_THROW(dm_test_from_differential(std::vector<double>{1.0, 2.0}), ValidationError);
  EXPECT_THROW(dm_test(a, Matrix(9, 2)), ValidationError);
}

TEST(DieboldMariano, NeweyWestMatchesDirectSum) {
  const std::vector<double> d{0.3, -0.1, 0.4, 0.2, -0.5, 0.1, 0.6, 0.0};
  const double T = 8.0, dbar = 0.125;
  auto gamma = [&](std::size_t l) {
    double s = 0.0;
    for (std::size_t t = l; t < d.size(); ++t) s += (d[t] - dbar) * (d[t - l] - dbar);
    return s / T;
  };
  const double lrv = gamma(0) + 2.0 * (2.0 / 3.0) * gamma(1) + 2.0 * (1.0 / 3.0) * gamma(2);
  EXPECT_NEAR(dm_test_from_differential(d, 2).statistic, dbar / std::sqrt(lrv / T), 1e-12);
}

TEST(DieboldMariano, StarsAndPValues) {
  EXPECT_EQ(significance_stars(1.0), 0);
  EXPECT_EQ(significance_stars(-1.7), 1);
  EXPECT_EQ(significance_stars(2.0), 2);
  EXPECT_EQ(significance_stars(-3.0), 3);
  EXPECT_NEAR(normal_two_sided_p(1.959963984540054), 0.05, 1e-12);
}

TEST(PermutationImportance, DeadInputScoresZero) {
  Rng rng(5);
  const Matrix x = attnprice::testing::random_matrix(200, 3, rng);
  std::vector<double> y(200);
  for (std::size_t t = 0; t < 200; ++t) y[t] = 0.5 * x(t, 0) - x(t, 2);
  auto predict = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t t = 0; t < m.rows(); ++t) out[t] = 0.5 * m(t, 0) - m(t, 2);
    return out;
  };
  std::vector<std::size_t> rows(200);
  for (std::size_t t = 0; t < 200; ++t) rows[t] = t;
  const auto imp = permutation_importance(predict, x, y, rows, 3, 7);
  EXPECT_NEAR(imp[1], 0.0, 1e-10);
  EXPECT_GT(imp[0], 0.0);
  EXPECT_GT(imp[2], imp[0]);
}

TEST(PermutationImportance, TwiceTheVarianceForLinearTeacher) {
  Rng rng(6);
  const std::size_t T = 500;
  const Matrix x = attnprice::testing::random_matrix(T, 2, rng, 1.5);
  std::vector<double> y = x.column(0);
  auto predict = [](const Matrix& m) { return m.column(0); };
  std::vector<std::size_t> rows(T);
  for (std::size_t t = 0; t < T; ++t) rows[t] = t;
  const auto imp = permutation_importance(predict, x, y, rows, 5, 8);
  const auto col = x.column(0);
  const double mu = mean(col);
  double var = 0.0;
  for (double v : col) var += (v - mu) * (v - mu);
  var /= static_cast<double>(T);
  EXPECT_NEAR(imp[0] / (2.0 * var), 1.0, 0.2);
  EXPECT_EQ(imp[1], 0.0);
}

TEST(PermutationImportance, IdentityPermutationScoresExactlyZero) {
  Rng rng(7);
  const Matrix x = attnprice::testing::random_matrix(50, 2, rng);
  std::vector<double> y(50, 0.3);
  auto predict = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t t = 0; t < m.rows(); ++t) out[t] = std::sin(m(t, 0)) * m(t, 1);
    return out;
  };
  std::vector<std::size_t> rows(50);
  for (std::size_t t = 0; t < 50; ++t) rows[t] = t;
  const Permuter identity = [](std::span<std::size_t>, Rng&) {};
  for (double v : permutation_importance(predict, x, y, rows, 4, 1, identity)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(permutation_importance(predict, x, y, rows, 0, 1), ConfigError);
}

TEST(Correlation, SignsAndConstantColumns) {
  const Matrix a = Matrix::from_rows({{1, 5}, {2, 5}, {3, 5}});
  const Matrix b = Matrix::from_rows({{2, 3}, {4, 2}, {6, 1}});
  const Matrix c = correlation_matrix(a, b);
  EXPECT_NEAR(c(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(c(0, 1), -1.0, 1e-15);
  EXPECT_TRUE(std::isnan(c(1, 0)));
}
