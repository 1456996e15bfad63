#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace gridsense;

namespace {

Spectrum flat(std::size_t tones, cplx value = {1.0, 0.0}, double df = 4300.0) {
  Spectrum s;
  s.grid = FrequencyGrid(df, tones);
  s.channels = 1;
  s.values.assign(tones, CMatrix::Constant(1, 1, value));
  return s;
}

std::vector<Spectrum> realizations(const Spectrum& truth, const NoiseModel& noise, const MeasurementPlan& plan, int n,
                                   std::uint64_t seed) {
  std::vector<Spectrum> out;
  for (int i = 0; i < n; ++i) out.push_back(simulate_measurement(truth, noise, plan, derive_seed(seed, {std::uint64_t(i)})).spectrum);
  return out;
}

}  // namespace

TEST(SimulateMeasurement, NoiselessIsExact) {
  const Spectrum truth = tl::input_admittance(gridsense::testing::five_node(), 0, FrequencyGrid{});
  const auto est = simulate_measurement(truth, NoiseModel::direct_qnr(INFINITY), MeasurementPlan::mls(1), 7);
  for (std::size_t k = 0; k < truth.size(); ++k) EXPECT_EQ(est.spectrum.values[k], truth.values[k]);
  EXPECT_TRUE(std::isinf(est.realized_qnr_db));
}

TEST(SimulateMeasurement, AveragingAddsTwentyDb) {
  const Spectrum truth = flat(1000, {0.3, -0.4});
  const auto est = simulate_measurement(truth, NoiseModel::direct_qnr(20.0), MeasurementPlan::mls(100), 11);
  EXPECT_NEAR(est.realized_qnr_db, 40.0, 0.5);
}

TEST(SimulateMeasurement, PhysicalTxRxPowerSum) {
  // Oracle: 10 log10(1 / (1e-5 + 1e-6)).
  const double expected = 10.0 * std::log10(1.0 / (1e-5 + 1e-6));
  EXPECT_NEAR(expected, 49.586, 1e-3);
  const Spectrum truth = flat(116);
  const auto noise = NoiseModel::physical(-50.0, -60.0, false);
  const auto var = noise_variance(truth, noise, MeasurementPlan::mls(1));
  for (const auto& v : var) EXPECT_NEAR(10.0 * std::log10(1.0 / v(0, 0)), expected, 1e-9);
  const auto rep = qnr_of(realizations(truth, noise, MeasurementPlan::mls(1), 2000, 3), truth);
  EXPECT_NEAR(rep.aggregate_db, expected, 0.2);
}

TEST(SimulateMeasurement, NetworkNoiseFollowsDecayingPsd) {
  Spectrum truth = flat(116);
  truth.values[1](0, 0) = 2.0;  // 8.6 kHz is the tone nearest 10 kHz
  NoiseModel noise = NoiseModel::physical(-200.0, -200.0, true, -30.0);
  const auto var = noise_variance(truth, noise, MeasurementPlan::mls(4));
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double f = truth.grid.frequency(k);
    const double oracle = 4.0 * std::pow(10.0, (-30.0 - 35.0 * std::log10(f / 10e3)) / 10.0) / 4.0;
    EXPECT_NEAR(var[k](0, 0) / oracle, 1.0, 1e-6) << f;
  }
}

TEST(SimulateMeasurement, DeterministicPerSeed) {
  const Spectrum truth = tl::input_admittance(gridsense::testing::five_node(), 0, FrequencyGrid{});
  const auto a = simulate_measurement(truth, NoiseModel::physical(), MeasurementPlan::mls(3), 99);
  const auto b = simulate_measurement(truth, NoiseModel::physical(), MeasurementPlan::mls(3), 99);
  const auto c = simulate_measurement(truth, NoiseModel::physical(), MeasurementPlan::mls(3), 100);
  bool differs = false;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    EXPECT_EQ(a.spectrum.values[k], b.spectrum.values[k]);
    differs = differs || a.spectrum.values[k] != c.spectrum.values[k];
  }
  EXPECT_TRUE(differs);
}

TEST(SimulateMeasurement, ZeroMeanNoise) {
  const Spectrum truth = flat(116, {1.0, 1.0});
  const auto noise = NoiseModel::direct_qnr(10.0);
  const auto var = noise_variance(truth, noise, MeasurementPlan::mls(1));
  const auto reps = realizations(truth, noise, MeasurementPlan::mls(1), 10000, 5);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    cplx mean{};
    for (const auto& r : reps) mean += r.values[k](0, 0) - truth.values[k](0, 0);
    mean /= 10000.0;
    EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(var[k](0, 0)) / 100.0) << k;
  }
}

TEST(SimulateMeasurement, AveragingScalesVariance) {
  const Spectrum truth = flat(116, {0.5, 0.0});
  const auto noise = NoiseModel::physical();
  auto power = [&](int m) {
    const auto reps = realizations(truth, noise, MeasurementPlan::mls(m), 3000, 17);
    double acc = 0.0;
    for (const auto& r : reps)
      for (std::size_t k = 0; k < truth.size(); ++k) acc += std::norm(r.values[k](0, 0) - truth.values[k](0, 0));
    return acc;
  };
  EXPECT_NEAR(power(1) / power(10), 10.0, 1.0);
  // SLS is single-shot whatever the configured averages.
  MeasurementPlan sls = MeasurementPlan::sls();
  sls.averages = 50;
  EXPECT_EQ(sls.effective_averages(), 1);
}

TEST(SimulateMeasurement, TwoChannelEntriesAllNoisy) {
  Spectrum truth;
  truth.grid = FrequencyGrid(4300.0, 8);
  truth.channels = 2;
  truth.values.assign(8, CMatrix::Identity(2, 2));
  truth.values[0](0, 1) = truth.values[0](1, 0) = 0.2;
  const auto est = simulate_measurement(truth, NoiseModel::direct_qnr(20.0), MeasurementPlan::mls(1), 1);
  EXPECT_NE(est.spectrum.values[0](0, 1), truth.values[0](0, 1));
  EXPECT_EQ(est.spectrum.values[1](0, 1), cplx(0.0));  // zero entry, zero relative noise
}

TEST(QnrOf, DefinitionExamples) {
  const Spectrum truth = flat(50, {2.0, 0.0});
  EXPECT_TRUE(std::isinf(qnr_of({truth, truth}, truth).aggregate_db));
  Spectrum noisy = truth;
  for (auto& v : noisy.values) v(0, 0) += 2.0;  // |X_N|^2 = |X_0|^2
  EXPECT_NEAR(qnr_of({noisy}, truth).aggregate_db, 0.0, 1e-12);
}

TEST(QnrOf, ConsistentEstimator) {
  const Spectrum truth = flat(116, {0.7, 0.2});
  const auto rep = qnr_of(realizations(truth, NoiseModel::direct_qnr(30.0), MeasurementPlan::mls(1), 10000, 23), truth);
  EXPECT_NEAR(rep.aggregate_db, 30.0, 0.2);
}

TEST(QnrOf, ZeroToneExcluded) {
  Spectrum truth = flat(10);
  truth.values[3].setZero();
  const auto reps = realizations(truth, NoiseModel::direct_qnr(20.0), MeasurementPlan::mls(1), 50, 1);
  const auto rep = qnr_of(reps, truth);
  ASSERT_EQ(rep.excluded.size(), 1u);
  EXPECT_EQ(rep.excluded[0], 3u);
  EXPECT_TRUE(std::isnan(rep.per_tone_db[3]));
  EXPECT_THROW(qnr_of({}, truth), DomainError);
}

TEST(NoiseModel, Validation) {
  EXPECT_THROW(noise_variance(flat(4), NoiseModel::physical(1.0), MeasurementPlan::mls(1)), ConfigError);
  EXPECT_THROW(noise_variance(flat(4), NoiseModel::direct_qnr(NAN), MeasurementPlan::mls(1)), ConfigError);
  EXPECT_THROW(noise_variance(flat(4), NoiseModel::direct_qnr(10.0), MeasurementPlan::mls(0)), ConfigError);
}
