#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "test_util.hpp"

using namespace gridsense;

namespace {

// Wilson bounds as the roots of (p_hat - p)^2 = z^2 p (1 - p) / n.
std::pair<double, double> wilson_roots(double k, double n, double z) {
  const double ph = k / n, a = 1.0 + z * z / n, b = -(2.0 * ph + z * z / n), c = ph * ph;
  const double disc = std::sqrt(b * b - 4.0 * a * c);
  return {(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)};
}

std::vector<double> normal_sample(double mean, std::size_t n, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(mean, 1.0);
  std::vector<double> s(n);
  for (auto& x : s) x = d(g);
  return s;
}

ExperimentConfig small_config() {
  ExperimentConfig c = parse_experiment_config(
      "quantities = yin, rho\n"
      "nodes = 5\n"
      "kinds = localized_fault, load_change\n"
      "trials = 3\n"
      "seed = 42\n");
  c.workers = 1;
  return c;
}

std::string records_text(const ExperimentConfig& c) {
  std::ostringstream os;
  write_records_csv(os, run_monte_carlo(c));
  return os.str();
}

}  // namespace

TEST(Wilson, MatchesQuadraticRoots) {
  const Interval ci = wilson_interval(50, 100);
  EXPECT_NEAR(ci.lo, 0.404, 5e-4);
  EXPECT_NEAR(ci.hi, 0.596, 5e-4);
  for (auto [k, n] : std::vector<std::pair<int, int>>{{50, 100}, {3, 40}, {199, 200}, {1, 7}}) {
    const auto [lo, hi] = wilson_roots(k, n, 1.959964);
    const Interval w = wilson_interval(k, n);
    EXPECT_NEAR(w.lo, lo, 1e-12) << k << '/' << n;
    EXPECT_NEAR(w.hi, hi, 1e-12) << k << '/' << n;
  }
}

TEST(Wilson, EdgeCases) {
  EXPECT_DOUBLE_EQ(wilson_interval(20, 20).hi, 1.0);
  EXPECT_DOUBLE_EQ(wilson_interval(0, 20).lo, 0.0);
  EXPECT_GT(wilson_interval(20, 20).lo, 0.8);
  EXPECT_TRUE(std::isnan(wilson_interval(0, 0).lo));
  EXPECT_THROW(wilson_interval(3, 2), DomainError);
}

TEST(PFailure, GaussianOverlap) {
  // Half the overlap of N(0,1) and N(3,1) is Phi(-1.5).
  const double oracle = 0.5 * std::erfc(1.5 / std::sqrt(2.0));
  EXPECT_NEAR(oracle, 0.0668, 1e-4);
  EXPECT_NEAR(p_failure_overlap(normal_sample(0.0, 5000, 1), normal_sample(3.0, 5000, 2)), oracle, 0.01);
}

TEST(PFailure, EdgeCases) {
  const auto a = normal_sample(0.0, 2000, 3);
  EXPECT_NEAR(p_failure_overlap(a, a), 0.5, 1e-3);
  EXPECT_NEAR(p_failure_overlap(a, normal_sample(1000.0, 2000, 4)), 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(p_failure_overlap({1.0, 1.0}, {1.0}), 0.5);
  EXPECT_DOUBLE_EQ(p_failure_overlap({1.0, 1.0}, {2.0}), 0.0);
  EXPECT_DOUBLE_EQ(p_failure_overlap({1.0}, a), 0.0);
  EXPECT_THROW(p_failure_overlap({}, a), DomainError);
  EXPECT_THROW(p_failure_overlap(a, {1.0, NAN}), DomainError);
  EXPECT_THROW(p_failure_overlap({INFINITY}, a), DomainError);
}

TEST(PFailure, BoundedAndSymmetric) {
  for (double m : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const auto s0 = normal_sample(0.0, 500, 5), s1 = normal_sample(m, 700, 6);
    const double p = p_failure_overlap(s0, s1);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 0.5);
    EXPECT_NEAR(p, p_failure_overlap(s1, s0), 1e-9);
  }
}

TEST(Config, ParsesListsAndComments) {
  const auto c = parse_experiment_config(
      "# sweep\n"
      "quantities = yin, rho , h\n"
      "models = sup, chain  # both\n"
      "channels = 2\n"
      "entries = 1-1, 1-2\n"
      "qnr_db = inf, 20\n"
      "nodes = 5, 10\n"
      "group_by = quantity\n");
  EXPECT_EQ(c.quantities.size(), 3u);
  EXPECT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.entries[1], std::make_pair(0, 1));  // 1-based in the file
  ASSERT_EQ(c.qnr_db.size(), 2u);
  EXPECT_TRUE(std::isinf(c.qnr_db[0]));
  EXPECT_EQ(c.node_counts, (std::vector<int>{5, 10}));
  EXPECT_EQ(c.group_by, std::vector<std::string>{"quantity"});
  EXPECT_EQ(experiment_cells(c).size(), 3u * 2u * 2u * 2u * 2u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto message = [](const std::string& text) {
    try {
      parse_experiment_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("trials = 3\ncolour = blue\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("trials = 3\ncolour = blue\n").find("unknown key"), std::string::npos);
  EXPECT_NE(message("\n\ntrials = many\n").find("line 3"), std::string::npos);
  EXPECT_NE(message("trials\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("quantities = volts\n").find("line 1"), std::string::npos);
  EXPECT_THROW(parse_experiment_config("entries = 1-2\n").validate(), ConfigError);
  EXPECT_THROW(parse_experiment_config("nodes = 1\n").validate(), ConfigError);
  EXPECT_THROW(parse_experiment_config("trials = 0\n").validate(), ConfigError);
}

TEST(Config, SeedFromEnvironment) {
  ExperimentConfig c;
  c.seed = 5;
  ::setenv("GRIDSENSE_SEED", "1234", 1);
  apply_environment(c);
  EXPECT_EQ(c.seed, 1234u);
  ::setenv("GRIDSENSE_SEED", "12x", 1);
  EXPECT_THROW(apply_environment(c), ConfigError);
  ::unsetenv("GRIDSENSE_SEED");
  c.seed = 7;
  apply_environment(c);
  EXPECT_EQ(c.seed, 7u);
}

TEST(MonteCarlo, ByteIdenticalAcrossRunsAndWorkers) {
  ExperimentConfig c = small_config();
  const std::string ref = records_text(c);
  EXPECT_EQ(records_text(c), ref);
  for (int w : {2, 4}) {
    c.workers = w;
    EXPECT_EQ(records_text(c), ref) << w << " workers";
  }
  c.seed = 43;
  EXPECT_NE(records_text(c), ref);
}

TEST(MonteCarlo, NoiselessLoadChangeIsDetected) {
  auto c = parse_experiment_config("kinds = load_change\nnodes = 10\nqnr_db = inf\ntrials = 1\nseed = 7\n");
  c.workers = 1;
  const auto recs = run_monte_carlo(c);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_TRUE(recs[0].error.empty()) << recs[0].error;
  EXPECT_TRUE(recs[0].detected);
  EXPECT_EQ(recs[0].detect_steps, c.detect.confirm);
  EXPECT_TRUE(recs[0].classified);
  EXPECT_GE(recs[0].true_node, 0);
  EXPECT_LT(recs[0].stat_normal, 1e-12 * recs[0].stat_anomalous);
  EXPECT_GT(recs[0].stat_anomalous, 0.0);
}

TEST(MonteCarlo, BranchHitImpliesFirstNodeHit) {
  auto c = parse_experiment_config("kinds = localized_fault, load_change, distributed_fault\nnodes = 8\ntrials = 8\n");
  c.workers = 1;
  const auto recs = run_monte_carlo(c);
  EXPECT_EQ(recs.size(), 24u);
  for (const auto& r : recs) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    if (r.branch_hit) {
      EXPECT_TRUE(r.first_node_hit);
    }
    if (r.located) {
      EXPECT_TRUE(r.detected && r.classified);
    }
    if (!r.detected) {
      EXPECT_FALSE(r.classified);
    }
  }
}

TEST(MonteCarlo, TrialErrorsAreRecorded) {
  ExperimentConfig c;
  const Cell cell{Quantity::Yin, DeltaModel::Superposition, {0, 0}, AnomalyKind::LocalizedFault, 1, 0};
  TrialRecord r;
  EXPECT_NO_THROW(r = run_trial(c, 0, cell, 0));
  EXPECT_FALSE(r.error.empty());
  EXPECT_FALSE(r.detected);
  const auto rows = summarize({r}, {"kind"});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].errors, 1u);
  EXPECT_TRUE(std::isnan(rows[0].p_failure));
}

TEST(Summary, GroupsInFirstOccurrenceOrder) {
  std::vector<TrialRecord> recs;
  for (int i = 0; i < 30; ++i) {
    TrialRecord r;
    r.quantity = std::array{Quantity::Rho, Quantity::Yin, Quantity::H}[i % 3];
    r.detected = i % 2 == 0;
    r.stat_normal = 1.0 + 0.01 * i;
    r.stat_anomalous = 5.0 + 0.02 * i;
    recs.push_back(r);
  }
  const auto rows = summarize(recs, {"quantity"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].key[0].second, to_string(Quantity::Rho));
  EXPECT_EQ(rows[1].key[0].second, to_string(Quantity::Yin));
  for (const auto& row : rows) {
    EXPECT_EQ(row.trials, 10u);
    EXPECT_EQ(row.detected, 5u);
    EXPECT_NEAR(row.p_failure, 0.0, 1e-6);
  }
  EXPECT_THROW(summarize({}, {"quantity"}), DomainError);
  EXPECT_THROW(summarize(recs, {"colour"}), ConfigError);
}

TEST(Summary, CsvHeaders) {
  TrialRecord r;
  std::ostringstream rec, sum;
  write_records_csv(rec, {r});
  EXPECT_EQ(rec.str().substr(0, rec.str().find('\n')),
            "cell,trial,seed,nodes,kind,anomaly,true_branch,true_node,true_distance_m,quantity,model,entry,noise,"
            "realized_qnr_db,stat_normal,stat_anomalous,detected,detect_steps,class,class_ok,d_hat_m,located_id,"
            "branch_hit,first_node_hit,locate_error,error");
  write_summary_csv(sum, summarize({r}, {"quantity", "noise"}));
  EXPECT_EQ(sum.str().substr(0, sum.str().find('\n')),
            "quantity,noise,trials,errors,p_failure,p_detect,p_detect_lo,p_detect_hi,p_class,p_class_lo,p_class_hi,"
            "p_branch,p_branch_lo,p_branch_hi,p_first_node,p_first_node_lo,p_first_node_hi");
  EXPECT_NE(sum.str().find(",physical,1,0,nan,0,"), std::string::npos);
}

TEST(Io, SpectrumRoundTrip) {
  const Spectrum s = tl::input_admittance(gridsense::testing::five_node(), 0, FrequencyGrid{});
  std::stringstream ss;
  write_spectrum_csv(ss, s);
  const Spectrum r = read_spectrum_csv(ss);
  ASSERT_EQ(r.size(), s.size());
  EXPECT_DOUBLE_EQ(r.grid.delta_f(), s.grid.delta_f());
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_EQ(r.values[k], s.values[k]);
}

TEST(Io, TwoChannelStreamRoundTrip) {
  std::vector<Spectrum> stream;
  for (int e = 0; e < 3; ++e) {
    Spectrum s;
    s.grid = FrequencyGrid(4300.0, 5);
    s.channels = 2;
    for (int k = 0; k < 5; ++k) {
      CMatrix m(2, 2);
      m << cplx(e, k), cplx(0.1, -0.2), cplx(1.0 / 3.0, 0.0), cplx(-k, e);
      s.values.push_back(m);
    }
    stream.push_back(s);
  }
  std::stringstream ss;
  write_stream_csv(ss, stream);
  const auto r = read_stream_csv(ss, Quantity::Rho);
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(r[e].channels, 2);
    EXPECT_EQ(r[e].quantity, Quantity::Rho);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(r[e].values[k], stream[e].values[k]);
  }
}

TEST(Io, MalformedInputs) {
  auto spectrum = [](const std::string& text) {
    std::istringstream is(text);
    return read_spectrum_csv(is);
  };
  auto stream = [](const std::string& text) {
    std::istringstream is(text);
    return read_stream_csv(is);
  };
  EXPECT_THROW(spectrum(""), ConfigError);
  EXPECT_THROW(spectrum("freq,re_00,im_00\n100,1,0\n200,1,0\n"), ConfigError);
  EXPECT_THROW(spectrum("f_hz,re_00\n100,1\n200,1\n"), ConfigError);
  EXPECT_THROW(spectrum("f_hz,re_00,im_00\n100,1,0\n250,1,0\n"), ConfigError);
  EXPECT_THROW(spectrum("f_hz,re_00,im_00\n100,1,0\n200,x,0\n"), ConfigError);
  EXPECT_THROW(spectrum("f_hz,re_00,im_00\n100,1,0\n200,1\n"), ConfigError);
  EXPECT_THROW(spectrum("f_hz,re_00,im_00\n100,1,0\n"), ConfigError);
  EXPECT_NO_THROW(spectrum("f_hz,re_00,im_00\r\n100,1,0\r\n200,1,0\r\n"));
  EXPECT_THROW(stream("estimate,f_hz,re_00,im_00\n0,100,1,0\n0,200,1,0\n2,100,1,0\n2,200,1,0\n"), ConfigError);
  EXPECT_THROW(stream("estimate,f_hz,re_00,im_00\n0.5,100,1,0\n"), ConfigError);
  EXPECT_THROW(stream("f_hz,re_00,im_00\n100,1,0\n"), ConfigError);
}

TEST(Io, TraceCsv) {
  TimeTrace tr;
  tr.magnitude = {0.0, 1.0, 0.5};
  tr.sample_m = 100.0;
  std::ostringstream os;
  write_trace_csv(os, tr);
  EXPECT_EQ(os.str(), "distance_m,magnitude\n0,0\n100,1\n200,0.5\n");
}
