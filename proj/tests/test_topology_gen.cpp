#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gridsense;
using namespace gridsense::testing;

namespace {
const FrequencyGrid kGrid{4300.0, 116};
}

TEST(GenerateTopology, TwoNodes) {
  TopologyConfig cfg;
  cfg.n_nodes = 2;
  const Topology t = generate_topology(cfg, 7);
  EXPECT_EQ(t.branches.size(), 1u);
  EXPECT_EQ(t.loads.size(), 1u);
  EXPECT_EQ(t.ports.size(), 1u);
  EXPECT_DOUBLE_EQ(t.branches[0].length_m, 900.0);
}

TEST(GenerateTopology, DeterministicJson) {
  TopologyConfig cfg;
  EXPECT_EQ(nlohmann::json(generate_topology(cfg, 42)).dump(), nlohmann::json(generate_topology(cfg, 42)).dump());
  EXPECT_NE(nlohmann::json(generate_topology(cfg, 42)).dump(), nlohmann::json(generate_topology(cfg, 43)).dump());
}

TEST(GenerateTopology, TreesWithBoundedDegreeAndMeanLength) {
  TopologyConfig cfg;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Topology t = generate_topology(cfg, seed);
    ASSERT_EQ(t.branches.size() + 1, t.nodes.size());
    for (const auto& n : t.nodes) ASSERT_LE(t.degree(n.id), 4u);
    for (const auto& b : t.branches) {
      sum += b.length_m;
      ++count;
    }
    for (const auto& n : t.nodes) {
      if (t.degree(n.id) == 1 && !t.is_port(n.id)) {
        ASSERT_TRUE(t.loads.count(n.id));
      }
    }
  }
  const double mean = sum / static_cast<double>(count);
  EXPECT_GE(mean, 765.0);
  EXPECT_LE(mean, 1035.0);
}

TEST(GenerateTopology, DegreeCapTwoGivesPath) {
  TopologyConfig cfg;
  cfg.n_nodes = 15;
  cfg.max_node_degree = 2;
  const Topology t = generate_topology(cfg, 3);
  for (const auto& n : t.nodes) EXPECT_LE(t.degree(n.id), 2u);
}

TEST(GenerateTopology, InvalidConfig) {
  TopologyConfig cfg;
  cfg.n_nodes = 1;
  EXPECT_THROW(generate_topology(cfg, 1), ConfigError);
  cfg.n_nodes = 5;
  cfg.max_node_degree = 1;
  EXPECT_THROW(generate_topology(cfg, 1), ConfigError);
  cfg.max_node_degree = 3;
  cfg.avg_branch_length = -1.0;
  EXPECT_THROW(generate_topology(cfg, 1), ConfigError);
}

TEST(GenerateTopology, LoadDistributionShares) {
  LoadDistribution d;
  Rng rng(5);
  int open = 0, resonant = 0, resistive = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto m = d.draw(rng);
    if (m.kind == tl::AdmittanceModel::Kind::Constant) {
      ++open;
    } else if (m.c) {
      ++resonant;
      const double fr = 1.0 / (2.0 * kPi * std::sqrt(*m.l * *m.c));
      EXPECT_GE(fr, d.resonance_min_hz * 0.999);
      EXPECT_LE(fr, d.resonance_max_hz * 1.001);
    } else {
      ++resistive;
      EXPECT_GE(*m.r, 5.0);
      EXPECT_LE(*m.r, 1000.0);
    }
  }
  EXPECT_NEAR(open / 20000.0, 0.1, 0.01);
  EXPECT_NEAR(resonant / 20000.0, 0.3, 0.015);
}

TEST(InjectAnomaly, NullFaultsLeaveResponsesUnchanged) {
  const Topology t = five_node();
  const Spectrum y = tl::input_admittance(t, 0, kGrid);
  const Spectrum h = tl::transfer_function(t, 0, 4, kGrid);
  const Topology lf = inject_anomaly(t, LocalizedFault{2, 400.0, tl::AdmittanceModel::open()});
  EXPECT_LT(max_rel_error(tl::input_admittance(lf, 0, kGrid), y), 1e-12);
  EXPECT_LT(max_rel_error(tl::transfer_function(lf, 0, 4, kGrid), h), 1e-12);
  DistributedFault same{2, 100.0, 500.0, std::nullopt};
  same.cable = t.branch(2).cable;
  const Topology df = inject_anomaly(t, same);
  EXPECT_LT(max_rel_error(tl::input_admittance(df, 0, kGrid), y), 1e-12);
}

TEST(InjectAnomaly, MatchedLoadChangeGivesZeroReflection) {
  const Topology t = single_line(900.0, tl::AdmittanceModel::resistor(20.0));
  const Topology m = inject_anomaly(t, LoadChange{1, tl::AdmittanceModel::matched()});
  const Spectrum rho = tl::reflection_coefficient(tl::input_admittance(m, 0, kGrid));
  for (const auto& v : rho.values) EXPECT_LT(std::abs(v(0, 0)), 1e-12);
}

TEST(InjectAnomaly, PureAndValidated) {
  const Topology t = five_node();
  const std::string before = nlohmann::json(t).dump();
  const Anomaly a = DistributedFault{3, 100.0, 300.0, std::nullopt};
  const Topology x = inject_anomaly(t, a);
  const Topology y = inject_anomaly(t, a);
  EXPECT_EQ(nlohmann::json(t).dump(), before);
  EXPECT_EQ(nlohmann::json(x).dump(), nlohmann::json(y).dump());
  EXPECT_THROW(inject_anomaly(t, LoadChange{99, tl::AdmittanceModel::open()}), DomainError);
  EXPECT_THROW(inject_anomaly(t, LocalizedFault{99, 1.0, tl::AdmittanceModel::open()}), DomainError);
  EXPECT_THROW(inject_anomaly(t, LocalizedFault{1, 451.0, tl::AdmittanceModel::open()}), DomainError);
  EXPECT_THROW(inject_anomaly(t, DistributedFault{1, 300.0, 300.0, std::nullopt}), DomainError);
}

TEST(AnomalyJson, RoundTrip) {
  const std::vector<Anomaly> all = {
      LoadChange{4, tl::AdmittanceModel::resistor(33.0)},
      LocalizedFault{1, 12.5, tl::AdmittanceModel::series(10.0, std::nullopt, 1e-9), {2, 0}},
      DistributedFault{2, 5.0, 100.0, std::nullopt},
  };
  for (const auto& a : all) {
    const nlohmann::json j = a;
    EXPECT_EQ(j.get<Anomaly>(), a) << j.dump();
  }
}

TEST(NodeDistances, BasicsAndTreeEquality) {
  const Topology two = single_line(900.0, tl::AdmittanceModel::open());
  const auto d2 = node_distances(two, 0);
  EXPECT_EQ(d2.at(0), 0.0);
  EXPECT_EQ(d2.at(1), 900.0);

  TopologyConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Topology t = generate_topology(cfg, seed);
    const int port = t.ports[0].node;
    const auto d = node_distances(t, port);
    const RootedTree tree = RootedTree::build(t, port);
    for (const auto& [child, bid] : tree.parent_branch)
      EXPECT_NEAR(d.at(child), d.at(tree.parent_node.at(child)) + t.branch(bid).length_m, 1e-9);
  }
}

TEST(NodeDistances, TwoBranchFixture) {
  const Topology t = two_branch_fixture();
  const auto d = node_distances(t, TwoBranchIds::port);
  EXPECT_DOUBLE_EQ(d.at(TwoBranchIds::end_b2), 12950.0);
  EXPECT_DOUBLE_EQ(d.at(TwoBranchIds::end_b3), 15950.0);
  EXPECT_DOUBLE_EQ(anomaly_distance(t, two_branch_damage(TwoBranchIds::b3), TwoBranchIds::port), 11500.0);
}
