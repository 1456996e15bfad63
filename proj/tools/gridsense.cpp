// gridsense command-line front end.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <gridsense/gridsense.hpp>

namespace gs = gridsense;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gs::ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw gs::ConfigError(path + ": " + e.what());
  }
}

/// Writes through `fn` to `path`, or stdout for "" / "-".
template <class Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw gs::ConfigError("cannot write '" + path + "'");
  fn(out);
}

gs::Topology load_topology(const std::string& path) {
  gs::Topology t = read_json(path).get<gs::Topology>();
  t.validate();
  return t;
}

int port_of(const gs::Topology& t, int requested) {
  if (requested >= 0) {
    if (!t.has_node(requested)) throw gs::DomainError("port " + std::to_string(requested) + " is not a node");
    return requested;
  }
  if (t.ports.empty()) throw gs::DomainError("topology has no sensor port; pass --port");
  return t.ports.front().node;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid sensing: network responses, anomaly detection and localization"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Random tree network as topology JSON");
  gs::TopologyConfig tcfg;
  std::uint64_t gen_seed = 1;
  std::string gen_port = "degree", gen_out;
  gen->add_option("-n,--nodes", tcfg.n_nodes, "Node count")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Seed")->capture_default_str();
  gen->add_option("--avg-branch-length", tcfg.avg_branch_length, "Mean branch length (m)")->capture_default_str();
  gen->add_option("--max-degree", tcfg.max_node_degree, "Maximum node degree")->capture_default_str();
  gen->add_option("--channels", tcfg.cable.channels, "Conductor pairs (1 or 2)")->capture_default_str();
  gen->add_option("--port-choice", gen_port, "degree or random")->check(CLI::IsMember({"degree", "random"}));
  gen->add_option("-o,--output", gen_out, "Output file (default stdout)");

  // inject
  auto* inj = app.add_subcommand("inject", "Apply an anomaly JSON to a topology");
  std::string inj_topo, inj_anom, inj_out;
  inj->add_option("-t,--topology", inj_topo, "Topology JSON")->required();
  inj->add_option("-a,--anomaly", inj_anom, "Anomaly JSON")->required();
  inj->add_option("-o,--output", inj_out, "Output file (default stdout)");

  // respond
  auto* resp = app.add_subcommand("respond", "True network response as spectrum CSV");
  std::string resp_topo, resp_q = "yin", resp_out;
  int resp_port = -1, resp_rx = -1;
  double resp_df = 4300.0;
  std::size_t resp_tones = 116;
  resp->add_option("-t,--topology", resp_topo, "Topology JSON")->required();
  resp->add_option("-q,--quantity", resp_q, "yin, rho or h")->check(CLI::IsMember({"yin", "rho", "h"}));
  resp->add_option("--port", resp_port, "Sensing node (default: first topology port)");
  resp->add_option("--rx", resp_rx, "Receiver node for h (default: farthest node)");
  resp->add_option("--delta-f", resp_df, "Tone spacing (Hz)")->capture_default_str();
  resp->add_option("--tones", resp_tones, "Tone count")->capture_default_str();
  resp->add_option("-o,--output", resp_out, "Output file (default stdout)");
  int resp_estimates = 0, resp_after = 0;
  std::string resp_anomalous;
  std::optional<double> resp_qnr;
  std::uint64_t resp_seed = 1;
  resp->add_option("--estimates", resp_estimates, "Noisy estimates to write as a stream (0: true spectrum)");
  resp->add_option("--qnr", resp_qnr, "Noise as QNR in dB (default: physical model)");
  resp->add_option("--seed", resp_seed, "Noise seed")->capture_default_str();
  resp->add_option("--anomalous", resp_anomalous, "Topology whose estimates follow the normal ones");
  resp->add_option("--anomalous-estimates", resp_after, "Estimates drawn from --anomalous")->capture_default_str();

  // detect
  auto* det = app.add_subcommand("detect", "Sequential detection and classification on an estimate stream");
  std::string det_stream, det_q = "yin", det_model = "sup", det_entry = "1-1", det_out;
  gs::DetectThresholds thr;
  gs::ClassifyConfig ccfg;
  double det_velocity = gs::tl::CableSpec{}.velocity();
  det->add_option("-s,--stream", det_stream, "Stream CSV (estimate,f_hz,...)")->required();
  det->add_option("-q,--quantity", det_q, "yin or rho")->check(CLI::IsMember({"yin", "rho", "h"}));
  det->add_option("-m,--model", det_model, "sup or chain")->check(CLI::IsMember({"sup", "chain"}));
  det->add_option("--entry", det_entry, "Matrix entry, 1-based (e.g. 1-2)");
  det->add_option("--warmup", thr.warmup, "Leading estimates used as reference")->capture_default_str();
  det->add_option("--confirm", thr.confirm, "Consecutive exceedances to confirm")->capture_default_str();
  det->add_option("--k-sigma", thr.k_sigma, "Threshold in standard deviations")->capture_default_str();
  det->add_option("--alpha", thr.alpha, "Reference update factor")->capture_default_str();
  det->add_option("--velocity", det_velocity, "Propagation velocity (m/s)")->capture_default_str();
  det->add_option("-o,--output", det_out, "Output file (default stdout)");

  // locate
  auto* loc = app.add_subcommand("locate", "Localize a detected anomaly on a topology");
  std::string loc_report, loc_topo, loc_score = "mean", loc_out;
  int loc_port = -1;
  gs::LocateConfig lcfg;
  loc->add_option("-r,--report", loc_report, "Detection report JSON")->required();
  loc->add_option("-t,--topology", loc_topo, "Topology JSON (unperturbed)")->required();
  loc->add_option("--port", loc_port, "Sensing node (default: first topology port)");
  loc->add_option("--score", loc_score, "mean or min")->check(CLI::IsMember({"mean", "min"}));
  loc->add_option("--thr-bins", lcfg.thr_bins, "Match slack in distance bins")->capture_default_str();
  loc->add_option("-o,--output", loc_out, "Output file (default stdout)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Monte-Carlo run from a key = value config file");
  std::string exp_cfg, exp_records, exp_summary;
  std::optional<int> exp_workers;
  exp->add_option("config", exp_cfg, "Config file")->required();
  exp->add_option("--records", exp_records, "Records CSV (overrides config)");
  exp->add_option("--summary", exp_summary, "Summary CSV (overrides config; default stdout)");
  exp->add_option("--workers", exp_workers, "Worker threads (0: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      tcfg.port_choice = gen_port == "random" ? gs::PortChoice::Random : gs::PortChoice::HighestDegree;
      const gs::Topology t = gs::generate_topology(tcfg, gen_seed);
      emit(gen_out, [&](std::ostream& os) { os << json(t).dump(2) << '\n'; });
    } else if (*inj) {
      const gs::Topology t = load_topology(inj_topo);
      const gs::Anomaly a = read_json(inj_anom).get<gs::Anomaly>();
      const gs::Topology out = gs::inject_anomaly(t, a);
      emit(inj_out, [&](std::ostream& os) { os << json(out).dump(2) << '\n'; });
    } else if (*resp) {
      const gs::Topology t = load_topology(resp_topo);
      const int port = port_of(t, resp_port);
      const gs::FrequencyGrid grid(resp_df, resp_tones);
      const gs::Quantity q = gs::quantity_from_string(resp_q);
      const int rx = resp_rx >= 0 ? resp_rx : gs::detail::far_node(t, port);
      const gs::Spectrum s = gs::detail::true_quantity(t, port, q, grid, rx);
      if (resp_estimates <= 0 && resp_anomalous.empty()) {
        emit(resp_out, [&](std::ostream& os) { gs::write_spectrum_csv(os, s); });
      } else {
        const gs::NoiseModel noise = resp_qnr ? gs::NoiseModel::direct_qnr(*resp_qnr) : gs::NoiseModel::physical();
        const gs::MeasurementPlan plan = gs::MeasurementPlan::mls(1);
        std::vector<gs::Spectrum> stream;
        std::uint64_t draw = 0;
        auto draw_n = [&](const gs::Spectrum& truth, int n) {
          for (int i = 0; i < n; ++i)
            stream.push_back(gs::simulate_measurement(truth, noise, plan, gs::derive_seed(resp_seed, {draw++})).spectrum);
        };
        draw_n(s, resp_estimates);
        if (!resp_anomalous.empty())
          draw_n(gs::detail::true_quantity(load_topology(resp_anomalous), port, q, grid, rx), resp_after);
        emit(resp_out, [&](std::ostream& os) { gs::write_stream_csv(os, stream); });
      }
    } else if (*det) {
      std::ifstream in(det_stream);
      if (!in) throw gs::ConfigError("cannot open '" + det_stream + "'");
      const gs::Quantity q = gs::quantity_from_string(det_q);
      const auto stream = gs::read_stream_csv(in, q);
      if (stream.size() <= static_cast<std::size_t>(thr.warmup))
        throw gs::ConfigError("stream has " + std::to_string(stream.size()) + " estimates; warm-up needs " +
                              std::to_string(thr.warmup) + " plus at least one more");
      const auto entry = gs::entry_from_string(det_entry);
      if (entry.first >= stream.front().channels || entry.second >= stream.front().channels)
        throw gs::ConfigError("entry " + det_entry + " exceeds the channel count");
      const gs::DeltaModel model = gs::delta_model_from_string(det_model);
      thr.entries = {entry};
      std::vector<gs::Spectrum> warm(stream.begin(), stream.begin() + thr.warmup);
      gs::ReferenceState st = gs::init_reference(warm, model);
      const auto before_ref = st.reference;
      gs::Spectrum sum = stream.front();
      for (auto& v : sum.values) v.setZero();
      int consumed = 0;
      bool detected = false;
      for (std::size_t i = static_cast<std::size_t>(thr.warmup); i < stream.size(); ++i) {
        const gs::StepResult r = gs::detect_step(stream[i], st, thr);
        if (r.exceeded) {
          for (std::size_t k = 0; k < sum.size(); ++k) sum.values[k] += stream[i].values[k];
          ++consumed;
        } else {
          for (auto& v : sum.values) v.setZero();
          consumed = 0;
        }
        if (r.detected) {
          detected = true;
          break;
        }
      }
      gs::DetectionReport rep;
      if (detected) {
        for (auto& v : sum.values) v /= static_cast<double>(consumed);
        const gs::DeltaTrace d = gs::delta(sum, before_ref, model);
        std::vector<gs::cplx> before, after;
        for (std::size_t k = 0; k < before_ref.size(); ++k) {
          before.push_back(before_ref[k](entry.first, entry.second));
          after.push_back(sum.values[k](entry.first, entry.second));
        }
        ccfg.row = entry.first;
        ccfg.col = entry.second;
        rep = gs::classify(before, after, d, det_velocity, ccfg);
      }
      emit(det_out, [&](std::ostream& os) { os << json(rep).dump(2) << '\n'; });
    } else if (*loc) {
      const gs::DetectionReport rep = read_json(loc_report).get<gs::DetectionReport>();
      const gs::Topology t = load_topology(loc_topo);
      lcfg.score = loc_score == "min" ? gs::ScoreMode::Min : gs::ScoreMode::Mean;
      const gs::LocalizationReport out = gs::localize_single(rep, t, port_of(t, loc_port), lcfg);
      emit(loc_out, [&](std::ostream& os) { os << json(out).dump(2) << '\n'; });
    } else if (*exp) {
      std::ifstream in(exp_cfg);
      if (!in) throw gs::ConfigError("cannot open '" + exp_cfg + "'");
      gs::ExperimentConfig c = gs::parse_experiment_config(in);
      gs::apply_environment(c);
      if (!exp_records.empty()) c.records_path = exp_records;
      if (!exp_summary.empty()) c.summary_path = exp_summary;
      if (exp_workers) c.workers = *exp_workers;
      const auto records = gs::run_monte_carlo(c);
      if (!c.records_path.empty()) emit(c.records_path, [&](std::ostream& os) { gs::write_records_csv(os, records); });
      const auto rows = gs::summarize(records, c.group_by);
      emit(c.summary_path, [&](std::ostream& os) { gs::write_summary_csv(os, rows); });
    }
  } catch (const gs::LocateError& e) {
    std::cerr << "gridsense: " << e.what() << '\n';
    return 3;
  } catch (const gs::ConfigError& e) {
    std::cerr << "gridsense: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gridsense: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
