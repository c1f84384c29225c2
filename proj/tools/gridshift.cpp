// gridshift command line: power flow, OPF, GSDF tables, precision report, congestion
// management over a load profile, and a report that merges management artifacts.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gridshift/congestion.hpp"
#include "gridshift/io.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/opf.hpp"
#include "gridshift/powerflow.hpp"
#include "gridshift/sensitivity.hpp"

#ifndef GRIDSHIFT_FIXTURE_DIR
#define GRIDSHIFT_FIXTURE_DIR "fixtures"
#endif

namespace fs = std::filesystem;
using namespace gridshift;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path fixture_dir() {
  if (const char* env = std::getenv("GRIDSHIFT_FIXTURES"); env && *env) return env;
  return GRIDSHIFT_FIXTURE_DIR;
}

// A bare name that is not found relative to the working directory is looked up in the
// fixture directory.
fs::path resolve_input(const std::string& arg, const char* what) {
  fs::path p(arg);
  if (fs::exists(p)) return p;
  if (p.is_relative()) {
    auto q = fixture_dir() / p;
    if (fs::exists(q)) return q;
    if (!p.has_extension() && fs::exists(q.replace_extension(".json"))) return q;
  }
  throw UsageError(std::string(what) + " not found: " + arg);
}

NetworkCase read_case(const std::string& arg, const std::string& profile = {}) {
  auto path = resolve_input(arg, "case");
  auto fmt = fs::is_directory(path) ? CaseFormat::csv_tables : CaseFormat::json_case;
  NetworkCase c = load_case(path, fmt);
  if (profile.empty()) return c;
  CaseData d = c.data();
  d.load_profile = load_profile_file(resolve_input(profile, "profile"));
  return NetworkCase(d);
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_text_file(out, text);
}

FlowModel parse_model(const std::string& s) {
  if (s == "dc") return FlowModel::dc;
  if (s == "linac") return FlowModel::linac;
  return FlowModel::ac;
}

void print_error(const std::string& code, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cout << j.dump() << "\n";
}

std::map<std::string, std::string> csv_row_map(const std::vector<std::string>& header, const std::string& line) {
  std::map<std::string, std::string> m;
  std::stringstream ss(line);
  std::string cell;
  for (std::size_t i = 0; std::getline(ss, cell, ','); ++i)
    if (i < header.size()) m[header[i]] = cell;
  return m;
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot read " + p.string());
  std::string line;
  std::vector<std::map<std::string, std::string>> rows;
  if (!std::getline(in, line)) return rows;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(csv_row_map(header, line));
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridshift: linearized AC power flow, OPF and generation shift factors"};
  app.require_subcommand(1);

  std::string case_arg, out, model = "linac", method = "dc", theta = "simulated", anchor = "voltage", profile, out_dir, in_dir;
  std::optional<std::size_t> hour;
  int target = 0, balancing = 0, line = 7;
  double bound = 0.0, tol = 1e-8, delta = 0.1;

  auto add_case = [&](CLI::App* s) { s->add_option("--case", case_arg, "Case file (JSON) or CSV table directory; bare names are looked up in GRIDSHIFT_FIXTURES")->required(); };
  auto add_tol = [&](CLI::App* s) { s->add_option("--tol", tol, "Solver tolerance, p.u.")->check(CLI::Range(1e-12, 1e-2)); };

  auto* pf = app.add_subcommand("powerflow", "Solve one snapshot at the OPF dispatch and write solution.json");
  add_case(pf);
  pf->add_option("--model", model, "Flow model")->check(CLI::IsMember({"dc", "linac", "ac"}));
  pf->add_option("--hour", hour, "Profile hour (default: base load)");
  pf->add_option("--out", out, "Output JSON (default stdout)");
  add_tol(pf);

  auto* opf = app.add_subcommand("opf", "Solve the optimal power flow and write solution.json");
  add_case(opf);
  opf->add_option("--model", model, "Flow model")->check(CLI::IsMember({"dc", "linac"}));
  opf->add_option("--hour", hour, "Profile hour (default: base load)");
  opf->add_option("--out", out, "Output JSON (default stdout)");
  add_tol(opf);

  auto* gs = app.add_subcommand("gsdf", "GSDF table for one trade: branch_id,from,to,gsdf");
  add_case(gs);
  gs->add_option("--target", target, "Target generator id")->required();
  gs->add_option("--balancing", balancing, "Balancing generator id")->required();
  gs->add_option("--method", method, "dc, gen (generalized) or ac (AC benchmark)")->check(CLI::IsMember({"dc", "gen", "ac"}));
  gs->add_option("--theta-path", theta, "Angle term of the generalized GSDF")->check(CLI::IsMember({"simulated", "reactance"}));
  gs->add_option("--anchor", anchor, "Reactive anchoring of the generalized GSDF")->check(CLI::IsMember({"injection", "voltage"}));
  gs->add_option("--delta", delta, "Perturbation, MW")->check(CLI::Range(1e-6, 100.0));
  gs->add_option("--out", out, "Output CSV (default stdout)");

  auto* pr = app.add_subcommand("precision", "DC, generalized and AC GSDF side by side for one trade");
  add_case(pr);
  pr->add_option("--target", target, "Target generator id")->required();
  pr->add_option("--balancing", balancing, "Balancing generator id")->required();
  pr->add_option("--theta-path", theta, "Angle term of the generalized GSDF")->check(CLI::IsMember({"simulated", "reactance"}));
  pr->add_option("--out", out, "Output CSV (default stdout)");

  auto* mg = app.add_subcommand("manage", "Congestion management over the load profile");
  add_case(mg);
  mg->add_option("--line", line, "Managed branch id");
  mg->add_option("--bound", bound, "Managed branch limit, MW")->required()->check(CLI::PositiveNumber);
  mg->add_option("--profile", profile, "Load profile file replacing the case's own");
  mg->add_option("--out-dir", out_dir, "Directory for timeline.csv, actions.csv, volatility.json")->required();

  auto* rp = app.add_subcommand("report", "Merge manage artifacts into one per-hour table");
  rp->add_option("--in-dir", in_dir, "Directory written by manage")->required();
  rp->add_option("--out", out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    SolverOptions sopt;
    sopt.tol = tol;
    OpfOptions oopt;
    oopt.tol = std::min(tol, oopt.tol);

    if (pf->parsed() || opf->parsed()) {
      auto c = read_case(case_arg);
      OpfModel m(c);
      OpfProblem p;
      p.model = model == "dc" ? FlowModel::dc : FlowModel::linac;
      p.hour = hour;
      OpfSolution s = expect_optimal(m.solve(p, oopt));
      nlohmann::json j;
      if (opf->parsed()) {
        j = solution_to_json(c, s.flows);
        j["status"] = std::string(to_string(s.status));
        j["cost"] = s.cost;
        j["load_scale"] = s.load_scale;
        nlohmann::json gens = nlohmann::json::array();
        for (std::size_t g = 0; g < c.generator_count(); ++g)
          gens.push_back({{"id", c.generators()[g].id}, {"p_mw", s.p[static_cast<Eigen::Index>(g)]}, {"q_mvar", s.q[static_cast<Eigen::Index>(g)]}});
        j["generators"] = gens;
      } else {
        auto inj = bus_injections_mw(c, s.p, s.load_scale);
        auto q = bus_load_q_mvar(c, s.load_scale);
        PowerFlowSolution sol;
        switch (parse_model(model)) {
          case FlowModel::dc: sol = solve_dc(c, inj); break;
          case FlowModel::linac: sol = solve_linac(c, inj, q, sopt); break;
          case FlowModel::ac: sol = solve_ac_newton(c, inj, q, sopt); break;
        }
        if (!sol.converged) fail(ErrorCode::non_convergence, "power flow did not converge");
        j = solution_to_json(c, sol);
        j["load_scale"] = s.load_scale;
      }
      emit(out, j.dump(2) + "\n");
      return 0;
    }

    GsdfOptions gopt;
    gopt.theta_path = theta == "reactance" ? ThetaPath::reactance : ThetaPath::simulated;
    gopt.reactive = anchor == "voltage" ? ReactiveAnchor::voltage : ReactiveAnchor::injection;
    gopt.delta_mw = delta;
    gopt.epsilon_mw = std::min(gopt.epsilon_mw, delta / 10.0);

    if (gs->parsed()) {
      auto c = read_case(case_arg);
      TradePair t{target, balancing};
      GsdfTable tab;
      if (method == "dc") {
        tab = gsdf_dc(c, t);
      } else {
        OpfModel m(c);
        OpfProblem p;
        OpfSolution ref = expect_optimal(m.solve(p, GsdfOptions::anchored_opf_defaults()));
        tab = method == "gen" ? gsdf_generalized(m, t, ref, gopt) : gsdf_ac_benchmark(c, t, ref, delta);
      }
      CsvWriter w({"branch_id", "from", "to", "gsdf"});
      for (std::size_t k = 0; k < c.branch_count(); ++k) {
        const auto& br = c.branches()[k];
        w.row({std::to_string(br.id), std::to_string(br.from_bus), std::to_string(br.to_bus), fmt6(tab.values[static_cast<Eigen::Index>(k)])});
      }
      emit(out, w.str());
      return 0;
    }

    if (pr->parsed()) {
      auto c = read_case(case_arg);
      auto rep = precision_report(c, {target, balancing}, gopt);
      emit(out, rep.to_csv());
      if (!out.empty() && out != "-")
        std::cout << "sum|dc-ac| " << fmt6(rep.dc_abs_dev) << "  sum|generalized-ac| " << fmt6(rep.generalized_abs_dev) << "\n";
      return 0;
    }

    if (mg->parsed()) {
      auto c = read_case(case_arg, profile);
      if (!c.has_branch(line)) throw UsageError("no branch " + std::to_string(line) + " in case");
      auto r = simulate_horizon(c, line, bound);
      fs::create_directories(out_dir);
      write_text_file(fs::path(out_dir) / "timeline.csv", timeline_csv(r));
      write_text_file(fs::path(out_dir) / "actions.csv", actions_csv(r.management));
      write_text_file(fs::path(out_dir) / "volatility.json", volatility_json(r).dump(2) + "\n");
      std::cout << "vol " << fmt6(r.volatility.vol_percent) << " %  congested hours " << volatility_json(r)["congested_hours"].get<int>()
                << (r.management.converged ? "" : "  (some hours failed)") << "\n";
      return 0;
    }

    if (rp->parsed()) {
      fs::path dir(in_dir);
      for (const char* f : {"timeline.csv", "actions.csv", "volatility.json"})
        if (!fs::exists(dir / f)) throw UsageError(std::string("missing ") + f + " in " + in_dir);
      auto timeline = read_csv(dir / "timeline.csv");
      auto actions = read_csv(dir / "actions.csv");
      nlohmann::json vol = nlohmann::json::parse(gridshift::detail::read_file(dir / "volatility.json"));
      std::map<std::string, std::pair<double, std::string>> per_hour;  // shift, generator moves
      for (const auto& a : actions) {
        auto& e = per_hour[a.at("hour")];
        e.first += std::stod(a.at("shift_mw"));
        if (!e.second.empty()) e.second += ' ';
        e.second += "G" + a.at("target") + ">G" + a.at("balancing");
      }
      CsvWriter w({"hour", "S_t", "pre_flow", "post_flow", "bound", "margin", "shift_mw", "moves", "status"});
      for (const auto& h : timeline) {
        auto it = per_hour.find(h.at("hour"));
        double shift = it == per_hour.end() ? 0.0 : it->second.first;
        double margin = std::stod(h.at("bound")) - std::stod(h.at("post_flow"));
        w.row({h.at("hour"), h.at("S_t"), h.at("pre_flow"), h.at("post_flow"), h.at("bound"), fmt6(margin), fmt6(shift),
               it == per_hour.end() ? "" : it->second.second, h.at("status")});
      }
      emit(out, w.str());
      if (!out.empty() && out != "-")
        std::cout << "vol " << fmt6(vol.at("vol_percent").get<double>()) << " %  congested hours " << vol.at("congested_hours").get<int>() << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    print_error(std::string(to_string(e.code())), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    print_error("parse_error", e.what());
    return 1;
  } catch (const std::out_of_range& e) {
    print_error("parse_error", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    print_error("parse_error", e.what());
    return 1;
  }
  return 2;
}
