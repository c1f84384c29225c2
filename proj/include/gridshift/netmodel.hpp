#pragma once

// Network data model: buses, branches, generators, the per-unit case container,
// case-file loading, and the dense network matrices (bus reactance, bus impedance).
//
// Conventions
//   * NetworkCase stores every power quantity in per-unit on base_mva.
//     CaseData (the raw, editable form) stores MW / MVAr exactly as in the files.
//   * Impedances are per-unit in both forms.
//   * Generator cost coefficients are kept in $/MW^2, $/MW, $ and evaluated on MW.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gridshift/error.hpp"

namespace gridshift {

enum class BusKind { slack, pv, pq };

inline std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::slack: return "slack";
    case BusKind::pv: return "pv";
    case BusKind::pq: return "pq";
  }
  return "pq";
}

struct Bus {
  int id = 0;
  BusKind kind = BusKind::pq;
  double v_set = 1.0;  // p.u.
  double load_p = 0.0;
  double load_q = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
};

struct Branch {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double g = 0.0;  // series conductance, r / (r^2 + x^2)
  double b = 0.0;  // series susceptance, -x / (r^2 + x^2)
  double charging = 0.0;  // total line-charging susceptance, p.u.
  double capacity = 0.0;
};

struct Generator {
  int id = 0;
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost_a = 0.0;  // $/MW^2
  double cost_b = 0.0;  // $/MW
  double cost_c = 0.0;  // $

  double cost_mw(double p_mw) const { return cost_a * p_mw * p_mw + cost_b * p_mw + cost_c; }
  double marginal_cost_mw(double p_mw) const { return 2.0 * cost_a * p_mw + cost_b; }
};

inline double series_conductance(double r, double x) { return r / (r * r + x * x); }
inline double series_susceptance(double r, double x) { return -x / (r * r + x * x); }

/// Editable case description in file units (MW, MVAr, p.u. impedance).
struct CaseData {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<double> load_profile;
};

/// Validated, immutable network in per-unit.
class NetworkCase {
 public:
  explicit NetworkCase(const CaseData& data) : base_mva_(data.base_mva) {
    validate_and_convert(data);
  }

  double base_mva() const { return base_mva_; }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Generator>& generators() const { return generators_; }
  const std::vector<double>& load_profile() const { return load_profile_; }

  std::size_t bus_count() const { return buses_.size(); }
  std::size_t branch_count() const { return branches_.size(); }
  std::size_t generator_count() const { return generators_.size(); }

  std::size_t bus_index(int id) const { return lookup(bus_index_, id, "bus"); }
  std::size_t branch_index(int id) const { return lookup(branch_index_, id, "branch"); }
  std::size_t generator_index(int id) const { return lookup(generator_index_, id, "generator"); }
  bool has_bus(int id) const { return bus_index_.count(id) != 0; }
  bool has_generator(int id) const { return generator_index_.count(id) != 0; }
  bool has_branch(int id) const { return branch_index_.count(id) != 0; }

  const Bus& bus(int id) const { return buses_[bus_index(id)]; }
  const Branch& branch(int id) const { return branches_[branch_index(id)]; }
  const Generator& generator(int id) const { return generators_[generator_index(id)]; }

  int slack_bus() const { return buses_[slack_index_].id; }
  std::size_t slack_index() const { return slack_index_; }

  /// Generator indices attached to each bus index.
  const std::vector<std::vector<std::size_t>>& generators_by_bus() const { return gens_at_bus_; }
  bool bus_has_generator(std::size_t bus_idx) const { return !gens_at_bus_[bus_idx].empty(); }

  double to_pu(double mw) const { return mw / base_mva_; }
  double to_mw(double pu) const { return pu * base_mva_; }

  double total_load_p() const {
    double s = 0.0;
    for (const auto& b : buses_) s += b.load_p;
    return s;
  }

  /// Back to file units, e.g. to derive a modified case.
  CaseData data() const {
    CaseData d;
    d.base_mva = base_mva_;
    d.load_profile = load_profile_;
    for (auto b : buses_) {
      b.load_p *= base_mva_;
      b.load_q *= base_mva_;
      d.buses.push_back(b);
    }
    for (auto br : branches_) {
      br.capacity *= base_mva_;
      d.branches.push_back(br);
    }
    for (auto g : generators_) {
      g.p_min *= base_mva_;
      g.p_max *= base_mva_;
      g.q_min *= base_mva_;
      g.q_max *= base_mva_;
      d.generators.push_back(g);
    }
    return d;
  }

  /// Same network with every bus load multiplied by factor.
  NetworkCase with_load_scale(double factor) const {
    CaseData d = data();
    for (auto& b : d.buses) {
      b.load_p *= factor;
      b.load_q *= factor;
    }
    d.load_profile.clear();
    return NetworkCase(d);
  }

  NetworkCase with_branch_capacity(int branch_id, double capacity_mw) const {
    CaseData d = data();
    d.branches[branch_index(branch_id)].capacity = capacity_mw;
    return NetworkCase(d);
  }

 private:
  static std::size_t lookup(const std::unordered_map<int, std::size_t>& m, int id, const char* what) {
    auto it = m.find(id);
    if (it == m.end()) fail(ErrorCode::validation_error, std::string("unknown ") + what + " id " + std::to_string(id));
    return it->second;
  }

  void validate_and_convert(const CaseData& d);

  double base_mva_;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Generator> generators_;
  std::vector<double> load_profile_;
  std::unordered_map<int, std::size_t> bus_index_;
  std::unordered_map<int, std::size_t> branch_index_;
  std::unordered_map<int, std::size_t> generator_index_;
  std::vector<std::vector<std::size_t>> gens_at_bus_;
  std::size_t slack_index_ = 0;
};

/// Breadth-first connectivity check over the branch graph.
inline bool is_connected(std::size_t bus_count, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (bus_count == 0) return true;
  std::vector<std::vector<std::size_t>> adj(bus_count);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(bus_count, false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    for (auto v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        q.push(v);
      }
    }
  }
  return reached == bus_count;
}

inline void NetworkCase::validate_and_convert(const CaseData& d) {
  auto invalid = [](const std::string& msg) { fail(ErrorCode::validation_error, msg); };
  auto finite = [](double v) { return std::isfinite(v); };

  if (!(d.base_mva > 0.0) || !finite(d.base_mva)) invalid("base_mva must be positive");
  if (d.buses.empty()) invalid("case has no buses");

  int slack_count = 0;
  for (std::size_t i = 0; i < d.buses.size(); ++i) {
    Bus b = d.buses[i];
    const std::string tag = "bus " + std::to_string(b.id) + ": ";
    if (bus_index_.count(b.id)) invalid(tag + "duplicate id");
    if (!finite(b.load_p) || !finite(b.load_q)) invalid(tag + "load must be finite");
    if (!(b.v_min > 0.0) || !(b.v_min <= b.v_max)) invalid(tag + "voltage bounds must satisfy 0 < v_min <= v_max");
    if (!(b.v_min <= b.v_set && b.v_set <= b.v_max)) invalid(tag + "v_set outside [v_min, v_max]");
    if (b.kind == BusKind::slack) {
      ++slack_count;
      slack_index_ = i;
    }
    b.load_p /= base_mva_;
    b.load_q /= base_mva_;
    bus_index_.emplace(b.id, i);
    buses_.push_back(b);
  }
  if (slack_count != 1) invalid("case must have exactly one slack bus, found " + std::to_string(slack_count));

  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < d.branches.size(); ++i) {
    Branch br = d.branches[i];
    const std::string tag = "branch " + std::to_string(br.id) + ": ";
    if (branch_index_.count(br.id)) invalid(tag + "duplicate id");
    if (!bus_index_.count(br.from_bus) || !bus_index_.count(br.to_bus)) invalid(tag + "references unknown bus");
    if (br.from_bus == br.to_bus) invalid(tag + "from and to bus are identical");
    if (!(br.x > 0.0) || !finite(br.x)) invalid(tag + "reactance must be positive");
    if (!(br.r >= 0.0) || !finite(br.r)) invalid(tag + "resistance must be non-negative");
    if (!(br.capacity > 0.0)) invalid(tag + "capacity must be positive");
    if (!finite(br.charging)) invalid(tag + "charging must be finite");
    br.g = series_conductance(br.r, br.x);
    br.b = series_susceptance(br.r, br.x);
    br.capacity /= base_mva_;
    branch_index_.emplace(br.id, i);
    edges.emplace_back(bus_index_.at(br.from_bus), bus_index_.at(br.to_bus));
    branches_.push_back(br);
  }

  gens_at_bus_.assign(buses_.size(), {});
  double total_pmax = 0.0;
  for (std::size_t i = 0; i < d.generators.size(); ++i) {
    Generator g = d.generators[i];
    const std::string tag = "generator " + std::to_string(g.id) + ": ";
    if (generator_index_.count(g.id)) invalid(tag + "duplicate id");
    if (!bus_index_.count(g.bus)) invalid(tag + "references unknown bus");
    if (!(g.p_min <= g.p_max)) invalid(tag + "p_min exceeds p_max");
    if (!(g.q_min <= g.q_max)) invalid(tag + "q_min exceeds q_max");
    if (!(g.cost_a >= 0.0)) invalid(tag + "quadratic cost must be non-negative");
    if (!finite(g.cost_b) || !finite(g.cost_c)) invalid(tag + "cost terms must be finite");
    total_pmax += g.p_max;
    g.p_min /= base_mva_;
    g.p_max /= base_mva_;
    g.q_min /= base_mva_;
    g.q_max /= base_mva_;
    generator_index_.emplace(g.id, i);
    gens_at_bus_[bus_index_.at(g.bus)].push_back(i);
    generators_.push_back(g);
  }

  for (double f : d.load_profile) {
    if (!finite(f) || f < 0.0) invalid("load_profile entries must be finite and non-negative");
  }
  load_profile_ = d.load_profile;

  if (!is_connected(buses_.size(), edges)) fail(ErrorCode::disconnected_network, "network graph is not connected");

  double total_load = 0.0;
  for (const auto& b : d.buses) total_load += b.load_p;
  double peak = 1.0;
  if (!load_profile_.empty()) peak = *std::max_element(load_profile_.begin(), load_profile_.end());
  if (total_pmax < peak * total_load) {
    invalid("total p_max " + std::to_string(total_pmax) + " MW below peak load " + std::to_string(peak * total_load) +
            " MW");
  }
}

// ---------------------------------------------------------------------------
// Case files
// ---------------------------------------------------------------------------

enum class CaseFormat { json_case, csv_tables };

namespace detail {

inline BusKind parse_kind(const std::string& s) {
  if (s == "slack" || s == "ref") return BusKind::slack;
  if (s == "pv") return BusKind::pv;
  if (s == "pq") return BusKind::pq;
  fail(ErrorCode::parse_error, "unknown bus kind '" + s + "'");
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) fail(ErrorCode::parse_error, where + ": missing numeric field '" + key + "'");
  return it->get<double>();
}

inline int require_int(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) fail(ErrorCode::parse_error, where + ": missing integer field '" + key + "'");
  return it->get<int>();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::vector<double> parse_profile_json(const nlohmann::json& j) {
  const nlohmann::json* arr = &j;
  if (j.is_object()) {
    auto it = j.find("load_profile");
    if (it == j.end()) fail(ErrorCode::parse_error, "profile document has no 'load_profile' array");
    arr = &*it;
  }
  if (!arr->is_array()) fail(ErrorCode::parse_error, "load_profile must be an array");
  std::vector<double> out;
  for (const auto& v : *arr) {
    if (!v.is_number()) fail(ErrorCode::parse_error, "load_profile entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline CaseData parse_case_data(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::parse_error, "case document must be a JSON object");
  CaseData d;
  d.base_mva = detail::get_or(j, "base_mva", 100.0);
  for (const char* key : {"buses", "branches", "generators"}) {
    if (!j.contains(key) || !j.at(key).is_array()) fail(ErrorCode::parse_error, std::string("missing array '") + key + "'");
  }
  for (const auto& e : j.at("buses")) {
    std::string where = "bus record";
    Bus b;
    b.id = detail::require_int(e, "id", where);
    where = "bus " + std::to_string(b.id);
    b.kind = detail::parse_kind(detail::get_or<std::string>(e, "kind", "pq"));
    b.v_set = detail::get_or(e, "v_set", 1.0);
    b.load_p = detail::get_or(e, "load_p", 0.0);
    b.load_q = detail::get_or(e, "load_q", 0.0);
    b.v_min = detail::get_or(e, "v_min", 0.9);
    b.v_max = detail::get_or(e, "v_max", 1.1);
    d.buses.push_back(b);
  }
  for (const auto& e : j.at("branches")) {
    std::string where = "branch record";
    Branch br;
    br.id = detail::require_int(e, "id", where);
    where = "branch " + std::to_string(br.id);
    br.from_bus = detail::require_int(e, "from", where);
    br.to_bus = detail::require_int(e, "to", where);
    br.r = detail::get_or(e, "r", 0.0);
    br.x = detail::require_number(e, "x", where);
    br.charging = detail::get_or(e, "charging", 0.0);
    br.capacity = detail::require_number(e, "capacity", where);
    d.branches.push_back(br);
  }
  for (const auto& e : j.at("generators")) {
    std::string where = "generator record";
    Generator g;
    g.id = detail::require_int(e, "id", where);
    where = "generator " + std::to_string(g.id);
    g.bus = detail::require_int(e, "bus", where);
    g.p_min = detail::get_or(e, "p_min", 0.0);
    g.p_max = detail::require_number(e, "p_max", where);
    g.q_min = detail::get_or(e, "q_min", -9999.0);
    g.q_max = detail::get_or(e, "q_max", 9999.0);
    g.cost_a = detail::get_or(e, "cost_a", 0.0);
    g.cost_b = detail::get_or(e, "cost_b", 0.0);
    g.cost_c = detail::get_or(e, "cost_c", 0.0);
    d.generators.push_back(g);
  }
  if (j.contains("load_profile")) d.load_profile = parse_profile_json(j.at("load_profile"));
  return d;
}

inline NetworkCase parse_case_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("malformed JSON: ") + e.what());
  }
  try {
    return NetworkCase(parse_case_data(j));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("bad field type: ") + e.what());
  }
}

namespace detail {

/// Minimal header-keyed CSV reader (no quoting; the tables are numeric).
inline std::vector<std::map<std::string, std::string>> read_csv_table(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) {
      auto b = cell.find_first_not_of(" \t\r");
      auto e = cell.find_last_not_of(" \t\r");
      out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    return out;
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto cells = split(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) fail(ErrorCode::parse_error, path.filename().string() + ": ragged row '" + line + "'");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json csv_cell(const std::string& s) {
  if (s.empty()) return nullptr;
  try {
    std::size_t pos = 0;
    if (s.find_first_of(".eE") == std::string::npos) {
      long v = std::stol(s, &pos);
      if (pos == s.size()) return v;
    }
    double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

}  // namespace detail

/// Loads a case from a JSON document or from a directory of CSV tables
/// (buses.csv, branches.csv, generators.csv and optional profile.csv with a 'factor' column).
inline NetworkCase load_case(const std::filesystem::path& path, CaseFormat format = CaseFormat::json_case) {
  if (format == CaseFormat::json_case) return parse_case_json(detail::read_file(path));

  nlohmann::json j;
  j["base_mva"] = 100.0;
  for (const char* table : {"buses", "branches", "generators"}) {
    auto rows = detail::read_csv_table(path / (std::string(table) + ".csv"));
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json rec;
      for (const auto& [k, v] : row) rec[k] = detail::csv_cell(v);
      arr.push_back(rec);
    }
    j[table] = arr;
  }
  if (std::filesystem::exists(path / "profile.csv")) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : detail::read_csv_table(path / "profile.csv")) {
      auto it = row.find("factor");
      if (it == row.end()) fail(ErrorCode::parse_error, "profile.csv needs a 'factor' column");
      arr.push_back(detail::csv_cell(it->second));
    }
    j["load_profile"] = arr;
  }
  try {
    return NetworkCase(parse_case_data(j));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("bad field type: ") + e.what());
  }
}

inline std::vector<double> load_profile_file(const std::filesystem::path& path) {
  try {
    return parse_profile_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("malformed profile: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Network matrices
// ---------------------------------------------------------------------------

/// Inverse of the slack-reduced DC susceptance matrix (built from 1/x),
/// embedded with a zero slack row and column. Indexed by bus index.
struct ReactanceMatrix {
  int slack_bus = 0;
  std::size_t slack_index = 0;
  Eigen::MatrixXd X;
  std::unordered_map<int, std::size_t> index;  // bus id -> row

  double operator()(std::size_t i, std::size_t k) const { return X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)); }
  double at(int bus_i, int bus_k) const { return (*this)(index.at(bus_i), index.at(bus_k)); }
};

/// Bus impedance matrix of the slack-grounded series network. Indexed by bus index.
struct ImpedanceMatrix {
  std::size_t ground_index = 0;
  Eigen::MatrixXcd Z;
  std::unordered_map<int, std::size_t> index;  // bus id -> row

  std::complex<double> operator()(std::size_t i, std::size_t j) const {
    return Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  std::complex<double> at(int bus_i, int bus_j) const { return (*this)(index.at(bus_i), index.at(bus_j)); }
};

/// DC susceptance (B') matrix from 1/x, full size.
inline Eigen::MatrixXd dc_susceptance_matrix(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
  for (const auto& br : c.branches()) {
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    double y = 1.0 / br.x;
    B(f, f) += y;
    B(t, t) += y;
    B(f, t) -= y;
    B(t, f) -= y;
  }
  return B;
}

namespace detail {

/// Removes row/column `skip`, inverts, and re-embeds with zeros. Throws on singularity.
template <typename Matrix>
Matrix reduced_inverse(const Matrix& M, Eigen::Index skip) {
  const Eigen::Index n = M.rows();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != skip) keep.push_back(i);
  const auto m = static_cast<Eigen::Index>(keep.size());
  Matrix R(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) R(a, b) = M(keep[a], keep[b]);
  Eigen::FullPivLU<Matrix> lu(R);
  if (m > 0 && (!lu.isInvertible() || lu.rcond() < 1e-14)) fail(ErrorCode::singular_matrix, "reduced network matrix is singular");
  Matrix inv = m > 0 ? Matrix(lu.inverse()) : Matrix(0, 0);
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) out(keep[a], keep[b]) = inv(a, b);
  return out;
}

}  // namespace detail

inline ReactanceMatrix build_reactance_matrix(const NetworkCase& c, int slack_bus) {
  ReactanceMatrix rm;
  rm.slack_bus = slack_bus;
  rm.slack_index = c.bus_index(slack_bus);
  rm.X = detail::reduced_inverse(dc_susceptance_matrix(c), static_cast<Eigen::Index>(rm.slack_index));
  for (std::size_t i = 0; i < c.bus_count(); ++i) rm.index.emplace(c.buses()[i].id, i);
  return rm;
}

inline ReactanceMatrix build_reactance_matrix(const NetworkCase& c) { return build_reactance_matrix(c, c.slack_bus()); }

inline ImpedanceMatrix build_impedance_matrix(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : c.branches()) {
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    std::complex<double> y(br.g, br.b);
    Y(f, f) += y;
    Y(t, t) += y;
    Y(f, t) -= y;
    Y(t, f) -= y;
  }
  ImpedanceMatrix zm;
  zm.ground_index = c.slack_index();
  zm.Z = detail::reduced_inverse(Y, static_cast<Eigen::Index>(zm.ground_index));
  for (std::size_t i = 0; i < c.bus_count(); ++i) zm.index.emplace(c.buses()[i].id, i);
  return zm;
}

}  // namespace gridshift
