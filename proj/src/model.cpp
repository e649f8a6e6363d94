#include "rkbf/model.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rkbf/csv.hpp"

namespace rkbf {

namespace {

using nlohmann::json;

bool symmetric_within(const Eigen::MatrixXd& a, double tol) {
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double min_eigenvalue(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.selfadjointView<Eigen::Lower>());
  return es.eigenvalues().minCoeff();
}

void check_entries(std::vector<Violation>& out, const Eigen::MatrixXd& a, double bound,
                   const char* name, int node) {
  for (int j = 0; j < a.cols(); ++j)
    for (int i = 0; i < a.rows(); ++i) {
      const double v = a(i, j);
      if (!std::isfinite(v) || std::abs(v) > bound) {
        out.push_back({ErrorCode::NonFiniteEntry, node,
                       std::string(name) + " entry (" + std::to_string(i) + "," +
                           std::to_string(j) + ") = " + format_double(v) +
                           " not finite or exceeds bound " + format_double(bound)});
        return;
      }
    }
}

template <class T>
void check_count(std::vector<Violation>& out, const std::vector<T>& table, int n_nodes,
                 const char* name) {
  if (static_cast<int>(table.size()) != n_nodes)
    out.push_back({ErrorCode::DimensionMismatch, -1,
                   std::string(name) + " has " + std::to_string(table.size()) +
                       " samples, expected " + std::to_string(n_nodes)});
}

}  // namespace

std::string ValidationReport::summary() const {
  std::ostringstream oss;
  for (const auto& v : violations) {
    oss << error_code_name(v.code);
    if (v.node >= 0) oss << " at node " << v.node;
    oss << ": " << v.detail << '\n';
  }
  return oss.str();
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDefiniteR: return "NonPositiveDefiniteR";
    case ErrorCode::AsymmetricCovariance: return "AsymmetricCovariance";
    case ErrorCode::NegativeMu: return "NegativeMu";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::OutOfRangeTime: return "OutOfRangeTime";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::PolicyBoundViolation: return "PolicyBoundViolation";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::NonPositiveDensity: return "NonPositiveDensity";
    case ErrorCode::Blowup: return "Blowup";
    case ErrorCode::PsdViolation: return "PsdViolation";
    case ErrorCode::SingularR: return "SingularR";
    case ErrorCode::IndexOrder: return "IndexOrder";
    case ErrorCode::UnsupportedEstimator: return "UnsupportedEstimator";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::InvalidTilt: return "InvalidTilt";
    case ErrorCode::InsufficientSample: return "InsufficientSample";
  }
  return "UnknownError";
}

ValidationReport validate(const ModelSpec& spec) {
  ValidationReport report;
  auto& out = report.violations;

  if (spec.n < 1 || spec.m < 1)
    out.push_back({ErrorCode::DimensionMismatch, -1,
                   "dimensions n, m must be >= 1, got n=" + std::to_string(spec.n) +
                       " m=" + std::to_string(spec.m)});
  if (!(spec.grid.horizon > 0.0) || spec.grid.n_steps < 1)
    out.push_back({ErrorCode::DimensionMismatch, -1, "grid requires horizon > 0 and n_steps >= 1"});
  if (!out.empty()) return report;

  const int n = spec.n, m = spec.m;
  const int n_nodes = spec.grid.n_nodes();
  const auto& c = spec.coeffs;

  check_count(out, c.F, n_nodes, "F");
  check_count(out, c.f, n_nodes, "f");
  check_count(out, c.G, n_nodes, "G");
  check_count(out, c.g, n_nodes, "g");
  check_count(out, c.Q, n_nodes, "Q");
  check_count(out, c.R, n_nodes, "R");
  if (spec.x0.size() != n)
    out.push_back({ErrorCode::DimensionMismatch, -1, "x0 must have length n"});
  if (spec.mu.size() != m)
    out.push_back({ErrorCode::DimensionMismatch, -1, "mu must have length m"});
  if (!out.empty()) return report;

  for (int i = 0; i < m; ++i)
    if (!(spec.mu(i) >= 0.0))
      out.push_back({ErrorCode::NegativeMu, -1,
                     "mu(" + std::to_string(i) + ") = " + format_double(spec.mu(i))});

  for (int k = 0; k < n_nodes; ++k) {
    auto dims_ok = [&](const Eigen::MatrixXd& a, int rows, int cols, const char* name) {
      if (a.rows() != rows || a.cols() != cols) {
        out.push_back({ErrorCode::DimensionMismatch, k,
                       std::string(name) + " is " + std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) + ", expected " + std::to_string(rows) + "x" +
                           std::to_string(cols)});
        return false;
      }
      return true;
    };
    if (!dims_ok(c.F[k], n, n, "F") || !dims_ok(c.G[k], m, n, "G") || !dims_ok(c.Q[k], n, n, "Q") ||
        !dims_ok(c.R[k], m, m, "R") || c.f[k].size() != n || c.g[k].size() != m) {
      if (c.f[k].size() != n)
        out.push_back({ErrorCode::DimensionMismatch, k, "f has wrong length"});
      if (c.g[k].size() != m)
        out.push_back({ErrorCode::DimensionMismatch, k, "g has wrong length"});
      continue;
    }

    check_entries(out, c.F[k], spec.coeff_bound, "F", k);
    check_entries(out, c.f[k], spec.coeff_bound, "f", k);
    check_entries(out, c.G[k], spec.coeff_bound, "G", k);
    check_entries(out, c.g[k], spec.coeff_bound, "g", k);
    check_entries(out, c.Q[k], spec.coeff_bound, "Q", k);
    check_entries(out, c.R[k], spec.coeff_bound, "R", k);

    const double q_scale = std::max(1.0, c.Q[k].cwiseAbs().maxCoeff());
    if (!symmetric_within(c.Q[k], 1e-12 * q_scale))
      out.push_back({ErrorCode::AsymmetricCovariance, k, "Q is not symmetric"});
    else if (min_eigenvalue(c.Q[k]) < -1e-12 * q_scale)
      out.push_back({ErrorCode::AsymmetricCovariance, k,
                     "Q has eigenvalue " + format_double(min_eigenvalue(c.Q[k])) + " < 0"});

    const double r_scale = std::max(1.0, c.R[k].cwiseAbs().maxCoeff());
    if (!symmetric_within(c.R[k], 1e-12 * r_scale))
      out.push_back({ErrorCode::AsymmetricCovariance, k, "R is not symmetric"});
    else if (min_eigenvalue(c.R[k]) < spec.r_min)
      out.push_back({ErrorCode::NonPositiveDefiniteR, k,
                     "min eigenvalue of R = " + format_double(min_eigenvalue(c.R[k])) + " < r_min = " +
                         format_double(spec.r_min)});
  }
  return report;
}

void require_valid(const ModelSpec& spec) {
  const ValidationReport report = validate(spec);
  if (!report.ok()) fail(ErrorCode::InvalidSpec, "model failed validation:\n" + report.summary());
}

Coeffs eval_coeffs(const ModelSpec& spec, double t) {
  const auto& grid = spec.grid;
  if (!(t >= 0.0) || !(t <= grid.horizon))
    fail(ErrorCode::OutOfRangeTime, "t = " + format_double(t) + " outside [0, " +
                                        format_double(grid.horizon) + "]");
  const double dt = grid.dt();
  int k = static_cast<int>(std::floor(t / dt));
  if (k >= grid.n_steps) k = grid.n_steps;  // t == horizon
  const auto& c = spec.coeffs;

  if (c.interp == Interp::PiecewiseConstantLeft || k == grid.n_steps)
    return {c.F[k], c.G[k], c.Q[k], c.R[k], c.f[k], c.g[k]};

  const double w = (t - grid.node(k)) / dt;
  if (w == 0.0) return {c.F[k], c.G[k], c.Q[k], c.R[k], c.f[k], c.g[k]};
  Coeffs out;
  out.F = (1.0 - w) * c.F[k] + w * c.F[k + 1];
  out.G = (1.0 - w) * c.G[k] + w * c.G[k + 1];
  out.Q = (1.0 - w) * c.Q[k] + w * c.Q[k + 1];
  out.R = (1.0 - w) * c.R[k] + w * c.R[k + 1];
  out.f = (1.0 - w) * c.f[k] + w * c.f[k + 1];
  out.g = (1.0 - w) * c.g[k] + w * c.g[k + 1];
  return out;
}

// ---------------------------------------------------------------------------
// JSON serialization

namespace {

json matrix_to_json(const Eigen::MatrixXd& a) {
  json rows = json::array();
  for (int i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    fail(ErrorCode::ParseError, "field '" + field + "' must be an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      fail(ErrorCode::ParseError, "field '" + field + "' has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number())
        fail(ErrorCode::ParseError, "field '" + field + "' has a non-numeric entry");
      a(i, c) = j[i][c].get<double>();
    }
  }
  return a;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) fail(ErrorCode::ParseError, "field '" + field + "' must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      fail(ErrorCode::ParseError, "field '" + field + "' has a non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

const json& require_field(const json& j, const std::string& field, const std::string& scope) {
  auto it = j.find(field);
  if (it == j.end())
    fail(ErrorCode::ParseError, "missing mandatory field '" + scope + field + "'");
  return *it;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = false;
    for (const char* k : known)
      if (it.key() == k) {
        found = true;
        break;
      }
    if (!found) fail(ErrorCode::ParseError, "unknown field '" + scope + it.key() + "'");
  }
}

// A coefficient entry is either {"constant": <sample>} broadcast to all
// nodes, or {"nodes": [<sample>, ...]} with one sample per grid node.
template <class T, class FromJson>
std::vector<T> table_from_json(const json& j, int n_nodes, const std::string& field,
                               FromJson from) {
  if (!j.is_object())
    fail(ErrorCode::ParseError, "field '" + field + "' must be {\"constant\": ...} or {\"nodes\": [...]}");
  reject_unknown(j, {"constant", "nodes"}, field + ".");
  std::vector<T> out;
  if (j.contains("constant")) {
    out.assign(n_nodes, from(j["constant"], field));
  } else if (j.contains("nodes")) {
    const json& nodes = j["nodes"];
    if (!nodes.is_array())
      fail(ErrorCode::ParseError, "field '" + field + ".nodes' must be an array");
    out.reserve(nodes.size());
    for (const auto& e : nodes) out.push_back(from(e, field));
  } else {
    fail(ErrorCode::ParseError, "field '" + field + "' needs 'constant' or 'nodes'");
  }
  return out;
}

}  // namespace

ModelSpec parse_spec_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, e.what());
  }
  if (!j.is_object()) fail(ErrorCode::ParseError, "model spec must be a JSON object");
  reject_unknown(j,
                 {"n", "m", "horizon", "n_steps", "interpolation", "coefficients", "x0", "mu",
                  "r_min", "coeff_bound"},
                 "");

  ModelSpec spec;
  spec.n = require_field(j, "n", "").get<int>();
  spec.m = require_field(j, "m", "").get<int>();
  spec.grid.horizon = require_field(j, "horizon", "").get<double>();
  spec.grid.n_steps = require_field(j, "n_steps", "").get<int>();

  if (j.contains("interpolation")) {
    const std::string mode = j["interpolation"].get<std::string>();
    if (mode == "piecewise-constant-left")
      spec.coeffs.interp = Interp::PiecewiseConstantLeft;
    else if (mode == "piecewise-linear")
      spec.coeffs.interp = Interp::PiecewiseLinear;
    else
      fail(ErrorCode::ParseError, "field 'interpolation' must be 'piecewise-constant-left' or 'piecewise-linear'");
  }

  const json& co = require_field(j, "coefficients", "");
  reject_unknown(co, {"F", "f", "G", "g", "Q", "R"}, "coefficients.");
  const int n_nodes = spec.grid.n_steps + 1;
  auto mat = [](const json& e, const std::string& f) { return matrix_from_json(e, f); };
  auto vec = [](const json& e, const std::string& f) { return vector_from_json(e, f); };
  spec.coeffs.F = table_from_json<Eigen::MatrixXd>(require_field(co, "F", "coefficients."), n_nodes, "coefficients.F", mat);
  spec.coeffs.f = table_from_json<Eigen::VectorXd>(require_field(co, "f", "coefficients."), n_nodes, "coefficients.f", vec);
  spec.coeffs.G = table_from_json<Eigen::MatrixXd>(require_field(co, "G", "coefficients."), n_nodes, "coefficients.G", mat);
  spec.coeffs.g = table_from_json<Eigen::VectorXd>(require_field(co, "g", "coefficients."), n_nodes, "coefficients.g", vec);
  spec.coeffs.Q = table_from_json<Eigen::MatrixXd>(require_field(co, "Q", "coefficients."), n_nodes, "coefficients.Q", mat);
  spec.coeffs.R = table_from_json<Eigen::MatrixXd>(require_field(co, "R", "coefficients."), n_nodes, "coefficients.R", mat);

  spec.x0 = vector_from_json(require_field(j, "x0", ""), "x0");
  spec.mu = vector_from_json(require_field(j, "mu", ""), "mu");
  if (j.contains("r_min")) spec.r_min = j["r_min"].get<double>();
  if (j.contains("coeff_bound")) spec.coeff_bound = j["coeff_bound"].get<double>();
  return spec;
}

std::string spec_to_json(const ModelSpec& spec) {
  json j;
  j["n"] = spec.n;
  j["m"] = spec.m;
  j["horizon"] = spec.grid.horizon;
  j["n_steps"] = spec.grid.n_steps;
  j["interpolation"] = spec.coeffs.interp == Interp::PiecewiseConstantLeft
                           ? "piecewise-constant-left"
                           : "piecewise-linear";
  json co;
  auto mat_nodes = [](const std::vector<Eigen::MatrixXd>& t) {
    json nodes = json::array();
    for (const auto& a : t) nodes.push_back(matrix_to_json(a));
    return json{{"nodes", std::move(nodes)}};
  };
  auto vec_nodes = [](const std::vector<Eigen::VectorXd>& t) {
    json nodes = json::array();
    for (const auto& v : t) nodes.push_back(vector_to_json(v));
    return json{{"nodes", std::move(nodes)}};
  };
  co["F"] = mat_nodes(spec.coeffs.F);
  co["f"] = vec_nodes(spec.coeffs.f);
  co["G"] = mat_nodes(spec.coeffs.G);
  co["g"] = vec_nodes(spec.coeffs.g);
  co["Q"] = mat_nodes(spec.coeffs.Q);
  co["R"] = mat_nodes(spec.coeffs.R);
  j["coefficients"] = std::move(co);
  j["x0"] = vector_to_json(spec.x0);
  j["mu"] = vector_to_json(spec.mu);
  j["r_min"] = spec.r_min;
  j["coeff_bound"] = spec.coeff_bound;
  return j.dump(2) + "\n";
}

ModelSpec load_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream oss;
  oss << in.rdbuf();
  return parse_spec_json(oss.str());
}

void save_spec(const ModelSpec& spec, const std::string& path) {
  write_file_atomic(path, spec_to_json(spec));
}

ModelSpec make_constant_spec(int n, int m, double horizon, int n_steps, const Eigen::MatrixXd& F,
                             const Eigen::VectorXd& f, const Eigen::MatrixXd& G,
                             const Eigen::VectorXd& g, const Eigen::MatrixXd& Q,
                             const Eigen::MatrixXd& R, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& mu) {
  ModelSpec spec;
  spec.n = n;
  spec.m = m;
  spec.grid = {horizon, n_steps};
  const int nodes = spec.grid.n_nodes();
  spec.coeffs.F.assign(nodes, F);
  spec.coeffs.f.assign(nodes, f);
  spec.coeffs.G.assign(nodes, G);
  spec.coeffs.g.assign(nodes, g);
  spec.coeffs.Q.assign(nodes, Q);
  spec.coeffs.R.assign(nodes, R);
  spec.x0 = x0;
  spec.mu = mu;
  return spec;
}

ModelSpec make_scalar_spec(double horizon, int n_steps, double F, double f, double G, double g,
                           double Q, double R, double x0, double mu) {
  auto m1 = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
  auto v1 = [](double v) { return Eigen::VectorXd::Constant(1, v); };
  return make_constant_spec(1, 1, horizon, n_steps, m1(F), v1(f), m1(G), v1(g), m1(Q), m1(R),
                            v1(x0), v1(mu));
}

}  // namespace rkbf
