#include "pwacert/pwa_model.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace pwacert::core {

using nlohmann::json;

namespace {

constexpr const char* kPoolVersion = "pwacert-pool/1";

std::string dims(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

void PwaModel::validate() const {
  const auto nx = A.rows();
  const std::string where = "model " + std::to_string(id) + ": ";
  if (A.cols() != nx) throw ValidationError(where + "A must be square, got " + dims(A));
  if (B.rows() != nx) throw ValidationError(where + "B has " + dims(B) + ", expected " + std::to_string(nx) + " rows");
  if (f.size() != nx) throw ValidationError(where + "f has wrong length");
  if (C.cols() != nx) throw ValidationError(where + "C has " + dims(C) + ", expected " + std::to_string(nx) + " columns");
  if (centroid_x.size() != nx) throw ValidationError(where + "centroid_x has wrong length");
  if (centroid_u.size() != B.cols()) throw ValidationError(where + "centroid_u has wrong length");
  if (!A.allFinite() || !B.allFinite() || !f.allFinite() || !C.allFinite() || !centroid_x.allFinite() ||
      !centroid_u.allFinite())
    throw ValidationError(where + "non-finite entries");
}

void require_open_loop_stable(const PwaModel& model) {
  const double rho = linalg::spectral_radius(model.A);
  if (!(rho < 1.0))
    throw ValidationError("model " + std::to_string(model.id) + " is not open-loop stable (spectral radius " +
                          std::to_string(rho) + ")");
}

ModelPool::ModelPool(std::vector<PwaModel> models) : models_(std::move(models)) {
  if (models_.empty()) throw ValidationError("model pool is empty");
  for (const auto& m : models_) {
    m.validate();
    if (m.n_x() != n_x() || m.n_u() != n_u() || m.n_y() != n_y())
      throw ValidationError("model " + std::to_string(m.id) + " dimensions differ from the first model");
  }
  for (size_t i = 0; i < models_.size(); ++i)
    for (size_t j = i + 1; j < models_.size(); ++j)
      if (models_[i].centroid_x == models_[j].centroid_x && models_[i].centroid_u == models_[j].centroid_u)
        throw ValidationError("models " + std::to_string(i) + " and " + std::to_string(j) + " share a centroid");
  centroid_outputs_.reserve(models_.size());
  for (const auto& m : models_) centroid_outputs_.push_back(m.centroid_output());
}

size_t ModelPool::select_model(const Vec& y) const {
  if (models_.empty()) throw ValidationError("select_model on an empty pool");
  if (y.size() != n_y()) throw ValidationError("output has wrong dimension");
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < centroid_outputs_.size(); ++i) {
    const double d = (centroid_outputs_[i] - y).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

size_t ModelPool::select_initial(const Vec& x) const {
  if (models_.empty()) throw ValidationError("select_initial on an empty pool");
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < models_.size(); ++i) {
    const double d = (models_[i].C * x - centroid_outputs_[i]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

PwaStep step_pwa(const ModelPool& pool, const Vec& x, const Vec& u, std::optional<size_t> previous) {
  if (pool.empty()) throw ValidationError("step_pwa on an empty pool");
  if (x.size() != pool.n_x() || u.size() != pool.n_u()) throw ValidationError("step_pwa: dimension mismatch");
  if (!x.allFinite() || !u.allFinite()) throw ValidationError("step_pwa: non-finite input");
  size_t active;
  if (previous) {
    active = pool.select_model(pool[*previous].C * x);
  } else {
    active = pool.select_initial(x);
  }
  const auto& m = pool[active];
  return {m.A * x + m.B * u + m.f, m.C * x, active};
}

void Trajectory::validate() const {
  if (states.rows() != inputs.rows() + 1) throw ValidationError("trajectory: states must have one more row than inputs");
  if (outputs.size() != 0 && outputs.rows() != states.rows())
    throw ValidationError("trajectory: outputs must align with states");
  if (!states.allFinite() || !inputs.allFinite() || !outputs.allFinite())
    throw ValidationError("trajectory: non-finite entries");
}

Trajectory simulate_pwa(const ModelPool& pool, const Vec& x0, const Mat& inputs) {
  const auto T = inputs.rows();
  Trajectory traj;
  traj.states.resize(T + 1, pool.n_x());
  traj.inputs = inputs;
  traj.outputs.resize(T + 1, pool.n_y());
  Vec x = x0;
  std::optional<size_t> active;
  traj.states.row(0) = x.transpose();
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto s = step_pwa(pool, x, inputs.row(k).transpose(), active);
    traj.outputs.row(k) = s.y.transpose();
    active = s.active;
    x = s.x_next;
    traj.states.row(k + 1) = x.transpose();
  }
  const size_t last = active ? pool.select_model(pool[*active].C * x) : pool.select_initial(x);
  traj.outputs.row(T) = (pool[last].C * x).transpose();
  return traj;
}

namespace {

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j, Eigen::Index n, const std::string& what) {
  auto data = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != n)
    throw ValidationError(what + " has " + std::to_string(data.size()) + " entries, expected " + std::to_string(n));
  return Eigen::Map<Vec>(data.data(), n);
}

}  // namespace

std::string pool_to_json(const ModelPool& pool) {
  json doc;
  doc["version"] = kPoolVersion;
  doc["n_x"] = pool.n_x();
  doc["n_u"] = pool.n_u();
  doc["n_y"] = pool.n_y();
  json models = json::array();
  for (const auto& m : pool.models()) {
    models.push_back({{"id", m.id},
                      {"A", linalg::to_row_major(m.A)},
                      {"B", linalg::to_row_major(m.B)},
                      {"f", vec_json(m.f)},
                      {"C", linalg::to_row_major(m.C)},
                      {"centroid_x", vec_json(m.centroid_x)},
                      {"centroid_u", vec_json(m.centroid_u)}});
  }
  doc["models"] = std::move(models);
  return doc.dump(1);
}

ModelPool pool_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("pool JSON: ") + e.what());
  }
  try {
    if (doc.at("version").get<std::string>() != kPoolVersion)
      throw ValidationError("pool JSON: unsupported version " + doc.at("version").dump());
    const Eigen::Index nx = doc.at("n_x").get<Eigen::Index>();
    const Eigen::Index nu = doc.at("n_u").get<Eigen::Index>();
    const Eigen::Index ny = doc.at("n_y").get<Eigen::Index>();
    std::vector<PwaModel> models;
    for (const auto& jm : doc.at("models")) {
      PwaModel m;
      m.id = jm.at("id").get<int>();
      m.A = linalg::from_row_major(jm.at("A").get<std::vector<double>>(), nx, nx);
      m.B = linalg::from_row_major(jm.at("B").get<std::vector<double>>(), nx, nu);
      m.f = json_vec(jm.at("f"), nx, "f");
      m.C = linalg::from_row_major(jm.at("C").get<std::vector<double>>(), ny, nx);
      m.centroid_x = json_vec(jm.at("centroid_x"), nx, "centroid_x");
      m.centroid_u = json_vec(jm.at("centroid_u"), nu, "centroid_u");
      models.push_back(std::move(m));
    }
    return ModelPool(std::move(models));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pool JSON: ") + e.what());
  }
}

void save_pool(const ModelPool& pool, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << pool_to_json(pool) << '\n';
}

ModelPool load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return pool_from_json(ss.str());
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto nx = traj.states.cols();
  const auto nu = traj.inputs.cols();
  os << 'k';
  for (Eigen::Index i = 0; i < nx; ++i) os << ",x_" << i;
  for (Eigen::Index i = 0; i < nu; ++i) os << ",u_" << i;
  os << '\n';
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
    os << k;
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << traj.states(k, i);
    for (Eigen::Index i = 0; i < nu; ++i) {
      os << ',';
      if (k < traj.inputs.rows()) os << traj.inputs(k, i);
    }
    os << '\n';
  }
  return os.str();
}

Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("trajectory CSV: missing header");
  Eigen::Index nx = 0, nu = 0;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (cell.rfind("x_", 0) == 0) ++nx;
      else if (cell.rfind("u_", 0) == 0) ++nu;
    }
  }
  std::vector<std::vector<double>> xs, us;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    while (static_cast<Eigen::Index>(cells.size()) < 1 + nx + nu) cells.emplace_back();
    std::vector<double> x, u;
    for (Eigen::Index i = 0; i < nx; ++i) x.push_back(std::stod(cells[static_cast<size_t>(1 + i)]));
    bool has_u = nu > 0 && !cells[static_cast<size_t>(1 + nx)].empty();
    for (Eigen::Index i = 0; has_u && i < nu; ++i) u.push_back(std::stod(cells[static_cast<size_t>(1 + nx + i)]));
    xs.push_back(std::move(x));
    if (has_u) us.push_back(std::move(u));
  }
  Trajectory traj;
  traj.states.resize(static_cast<Eigen::Index>(xs.size()), nx);
  for (size_t k = 0; k < xs.size(); ++k)
    for (Eigen::Index i = 0; i < nx; ++i) traj.states(static_cast<Eigen::Index>(k), i) = xs[k][static_cast<size_t>(i)];
  traj.inputs.resize(static_cast<Eigen::Index>(us.size()), nu);
  for (size_t k = 0; k < us.size(); ++k)
    for (Eigen::Index i = 0; i < nu; ++i) traj.inputs(static_cast<Eigen::Index>(k), i) = us[k][static_cast<size_t>(i)];
  traj.validate();
  return traj;
}

}  // namespace pwacert::core
