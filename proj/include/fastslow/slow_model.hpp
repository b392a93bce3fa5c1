#pragma once

// Slow-motion coefficient fields Sigma(x), b(x, zeta) and a small registry of
// named models.

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fastslow/error.hpp"
#include "fastslow/linalg.hpp"

namespace fastslow {

struct SlowModel {
  std::string name;
  int d = 1;
  std::function<Mat(const Vec&)> sigma;
  std::function<MatGrad(const Vec&)> sigma_grad;  // optional closed form
  std::function<Vec(const Vec&, const Vec&)> b;
  double L = 1.0;
  bool invertible = true;
  bool symmetric_inverse = true;
  bool constant_sigma = false;
  bool zero_drift = false;
  // Closed-form transform with Dr = Sigma^{-1}; required for d >= 2.
  std::function<Vec(const Vec&)> r;
  std::function<Vec(const Vec&)> r_inv;
  nlohmann::json parameters = nlohmann::json::object();

  MatGrad gradient(const Vec& x) const {
    if (sigma_grad) return sigma_grad(x);
    return finite_difference_gradient(sigma, x, d);
  }

  static MatGrad finite_difference_gradient(const std::function<Mat(const Vec&)>& f, const Vec& x, int d,
                                            double h = 1e-5) {
    MatGrad grad;
    for (int k = 0; k < d; ++k) {
      Vec xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      grad[static_cast<std::size_t>(k)] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return grad;
  }
};

inline double operator_norm(const Mat& m) {
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  const Eigen::MatrixXd dense = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
  return svd.singularValues()(0);
}

// Test grid for model checks: 101 points on [-5, 5] in d = 1, a 9^d lattice on
// [-4, 4]^d otherwise.
inline std::vector<Vec> model_test_grid(int d) {
  std::vector<Vec> grid;
  if (d == 1) {
    for (int i = 0; i <= 100; ++i) grid.push_back(scalar_vec(-5.0 + 0.1 * i));
    return grid;
  }
  const int per_axis = 9;
  int total = 1;
  for (int k = 0; k < d; ++k) total *= per_axis;
  for (int idx = 0; idx < total; ++idx) {
    Vec x(d);
    int rest = idx;
    for (int k = 0; k < d; ++k) {
      x(k) = -4.0 + rest % per_axis;
      rest /= per_axis;
    }
    grid.push_back(x);
  }
  return grid;
}

struct ModelCheck {
  double sigma_sup = 0.0;
  double grad_sup = 0.0;
  double inverse_sup = 0.0;
  double b_sup = 0.0;
  double symmetry_defect = 0.0;
  std::string symmetry_witness;
};

// Samples the bounds of the model on the test grid and the curl condition
// d(Sigma^{-1})_{ij}/dx_k = d(Sigma^{-1})_{ik}/dx_j. `zeta_bound` is the sup
// of the fast process, used for the b check.
inline ModelCheck check_model(const SlowModel& m, double zeta_bound = 1.0) {
  detail::require(m.d >= 1 && m.d <= kMaxDim, "model dimension out of range");
  detail::require(static_cast<bool>(m.sigma), "model '" + m.name + "' has no Sigma");
  detail::require(static_cast<bool>(m.b), "model '" + m.name + "' has no drift b");
  ModelCheck out;
  const auto grid = model_test_grid(m.d);
  std::vector<Vec> zetas;
  for (int k = 0; k < m.d; ++k) {
    Vec z = Vec::Zero(m.d);
    z(k) = zeta_bound;
    zetas.push_back(z);
    zetas.push_back(-z);
  }
  zetas.push_back(Vec::Zero(m.d));
  auto inverse = [&](const Vec& x) -> Mat { return m.sigma(x).inverse(); };
  for (const Vec& x : grid) {
    const Mat s = m.sigma(x);
    detail::require(s.rows() == m.d && s.cols() == m.d, "Sigma has the wrong shape in model '" + m.name + "'");
    out.sigma_sup = std::max(out.sigma_sup, operator_norm(s));
    const MatGrad g = m.gradient(x);
    double grad_sq = 0.0;
    for (int k = 0; k < m.d; ++k) grad_sq += g[static_cast<std::size_t>(k)].squaredNorm();
    out.grad_sup = std::max(out.grad_sup, std::sqrt(grad_sq));
    for (const Vec& z : zetas) out.b_sup = std::max(out.b_sup, m.b(x, z).norm());
    if (m.invertible) {
      const double det = s.determinant();
      detail::require(std::abs(det) > 1e-14, "Sigma is singular in model '" + m.name + "'");
      out.inverse_sup = std::max(out.inverse_sup, operator_norm(s.inverse()));
      if (m.d >= 2) {
        const MatGrad gi = SlowModel::finite_difference_gradient(inverse, x, m.d);
        for (int i = 0; i < m.d; ++i) {
          for (int j = 0; j < m.d; ++j) {
            for (int k = 0; k < m.d; ++k) {
              const double defect =
                  std::abs(gi[static_cast<std::size_t>(k)](i, j) - gi[static_cast<std::size_t>(j)](i, k));
              if (defect > out.symmetry_defect) {
                out.symmetry_defect = defect;
                std::ostringstream w;
                w << "(i=" << i << ", j=" << j << ", k=" << k << ", x=" << x.transpose() << ")";
                out.symmetry_witness = w.str();
              }
            }
          }
        }
      }
    }
  }
  return out;
}

// Enforces the declared bound L and the declared flags.
inline void validate_model(const SlowModel& m, double zeta_bound = 1.0) {
  const ModelCheck c = check_model(m, zeta_bound);
  const double slack = 1.0 + 1e-9;
  detail::require(m.L >= 1.0, "model '" + m.name + "': L must be >= 1");
  detail::require(c.sigma_sup <= m.L * slack, "model '" + m.name + "': |Sigma| exceeds L");
  detail::require(c.grad_sup <= m.L * slack, "model '" + m.name + "': |grad Sigma| exceeds L");
  detail::require(c.b_sup <= m.L * slack, "model '" + m.name + "': |b| exceeds L");
  if (m.invertible) detail::require(c.inverse_sup <= m.L * slack, "model '" + m.name + "': |Sigma^{-1}| exceeds L");
  if (m.symmetric_inverse && m.d >= 2) {
    detail::require(c.symmetry_defect <= 1e-6,
                    "model '" + m.name + "': symmetry of d(Sigma^{-1}) fails at " + c.symmetry_witness);
  }
}

// ---- built-in models ----------------------------------------------------

namespace detail {

inline double param(const nlohmann::json& p, const char* key, double fallback) {
  if (!p.contains(key)) return fallback;
  detail::require(p.at(key).is_number(), std::string("model parameter '") + key + "' must be a number");
  return p.at(key).get<double>();
}

// Smallest L >= 1 that dominates the sampled bounds.
inline void fit_bound(SlowModel& m, double zeta_bound) {
  const ModelCheck c = check_model(m, zeta_bound);
  double l = std::max({1.0, c.sigma_sup, c.grad_sup, c.b_sup, m.invertible ? c.inverse_sup : 0.0});
  m.L = l * (1.0 + 1e-9);
}

}  // namespace detail

// Sigma = s0 I, b = beta (constant vector, broadcast).
inline SlowModel constant_model(int d, double s0, double beta = 0.0) {
  detail::require(s0 != 0.0, "constant model needs a non-zero Sigma");
  SlowModel m;
  m.name = "constant";
  m.d = d;
  m.constant_sigma = true;
  m.zero_drift = beta == 0.0;
  m.sigma = [d, s0](const Vec&) -> Mat { return s0 * Mat::Identity(d, d); };
  m.sigma_grad = [d](const Vec&) {
    MatGrad g;
    for (int k = 0; k < d; ++k) g[static_cast<std::size_t>(k)] = Mat::Zero(d, d);
    return g;
  };
  m.b = [d, beta](const Vec&, const Vec&) -> Vec { return Vec::Constant(d, beta); };
  m.r = [s0](const Vec& x) -> Vec { return x / s0; };
  m.r_inv = [s0](const Vec& y) -> Vec { return s0 * y; };
  m.parameters = {{"sigma", s0}, {"beta", beta}, {"dimension", d}};
  return m;
}

// Sigma = s0 I, b(x, zeta) = -lambda * tanh(x) + gamma * zeta (componentwise);
// bounded and Lipschitz so the global assumptions hold.
inline SlowModel affine_model(int d, double s0, double lambda, double gamma) {
  SlowModel m = constant_model(d, s0, 0.0);
  m.name = "affine";
  m.zero_drift = lambda == 0.0 && gamma == 0.0;
  m.b = [lambda, gamma](const Vec& x, const Vec& z) -> Vec {
    return (-lambda * x.array().tanh() + gamma * z.array()).matrix();
  };
  m.parameters = {{"sigma", s0}, {"lambda", lambda}, {"gamma", gamma}, {"dimension", d}};
  return m;
}

// d = 1: Sigma(x) = a + s sin(x + phase), b(x, zeta) = beta.
inline SlowModel sin_model(double a, double s, double phase = 0.0, double beta = 0.0) {
  detail::require(std::abs(a) > std::abs(s), "sin model needs |a| > |s| so that Sigma stays invertible");
  SlowModel m;
  m.name = "sin";
  m.d = 1;
  m.zero_drift = beta == 0.0;
  m.sigma = [a, s, phase](const Vec& x) -> Mat { return Mat::Constant(1, 1, a + s * std::sin(x(0) + phase)); };
  m.sigma_grad = [s, phase](const Vec& x) {
    MatGrad g;
    g[0] = Mat::Constant(1, 1, s * std::cos(x(0) + phase));
    return g;
  };
  m.b = [beta](const Vec&, const Vec&) -> Vec { return scalar_vec(beta); };
  m.parameters = {{"a", a}, {"s", s}, {"phase", phase}, {"beta", beta}};
  return m;
}

// d = 2: Sigma(x) = diag(a + s sin x1, a + s sin x2). Sigma^{-1} is diagonal
// with the i-th entry depending on x_i only, so the curl condition holds and
// r acts coordinatewise. r is supplied in closed form for a = 2, s = 1, the
// only parameters registered.
inline SlowModel diag_sin_model() {
  SlowModel m;
  m.name = "diag_sin";
  m.d = 2;
  m.zero_drift = true;
  m.sigma = [](const Vec& x) -> Mat {
    Mat s = Mat::Zero(2, 2);
    s(0, 0) = 2.0 + std::sin(x(0));
    s(1, 1) = 2.0 + std::sin(x(1));
    return s;
  };
  m.sigma_grad = [](const Vec& x) {
    MatGrad g;
    g[0] = Mat::Zero(2, 2);
    g[1] = Mat::Zero(2, 2);
    g[0](0, 0) = std::cos(x(0));
    g[1](1, 1) = std::cos(x(1));
    return g;
  };
  m.b = [](const Vec&, const Vec&) -> Vec { return Vec::Zero(2); };
  m.parameters = {{"a", 2.0}, {"s", 1.0}};
  return m;
}

// Antiderivative of 1/(2 + sin u) with G(0) = 0, continuous on the real line.
inline double inverse_two_plus_sin_integral(double u) {
  const double pi = std::numbers::pi;
  const double root3 = std::sqrt(3.0);
  const double branch = std::floor((u + pi) / (2.0 * pi));
  const double v = u - 2.0 * pi * branch;  // in [-pi, pi)
  const double principal = (2.0 / root3) * std::atan((2.0 * std::tan(0.5 * v) + 1.0) / root3);
  const double at_zero = (2.0 / root3) * std::atan(1.0 / root3);
  return principal + branch * (2.0 * pi / root3) - at_zero;
}

// ---- registry -----------------------------------------------------------

using ModelFactory = std::function<SlowModel(const nlohmann::json& parameters)>;

struct ModelRegistryEntry {
  std::string name;
  std::string description;  // canonical text hashed into the content address
  ModelFactory factory;
};

class ModelRegistry {
 public:
  static ModelRegistry& instance() {
    static ModelRegistry registry;
    return registry;
  }

  void add(ModelRegistryEntry entry) {
    std::lock_guard<std::mutex> lock(mutex_);
    entries_[entry.name] = std::move(entry);
  }

  bool contains(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.count(name) != 0;
  }

  const ModelRegistryEntry& entry(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Rejected("unknown model '" + name + "'");
    return it->second;
  }

  SlowModel make(const std::string& name, const nlohmann::json& parameters) const {
    return entry(name).factory(parameters);
  }

  std::vector<std::string> names() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

 private:
  ModelRegistry() {
    auto dim = [](const nlohmann::json& p) {
      const int d = static_cast<int>(detail::param(p, "dimension", 1));
      detail::require(d >= 1 && d <= kMaxDim, "model parameter 'dimension' out of range");
      return d;
    };
    entries_["constant"] = {"constant", "Sigma = sigma * I; b = beta",
                            [dim](const nlohmann::json& p) {
                              SlowModel m = constant_model(dim(p), detail::param(p, "sigma", 1.0),
                                                           detail::param(p, "beta", 0.0));
                              m.L = detail::param(p, "L", 0.0);
                              return m;
                            }};
    entries_["affine"] = {"affine", "Sigma = sigma * I; b(x, z) = -lambda * tanh(x) + gamma * z",
                          [dim](const nlohmann::json& p) {
                            SlowModel m = affine_model(dim(p), detail::param(p, "sigma", 1.0),
                                                       detail::param(p, "lambda", 0.0),
                                                       detail::param(p, "gamma", 0.0));
                            m.L = detail::param(p, "L", 0.0);
                            return m;
                          }};
    entries_["sin"] = {"sin", "d = 1; Sigma(x) = a + s * sin(x + phase); b = beta",
                       [](const nlohmann::json& p) {
                         SlowModel m = sin_model(detail::param(p, "a", 2.0), detail::param(p, "s", 1.0),
                                                 detail::param(p, "phase", 0.0), detail::param(p, "beta", 0.0));
                         m.L = detail::param(p, "L", 0.0);
                         return m;
                       }};
    entries_["diag_sin"] = {"diag_sin", "d = 2; Sigma(x) = diag(2 + sin x1, 2 + sin x2); b = 0",
                            [](const nlohmann::json& p) {
                              SlowModel m = diag_sin_model();
                              m.L = detail::param(p, "L", 0.0);
                              m.r = [](const Vec& x) -> Vec {
                                Vec y(2);
                                y(0) = inverse_two_plus_sin_integral(x(0));
                                y(1) = inverse_two_plus_sin_integral(x(1));
                                return y;
                              };
                              return m;
                            }};
  }

  mutable std::mutex mutex_;
  std::map<std::string, ModelRegistryEntry> entries_;
};

// Plug-in hook for user models.
inline void register_model(const std::string& name, const std::string& description, ModelFactory factory) {
  detail::require(!name.empty(), "register_model: empty name");
  ModelRegistry::instance().add({name, description, std::move(factory)});
}

// Instantiates a registered model; when the parameters carry no L, the bound
// is fitted on the test grid against a fast process of sup `zeta_bound`.
inline SlowModel make_model(const std::string& name, const nlohmann::json& parameters, double zeta_bound) {
  SlowModel m = ModelRegistry::instance().make(name, parameters);
  if (m.L <= 0.0) {
    detail::fit_bound(m, zeta_bound);
    m.L = std::max(m.L, zeta_bound);
  }
  m.parameters = parameters;
  validate_model(m, zeta_bound);
  return m;
}

}  // namespace fastslow
