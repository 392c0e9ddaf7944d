// Reference implementations kept deliberately naive and independent of the
// library code they check: plain loops over std::vector, no Eigen.
#ifndef R2R_TESTS_ORACLES_HPP
#define R2R_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

struct Web {
  double EA = 2400.0;
  double R = 0.04;
  double J = 0.95;
  double fb = 10.0;
  double L = 1.0;
  double T0 = 0.0;
  double T_end = 0.0;
  double v0 = 0.01;
};

// Term-by-term rates for spans 1..N, with web velocities v_1..v_N.
inline void rates(const Web& w, const std::vector<double>& T, const std::vector<double>& v,
                  const std::vector<double>& u, std::vector<double>& dT,
                  std::vector<double>& dv) {
  const std::size_t n = T.size();
  dT.assign(n, 0.0);
  dv.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v_in = i == 0 ? w.v0 : v[i - 1];
    const double t_in = i == 0 ? w.T0 : T[i - 1];
    const double stretch = (w.EA / w.L) * (v[i] - v_in);
    const double transport = (v_in * t_in - v[i] * T[i]) / w.L;
    dT[i] = stretch + transport;

    const double t_next = i + 1 == n ? w.T_end : T[i + 1];
    const double coupling = (w.R * w.R / w.J) * (t_next - T[i]);
    const double friction = -(w.fb / w.J) * v[i];
    const double drive = (w.R / w.J) * u[i];
    dv[i] = coupling + friction + drive;
  }
}

inline void euler(const Web& w, double dt, std::vector<double>& T, std::vector<double>& v,
                  const std::vector<double>& u) {
  std::vector<double> dT, dv;
  rates(w, T, v, u, dT, dv);
  for (std::size_t i = 0; i < T.size(); ++i) {
    T[i] += dt * dT[i];
    v[i] += dt * dv[i];
  }
}

struct RewardTerms {
  double w_T = 100, w_v = 1000, w_c = 0.1, w_s = 0.5, w_viol = 100, w_succ = 1, lambda = 0.01;
  double lo = 10, hi = 50, tol_T = 0.5, tol_v = 0.001;
};

inline double reward(const RewardTerms& c, const std::vector<double>& T,
                     const std::vector<double>& T_ref, const std::vector<double>& v,
                     const std::vector<double>& v_ref, const std::vector<double>& u,
                     const std::vector<double>& u_prev) {
  const std::size_t n = T.size();
  double se_t = 0, se_v = 0, uu = 0, du = 0, viol = 0;
  bool ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    se_t += (T[i] - T_ref[i]) * (T[i] - T_ref[i]);
    se_v += (v[i] - v_ref[i]) * (v[i] - v_ref[i]);
    uu += u[i] * u[i];
    du += (u[i] - u_prev[i]) * (u[i] - u_prev[i]);
    if (T[i] < c.lo) viol += c.lo - T[i];
    if (T[i] > c.hi) viol += T[i] - c.hi;
    if (std::abs(T[i] - T_ref[i]) >= c.tol_T || std::abs(v[i] - v_ref[i]) >= c.tol_v) ok = false;
  }
  const double dn = static_cast<double>(n);
  const double r = -c.w_T * se_t / dn - c.w_v * se_v / dn - c.w_c * uu - c.w_s * du -
                   c.w_viol * viol + (ok ? c.w_succ : 0.0);
  return c.lambda * r;
}

// Positive root of the scalar Riccati quadratic b^2 P^2 + ((1-a^2) r - q b^2) P - q r = 0.
inline double scalar_dare(double a, double b, double q, double r) {
  const double c = (1.0 - a * a) * r - q * b * b;
  return (-c + std::sqrt(c * c + 4.0 * b * b * q * r)) / (2.0 * b * b);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Discrete 10-90 rise time by scanning a densely sampled signal.
inline double rise_time_by_scan(const std::function<double(double)>& y, double y_final,
                                double t_end, double h) {
  double t10 = -1, t90 = -1;
  for (double t = 0; t <= t_end; t += h) {
    const double v = y(t) / y_final;
    if (t10 < 0 && v >= 0.1) t10 = t;
    if (t90 < 0 && v >= 0.9) {
      t90 = t;
      break;
    }
  }
  return t90 - t10;
}

}  // namespace oracle

#endif  // R2R_TESTS_ORACLES_HPP
