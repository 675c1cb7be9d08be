#pragma once

// Wave-function propagation on the lattice, four ways:
//   pathsum      repeated one-step transfer matrix = sum over all lattice paths
//   cn           Crank-Nicolson finite differences (unitary reference)
//   free-kernel  closed-form free-particle kernel over the whole interval
//   imaginary    t -> -i tau diffusion with renormalization every step
//
// Dirichlet edges throughout: amplitude outside [x_min, x_max] is zero.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajcoh/action.hpp"
#include "trajcoh/lattice.hpp"

namespace trajcoh {

enum class Method { pathsum, cn, free_kernel, imaginary };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::pathsum: return "pathsum";
    case Method::cn: return "cn";
    case Method::free_kernel: return "free-kernel";
    case Method::imaginary: return "imaginary";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "pathsum") return Method::pathsum;
  if (s == "cn") return Method::cn;
  if (s == "free-kernel") return Method::free_kernel;
  if (s == "imaginary") return Method::imaginary;
  throw ValidationError("unknown method '" + std::string(s) +
                        "' (expected pathsum|cn|free-kernel|imaginary)");
}

using StepObserver = std::function<void(std::size_t step, const WaveFunctionField&)>;
using LogSink = std::function<void(std::string_view)>;

/// One-step kernel, entry(i, j) = amplitude for hopping from cell j to cell i.
struct PropagatorMatrix {
  std::size_t n = 0;
  std::vector<Complex> entries;  // row-major, already multiplied by normalization
  Method method = Method::pathsum;
  Complex normalization;         // C, shared by every entry
  double lattice_correction = 1.0;

  Complex operator()(std::size_t i, std::size_t j) const {
    return entries[i * n + j];
  }

  std::vector<Complex> apply(const std::vector<Complex>& psi) const {
    std::vector<Complex> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Complex* row = entries.data() + i * n;
      Complex acc{};
      for (std::size_t j = 0; j < n; ++j) acc += row[j] * psi[j];
      out[i] = acc;
    }
    return out;
  }
};

struct PathSumNormalization {
  Complex continuum;          // sqrt(m / (2 pi i hbar dt)) dx
  double lattice_correction;  // multiplies the continuum value
  Complex value() const { return continuum * lattice_correction; }
};

/// Per-step constant C.  Starts from the continuum value and rescales it so
/// the free one-step matrix keeps the norm of a zero-momentum wave centered
/// mid-grid (Gaussian envelope, n_x/16 cells wide).
inline PathSumNormalization pathsum_normalization(const PhysicalConstants& c,
                                                  const SpaceTimeGrid& grid) {
  const double dt = grid.dt();
  const double dx = grid.dx();
  const Complex continuum =
      std::sqrt(c.mass / (kTwoPi * c.hbar * dt)) * dx * std::polar(1.0, -kPi / 4);
  const std::size_t n = grid.n_x();
  const double center = 0.5 * static_cast<double>(n - 1);
  const double width = std::max(static_cast<double>(n) / 16.0, 2.0);
  std::vector<double> env(n);
  double in = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double u = (static_cast<double>(j) - center) / width;
    env[j] = std::exp(-0.5 * u * u);
    in += env[j] * env[j];
  }
  const double a = c.mass * dx * dx / (2.0 * c.hbar * dt);
  double out = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Complex acc{};
    for (std::size_t j = 0; j < n; ++j) {
      const double h = static_cast<double>(i) - static_cast<double>(j);
      acc += std::polar(env[j], a * h * h);
    }
    out += std::norm(continuum * acc);
  }
  if (!(out > 0.0) || !std::isfinite(out))
    throw NumericError("path-sum normalization is degenerate on this grid");
  return {continuum, std::sqrt(in / out)};
}

/// Transfer matrix for the step from slice `step` to `step + 1`.
inline PropagatorMatrix transfer_matrix(const LagrangianSpec& lag,
                                        const SpaceTimeGrid& grid,
                                        std::size_t step,
                                        const PathSumNormalization& norm) {
  const std::size_t n = grid.n_x();
  const double hbar = lag.constants.hbar;
  PropagatorMatrix k;
  k.n = n;
  k.method = Method::pathsum;
  k.normalization = norm.value();
  k.lattice_correction = norm.lattice_correction;
  k.entries.resize(n * n);
  // Hard-wall cells neither emit nor receive amplitude during the step.
  const double tm = step_midtime(grid, step);
  std::vector<bool> wall(n);
  for (std::size_t i = 0; i < n; ++i)
    wall[i] = !std::isfinite(lag.cell_potential(grid, i, tm));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (wall[i] || wall[j]) continue;
      const double s = segment_action(lag, grid, static_cast<double>(j),
                                      static_cast<double>(i), step);
      k.entries[i * n + j] =
          std::isfinite(s) ? k.normalization * std::polar(1.0, s / hbar)
                           : Complex{};
    }
  return k;
}

inline PropagatorMatrix transfer_matrix(const LagrangianSpec& lag,
                                        const SpaceTimeGrid& grid,
                                        std::size_t step = 0) {
  return transfer_matrix(lag, grid, step,
                         pathsum_normalization(lag.constants, grid));
}

namespace detail {

inline void require_initial(const WaveFunctionField& psi0,
                            const SpaceTimeGrid& grid, const char* who) {
  psi0.validate();
  if (!(psi0.grid == grid))
    throw ValidationError(std::string(who) + ": field is on a different grid");
  if (psi0.time_index != 0)
    throw ValidationError(std::string(who) + ": initial field must be at time_index 0");
}

inline void require_finite(const std::vector<Complex>& v, const char* who,
                           std::size_t step) {
  for (const auto& a : v)
    if (!std::isfinite(a.real()) || !std::isfinite(a.imag()))
      throw NumericError(std::string(who) + ": non-finite amplitude at step " +
                         std::to_string(step));
}

/// Key identifying steps that share a potential (barrier on/off).
inline int potential_phase(const LagrangianSpec& lag, const SpaceTimeGrid& grid,
                           std::size_t step) {
  if (const auto* b = std::get_if<BarrierPotential>(&lag.potential)) {
    const double t = step_midtime(grid, step);
    return (t >= b->t_on && t < b->t_off) ? 1 : 0;
  }
  return 0;
}

/// Solves a x_{i-1} + b x_i + c x_{i+1} = r in place (r becomes x).
inline void solve_tridiagonal(std::vector<Complex>& a, std::vector<Complex>& b,
                              std::vector<Complex>& c, std::vector<Complex>& r,
                              const char* who, std::size_t step) {
  const std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(b[i - 1]) == 0.0)
      throw NumericError(std::string(who) + ": singular solve at step " +
                         std::to_string(step));
    const Complex w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    r[i] -= w * r[i - 1];
  }
  if (std::abs(b[n - 1]) == 0.0)
    throw NumericError(std::string(who) + ": singular solve at step " +
                       std::to_string(step));
  r[n - 1] /= b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) r[i] = (r[i] - c[i] * r[i + 1]) / b[i];
}

}  // namespace detail

struct PathSumOptions {
  LogSink log;
  StepObserver observer;
};

/// Applies the transfer matrix n_t times: the sum over every lattice path of
/// C^{n_t} exp(i S / hbar) psi0(start).
inline WaveFunctionField pathsum_propagate(const WaveFunctionField& psi0,
                                           const LagrangianSpec& lag,
                                           const SpaceTimeGrid& grid,
                                           const PathSumOptions& opt = {}) {
  detail::require_initial(psi0, grid, "pathsum_propagate");
  lag.validate(grid);
  const auto norm = pathsum_normalization(lag.constants, grid);
  if (opt.log)
    opt.log("pathsum: lattice normalization correction " +
            std::to_string(norm.lattice_correction) + " applied to C");

  std::optional<PropagatorMatrix> cached[2];
  std::vector<Complex> psi = psi0.amplitudes;
  for (std::size_t k = 0; k < grid.n_t(); ++k) {
    const int key = detail::potential_phase(lag, grid, k);
    if (!cached[key]) cached[key] = transfer_matrix(lag, grid, k, norm);
    psi = cached[key]->apply(psi);
    detail::require_finite(psi, "pathsum_propagate", k + 1);
    if (opt.observer) opt.observer(k + 1, {grid, k + 1, psi});
  }
  return {grid, grid.n_t(), std::move(psi)};
}

namespace detail {

/// Shared tridiagonal stepping for real and imaginary time.  In real time the
/// step solves (1 + i dt H / 2hbar) psi' = (1 - i dt H / 2hbar) psi; in
/// imaginary time (1 + dtau H / hbar) psi' = psi followed by renormalization.
inline WaveFunctionField tridiagonal_evolve(const WaveFunctionField& psi0,
                                            const LagrangianSpec& lag,
                                            const SpaceTimeGrid& grid,
                                            bool imaginary,
                                            const StepObserver& observer,
                                            const char* who) {
  require_initial(psi0, grid, who);
  lag.validate(grid);
  const std::size_t n = grid.n_x();
  const double hbar = lag.constants.hbar;
  const double m = lag.constants.mass;
  const double dt = grid.dt();
  const double hop = -hbar * hbar / (2.0 * m * grid.dx() * grid.dx());

  std::vector<Complex> psi = psi0.amplitudes;
  std::vector<Complex> a(n), b(n), c(n), r(n);
  std::vector<double> v(n);
  std::vector<bool> wall(n);
  for (std::size_t k = 0; k < grid.n_t(); ++k) {
    const double tm = step_midtime(grid, k);
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = lag.cell_potential(grid, i, tm);
      wall[i] = !std::isfinite(vi);
      v[i] = wall[i] ? 0.0 : vi;
      if (wall[i]) psi[i] = Complex{};
    }
    // alpha multiplies H on the implicit side.
    const Complex alpha = imaginary ? Complex(dt / hbar, 0.0)
                                    : Complex(0.0, dt / (2.0 * hbar));
    for (std::size_t i = 0; i < n; ++i) {
      const double diag = -2.0 * hop + v[i];
      if (wall[i]) {
        a[i] = c[i] = Complex{};
        b[i] = 1.0;
        r[i] = Complex{};
        continue;
      }
      a[i] = (i > 0) ? alpha * hop : Complex{};
      c[i] = (i + 1 < n) ? alpha * hop : Complex{};
      b[i] = 1.0 + alpha * diag;
      if (imaginary) {
        r[i] = psi[i];
      } else {
        Complex hpsi = diag * psi[i];
        if (i > 0) hpsi += hop * psi[i - 1];
        if (i + 1 < n) hpsi += hop * psi[i + 1];
        r[i] = psi[i] - alpha * hpsi;
      }
    }
    solve_tridiagonal(a, b, c, r, who, k + 1);
    psi.swap(r);
    require_finite(psi, who, k + 1);
    if (imaginary) {
      double s = 0.0;
      for (const auto& z : psi) s += std::norm(z);
      s *= grid.dx();
      if (!(s > 0.0))
        throw NumericError(std::string(who) + ": field vanished at step " +
                           std::to_string(k + 1));
      const double inv = 1.0 / std::sqrt(s);
      for (auto& z : psi) z *= inv;
    }
    if (observer) observer(k + 1, {grid, k + 1, psi});
  }
  return {grid, grid.n_t(), std::move(psi)};
}

}  // namespace detail

/// Crank-Nicolson; unitary up to round-off when no hard walls are present.
inline WaveFunctionField schrodinger_propagate(const WaveFunctionField& psi0,
                                               const LagrangianSpec& lag,
                                               const SpaceTimeGrid& grid,
                                               const StepObserver& observer = {}) {
  return detail::tridiagonal_evolve(psi0, lag, grid, false, observer,
                                    "schrodinger_propagate");
}

/// Backward-Euler heat flow in imaginary time, renormalized every step.
/// Repeated application converges toward the ground state.
inline WaveFunctionField imaginary_time_propagate(
    const WaveFunctionField& psi0, const LagrangianSpec& lag,
    const SpaceTimeGrid& grid, const StepObserver& observer = {}) {
  return detail::tridiagonal_evolve(psi0, lag, grid, true, observer,
                                    "imaginary_time_propagate");
}

/// Closed-form free kernel sqrt(m / (2 pi i hbar T)) exp(i m (x_b - x_a)^2 /
/// (2 hbar T)) applied once over the whole interval T.
inline WaveFunctionField free_kernel_propagate(const WaveFunctionField& psi0,
                                               const SpaceTimeGrid& grid,
                                               const PhysicalConstants& c) {
  detail::require_initial(psi0, grid, "free_kernel_propagate");
  c.validate();
  const std::size_t n = grid.n_x();
  const double T = grid.duration();
  const Complex pref = std::sqrt(c.mass / (kTwoPi * c.hbar * T)) * grid.dx() *
                       std::polar(1.0, -kPi / 4);
  const double a = c.mass / (2.0 * c.hbar * T);
  std::vector<Complex> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Complex acc{};
    for (std::size_t j = 0; j < n; ++j) {
      const double d = grid.x(i) - grid.x(j);
      acc += std::polar(1.0, a * d * d) * psi0.amplitudes[j];
    }
    out[i] = pref * acc;
  }
  detail::require_finite(out, "free_kernel_propagate", 1);
  return {grid, grid.n_t(), std::move(out)};
}

inline WaveFunctionField free_kernel_propagate(const WaveFunctionField& psi0,
                                               const LagrangianSpec& lag,
                                               const SpaceTimeGrid& grid) {
  if (!lag.is_free())
    throw ValidationError("free_kernel_propagate requires a free potential");
  return free_kernel_propagate(psi0, grid, lag.constants);
}

inline WaveFunctionField propagate(Method method, const WaveFunctionField& psi0,
                                   const LagrangianSpec& lag,
                                   const SpaceTimeGrid& grid,
                                   const LogSink& log = {}) {
  switch (method) {
    case Method::pathsum: return pathsum_propagate(psi0, lag, grid, {log, {}});
    case Method::cn: return schrodinger_propagate(psi0, lag, grid);
    case Method::free_kernel: return free_kernel_propagate(psi0, lag, grid);
    case Method::imaginary: return imaginary_time_propagate(psi0, lag, grid);
  }
  throw ValidationError("unknown method");
}

}  // namespace trajcoh
