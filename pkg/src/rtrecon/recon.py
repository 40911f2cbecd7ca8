"""Subspace reconstruction algorithms for the factorized transport system.

Step 1 recovers the signal-subspace component of each source's
intermediate field analytically from the precomputed SVD; the modified
variant adds a single noise-subspace correction shared across sources.
Step 2 recovers the coefficient by minimizing the state-equation misfit,
which is quadratic because the state operator is linear in the unknown;
the one-step variant minimizes the summed data and state misfits jointly
over the noise coefficients and the coefficient field.

All transport solves happen once, up front, when the fixed fields are
pushed through the volume Green operator; every objective/gradient
evaluation afterwards is a handful of diagonal broadcasts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ConfigError, InvalidArgumentError, TruncationError
from .medium import OpticalField
from .operators import MODE_ABSORPTION, SystemFactorization
from .optimize import BfgsResult, bfgs_minimize
from .spectral import SvdCache, TruncationPolicy, select_L
from .transport import as_matrix

logger = logging.getLogger(__name__)

ALGORITHMS = ("two_step", "modified_two_step", "one_step")

_noise_formula_logged = False


@dataclass
class ReconConfig:
    """Settings shared by the reconstruction algorithms."""

    algorithm: str = "two_step"
    truncation: TruncationPolicy = dataclass_field(default_factory=lambda: TruncationPolicy.fixed(50))
    max_outer_iterations: int = 50
    gradient_tolerance: float = 1e-8
    sufficient_decrease: float = 1e-4
    backtracking_factor: float = 0.5
    positivity_floor: float | None = None
    initial_sigma: float | np.ndarray | None = None
    early_stop_window: int | None = 3
    early_stop_rtol: float = 1e-4
    step2_method: str = "bfgs"  # 'bfgs' or 'direct' (direct limited to small grids)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.max_outer_iterations < 1:
            raise ConfigError("max_outer_iterations must be at least 1")
        if not (self.gradient_tolerance > 0 and self.sufficient_decrease > 0):
            raise ConfigError("tolerances must be positive")
        if not 0.0 < self.backtracking_factor < 1.0:
            raise ConfigError("backtracking factor must lie in (0, 1)")


@dataclass
class ReconResult:
    """Outcome of one reconstruction run."""

    mode: str
    algorithm: str
    level: int
    sigma: np.ndarray
    signal_coeffs: np.ndarray
    noise_coeffs: np.ndarray
    objective_history: np.ndarray
    data_misfit: float
    status: str
    iterations: int
    estimate: OpticalField | None = None
    error_vs_truth: float | None = None

    def to_summary(self) -> dict:
        return {
            "mode": self.mode,
            "algorithm": self.algorithm,
            "L": self.level,
            "data_misfit": self.data_misfit,
            "final_objective": float(self.objective_history[-1]),
            "iterations": self.iterations,
            "status": self.status,
            "noise_coeffs": [float(v) for v in self.noise_coeffs],
            "relative_l2_error": self.error_vs_truth,
        }


# ---------------------------------------------------------------------------
# step 1: analytic subspace recovery


def step1_signal(data: np.ndarray, cache: SvdCache, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic signal-subspace recovery for every source.

    ``beta[q, i] = (psi_i . J_q) / mu_i`` for the first ``level`` modes;
    the recovered fields are ``fields[q] = sum_i beta[q, i] phi_i``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    rank = cache.numerical_rank
    if not 1 <= level <= rank:
        raise TruncationError(
            f"truncation level {level} exceeds the numerical rank {rank}; choose a smaller L"
        )
    proj = data @ cache.left[:, :level]
    beta = proj / cache.mu[:level][None, :]
    fields = beta @ cache.right[:, :level].T
    return beta, fields


def data_residuals(data: np.ndarray, beta: np.ndarray, cache: SvdCache, level: int) -> np.ndarray:
    """Per-source residual of the data equation after step 1 (J - A U_signal)."""
    data = np.atleast_2d(data)
    return data - (beta * cache.mu[:level][None, :]) @ cache.left[:, :level].T


def signal_data_misfit(data: np.ndarray, beta: np.ndarray, cache: SvdCache, level: int) -> float:
    """Source-normalized data misfit of the signal-only recovery."""
    data = np.atleast_2d(data)
    res = data_residuals(data, beta, cache, level)
    return float(np.sum(np.sum(res**2, axis=1) / np.sum(data**2, axis=1)))


def step1_noise(data: np.ndarray, beta: np.ndarray, cache: SvdCache, level: int) -> np.ndarray:
    """Shared noise-subspace correction, averaged over sources.

    Returns the exact minimizer of the source-normalized data misfit over
    the usable noise modes: per mode,
    ``gamma_i = [sum_q psi_i.res_q / |J_q|^2] / (mu_i * sum_q 1 / |J_q|^2)``.
    Stationarity is verified before returning.
    """
    global _noise_formula_logged
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    rank = cache.numerical_rank
    if not 1 <= level <= rank:
        raise TruncationError(f"truncation level {level} exceeds the numerical rank {rank}")
    n_noise = rank - level
    if n_noise == 0:
        return np.zeros(0)

    res = data_residuals(data, beta, cache, level)
    inv_norms = 1.0 / np.sum(data**2, axis=1)
    mu_n = cache.mu[level:rank]
    proj = res @ cache.left[:, level:rank]  # (n_q, n_noise)
    weighted_sum = inv_norms @ proj
    gamma = weighted_sum / (mu_n * inv_norms.sum())

    # stationarity of the normalized misfit at the returned minimizer
    grad = 2.0 * mu_n * (gamma * mu_n * inv_norms.sum() - weighted_sum)
    scale = max(float(np.max(np.abs(weighted_sum * mu_n))), 1e-300)
    if np.max(np.abs(grad)) > 1e-10 * scale:
        raise InvalidArgumentError("noise-correction solution failed its stationarity check")
    if not _noise_formula_logged:
        unnormalized = weighted_sum / mu_n
        if not np.allclose(gamma, unnormalized, rtol=1e-12, atol=0.0):
            logger.info(
                "noise correction uses the stationarity minimizer with the source-weight "
                "normalizer %.6e; the plain weighted sum differs", inv_norms.sum(),
            )
        _noise_formula_logged = True
    return gamma


# ---------------------------------------------------------------------------
# step 2: coefficient recovery from fixed intermediate fields


class StateFit:
    """Quadratic state-equation misfit for fixed intermediate fields.

    Residual per source: ``r_q(sigma) = C_q + sigma * D_q`` (entrywise in
    the cell index), where C and D come from one volume-Green solve per
    source done at construction time.
    """

    def __init__(self, fact: SystemFactorization, fields: np.ndarray, weights: np.ndarray,
                 positivity_floor: float | None = None):
        fields = np.atleast_2d(fields)
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0.0):
            raise InvalidArgumentError("state-misfit weights must be positive (degenerate fields?)")
        self.fact = fact
        self.weights = weights
        self.floor = positivity_floor
        ns = fact.angular.ns
        const, deriv = [], []
        for q in range(fields.shape[0]):
            y, ang = fact.state_pieces(fields[q])
            d = fact.state_derivative_pieces(y, ang)
            base = as_matrix(fields[q], ns) + as_matrix(fact.sources[q], ns)
            if fact.mode == MODE_ABSORPTION:
                c = fact.known[None, :] * (ang - y) - base
            else:
                c = -base
            const.append(c)
            deriv.append(d)
        self.const = np.stack(const)  # (n_q, ns, n)
        self.deriv = np.stack(deriv)

    def _clamp(self, sigma: np.ndarray) -> np.ndarray:
        if self.floor is None:
            return sigma
        return np.maximum(sigma, self.floor)

    def residuals(self, sigma: np.ndarray) -> np.ndarray:
        sigma = self._clamp(np.asarray(sigma))
        return self.const + sigma[None, None, :] * self.deriv

    def objective(self, sigma: np.ndarray) -> float:
        r = self.residuals(sigma)
        return float(np.sum(np.sum(r**2, axis=(1, 2)) / self.weights))

    def gradient(self, sigma: np.ndarray) -> np.ndarray:
        r = self.residuals(sigma)
        g = 2.0 * np.einsum("q,qlm,qlm->m", 1.0 / self.weights, r, self.deriv)
        if self.floor is not None:
            g = np.where(np.asarray(sigma) < self.floor, 0.0, g)
        return g

    def direct_solve(self, initial: np.ndarray) -> np.ndarray:
        """Normal-equation least squares on the dense Jacobian (oracle path)."""
        n = self.fact.mesh.n_cells
        if n > 256:
            raise InvalidArgumentError("direct step-2 path is limited to 256 cells")
        scale = 1.0 / np.sqrt(self.weights)
        n_q, ns = self.const.shape[0], self.const.shape[1]
        jac = np.zeros((n_q * ns * n, n))
        r0 = (self.residuals(initial) * scale[:, None, None]).ravel()
        cells = np.arange(n)
        for q in range(n_q):
            for l in range(ns):
                base = (q * ns + l) * n
                jac[base + cells, cells] = self.deriv[q, l] * scale[q]
        delta, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        return self._clamp(np.asarray(initial) + delta)


def _initial_vector(initial, n_cells: int) -> np.ndarray:
    if initial is None:
        raise ConfigError("an initial coefficient value is required")
    arr = np.asarray(initial, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n_cells, float(arr))
    if arr.shape != (n_cells,):
        raise InvalidArgumentError(f"initial coefficient has shape {arr.shape}, expected ({n_cells},)")
    return arr.copy()


def step2_coefficient(
    fields: np.ndarray,
    fact: SystemFactorization,
    weights: np.ndarray,
    config: ReconConfig,
) -> tuple[np.ndarray, BfgsResult]:
    """Recover the coefficient from fixed intermediate fields.

    Minimizes the source-weighted state-equation misfit with BFGS (or the
    direct dense least-squares path on small grids).
    """
    fit = StateFit(fact, fields, weights, positivity_floor=config.positivity_floor)
    x0 = _initial_vector(config.initial_sigma, fact.mesh.n_cells)
    if config.step2_method == "direct":
        sigma = fit.direct_solve(x0)
        history = np.asarray([fit.objective(x0), fit.objective(sigma)])
        info = BfgsResult(sigma, history[-1], float(np.linalg.norm(fit.gradient(sigma))),
                          1, history, "direct")
        return sigma, info
    result = bfgs_minimize(
        fit.objective,
        fit.gradient,
        x0,
        gradient_tolerance=config.gradient_tolerance,
        max_iterations=config.max_outer_iterations,
        sufficient_decrease=config.sufficient_decrease,
        backtracking_factor=config.backtracking_factor,
        early_stop_window=config.early_stop_window,
        early_stop_rtol=config.early_stop_rtol,
    )
    sigma = np.maximum(result.x, config.positivity_floor) if config.positivity_floor else result.x
    return sigma, result


# ---------------------------------------------------------------------------
# one-step joint minimization


class JointFit:
    """Joint data + state misfit over (noise coefficients, coefficient field).

    The signal components stay fixed at their analytic step-1 values; the
    unknown vector is the concatenation of the noise coefficients (length
    rank - L) and the per-cell coefficient.
    """

    def __init__(
        self,
        fact: SystemFactorization,
        cache: SvdCache,
        data: np.ndarray,
        beta: np.ndarray,
        signal_fields: np.ndarray,
        level: int,
        positivity_floor: float | None = None,
    ):
        data = np.atleast_2d(data)
        self.fact = fact
        self.level = level
        self.floor = positivity_floor
        rank = cache.numerical_rank
        self.n_noise = rank - level
        self.n_cells = fact.mesh.n_cells
        ns = fact.angular.ns

        self.mu_n = cache.mu[level:rank]
        self.psi_n = cache.left[:, level:rank]
        phi_n = cache.right[:, level:rank]
        self.data_res = data_residuals(data, beta, cache, level)  # J~_q
        self.w_data = np.sum(data**2, axis=1)
        self.w_state = np.sum(beta**2, axis=1)
        if np.any(self.w_state <= 0.0):
            raise InvalidArgumentError("state-misfit weights must be positive (degenerate fields?)")

        # one volume solve per noise mode and per source; everything after is diagonal
        self.phi_m = np.stack([as_matrix(phi_n[:, i], ns) for i in range(self.n_noise)])
        noise_pieces = [fact.state_pieces(phi_n[:, i]) for i in range(self.n_noise)]
        self.y_noise = np.stack([p[0] for p in noise_pieces]) if self.n_noise else np.zeros((0, ns, self.n_cells))
        self.ang_noise = np.stack([p[1] for p in noise_pieces]) if self.n_noise else np.zeros((0, ns, self.n_cells))
        src_pieces = [fact.state_pieces(signal_fields[q]) for q in range(data.shape[0])]
        self.y_sig = np.stack([p[0] for p in src_pieces])
        self.ang_sig = np.stack([p[1] for p in src_pieces])
        self.base = np.stack(
            [as_matrix(signal_fields[q], ns) + as_matrix(fact.sources[q], ns) for q in range(data.shape[0])]
        )

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_noise], x[self.n_noise :]

    def _sigma(self, raw: np.ndarray) -> np.ndarray:
        return raw if self.floor is None else np.maximum(raw, self.floor)

    def data_term(self, gamma: np.ndarray) -> tuple[float, np.ndarray]:
        """Data-misfit term and the residual vectors A Phi_n gamma - J~_q."""
        pred = self.psi_n @ (self.mu_n * gamma)
        res = pred[None, :] - self.data_res
        value = float(np.sum(np.sum(res**2, axis=1) / self.w_data))
        return value, res

    def data_term_gradient(self, res: np.ndarray) -> np.ndarray:
        return 2.0 * self.mu_n * ((res / self.w_data[:, None]) @ self.psi_n).sum(axis=0)

    def state_residuals(self, gamma: np.ndarray, sigma: np.ndarray):
        y_g = np.tensordot(gamma, self.y_noise, axes=1)
        ang_g = np.tensordot(gamma, self.ang_noise, axes=1)
        phi_g = np.tensordot(gamma, self.phi_m, axes=1)
        y = self.y_sig + y_g[None]
        ang = self.ang_sig + ang_g[None]
        res = np.stack(
            [
                self.fact.state_from_pieces(sigma, y[q], ang[q]) - phi_g - self.base[q]
                for q in range(self.base.shape[0])
            ]
        )
        return res, y, ang

    def state_term(self, gamma: np.ndarray, sigma: np.ndarray) -> float:
        res, _, _ = self.state_residuals(gamma, sigma)
        return float(np.sum(np.sum(res**2, axis=(1, 2)) / self.w_state))

    def objective(self, x: np.ndarray) -> float:
        gamma, sigma = self.split(x)
        sigma = self._sigma(sigma)
        return self.data_term(gamma)[0] + self.state_term(gamma, sigma)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        gamma, raw_sigma = self.split(x)
        sigma = self._sigma(raw_sigma)
        _, data_res = self.data_term(gamma)
        res, y, ang = self.state_residuals(gamma, sigma)

        g_gamma = self.data_term_gradient(data_res)
        weighted = res / self.w_state[:, None, None]
        summed = weighted.sum(axis=0)  # (ns, n)
        if self.n_noise:
            bphi = np.stack(
                [
                    self.fact.state_from_pieces(sigma, self.y_noise[i], self.ang_noise[i]) - self.phi_m[i]
                    for i in range(self.n_noise)
                ]
            )
            g_gamma = g_gamma + 2.0 * np.tensordot(bphi, summed, axes=([1, 2], [0, 1]))

        g_sigma = np.zeros(self.n_cells)
        for q in range(res.shape[0]):
            g_sigma += (2.0 / self.w_state[q]) * self.fact.state_residual_gradient(res[q], y[q], ang[q])
        if self.floor is not None:
            g_sigma = np.where(raw_sigma < self.floor, 0.0, g_sigma)
        return np.concatenate([g_gamma, g_sigma])


# ---------------------------------------------------------------------------
# orchestration


def _positive_or_none(mode: str, sigma: np.ndarray, known: np.ndarray) -> OpticalField | None:
    if not np.all(sigma > 0.0):
        return None
    if mode == MODE_ABSORPTION:
        return OpticalField(sigma_a=sigma, sigma_s=known)
    return OpticalField(sigma_a=known, sigma_s=sigma)


def _weighted_rel_l2(estimate: np.ndarray, truth: np.ndarray, volumes: np.ndarray) -> float:
    denom = float(np.sqrt(np.sum(volumes * truth**2)))
    return float(np.sqrt(np.sum(volumes * (estimate - truth) ** 2))) / denom


def reconstruct(
    fact: SystemFactorization,
    cache: SvdCache,
    data: np.ndarray,
    config: ReconConfig,
    truth: np.ndarray | None = None,
) -> ReconResult:
    """Run the configured reconstruction algorithm on one data set.

    ``data`` holds one current vector per source, shape
    ``(n_sources, n_detectors)``.  ``truth``, when given, is the true
    coefficient on the inversion mesh and fills ``error_vs_truth``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] != fact.n_sources:
        raise InvalidArgumentError(
            f"got {data.shape[0]} data vectors for {fact.n_sources} sources"
        )
    if data.shape[1] != cache.n_detectors:
        raise InvalidArgumentError("data vectors and SVD cache disagree on detector count")

    level = select_L(cache, data, config.truncation)
    if level > cache.numerical_rank:
        raise TruncationError(
            f"selected level {level} exceeds numerical rank {cache.numerical_rank}"
        )
    beta, signal_fields = step1_signal(data, cache, level)

    if config.algorithm == "two_step":
        weights = np.sum(beta**2, axis=1)
        sigma, info = step2_coefficient(signal_fields, fact, weights, config)
        gamma = np.zeros(0)
        misfit = signal_data_misfit(data, beta, cache, level)
        history, status, iterations = info.history, info.status, info.iterations
    elif config.algorithm == "modified_two_step":
        gamma = step1_noise(data, beta, cache, level)
        correction = gamma @ cache.noise_basis(level).T
        fields = signal_fields + correction[None, :]
        weights = np.sum(beta**2, axis=1) + float(gamma @ gamma)
        sigma, info = step2_coefficient(fields, fact, weights, config)
        misfit = _noise_data_misfit(data, beta, gamma, cache, level)
        history, status, iterations = info.history, info.status, info.iterations
    else:  # one_step
        gamma0 = step1_noise(data, beta, cache, level)
        correction = gamma0 @ cache.noise_basis(level).T
        fields = signal_fields + correction[None, :]
        weights = np.sum(beta**2, axis=1) + float(gamma0 @ gamma0)
        sigma0, _ = step2_coefficient(fields, fact, weights, config)
        fit = JointFit(
            fact, cache, data, beta, signal_fields, level, positivity_floor=config.positivity_floor
        )
        x0 = np.concatenate([gamma0, sigma0])
        result = bfgs_minimize(
            fit.objective,
            fit.gradient,
            x0,
            gradient_tolerance=config.gradient_tolerance,
            max_iterations=config.max_outer_iterations,
            sufficient_decrease=config.sufficient_decrease,
            backtracking_factor=config.backtracking_factor,
            early_stop_window=config.early_stop_window,
            early_stop_rtol=config.early_stop_rtol,
        )
        gamma, sigma = fit.split(result.x)
        sigma = fit._sigma(sigma)
        misfit = fit.data_term(gamma)[0]
        history, status, iterations = result.history, result.status, result.iterations

    error = None
    if truth is not None:
        error = _weighted_rel_l2(sigma, np.asarray(truth), fact.mesh.cell_volumes)

    return ReconResult(
        mode=fact.mode,
        algorithm=config.algorithm,
        level=level,
        sigma=sigma,
        signal_coeffs=beta,
        noise_coeffs=gamma,
        objective_history=history,
        data_misfit=misfit,
        status=status,
        iterations=iterations,
        estimate=_positive_or_none(fact.mode, sigma, fact.known),
        error_vs_truth=error,
    )


def _noise_data_misfit(data, beta, gamma, cache, level) -> float:
    res = data_residuals(data, beta, cache, level)
    rank = cache.numerical_rank
    pred = cache.left[:, level:rank] @ (cache.mu[level:rank] * gamma)
    shifted = res - pred[None, :]
    return float(np.sum(np.sum(shifted**2, axis=1) / np.sum(np.atleast_2d(data) ** 2, axis=1)))
