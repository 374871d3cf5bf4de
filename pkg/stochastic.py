"""
Stochastic-decoupling trajectories: an independent route to the reduced
dynamics, used to cross-check the hierarchy.

Each trajectory draws real white-noise channels (sample variance 1/dt),
builds the bath-induced mean fields by causal convolution with kernels taken
from the same exponential series the hierarchy uses, and integrates the
stochastic Liouville equation with Euler-Maruyama. The ensemble mean over
trajectories estimates the reduced density matrix.

Channel layout of NoisePaths.nu:
    self_adjoint: shape (4, steps), rows nu_1 .. nu_4
    general:      shape (4, 2, steps), entry [i - 1, j - 1] is nu_ij

Complex increments: dw_1j = (nu_1j + i nu_4j) dt, dw_2j = (nu_2j + i nu_3j) dt,
so that M{dw dw*} = 2 dt and M{dw dw} = 0.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from bath import BathDecomposition, ExponentialSeries, series_eval
from integrator import BLOWUP_THRESHOLD, NumericalBlowup, Trajectory
from operators import SystemModel, as_matrix, commutator, anticommutator, dagger, observable_series

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
CASES = ("self_adjoint", "general")
CONVOLUTION_METHODS = ("direct", "recursive")
CHUNK_SIZE = 128  # trajectories per batch; fixed so reductions never depend on thread count
STAT_SIGMAS = 5.0
# =================================================================

SeedLike = Union[int, Sequence[int]]


class TooFewSurvivors(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    steps: int

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @classmethod
    def spanning(cls, t_final: float, dt: float) -> "TimeGrid":
        return cls(dt=dt, steps=max(1, int(round(t_final / dt))))


@dataclass(frozen=True, eq=False)
class NoisePaths:
    grid: TimeGrid
    nu: np.ndarray
    case: str
    seed: Tuple[int, ...]

    def increments(self) -> Dict[str, np.ndarray]:
        """Complex Wiener increments per noise channel."""
        dt = self.grid.dt
        nu = self.nu
        if self.case == "self_adjoint":
            return {"w1": (nu[0] + 1j * nu[3]) * dt, "w2": (nu[1] + 1j * nu[2]) * dt}
        return {
            "w11": (nu[0, 0] + 1j * nu[3, 0]) * dt,
            "w12": (nu[0, 1] + 1j * nu[3, 1]) * dt,
            "w21": (nu[1, 0] + 1j * nu[2, 0]) * dt,
            "w22": (nu[1, 1] + 1j * nu[2, 1]) * dt,
        }


def trajectory_seed(base_seed: int, index: int) -> Tuple[int, int]:
    """Seed of trajectory ``index``; independent of generation order."""
    return (int(base_seed), int(index))


def _seed_tuple(seed: SeedLike) -> Tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def sample_noise_paths(seed: SeedLike, grid: TimeGrid, case: str) -> NoisePaths:
    if case not in CASES:
        raise ValueError(f"unknown noise case {case!r}; expected one of {CASES}")
    seed = _seed_tuple(seed)
    rng = np.random.default_rng(np.random.SeedSequence(list(seed)))
    shape = (4, grid.steps) if case == "self_adjoint" else (4, 2, grid.steps)
    nu = rng.standard_normal(shape) / np.sqrt(grid.dt)
    return NoisePaths(grid=grid, nu=nu, case=case, seed=seed)


# ----------------------------------------------------------------------------
# Kernels and mean fields
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanFieldKernels:
    """
    Exponential-series kernels driving the mean fields.

    self_adjoint: xi_r, xi_i (real and imaginary parts of the combined kernel)
    general: acute = conj(alpha) - alpha_tilde, grave = conj(alpha) + alpha_tilde,
             and their complex conjugates acute_conj, grave_conj
    """

    case: str
    series: Dict[str, ExponentialSeries] = field(default_factory=dict)


def mean_field_kernels(decomp: BathDecomposition) -> MeanFieldKernels:
    if decomp.self_adjoint:
        xi = decomp.alpha_series
        xi_c = xi.conjugate()
        # Re xi = (xi + conj xi) / 2, Im xi = (xi - conj xi) / 2i, both as series in t
        return MeanFieldKernels(
            "self_adjoint",
            {
                "xi_r": xi.scaled(0.5) + xi_c.scaled(0.5),
                "xi_i": xi.scaled(-0.5j) + xi_c.scaled(0.5j),
            },
        )
    acute = decomp.acute_series()
    grave = decomp.grave_series()
    return MeanFieldKernels(
        "general",
        {"acute": acute, "grave": grave, "acute_conj": acute.conjugate(), "grave_conj": grave.conjugate()},
    )


@dataclass(frozen=True, eq=False)
class MeanFieldSeries:
    grid: TimeGrid
    g1: np.ndarray  # (..., steps + 1)
    g2: Optional[np.ndarray] = None

    @property
    def g(self) -> np.ndarray:
        return self.g1


def _direct_convolution(series: ExponentialSeries, source: np.ndarray, dt: float) -> np.ndarray:
    # out[k] = dt * sum_{m<k} K((k - m) dt) source[m]
    steps = source.shape[-1]
    lags = np.arange(1, steps + 1) * dt
    kernel = np.asarray(series_eval(series, lags), dtype=complex)
    batch = source.reshape(-1, steps)
    out = np.zeros((batch.shape[0], steps + 1), dtype=complex)
    for b in range(batch.shape[0]):
        out[b, 1:] = dt * np.convolve(kernel, batch[b])[:steps]
    return out.reshape(source.shape[:-1] + (steps + 1,))


def _recursive_convolution(series: ExponentialSeries, source: np.ndarray, dt: float) -> np.ndarray:
    # y_n[k + 1] = e^{-kappa_n dt} (y_n[k] + source[k]); out[k] = dt * sum_n zeta_n y_n[k]
    steps = source.shape[-1]
    lead = source.shape[:-1]
    out = np.zeros(lead + (steps + 1,), dtype=complex)
    if not series.terms:
        return out
    decay = np.exp(-series.kappas * dt)
    zetas = series.zetas
    y = np.zeros(lead + (len(series),), dtype=complex)
    for k in range(steps):
        y = decay * (y + source[..., k, None])
        out[..., k + 1] = dt * (y @ zetas)
    return out


def _convolve(series: ExponentialSeries, source: np.ndarray, dt: float, method: str) -> np.ndarray:
    if method == "direct":
        return _direct_convolution(series, source, dt)
    if method == "recursive":
        return _recursive_convolution(series, source, dt)
    raise ValueError(f"unknown convolution method {method!r}; expected one of {CONVOLUTION_METHODS}")


def _mean_field_arrays(
    kernels: MeanFieldKernels, nu: np.ndarray, dt: float, method: str
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Mean fields for noise arrays with an optional leading batch axis."""
    s = kernels.series
    if kernels.case == "self_adjoint":
        nu1, nu2, nu3, nu4 = (nu[..., i, :] for i in range(4))
        g = _convolve(s["xi_r"], nu1 - 1j * nu4, dt, method) + _convolve(s["xi_i"], nu2 + 1j * nu3, dt, method)
        return g, None

    def channel(i: int, j: int) -> np.ndarray:
        return nu[..., i - 1, j - 1, :]

    g1 = 0.5j * (
        _convolve(s["acute"], channel(2, 2) + 1j * channel(3, 2), dt, method)
        - _convolve(s["grave"], 1j * channel(1, 2) + channel(4, 2), dt, method)
    )
    g2 = -0.5j * (
        _convolve(s["acute_conj"], channel(2, 1) + 1j * channel(3, 1), dt, method)
        + _convolve(s["grave_conj"], 1j * channel(1, 1) + channel(4, 1), dt, method)
    )
    return g1, g2


def mean_field(kernels: MeanFieldKernels, noises: NoisePaths, method: str = "direct") -> MeanFieldSeries:
    """
    Causal left-endpoint convolution of the kernels with the noise channels.

    self_adjoint: g = sum_{m<k} dt [xi_r(t_k - t_m)(nu_1 - i nu_4)_m + xi_i(t_k - t_m)(nu_2 + i nu_3)_m]
    general:
        g1 = (i/2) sum dt [acute (nu_22 + i nu_32) - grave (i nu_12 + nu_42)]
        g2 = -(i/2) sum dt [conj(acute) (nu_21 + i nu_31) + conj(grave) (i nu_11 + nu_41)]
    """
    if kernels.case != noises.case:
        raise ValueError(f"kernels are for the {kernels.case} case but noises are {noises.case}")
    g1, g2 = _mean_field_arrays(kernels, noises.nu, noises.grid.dt, method)
    return MeanFieldSeries(noises.grid, g1, g2)


# ----------------------------------------------------------------------------
# Trajectories
# ----------------------------------------------------------------------------


def _check_case(model: SystemModel, kernels: MeanFieldKernels) -> None:
    if kernels.case not in CASES:
        raise ValueError(f"unknown kernel case {kernels.case!r}")
    if kernels.case == "self_adjoint" and not model.self_adjoint:
        raise ValueError("the self-adjoint noise scheme needs a Hermitian coupling operator")


def _propagate_batch(
    model: SystemModel,
    case: str,
    nu: np.ndarray,
    g1: np.ndarray,
    g2: Optional[np.ndarray],
    rho0: np.ndarray,
    dt: float,
    record: Sequence[int],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Euler-Maruyama for a batch of trajectories.

    Returns the recorded states, shape (batch, len(record), dim, dim), and a
    boolean mask of trajectories that blew up.
    """
    batch = nu.shape[0]
    steps = nu.shape[-1]
    h = np.asarray(model.h_s)
    s = np.asarray(model.s)
    s_dag = dagger(s)
    dim = model.dim

    if case == "self_adjoint":
        dw1 = (nu[:, 0] + 1j * nu[:, 3]) * dt
        dw2c = np.conj((nu[:, 1] + 1j * nu[:, 2]) * dt)
    else:
        dw11 = (nu[:, 0, 0] + 1j * nu[:, 3, 0]) * dt
        dw12 = (nu[:, 0, 1] + 1j * nu[:, 3, 1]) * dt
        dw21c = np.conj((nu[:, 1, 0] + 1j * nu[:, 2, 0]) * dt)
        dw22c = np.conj((nu[:, 1, 1] + 1j * nu[:, 2, 1]) * dt)

    rho = np.broadcast_to(rho0, (batch, dim, dim)).astype(complex)
    record_at = {step: slot for slot, step in enumerate(record)}
    recorded = np.zeros((batch, len(record), dim, dim), dtype=complex)
    blown = np.zeros(batch, dtype=bool)

    for k in range(steps + 1):
        if k in record_at:
            recorded[:, record_at[k]] = rho
        if k == steps:
            break
        h_eff = h + g1[:, k, None, None] * s
        if case == "self_adjoint":
            drho = -1j * dt * commutator(h_eff, rho)
            drho += (-0.5j * dw1[:, k, None, None]) * commutator(s, rho)
            drho += (0.5 * dw2c[:, k, None, None]) * anticommutator(s, rho)
        else:
            h_eff = h_eff + g2[:, k, None, None] * s_dag
            drho = -1j * dt * commutator(h_eff, rho)
            drho += (-0.5j * dw11[:, k, None, None]) * commutator(s, rho)
            drho += (-0.5j * dw12[:, k, None, None]) * commutator(s_dag, rho)
            drho += (0.5 * dw21c[:, k, None, None]) * anticommutator(s, rho)
            drho += (0.5 * dw22c[:, k, None, None]) * anticommutator(s_dag, rho)
        rho = rho + drho

        magnitude = np.max(np.abs(rho), axis=(1, 2))
        bad = ~np.isfinite(magnitude) | (magnitude > BLOWUP_THRESHOLD)
        if np.any(bad):
            blown |= bad
            # frozen at zero so the rest of the batch keeps running
            rho[bad] = 0.0
    return recorded, blown


def sde_evolve_trajectory(
    model: SystemModel,
    kernels: MeanFieldKernels,
    noises: NoisePaths,
    rho0: np.ndarray,
    method: str = "direct",
) -> np.ndarray:
    """
    One stochastic trajectory on the noise grid.

    Returns:
        Array of shape (steps + 1, dim, dim). Individual trajectories are
        neither trace preserving nor Hermitian; only the ensemble mean is.

    Raises:
        NumericalBlowup: the trajectory left the representable range.
    """
    _check_case(model, kernels)
    if kernels.case != noises.case:
        raise ValueError(f"kernels are for the {kernels.case} case but noises are {noises.case}")
    rho0 = as_matrix(rho0)
    fields = mean_field(kernels, noises, method)
    nu = noises.nu[None]
    g2 = None if fields.g2 is None else fields.g2[None]
    steps = noises.grid.steps
    recorded, blown = _propagate_batch(
        model, kernels.case, nu, fields.g1[None], g2, rho0, noises.grid.dt, range(steps + 1)
    )
    if blown[0]:
        raise NumericalBlowup(f"stochastic trajectory {noises.seed} exceeded {BLOWUP_THRESHOLD:.0e}")
    return recorded[0]


@dataclass
class _ChunkSums:
    count: int
    rho_sum: np.ndarray
    rho_sq_re: np.ndarray
    rho_sq_im: np.ndarray
    obs_sum: Dict[str, np.ndarray]
    obs_sq_re: Dict[str, np.ndarray]
    obs_sq_im: Dict[str, np.ndarray]
    excluded: int


def _run_chunk(
    model: SystemModel,
    kernels: MeanFieldKernels,
    grid: TimeGrid,
    base_seed: int,
    indices: Sequence[int],
    rho0: np.ndarray,
    record: Sequence[int],
    observables: Sequence[str],
    method: str,
) -> _ChunkSums:
    nu = np.stack([sample_noise_paths(trajectory_seed(base_seed, k), grid, kernels.case).nu for k in indices])
    g1, g2 = _mean_field_arrays(kernels, nu, grid.dt, method)
    recorded, blown = _propagate_batch(model, kernels.case, nu, g1, g2, rho0, grid.dt, record)
    if np.any(blown):
        _LOGGER.warning(
            "Excluding %d blown-up trajectories: %s",
            int(blown.sum()),
            [indices[b] for b in np.flatnonzero(blown)],
        )
    kept = recorded[~blown]
    obs = {name: observable_series(name, kept) for name in observables}
    return _ChunkSums(
        count=len(kept),
        rho_sum=kept.sum(axis=0),
        rho_sq_re=(kept.real ** 2).sum(axis=0),
        rho_sq_im=(kept.imag ** 2).sum(axis=0),
        obs_sum={name: values.sum(axis=0) for name, values in obs.items()},
        obs_sq_re={name: (values.real ** 2).sum(axis=0) for name, values in obs.items()},
        obs_sq_im={name: (values.imag ** 2).sum(axis=0) for name, values in obs.items()},
        excluded=int(blown.sum()),
    )


def _standard_error(total: np.ndarray, sq_re: np.ndarray, sq_im: np.ndarray, n: int) -> np.ndarray:
    """Standard error of the mean, real and imaginary parts packed as one complex array."""
    mean = total / n
    var_re = np.maximum(sq_re / n - mean.real ** 2, 0.0) * n / (n - 1)
    var_im = np.maximum(sq_im / n - mean.imag ** 2, 0.0) * n / (n - 1)
    return np.sqrt(var_re / n) + 1j * np.sqrt(var_im / n)


def ensemble_mean(
    model: SystemModel,
    kernels: MeanFieldKernels,
    n_traj: int,
    grid: TimeGrid,
    base_seed: int,
    rho0: np.ndarray,
    record_stride: int = 1,
    observables: Sequence[str] = ("sigma_z",),
    threads: int = 1,
    method: str = "direct",
) -> Trajectory:
    """
    Mean and standard error of the stochastic density matrix over ``n_traj``
    trajectories. Trajectory k uses the seed (base_seed, k); chunk results are
    reduced in trajectory order.

    Raises:
        TooFewSurvivors: fewer than half the trajectories stayed finite.
    """
    if n_traj < 2:
        raise ValueError(f"n_traj must be >= 2, got {n_traj}")
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")
    _check_case(model, kernels)
    rho0 = as_matrix(rho0)
    record = list(range(0, grid.steps + 1, record_stride))
    if record[-1] != grid.steps:
        record.append(grid.steps)

    chunks = [list(range(start, min(start + CHUNK_SIZE, n_traj))) for start in range(0, n_traj, CHUNK_SIZE)]
    _LOGGER.info(
        "Stochastic ensemble: %d trajectories, %d steps of dt=%g, %d chunks on %d threads",
        n_traj,
        grid.steps,
        grid.dt,
        len(chunks),
        threads,
    )

    def work(indices: List[int]) -> _ChunkSums:
        return _run_chunk(model, kernels, grid, base_seed, indices, rho0, record, observables, method)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(indices) for indices in chunks]

    survivors = sum(r.count for r in results)
    excluded = sum(r.excluded for r in results)
    if survivors < max(2, n_traj / 2):
        raise TooFewSurvivors(f"only {survivors} of {n_traj} trajectories survived")
    if excluded:
        _LOGGER.warning("%d of %d trajectories excluded after blow-up", excluded, n_traj)

    rho_sum = results[0].rho_sum.copy()
    rho_sq_re = results[0].rho_sq_re.copy()
    rho_sq_im = results[0].rho_sq_im.copy()
    obs_sum = {name: v.copy() for name, v in results[0].obs_sum.items()}
    obs_sq_re = {name: v.copy() for name, v in results[0].obs_sq_re.items()}
    obs_sq_im = {name: v.copy() for name, v in results[0].obs_sq_im.items()}
    for r in results[1:]:
        rho_sum += r.rho_sum
        rho_sq_re += r.rho_sq_re
        rho_sq_im += r.rho_sq_im
        for name in observables:
            obs_sum[name] += r.obs_sum[name]
            obs_sq_re[name] += r.obs_sq_re[name]
            obs_sq_im[name] += r.obs_sq_im[name]

    mean = rho_sum / survivors
    std_errors = {"rho": _standard_error(rho_sum, rho_sq_re, rho_sq_im, survivors)}
    observable_means = {}
    for name in observables:
        observable_means[name] = obs_sum[name] / survivors
        std_errors[name] = _standard_error(obs_sum[name], obs_sq_re[name], obs_sq_im[name], survivors)

    times = np.array(record) * grid.dt
    diagnostics = {
        "trace_defect": np.abs(np.trace(mean, axis1=1, axis2=2) - 1.0),
        "herm_defect": np.max(np.abs(mean - dagger(mean)), axis=(1, 2)),
    }
    return Trajectory(
        times=times,
        reduced=mean,
        observable_series=observable_means,
        diagnostics=diagnostics,
        std_errors=std_errors,
        excluded=excluded,
    )


# ----------------------------------------------------------------------------
# Noise statistics
# ----------------------------------------------------------------------------


@dataclass
class StatReport:
    """
    Sample moments of the complex increments, normalized by dt.

    ``cov_ww[a][b]`` estimates M{dw_a dw_b}/dt (target 0) and
    ``cov_wwstar[a][b]`` estimates M{dw_a conj(dw_b)}/dt (target 2 on the
    diagonal, 0 elsewhere). ``*_z`` hold the deviations from target in
    standard errors.
    """

    channels: List[str]
    samples: int
    mean_z: np.ndarray
    cov_ww: np.ndarray
    cov_wwstar: np.ndarray
    cov_ww_z: np.ndarray
    cov_wwstar_z: np.ndarray
    passed: bool

    def to_dict(self) -> Dict[str, object]:
        def pack(matrix: np.ndarray) -> List[List[List[float]]]:
            return [[[complex(v).real, complex(v).imag] for v in row] for row in matrix]

        return {
            "channels": self.channels,
            "samples": self.samples,
            "mean_z": self.mean_z.tolist(),
            "cov_ww": pack(self.cov_ww),
            "cov_wwstar": pack(self.cov_wwstar),
            "max_z": float(max(np.max(self.mean_z), np.max(self.cov_ww_z), np.max(self.cov_wwstar_z))),
            "pass": self.passed,
        }


def _z_score(samples: np.ndarray, target: complex) -> Tuple[complex, float]:
    """Sample mean of complex samples and its worst-component distance from target in SE."""
    n = samples.size
    mean = samples.mean()
    worst = 0.0
    for part, goal in ((samples.real, target.real), (samples.imag, target.imag)):
        se = part.std(ddof=1) / np.sqrt(n)
        deviation = abs(part.mean() - goal)
        worst = max(worst, deviation / se if se > 0 else (0.0 if deviation == 0 else np.inf))
    return mean, worst


def noise_statistics_check(noises: NoisePaths, sigmas: float = STAT_SIGMAS) -> StatReport:
    """Compare increment moments with the Ito targets at ``sigmas`` standard errors."""
    increments = noises.increments()
    names = list(increments)
    dt = noises.grid.dt
    n = noises.grid.steps
    if n < 2:
        raise ValueError("at least two samples per channel are needed")

    mean_z = np.zeros(len(names))
    cov_ww = np.zeros((len(names), len(names)), dtype=complex)
    cov_wwstar = np.zeros_like(cov_ww)
    cov_ww_z = np.zeros((len(names), len(names)))
    cov_wwstar_z = np.zeros_like(cov_ww_z)

    for a, name_a in enumerate(names):
        w_a = increments[name_a]
        _, mean_z[a] = _z_score(w_a / np.sqrt(dt), 0j)
        for b, name_b in enumerate(names):
            w_b = increments[name_b]
            cov_ww[a, b], cov_ww_z[a, b] = _z_score(w_a * w_b / dt, 0j)
            target = 2.0 + 0j if a == b else 0j
            cov_wwstar[a, b], cov_wwstar_z[a, b] = _z_score(w_a * np.conj(w_b) / dt, target)

    passed = bool(
        np.all(mean_z <= sigmas) and np.all(cov_ww_z <= sigmas) and np.all(cov_wwstar_z <= sigmas)
    )
    _LOGGER.info("Noise statistics over %d samples per channel: %s", n, "pass" if passed else "FAIL")
    return StatReport(
        channels=names,
        samples=n,
        mean_z=mean_z,
        cov_ww=cov_ww,
        cov_wwstar=cov_wwstar,
        cov_ww_z=cov_ww_z,
        cov_wwstar_z=cov_wwstar_z,
        passed=passed,
    )
