"""Integrators for the full rotator SDE, the averaged action SDE and the
effective equation, plus a batched, reproducible trajectory driver.

Time frames: the full SDE lives in fast time t, the averaged and effective
equations in slow time tau = eps * t. ``SdeRun.frame`` declares the units of
``dt``, ``horizon`` and the recorded times; conversion happens in ``run``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .action_angle import averaged_drift_R, effective_drift_K, to_action_angle
from .model import ModelSpec, _check_state, _drift_unchecked, _grad_unchecked, dissipation, interaction_force

log = logging.getLogger(__name__)

KINDS = ("full", "averaged", "effective")
SCHEMES = ("splitting", "em", "rk4")


@dataclass(frozen=True)
class SdeRun:
    kind: str = "full"
    scheme: str = "splitting"
    dt: float = 1e-3
    horizon: float = 1.0
    seed: int = 0
    stride: int = 1
    frame: str = "fast"
    ensemble: int = 1
    workers: int = 1
    noise_chunk: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown equation kind {self.kind!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.kind != "full" and self.scheme == "splitting":
            # the rotation splitting only exists for the full equation
            object.__setattr__(self, "scheme", "em")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.stride < 1:
            raise ValueError("record stride must be >= 1")
        if self.frame not in {"fast", "slow"}:
            raise ValueError("frame must be 'fast' or 'slow'")
        if self.ensemble < 1 or self.workers < 1 or self.noise_chunk < 1:
            raise ValueError("ensemble, workers and noise_chunk must be >= 1")

    @property
    def native_frame(self) -> str:
        return "fast" if self.kind == "full" else "slow"

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.horizon / self.dt - 1e-9))


@dataclass
class Trajectory:
    """Recorded states with shape (members, records, nodes)."""

    times: np.ndarray
    states: np.ndarray
    kind: str
    scheme: str
    frame: str
    seeds: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("record times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def actions(self) -> np.ndarray:
        if self.kind == "averaged":
            return self.states
        return 0.5 * np.abs(self.states) ** 2

    @property
    def angles(self) -> np.ndarray:
        if self.kind == "averaged":
            raise ValueError("the averaged equation carries no angles")
        return to_action_angle(self.states).angles

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1]

    def write_csv(self, path, member: int = 0) -> None:
        """One row per recorded (time, node) of a single ensemble member."""
        st = self.states[member]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "averaged":
                w.writerow(["time", "node", "action"])
                for t, row in zip(self.times, st):
                    for j, I in enumerate(row):
                        w.writerow([repr(float(t)), j, repr(float(I))])
            else:
                aa = to_action_angle(st)
                w.writerow(["time", "node", "re", "im", "action", "angle"])
                for r, t in enumerate(self.times):
                    for j in range(st.shape[1]):
                        z = st[r, j]
                        w.writerow([repr(float(t)), j, repr(float(z.real)), repr(float(z.imag)),
                                    repr(float(aa.actions[r, j])), repr(float(aa.angles[r, j]))])


# --------------------------------------------------------------------------
# single steps


def _complex_normal(rng, shape) -> np.ndarray:
    z = rng.standard_normal((2,) + tuple(shape))
    return z[0] + 1j * z[1]


def stiffness_check(u, dt: float, spec: ModelSpec) -> None:
    fmax = float(np.max(np.abs(spec.frequency.f(np.abs(np.asarray(u)) ** 2))))
    if spec.eps * dt * fmax > 0.5:
        warnings.warn(
            f"eps*dt*max|f| = {spec.eps * dt * fmax:.3g} > 0.5; the step is too coarse",
            RuntimeWarning,
            stacklevel=3,
        )


def _finite_or_raise(u, what: str):
    if not np.all(np.isfinite(u)):
        raise FloatingPointError(f"{what}: state became non-finite")
    return u


def _rk4_drift(u, dt, spec):
    h = 0.5 * dt
    k1 = _drift_unchecked(u, spec)
    k2 = _drift_unchecked(u + h * k1, spec)
    k3 = _drift_unchecked(u + h * k2, spec)
    k4 = _drift_unchecked(u + dt * k3, spec)
    k2 += k3
    k2 *= 2.0
    k1 += k4
    k1 += k2
    k1 *= dt / 6.0
    k1 += u
    return k1


def step_full(u, dt: float, spec: ModelSpec, rng=None, scheme: str = "splitting",
              noise=None, check: bool = True) -> np.ndarray:
    """One step of du = (i nabla H + eps g) dt + sqrt(eps T) (dxi + i deta).

    ``noise`` may carry the standard complex normals xi + i eta of this step;
    otherwise they are drawn from ``rng`` (only when some T_j > 0).
    """
    if check:
        u = _check_state(u)
        stiffness_check(u, dt, spec)
    if scheme == "splitting":
        x = u.real**2 + u.imag**2
        u = u * np.exp(1j * spec.f_nodes(x) * dt)
        rest = 0.0
        if len(spec.lattice.bonds):
            rest = interaction_force(u, spec)
        if spec.dissipation.kind != "none" and spec.eps > 0:
            rest = rest + spec.eps * dissipation(u, spec)
        out = u + dt * rest
    elif scheme == "em":
        out = u + dt * _drift_unchecked(u, spec)
    elif scheme == "rk4":
        out = _rk4_drift(u, dt, spec)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if spec._noisy:
        if noise is None:
            noise = _complex_normal(rng, u.shape)
        out = out + np.sqrt(spec.eps * spec.temperatures * dt) * noise
    return _finite_or_raise(out, "full SDE step") if check else out


def step_averaged(I, dtau: float, spec: ModelSpec, rng=None, noise=None,
                  closed_form: bool = True) -> np.ndarray:
    """Truncated Euler-Maruyama for dI = (R(I) + T) dtau + sqrt(2 I T) dbeta.

    The diffusion is evaluated at max(I, 0) and the proposal is clamped at 0.
    """
    I = np.asarray(I, dtype=float)
    Ip = np.maximum(I, 0.0)
    T = spec.temperatures
    R = averaged_drift_R(Ip, spec, closed_form=closed_form)
    if noise is None:
        noise = rng.standard_normal(I.shape)
    out = I + dtau * (R + T) + np.sqrt(2.0 * Ip * T * dtau) * noise
    return np.maximum(out, 0.0)


def step_effective(v, dtau: float, spec: ModelSpec, rng=None, noise=None,
                   closed_form: bool = True) -> np.ndarray:
    """Euler-Maruyama for dv = K(v) dtau + sqrt(T) dbeta with complex beta."""
    v = _check_state(v)
    if noise is None:
        noise = _complex_normal(rng, v.shape)
    K = effective_drift_K(v, spec, closed_form=closed_form)
    out = v + dtau * K + np.sqrt(spec.temperatures * dtau) * noise
    return _finite_or_raise(out, "effective equation step")


def hamiltonian_flow(u, t: float, dt: float, spec: ModelSpec) -> np.ndarray:
    """Deterministic RK4 for du/dt = i nabla H only (no dissipation, no noise)."""
    u = _check_state(u)
    n = int(np.ceil(t / dt - 1e-9))
    for _ in range(n):
        k1 = _grad_unchecked(u, spec)
        k2 = _grad_unchecked(u + 0.5 * dt * k1, spec)
        k3 = _grad_unchecked(u + 0.5 * dt * k2, spec)
        k4 = _grad_unchecked(u + dt * k3, spec)
        u = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return _finite_or_raise(u, "Hamiltonian flow")


# --------------------------------------------------------------------------
# driver


class _NoiseSource:
    """Per-member streams default_rng(seed + i), drawn in chunks of steps.

    Each member draws its own (chunk, *shape) block, so the numbers a member
    sees do not depend on how the ensemble is batched.
    """

    def __init__(self, seeds, shape, complex_noise: bool, chunk: int):
        self.rngs = [np.random.default_rng(int(s)) for s in seeds]
        self.shape = tuple(shape)
        self.complex_noise = complex_noise
        self.chunk = chunk
        self.buf = None
        self.pos = chunk

    def next(self) -> np.ndarray:
        if self.pos >= self.chunk:
            if self.complex_noise:
                z = np.stack([r.standard_normal((self.chunk, 2) + self.shape) for r in self.rngs], axis=1)
                self.buf = z[:, :, 0] + 1j * z[:, :, 1]
            else:
                self.buf = np.stack([r.standard_normal((self.chunk,) + self.shape) for r in self.rngs], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def _native_dt(cfg: SdeRun, spec: ModelSpec) -> tuple[float, float]:
    """(step in the equation's own frame, factor converting native to recorded times)."""
    if cfg.frame == cfg.native_frame:
        return cfg.dt, 1.0
    if spec.eps == 0:
        raise ValueError("frame conversion needs eps > 0")
    if cfg.native_frame == "fast":  # given slow units
        return cfg.dt / spec.eps, spec.eps
    return cfg.dt * spec.eps, 1.0 / spec.eps


def _integrate(x0, seeds, cfg: SdeRun, spec: ModelSpec):
    h, _ = _native_dt(cfg, spec)
    n = cfg.n_steps
    x = np.array(x0, dtype=float if cfg.kind == "averaged" else complex)
    records = [x.copy()]
    needs_noise = cfg.kind != "full" or spec._noisy
    noise = _NoiseSource(seeds, x.shape[1:], cfg.kind != "averaged", cfg.noise_chunk) if needs_noise else None
    for k in range(1, n + 1):
        z = noise.next() if noise is not None else None
        try:
            if cfg.kind == "full":
                x = step_full(x, h, spec, scheme=cfg.scheme, noise=z, check=False)
            elif cfg.kind == "averaged":
                x = step_averaged(x, h, spec, noise=z)
            else:
                x = step_effective(x, h, spec, noise=z)
        except FloatingPointError as exc:
            raise FloatingPointError(f"{exc} at step {k} (t = {k * cfg.dt:g})") from None
        if (k % cfg.noise_chunk == 0 or k == n) and not np.all(np.isfinite(x)):
            raise FloatingPointError(f"state became non-finite within steps "
                                     f"{max(k - cfg.noise_chunk, 0) + 1}..{k} (t <= {k * cfg.dt:g})")
        if k % cfg.stride == 0:
            records.append(x.copy())
    return np.stack(records, axis=1)


def run(initial, cfg: SdeRun, spec: ModelSpec) -> Trajectory:
    """Integrate an ensemble of ``cfg.ensemble`` members.

    ``initial`` has shape (N,) (shared by every member) or (M, N). Member i
    uses default_rng(seed + i); workers split the members into contiguous
    blocks and the blocks are merged in index order.
    """
    x0 = np.asarray(initial)
    N = spec.lattice.N
    if x0.shape[-1] != N:
        raise ValueError(f"initial state has {x0.shape[-1]} nodes, lattice has {N}")
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (cfg.ensemble, N))
    if x0.shape[0] != cfg.ensemble:
        raise ValueError("initial ensemble size does not match cfg.ensemble")
    if cfg.kind == "averaged" and np.any(np.asarray(x0) < 0):
        raise ValueError("initial actions must be non-negative")
    if cfg.kind == "full":
        stiffness_check(x0, _native_dt(cfg, spec)[0], spec)

    seeds = cfg.seed + np.arange(cfg.ensemble, dtype=np.int64)
    blocks = np.array_split(np.arange(cfg.ensemble), min(cfg.workers, cfg.ensemble))
    if len(blocks) == 1:
        states = _integrate(x0, seeds, cfg, spec)
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(lambda b: _integrate(x0[b], seeds[b], cfg, spec), blocks))
        states = np.concatenate(parts, axis=0)

    times = cfg.dt * cfg.stride * np.arange(states.shape[1])
    log.debug("run kind=%s scheme=%s M=%d steps=%d", cfg.kind, cfg.scheme, cfg.ensemble, cfg.n_steps)
    return Trajectory(times, states, cfg.kind, cfg.scheme, cfg.frame, seeds,
                      meta={"dt": cfg.dt, "horizon": cfg.horizon, "seed": cfg.seed,
                            "eps": spec.eps, "stride": cfg.stride})


def slow_times(traj: Trajectory, eps: float) -> np.ndarray:
    """Record times in slow time tau = eps t, whatever frame they were stored in."""
    return traj.times * eps if traj.frame == "fast" else traj.times


def run_coupled(initial, dts, cfg: SdeRun, spec: ModelSpec) -> dict:
    """Final states of the same Brownian paths integrated with several steps.

    Each entry of ``dts`` must be the smallest one times a power of two. The
    coarse schemes use the normalised sums of the fine increments, so the
    differences between step sizes are not swamped by sampling noise.
    Returns {dt: (M, N) final states}.
    """
    dts = sorted(float(d) for d in dts)
    fine = dts[0]
    ratios = [d / fine for d in dts]
    if any(abs(r - round(r)) > 1e-9 or (int(round(r)) & (int(round(r)) - 1)) for r in ratios):
        raise ValueError("step sizes must be the finest one times powers of two")
    ratios = [int(round(r)) for r in ratios]
    fine_cfg = SdeRun(kind=cfg.kind, scheme=cfg.scheme, dt=fine, horizon=cfg.horizon, seed=cfg.seed,
                      frame=cfg.frame, ensemble=cfg.ensemble, noise_chunk=cfg.noise_chunk)
    n = fine_cfg.n_steps
    if n % max(ratios):
        raise ValueError("horizon must be a whole number of the coarsest steps")
    x0 = np.asarray(initial)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (cfg.ensemble, spec.lattice.N))
    x0 = np.array(x0, dtype=float if cfg.kind == "averaged" else complex)
    seeds = cfg.seed + np.arange(cfg.ensemble, dtype=np.int64)
    src = _NoiseSource(seeds, x0.shape[1:], cfg.kind != "averaged", cfg.noise_chunk)
    h_fine, _ = _native_dt(fine_cfg, spec)
    states = [x0.copy() for _ in ratios]
    acc = [np.zeros_like(x0) for _ in ratios]
    for k in range(1, n + 1):
        z = src.next()
        for i, r in enumerate(ratios):
            acc[i] = acc[i] + z
            if k % r:
                continue
            dz = acc[i] / np.sqrt(r)
            acc[i] = np.zeros_like(x0)
            h = h_fine * r
            if cfg.kind == "full":
                states[i] = step_full(states[i], h, spec, scheme=cfg.scheme, noise=dz, check=False)
            elif cfg.kind == "averaged":
                states[i] = step_averaged(states[i], h, spec, noise=dz)
            else:
                states[i] = step_effective(states[i], h, spec, noise=dz)
    return {d: s for d, s in zip(dts, states)}
