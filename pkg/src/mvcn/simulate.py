"""Time-stepping engine for block-structured interacting particle systems.

M independent blocks of N particles each: particles inside a block share
one common-noise path and interact through the block's empirical measure;
blocks are mutually independent.  Block-level empiricals estimate the
conditional law of the limit dynamics, and the family of M block
empiricals estimates the law of that conditional law.

The scheme is (tamed) Euler-Maruyama:

    x <- x + f~(x, u) dt + g(x, u) sqrt(dt) xi + g0(x, u) sqrt(dt) xi0

with f~ = f / (1 + dt |f|) when taming is on.  Taming is the default: the
builtin cubic drifts grow like |x|^3 and plain Euler blows up at moderate
step sizes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import noise
from .measure import EmpiricalMeasure, MeasureEnsemble, wasserstein_p, nested_wasserstein
from .model import ModelSpec

FLOAT_FMT = "%.17g"


class BlowUpError(RuntimeError):
    """A particle state became non-finite; carries diagnostics and the
    partial record accumulated so far."""

    def __init__(self, block, particle, time, record=None):
        super().__init__(
            f"blow-up: non-finite state in block {block}, particle {particle}, t={time:.6g}"
        )
        self.block = block
        self.particle = particle
        self.time = time
        self.record = record


@dataclass
class SimConfig:
    """Run configuration; everything a run needs besides the model."""

    dt: float
    t_end: float
    particles: int  # N, per block
    blocks: int  # M
    seed: int
    taming: bool = True
    record_every: int = 10  # steps between moment/stat records
    snapshot_times: tuple = ()  # simulation times at which to store full states
    initial_law: str = "point:0"
    threads: int = 1  # accepted for interface stability; results never depend on it

    def __post_init__(self):
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("need dt > 0 and t_end >= 0")
        if self.particles < 1 or self.blocks < 1 or self.record_every < 1:
            raise ValueError("particles, blocks, record_every must be >= 1")
        self.snapshot_times = tuple(float(t) for t in self.snapshot_times)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "t_end": self.t_end,
            "particles": self.particles,
            "blocks": self.blocks,
            "seed": self.seed,
            "taming": self.taming,
            "record_every": self.record_every,
            "snapshot_times": list(self.snapshot_times),
            "initial_law": self.initial_law,
            "threads": self.threads,
        }


@dataclass
class ParticleEnsemble:
    """States of M x N particles in R^d plus the simulation clock."""

    states: np.ndarray  # (M, N, d)
    time: float = 0.0

    @property
    def blocks(self) -> int:
        return self.states.shape[0]

    @property
    def particles_per_block(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def pooled(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states.reshape(-1, self.dim))

    def block_ensemble(self) -> MeasureEnsemble:
        return MeasureEnsemble(tuple(EmpiricalMeasure(b) for b in self.states))


# --------------------------------------------------------------------------
# initial laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialLaw:
    """Parsed `point:... | gauss:m,s | csv:path` initial-law spec."""

    kind: str
    mean: np.ndarray = None  # type: ignore[assignment]
    std: float = 0.0
    path: str = ""

    def sample(self, root: int, block: int, n: int, dim: int) -> np.ndarray:
        """Per-particle initial draws from the block's init stream."""
        if self.kind == "point":
            x = np.broadcast_to(self.mean, (dim,))
            return np.tile(x, (n, 1))
        if self.kind == "gauss":
            z = noise.init_normals(root, block, n, dim)
            return self.mean + self.std * z
        pts = np.loadtxt(self.path, delimiter=",", skiprows=1, ndmin=2)
        pts = pts[:, :dim]
        idx = np.minimum((noise.init_uniforms(root, block, n) * len(pts)).astype(int),
                         len(pts) - 1)
        return pts[idx]


def parse_initial_law(spec: str, dim: int) -> InitialLaw:
    kind, _, rest = spec.partition(":")
    if kind == "point":
        vals = [float(v) for v in rest.split(",")] if rest else [0.0]
        if len(vals) == 1:
            vals = vals * dim
        if len(vals) != dim:
            raise ValueError(f"point law needs 1 or {dim} coordinates, got {len(vals)}")
        return InitialLaw("point", mean=np.array(vals))
    if kind == "gauss":
        parts = rest.split(",")
        if len(parts) != 2:
            raise ValueError("gauss law is gauss:mean,std")
        return InitialLaw("gauss", mean=np.full(dim, float(parts[0])), std=float(parts[1]))
    if kind == "csv":
        if not os.path.exists(rest):
            raise ValueError(f"csv initial law: no such file {rest}")
        return InitialLaw("csv", path=rest)
    raise ValueError(f"unknown initial law '{spec}' (use point:.. | gauss:m,s | csv:PATH)")


# --------------------------------------------------------------------------
# noise bundle + single step
# --------------------------------------------------------------------------


class NoiseBundle:
    """Idiosyncratic + common streams for all blocks of one run."""

    def __init__(self, seed: int, blocks: int, dim: int, nonce: int = 0):
        self.root = noise._root_word(seed, nonce)
        self.dim = dim
        self.idio = [noise.IdioStream(self.root, b, dim) for b in range(blocks)]
        self.common = [noise.CommonStream(self.root, b, dim) for b in range(blocks)]

    def step_draws(self, n: int):
        """(M, n, d) idiosyncratic normals and (M, 1, d) common normals for
        the next step; n may be smaller than the slab width (reference /
        reduced systems read the same leading columns)."""
        M = len(self.idio)
        xi = np.empty((M, n, self.dim))
        xi0 = np.empty((M, 1, self.dim))
        for b in range(M):
            xi[b] = self.idio[b].step_normals(n)
            xi0[b, 0] = self.common[b].step_normals()
        return xi, xi0


def _advance(model: ModelSpec, states: np.ndarray, dt: float, xi, xi0, taming: bool) -> np.ndarray:
    """One Euler-Maruyama update of (M, N, d) states (pure function)."""
    stats = _ensemble_stats(model, states)
    f = model.drift_batch(states, stats)
    if taming:
        f = f / (1.0 + dt * np.linalg.norm(f, axis=-1, keepdims=True))
    gd = model.diff_idio_diag(states, stats)
    g0d = model.diff_common_diag(states, stats)
    sq = math.sqrt(dt)
    return states + f * dt + gd * (sq * xi) + g0d * (sq * xi0)


def _ensemble_stats(model: ModelSpec, states: np.ndarray) -> dict:
    """Per-block measure statistics, shapes broadcastable against (M, N, d)."""
    mean = states.mean(axis=1, keepdims=True)  # (M, 1, d)
    stats = {"mean": mean}
    for k, term in enumerate(model.drift.mean_terms):
        if term.kind == "w2_to_dirac":
            stats[k] = np.sqrt(np.mean(np.sum(states**2, axis=-1), axis=1))[:, None, None]
        elif term.kind == "expectation_linear":
            stats[k] = mean
        else:
            stats[k] = (states**term.power).mean(axis=1, keepdims=True)
    return stats


def em_step(ens: ParticleEnsemble, model: ModelSpec, dt: float, bundle: NoiseBundle,
            taming: bool = True) -> ParticleEnsemble:
    """Advance the whole ensemble by one step, consuming one step's noise."""
    xi, xi0 = bundle.step_draws(ens.particles_per_block)
    with np.errstate(over="ignore", invalid="ignore"):
        new = _advance(model, ens.states, dt, xi, xi0, taming)
    if not np.all(np.isfinite(new)):
        b, i, _ = np.argwhere(~np.isfinite(new))[0]
        raise BlowUpError(int(b), int(i), ens.time + dt)
    return ParticleEnsemble(new, ens.time + dt)


# --------------------------------------------------------------------------
# full runs
# --------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    moments: np.ndarray  # pooled p-th moment of |x| at each recorded time
    moment_stderr: np.ndarray
    block_means: np.ndarray  # (T, M, d)
    block_second: np.ndarray  # (T, M): per-block mean |x|^2
    snapshots: dict  # time -> (M, N, d) states
    p: float
    dim: int

    def pooled_variance(self, t_min: float = 0.0) -> float:
        """Time-averaged pooled variance over recorded times >= t_min
        (scalar: averaged over coordinates)."""
        sel = self.times >= t_min
        sec = self.block_second[sel].mean(axis=1)  # pooled E|x|^2 per time
        mean = self.block_means[sel].mean(axis=1)  # pooled mean per time (T, d)
        var = sec - np.sum(mean**2, axis=1)
        return float(var.mean() / self.dim)

    def block_mean_variance(self, t_min: float = 0.0) -> float:
        """Time-averaged variance of the per-block means (across blocks)."""
        sel = self.times >= t_min
        bm = self.block_means[sel]  # (T, M, d)
        var = (bm**2).mean(axis=1) - bm.mean(axis=1) ** 2  # (T, d)
        return float(var.sum(axis=1).mean())


def _record_steps(n_steps: int, every: int):
    steps = list(range(0, n_steps + 1, every))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return set(steps)


def _snapshot_steps(cfg: SimConfig):
    return {int(round(t / cfg.dt)): float(t) for t in cfg.snapshot_times}


def initial_states(model: ModelSpec, cfg: SimConfig, bundle: NoiseBundle,
                   law: InitialLaw = None) -> np.ndarray:
    law = law or parse_initial_law(cfg.initial_law, model.dim)
    return np.stack(
        [law.sample(bundle.root, b, cfg.particles, model.dim) for b in range(cfg.blocks)]
    )


def simulate(model: ModelSpec, cfg: SimConfig, nonce: int = 0) -> TrajectoryRecord:
    """Run the particle system and record moments/snapshots at cadence.

    Bitwise deterministic given (model, cfg, nonce); the nonce selects an
    independent family of noise streams under the same seed.
    """
    if not cfg.taming and 3 in model.drift.poly and cfg.dt > 0.01:
        import warnings

        warnings.warn(
            f"dt={cfg.dt} without taming on a cubic-drift model risks blow-up", stacklevel=2
        )
    bundle = NoiseBundle(cfg.seed, cfg.blocks, model.dim, nonce)
    states = initial_states(model, cfg, bundle)
    p = model.constants.p
    n_steps = cfg.n_steps
    rec_steps = _record_steps(n_steps, cfg.record_every)
    snap_steps = _snapshot_steps(cfg)

    times, moments, stderrs, bmeans, bsecond = [], [], [], [], []
    snapshots = {}

    def record(k: int, s: np.ndarray):
        t = k * cfg.dt
        if not np.all(np.isfinite(s)):
            b, i, _ = np.argwhere(~np.isfinite(s))[0]
            raise BlowUpError(int(b), int(i), t, record=_finish())
        if k in rec_steps:
            r2 = np.sum(s**2, axis=-1)
            rp = r2 ** (p / 2.0)
            times.append(t)
            moments.append(rp.mean())
            stderrs.append(rp.std() / math.sqrt(rp.size))
            bmeans.append(s.mean(axis=1))
            bsecond.append(r2.mean(axis=1))
        if k in snap_steps:
            snapshots[snap_steps[k]] = s.copy()

    def _finish():
        return TrajectoryRecord(
            np.array(times), np.array(moments), np.array(stderrs),
            np.array(bmeans), np.array(bsecond), snapshots, p, model.dim,
        )

    record(0, states)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            xi, xi0 = bundle.step_draws(cfg.particles)
            states = _advance(model, states, cfg.dt, xi, xi0, cfg.taming)
            if (k + 1) in rec_steps or (k + 1) in snap_steps:
                record(k + 1, states)
    return _finish()


@dataclass
class CoupledRecord:
    times: np.ndarray
    mean_gap_p: np.ndarray  # (1/MN) sum |x - xbar|^p
    w_p_pooled: np.ndarray
    nested_w_p: np.ndarray
    p: float
    final_states: tuple = None  # type: ignore[assignment]


def _deterministic_subsample(points: np.ndarray, k: int) -> np.ndarray:
    if len(points) <= k:
        return points
    idx = np.linspace(0, len(points) - 1, k).astype(int)
    return points[idx]


def empirical_distance(xa: np.ndarray, xb: np.ndarray, p: float, cap: int = 512) -> float:
    """W_p between two point clouds; exact in 1D, exact-on-a-deterministic-
    subsample (same indices both sides) above the assignment cap in d >= 2."""
    if xa.shape[1] == 1:
        return wasserstein_p(EmpiricalMeasure(xa), EmpiricalMeasure(xb), p)
    sa, sb = _deterministic_subsample(xa, cap), _deterministic_subsample(xb, cap)
    n = min(len(sa), len(sb))
    return wasserstein_p(EmpiricalMeasure(sa[:n]), EmpiricalMeasure(sb[:n]), p)


def nested_distance(sa: np.ndarray, sb: np.ndarray, p: float, inner_cap: int = 128) -> float:
    """Nested distance between two (M, N, d) block families, inner measures
    subsampled deterministically to inner_cap in d >= 2."""
    if sa.shape[2] == 1:
        A = MeasureEnsemble(tuple(EmpiricalMeasure(b) for b in sa))
        B = MeasureEnsemble(tuple(EmpiricalMeasure(b) for b in sb))
    else:
        A = MeasureEnsemble(tuple(EmpiricalMeasure(_deterministic_subsample(b, inner_cap)) for b in sa))
        B = MeasureEnsemble(tuple(EmpiricalMeasure(_deterministic_subsample(b, inner_cap)) for b in sb))
    return nested_wasserstein(A, B, p)


def coupled_simulate(model: ModelSpec, cfg: SimConfig, init_a: str, init_b: str,
                     nonce: int = 0) -> CoupledRecord:
    """Synchronous coupling: two copies driven by identical noise streams
    (same seed, same stream addressing), started from init_a and init_b."""
    law_a = parse_initial_law(init_a, model.dim)
    law_b = parse_initial_law(init_b, model.dim)
    bundle = NoiseBundle(cfg.seed, cfg.blocks, model.dim, nonce)
    sa = initial_states(model, cfg, bundle, law_a)
    sb = initial_states(model, cfg, bundle, law_b)
    p = model.constants.p
    n_steps = cfg.n_steps
    rec_steps = _record_steps(n_steps, cfg.record_every)
    d = model.dim

    times, gaps, wps, nwps = [], [], [], []

    def record(k, sa, sb):
        if not (np.all(np.isfinite(sa)) and np.all(np.isfinite(sb))):
            bad = sa if not np.all(np.isfinite(sa)) else sb
            b, i, _ = np.argwhere(~np.isfinite(bad))[0]
            raise BlowUpError(int(b), int(i), k * cfg.dt)
        times.append(k * cfg.dt)
        gap = np.sum((sa - sb) ** 2, axis=-1) ** (p / 2.0)
        gaps.append(gap.mean())
        wps.append(empirical_distance(sa.reshape(-1, d), sb.reshape(-1, d), p))
        nwps.append(nested_distance(sa, sb, p))

    record(0, sa, sb)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            xi, xi0 = bundle.step_draws(cfg.particles)
            sa = _advance(model, sa, cfg.dt, xi, xi0, cfg.taming)
            sb = _advance(model, sb, cfg.dt, xi, xi0, cfg.taming)
            if (k + 1) in rec_steps:
                record(k + 1, sa, sb)
    return CoupledRecord(
        np.array(times), np.array(gaps), np.array(wps), np.array(nwps), p,
        final_states=(sa, sb),
    )


# --------------------------------------------------------------------------
# CSV emission
# --------------------------------------------------------------------------


def write_trajectory_csvs(rec: TrajectoryRecord, outdir):
    os.makedirs(outdir, exist_ok=True)
    data = np.column_stack([rec.times, np.full_like(rec.times, rec.p), rec.moments,
                            rec.moment_stderr])
    np.savetxt(os.path.join(outdir, "moments.csv"), data, delimiter=",",
               header="t,p,moment,stderr", comments="", fmt=FLOAT_FMT)
    for t, states in sorted(rec.snapshots.items()):
        M, N, d = states.shape
        ids = np.repeat(np.arange(M), N)[:, None]
        rows = np.hstack([ids, states.reshape(-1, d)])
        header = "block_id," + ",".join(f"x{j + 1}" for j in range(d))
        np.savetxt(os.path.join(outdir, f"snapshot_{t:g}.csv"), rows, delimiter=",",
                   header=header, comments="", fmt=FLOAT_FMT)


def write_gap_csv(rec: CoupledRecord, outdir):
    os.makedirs(outdir, exist_ok=True)
    data = np.column_stack([rec.times, rec.mean_gap_p, rec.w_p_pooled, rec.nested_w_p])
    np.savetxt(os.path.join(outdir, "gap.csv"), data, delimiter=",",
               header="t,mean_gap_p,w_p_pooled,nested_w_p", comments="", fmt=FLOAT_FMT)
