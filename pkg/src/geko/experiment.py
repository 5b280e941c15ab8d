"""End-to-end pipelines driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ExperimentConfig
from .dynamics import Trajectory, rollout, sample_box, sample_snapshots, sinusoid_input, van_der_pol
from .errors import ConfigError, DimensionError, GekoError
from .koopman import (
    KoopmanModel,
    fit_direct,
    fit_geko,
    fit_kic,
    lifted_error_surface,
    predict_states,
    propagate,
)
from .lemma import build_lemma_data
from .numerics import hankel, kron_vec
from .observables import delay_map, havok_lift, identity_map, imq_map, kic_map, lift_trajectory

log = logging.getLogger(__name__)

BYTES_PER_FLOAT = 8


def build_system(cfg: ExperimentConfig):
    s = cfg.system
    return van_der_pol(mu=s.mu, Ts=s.Ts, substeps=s.substeps, x_box=s.x_box, u_box=s.u_box)


def eval_inputs(cfg: ExperimentConfig, horizon: int | None = None) -> np.ndarray:
    e = cfg.eval
    return sinusoid_input(e.amplitude, e.frequency, e.horizon if horizon is None else horizon)


def truth_trajectory(cfg: ExperimentConfig, horizon: int | None = None) -> Trajectory:
    return rollout(build_system(cfg), cfg.eval.x0, eval_inputs(cfg, horizon))


def feature_dim(method: str, n_z: int, n_v: int) -> int:
    """Regressor rows of a sweep tuple (``n_z`` is the center count for KIC)."""
    return n_z if method == "kic" else n_z * n_v


def memory_estimate(method: str, n_z: int, n_v: int, samples_per_feature: int = 4) -> int:
    """Rough peak bytes: regressor, Gram matrix and its factor."""
    d = feature_dim(method, n_z, n_v)
    return BYTES_PER_FLOAT * (samples_per_feature * d * d + 2 * d * d)


def check_size(cfg: ExperimentConfig, method: str, n_z: int, n_v: int, large: bool) -> str | None:
    """Gate full-scale runs; returns a memory message when over threshold."""
    d = feature_dim(method, n_z, n_v)
    if d <= cfg.bench.large_threshold:
        return None
    est = memory_estimate(method, n_z, n_v, cfg.data.samples_per_feature)
    msg = f"{method} n_z={n_z} n_v={n_v}: {d} features, estimated peak memory {est / 2**30:.1f} GiB"
    if not large:
        raise ConfigError(msg + " (pass --large to run it)")
    return msg


def observables_for(cfg: ExperimentConfig, n_z: int, n_v: int, dims: tuple | None = None):
    """State and input maps; ``dims=(n, m)`` sizes identity maps for external data."""
    s, o = cfg.system, cfg.observables
    if o.kind == "identity":
        n, m = dims if dims is not None else (len(s.x_box[0]), len(s.u_box[0]))
        return identity_map(n), identity_map(m)
    psi_x = imq_map(s.x_box, n_z, o.sigma_x, o.beta, o.center_method, cfg.state_center_seed)
    psi_u = imq_map(s.u_box, n_v, o.sigma_u, o.beta, o.center_method, cfg.input_center_seed)
    return psi_x, psi_u


def training_snapshots(cfg: ExperimentConfig, features: int):
    count = cfg.data.count or cfg.data.samples_per_feature * features
    return sample_snapshots(
        build_system(cfg), count, cfg.data.sampler, cfg.data_seed, cfg.data.chain_length
    )


def training_trajectory(cfg: ExperimentConfig, length: int) -> Trajectory:
    """One long rollout from ``eval.x0`` under i.i.d. uniform inputs."""
    system = build_system(cfg)
    rng = np.random.default_rng(cfg.data_seed)
    return rollout(system, cfg.eval.x0, sample_box(system.u_box, length, "uniform", rng))


def fit_model(
    cfg: ExperimentConfig,
    method: str | None = None,
    n_z: int | None = None,
    n_v: int | None = None,
    data=None,
    gamma: float | None = None,
) -> KoopmanModel:
    """Fit one model; ``data`` (Trajectory or SnapshotBatch) overrides sampling."""
    method = method or cfg.fit.method
    o = cfg.observables
    n_z = o.n_z if n_z is None else n_z
    n_v = o.n_v if n_v is None else n_v
    gamma = cfg.fit.gamma if gamma is None else gamma
    if method == "kic":
        s = cfg.system
        psi = kic_map(s.x_box, s.u_box, n_z, o.kic_sigma, o.center_method, cfg.state_center_seed)
        snaps = data if data is not None else training_snapshots(cfg, n_z)
        if isinstance(snaps, Trajectory):
            snaps = snaps.snapshots()
        return fit_kic(snaps, psi.centers, gamma=gamma, mode=cfg.fit.kic_mode, psi=psi)
    if method == "havok":
        traj = data if isinstance(data, Trajectory) else training_trajectory(cfg, cfg.data.count or 2000)
        lifted, psi_x = havok_lift(traj.states, traj.inputs, o.x_order, o.u_order, o.havok_rank)
        psi_u = delay_map(traj.inputs.shape[1], o.u_order)
        return fit_geko(lifted, gamma, psi_x, psi_u, decoder=cfg.fit.decoder)
    dims = None
    if data is not None:
        dims = (data.states.shape[1], data.inputs.shape[1]) if isinstance(data, Trajectory) else (data.x.shape[1], data.u.shape[1])
    psi_x, psi_u = observables_for(cfg, n_z, n_v, dims)
    snaps = data if data is not None else training_snapshots(cfg, psi_x.output_dim * psi_u.output_dim)
    lifted = lift_trajectory(snaps, psi_x, psi_u)
    if method == "direct":
        return fit_direct(lifted, gamma, psi_x, psi_u)
    return fit_geko(lifted, gamma, psi_x, psi_u, decoder=cfg.fit.decoder)


def _evaluate_delay(model: KoopmanModel, truth: Trajectory):
    # windows start at t = 0..width; the decoded state is the first entry of the next window
    q_x, q_u = model.psi_x.order, model.psi_u.order
    width = min(truth.length + 1 - q_x, truth.length - q_u)
    if width < 1:
        raise DimensionError("evaluation horizon shorter than the delay orders")
    Z_true = model.psi_x.lift_sequence(truth.states)[:, : width + 1]
    V = hankel(truth.inputs, q_u, width)[:, :width]
    Z = propagate(model, Z_true[:, 0], V.T).z
    surface = np.abs(Z - Z_true.T).T
    xs = np.vstack([truth.states[:1], [model.K_direct @ kron_vec(Z[t], V[:, t]) for t in range(width)]])
    return surface, xs, truth.states[: width + 1]


def evaluate(model: KoopmanModel, truth: Trajectory) -> dict:
    """Lifted error surface plus its summaries and the decoded state error."""
    if model.psi_x.kind == "delay":
        surface, xs, ref = _evaluate_delay(model, truth)
    else:
        surface = lifted_error_surface(model, truth) if model.K is not None else np.zeros((0, truth.length + 1))
        xs = predict_states(model, truth.states[0], truth.inputs)
        ref = truth.states
    state_err = np.abs(xs - ref)
    return {
        "surface": surface,
        "states": xs,
        "mean_lifted_error": float(surface.mean()) if surface.size else float("nan"),
        "max_lifted_error": float(surface.max()) if surface.size else float("nan"),
        "per_t_max": surface.max(axis=0) if surface.size else np.zeros(0),
        "mean_state_error": float(state_err.mean()),
        "max_state_error": float(state_err.max()),
    }


def error_summary(result: dict) -> dict:
    return {
        "mean_lifted_error": result["mean_lifted_error"],
        "max_lifted_error": result["max_lifted_error"],
        "per_t_max": [float(v) for v in result["per_t_max"]],
        "mean_state_error": result["mean_state_error"],
        "max_state_error": result["max_state_error"],
    }


# -- benchmark --------------------------------------------------------------------

REPORT_COLUMNS = (
    "method",
    "n_z",
    "n_v",
    "features",
    "samples",
    "train_residual",
    "rank",
    "mean_lifted_error",
    "max_lifted_error",
    "mean_state_error",
    "max_state_error",
    "status",
    "config_hash",
    "seed",
)


def run_tuple(cfg: ExperimentConfig, method: str, n_z: int, n_v: int, large: bool = False):
    """Full pipeline for one sweep tuple; failures become a status string."""
    row = {
        "method": method,
        "n_z": int(n_z),
        "n_v": int(n_v),
        "features": feature_dim(method, n_z, n_v),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
    }
    t0 = time.perf_counter()
    surface = None
    try:
        check_size(cfg, method, n_z, n_v, large)
        model = fit_model(cfg, method, n_z, n_v)
        res = evaluate(model, truth_trajectory(cfg))
        surface = res["surface"]
        row.update(
            samples=model.diagnostics.get("samples"),
            train_residual=model.diagnostics.get("residual"),
            rank=model.diagnostics.get("rank"),
            mean_lifted_error=res["mean_lifted_error"],
            max_lifted_error=res["max_lifted_error"],
            mean_state_error=res["mean_state_error"],
            max_state_error=res["max_state_error"],
            status="ok",
        )
    except (GekoError, np.linalg.LinAlgError, MemoryError) as exc:
        log.warning("tuple %s/%s/%s failed: %s", method, n_z, n_v, exc)
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    for col in REPORT_COLUMNS:
        row.setdefault(col, None)
    return row, surface, time.perf_counter() - t0


def _run_tuple_star(args):
    return run_tuple(*args)


def run_bench(cfg: ExperimentConfig, large: bool = False, workers: int | None = None):
    """Run the sweep; returns ``(rows, surfaces, timings)`` sorted by method then features."""
    tuples = [(str(m), int(a), int(b)) for m, a, b in cfg.bench.sweep]
    workers = cfg.bench.workers if workers is None else workers
    jobs = [(cfg, m, a, b, large) for m, a, b in tuples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_tuple_star, jobs))
    else:
        results = [_run_tuple_star(j) for j in jobs]
    order = sorted(range(len(results)), key=lambda i: (results[i][0]["method"], results[i][0]["features"], i))
    rows = [results[i][0] for i in order]
    surfaces = [results[i][1] for i in order]
    timings = [results[i][2] for i in order]
    return rows, surfaces, timings


# -- lemma pipeline ------------------------------------------------------------------

def lemma_training(cfg: ExperimentConfig, traj: Trajectory | None = None):
    """Lift a single trajectory and assemble the lemma matrices.

    Returns ``(LemmaData, psi_x, psi_u)``; the outputs are ``Psi_x(x_{t+1})``
    (or raw states when ``lemma.raw_output``).
    """
    o, L = cfg.observables, cfg.lemma
    psi_x, psi_u = observables_for(cfg, o.n_z, o.n_v)
    rows = L.N * o.n_z * o.n_v
    if traj is None:
        length = L.length or 2 * rows + L.N
        traj = training_trajectory(cfg, length)
    Z = psi_x.lift(traj.states).T
    V = psi_u.lift(traj.inputs).T
    w_next = traj.states[1:] if L.raw_output else Z[1:]
    data = build_lemma_data(Z[:-1], V, w_next, L.N, raw_output=L.raw_output, check=False)
    return data, psi_x, psi_u
