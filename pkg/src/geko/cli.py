"""Command-line harness: ``geko <command> [--config ...] [--seed ...] [--out ...]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .config import load_config
from .dynamics import Trajectory
from .errors import ConfigError, DimensionError, GekoError
from .io import load_lemma, load_model, read_trajectory_csv, save_lemma, save_model, write_trajectory_csv
from .koopman import lift_inputs, propagate
from .lemma import WindowQuery, output_map, pe_check, predict_outputs
from .numerics import kron_vec, write_matrix_csv

log = logging.getLogger("geko")


def _header_text(cfg, **extra) -> str:
    h = {**cfg.header(), **extra}
    return " ".join(f"{k}={v}" for k, v in h.items())


def _outdir(cfg, args) -> Path:
    d = Path(args.out or cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _apply_eval_flags(cfg, args):
    if getattr(args, "x0", None) is not None:
        cfg.eval.x0 = _floats(args.x0)
    for name in ("amplitude", "frequency", "horizon"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg.eval, name, val)
    cfg.validate()


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header: str, columns: list, rows: list) -> None:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else (format(v, ".17g") if isinstance(v, float) else v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _truth(cfg, args) -> Trajectory:
    if getattr(args, "truth", None):
        return read_trajectory_csv(args.truth, cfg.system.Ts)
    return ex.truth_trajectory(cfg)


# -- commands -------------------------------------------------------------------

def cmd_simulate(cfg, args) -> int:
    _apply_eval_flags(cfg, args)
    if args.input == "uniform":
        traj = ex.training_trajectory(cfg, cfg.eval.horizon)
    else:
        traj = ex.truth_trajectory(cfg)
    out = _outdir(cfg, args) / "trajectory.csv"
    write_trajectory_csv(out, traj, cfg.header())
    final = ", ".join(format(v, ".6g") for v in traj.states[-1])
    print(f"states={traj.states.shape[0]} inputs={traj.inputs.shape[0]} final_state=[{final}]")
    print(f"wrote {out}")
    return 0


def cmd_fit(cfg, args) -> int:
    method = args.method or cfg.fit.method
    cfg.fit.method = method
    if args.gamma is not None:
        cfg.fit.gamma = args.gamma
    data = read_trajectory_csv(args.data, cfg.system.Ts) if args.data else None
    if data is None and method != "havok":
        n_z = cfg.observables.kic_centers if method == "kic" else cfg.observables.n_z
        msg = ex.check_size(cfg, method, n_z, cfg.observables.n_v, args.large)
        if msg:
            print(msg)
    if method == "kic":
        model = ex.fit_model(cfg, "kic", cfg.observables.kic_centers, 0, data=data)
    else:
        model = ex.fit_model(cfg, method, data=data)
    out = _outdir(cfg, args) / "model.json"
    header = cfg.header()
    if args.data:
        header["data"] = Path(args.data).name
    save_model(out, model, header)
    d = model.diagnostics
    print(f"method={model.method} features={d.get('features')} samples={d.get('samples')}")
    print(f"residual={d.get('residual'):.6g} rank={d.get('rank')} gamma={d.get('gamma'):g}")
    print(f"wrote {out}")
    return 0


def _prediction_rows(Z, X):
    H = max(len(Z), len(X)) - 1
    rows = []
    for t in range(H + 1):
        r = [t]
        r += list(Z[t]) if t < len(Z) else [None] * Z.shape[1]
        r += list(X[t]) if t < len(X) else [None] * X.shape[1]
        rows.append(r)
    return rows


def _predict_lemma(cfg, args, truth: Trajectory, out: Path, header: str) -> int:
    if not args.lemma:
        raise ConfigError("--mode lemma needs --lemma <dir>")
    data, obs = load_lemma(args.lemma)
    if "psi_x" not in obs or "psi_u" not in obs:
        raise ConfigError(f"{args.lemma}: manifest carries no observable maps")
    psi_x, psi_u = obs["psi_x"], obs["psi_u"]
    gamma = args.gamma if args.gamma is not None else (cfg.lemma.gamma if cfg.lemma.gamma is not None else cfg.fit.gamma)
    if psi_x.input_dim != truth.states.shape[1] or psi_u.input_dim != truth.inputs.shape[1]:
        raise DimensionError("lemma observables do not match the trajectory dimensions")
    Z_true = psi_x.lift(truth.states).T
    V = psi_u.lift(truth.inputs).T
    H = truth.length
    ref = truth.states if data.raw_output else Z_true
    if data.N == 1 and not data.raw_output and data.n_w == data.n_z:
        # one-step map iterated on its own predictions
        M = output_map(data, gamma)
        Z = np.empty_like(Z_true)
        Z[0] = Z_true[0]
        for t in range(H):
            Z[t + 1] = M @ kron_vec(Z[t], V[t])
        pred = Z
    else:
        # teacher-forced: each window starts from the true lifted states
        pred = np.full_like(ref, np.nan)
        pred[0] = ref[0]
        starts = range(0, H - data.N + 1, data.N)
        for t0 in starts:
            q = WindowQuery.from_lifted(Z_true, V, t0, data.N)
            pred[t0 + 1 : t0 + 1 + data.N] = predict_outputs(data, q, gamma)
        covered = 1 + data.N * len(starts)
        pred, ref = pred[:covered], ref[:covered]
    cols = ["t"] + [f"w{i + 1}" for i in range(pred.shape[1])]
    _write_rows(out / "prediction.csv", header, cols, [[t, *map(float, pred[t])] for t in range(len(pred))])
    surface = np.abs(pred - ref).T
    _write_surface(out, header, surface)
    return 0


def _write_surface(out: Path, header: str, surface: np.ndarray) -> None:
    write_matrix_csv(out / "error_surface.csv", surface, header)
    summary = {
        "header": header,
        "shape": list(surface.shape),
        "mean_abs_error": float(surface.mean()) if surface.size else 0.0,
        "max_abs_error": float(surface.max()) if surface.size else 0.0,
        "per_t_max": [float(v) for v in surface.max(axis=0)] if surface.size else [],
    }
    _write_json(out / "error_summary.json", summary)
    print(f"error_surface shape={surface.shape[0]}x{surface.shape[1]} mean={summary['mean_abs_error']:.6g} max={summary['max_abs_error']:.6g}")


def cmd_predict(cfg, args) -> int:
    _apply_eval_flags(cfg, args)
    truth = _truth(cfg, args)
    out = _outdir(cfg, args)
    header = _header_text(cfg, mode=args.mode)
    if args.mode == "lemma":
        return _predict_lemma(cfg, args, truth, out, header)
    model = load_model(args.model or out / "model.json")
    n = truth.states.shape[1]
    m = truth.inputs.shape[1]
    in_dim = model.psi_x.input_dim if model.method != "kic" else model.psi_x.input_dim - m
    if in_dim != n or (model.psi_u is not None and model.psi_u.input_dim != m):
        raise DimensionError(f"model expects states of dimension {in_dim}, trajectory has {n}")
    res = ex.evaluate(model, truth)
    surface = res["surface"]
    if model.K is not None and model.method != "kic":
        Z = propagate(model, model.psi_x(truth.states[0]), lift_inputs(model, truth.inputs)).z
    else:
        Z = np.zeros((0, 0))
    X = res["states"]
    cols = ["t"] + [f"z{i + 1}" for i in range(Z.shape[1])] + [f"xhat{i + 1}" for i in range(X.shape[1])]
    rows = _prediction_rows(Z if Z.size else np.zeros((len(X), 0)), X)
    _write_rows(out / "prediction.csv", header, cols, rows)
    _write_surface(out, header, surface)
    print(f"state error mean={res['mean_state_error']:.6g} max={res['max_state_error']:.6g}")
    return 0


def cmd_bench(cfg, args) -> int:
    rows, surfaces, timings = ex.run_bench(cfg, large=args.large, workers=args.workers)
    out = _outdir(cfg, args)
    header = _header_text(cfg)
    cols = list(ex.REPORT_COLUMNS)
    _write_rows(out / "bench.csv", header, cols, [[r[c] for c in cols] for r in rows])
    _write_json(out / "bench.json", {"header": header, "rows": rows})
    _write_json(out / "bench_timing.json", {
        "header": header,
        "wall_time_s": [{"method": r["method"], "n_z": r["n_z"], "n_v": r["n_v"], "seconds": t} for r, t in zip(rows, timings)],
    })
    sdir = out / "surfaces"
    sdir.mkdir(exist_ok=True)
    for r, s in zip(rows, surfaces):
        if s is not None:
            write_matrix_csv(sdir / f"{r['method']}_{r['n_z']}x{r['n_v']}.csv", s, header)
    print(f"{'method':<7}{'n_z':>6}{'n_v':>5}{'features':>9}{'mean_lifted':>14}{'mean_state':>13}  status")
    for r in rows:
        ml = r["mean_lifted_error"]
        ms = r["mean_state_error"]
        print(f"{r['method']:<7}{r['n_z']:>6}{r['n_v']:>5}{r['features']:>9}"
              f"{(f'{ml:.4g}' if ml is not None else '-'):>14}{(f'{ms:.4g}' if ms is not None else '-'):>13}  {r['status']}")
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} tuples failed; see the status column")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def cmd_lemma_build(cfg, args) -> int:
    if args.N is not None:
        cfg.lemma.N = args.N
    o = cfg.observables
    rows = cfg.lemma.N * o.n_z * o.n_v
    if rows > cfg.bench.large_threshold:
        msg = f"lemma data with {rows} rows, estimated peak memory {ex.BYTES_PER_FLOAT * 4 * rows * rows / 2**30:.1f} GiB"
        if not args.large:
            raise ConfigError(msg + " (pass --large to run it)")
        print(msg)
    traj = read_trajectory_csv(args.data, cfg.system.Ts) if args.data else None
    data, psi_x, psi_u = ex.lemma_training(cfg, traj)
    out = _outdir(cfg, args) / "lemma"
    save_lemma(out, data, cfg.header(), {"psi_x": psi_x, "psi_u": psi_u})
    rep = pe_check(data)
    print(f"F_N shape={data.F.shape[0]}x{data.F.shape[1]} N={data.N} T={data.T}")
    print(f"persistently_exciting={rep.full_row_rank} rank={rep.rank}/{rep.rows} smallest_sv={rep.smallest_sv:.6g}")
    print(f"wrote {out}")
    return 0


def cmd_lemma_predict(cfg, args) -> int:
    data, obs = load_lemma(args.lemma)
    if "psi_x" not in obs or "psi_u" not in obs:
        raise ConfigError(f"{args.lemma}: manifest carries no observable maps")
    psi_x, psi_u = obs["psi_x"], obs["psi_u"]
    gamma = args.gamma if args.gamma is not None else (cfg.lemma.gamma if cfg.lemma.gamma is not None else cfg.fit.gamma)
    truth = _truth(cfg, args)
    t0 = args.start
    if t0 < 0 or t0 + data.N > truth.length:
        raise ConfigError(f"window [{t0}, {t0 + data.N}] outside the trajectory of length {truth.length}")
    Z = psi_x.lift(truth.states).T
    V = psi_u.lift(truth.inputs).T
    w = predict_outputs(data, WindowQuery.from_lifted(Z, V, t0, data.N), gamma)
    ref = truth.states if data.raw_output else Z
    err = np.abs(w - ref[t0 + 1 : t0 + 1 + data.N])
    out = _outdir(cfg, args)
    cols = ["t"] + [f"w{i + 1}" for i in range(w.shape[1])]
    _write_rows(out / "lemma_prediction.csv", _header_text(cfg, start=t0), cols,
                [[t0 + 1 + k, *map(float, w[k])] for k in range(data.N)])
    print(f"window t={t0 + 1}..{t0 + data.N} max_abs_error={err.max():.6g}")
    print(f"wrote {out / 'lemma_prediction.csv'}")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or bundled preset name (default: vdp_paper)")
    common.add_argument("--seed", type=int, help="master seed (data and center seeds derive from it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--gamma", type=float, help="ridge parameter")
    common.add_argument("--large", action="store_true", help="allow runs above the feature threshold")
    common.add_argument("-v", "--verbose", action="store_true")

    evalflags = argparse.ArgumentParser(add_help=False)
    evalflags.add_argument("--x0", help="initial state, comma separated")
    evalflags.add_argument("--amplitude", type=float)
    evalflags.add_argument("--frequency", type=float)
    evalflags.add_argument("--horizon", type=int)

    p = argparse.ArgumentParser(prog="geko", description="Koopman models on product spaces of lifted states and inputs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, evalflags], help="simulate the evaluation trajectory")
    s.add_argument("--input", choices=["sinusoid", "uniform"], default="sinusoid",
                   help="evaluation sinusoid or seeded i.i.d. uniform excitation over the input box")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit a model")
    s.add_argument("--data", help="trajectory CSV (default: sample snapshots from the config)")
    s.add_argument("--method", choices=["geko", "kic", "direct", "havok"])
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common, evalflags], help="propagate a model and score it")
    s.add_argument("--model", help="model file (default: <out>/model.json)")
    s.add_argument("--mode", choices=["operator", "lemma"], default="operator")
    s.add_argument("--lemma", help="lemma export directory (lemma mode)")
    s.add_argument("--truth", help="truth trajectory CSV (default: simulate from the config)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("bench", parents=[common], help="run the configured sweep")
    s.add_argument("--workers", type=int, help="worker processes")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("lemma-build", parents=[common], help="assemble and export lemma data matrices")
    s.add_argument("--data", help="trajectory CSV (default: random-input rollout)")
    s.add_argument("--N", type=int, help="window depth")
    s.set_defaults(func=cmd_lemma_build)

    s = sub.add_parser("lemma-predict", parents=[common], help="predict one output window from lemma data")
    s.add_argument("--lemma", required=True, help="lemma export directory")
    s.add_argument("--truth", help="trajectory CSV supplying the query window")
    s.add_argument("--start", type=int, default=0, help="first time index of the query window")
    s.set_defaults(func=cmd_lemma_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or "vdp_paper", seed=args.seed)
        return args.func(cfg, args)
    except GekoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: linear algebra failure: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
