"""File formats: trajectory CSV, model documents and lemma exports.

Every numeric value is written with 17 significant digits so that a
write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import ParseError
from .koopman import KoopmanModel
from .lemma import LemmaData
from .numerics import format_matrix_csv, parse_matrix_csv
from .observables import ObservableMap

MODEL_FORMAT = "geko-model/1"
LEMMA_FORMAT = "geko-lemma/1"


def _num(v) -> str:
    return format(float(v), ".17g")


def _header_lines(header: dict | None) -> str:
    if not header:
        return ""
    return "# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n"


def read_header(path) -> dict:
    """Parse ``key=value`` pairs from the leading comment lines of a CSV."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    out[k] = v
    return out


# -- trajectories ---------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, header: dict | None = None) -> str:
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    p = traj.outputs.shape[1]
    cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
    lines = [_header_lines(header) + ",".join(cols)]
    T = traj.length
    for t in range(T + 1):
        row = [str(t)] + [_num(v) for v in traj.states[t]]
        row += [_num(v) for v in traj.inputs[t]] if t < T else [""] * m
        row += [_num(v) for v in traj.outputs[t]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(path, traj: Trajectory, header: dict | None = None) -> None:
    Path(path).write_text(trajectory_to_csv(traj, header), encoding="utf-8")


def parse_trajectory_csv(text: str, source: str = "<string>", Ts: float | None = None) -> Trajectory:
    lines = text.splitlines()
    idx = 0
    while idx < len(lines) and (lines[idx].startswith("#") or not lines[idx].strip()):
        idx += 1
    if idx == len(lines):
        raise ParseError(f"{source}: no header line", line=idx + 1)
    cols = [c.strip() for c in lines[idx].split(",")]
    if not cols or cols[0] != "t":
        raise ParseError(f"{source}:{idx + 1}: header must start with 't'", line=idx + 1)
    kinds = [c[0] for c in cols[1:]]
    if any(k not in "xuy" for k in kinds) or kinds != sorted(kinds, key="xuy".index):
        raise ParseError(f"{source}:{idx + 1}: header columns must be x.., u.., y..", line=idx + 1)
    n, m, p = kinds.count("x"), kinds.count("u"), kinds.count("y")
    states, inputs, outputs = [], [], []
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if i > idx and ln.strip() and not ln.startswith("#")]
    for k, (lineno, line) in enumerate(rows):
        toks = line.split(",")
        if len(toks) != len(cols):
            raise ParseError(f"{source}:{lineno}: expected {len(cols)} fields, got {len(toks)}", line=lineno)
        last = k == len(rows) - 1
        try:
            if int(toks[0]) != k:
                raise ParseError(f"{source}:{lineno}: time index {toks[0]} out of sequence", line=lineno)
            states.append([float(v) for v in toks[1 : 1 + n]])
            utoks = toks[1 + n : 1 + n + m]
            if last:
                if any(v.strip() for v in utoks):
                    raise ParseError(f"{source}:{lineno}: final row must leave inputs blank", line=lineno)
            else:
                inputs.append([float(v) for v in utoks])
            outputs.append([float(v) for v in toks[1 + n + m :]])
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: {exc}", line=lineno) from None
    if not states:
        raise ParseError(f"{source}: no data rows")
    return Trajectory(
        states=np.array(states, dtype=float).reshape(-1, n),
        inputs=np.array(inputs, dtype=float).reshape(-1, m),
        outputs=np.array(outputs, dtype=float).reshape(-1, p),
        Ts=Ts,
    )


def read_trajectory_csv(path, Ts: float | None = None) -> Trajectory:
    return parse_trajectory_csv(Path(path).read_text(encoding="utf-8"), str(path), Ts)


# -- models -------------------------------------------------------------------

def _matrix_block(M: np.ndarray) -> dict:
    return {"shape": list(M.shape), "csv": format_matrix_csv(M)}


def _read_block(block: dict, name: str) -> np.ndarray:
    M = parse_matrix_csv(block["csv"], source=name)
    return M.reshape(block["shape"])


def model_to_text(model: KoopmanModel, header: dict | None = None) -> str:
    doc = {"format": MODEL_FORMAT, "method": model.method}
    if header:
        doc["header"] = header
    doc["observables"] = {
        name: getattr(model, name).to_dict()
        for name in ("psi_x", "psi_u", "psi_y")
        if getattr(model, name) is not None
    }
    doc["matrices"] = {
        name: _matrix_block(getattr(model, name))
        for name in ("K", "C", "K_direct", "D")
        if getattr(model, name) is not None
    }
    doc["diagnostics"] = model.diagnostics
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def model_from_text(text: str, source: str = "<string>") -> KoopmanModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}: {exc.msg}", line=exc.lineno) from None
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"{source}: not a {MODEL_FORMAT} document")
    obs = {k: ObservableMap.from_dict(v) for k, v in doc["observables"].items()}
    mats = {k: _read_block(v, f"{source}:{k}") for k, v in doc["matrices"].items()}
    return KoopmanModel(method=doc["method"], diagnostics=doc.get("diagnostics", {}), **obs, **mats)


def save_model(path, model: KoopmanModel, header: dict | None = None) -> None:
    Path(path).write_text(model_to_text(model, header), encoding="utf-8")


def load_model(path) -> KoopmanModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"), str(path))


# -- lemma data ---------------------------------------------------------------------

def save_lemma(directory, data: LemmaData, header: dict | None = None, observables: dict | None = None) -> None:
    """Write ``F_N.csv``, ``F_N_w.csv`` and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    head = _header_lines(header)
    (d / "F_N.csv").write_text(head + format_matrix_csv(data.F), encoding="utf-8")
    (d / "F_N_w.csv").write_text(head + format_matrix_csv(data.F_w), encoding="utf-8")
    manifest = {"format": LEMMA_FORMAT, **data.manifest()}
    if header:
        manifest["header"] = header
    if observables:
        manifest["observables"] = {k: v.to_dict() for k, v in observables.items() if v is not None}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_lemma(directory):
    """Returns ``(LemmaData, observables)``; observables may be empty."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{d / 'manifest.json'}:{exc.lineno}: {exc.msg}", line=exc.lineno) from None
    if manifest.get("format") != LEMMA_FORMAT:
        raise ParseError(f"{d}: not a {LEMMA_FORMAT} export")
    F = parse_matrix_csv((d / "F_N.csv").read_text(encoding="utf-8"), str(d / "F_N.csv"))
    F_w = parse_matrix_csv((d / "F_N_w.csv").read_text(encoding="utf-8"), str(d / "F_N_w.csv"))
    data = LemmaData(
        F=F,
        F_w=F_w,
        N=manifest["N"],
        T=manifest["T"],
        n_z=manifest["n_z"],
        n_v=manifest["n_v"],
        n_w=manifest["n_w"],
        raw_output=manifest.get("raw_output", False),
        diagnostics=manifest.get("diagnostics", {}),
    )
    obs = {k: ObservableMap.from_dict(v) for k, v in manifest.get("observables", {}).items()}
    return data, obs
