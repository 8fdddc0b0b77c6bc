"""Binary solution caches (HML1 scalar, HML2 matrix) with JSON sidecars.

HML1 layout, little-endian:
    b"HML1", uint8 kind tag (0 small, 1 big at gamma = 0),
    float64 re, im (u or omega), float64 R, int64 n, float64 eps, float64 tol,
    n*n float64 psi values, row-major, NaN on excised nodes,
    n*n float64 smooth-variable values (regular formulation state).

HML2 layout:
    b"HML2", float64 re/im gamma, float64 re/im omega, float64 R, int64 n, float64 tol,
    n*n records of float64 (f1, f2, Re g, Im g), row-major.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .matrix_hitchin import MatrixProblem, MatrixSolution, MetricField, _log_coords
from .moduli import Big, Small
from .scalar_pde import ScalarField, ScalarProblem, ScalarSolution

HML1 = b"HML1"
HML2 = b"HML2"
_H1 = struct.Struct("<4sBdddqdd")
_H2 = struct.Struct("<4sdddddqd")


class CacheError(IOError):
    pass


def cache_dir(default: str | os.PathLike | None = None) -> Path:
    env = os.environ.get("HML_CACHE_DIR")
    if env:
        return Path(env)
    if default is not None:
        return Path(default)
    return Path.home() / ".cache" / "wildhiggs"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def cache_key(params: dict) -> str:
    """Digest of the resolved problem parameters and the tool version."""
    payload = canonical_json({"params": params, "version": __version__})
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# scalar


def encode_scalar(solution: ScalarSolution) -> bytes:
    p = solution.problem
    kind = p.kind
    if isinstance(kind, Small):
        tag, c = 0, complex(kind.u)
    else:
        tag, c = 1, complex(kind.omega)
    g = p.grid
    head = _H1.pack(HML1, tag, c.real, c.imag, g.R, g.n, p.eps, p.tolerance)
    return head + np.ascontiguousarray(solution.psi.values, "<f8").tobytes() + np.ascontiguousarray(
        solution.state, "<f8"
    ).tobytes()


def decode_scalar_header(data: bytes) -> dict:
    if len(data) < _H1.size or data[:4] != HML1:
        raise CacheError("not an HML1 file")
    _, tag, re, im, R, n, eps, tol = _H1.unpack_from(data)
    return {"kind": "small" if tag == 0 else "big0", "value": complex(re, im), "R": R, "n": n, "eps": eps, "tol": tol}


def decode_scalar(data: bytes, problem: ScalarProblem, meta: dict) -> ScalarSolution:
    head = decode_scalar_header(data)
    n = head["n"]
    if n != problem.grid.n or head["R"] != problem.grid.R:
        raise CacheError("cached grid does not match the problem")
    body = np.frombuffer(data, "<f8", offset=_H1.size)
    if body.size != 2 * n * n:
        raise CacheError("truncated HML1 payload")
    psi = body[: n * n].reshape(n, n).copy()
    state = body[n * n :].reshape(n, n).copy()
    return ScalarSolution(
        ScalarField(psi, problem.grid),
        problem,
        meta["residual_sup"],
        meta["iterations"],
        state,
        meta.get("wall_time", 0.0),
        tuple(meta["decay"]) if meta.get("decay") else None,
    )


# ---------------------------------------------------------------------------
# matrix


def encode_matrix(solution: MatrixSolution) -> bytes:
    p = solution.problem
    g = p.grid
    head = _H2.pack(HML2, p.gamma.real, p.gamma.imag, p.omega.real, p.omega.imag, g.R, g.n, p.tolerance)
    f1, f2, gg = solution.h.entries()
    rec = np.stack([f1, f2, gg.real, gg.imag], axis=-1)
    return head + np.ascontiguousarray(rec, "<f8").tobytes()


def decode_matrix_header(data: bytes) -> dict:
    if len(data) < _H2.size or data[:4] != HML2:
        raise CacheError("not an HML2 file")
    _, gr, gi, wr, wi, R, n, tol = _H2.unpack_from(data)
    return {"gamma": complex(gr, gi), "omega": complex(wr, wi), "R": R, "n": n, "tol": tol}


def decode_matrix(data: bytes, problem: MatrixProblem, meta: dict) -> MatrixSolution:
    head = decode_matrix_header(data)
    n = head["n"]
    if n != problem.grid.n or head["R"] != problem.grid.R:
        raise CacheError("cached grid does not match the problem")
    rec = np.frombuffer(data, "<f8", offset=_H2.size)
    if rec.size != 4 * n * n:
        raise CacheError("truncated HML2 payload")
    rec = rec.reshape(n, n, 4)
    full = MetricField.from_entries(rec[..., 0], rec[..., 1], rec[..., 2] + 1j * rec[..., 3], problem.grid)
    eta = _log_coords(full) - problem.model()["x"]
    return MatrixSolution(
        MetricField(eta, problem.grid, problem),
        problem,
        meta["residual_sup"],
        meta["iterations"],
        meta.get("defect", 0.0),
        meta.get("wall_time", 0.0),
        meta.get("flow_steps", 0),
    )


# ---------------------------------------------------------------------------
# store


class SolutionCache:
    """Directory of ``<key>.hml`` payloads with ``<key>.json`` sidecars."""

    def __init__(self, root: str | os.PathLike | None = None, enabled: bool = True):
        self.root = cache_dir(root)
        self.enabled = enabled

    def paths(self, key: str) -> tuple[Path, Path]:
        return self.root / f"{key}.hml", self.root / f"{key}.json"

    def load(self, key: str, decode, problem):
        if not self.enabled:
            return None
        data_path, meta_path = self.paths(key)
        if not (data_path.exists() and meta_path.exists()):
            return None
        meta = json.loads(meta_path.read_text())
        if meta.get("digest") != file_digest(data_path):
            return None
        return decode(data_path.read_bytes(), problem, meta)

    def store(self, key: str, payload: bytes, meta: dict) -> Path:
        data_path, meta_path = self.paths(key)
        try:
            _atomic_write(data_path, payload)
            meta = {**meta, "digest": hashlib.sha256(payload).hexdigest(), "version": __version__, "key": key}
            _atomic_write(meta_path, (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode())
        except OSError as exc:
            raise CacheError(f"cannot write cache entry {data_path}: {exc}") from exc
        return data_path


def scalar_meta(solution: ScalarSolution) -> dict:
    return {
        "format": "HML1",
        "params": solution.problem.params(),
        "residual_sup": solution.residual_sup,
        "iterations": solution.newton_iterations,
        "decay": list(solution.decay) if solution.decay else None,
    }


def matrix_meta(solution: MatrixSolution) -> dict:
    return {
        "format": "HML2",
        "params": solution.problem.params(),
        "residual_sup": solution.residual_sup,
        "iterations": solution.iterations,
        "defect": solution.defect,
        "flow_steps": solution.flow_steps,
    }


def is_big0(kind) -> bool:
    return isinstance(kind, Big) and kind.gamma == 0
