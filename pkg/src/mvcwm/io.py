"""Dataset files, label files and fitted-model documents.

Datasets
--------
Long-format CSV with header ``unit,role,row,col,value``.  ``role`` is ``x``
(covariates) or ``y`` (responses); ``unit``, ``row`` and ``col`` are 1-based.
Every ``(unit, role)`` block must be dense and all units must share the same
dimensions.  True labels, if any, live in a sidecar ``<stem>.labels.csv``
with header ``unit,label``.

Models
------
JSON with ``format_version``, ``model_kind``, ``G``, ``dims`` and one object
per component.  Matrices are nested lists in row-major order (one inner list
per row).  Floats are written with ``repr`` so they reload bit-identically.
"""
import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import FmrParams, MmnCwmParams
from .cwm import CwmParams, Dataset, ModelKind, bic, count_free_params
from .errors import (
    DuplicateCell,
    InvariantViolation,
    ModelFileError,
    ParseError,
    ShapeError,
    VersionMismatch,
)

FORMAT_VERSION = 1
DATASET_HEADER = ("unit", "role", "row", "col", "value")
LABEL_HEADER = ("unit", "label")

_PARAM_FIELDS = {
    ModelKind.MN_CWM: ("M", "PhiX", "PsiX", "Bstar", "PhiY", "PsiY"),
    ModelKind.MN_FMR: ("Bstar", "PhiY", "PsiY"),
    ModelKind.MMN_CWM: ("mu", "SigmaX", "C", "SigmaY"),
}
_COVARIANCE_FIELDS = {"PhiX", "PsiX", "PhiY", "PsiY", "SigmaX", "SigmaY"}
_PARAM_TYPES = {
    ModelKind.MN_CWM: CwmParams,
    ModelKind.MN_FMR: FmrParams,
    ModelKind.MMN_CWM: MmnCwmParams,
}


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def labels_path_for(path):
    """Sidecar label file that belongs to dataset ``path``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.labels.csv")


def _rows_to_csv(header, rows):
    from io import StringIO

    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def save_dataset(data, path, write_labels=True):
    """Write ``data`` as long-format CSV (plus the label sidecar if it has labels)."""
    rows = []
    for i in range(data.n):
        for role, A in (("x", data.X[i]), ("y", data.Y[i])):
            for j in range(A.shape[0]):
                for k in range(A.shape[1]):
                    rows.append((i + 1, role, j + 1, k + 1, repr(float(A[j, k]))))
    atomic_write_text(path, _rows_to_csv(DATASET_HEADER, rows))
    if write_labels and data.labels is not None:
        save_labels(data.labels, labels_path_for(path))


def _parse_int(text, what, lineno, path):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: {what} {text!r} is not an integer") from None
    if value < 1:
        raise ParseError(f"{path}:{lineno}: {what} must be >= 1, got {value}")
    return value


def load_dataset(path, labels_path=None):
    """Read a long-format CSV dataset.

    Parameters
    ----------
    path : str or Path
    labels_path : str or Path, optional
        Label file; defaults to the ``<stem>.labels.csv`` sidecar when present.

    Raises
    ------
    ParseError
        Malformed header or row (the message carries the line number).
    DuplicateCell
        The same ``(unit, role, row, col)`` appears twice.
    ShapeError
        A block is missing, ragged, or differs in size from other units.
    """
    path = Path(path)
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != DATASET_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            unit = _parse_int(row[0], "unit", lineno, path)
            role = row[1].strip().lower()
            if role not in ("x", "y"):
                raise ParseError(f"{path}:{lineno}: role must be 'x' or 'y', got {row[1]!r}")
            i = _parse_int(row[2], "row", lineno, path)
            j = _parse_int(row[3], "col", lineno, path)
            try:
                value = float(row[4])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: value {row[4]!r} is not a number") from None
            if not np.isfinite(value):
                raise ParseError(f"{path}:{lineno}: value {row[4]!r} is not finite")
            block = cells.setdefault((unit, role), {})
            if (i, j) in block:
                raise DuplicateCell(
                    f"{path}:{lineno}: duplicate cell unit={unit} role={role} row={i} col={j}")
            block[(i, j)] = value

    units = sorted({u for u, _ in cells})
    if not units:
        raise ShapeError(f"{path}: no data rows")
    if units != list(range(1, len(units) + 1)):
        missing = sorted(set(range(1, units[-1] + 1)) - set(units))
        raise ShapeError(f"{path}: units must be numbered 1..n; missing {missing[:5]}")

    def block_array(unit, role, shape=None):
        block = cells.get((unit, role))
        if block is None:
            raise ShapeError(f"{path}: unit {unit} has no '{role}' block")
        rows = max(i for i, _ in block)
        cols = max(j for _, j in block)
        if shape is not None and (rows, cols) != shape:
            raise ShapeError(
                f"{path}: unit {unit} role '{role}' is {rows}x{cols}, expected {shape[0]}x{shape[1]}")
        if len(block) != rows * cols:
            missing = [(i, j) for i in range(1, rows + 1) for j in range(1, cols + 1)
                       if (i, j) not in block]
            raise ShapeError(
                f"{path}: unit {unit} role '{role}' is missing cell(s) {missing[:5]}")
        A = np.empty((rows, cols))
        for (i, j), v in block.items():
            A[i - 1, j - 1] = v
        return A

    X0, Y0 = block_array(1, "x"), block_array(1, "y")
    if X0.shape[1] != Y0.shape[1]:
        raise ShapeError(f"{path}: x has {X0.shape[1]} columns but y has {Y0.shape[1]}")
    X = np.stack([X0] + [block_array(u, "x", X0.shape) for u in units[1:]])
    Y = np.stack([Y0] + [block_array(u, "y", Y0.shape) for u in units[1:]])

    labels = None
    if labels_path is None and labels_path_for(path).exists():
        labels_path = labels_path_for(path)
    if labels_path is not None:
        labels = load_labels(labels_path, n=len(units))
    return Dataset(X, Y, labels)


def save_labels(labels, path):
    rows = [(i + 1, int(l)) for i, l in enumerate(labels)]
    atomic_write_text(path, _rows_to_csv(LABEL_HEADER, rows))


def load_labels(path, n=None):
    """Read a ``unit,label`` file into an integer array ordered by unit."""
    path = Path(path)
    found = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != LABEL_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(LABEL_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            unit = _parse_int(row[0], "unit", lineno, path)
            try:
                label = int(row[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            if unit in found:
                raise DuplicateCell(f"{path}:{lineno}: duplicate label for unit {unit}")
            found[unit] = label
    m = len(found) if n is None else n
    if sorted(found) != list(range(1, m + 1)):
        raise ShapeError(f"{path}: labels must cover units 1..{m} exactly")
    return np.array([found[u] for u in range(1, m + 1)], dtype=int)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SavedModel:
    """A fitted model as stored on disk (parameters plus summary values)."""

    model_kind: ModelKind
    params: object
    n: int
    loglik: float
    bic: float
    n_params: int
    converged: bool = True
    iterations: int = 0

    @property
    def G(self):
        return len(self.params.pi)


def model_document(fit, dims=None):
    """JSON-ready dictionary for a :class:`FittedModel` (or :class:`SavedModel`).

    MMN-CWM parameters are vectorized and do not carry the matrix shapes;
    they are taken from ``fit.extra["dims"]`` unless ``dims`` is given.
    """
    kind = ModelKind(fit.model_kind)
    params = fit.params
    if kind is ModelKind.MMN_CWM:
        dims = dims or getattr(fit, "extra", {}).get("dims")
        if dims is None:
            raise ValueError("dims (p, q, r) are required to save an MMN-CWM fit")
        p, q, r = dims
    else:
        p, q, r = params.dims
    components = []
    for g in range(len(params.pi)):
        comp = {"pi": float(params.pi[g])}
        for name in _PARAM_FIELDS[kind]:
            comp[name] = np.asarray(getattr(params, name)[g], dtype=float).tolist()
        components.append(comp)
    return {
        "format": "mvcwm-model",
        "format_version": FORMAT_VERSION,
        "model_kind": kind.value,
        "G": len(params.pi),
        "dims": {"p": int(p), "q": int(q), "r": int(r)},
        "n": int(fit.n),
        "loglik": float(fit.loglik),
        "bic": float(fit.bic),
        "n_params": int(fit.n_params),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "components": components,
    }


def save_model(fit, path, dims=None):
    """Write ``fit`` as a JSON model document (atomically)."""
    doc = model_document(fit, dims)
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _expected_shapes(kind, p, q, r):
    qr, pr = q * r, p * r
    return {
        "M": (q, r), "PhiX": (q, q), "PsiX": (r, r), "Bstar": (p, 1 + q),
        "PhiY": (p, p), "PsiY": (r, r),
        "mu": (qr,), "SigmaX": (qr, qr), "C": (pr, 1 + qr), "SigmaY": (pr, pr),
    }


def model_from_document(doc):
    """Validate a model document and rebuild its :class:`SavedModel`.

    Raises
    ------
    VersionMismatch
        Missing or unsupported ``format_version``.
    InvariantViolation
        Any structural or numerical invariant fails (shapes, weights,
        positive definiteness, BIC consistency).
    """
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise VersionMismatch("model document has no format_version field")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(
            f"model format_version {doc['format_version']!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    try:
        kind = ModelKind(doc["model_kind"])
        G = int(doc["G"])
        p, q, r = (int(doc["dims"][k]) for k in ("p", "q", "r"))
        comps = doc["components"]
        n = int(doc["n"])
        loglik, bic_value = float(doc["loglik"]), float(doc["bic"])
        n_params = int(doc["n_params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantViolation(f"malformed model document: {exc!r}") from None
    if min(G, p, q, r, n) < 1 or len(comps) != G:
        raise InvariantViolation("G, dims and n must be positive and match the components")

    shapes = _expected_shapes(kind, p, q, r)
    arrays = {name: [] for name in _PARAM_FIELDS[kind]}
    pi = []
    for g, comp in enumerate(comps):
        try:
            pi.append(float(comp["pi"]))
            for name in _PARAM_FIELDS[kind]:
                arrays[name].append(np.array(comp[name], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvariantViolation(f"component {g}: {exc!r}") from None
        for name in _PARAM_FIELDS[kind]:
            A = arrays[name][-1]
            if A.shape != shapes[name]:
                raise InvariantViolation(
                    f"component {g}: {name} has shape {A.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(A)):
                raise InvariantViolation(f"component {g}: {name} has non-finite entries")
            if name in _COVARIANCE_FIELDS:
                if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
                    raise InvariantViolation(f"component {g}: {name} is not symmetric")
                try:
                    np.linalg.cholesky(A)
                except np.linalg.LinAlgError:
                    raise InvariantViolation(
                        f"component {g}: {name} is not positive definite") from None
    pi = np.array(pi)
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise InvariantViolation(f"mixing weights must be positive and sum to 1, got {pi}")
    try:
        params = _PARAM_TYPES[kind](pi, *(np.stack(arrays[f]) for f in _PARAM_FIELDS[kind]))
    except ValueError as exc:
        raise InvariantViolation(str(exc)) from None

    expected_k = count_free_params(p, q, r, G, kind)
    if n_params != expected_k:
        raise InvariantViolation(f"n_params is {n_params}, expected {expected_k}")
    if not np.isclose(bic_value, bic(loglik, n_params, n), rtol=1e-12, atol=1e-9):
        raise InvariantViolation("stored BIC does not match loglik, n_params and n")
    return SavedModel(kind, params, n, loglik, bic_value, n_params,
                      bool(doc.get("converged", True)), int(doc.get("iterations", 0)))


def load_model(path):
    """Read and validate a JSON model document written by :func:`save_model`."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from None
    return model_from_document(doc)
