"""Problem data: diffusion tensors, reactions, initial data, horizon.

Scenario files are TOML documents; see ``docs/scenario_format.md``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import expr as ex
from .geometry import LayerGeometry

# sampling lattice used by ``validate``
N_Y = 64
N_Z = 33
N_T = 17
Z_WINDOW = 10.0

DEFAULT_T = 0.25
DEFAULT_RESOLUTION = 4
DEFAULT_STRIPE_LENGTH = 8

_ALLOWED = {
    "D_M": ("y1", "y2"),
    "f_plus": ("t", "y1", "y2", "z"),
    "f_minus": ("t", "y1", "y2", "z"),
    "g_M": ("t", "y1", "y2", "z"),
    "init_plus": ("x1", "x2"),
    "init_minus": ("x1", "x2"),
    "init_M": ("x1",),
}


class ScenarioError(ValueError):
    """Malformed scenario document. ``key`` is a dotted path, ``line``/``column`` 1-based."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None, column: int | None = None):
        self.message = message
        self.key = key
        self.line = line
        self.column = column
        where = []
        if key:
            where.append(key)
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)


class ScenarioValidationError(ScenarioError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("scenario violates assumptions: " + "; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    assumption: str  # "A1" .. "A4", "A5'" (trace compatibility) or "expr"
    key: str
    message: str

    def __str__(self):
        return f"[{self.assumption}] {self.key}: {self.message}"


@dataclass(frozen=True, eq=False)
class Scenario:
    D_plus: np.ndarray
    D_minus: np.ndarray
    D_M: tuple  # (d11, d12, d22) expressions in y1, y2
    f_plus: ex.Expression
    f_minus: ex.Expression
    g_M: ex.Expression
    init_plus: ex.Expression
    init_minus: ex.Expression
    init_M: ex.Expression
    T: float = DEFAULT_T
    H: int = 1
    sigma_len: int = 1
    resolution: int = DEFAULT_RESOLUTION
    stripe_length: int = DEFAULT_STRIPE_LENGTH
    epsilons: tuple = ()
    digest: str = ""
    notes: dict = field(default_factory=dict)

    def geometry(self, epsilon) -> LayerGeometry:
        return LayerGeometry.from_epsilon(self.H, self.sigma_len, epsilon)

    def layer_tensor(self, y1, y2) -> np.ndarray:
        """D^M at points ``(y1, y2)``; returns shape ``y1.shape + (2, 2)``."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        shape = np.broadcast(y1, y2).shape
        d11, d12, d22 = (np.broadcast_to(ex.evaluate(e, {"y1": y1, "y2": y2}), shape) for e in self.D_M)
        out = np.empty(shape + (2, 2))
        out[..., 0, 0] = d11
        out[..., 0, 1] = d12
        out[..., 1, 0] = d12
        out[..., 1, 1] = d22
        return out

    def bulk_tensor(self, sign: int) -> np.ndarray:
        return self.D_plus if sign > 0 else self.D_minus

    def bulk_reaction(self, sign: int) -> ex.Expression:
        return self.f_plus if sign > 0 else self.f_minus

    def bulk_initial(self, sign: int) -> ex.Expression:
        return self.init_plus if sign > 0 else self.init_minus


def _matrix(value, key) -> np.ndarray:
    try:
        A = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("expected a 2x2 numeric matrix", key) from None
    if A.shape != (2, 2):
        raise ScenarioError(f"expected a 2x2 matrix, got shape {A.shape}", key)
    return A


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return lineno
    return None


def _expression(doc_text, section, key, value, allowed) -> ex.Expression:
    path = f"{section}.{key}"
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = repr(value)
    if not isinstance(value, str):
        raise ScenarioError("expected a quoted expression", path, _key_line(doc_text, section, key))
    try:
        return ex.parse(value, allowed=allowed)
    except ex.ExpressionError as err:
        raise ScenarioError(err.message, path, _key_line(doc_text, section, key), err.column) from None


def _require(doc, section, key):
    try:
        return doc[section][key]
    except KeyError:
        raise ScenarioError("missing required key", f"{section}.{key}") from None


def parse_scenario(text: str, validate_data: bool = True) -> Scenario:
    """Parse a scenario document; raise ``ScenarioValidationError`` if sampling checks fail."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        m = re.search(r"line (\d+), column (\d+)", str(err))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ScenarioError(f"syntax error: {err.msg if hasattr(err, 'msg') else err}", None, line, col) from None

    known = {
        "geometry": {"H", "sigma_len"},
        "coefficients": {"D_plus", "D_minus", "D_M", "D_M11", "D_M12", "D_M22"},
        "reactions": {"f_plus", "f_minus", "g_M"},
        "initial": {"init_plus", "init_minus", "init_M"},
        "time": {"T"},
        "study": {"resolution", "stripe_length", "epsilons"},
    }
    for section, body in doc.items():
        if section not in known or not isinstance(body, dict):
            raise ScenarioError(f"unknown section [{section}]", section)
        for key in body:
            if key not in known[section]:
                raise ScenarioError("unknown key", f"{section}.{key}", _key_line(text, section, key))

    geo = doc.get("geometry", {})
    H = geo.get("H", 1)
    sigma_len = geo.get("sigma_len", 1)
    for name, v in (("H", H), ("sigma_len", sigma_len)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ScenarioError("must be a positive integer", f"geometry.{name}", _key_line(text, "geometry", name))

    coef = doc.get("coefficients", {})
    D_plus = _matrix(_require(doc, "coefficients", "D_plus"), "coefficients.D_plus")
    D_minus = _matrix(_require(doc, "coefficients", "D_minus"), "coefficients.D_minus")
    allowed = _ALLOWED["D_M"]
    if "D_M" in coef:
        if any(k in coef for k in ("D_M11", "D_M12", "D_M22")):
            raise ScenarioError("give either D_M or D_M11/D_M12/D_M22", "coefficients.D_M")
        d = _expression(text, "coefficients", "D_M", coef["D_M"], allowed)
        D_M = (d, ex.parse("0"), d)
    else:
        D_M = tuple(
            _expression(text, "coefficients", k, _require(doc, "coefficients", k), allowed)
            for k in ("D_M11", "D_M12", "D_M22")
        )

    exprs = {}
    for section, keys in (("reactions", ("f_plus", "f_minus", "g_M")), ("initial", ("init_plus", "init_minus", "init_M"))):
        for key in keys:
            exprs[key] = _expression(text, section, key, _require(doc, section, key), _ALLOWED[key])

    T = doc.get("time", {}).get("T", DEFAULT_T)
    if not isinstance(T, (int, float)) or isinstance(T, bool) or not T > 0:
        raise ScenarioError("T must be a positive number", "time.T", _key_line(text, "time", "T"))

    study = doc.get("study", {})
    resolution = study.get("resolution", DEFAULT_RESOLUTION)
    stripe_length = study.get("stripe_length", DEFAULT_STRIPE_LENGTH)
    if not isinstance(resolution, int) or resolution < 2:
        raise ScenarioError("resolution must be an integer >= 2", "study.resolution")
    if not isinstance(stripe_length, int) or stripe_length < 2:
        raise ScenarioError("stripe_length must be an integer >= 2", "study.stripe_length")
    epsilons = study.get("epsilons", [])
    if not isinstance(epsilons, list) or not all(isinstance(e, str) for e in epsilons):
        raise ScenarioError('epsilons must be a list of strings like "1/8"', "study.epsilons")

    scenario = Scenario(
        D_plus=D_plus,
        D_minus=D_minus,
        D_M=D_M,
        T=float(T),
        H=H,
        sigma_len=sigma_len,
        resolution=resolution,
        stripe_length=stripe_length,
        epsilons=tuple(epsilons),
        digest=digest(text),
        **exprs,
    )
    if validate_data:
        diagnostics = validate(scenario)
        if diagnostics:
            raise ScenarioValidationError(diagnostics)
    return scenario


def load_scenario(path, validate_data: bool = True) -> Scenario:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_scenario(raw.decode("utf-8"), validate_data=validate_data)


def digest(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


# --- validation ----------------------------------------------------------


def _y_lattice():
    y1 = np.arange(N_Y) / N_Y
    y2 = -1.0 + 2.0 * np.arange(N_Y) / (N_Y - 1)
    return np.meshgrid(y1, y2, indexing="ij")


def _reaction_lattice(T: float) -> dict:
    Y1, Y2 = _y_lattice()
    return {
        "t": np.linspace(0.0, T, N_T)[:, None, None, None],
        "y1": Y1[None, :, :, None],
        "y2": Y2[None, :, :, None],
        "z": np.linspace(-Z_WINDOW, Z_WINDOW, N_Z)[None, None, None, :],
    }


def _lipschitz_check(e: ex.Expression, key: str, assumption: str, T: float) -> list[Diagnostic]:
    """Sampled difference quotients in z; flags growth of the bound with the z-window.

    A bound that keeps growing up to the edge of the window (like ``z^2``) is
    reported; a bounded slope attained in the interior is not.
    """
    bind = _reaction_lattice(T)
    z = bind["z"].ravel()
    shape = np.broadcast_shapes(*(np.shape(v) for v in bind.values()))
    vals = np.broadcast_to(ex.evaluate(e, bind), shape)
    if not np.all(np.isfinite(vals)):
        return [Diagnostic(assumption, key, "non-finite values on the sampling lattice")]
    q = np.abs(np.diff(vals, axis=-1)) / np.diff(z)
    per_interval = q.reshape(-1, len(z) - 1).max(axis=0)
    full = per_interval.max()
    mid = len(per_interval) // 2
    quarter = len(per_interval) // 4
    inner = per_interval[mid - quarter : mid + quarter].max()
    edge = max(per_interval[0], per_interval[-1])
    if full > 1.5 * inner + 1e-12 and edge >= full * (1 - 1e-12):
        return [
            Diagnostic(
                assumption,
                key,
                f"sampled Lipschitz bound grows with the z-window ({inner:.3g} on |z|<=5, {full:.3g} on |z|<=10)",
            )
        ]
    return []


def _periodic_check(e: ex.Expression, key: str, assumption: str, T: float, period_var="y1") -> list[Diagnostic]:
    Y1, Y2 = _y_lattice()
    b = {"t": 0.5 * T, "y2": Y2, "z": 0.5, "x2": Y2}
    b0 = dict(b, **{period_var: Y1})
    b1 = dict(b, **{period_var: Y1 + 1.0})
    d = np.max(np.abs(np.asarray(ex.evaluate(e, b0)) - np.asarray(ex.evaluate(e, b1))))
    if d > 1e-9:
        return [Diagnostic(assumption, key, f"not 1-periodic in {period_var} (defect {d:.3g})")]
    return []


def _division_check(e: ex.Expression, key: str, bindings) -> list[Diagnostic]:
    if ex.min_abs_divisor(e, bindings) < 1e-300:
        return [Diagnostic("expr", key, "division by (near) zero on the sampling lattice")]
    return []


def validate(s: Scenario) -> list[Diagnostic]:
    """Sampled checks of the standing assumptions; empty list means all pass."""
    out: list[Diagnostic] = []
    for name, D in (("D_plus", s.D_plus), ("D_minus", s.D_minus)):
        if not np.allclose(D, D.T, rtol=0, atol=1e-14):
            out.append(Diagnostic("A1", f"coefficients.{name}", "matrix is not symmetric"))
            continue
        ev = np.linalg.eigvalsh(D)
        if ev.min() <= 0:
            out.append(
                Diagnostic("A1", f"coefficients.{name}", f"not positive definite (eigenvalues {ev[1]:.6g}, {ev[0]:.6g})")
            )

    Y1, Y2 = _y_lattice()
    ybind = {"y1": Y1, "y2": Y2}
    for e, k in zip(s.D_M, ("D_M11", "D_M12", "D_M22")):
        out += _division_check(e, f"coefficients.{k}", ybind)
        out += _periodic_check(e, f"coefficients.{k}", "A1", s.T)
    DM = s.layer_tensor(Y1, Y2)
    if not np.all(np.isfinite(DM)):
        out.append(Diagnostic("A1", "coefficients.D_M", "non-finite values on the sampling lattice"))
    else:
        c0 = float(np.linalg.eigvalsh(DM).min())
        s.notes["coercivity_c0"] = c0
        if c0 <= 0:
            out.append(Diagnostic("A1", "coefficients.D_M", f"not coercive (minimum sampled eigenvalue {c0:.6g})"))

    for key, assumption in (("f_plus", "A2"), ("f_minus", "A2"), ("g_M", "A3")):
        e = getattr(s, key)
        path = f"reactions.{key}"
        div = _division_check(e, path, _reaction_lattice(s.T))
        if div:
            out += div
            continue
        out += _lipschitz_check(e, path, assumption, s.T)
        out += _periodic_check(e, path, assumption, s.T)

    x1 = np.linspace(0.0, s.sigma_len, 4 * N_Y + 1)
    for key in ("init_plus", "init_minus"):
        sign = 1 if key == "init_plus" else -1
        x2 = sign * np.linspace(0.0, s.H, N_Y)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        bind = {"x1": X1, "x2": X2}
        div = _division_check(getattr(s, key), f"initial.{key}", bind)
        v = np.asarray(ex.evaluate(getattr(s, key), bind))
        if div or not np.all(np.isfinite(v)):
            out += div or [Diagnostic("A4", f"initial.{key}", "non-finite values")]
    vM = np.broadcast_to(ex.evaluate(s.init_M, {"x1": x1}), x1.shape)
    if not np.all(np.isfinite(vM)):
        out.append(Diagnostic("A4", "initial.init_M", "non-finite values"))
    elif abs(vM[0] - vM[-1]) > 1e-9:
        out.append(Diagnostic("A4", "initial.init_M", "not periodic on Sigma"))
    else:
        for key in ("init_plus", "init_minus"):
            trace = np.broadcast_to(ex.evaluate(getattr(s, key), {"x1": x1, "x2": 0.0}), x1.shape)
            d = float(np.max(np.abs(trace - vM)))
            if d > 1e-9:
                out.append(Diagnostic("A5'", f"initial.{key}", f"trace on Sigma differs from init_M by {d:.3g}"))
    return out
