"""Experiment configuration: a flat ``key = value`` text format with dotted keys.

Example::

    kind = linear
    domain = -1:1 -1:1
    degree = 2
    patch.0.box = -1:-0.1 -1:-0.1
    patch.0.elements = 2 2
    nucleus.0.charge = 1
    nucleus.0.position = 0 0
    refine.mode = uniform
    refine.levels = 4

Boxes are given as one ``lo:hi`` interval per direction.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .assembly import DGSpace
from .geometry import build_layout, build_meshes
from .potentials import CoulombPotential, NucleusSet

KINDS = ("linear", "gp", "ks-lda", "source")
_SECTION = "config"


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    domain: tuple
    boxes: list
    elements: list
    degrees: list
    charges: np.ndarray
    positions: np.ndarray
    C_sigma: float | None = None
    quad_extra: int = 2
    quad_levels: int = 8
    refine_mode: str = "uniform"
    refine_levels: int = 4
    refine_exponent: float = 1.0
    refine_start: int = 0
    k: int = 4
    tol: float = 1e-9
    sigma: float | None = None
    scf: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    linecut: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def dim(self):
        return len(self.domain[0])

    @property
    def nuclei(self):
        return NucleusSet(self.charges, self.positions) if self.charges.size else None


def _floats(text, key):
    try:
        return [float(t) for t in text.split()]
    except ValueError:
        raise ConfigError(f"key {key!r}: expected numbers, got {text!r}") from None


def _box(text, key):
    lo, hi = [], []
    for part in text.split():
        m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*:\s*([-+0-9.eE]+)\s*", part)
        if not m:
            raise ConfigError(f"key {key!r}: expected lo:hi intervals, got {part!r}")
        lo.append(float(m.group(1)))
        hi.append(float(m.group(2)))
    return tuple(lo), tuple(hi)


def _bool(text, key):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {text!r}")


def _read_raw(text, source):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        msg = str(exc)
        # line numbers include the injected section header
        msg = re.sub(r"line\s+(\d+)", lambda m: f"line {int(m.group(1)) - 1}", msg)
        raise ConfigError(msg) from None
    return dict(cp[_SECTION])


def _indexed(raw, prefix):
    out = {}
    for key, val in raw.items():
        m = re.fullmatch(rf"{prefix}\.(\d+)\.(\w+)", key)
        if m:
            out.setdefault(int(m.group(1)), {})[m.group(2)] = (key, val)
    return [out[i] for i in sorted(out)]


def parse_config(text, source="<config>"):
    raw = _read_raw(text, source)
    get = raw.get

    def need(key):
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
        return raw[key]

    kind = need("kind").strip()
    if kind not in KINDS:
        raise ConfigError(f"key 'kind': unknown problem kind {kind!r}")
    domain = _box(need("domain"), "domain")
    d = len(domain[0])
    if d not in (1, 2, 3):
        raise ConfigError("key 'domain': dimension must be 1, 2 or 3")
    deg_default = int(_floats(get("degree", "2"), "degree")[0])

    boxes, elements, degrees = [], [], []
    for entry in _indexed(raw, "patch"):
        if "box" not in entry:
            raise ConfigError(f"key {sorted(k for k, _ in entry.values())[0]!r}: "
                              "patch entry lacks a box")
        key, val = entry["box"]
        b = _box(val, key)
        if len(b[0]) != d:
            raise ConfigError(f"key {key!r}: expected {d} intervals")
        boxes.append(b)
        ek, ev = entry.get("elements", (key, "1"))
        ne = [int(x) for x in _floats(ev, ek)]
        elements.append(ne * d if len(ne) == 1 else ne)
        dk, dv = entry.get("degree", (key, str(deg_default)))
        pd = [int(x) for x in _floats(dv, dk)]
        degrees.append(pd * d if len(pd) == 1 else pd)
        if len(elements[-1]) != d or len(degrees[-1]) != d:
            raise ConfigError(f"patch {len(boxes) - 1}: elements/degree need {d} entries")
    if not boxes:
        raise ConfigError(f"{source}: no patches defined")

    charges, positions = [], []
    for entry in _indexed(raw, "nucleus"):
        ck, cv = entry.get("charge", ("nucleus.charge", "1"))
        charges.append(_floats(cv, ck)[0])
        pk, pv = entry.get("position", (None, None))
        if pk is None:
            raise ConfigError("nucleus entry lacks a position")
        pos = _floats(pv, pk)
        if len(pos) != d:
            raise ConfigError(f"key {pk!r}: expected {d} coordinates")
        positions.append(pos)

    pen = get("penalty", "default").strip()
    C_sigma = None if pen == "default" else _floats(pen, "penalty")[0]
    if C_sigma is not None and C_sigma <= 0:
        raise ConfigError("key 'penalty': must be positive")
    mode = get("refine.mode", "uniform").strip()
    if mode not in ("uniform", "multiscale"):
        raise ConfigError(f"key 'refine.mode': unknown mode {mode!r}")
    exponent = _floats(get("refine.exponent", "1"), "refine.exponent")[0]
    if exponent < 1:
        raise ConfigError("key 'refine.exponent': must be >= 1")
    sigma = get("solver.sigma", "auto").strip()

    scf = dict(
        alpha=_floats(get("scf.alpha", "0.3"), "scf.alpha")[0],
        tol=_floats(get("scf.tol", "1e-8"), "scf.tol")[0],
        max_iter=int(_floats(get("scf.max_iter", "200"), "scf.max_iter")[0]),
        interaction=_floats(get("scf.interaction", "1"), "scf.interaction")[0],
        hartree=_bool(get("scf.hartree", "true"), "scf.hartree"),
        xc=_bool(get("scf.xc", "true"), "scf.xc"),
        correlation=_bool(get("scf.correlation", "true"), "scf.correlation"),
        occupation=_floats(get("scf.occupation", "2" if kind == "ks-lda" else "1"),
                           "scf.occupation")[0],
    )
    reference = {}
    if "reference.eigenvalues" in raw:
        reference["eigenvalues"] = _floats(raw["reference.eigenvalues"], "reference.eigenvalues")
    if "reference.energy" in raw:
        reference["energy"] = _floats(raw["reference.energy"], "reference.energy")[0]
    reference["kind"] = get("reference.kind", "values").strip()
    if reference["kind"] not in ("values", "closed-form", "numeric", "none"):
        raise ConfigError(f"key 'reference.kind': unknown kind {reference['kind']!r}")
    linecut = {}
    if "linecut.start" in raw:
        linecut = dict(start=_floats(raw["linecut.start"], "linecut.start"),
                       end=_floats(need("linecut.end"), "linecut.end"))

    return ExperimentConfig(
        name=get("name", Path(source).stem).strip(),
        kind=kind,
        domain=domain,
        boxes=boxes,
        elements=elements,
        degrees=degrees,
        charges=np.asarray(charges, float),
        positions=np.asarray(positions, float).reshape(-1, d),
        C_sigma=C_sigma,
        quad_extra=int(_floats(get("quadrature.extra", "2"), "quadrature.extra")[0]),
        quad_levels=int(_floats(get("quadrature.levels", "8"), "quadrature.levels")[0]),
        refine_mode=mode,
        refine_levels=int(_floats(get("refine.levels", "4"), "refine.levels")[0]),
        refine_exponent=exponent,
        refine_start=int(_floats(get("refine.start", "0"), "refine.start")[0]),
        k=int(_floats(get("solver.k", "4"), "solver.k")[0]),
        tol=_floats(get("solver.tol", "1e-9"), "solver.tol")[0],
        sigma=None if sigma == "auto" else _floats(sigma, "solver.sigma")[0],
        scf=scf,
        reference=reference,
        linecut=linecut,
        raw=raw,
    )


def serialize_config(cfg):
    """Text form of the parsed key set (round-trips through :func:`parse_config`)."""
    return "".join(f"{k} = {v}\n" for k, v in cfg.raw.items())


def shipped_configs():
    return sorted(p.name[:-4] for p in resources.files("dgiga.configs").iterdir()
                  if p.name.endswith(".cfg"))


def load_config(path_or_name):
    """Parse a config file; bare names resolve to the shipped configs."""
    p = Path(path_or_name)
    if p.exists():
        return parse_config(p.read_text(), str(p))
    name = str(path_or_name)
    res = resources.files("dgiga.configs") / (name if name.endswith(".cfg") else name + ".cfg")
    if res.is_file():
        return parse_config(res.read_text(), res.name)
    raise ConfigError(f"config {path_or_name!r} not found")


# -- building the discretization ------------------------------------------------------
def level_elements(cfg, level):
    """Element counts per patch at refinement ``level`` (0 = initial mesh)."""
    level = cfg.refine_start + level
    out = []
    nuc = cfg.positions
    for (lo, hi), ne in zip(cfg.boxes, cfg.elements):
        factor = 2 ** level
        if cfg.refine_mode == "multiscale" and len(nuc):
            inside = any(np.all(r > np.array(lo)) and np.all(r < np.array(hi)) for r in nuc)
            if inside:
                factor = int(round(2 ** (cfg.refine_exponent * level)))
        out.append([n * factor for n in ne])
    return out


def build_layout_from(cfg):
    return build_layout(cfg.domain, cfg.boxes, cfg.positions if len(cfg.positions) else None)


def build_space(cfg, level=0, degrees=None):
    layout = build_layout_from(cfg)
    meshes = build_meshes(layout, degrees or cfg.degrees, level_elements(cfg, level))
    return DGSpace(layout, meshes, quad_extra=cfg.quad_extra, grading_levels=cfg.quad_levels)


def external_potential(cfg):
    """Callable nuclear potential, or ``None`` for potential-free problems."""
    nuc = cfg.nuclei
    return CoulombPotential(nuc) if nuc is not None else None


def default_sigma(cfg):
    if cfg.sigma is not None:
        return cfg.sigma
    from .solver import default_shift
    return default_shift(float(cfg.charges.sum()) if cfg.charges.size else 0.0)


def box_eigenvalues(domain, k):
    """Lowest ``k`` Dirichlet eigenvalues of ``-1/2 Laplace`` on a box."""
    lo, hi = (np.asarray(v, float) for v in domain)
    L = hi - lo
    n = int(np.ceil(k ** (1 / L.size))) + 3
    vals = []
    for idx in np.ndindex(*([n] * L.size)):
        m = np.asarray(idx) + 1
        vals.append(0.5 * np.pi ** 2 * np.sum((m / L) ** 2))
    return np.sort(vals)[:k]


def box_eigenfunctions(domain, k):
    """Closed-form orthonormal eigenfunctions (values and gradients) of a box.

    Returns a list of ``(eigenvalue, modes)`` clusters, where ``modes`` is a list
    of callables ``f(points, deriv=None)``.
    """
    lo, hi = (np.asarray(v, float) for v in domain)
    L = hi - lo
    d = L.size
    n = int(np.ceil(k ** (1 / d))) + 3
    modes = []
    for idx in np.ndindex(*([n] * d)):
        m = np.asarray(idx) + 1
        modes.append((0.5 * np.pi ** 2 * np.sum((m / L) ** 2), m))
    modes.sort(key=lambda t: t[0])

    def make(m):
        c = np.sqrt(2.0 / L)

        def f(x, deriv=None):
            x = np.asarray(x, float)
            t = (x - lo) / L * np.pi * m
            out = np.ones(x.shape[:-1])
            for a in range(d):
                if deriv == a:
                    out = out * c[a] * np.cos(t[..., a]) * np.pi * m[a] / L[a]
                else:
                    out = out * c[a] * np.sin(t[..., a])
            return out
        return f

    clusters = []
    for lam, m in modes[:k]:
        if clusters and abs(clusters[-1][0] - lam) < 1e-12 * max(1, lam):
            clusters[-1][1].append(make(m))
        else:
            clusters.append((lam, [make(m)]))
    return clusters
