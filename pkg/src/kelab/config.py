"""Experiment configuration: a YAML tree parsed into validated dataclasses.

Every validation error carries the line of the offending key so batch users
can fix configs without guessing.  ``dump`` emits a canonical YAML document
that parses back to an equal object.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

__all__ = [
    "ConfigError",
    "ModelBlock",
    "FamilyBlock",
    "PoleBlock",
    "SolverBlock",
    "AnalysisBlock",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based (None if unknown)."""

    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ModelBlock:
    chart: str = "torus"
    n: int = 1
    tau: tuple = (0.0, 1.0)
    r_in: float = 0.05
    N: int = 128
    N_ang: Optional[int] = None
    form: str = "flat"
    volume: Optional[float] = None


@dataclass(frozen=True)
class FamilyBlock:
    t_max: float = 0.5
    ratio: float = 0.5
    M: int = 14
    append_zero: bool = True
    normalize: bool = True


@dataclass(frozen=True)
class PoleBlock:
    centers: tuple = ((0.5, 0.5),)
    exponents: tuple = (-0.5,)


@dataclass(frozen=True)
class SolverBlock:
    tol: float = 1e-9
    max_iter: int = 60
    armijo: float = 1e-4
    linear_tol: float = 1e-10
    ladder: tuple = ()
    preconditioner: str = "amg"


@dataclass(frozen=True)
class AnalysisBlock:
    K_grid: tuple = tuple(float(k) for k in range(1, 13))
    m_list: tuple = (0, 1)
    capacity_K: tuple = (2.0, 4.0, 8.0)
    eps: tuple = (0.1,)
    delta: tuple = (0.05,)
    diagnostics_radius: float = 0.2
    localized_radii: tuple = (0.2, 0.1, 0.05)
    continuity_tol: float = 1e-3
    continuity_tail: int = 3
    refine_N: Optional[int] = None
    random_candidates: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    family: FamilyBlock = field(default_factory=FamilyBlock)
    poles: PoleBlock = field(default_factory=PoleBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    output: str = "kelab-run"
    seed: int = 0

    def to_dict(self):
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v
        return plain(asdict(self))

    @property
    def hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


BLOCKS = {"model": ModelBlock, "family": FamilyBlock, "poles": PoleBlock,
          "solver": SolverBlock, "analysis": AnalysisBlock}


# ------------------------------------------------------------------ node walking

def _line(node):
    return node.start_mark.line + 1


def _to_python(node):
    """Plain Python value from a YAML node, keeping key lines alongside."""
    if isinstance(node, yaml.MappingNode):
        out, lines = {}, {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", _line(k))
            out[key] = _to_python(v)
            lines[key] = (_line(k), v)
        return _Mapping(out, lines, _line(node))
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v) for v in node.value]
    value = yaml.safe_load(yaml.serialize(node))
    if isinstance(value, str) and node.style is None:
        # YAML 1.1 reads plain "1e-9" as a string; accept it as a number
        try:
            return float(value)
        except ValueError:
            pass
    return value


class _Mapping(dict):
    def __init__(self, data, lines, line):
        super().__init__(data)
        self.lines = lines
        self.line = line

    def line_of(self, key):
        return self.lines[key][0]


def _plain(v):
    if isinstance(v, list):
        return tuple(_plain(x) for x in v)
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _build(cls, mapping, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a mapping", getattr(mapping, "line", None))
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in mapping.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in {where}", mapping.line_of(key))
        kwargs[key] = _plain(val)
    return cls(**kwargs)


# ------------------------------------------------------------------ validation

def _number(v, name, line, integer=False, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{name} must be {kind}, got {v!r}", line)
    if positive and not v > 0:
        raise ConfigError(f"{name} must be positive, got {v!r}", line)
    return int(v) if integer else float(v)


def _validate(cfg: ExperimentConfig, lines):
    def L(block, key=None):
        entry = lines.get(block)
        if entry is None:
            return None
        mline, mapping = entry
        if key is None or not isinstance(mapping, _Mapping) or key not in mapping.lines:
            return mline
        return mapping.line_of(key)

    m = cfg.model
    if m.chart not in ("torus", "annulus"):
        raise ConfigError(f"model.chart must be 'torus' or 'annulus', got {m.chart!r}",
                          L("model", "chart"))
    if m.n not in (1, 2):
        raise ConfigError(f"model.n must be 1 or 2, got {m.n!r}", L("model", "n"))
    if m.chart == "annulus" and m.n != 1:
        raise ConfigError("annulus charts are one-dimensional (n = 1)", L("model", "n"))
    N = _number(m.N, "model.N", L("model", "N"), integer=True)
    if N < 16:
        raise ConfigError(f"model.N must be >= 16, got {N}", L("model", "N"))
    _number(m.N_ang, "model.N_ang", L("model", "N_ang"), integer=True, allow_none=True)
    if not (isinstance(m.tau, tuple) and len(m.tau) == 2):
        raise ConfigError("model.tau must be a pair [re, im]", L("model", "tau"))
    for x in m.tau:
        _number(x, "model.tau entry", L("model", "tau"))
    if m.chart == "torus" and not m.tau[1] > 0:
        raise ConfigError("model.tau needs a positive imaginary part", L("model", "tau"))
    r_in = _number(m.r_in, "model.r_in", L("model", "r_in"))
    if m.chart == "annulus" and not 0 < r_in < 1:
        raise ConfigError(f"model.r_in must lie in (0, 1), got {r_in}", L("model", "r_in"))
    if m.form not in ("flat", "model_fs"):
        raise ConfigError(f"model.form must be 'flat' or 'model_fs', got {m.form!r}",
                          L("model", "form"))
    _number(m.volume, "model.volume", L("model", "volume"), positive=True, allow_none=True)

    f = cfg.family
    _number(f.t_max, "family.t_max", L("family", "t_max"), positive=True)
    ratio = _number(f.ratio, "family.ratio", L("family", "ratio"))
    if not 0 < ratio < 1:
        raise ConfigError("family.ratio must lie in (0, 1)", L("family", "ratio"))
    M = _number(f.M, "family.M", L("family", "M"), integer=True)
    if M < 2:
        raise ConfigError(f"family.M must be >= 2, got {M}", L("family", "M"))
    for key in ("append_zero", "normalize"):
        if not isinstance(getattr(f, key), bool):
            raise ConfigError(f"family.{key} must be true or false", L("family", key))

    p = cfg.poles
    if len(p.centers) != len(p.exponents):
        raise ConfigError("poles.centers and poles.exponents differ in length",
                          L("poles", "exponents"))
    for c in p.centers:
        if not (isinstance(c, tuple) and len(c) == 2 * m.n):
            raise ConfigError(f"each pole centre needs {2 * m.n} real coordinates",
                              L("poles", "centers"))
        for x in c:
            _number(x, "pole coordinate", L("poles", "centers"))
    for a in p.exponents:
        a = _number(a, "pole exponent", L("poles", "exponents"))
        if not -1 < a <= 1:
            raise ConfigError(f"pole exponent {a} outside (-1, 1]", L("poles", "exponents"))

    s = cfg.solver
    _number(s.tol, "solver.tol", L("solver", "tol"), positive=True)
    _number(s.linear_tol, "solver.linear_tol", L("solver", "linear_tol"), positive=True)
    _number(s.armijo, "solver.armijo", L("solver", "armijo"), positive=True)
    if _number(s.max_iter, "solver.max_iter", L("solver", "max_iter"), integer=True) < 1:
        raise ConfigError("solver.max_iter must be >= 1", L("solver", "max_iter"))
    for lv in s.ladder:
        _number(lv, "solver.ladder level", L("solver", "ladder"), integer=True, positive=True)
    if s.preconditioner not in ("amg", "jacobi", "direct"):
        raise ConfigError(f"unknown solver.preconditioner {s.preconditioner!r}",
                          L("solver", "preconditioner"))

    a = cfg.analysis
    Ks = [_number(k, "analysis.K_grid entry", L("analysis", "K_grid")) for k in a.K_grid]
    if any(k < 1 for k in Ks) or any(b <= c for c, b in zip(Ks, Ks[1:])):
        raise ConfigError("analysis.K_grid must be ascending with K >= 1", L("analysis", "K_grid"))
    for mm in a.m_list:
        if not (isinstance(mm, int) and 0 <= mm <= m.n):
            raise ConfigError(f"analysis.m_list entry {mm!r} outside [0, n]", L("analysis", "m_list"))
    for k in a.capacity_K:
        if _number(k, "analysis.capacity_K entry", L("analysis", "capacity_K")) < 1:
            raise ConfigError("capacity levels must be >= 1", L("analysis", "capacity_K"))
    for e in a.eps:
        _number(e, "analysis.eps entry", L("analysis", "eps"), positive=True)
    for d in a.delta:
        dd = _number(d, "analysis.delta entry", L("analysis", "delta"), positive=True)
        if not dd < 1:
            raise ConfigError("analysis.delta entries must lie in (0, 1)", L("analysis", "delta"))
        for e in a.eps:
            if not e > m.n * dd:
                raise ConfigError(f"barrier needs eps > n*delta (eps={e}, delta={dd})",
                                  L("analysis", "delta"))
    _number(a.diagnostics_radius, "analysis.diagnostics_radius",
            L("analysis", "diagnostics_radius"), positive=True)
    for r in a.localized_radii:
        _number(r, "analysis.localized_radii entry", L("analysis", "localized_radii"), positive=True)
    _number(a.continuity_tol, "analysis.continuity_tol", L("analysis", "continuity_tol"),
            positive=True)
    _number(a.continuity_tail, "analysis.continuity_tail", L("analysis", "continuity_tail"),
            integer=True, positive=True)
    rN = _number(a.refine_N, "analysis.refine_N", L("analysis", "refine_N"), integer=True,
                 allow_none=True)
    if rN is not None and rN < 16:
        raise ConfigError("analysis.refine_N must be >= 16", L("analysis", "refine_N"))
    _number(a.random_candidates, "analysis.random_candidates",
            L("analysis", "random_candidates"), integer=True)

    if not isinstance(cfg.output, str) or not cfg.output:
        raise ConfigError("output must be a non-empty path string", L("output"))
    _number(cfg.seed, "seed", L("seed"), integer=True)


def _normalise_numbers(cfg: ExperimentConfig) -> ExperimentConfig:
    """Coerce ints written for float fields so dumps round-trip exactly."""
    def floats(t):
        return tuple(float(x) for x in t)

    m = cfg.model
    model = ModelBlock(m.chart, m.n, floats(m.tau), float(m.r_in), m.N, m.N_ang, m.form,
                       None if m.volume is None else float(m.volume))
    f = cfg.family
    family = FamilyBlock(float(f.t_max), float(f.ratio), f.M, f.append_zero, f.normalize)
    poles = PoleBlock(tuple(floats(c) for c in cfg.poles.centers), floats(cfg.poles.exponents))
    s = cfg.solver
    solver = SolverBlock(float(s.tol), s.max_iter, float(s.armijo), float(s.linear_tol),
                         tuple(s.ladder), s.preconditioner)
    a = cfg.analysis
    analysis = AnalysisBlock(floats(a.K_grid), tuple(a.m_list), floats(a.capacity_K),
                             floats(a.eps), floats(a.delta), float(a.diagnostics_radius),
                             floats(a.localized_radii), float(a.continuity_tol),
                             a.continuity_tail, a.refine_N, a.random_candidates)
    return ExperimentConfig(model, family, poles, solver, analysis, cfg.output, cfg.seed)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML config document."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if root is None:
        return ExperimentConfig()
    tree = _to_python(root)
    if not isinstance(tree, _Mapping):
        raise ConfigError("config must be a mapping at top level", _line(root))
    kwargs, lines = {}, {}
    for key, val in tree.items():
        line, node = tree.lines[key]
        lines[key] = (line, val)
        if key in BLOCKS:
            try:
                kwargs[key] = _build(BLOCKS[key], val, key)
            except TypeError as exc:
                raise ConfigError(str(exc), line) from None
        elif key in ("output", "seed"):
            kwargs[key] = val
        else:
            raise ConfigError(f"unknown top-level key {key!r}", line)
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg, lines)
    return _normalise_numbers(cfg)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
