"""Solve, recover, estimate and report over a grid of mesh levels and reaction values."""
from __future__ import annotations

import csv
import io
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import majorants as mj
from .femcore import ExactSolution, ProblemSpec, error_norms, solve_reaction_diffusion
from .fluxrec import average_flux, l2_project_flux, numerical_flux
from .mesh import Mesh, build_structured_unit_square
from .szproj import (SAFETY_FACTOR, CalibrationReport, calibrate_cap, calibrate_cdagger,
                     calibrate_csz, critical_sigma, critical_sigma_from_errors,
                     oscillation_squared, read_calibration_csv, regularity_cdagger,
                     write_calibration_csv)


class ConfigError(ValueError):
    pass


# -- manufactured problems ----------------------------------------------------------

PI = np.pi


def _sinsin():
    s = lambda x, y: np.sin(PI * x) * np.sin(PI * y)
    return ExactSolution(
        s,
        lambda x, y: (PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)),
        lambda x, y: (-PI ** 2 * s(x, y), PI ** 2 * np.cos(PI * x) * np.cos(PI * y), -PI ** 2 * s(x, y)))


def _polybubble():
    return ExactSolution(
        lambda x, y: x * (1 - x) * y * (1 - y),
        lambda x, y: ((1 - 2 * x) * y * (1 - y), (1 - 2 * y) * x * (1 - x)),
        lambda x, y: (-2 * y * (1 - y), (1 - 2 * x) * (1 - 2 * y), -2 * x * (1 - x)))


def _zero():
    z = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    return ExactSolution(z, lambda x, y: (z(x, y), z(x, y)), lambda x, y: (z(x, y),) * 3)


_BUILTINS: dict[str, Callable[[], ExactSolution]] = {
    "sinsin": _sinsin, "polybubble": _polybubble, "zero": _zero}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_problem(name: str, sigma: float = 0.0, A=None) -> ProblemSpec:
    """Manufactured problem on the unit square with ``f = -div(A grad u) + sigma u``."""
    if name not in _BUILTINS:
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    A = np.eye(2) if A is None else np.asarray(A, float)
    ex = _BUILTINS[name]()
    a00, a01, a11 = A[0, 0], A[0, 1], A[1, 1]

    def f(x, y):
        uxx, uxy, uyy = ex.hessian(x, y)
        return -(a00 * uxx + 2 * a01 * uxy + a11 * uyy) + sigma * ex.value(x, y)

    return ProblemSpec(A, sigma, f, ex, name)


# -- configuration -------------------------------------------------------------------

SWEEP_ESTIMATORS = ("aubin", "repin_frolov", "churilova", "consistent", "consistent_osc_low",
                    "consistent_osc_high", "fem_majorant_1", "fem_majorant_1_osc", "fem_majorant_2")
_NEEDS_CDAGGER = {"fem_majorant_1", "fem_majorant_1_osc"}
_NEEDS_STAR = {"consistent", "consistent_osc_low", "consistent_osc_high"}
_NEEDS_SZ = {"fem_majorant_2"}

_SIGMA_RE = re.compile(r"^(?:(?P<c>[0-9.eE+-]+)\*)?(?P<sym>h\^-1|h\^-2|sigma_star)$")


@dataclass
class StudyConfig:
    problem: str = "sinsin"
    levels: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    sigmas: list[str] = field(default_factory=lambda: ["0"])
    estimators: list[str] = field(default_factory=lambda: ["consistent", "fem_majorant_1"])
    flux: str = "average"
    constants: str = "calibrate"
    constants_file: Optional[str] = None
    c_dagger: Optional[float] = None
    c_sz01: Optional[float] = None
    c_sz11: Optional[float] = None
    sigma_star: str = "cdagger"
    c_circ: float = 2.0
    safety_factor: float = SAFETY_FACTOR
    A: list[float] = field(default_factory=lambda: [1.0, 0.0, 1.0])
    quad_degree: int = 4
    error_degree: int = 6
    epsilon: float = 1.0
    c_omega: float = mj.UNIT_SQUARE_C_OMEGA
    workers: int = 1
    output: Optional[str] = None

    @property
    def matrix(self) -> np.ndarray:
        a11, a12, a22 = self.A
        return np.array([[a11, a12], [a12, a22]])

    def validate(self) -> None:
        if self.problem not in _BUILTINS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not self.levels or any(n < 1 for n in self.levels):
            raise ConfigError("levels must be a nonempty list of positive integers")
        if not self.sigmas:
            raise ConfigError("at least one sigma is required")
        for s in self.sigmas:
            _parse_sigma(s)
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        bad = [e for e in self.estimators if e not in SWEEP_ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {', '.join(SWEEP_ESTIMATORS)}")
        if self.flux not in ("average", "l2project"):
            raise ConfigError("flux must be 'average' or 'l2project'")
        if self.constants not in ("calibrate", "regularity", "explicit"):
            raise ConfigError("constants must be 'calibrate', 'regularity' or 'explicit'")
        if self.sigma_star in ("aub1", "aub100") and any("sigma_star" in s for s in self.sigmas):
            raise ConfigError("sigma entries cannot refer to a sigma_star measured from the solution")
        if self.sigma_star not in ("cdagger", "sz", "aub1", "aub100"):
            try:
                star = float(self.sigma_star)
            except ValueError:
                star = -1.0
            if not star > 0:
                raise ConfigError("sigma_star must be cdagger, sz, aub1, aub100 or a positive number")
        if self.quad_degree not in range(1, 7) or self.error_degree not in range(1, 7):
            raise ConfigError("quadrature degrees must lie in 1..6")
        if len(self.A) != 3:
            raise ConfigError("A is given as a11,a12,a22")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.constants == "explicit" and self.constants_file is None:
            needed = set(self.estimators)
            # sigma_star itself comes from c_dagger or c_sz01
            if needed & _NEEDS_STAR or any("sigma_star" in s for s in self.sigmas):
                needed |= {"cdagger": _NEEDS_CDAGGER, "sz": _NEEDS_SZ}.get(self.sigma_star, set())
            if needed & _NEEDS_CDAGGER and self.c_dagger is None:
                raise ConfigError("explicit constants: c_dagger is required by the chosen estimators; "
                                  "set it or use constants=calibrate")
            if needed & _NEEDS_SZ and (self.c_sz01 is None or self.c_sz11 is None):
                raise ConfigError("explicit constants: c_sz01 and c_sz11 are required; "
                                  "set them or use constants=calibrate")


_LIST_KEYS = {"levels": int, "sigma": str, "sigmas": str, "estimators": str, "A": float}
_SCALAR_KEYS = {"problem": str, "flux": str, "constants": str, "constants_file": str,
                "c_dagger": float, "c_sz01": float, "c_sz11": float, "sigma_star": str, "c_circ": float,
                "safety_factor": float, "quad_degree": int, "error_degree": int,
                "epsilon": float, "c_omega": float, "workers": int, "output": str}


def parse_config(text: str) -> StudyConfig:
    """``key=value`` lines; lists are comma separated; ``#`` starts a comment."""
    cfg = StudyConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _LIST_KEYS:
                items = [_LIST_KEYS[key](v.strip()) for v in value.split(",") if v.strip()]
                setattr(cfg, "sigmas" if key == "sigma" else key, items)
            elif key in _SCALAR_KEYS:
                setattr(cfg, key, _SCALAR_KEYS[key](value))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    cfg.validate()
    return cfg


def load_config(path) -> StudyConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _parse_sigma(text: str):
    t = str(text).replace(" ", "")
    try:
        v = float(t)
    except ValueError:
        m = _SIGMA_RE.match(t)
        if not m:
            raise ConfigError(f"cannot resolve sigma {text!r}; use a number, h^-1, h^-2, "
                              f"c*h^-2 or k*sigma_star") from None
        return float(m["c"]) if m["c"] else 1.0, m["sym"]
    if v < 0:
        raise ConfigError(f"sigma must be >= 0, got {text!r}")
    return v, None


def resolve_sigma(text: str, h: float, sigma_star: float | None = None) -> float:
    """Numeric value of a sigma entry on a mesh of size ``h``."""
    c, sym = _parse_sigma(text)
    if sym is None:
        return c
    if sym == "h^-1":
        return c / h
    if sym == "h^-2":
        return c / h ** 2
    if sigma_star is None:
        raise ConfigError("sigma_star is not available to resolve " + repr(text))
    return c * sigma_star


# -- constants -----------------------------------------------------------------------

@dataclass
class Constants:
    c_dagger: Optional[float] = None
    c_sz01: Optional[float] = None
    c_sz11: Optional[float] = None
    reports: dict = field(default_factory=dict)


def _meshes(levels):
    return [build_structured_unit_square(n) for n in levels]


def run_calibration(config: StudyConfig, meshes: Sequence[Mesh] | None = None) -> dict[str, CalibrationReport]:
    """Calibrate ``c_dagger`` and the Scott-Zhang constants on the configured levels.

    ``c_dagger`` is calibrated on the configured problem at every numeric or
    h-coupled sigma of the sweep plus ``sigma = 0`` and ``1``.  Writes the
    CSV to ``config.output`` when set.
    """
    meshes = list(meshes) if meshes is not None else _meshes(config.levels)
    if config.problem == "zero":
        raise ConfigError("calibration needs a problem with a nonzero exact solution")
    specs = ["0", "1"] + [s for s in config.sigmas if "sigma_star" not in s]
    seen, problems = set(), []
    for s in specs:
        key = s.replace(" ", "")
        if key in seen:
            continue
        seen.add(key)
        problems.append(lambda mesh, s=s: builtin_problem(
            config.problem, resolve_sigma(s, mesh.h), config.matrix))
    reports = {"c_dagger": calibrate_cdagger(problems, meshes, config.safety_factor, config.levels)}
    reports.update(calibrate_csz(meshes, safety_factor=config.safety_factor, levels=config.levels))
    reports["c_ap"] = calibrate_cap(meshes, safety_factor=config.safety_factor, levels=config.levels)
    if config.output:
        write_calibration_csv(list(reports.values()), config.output)
    return reports


def resolve_constants(config: StudyConfig, meshes: Sequence[Mesh]) -> Constants:
    if config.constants_file:
        c = read_calibration_csv(config.constants_file, config.safety_factor)
        return Constants(c.get("c_dagger"), c.get("c_sz01"), c.get("c_sz11"))
    if config.constants == "explicit":
        return Constants(config.c_dagger, config.c_sz01, config.c_sz11)
    cal_cfg = StudyConfig(**{f.name: getattr(config, f.name) for f in fields(StudyConfig)})
    cal_cfg.output = None
    reports = run_calibration(cal_cfg, meshes)
    c_dagger = reports["c_dagger"].value
    if config.constants == "regularity":
        c_dagger = regularity_cdagger(config.matrix, reports["c_ap"].value, config.c_circ)
    return Constants(c_dagger, reports["c_sz01"].value, reports["c_sz11"].value, reports)


def _sigma_star(config: StudyConfig, consts: Constants, h: float) -> float | None:
    if config.sigma_star == "cdagger":
        return None if consts.c_dagger is None else critical_sigma(consts.c_dagger, h)
    if config.sigma_star == "sz":
        return None if consts.c_sz01 is None else critical_sigma(consts.c_sz01, h)
    if config.sigma_star in ("aub1", "aub100"):
        return None  # measured per cell from the solution
    return float(config.sigma_star)


# -- sweep ---------------------------------------------------------------------------

CSV_HEADER = ["level", "h", "sigma", "estimator", "total", "diffusion", "residual_mult",
              "residual_sq", "oscillation", "true_energy_sq", "effectivity", "rate"]


@dataclass
class SweepRow:
    level: int
    h: float
    sigma: float
    estimator: str
    total: Optional[float] = None
    diffusion: Optional[float] = None
    residual_mult: Optional[float] = None
    residual_sq: Optional[float] = None
    oscillation: Optional[float] = None
    true_energy_sq: Optional[float] = None
    effectivity: Optional[float] = None
    rate: Optional[float] = None
    error: Optional[str] = None
    # not serialised; recoverable from the other columns
    prefactor: Optional[float] = field(default=None, compare=False)
    sigma_label: str = field(default="", compare=False)

    @property
    def resummed(self) -> float:
        return self.prefactor * (self.diffusion + self.residual_mult * self.residual_sq) + self.oscillation

    def csv_values(self) -> list[str]:
        out = [str(self.level)]
        for name in CSV_HEADER[1:]:
            if name == "estimator":
                out.append(self.estimator)
            elif name == "total" and self.error is not None:
                out.append("error:" + self.error)
            else:
                v = getattr(self, name)
                out.append("" if v is None else repr(float(v)))
        return out

    @classmethod
    def from_csv(cls, rec: dict) -> "SweepRow":
        num = lambda s: None if s == "" else float(s)
        row = cls(int(rec["level"]), float(rec["h"]), float(rec["sigma"]), rec["estimator"])
        if rec["total"].startswith("error:"):
            row.error = rec["total"][len("error:"):]
        for name in CSV_HEADER[4:]:
            if name == "total" and row.error is not None:
                continue
            setattr(row, name, num(rec[name]))
        if row.error is None:
            lin = row.diffusion + row.residual_mult * row.residual_sq
            row.prefactor = (row.total - row.oscillation) / lin if lin > 0 else 0.0
        return row


@dataclass
class ErrorRow:
    level: int
    h: float
    sigma: float
    sigma_label: str
    l2: float
    a: float
    energy: float


@dataclass
class InverseRow:
    level: int
    h: float
    sigma: float
    k: int
    majorant: float
    true_energy_sq: float
    oscillation_sq: float

    @property
    def ratio(self) -> float:
        return self.majorant / (self.true_energy_sq + self.oscillation_sq)


@dataclass
class SweepResult:
    rows: list[SweepRow]
    errors: list[ErrorRow] = field(default_factory=list)
    constants: Optional[Constants] = None
    inverse: list[InverseRow] = field(default_factory=list)

    def select(self, estimator: str, sigma_label: str | None = None) -> list[SweepRow]:
        return [r for r in self.rows if r.estimator == estimator
                and (sigma_label is None or r.sigma_label == sigma_label)]

    def inverse_spread(self, k: int) -> float:
        ratios = [r.ratio for r in self.inverse if r.k == k]
        return max(ratios) / min(ratios)


def _flux(config, u, A):
    zb = numerical_flux(u, A)
    return average_flux(zb) if config.flux == "average" else l2_project_flux(zb)


def _evaluate(name, problem, u, z, consts, sigma_star, config) -> mj.MajorantReport:
    q = config.quad_degree
    if name in _NEEDS_CDAGGER and consts.c_dagger is None:
        raise ValueError("c_dagger is not available")
    if name in _NEEDS_SZ and (consts.c_sz01 is None or consts.c_sz11 is None):
        raise ValueError("Scott-Zhang constants are not available")
    if name in _NEEDS_STAR and sigma_star is None:
        raise ValueError("sigma_star is not available")
    if name == "aubin":
        return mj.aubin(problem, u, z, degree=q)
    if name == "repin_frolov":
        if problem.sigma != 0:
            raise mj.SigmaRangeError("repin_frolov is stated for sigma = 0")
        return mj.repin_frolov(problem, u, z, config.epsilon, config.c_omega, degree=q)
    if name == "churilova":
        return mj.churilova(problem, u, z, config.epsilon, config.c_omega, degree=q)
    if name == "consistent":
        return mj.consistent_majorant(problem, u, z, sigma_star, degree=q)
    if name == "consistent_osc_low":
        return mj.consistent_osc_low(problem, u, z, sigma_star, config.epsilon, degree=q)
    if name == "consistent_osc_high":
        return mj.consistent_osc_high(problem, u, z, sigma_star, degree=q)
    if name == "fem_majorant_1":
        return mj.fem_majorant_1(problem, u, z, consts.c_dagger, degree=q)
    if name == "fem_majorant_1_osc":
        return mj.fem_majorant_1_osc(problem, u, z, consts.c_dagger, config.epsilon, degree=q)
    if name == "fem_majorant_2":
        return mj.fem_majorant_2(problem, u, z, consts.c_sz01, consts.c_sz11, degree=q)
    raise ValueError(f"unknown estimator {name!r}")


def _cell(config, consts, level, mesh, sigma_label):
    h = mesh.h
    sigma_star = _sigma_star(config, consts, h)
    sigma = resolve_sigma(sigma_label, h, sigma_star)
    problem = builtin_problem(config.problem, sigma, config.matrix)
    u = solve_reaction_diffusion(problem, mesh)
    norms = error_norms(problem, u, config.error_degree)
    true_sq = norms.energy ** 2
    if config.sigma_star in ("aub1", "aub100") and norms.l2 > 0:
        sigma_star = critical_sigma_from_errors(problem, u, projected=config.sigma_star == "aub100")
    z = _flux(config, u, problem.A)
    rows = []
    for name in config.estimators:
        try:
            rep = _evaluate(name, problem, u, z, consts, sigma_star, config)
        except ValueError as exc:
            rows.append(SweepRow(level, h, sigma, name, true_energy_sq=true_sq,
                                 error=str(exc).replace(",", ";"), sigma_label=sigma_label))
            continue
        eff = rep.effectivity(true_sq) if true_sq > 0 else None
        rows.append(SweepRow(level, h, sigma, name, rep.total, rep.diffusion, rep.residual_mult,
                             rep.residual_sq, rep.oscillation, true_sq, eff,
                             prefactor=rep.prefactor, sigma_label=sigma_label))
    err = ErrorRow(level, h, sigma, sigma_label, norms.l2, norms.a, norms.energy)
    return rows, err


def _fill_rates(rows: list[SweepRow], levels: list[int]) -> None:
    """``log2(q_h / q_{h/2})`` between consecutive doubling levels; ``q`` is the
    effectivity, or ``sqrt(total)`` when no true error is known."""
    by_key: dict[tuple, dict[int, SweepRow]] = {}
    for r in rows:
        by_key.setdefault((r.sigma_label, r.estimator), {})[r.level] = r
    for series in by_key.values():
        for prev, cur in zip(levels, levels[1:]):
            a, b = series.get(prev), series.get(cur)
            if a is None or b is None or cur != 2 * prev or a.error or b.error:
                continue
            qa = a.effectivity if a.effectivity is not None else math.sqrt(a.total)
            qb = b.effectivity if b.effectivity is not None else math.sqrt(b.total)
            if qa > 0 and qb > 0:
                b.rate = math.log2(qa / qb)


def run_sweep(config: StudyConfig, constants: Constants | None = None) -> SweepResult:
    config.validate()
    meshes = _meshes(config.levels)
    consts = constants if constants is not None else resolve_constants(config, meshes)
    cells = [(lv, m, s) for lv, m in zip(config.levels, meshes) for s in config.sigmas]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda c: _cell(config, consts, *c), cells))
    # reorder: sigma label outermost, then level, then estimator order
    order = {s: i for i, s in enumerate(config.sigmas)}
    paired = sorted(enumerate(results), key=lambda p: (order[cells[p[0]][2]], p[0]))
    rows = [r for _, (rs, _) in paired for r in rs]
    errors = [e for _, (_, e) in paired]
    _fill_rates(rows, config.levels)
    result = SweepResult(rows, errors, consts)
    if config.output:
        emit_csv(result, config.output)
    return result


def run_inverse_check(config: StudyConfig, constants: Constants | None = None) -> SweepResult:
    """Ratio of the FEM majorants (k = 1, 2) to ``|||e|||^2 + sum h_r^2/pi^2 ||f - Pi f||^2``."""
    if config.flux != "l2project":
        raise ConfigError("the inverse-like bound is checked with flux=l2project")
    cfg = StudyConfig(**{f.name: getattr(config, f.name) for f in fields(StudyConfig)})
    cfg.estimators = ["fem_majorant_1", "fem_majorant_2"]
    cfg.output = None
    result = run_sweep(cfg, constants)
    meshes = dict(zip(cfg.levels, _meshes(cfg.levels)))
    osc = {}
    for r in result.rows:
        if r.error is not None:
            raise mj.SigmaRangeError(f"level {r.level}, sigma {r.sigma}: {r.error}")
        key = (r.level, r.sigma)
        if key not in osc:
            mesh = meshes[r.level]
            f = builtin_problem(cfg.problem, r.sigma, cfg.matrix).f
            osc[key] = float(np.sum(mesh.element_diameters ** 2 / PI ** 2 * oscillation_squared(f, mesh)))
        k = 1 if r.estimator == "fem_majorant_1" else 2
        result.inverse.append(InverseRow(r.level, r.h, r.sigma, k, r.total, r.true_energy_sq, osc[key]))
    if config.output:
        emit_inverse_csv(result, config.output)
    return result


# -- output --------------------------------------------------------------------------

def emit_csv(result: SweepResult, path) -> None:
    if not result.rows:
        raise ValueError("nothing to write: the sweep produced no rows")
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(result))


def csv_text(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow(r.csv_values())
    return buf.getvalue()


def read_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [SweepRow.from_csv(rec) for rec in reader]


INVERSE_HEADER = ["level", "h", "sigma", "k", "majorant", "true_energy_sq", "oscillation_sq", "ratio"]


def emit_inverse_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INVERSE_HEADER)
        for r in result.inverse:
            w.writerow([r.level, repr(r.h), repr(r.sigma), r.k, repr(r.majorant),
                        repr(r.true_energy_sq), repr(r.oscillation_sq), repr(r.ratio)])


A_PRIORI_ORDERS = {"l2": 2, "a": 1, "energy": 1}


def _rate(a, b, ha, hb):
    return math.log(a / b) / math.log(ha / hb) if a > 0 and b > 0 else float("nan")


def emit_summary(result: SweepResult) -> str:
    """Error norms with observed orders beside the a priori ones, then effectivity ranges."""
    if not result.rows:
        raise ValueError("empty result")
    lines = []
    labels = list(dict.fromkeys(e.sigma_label for e in result.errors))
    for label in labels:
        errs = [e for e in result.errors if e.sigma_label == label]
        lines.append(f"sigma = {label}")
        lines.append(f"  {'level':>5} {'h':>10} {'||e||_0':>11} {'rate':>5} {'||e||_A':>11} {'rate':>5} "
                     f"{'|||e|||':>11} {'rate':>5}")
        prev = None
        for e in errs:
            cells = [f"  {e.level:>5} {e.h:>10.4g}"]
            for key in ("l2", "a", "energy"):
                val = getattr(e, key)
                r = "" if prev is None else f"{_rate(getattr(prev, key), val, prev.h, e.h):5.2f}"
                cells.append(f"{val:>11.4e} {r:>5}")
            lines.append(" ".join(cells))
            prev = e
        for key, label_ in (("l2", "||e||_0"), ("a", "||e||_A"), ("energy", "|||e|||")):
            if len(errs) > 1:
                a, b = errs[-2], errs[-1]
                obs = f"{_rate(getattr(a, key), getattr(b, key), a.h, b.h):.2f}"
            else:
                obs = "n/a"
            lines.append(f"  {label_:<8} observed rate {obs:>5}   a priori: {A_PRIORI_ORDERS[key]}")
        for name in dict.fromkeys(r.estimator for r in result.rows):
            rs = [r for r in result.select(name, label)]
            ok = [r.effectivity for r in rs if r.error is None and r.effectivity is not None]
            bad = sum(r.error is not None for r in rs)
            if ok:
                note = f" ({bad} out-of-range)" if bad else ""
                lines.append(f"  {name:<20} effectivity {min(ok):.3f} .. {max(ok):.3f}{note}")
            elif bad:
                lines.append(f"  {name:<20} out of range on every level")
    if result.inverse:
        for k in sorted({r.k for r in result.inverse}):
            lines.append(f"inverse-like bound, k={k}: ratio max/min = {result.inverse_spread(k):.3f}")
    return "\n".join(lines)
