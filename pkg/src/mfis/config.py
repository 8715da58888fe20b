"""TOML run configuration with command-line overrides.

A config file has up to five tables::

    [model]   name = "sec_5_1"          # or explicit b0, B, Bbar, sigma
    [g]       type = "quadratic"        # P2, p1, Pbar2, p2; or abs_of_mean / mean_of_abs
    [sim]     N = [5, 10]  M = 100000  dt = 0.002 (or dt_rule = "0.01/N")  s  T  seed  y
    [policy]  names = ["lq_optimal", "zero"]
    [output]  csv = "run.csv"  samples_csv = "samples.csv"  timing = true

A named model supplies its terminal functional, initial position and
policies; any explicitly given field overrides it.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .experiments import EXPERIMENTS, POLICIES
from .measures import AbsOfMean, MeanOfAbs, Quadratic, TerminalFunctional
from .models import LQModel

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]

_SECTIONS = {
    "model": {"name", "b0", "B", "Bbar", "sigma"},
    "g": {"type", "P2", "p1", "Pbar2", "p2"},
    "sim": {"N", "M", "dt", "dt_rule", "s", "T", "seed", "y"},
    "policy": {"name", "names"},
    "output": {"csv", "samples_csv", "timing"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the field and, if known, the line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class RunConfig:
    model_name: Optional[str]
    lq: LQModel
    g: TerminalFunctional
    n_list: list
    n_samples: int = 100_000
    dt: Optional[float] = None
    s: float = 0.0
    T: float = 1.0
    seed: int = 0
    y: object = 0.0
    policies: list = field(default_factory=lambda: ["zero"])
    csv_path: Optional[str] = None
    samples_csv: Optional[str] = None
    timing: bool = True

    def dt_for(self, N: int) -> float:
        return 0.01 / N if self.dt is None else self.dt

    def as_dict(self) -> dict:
        g = self.g
        if isinstance(g, Quadratic):
            gd = {"type": "quadratic", "P2": g.P2.tolist(), "p1": g.p1.tolist(),
                  "Pbar2": g.Pbar2.tolist(), "p2": float(g.p2)}
        else:
            gd = {"type": "abs_of_mean" if isinstance(g, AbsOfMean) else "mean_of_abs"}
        return {
            "model": {
                "name": self.model_name,
                "b0": self.lq.b0.tolist(),
                "B": self.lq.B.tolist(),
                "Bbar": self.lq.Bbar.tolist(),
                "sigma": self.lq.sigma.tolist(),
            },
            "g": gd,
            "sim": {
                "N": list(self.n_list),
                "M": self.n_samples,
                "dt": self.dt if self.dt is not None else "0.01/N",
                "s": self.s,
                "T": self.T,
                "seed": self.seed,
                "y": np.asarray(self.y).tolist(),
            },
            "policy": {"names": list(self.policies)},
            "output": {"csv": self.csv_path, "samples_csv": self.samples_csv, "timing": self.timing},
        }


def _line_of(text: Optional[str], section: str, key: Optional[str] = None) -> Optional[int]:
    # best-effort source location for field diagnostics
    if text is None:
        return None
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[\s*([A-Za-z_]+)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return None


class _Reader:
    def __init__(self, data: dict, text: Optional[str], source: str):
        self.data, self.text, self.source = data, text, source

    def where(self, section, key=None):
        line = _line_of(self.text, section, key)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section, key, message):
        raise ConfigError(self.where(section, key), message)

    def section(self, name):
        sec = self.data.get(name, {})
        if not isinstance(sec, dict):
            self.fail(name, None, "must be a table")
        unknown = set(sec) - _SECTIONS[name]
        if unknown:
            self.fail(name, sorted(unknown)[0], f"unknown field (allowed: {', '.join(sorted(_SECTIONS[name]))})")
        return sec

    def number(self, section, key, value, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(section, key, f"expected a number, got {value!r}")
        if integer and not isinstance(value, int):
            self.fail(section, key, f"expected an integer, got {value!r}")
        if not np.isfinite(value):
            self.fail(section, key, "must be finite")
        if positive and value <= 0:
            self.fail(section, key, f"must be positive, got {value!r}")
        return value

    def array(self, section, key, value):
        try:
            a = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(section, key, f"expected a number or nested list of numbers, got {value!r}")
        if not np.all(np.isfinite(a)):
            self.fail(section, key, "must be finite")
        return a


def _build_model(r: _Reader):
    sec = r.section("model")
    name = sec.get("name")
    base = None
    if name is not None:
        if name not in EXPERIMENTS:
            r.fail("model", "name", f"unknown model {name!r}; choose from {', '.join(sorted(EXPERIMENTS))}")
        base = EXPERIMENTS[name]
    explicit = {k: sec[k] for k in ("b0", "B", "Bbar", "sigma") if k in sec}
    if base is None and not {"B", "Bbar", "sigma"} <= set(explicit):
        r.fail("model", None, "give either name = <example> or all of B, Bbar, sigma")
    if base is not None and not explicit:
        return name, base.lq, base
    vals = {k: r.array("model", k, v) for k, v in explicit.items()}
    B = vals.get("B", base.lq.B if base else None)
    d = np.atleast_2d(B).shape[0]
    args = dict(
        b0=vals.get("b0", base.lq.b0 if base else np.zeros(d)),
        B=B,
        Bbar=vals.get("Bbar", base.lq.Bbar if base else None),
        sigma=vals.get("sigma", base.lq.sigma if base else None),
    )
    try:
        lq = LQModel(np.atleast_1d(args["b0"]), np.atleast_2d(args["B"]), np.atleast_2d(args["Bbar"]), args["sigma"])
    except ValueError as exc:
        r.fail("model", None, str(exc))
    return name, lq, base


def _build_g(r: _Reader, d: int, base):
    sec = r.section("g")
    if not sec:
        if base is None:
            r.fail("g", None, "missing [g] table (needed when [model] gives explicit coefficients)")
        return base.g
    kind = sec.get("type", "quadratic")
    if kind == "abs_of_mean":
        return AbsOfMean()
    if kind == "mean_of_abs":
        return MeanOfAbs()
    if kind != "quadratic":
        r.fail("g", "type", f"unknown type {kind!r}; choose from quadratic, abs_of_mean, mean_of_abs")
    vals = {k: r.array("g", k, sec.get(k, 0.0)) for k in ("P2", "p1", "Pbar2")}
    p2 = r.number("g", "p2", sec.get("p2", 0.0))
    try:
        return Quadratic(
            np.broadcast_to(np.atleast_2d(vals["P2"]), (d, d)).copy() if vals["P2"].size == 1 else vals["P2"],
            np.broadcast_to(np.atleast_1d(vals["p1"]), (d,)).copy() if vals["p1"].size == 1 else vals["p1"],
            np.broadcast_to(np.atleast_2d(vals["Pbar2"]), (d, d)).copy() if vals["Pbar2"].size == 1 else vals["Pbar2"],
            float(p2),
        )
    except ValueError as exc:
        r.fail("g", None, str(exc))


def parse_config(data: dict, text: Optional[str] = None, source: str = "<config>") -> RunConfig:
    r = _Reader(data, text, source)
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(source, f"unknown table [{sorted(unknown)[0]}] (allowed: {', '.join(_SECTIONS)})")
    name, lq, base = _build_model(r)
    g = _build_g(r, lq.dim, base)
    sim = r.section("sim")

    n_raw = sim.get("N", [5])
    n_list = n_raw if isinstance(n_raw, list) else [n_raw]
    if not n_list:
        r.fail("sim", "N", "must list at least one particle count")
    for n in n_list:
        r.number("sim", "N", n, positive=True, integer=True)
    M = r.number("sim", "M", sim.get("M", 100_000), positive=True, integer=True)
    if M < 2:
        r.fail("sim", "M", "need at least 2 samples")
    if "dt" in sim and "dt_rule" in sim:
        r.fail("sim", "dt", "give dt or dt_rule, not both")
    dt = None
    if "dt" in sim:
        dt = float(r.number("sim", "dt", sim["dt"], positive=True))
    elif sim.get("dt_rule", "0.01/N") != "0.01/N":
        r.fail("sim", "dt_rule", f"only '0.01/N' is supported, got {sim['dt_rule']!r}")
    s = float(r.number("sim", "s", sim.get("s", base.s if base else 0.0)))
    T = float(r.number("sim", "T", sim.get("T", base.T if base else 1.0)))
    if not 0 <= s < T:
        r.fail("sim", "T", f"need 0 <= s < T, got s={s}, T={T}")
    seed = r.number("sim", "seed", sim.get("seed", 0), integer=True)
    if seed < 0:
        r.fail("sim", "seed", "must be non-negative")
    if "y" in sim:
        y = r.array("sim", "y", sim["y"])
    elif base is not None:
        y = base.y
    else:
        r.fail("sim", "y", "initial position required when [model] gives explicit coefficients")

    pol = r.section("policy")
    if "name" in pol and "names" in pol:
        r.fail("policy", "name", "give name or names, not both")
    names = pol.get("names", [pol["name"]] if "name" in pol else list(base.policies) if base else ["zero"])
    if isinstance(names, str):
        names = [names]
    for p in names:
        if p not in POLICIES:
            r.fail("policy", "names" if "names" in pol else "name", f"unknown policy {p!r}; choose from {', '.join(POLICIES)}")

    out = r.section("output")
    timing = out.get("timing", True)
    if not isinstance(timing, bool):
        r.fail("output", "timing", f"expected true or false, got {timing!r}")
    return RunConfig(
        model_name=name,
        lq=lq,
        g=g,
        n_list=[int(n) for n in n_list],
        n_samples=int(M),
        dt=dt,
        s=s,
        T=T,
        seed=int(seed),
        y=y,
        policies=list(names),
        csv_path=out.get("csv"),
        samples_csv=out.get("samples_csv"),
        timing=timing,
    )


def load_config(path) -> RunConfig:
    """Read and validate a TOML config file.

    Raises
    ------
    ConfigError
        With the file, line (when it can be located) and field of the problem.
    """
    path = str(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(path, f"cannot read config: {exc.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(path, f"TOML syntax error: {exc}") from None
    return parse_config(data, text, path)
