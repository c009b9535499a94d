"""Experiment configuration files and built-in presets.

The format is plain text::

    # comment
    preset = fig3_zeno          # start from a preset (optional)
    equation = nonlinear
    trajectories = 20

    [params]
    g_s = 0.001

    [feedback]
    target = 1

Keys before the first section header belong to ``[run]``.  Every value
keeps the line it came from so that errors point at the offending line.
Precedence: command-line overrides > file > preset > defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .params import CavityParams, ParameterError
from .sme import EQUATIONS, SAMPLINGS, SCHEMES, Feedback
from .hilbert import VARIANTS

SECTIONS = ("run", "params", "feedback")

RUN_KEYS = {
    "name": str, "preset": str, "equation": str, "scheme": str, "trajectories": int,
    "seed": int, "t_end": float, "record_stride": int, "variant": str, "sampling": str,
    "qnd_blocks": bool, "atoms": str, "atom_n": int, "cavity": str, "cavity_m": int,
    "cavity_xi": complex, "output_dir": str, "series": str, "histogram_times": "floats",
    "histogram_bins": int, "mu": float, "workers": int, "check_invariants": bool,
}
PARAM_KEYS = {f.name: f.type for f in fields(CavityParams)}
FEEDBACK_KEYS = {"target": int, "low": float, "high": float, "g_s_high": float,
                 "g_s_low": float}
EQUATIONS_ALL = EQUATIONS + ("discrete",)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration, with its source line."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + message)


@dataclass
class Entry:
    value: str
    line: int | None = None


def parse_text(text: str, source: str = "<config>") -> dict[str, dict[str, Entry]]:
    """Split a config file into ``{section: {key: Entry}}``."""
    out: dict[str, dict[str, Entry]] = {s: {} for s in SECTIONS}
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", lineno, source)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {SECTIONS}",
                                  lineno, source)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, source)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first on line "
                              f"{out[section][key].line})", lineno, source)
        out[section][key] = Entry(value, lineno)
    return out


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _convert(kind, text: str):
    if kind in (bool, "bool"):
        t = text.lower()
        if t in _TRUE:
            return True
        if t in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "floats":
        return tuple(float(v) for v in text.replace(",", " ").split())
    if kind in (int, "int"):
        f = float(text)
        if f != int(f):
            raise ValueError(f"not an integer: {text!r}")
        return int(f)
    if kind in (float, "float"):
        return _float(text)
    if kind in (complex, "complex") or "complex" in str(kind):
        return _complex(text)
    if "None" in str(kind):
        if text.lower() in ("none", ""):
            return None
        return int(text) if "int" in str(kind) else _float(text)
    if kind in (str, "str"):
        return text
    raise ValueError(f"unsupported type {kind!r}")


def _float(text: str) -> float:
    t = text.lower().replace(" ", "")
    for name, val in (("-pi/2", -math.pi / 2), ("pi/2", math.pi / 2), ("-pi", -math.pi),
                      ("pi", math.pi)):
        if t == name:
            return val
    return float(text)


def _complex(text: str) -> complex:
    return complex(text.replace(" ", "").replace("i", "j"))


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    name: str
    params: CavityParams
    equation: str = "nonlinear"
    scheme: str = "milstein"
    trajectories: int = 1
    seed: int = 0
    t_end: float = 1.0
    record_stride: int = 1
    variant: str = "zeno"
    sampling: str = "reference"
    qnd_blocks: bool = False
    atoms: str = "ground"
    atom_n: int = 0
    cavity: str = "vacuum"
    cavity_m: int = 0
    cavity_xi: complex = 0j
    output_dir: str | None = None
    series: str = "auto"
    histogram_times: tuple = ()
    histogram_bins: int = 60
    mu: float = 200.0
    workers: int = 1
    check_invariants: bool = True
    feedback: Feedback | None = None
    lines: dict = field(default_factory=dict)

    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.params.dt)))

    def echo(self) -> list[str]:
        """Resolved configuration as ``key = value`` lines, sections included."""
        out = ["[run]"]
        for k in RUN_KEYS:
            if k == "preset":
                continue
            v = getattr(self, k)
            out.append(f"{k} = {_fmt(v)}")
        out.append("[params]")
        for f in fields(CavityParams):
            out.append(f"{f.name} = {_fmt(getattr(self.params, f.name))}")
        if self.feedback is not None:
            out.append("[feedback]")
            for k in FEEDBACK_KEYS:
                out.append(f"{k} = {_fmt(getattr(self.feedback, k))}")
        return out


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v).strip("()")
    return str(v)


def _preset_entries(name: str, line: int | None, source: str) -> dict[str, dict[str, Entry]]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}",
                          line, source)
    return {sec: {k: Entry(_fmt(v), None) for k, v in vals.items()}
            for sec, vals in PRESETS[name].items()}


def resolve(sections: dict[str, dict[str, Entry]], overrides: dict[str, str] | None = None,
            source: str = "<config>") -> ExperimentConfig:
    """Merge preset, file and overrides and validate the result.

    ``overrides`` maps ``key`` or ``section.key`` to a string value.
    """
    merged: dict[str, dict[str, Entry]] = {s: {} for s in SECTIONS}
    preset = sections.get("run", {}).get("preset")
    if overrides and "preset" in overrides:
        preset = Entry(overrides["preset"], None)
    if preset is not None:
        for sec, vals in _preset_entries(preset.value, preset.line, source).items():
            merged[sec].update(vals)
        merged["run"].setdefault("name", Entry(preset.value))
    for sec in SECTIONS:
        merged[sec].update(sections.get(sec, {}))
    for key, value in (overrides or {}).items():
        sec, _, k = key.rpartition(".")
        if not sec:
            sec = ("params" if k in PARAM_KEYS else
                   "feedback" if k in FEEDBACK_KEYS and k not in RUN_KEYS else "run")
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section in override {key!r}", None, source)
        merged[sec][k] = Entry(str(value), None)

    def convert(sec, table):
        out = {}
        for k, e in merged[sec].items():
            if k not in table:
                raise ConfigError(f"unknown key {k!r} in [{sec}]", e.line, source)
            try:
                out[k] = _convert(table[k], e.value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k!r}: {exc}", e.line, source) from None
        return out

    run = convert("run", RUN_KEYS)
    par = convert("params", PARAM_KEYS)
    fb = convert("feedback", FEEDBACK_KEYS)
    lines = {f"{s}.{k}": e.line for s in SECTIONS for k, e in merged[s].items()}

    def fail(msg, key):
        raise ConfigError(msg, lines.get(key), source)

    try:
        params = CavityParams(**par)
    except ParameterError as exc:
        bad = next((k for k in par if k in str(exc)), None)
        fail(str(exc), f"params.{bad}" if bad else None)
    except TypeError as exc:
        fail(str(exc), None)

    run.pop("preset", None)
    run.setdefault("name", "experiment")
    feedback = None
    if merged["feedback"]:
        try:
            feedback = Feedback(**fb)
        except ParameterError as exc:
            fail(str(exc), "feedback.low")
    cfg = ExperimentConfig(params=params, feedback=feedback, lines=lines, **run)
    checks = [
        (cfg.equation in EQUATIONS_ALL, f"equation must be one of {EQUATIONS_ALL}", "run.equation"),
        (cfg.scheme in SCHEMES, f"scheme must be one of {SCHEMES}", "run.scheme"),
        (cfg.variant in VARIANTS, f"variant must be one of {VARIANTS}", "run.variant"),
        (cfg.sampling in SAMPLINGS, f"sampling must be one of {SAMPLINGS}", "run.sampling"),
        (cfg.trajectories >= 1, "trajectories must be >= 1", "run.trajectories"),
        (cfg.t_end > 0, "t_end must be positive", "run.t_end"),
        (cfg.record_stride >= 1, "record_stride must be >= 1", "run.record_stride"),
        (cfg.series in ("auto", "all", "mean", "none"), "series must be auto, all, mean or none",
         "run.series"),
        (cfg.histogram_bins >= 1, "histogram_bins must be >= 1", "run.histogram_bins"),
        (cfg.workers >= 1, "workers must be >= 1", "run.workers"),
        (all(t > 0 for t in cfg.histogram_times), "histogram_times must be positive",
         "run.histogram_times"),
        (not (cfg.qnd_blocks and cfg.feedback is not None), "qnd_blocks excludes feedback",
         "run.qnd_blocks"),
        (not (cfg.qnd_blocks and cfg.variant == "zeno" and params.g_s != 0),
         "qnd_blocks needs g_s = 0", "run.qnd_blocks"),
    ]
    for ok, msg, key in checks:
        if not ok:
            fail(msg, key)
    return cfg


def load(path: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return resolve(parse_text(text, source=str(path)), overrides, source=str(path))


def from_preset(name: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return resolve({"run": {"preset": Entry(name, None)}}, overrides, source=f"<preset {name}>")


_FIG3 = dict(kappa1=0.5, kappa2=0.5, kappa_loss=0.0, eta=1.0, phi=0.0, g=0.2, beta=0.2,
             n_atoms=1, n_photons=3)

PRESETS: dict[str, dict[str, dict]] = {
    "empty_cavity": {
        "run": dict(equation="sse", variant="dicke", t_end=20.0, record_stride=100,
                    trajectories=1, series="all"),
        "params": {**_FIG3, "n_atoms": 0, "g": 0.0, "n_photons": 6, "dt": 1e-3},
    },
    "fig3_zeno": {
        "run": dict(equation="nonlinear", scheme="milstein", t_end=2000.0, record_stride=100,
                    trajectories=20, series="all"),
        "params": {**_FIG3, "g_s": 0.001, "dt": 0.01},
    },
    "fig3_rabi": {
        "run": dict(equation="nonlinear", scheme="milstein", t_end=40.0, record_stride=100,
                    trajectories=20, series="all"),
        "params": {**_FIG3, "g_s": 0.05, "dt": 1e-3},
    },
    "jumps_fig4": {
        "run": dict(equation="nonlinear", scheme="milstein", t_end=50000.0, record_stride=20,
                    trajectories=20, series="all", check_invariants=False),
        "params": {**_FIG3, "g_s": 0.001, "dt": 0.02},
    },
    "feedback": {
        "run": dict(equation="nonlinear", scheme="milstein", t_end=400.0, record_stride=100,
                    trajectories=20, series="all"),
        "params": {**_FIG3, "g_s": 0.0, "dt": 0.01},
        "feedback": dict(target=1, low=0.2, high=0.8, g_s_high=0.05, g_s_low=0.0),
    },
    "dicke_fig2": {
        "run": dict(equation="linear", scheme="milstein", sampling="physical", qnd_blocks=True,
                    variant="dicke", atoms="css", cavity="steady", t_end=1250.0,
                    record_stride=25, trajectories=10000, series="none",
                    histogram_times=(25.0, 250.0, 1250.0), histogram_bins=60),
        "params": dict(kappa1=0.2, kappa2=0.8, kappa_loss=0.0, eta=1.0, phi=0.0, g=0.05,
                       beta=1.25, n_atoms=4, n_photons=10, dt=0.05),
    },
    "superposition": {
        "run": dict(equation="sse", variant="shifted", atoms="css", cavity="vacuum",
                    t_end=60.0, record_stride=100, trajectories=1000, series="none"),
        "params": dict(kappa1=1.0, kappa2=0.0, kappa_loss=0.0, eta=1.0, phi=-math.pi / 2,
                       g=0.5, beta=0.5, n_atoms=2, n_photons=11, dt=1e-3, port="reflected",
                       probe_off_time=40.0),
    },
    "counting": {
        "run": dict(equation="counting", variant="dicke", t_end=2000.0, record_stride=100,
                    trajectories=4, series="mean"),
        "params": {**_FIG3, "n_atoms": 0, "g": 0.0, "beta": 1.0, "n_photons": 10, "dt": 1e-2},
    },
    "continuum_limit": {
        "run": dict(equation="discrete", t_end=5.0, record_stride=100, trajectories=1000,
                    series="mean", mu=200.0, atoms="ground"),
        "params": {**_FIG3, "g": 0.05, "g_s": 0.3, "dt": 1e-3},
    },
}
