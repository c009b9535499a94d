"""Run configured experiments and write CSV output."""

from __future__ import annotations

import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytic
from ._backend import BACKEND
from .config import ExperimentConfig
from .params import CavityParams
from .sme import (Feedback, NumericalAbort, TrajectoryRecord, initial_state, simulate)

OUTPUT_ENV = "CAVSME_OUTPUT_DIR"
TOP_FOCK_LIMIT = 1e-6

SERIES_COLUMNS = ("t", "dy", "y", "re_a", "im_a", "purity", "sys_purity", "weight", "g_s",
                  "top_fock", "min_eig", "herm_defect")


def feedback_toggle(populations, feedback: Feedback, g_s: float) -> float:
    """Next ``g_s`` under the bang-bang law with hysteresis."""
    p = float(np.asarray(populations)[feedback.target])
    if p < feedback.low:
        return feedback.g_s_high
    if p > feedback.high:
        return feedback.g_s_low
    return g_s


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    total: float

    @property
    def empty(self) -> bool:
        return self.total == 0


def histogram(values, bins: int, range: tuple[float, float] | None = None,
              weights=None) -> Histogram:
    """Counts and a density normalised to unit integral over ``range``.

    An empty input gives zero counts, zero density and ``total == 0``.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = np.asarray(values, dtype=float)
    if range is None:
        range = (float(values.min()), float(values.max())) if values.size else (0.0, 1.0)
        if range[0] == range[1]:
            range = (range[0] - 0.5, range[1] + 0.5)
    counts, edges = np.histogram(values, bins=bins, range=range, weights=weights)
    total = float(counts.sum())
    width = np.diff(edges)
    density = counts / (total * width) if total > 0 else np.zeros_like(width)
    return Histogram(edges=edges, counts=counts.astype(float), density=density, total=total)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header: list[str], rows, echo: list[str]) -> None:
    """CSV with ``#`` comment lines echoing the configuration, then a header.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(path, header, rows, echo)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_rows(fh, header, rows, echo)


def _write_rows(fh, header, rows, echo) -> None:
    for line in echo:
        fh.write(f"# {line}\n")
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a file written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.array([[float(x) for x in ln.strip().split(",")] for ln in lines[1:]])
    return header, data.reshape(-1, len(header))


def make_state(cfg: ExperimentConfig):
    return initial_state(cfg.params, atoms=cfg.atoms, cavity=cfg.cavity, n=cfg.atom_n,
                         m=cfg.cavity_m, xi=cfg.cavity_xi, variant=cfg.variant)


def _table(cfg: ExperimentConfig):
    from .oracle import UTable
    return UTable.build(cfg.mu, cfg.params.phi, exact=True)


def run_trajectory(cfg: ExperimentConfig, index: int, table=None) -> TrajectoryRecord:
    """Trajectory ``index`` of the configured ensemble."""
    state = make_state(cfg)
    if cfg.equation == "discrete":
        from .oracle import run_discrete
        table = table if table is not None else _table(cfg)
        r = run_discrete(cfg.params, table, cfg.t_end, seed=cfg.seed, index=index,
                         record_stride=cfg.record_stride, state=state, variant=cfg.variant)
        z = np.zeros_like(r.t)
        return TrajectoryRecord(t=r.t, dy=z, populations=r.populations, field=r.field,
                                purity=z + np.nan, sys_purity=z + np.nan, weight=z + 1.0,
                                top_fock=z, g_s=z + cfg.params.g_s, herm_defect=z, min_eig=z,
                                final_state=r.final_state, equation="discrete",
                                scheme="exact", seed=cfg.seed, index=index)
    try:
        return simulate(cfg.params, cfg.equation, cfg.scheme, cfg.t_end, cfg.seed,
                        cfg.record_stride, index=index, variant=cfg.variant, state=state,
                        sampling=cfg.sampling, qnd_blocks=cfg.qnd_blocks,
                        feedback=cfg.feedback, check_invariants=cfg.check_invariants)
    except NumericalAbort as exc:
        exc.trajectory = index
        raise


def run_ensemble(cfg: ExperimentConfig, workers: int | None = None,
                 progress=None) -> list[TrajectoryRecord]:
    """All trajectories, sorted by index.  ``numba`` kernels release the GIL."""
    workers = workers or cfg.workers
    table = _table(cfg) if cfg.equation == "discrete" else None
    idx = range(cfg.trajectories)

    def one(i):
        rec = run_trajectory(cfg, i, table)
        if progress is not None:
            progress(i)
        return rec

    if workers == 1:
        recs = [one(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(one, idx))
    return sorted(recs, key=lambda r: r.index)


def record_index(rec: TrajectoryRecord, t: float) -> int:
    i = int(np.argmin(np.abs(rec.t - t)))
    if not math.isclose(rec.t[i], t, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"time {t} is not on the record grid (spacing {rec.t[1] - rec.t[0]})")
    return i


def dicke_mixture(cfg: ExperimentConfig, t: float) -> analytic.OutcomeDensity | None:
    """Outcome density of the record when it is known in closed form.

    Requires Dicke-conserving dynamics started from the detector-off steady
    state, so that each component has a constant rate.
    """
    p = cfg.params
    if not (p.g_s == 0 or cfg.variant != "zeno") or cfg.cavity != "steady":
        return None
    if cfg.equation not in ("linear", "nonlinear", "sse") or p.probe_off_time is not None:
        return None
    occ = np.arange(p.n_atoms + 1, dtype=float)
    if cfg.variant == "shifted":
        occ -= 0.5 * p.n_atoms
    r = analytic.signal_rate(analytic.xi_n_steady(occ, p), p)
    if cfg.atoms == "css":
        c0 = analytic.binomial_weights(p.n_atoms)
    else:
        c0 = np.zeros(p.n_atoms + 1)
        c0[0 if cfg.atoms == "ground" else cfg.atom_n] = 1.0
    return analytic.OutcomeDensity(t, c0, r)


@dataclass
class RunResult:
    files: list[str]
    summary: dict
    records: list[TrajectoryRecord] = field(repr=False, default_factory=list)


def _series_mode(cfg: ExperimentConfig) -> str:
    if cfg.series != "auto":
        return cfg.series
    return "all" if cfg.trajectories <= 20 else "mean"


def output_directory(cfg: ExperimentConfig, override: str | None = None) -> str:
    return override or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "."


def run(cfg: ExperimentConfig, output_dir: str | None = None, workers: int | None = None,
        log=None) -> RunResult:
    """Run an experiment and write its CSV files.

    Raises ``NumericalAbort`` on a failed trajectory and ``OSError`` when the
    output cannot be written.
    """
    log = log or (lambda msg: print(msg, file=sys.stderr))
    outdir = output_directory(cfg, output_dir)
    os.makedirs(outdir, exist_ok=True)
    t0 = time.time()
    n_done = [0]
    every = max(1, cfg.trajectories // 10)

    def progress(i):
        n_done[0] += 1
        if n_done[0] % every == 0:
            log(f"[{cfg.name}] {n_done[0]}/{cfg.trajectories} trajectories "
                f"({time.time() - t0:.1f} s)")

    recs = run_ensemble(cfg, workers, progress)
    echo = cfg.echo() + [f"backend = {BACKEND}"]
    files = []
    nat = cfg.params.n_atoms + 1
    pcols = [f"p{n}" for n in range(nat)]

    mode = _series_mode(cfg)
    if mode != "none":
        path = os.path.join(outdir, f"{cfg.name}_series.csv")
        if mode == "all":
            header = ["traj"] + list(SERIES_COLUMNS[:3]) + pcols + list(SERIES_COLUMNS[3:])
            rows = []
            for r in recs:
                cols = [r.column(c) for c in SERIES_COLUMNS]
                for i in range(r.t.size):
                    rows.append([r.index] + [c[i] for c in cols[:3]] + list(r.populations[i])
                                + [c[i] for c in cols[3:]])
        else:
            header = ["t"] + pcols + ["p_sem_" + c[1:] for c in pcols] + ["re_a", "im_a",
                                                                         "weight", "n"]
            pops = np.stack([r.populations for r in recs])
            fld = np.stack([r.field for r in recs])
            wts = np.stack([r.weight for r in recs])
            sem = pops.std(axis=0, ddof=1) / math.sqrt(len(recs)) if len(recs) > 1 \
                else np.zeros_like(pops[0])
            mp = pops.mean(axis=0)
            rows = [[recs[0].t[i]] + list(mp[i]) + list(sem[i])
                    + [fld[:, i].real.mean(), fld[:, i].imag.mean(), wts[:, i].mean(), len(recs)]
                    for i in range(recs[0].t.size)]
        write_csv(path, header, rows, echo)
        files.append(path)

    path = os.path.join(outdir, f"{cfg.name}_final.csv")
    header = ["traj", "y", "weight"] + pcols + ["purity", "sys_purity", "clicks",
                                               "positivity_violations", "min_eig",
                                               "max_herm_defect", "max_top_fock"]
    rows = [[r.index, r.y[-1], r.weight[-1]] + list(r.populations[-1])
            + [r.purity[-1], r.sys_purity[-1], r.clicks, r.positivity_violations,
               float(np.min(r.min_eig)), float(np.max(r.herm_defect)), float(np.max(r.top_fock))]
            for r in recs]
    write_csv(path, header, rows, echo)
    files.append(path)

    hist_info = []
    for t in cfg.histogram_times:
        idx = [record_index(r, t) for r in recs]
        ys = np.array([r.y[i] for r, i in zip(recs, idx)])
        w = None
        if cfg.equation == "linear" and cfg.sampling == "reference":
            w = np.array([r.weight[i] for r, i in zip(recs, idx)])
        model = dicke_mixture(cfg, t)
        if model is not None:
            s = math.sqrt(t)
            lo, hi = model.means.min() - 4 * s, model.means.max() + 4 * s
        else:
            lo, hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        h = histogram(ys, cfg.histogram_bins, (lo, hi), weights=w)
        header = ["bin_lo", "bin_hi", "count", "density"]
        mcol = []
        if model is not None:
            header.append("model_density")
            mass = np.diff(model.cdf(h.edges)) / np.diff(h.edges)
            mcol = list(mass)
        rows = [[h.edges[i], h.edges[i + 1], h.counts[i], h.density[i]]
                + ([mcol[i]] if mcol else []) for i in range(h.counts.size)]
        path = os.path.join(outdir, f"{cfg.name}_hist_t{t:g}.csv")
        write_csv(path, header, rows, echo + [f"histogram_time = {t!r}"])
        files.append(path)
        hist_info.append({"t": t, "samples": int(ys.size), "in_range": h.total})

    top = max(float(np.max(r.top_fock)) for r in recs)
    if top > TOP_FOCK_LIMIT:
        log(f"[{cfg.name}] warning: top Fock population reached {top:.2e}; "
            f"increase n_photons")
    viol = sum(r.positivity_violations for r in recs)
    if viol:
        log(f"[{cfg.name}] warning: {viol} recorded states below the positivity tolerance")
    validity = {k: {"value": v, "ok": ok} for k, (v, ok) in cfg.params.validity_report().items()}
    summary = {
        "name": cfg.name,
        "equation": cfg.equation,
        "trajectories": len(recs),
        "steps": cfg.n_steps(),
        "backend": BACKEND,
        "wall_time_s": round(time.time() - t0, 3),
        "mean_final_populations": np.mean([r.populations[-1] for r in recs], axis=0).tolist(),
        "positivity_violations": int(viol),
        "max_top_fock": top,
        "validity": validity,
        "histograms": hist_info,
        "files": files,
    }
    return RunResult(files=files, summary=summary, records=recs)


def summary_json(result: RunResult) -> str:
    return json.dumps(result.summary, indent=2, sort_keys=True)
