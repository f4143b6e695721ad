"""Command-line entry point: ``problab <module> <command> [options]``.

Every invocation is turned into an :class:`ExperimentConfig`, dispatched by
:func:`run_experiment`, and written as a CSV whose ``#`` header lines embed
the seed and the full config.  The data columns depend only on the config, so
re-running the embedded config reproduces them byte for byte.  Provenance with
timestamps goes into a JSON sidecar.

Exit codes: 0 ok, 1 error, 2 a conjecture violation was found (witness
written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable

import networkx as nx
import numpy as np

from . import __version__
from . import conjectures_exact as cx
from . import epidemic as ep
from . import mirrors_continuum as mc
from . import mirrors_lattice as ml
from . import oriented as orn
from . import saw
from .randstat import derive_stream, estimate_proportion, run_many

FORMAT_VERSION = "problab-csv/1"
SEED_ENV = "PROBLAB_SEED"
EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

log = logging.getLogger("problab")


class ConfigError(ValueError):
    pass


class GraphFormatError(ValueError):
    pass


# --- graph corpora -----------------------------------------------------------

def parse_graph_line(line: str, lineno: int = 0) -> cx.SimpleGraph:
    text = line.strip()
    if text.startswith(">>graph6<<"):
        text = text[len(">>graph6<<"):]
    try:
        if text.startswith(":") or text.startswith(">>sparse6<<"):
            g = nx.from_sparse6_bytes(text.encode())
            loops = list(nx.selfloop_edges(g))
            if loops:
                raise GraphFormatError(f"line {lineno}: loop at vertex {loops[0][0]}")
            if g.is_multigraph() and any(g.number_of_edges(u, v) > 1 for u, v in g.edges()):
                u, v = next((u, v) for u, v in g.edges() if g.number_of_edges(u, v) > 1)
                raise GraphFormatError(f"line {lineno}: multiple edge {u}-{v}")
            g = nx.Graph(g)
        else:
            g = nx.from_graph6_bytes(text.encode())
    except GraphFormatError:
        raise
    except Exception as exc:
        raise GraphFormatError(f"line {lineno}: cannot parse {text!r}: {exc}") from None
    return cx.SimpleGraph.from_networkx(g, name=f"line{lineno}")


def ingest_graphs(path) -> list[cx.SimpleGraph]:
    """One graph per non-blank line (graph6, or sparse6 with a leading ':')."""
    graphs = []
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            graphs.append(parse_graph_line(line, k))
    return graphs


def write_graphs(graphs, path) -> None:
    Path(path).write_text("".join(g.graph6() + "\n" for g in graphs))


# --- config and records ------------------------------------------------------------

# accepted parameters and defaults per (module, command)
COMMANDS: dict[tuple[str, str], dict] = {
    ("saw", "count"): {"kind": "square", "n": 12},
    ("saw", "estimate-kappa"): {"kind": "hex", "n": 20},
    ("saw", "sample"): {"kind": "square", "n": 20, "method": "auto", "exponent": 0.75},
    ("mirrors", "ehrenfest"): {"p": 1.0, "L_grid": [50, 100, 200], "swap": False},
    ("mirrors", "manhattan"): {"q": 0.5, "L_grid": [50, 100, 200], "heading": "N"},
    ("needles", "escape"): {"epsilon": 0.5, "law": "uniform", "R": 50.0, "budget": 10000, "angles": 16},
    ("needles", "crossing"): {"eps_grid": [1.0, 1.5, 2.0, 2.5, 3.0], "law": "uniform", "side": 20.0},
    ("needles", "diffusivity"): {"epsilon": 0.5, "law": "uniform", "R": 30.0, "budget": 100000,
                                 "t_grid": [5.0, 10.0, 20.0, 40.0]},
    ("bunkbed", "check"): {"graphs": None, "max_vertices": 4, "p_grid": "1/10,2/10,3/10,4/10,5/10,6/10,7/10,8/10,9/10",
                           "conditional": False, "witness_dir": "."},
    ("forest", "check"): {"graphs": None, "max_vertices": 6, "cls": "usf", "witness_dir": "."},
    ("oriented", "theta"): {"p": 0.5, "L_grid": [50, 100, 200], "enhance": 0.0},
    ("epidemic", "run"): {"model": "delayed", "d": 2, "alpha": 1.0, "box": 15.0, "dt": 0.01, "n_star": 500,
                          "margin": 1.0, "diffusivity": 1.0, "contact_bridge": True},
    ("epidemic", "scan"): {"model": "delayed", "d": 2, "alpha_grid": [1.0, 2.0, 4.0, 8.0, 16.0], "box": 15.0,
                           "dt": 0.01, "n_star": 500, "margin": 1.0, "diffusivity": 1.0, "coupled": False,
                           "contact_bridge": True},
    ("selftest", "run"): {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    module: str
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    trials: int = 1000
    workers: int = 1
    output: str | None = None
    version: str = FORMAT_VERSION

    def __post_init__(self):
        errors = []
        allowed = COMMANDS.get((self.module, self.command))
        if allowed is None:
            errors.append(f"module/command: unknown pair {self.module!r}/{self.command!r}")
        else:
            for k in self.params:
                if k not in allowed:
                    errors.append(f"params.{k}: unknown parameter for {self.module} {self.command}")
        if not isinstance(self.seed, int) or self.seed < 0:
            errors.append(f"seed: must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            errors.append(f"trials: must be a positive integer, got {self.trials!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            errors.append(f"workers: must be a positive integer, got {self.workers!r}")
        if self.version != FORMAT_VERSION:
            errors.append(f"version: expected {FORMAT_VERSION!r}, got {self.version!r}")
        if errors:
            raise ConfigError("; ".join(errors))

    def param(self, name: str):
        return self.params.get(name, COMMANDS[(self.module, self.command)][name])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("; ".join(f"{k}: unknown field" for k in unknown))
        missing = [k for k in ("module", "command") if k not in data]
        if missing:
            raise ConfigError("; ".join(f"{k}: required" for k in missing))
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class ResultRecord:
    config: ExperimentConfig
    columns: list[str]
    rows: list[list]
    exit_code: int = EXIT_OK
    notes: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        """Header comments (format, seed, config) followed by the data columns."""
        buf = io.StringIO()
        buf.write(f"# format: {FORMAT_VERSION}\n")
        buf.write(f"# seed: {self.config.seed}\n")
        buf.write(f"# config: {self.config.to_json()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows([_cell(v) for v in r] for r in self.rows)
        return buf.getvalue()

    def data_text(self) -> str:
        return "".join(line + "\n" for line in self.csv_text().splitlines() if not line.startswith("#"))

    def json_payload(self) -> dict:
        return {"config": self.config.to_dict(), "columns": self.columns, "rows": self.rows,
                "exit_code": self.exit_code, "notes": self.notes, "provenance": self.provenance}


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- dispatch -------------------------------------------------------------------------

def _floats(v) -> list[float]:
    if isinstance(v, str):
        return [float(Fraction(x)) for x in v.split(",") if x]
    return [float(x) for x in v]


def _ints(v) -> list[int]:
    if isinstance(v, str):
        return [int(x) for x in v.split(",") if x]
    return [int(x) for x in v]


def _fractions(v) -> list[Fraction]:
    if isinstance(v, str):
        return [Fraction(x) for x in v.split(",") if x]
    return [Fraction(x) for x in v]


def _graphs(cfg: ExperimentConfig) -> list[cx.SimpleGraph]:
    path = cfg.param("graphs")
    if path:
        return ingest_graphs(path)
    return cx.connected_graphs(int(cfg.param("max_vertices")), min_vertices=2)


def _saw_count(cfg):
    kind, n = cfg.param("kind"), int(cfg.param("n"))
    counts = saw.saw_counts(kind, n, workers=cfg.workers)
    return ["kind", "n", "sigma_n"], [[kind, k, c] for k, c in enumerate(counts)], EXIT_OK


def _saw_estimate(cfg):
    kind, n = cfg.param("kind"), int(cfg.param("n"))
    counts = saw.saw_counts(kind, n, workers=cfg.workers)
    est = saw.connective_estimates([saw.SawCount(kind, saw.Site(0, 0), k, counts[k]) for k in range(1, n + 1)])
    rows = [[kind, k, counts[k], r] for k, r in zip(est.ns, est.roots)]
    notes = [f"kappa={est.kappa_used} A={est.amplitude} gamma={est.gamma} fekete_ok={est.fekete_ok}"]
    return ["kind", "n", "sigma_n", "root"], rows, EXIT_OK, notes


def _saw_sample(cfg):
    kind, n = cfg.param("kind"), int(cfg.param("n"))
    walks = saw.sample_walks(kind, n, cfg.trials, derive_stream(cfg.seed, 1), cfg.param("method"),
                             workers=cfg.workers)
    rows = saw.export_rescaled_walks(walks, exponent=float(cfg.param("exponent")))
    return ["walk", "n", "step", "x", "y"], [list(r) for r in rows], EXIT_OK


def _mirrors_theta(cfg):
    model = cfg.command
    p = float(cfg.param("p" if model == "ehrenfest" else "q"))
    rows = []
    for L in _ints(cfg.param("L_grid")):
        stream = derive_stream(cfg.seed, 2)
        if model == "ehrenfest":
            e = ml.estimate_theta_ehrenfest(p, L, cfg.trials, stream, swap=bool(cfg.param("swap")),
                                            workers=cfg.workers)
        else:
            e = ml.estimate_theta_manhattan(p, L, cfg.trials, stream, heading=ml.Heading[cfg.param("heading")],
                                            workers=cfg.workers)
        rows.append([model, p, L, e.point, e.lower, e.upper, e.trials, cfg.seed])
    return ["model", "density", "L", "estimate", "lo", "hi", "trials", "seed"], rows, EXIT_OK


def _needles_escape(cfg):
    law = mc.parse_law(cfg.param("law"))
    eps, R, budget = float(cfg.param("epsilon")), float(cfg.param("R")), int(cfg.param("budget"))
    k = int(cfg.param("angles"))
    alphas = np.arange(k) * (2 * math.pi / k)
    root = derive_stream(cfg.seed, 3)

    def one(i):
        f = mc.generate_field(root.child(i), R + eps, eps, law)
        return f.resamples, mc.escape_spectrum(f, alphas, R, budget)

    rows = []
    for i, (rej, sp) in enumerate(run_many(one, range(cfg.trials), cfg.workers)):
        for a, o, r, l in zip(sp.alphas, sp.outcomes, sp.reflections, sp.lengths):
            rows.append([i, float(a), o, int(r), float(l), rej, eps, law.describe(), R, budget])
    return ["field", "alpha", "outcome", "reflections", "length", "resamples", "epsilon", "law", "R",
            "budget"], rows, EXIT_OK


def _needles_crossing(cfg):
    law = mc.parse_law(cfg.param("law"))
    eps = _floats(cfg.param("eps_grid"))
    side = float(cfg.param("side"))
    ind = mc.crossing_indicators(eps, law, side, cfg.trials, derive_stream(cfg.seed, 4), cfg.workers)
    rows = []
    for k, e in enumerate(eps):
        est = estimate_proportion(int(ind[:, k].sum()), cfg.trials)
        rows.append([e, law.describe(), side, est.point, est.lower, est.upper, est.trials, cfg.seed])
    return ["epsilon", "law", "side", "estimate", "lo", "hi", "trials", "seed"], rows, EXIT_OK


def _needles_diffusivity(cfg):
    law = mc.parse_law(cfg.param("law"))
    eps, R, budget = float(cfg.param("epsilon")), float(cfg.param("R")), int(cfg.param("budget"))
    root = derive_stream(cfg.seed, 5)

    def one(i):
        s = root.child(i)
        f = mc.generate_field(s, R + eps, eps, law)
        alpha = float(s.generator.uniform(0, 2 * math.pi))
        return mc.trace_continuum(f, alpha, R, budget)

    traces = run_many(one, range(cfg.trials), cfg.workers)
    fit = mc.estimate_diffusivity(traces, _floats(cfg.param("t_grid")))
    rows = [[r["t"], r["var"], r["var_over_t"], r["traces"]] for r in fit.rows()]
    notes = [f"sigma2={fit.sigma2} intercept={fit.intercept} r2={fit.r2} exponent={fit.exponent} "
             f"ballistic={fit.ballistic}"]
    return ["t", "var", "var_over_t", "traces"], rows, EXIT_OK, notes


def _bunkbed_check(cfg):
    grid = _fractions(cfg.param("p_grid"))
    rows, code, notes = [], EXIT_OK, []
    for g in _graphs(cfg):
        reports = ([cx.bunkbed_check_conditional(g, T, grid) for T in cx.all_vertical_subsets(g)]
                   if cfg.param("conditional") else [cx.bunkbed_check(g, grid)])
        for rep in reports:
            u, v, p, *_ = rep.witness if rep.witness else (None, None, None)
            T = "" if rep.conditional_on is None else " ".join(map(str, rep.conditional_on))
            rows.append([g.graph6(), T, str(rep.min_gap), u, v, str(p), rep.checked])
            if not rep.passed:
                code = EXIT_VIOLATION
                path = Path(cfg.param("witness_dir")) / f"bunkbed_witness_{len(rows)}.txt"
                cx.write_witness(path, rep)
                notes.append(f"VIOLATION written to {path}")
    return ["graph6", "vertical_open", "min_gap", "u", "v", "p", "checked"], rows, code, notes


def _forest_check(cfg):
    cls = cfg.param("cls")
    if cls not in cx.CLASSES:
        raise ConfigError(f"params.cls: expected one of {sorted(cx.CLASSES)}")
    rows, code, notes = [], EXIT_OK, []
    for g in _graphs(cfg):
        rep = cx.association_check(g, cls)
        rows.append([g.graph6(), cls, "" if rep.max_excess is None else str(rep.max_excess), rep.pairs])
        if not rep.passed:
            code = EXIT_VIOLATION
            path = Path(cfg.param("witness_dir")) / f"{cls}_witness_{len(rows)}.txt"
            cx.write_witness(path, rep)
            notes.append(f"VIOLATION written to {path}")
    return ["graph6", "class", "max_excess", "pairs"], rows, code, notes


def _oriented_theta(cfg):
    p, enh = float(cfg.param("p")), float(cfg.param("enhance"))
    rows = []
    for L in _ints(cfg.param("L_grid")):
        e = orn.estimate_theta_oriented(p, L, cfg.trials, derive_stream(cfg.seed, 6), enh, cfg.workers)
        rows.append([p, L, e.point, e.lower, e.upper, e.trials, cfg.seed])
    return ["p", "L", "estimate", "lo", "hi", "trials", "seed"], rows, EXIT_OK


def _epi_config(cfg, alpha) -> ep.EpidemicConfig:
    return ep.EpidemicConfig(d=int(cfg.param("d")), alpha=float(alpha), model=cfg.param("model"),
                             box=float(cfg.param("box")), dt=float(cfg.param("dt")),
                             n_star=int(cfg.param("n_star")), margin=float(cfg.param("margin")),
                             diffusivity=float(cfg.param("diffusivity")),
                             contact_bridge=bool(cfg.param("contact_bridge")))


def _epidemic_run(cfg):
    out = ep.run(_epi_config(cfg, cfg.param("alpha")), derive_stream(cfg.seed, 7))
    rows = [[t, ev, i, *(list(p) + [""] * (2 - len(p)))] for t, ev, i, p in out.events()]
    notes = [f"status={out.status} reason={out.reason} total_infected={out.total_infected} steps={out.steps}"]
    return ["time", "event", "particle", "x", "y"], rows, EXIT_OK, notes


def _epidemic_scan(cfg):
    curve = ep.scan_alpha(_epi_config(cfg, 1.0), _floats(cfg.param("alpha_grid")), cfg.trials,
                          derive_stream(cfg.seed, 8), coupled=bool(cfg.param("coupled")), workers=cfg.workers)
    rows = [[a, e.point, e.lower, e.upper, e.trials, cfg.seed] for a, e in zip(curve.alphas, curve.estimates)]
    return ["alpha", "estimate", "lo", "hi", "trials", "seed"], rows, EXIT_OK, [f"crossover={curve.crossover}"]


def _selftest(cfg):
    """Small built-in checks against brute force; useful after installation."""
    rows = []

    def check(name, ok):
        rows.append([name, "pass" if ok else "FAIL"])

    check("saw square n<=6", saw.saw_counts("square", 6) == [1, 4, 12, 36, 100, 284, 780])
    check("saw hex n<=6", saw.saw_counts("hex", 6) == [1, 3, 6, 12, 24, 48, 90])
    k3 = cx.complete_graph(3)
    st = cx.enumerate_forests(k3)
    check("forests K3", st.total == 7 and st.prob(0) == Fraction(3, 7))
    check("bunkbed K2", cx.bunkbed_probabilities(cx.complete_graph(2), 0, 1, Fraction(1, 2))
          == (Fraction(9, 16), Fraction(7, 16)))
    f = mc.field_from_needles([mc.Needle(0.0, 2.0, 0.0, 1.0)])
    hit = mc.first_hit(f, (0.0, 0.0), (0.0, 1.0))
    check("needle first hit", hit is not None and abs(hit.distance - 2.0) < 1e-12)
    e = orn.estimate_theta_oriented(0.0, 10, 10, derive_stream(cfg.seed, 9))
    check("oriented p=0", e.point == 1.0)
    code = EXIT_OK if all(r[1] == "pass" for r in rows) else EXIT_ERROR
    return ["check", "result"], rows, code


DISPATCH: dict[tuple[str, str], Callable] = {
    ("saw", "count"): _saw_count,
    ("saw", "estimate-kappa"): _saw_estimate,
    ("saw", "sample"): _saw_sample,
    ("mirrors", "ehrenfest"): _mirrors_theta,
    ("mirrors", "manhattan"): _mirrors_theta,
    ("needles", "escape"): _needles_escape,
    ("needles", "crossing"): _needles_crossing,
    ("needles", "diffusivity"): _needles_diffusivity,
    ("bunkbed", "check"): _bunkbed_check,
    ("forest", "check"): _forest_check,
    ("oriented", "theta"): _oriented_theta,
    ("epidemic", "run"): _epidemic_run,
    ("epidemic", "scan"): _epidemic_scan,
    ("selftest", "run"): _selftest,
}


def run_experiment(config: ExperimentConfig) -> ResultRecord:
    """Run ``config`` and, if it names an output path, write CSV plus JSON sidecar."""
    t0 = time.perf_counter()
    out = DISPATCH[(config.module, config.command)](config)
    columns, rows, code = out[:3]
    notes = list(out[3]) if len(out) > 3 else []
    rec = ResultRecord(config, list(columns), [list(r) for r in rows], code, notes)
    rec.provenance = {"seed": config.seed, "code_version": __version__,
                      "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                      "runtime_s": round(time.perf_counter() - t0, 3)}
    if config.output:
        atomic_write(config.output, rec.csv_text())
        atomic_write(str(config.output) + ".json", json.dumps(rec.json_payload(), default=str, indent=1))
    return rec


# --- argparse -----------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV output path (stdout if omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="problab", description="Exact enumeration and Monte Carlo "
                                 "experiments for walks, mirrors, percolation and epidemics.")
    ap.add_argument("-v", "--verbose", action="store_true")
    mods = ap.add_subparsers(dest="module", required=True)

    s = mods.add_parser("saw", help="self-avoiding walks").add_subparsers(dest="command", required=True)
    for name in ("count", "estimate-kappa", "sample"):
        c = s.add_parser(name)
        c.add_argument("--lattice", dest="kind", choices=["square", "hex"])
        c.add_argument("--n", type=int)
        if name == "sample":
            c.add_argument("--method", choices=["auto", "exact", "pivot"])
            c.add_argument("--exponent", type=float)
        _add_common(c)

    m = mods.add_parser("mirrors", help="lattice mirror models").add_subparsers(dest="command", required=True)
    c = m.add_parser("ehrenfest")
    c.add_argument("--p", type=float)
    c.add_argument("--L-grid", "--L", dest="L_grid")
    c.add_argument("--swap", action="store_true", default=None, help="swap the NE/NW naming")
    _add_common(c)
    c = m.add_parser("manhattan")
    c.add_argument("--q", type=float)
    c.add_argument("--L-grid", "--L", dest="L_grid")
    c.add_argument("--heading", choices=["N", "E", "S", "W"])
    _add_common(c)

    nd = mods.add_parser("needles", help="Poisson needle mirrors").add_subparsers(dest="command", required=True)
    c = nd.add_parser("escape")
    c.add_argument("--epsilon", type=float)
    c.add_argument("--law")
    c.add_argument("--R", type=float)
    c.add_argument("--budget", type=int)
    c.add_argument("--angles", type=int)
    _add_common(c)
    c = nd.add_parser("crossing")
    c.add_argument("--grid", dest="eps_grid")
    c.add_argument("--law")
    c.add_argument("--side", type=float)
    _add_common(c)
    c = nd.add_parser("diffusivity")
    c.add_argument("--epsilon", type=float)
    c.add_argument("--law")
    c.add_argument("--R", type=float)
    c.add_argument("--budget", type=int)
    c.add_argument("--t-grid", dest="t_grid")
    _add_common(c)

    b = mods.add_parser("bunkbed", help="exact bunkbed checks").add_subparsers(dest="command", required=True)
    c = b.add_parser("check")
    c.add_argument("--graph", dest="graphs", help="graph6 file (default: all connected graphs)")
    c.add_argument("--max-vertices", dest="max_vertices", type=int)
    c.add_argument("--p-grid", dest="p_grid")
    c.add_argument("--conditional", action="store_true", default=None)
    c.add_argument("--witness-dir", dest="witness_dir")
    _add_common(c)

    f = mods.add_parser("forest", help="negative association checks").add_subparsers(dest="command", required=True)
    c = f.add_parser("check")
    c.add_argument("--class", dest="cls", choices=sorted(cx.CLASSES))
    c.add_argument("--graphs")
    c.add_argument("--max-vertices", dest="max_vertices", type=int)
    c.add_argument("--witness-dir", dest="witness_dir")
    _add_common(c)

    o = mods.add_parser("oriented", help="randomly oriented lattice").add_subparsers(dest="command", required=True)
    c = o.add_parser("theta")
    c.add_argument("--p", type=float)
    c.add_argument("--L-grid", dest="L_grid")
    c.add_argument("--enhance", type=float)
    _add_common(c)

    e = mods.add_parser("epidemic", help="spatial S/I/R epidemics").add_subparsers(dest="command", required=True)
    for name in ("run", "scan"):
        c = e.add_parser(name)
        c.add_argument("--model", choices=[ep.DIFFUSION, ep.DELAYED])
        c.add_argument("--d", type=int, choices=[1, 2])
        if name == "run":
            c.add_argument("--alpha", type=float)
        else:
            c.add_argument("--alpha-grid", dest="alpha_grid")
            c.add_argument("--coupled", action="store_true", default=None)
        c.add_argument("--box", type=float)
        c.add_argument("--dt", type=float)
        c.add_argument("--n-star", dest="n_star", type=int)
        c.add_argument("--margin", type=float)
        c.add_argument("--diffusivity", type=float)
        c.add_argument("--no-bridge", dest="contact_bridge", action="store_false", default=None,
                       help="check contacts at step ends only (plain Euler scheme)")
        _add_common(c)

    st = mods.add_parser("selftest", help="quick built-in checks")
    st.set_defaults(command="run")
    _add_common(st)

    r = mods.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    return ap


_COMMON = {"seed", "trials", "workers", "out", "module", "command", "verbose", "config"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.module == "run":
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
        if args.out:
            cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "output": args.out})
        return cfg
    params = {k: v for k, v in vars(args).items() if k not in _COMMON and v is not None}
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get(SEED_ENV, "0"))
    kw = {"module": args.module, "command": args.command, "params": params, "seed": seed,
          "workers": args.workers, "output": args.out}
    if args.trials is not None:
        kw["trials"] = args.trials
    return ExperimentConfig(**kw)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for violations here
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        rec = run_experiment(cfg)
    except (ConfigError, GraphFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not cfg.output:
        sys.stdout.write(rec.csv_text())
    for note in rec.notes:
        print(note, file=sys.stderr)
    return rec.exit_code


if __name__ == "__main__":
    sys.exit(main())
