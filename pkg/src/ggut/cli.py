"""Command-line drivers: loop runs, SCI studies, QSCI runs and gnuplot scripts.

Configuration is a JSON file merged over built-in defaults, then ``--set
section.key=value`` overrides. Every run writes into ``<output>/<command>-<hash>``
where the hash is taken over the resolved configuration, and every artifact
carries that configuration (including the seed) in its header.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basisrot import RotatedSolver, rotate, write_hybridization_csv
from .cutting import write_weights_csv
from .errors import ConfigError, EmptyBasis, NonConvergence
from .fock import FciSolver
from .model import HubbardParams, LatticeSpec, build_generic_aim, discretize_semicircle
from .qsci import HarvestConfig, QsciSolver, write_basis_dump
from .sci import (
    SciErrorReport, SciSolver, count_for_weight, cumulative_weight, error_metrics, fit_exponential,
    ground_state_weights, write_report_csv,
)
from .scloop import LoopConfig, loop_step, read_checkpoint, run_loop, update_qp, write_checkpoint
from .spectral import FrequencyGrid, gap_metric, low_frequency_peak, qp_dos

log = logging.getLogger(__name__)

WORKERS_ENV = "GGUT_WORKERS"
EXIT_OK = 0
EXIT_NONCONVERGENCE = 2
EXIT_EMPTY_BASIS = 3
EXIT_CONFIG = 4

DEFAULTS = {
    "model": {"U": [2.0], "mu": None, "T": 0.002},
    "lattice": {"D": 1.0, "n_energy": 400},
    "embedding": {"n_ghosts": [3], "rotation": None},
    "solver": {
        "kind": "fci", "fraction": 0.05, "total_shots": 320_000, "source": "cut",
        "layers": 1, "macro": 4, "micro": 10, "warm_angles": True,
    },
    "loop": {"tol": 1e-6, "mixing": 0.3, "max_iter": 200, "warm_start": None, "eig_clip": 1e-8},
    "frequency": {"lo": -3.0, "hi": 3.0, "step": 0.01, "delta": 0.01},
    "study": {
        "checkpoints": [], "model": "ggut", "fractions": [0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0],
        "sizes": [], "kinds": None, "target": 0.9999,
    },
    "qsci": {"mode": "oneshot", "checkpoint": None},
    "output": "runs",
    "seed": None,
}

SOLVER_KINDS = ("fci", "sci", "qsci")


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``a.b=value`` -> {"a": {"b": value}}; the value is JSON if it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    doc: dict = {parts[-1]: value}
    for p in reversed(parts[:-1]):
        doc = {p: doc}
    return doc


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``data`` mirrors the JSON layout of DEFAULTS."""

    data: dict

    @classmethod
    def load(cls, path=None, overrides=(), **direct) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            data = _merge(data, doc)
        for text in overrides:
            data = _merge(data, parse_override(text))
        for key, value in direct.items():
            if value is not None:
                data = _merge(data, {key: value})
        data["model"]["U"] = [float(u) for u in _as_list(data["model"]["U"])]
        data["embedding"]["n_ghosts"] = [int(n) for n in _as_list(data["embedding"]["n_ghosts"])]
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.data
        if any(u < 0 for u in d["model"]["U"]):
            raise ConfigError("U must be nonnegative")
        if any(n < 1 or n % 2 == 0 for n in d["embedding"]["n_ghosts"]):
            raise ConfigError("n_ghosts must be odd and positive")
        if d["solver"]["kind"] not in SOLVER_KINDS:
            raise ConfigError(f"solver.kind must be one of {SOLVER_KINDS}")
        if d["solver"]["kind"] == "qsci" and d["seed"] is None:
            raise ConfigError("a seed is mandatory for the qsci solver")
        if d["qsci"]["mode"] not in ("oneshot", "loop"):
            raise ConfigError("qsci.mode must be 'oneshot' or 'loop'")
        if d["study"]["model"] not in ("ggut", "aim"):
            raise ConfigError("study.model must be 'ggut' or 'aim'")
        paths = [d["loop"]["warm_start"], d["qsci"]["checkpoint"], *d["study"]["checkpoints"]]
        for p in paths:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")
        try:
            self.lattice, self.harvest_config, self.loop_config, self.frequency_grid
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def seed(self) -> int:
        return int(self.data["seed"] or 0)

    @property
    def lattice(self) -> LatticeSpec:
        lat = self.data["lattice"]
        return LatticeSpec(float(lat["D"]), int(lat["n_energy"]))

    def hubbard(self, u: float) -> HubbardParams:
        m = self.data["model"]
        return HubbardParams(U=u, mu=m["mu"], T=float(m["T"]))

    @property
    def loop_config(self) -> LoopConfig:
        lp = self.data["loop"]
        return LoopConfig(
            tol=float(lp["tol"]), mixing=float(lp["mixing"]), max_iter=int(lp["max_iter"]),
            eig_clip=float(lp["eig_clip"]),
        )

    @property
    def frequency_grid(self) -> FrequencyGrid:
        f = self.data["frequency"]
        return FrequencyGrid.uniform(f["lo"], f["hi"], f["step"], f["delta"])

    @property
    def harvest_config(self) -> HarvestConfig:
        s = self.data["solver"]
        return HarvestConfig(
            total_shots=int(s["total_shots"]), fraction=float(s["fraction"]), source=s["source"],
            layers=int(s["layers"]), macro=int(s["macro"]), micro=int(s["micro"]),
        )

    def rotation(self, n_ghosts: int) -> int:
        kind = self.data["embedding"]["rotation"]
        return n_ghosts if kind is None else int(kind)

    def make_solver(self, n_ghosts: int):
        kind = self.data["solver"]["kind"]
        if kind == "fci":
            return FciSolver(seed=self.seed)
        if kind == "sci":
            inner = SciSolver(fraction=float(self.data["solver"]["fraction"]), seed=self.seed)
            return RotatedSolver(inner, self.rotation(n_ghosts))
        return QsciSolver(
            self.harvest_config, seed=self.seed, kind=self.rotation(n_ghosts),
            warm_start=bool(self.data["solver"]["warm_angles"]),
        )

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def header(self, command: str) -> str:
        return f"ggut {command} seed={self.seed} config={self.canonical()}"

    def run_dir(self, command: str) -> Path:
        path = Path(self.data["output"]) / f"{command}-{self.digest}"
        path.mkdir(parents=True, exist_ok=True)
        return path


# -- artifact writers -----------------------------------------------------------


def write_history_csv(path, history, header: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual_omega", "residual_lambda", "residual_trace", "mixing", "energy", "symmetry_breaking"])
        for s in history:
            writer.writerow([
                s.iteration, f"{s.residual_omega:.12e}", f"{s.residual_lambda:.12e}",
                f"{s.residual_trace:.12e}", f"{s.mixing_alpha:.6f}", f"{s.energy:.12f}", f"{s.symmetry_breaking:.12e}",
            ])


def write_json(path, doc: dict, header: str) -> None:
    Path(path).write_text(json.dumps({"header": header, **doc}, indent=1, sort_keys=True))


def write_table_csv(path, columns: list[str], rows, header: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _cell_name(u: float, n_ghosts: int) -> str:
    return f"U{u:g}_Ng{n_ghosts}"


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _map(fn, items: list) -> list:
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- run-ggut -------------------------------------------------------------------


def _ggut_cell(args) -> int:
    data, u, n_ghosts, out = args
    cfg = RunConfig(data)
    header = cfg.header("run-ggut")
    model, lattice = cfg.hubbard(u), cfg.lattice
    name = _cell_name(u, n_ghosts)
    out = Path(out)
    init = None
    warm = cfg.data["loop"]["warm_start"]
    if warm:
        ck = read_checkpoint(warm)
        if ck.n_ghosts == n_ghosts:
            init = ck.qp
    solver = cfg.make_solver(n_ghosts)
    try:
        result = run_loop(model, lattice, solver, cfg.loop_config, n_ghosts=n_ghosts, init=init)
        status = EXIT_OK
    except NonConvergence as exc:
        result = getattr(exc, "result", None)
        if result is None:
            raise
        log.error("%s: %s", name, exc)
        status = EXIT_NONCONVERGENCE
    write_checkpoint(out / f"{name}_checkpoint.json", result, model, extra={"header": header})
    write_history_csv(out / f"{name}_history.csv", result.history, header)
    curve = qp_dos(result.qp, discretize_semicircle(lattice), cfg.frequency_grid)
    curve.to_csv(out / f"{name}_dos.csv", header)
    write_hybridization_csv(out / f"{name}_hybridization.csv", rotate(result.emb, n_ghosts), header)
    last = result.history[-1]
    write_json(out / f"{name}_summary.json", {
        "U": u, "n_ghosts": n_ghosts, "converged": result.converged, "iterations": result.iterations,
        "residual": last.residual, "energy": last.energy, "A0": gap_metric(curve),
        "weight": float(result.qp.weight),
    }, header)
    return status


def cmd_run_ggut(cfg: RunConfig) -> int:
    out = cfg.run_dir("run-ggut")
    cells = [(cfg.data, u, n, str(out)) for u in cfg.data["model"]["U"] for n in cfg.data["embedding"]["n_ghosts"]]
    statuses = _map(_ggut_cell, cells)
    print(out)
    return max(statuses, default=EXIT_OK)


# -- sci-study ------------------------------------------------------------------


@dataclass
class _Source:
    name: str
    n_ghosts: int
    emb: object
    qp: object = None
    model: HubbardParams | None = None


def _study_sources(cfg: RunConfig) -> list[_Source]:
    study = cfg.data["study"]
    if study["model"] == "aim":
        return [
            _Source(f"aim_{_cell_name(u, n)}", n, build_generic_aim(n, u))
            for u in cfg.data["model"]["U"] for n in cfg.data["embedding"]["n_ghosts"]
        ]
    if not study["checkpoints"]:
        raise ConfigError("sci-study needs study.checkpoints (converged runs)")
    grid = discretize_semicircle(cfg.lattice)
    sources = []
    for path in study["checkpoints"]:
        ck = read_checkpoint(path)
        model = HubbardParams(U=ck.u, mu=ck.mu, T=ck.T)
        _, emb, _, _ = loop_step(ck.qp, model, grid, FciSolver(seed=cfg.seed), cfg.loop_config.eig_clip)
        sources.append(_Source(_cell_name(ck.u, ck.n_ghosts), ck.n_ghosts, emb, ck.qp, model))
    return sources


def _sci_sweep(cfg: RunConfig, src: _Source, out: Path, header: str) -> dict:
    lattice_grid = discretize_semicircle(cfg.lattice)
    freq = cfg.frequency_grid
    clip = cfg.loop_config.eig_clip
    kind = cfg.rotation(src.n_ghosts)
    has_dos = src.qp is not None

    ref_solver = RotatedSolver(FciSolver(seed=cfg.seed), kind)
    ref = ref_solver.solve(src.emb)
    ref_weights = np.abs(ref.amplitudes) ** 2
    ref_dos = qp_dos(update_qp(ref, src.emb, clip=clip), lattice_grid, freq) if has_dos else None
    if has_dos:
        ref_dos.to_csv(out / f"{src.name}_dos_fci.csv", header)

    policies = [("fraction", p) for p in cfg.data["study"]["fractions"]]
    policies += [("count", k) for k in cfg.data["study"]["sizes"]]
    rows = []
    for policy, value in policies:
        inner = SciSolver(seed=cfg.seed, **{policy: value})
        sol = RotatedSolver(inner, kind).solve(src.emb)
        ci = inner.last_ci
        captured = float(ref_weights[ci.indices].sum() / ref_weights.sum())
        if has_dos:
            trial = qp_dos(update_qp(sol, src.emb, clip=clip), lattice_grid, freq)
            report = error_metrics(ref_dos, ref.energy, trial, sol.energy, sigma_alpha=captured)
        else:
            r_e = abs(sol.energy - ref.energy)
            report = SciErrorReport(r_e, r_e / abs(ref.energy), float("nan"), [], captured)
        rows.append((ci.fraction, len(ci), report))
    write_report_csv(out / f"{src.name}_sci_report.csv", rows, header)

    kinds = cfg.data["study"]["kinds"]
    kinds = list(range(src.n_ghosts + 1)) if kinds is None else [int(k) for k in kinds]
    curves, energies, needed = {}, {}, {}
    target = float(cfg.data["study"]["target"])
    degeneracy = 1
    for k in dict.fromkeys(kinds + [kind]):
        energies[k], amps, degeneracy = ground_state_weights(rotate(src.emb, k), seed=cfg.seed)
        curves[k] = cumulative_weight(amps)
        needed[k] = count_for_weight(amps, target)
    n_rows = len(next(iter(curves.values())))
    write_table_csv(
        out / f"{src.name}_weight_decay.csv", ["K"] + [f"kind_{k}" for k in kinds],
        [[i + 1] + [f"{curves[k][i]:.15f}" for k in kinds] for i in range(n_rows)], header,
    )
    return {
        "name": src.name, "n_ghosts": src.n_ghosts, "energy": ref.energy,
        "energy_by_kind": {str(k): energies[k] for k in kinds},
        "K_target_by_kind": {str(k): needed[k] for k in kinds},
        "K_target": needed[kind], "degeneracy": degeneracy,
    }


def cmd_sci_study(cfg: RunConfig) -> int:
    out = cfg.run_dir("sci-study")
    header = cfg.header("sci-study")
    summaries = [_sci_sweep(cfg, src, out, header) for src in _study_sources(cfg)]
    doc: dict = {"sources": summaries, "target": cfg.data["study"]["target"]}
    sizes = {s["n_ghosts"]: s["K_target"] for s in summaries}
    if len(sizes) >= 3:
        n_values = [2 * (n + 1) for n in sorted(sizes)]
        k_values = [sizes[n] for n in sorted(sizes)]
        try:
            a, b, c = fit_exponential(n_values, k_values)
            doc["fit"] = {"a": a, "b": b, "c": c, "N": n_values, "K": k_values}
            write_table_csv(out / "exponential_fit.csv", ["a", "b", "c"], [[f"{a:.12e}", f"{b:.12e}", f"{c:.12e}"]], header)
        except NonConvergence as exc:
            doc["fit"] = {"error": str(exc)}
    write_json(out / "summary.json", doc, header)
    print(out)
    return EXIT_OK


# -- qsci-run -------------------------------------------------------------------


def cmd_qsci_run(cfg: RunConfig) -> int:
    if cfg.data["seed"] is None:
        raise ConfigError("qsci-run needs an explicit seed")
    path = cfg.data["qsci"]["checkpoint"]
    if path is None:
        raise ConfigError("qsci-run needs qsci.checkpoint (a converged run)")
    out = cfg.run_dir("qsci-run")
    header = cfg.header("qsci-run")
    ck = read_checkpoint(path)
    model = HubbardParams(U=ck.u, mu=ck.mu, T=ck.T)
    lattice_grid = discretize_semicircle(cfg.lattice)
    freq = cfg.frequency_grid
    clip = cfg.loop_config.eig_clip
    solver = QsciSolver(
        cfg.harvest_config, seed=cfg.seed, kind=cfg.rotation(ck.n_ghosts),
        warm_start=bool(cfg.data["solver"]["warm_angles"]),
    )

    if cfg.data["qsci"]["mode"] == "oneshot":
        _, emb, ref, ref_qp = loop_step(ck.qp, model, lattice_grid, FciSolver(seed=cfg.seed), clip)
        sol = solver.solve(emb)
        res = solver.history[-1]
        ref_dos = qp_dos(ref_qp, lattice_grid, freq)
        dos = qp_dos(update_qp(sol, emb, clip=clip), lattice_grid, freq)
        ref_dos.to_csv(out / "dos_fci.csv", header)
        dos.to_csv(out / "dos_qsci.csv", header)
        write_basis_dump(out / "basis.csv", res.ci, header)
        write_weights_csv(out / "weights.csv", res.raw_weights, header)
        write_json(out / "summary.json", {
            "U": ck.u, "n_ghosts": ck.n_ghosts, "energy_fci": ref.energy, "energy_qsci": sol.energy,
            "trial_energy": res.trial_energy, "survivors": res.n_survivors, "K": len(res.ci),
            "A0_fci": gap_metric(ref_dos), "A0_qsci": gap_metric(dos),
            "peak_fci": low_frequency_peak(ref_dos), "peak_qsci": low_frequency_peak(dos),
            "params": json.loads(res.params.to_json()),
        }, header)
        print(out)
        return EXIT_OK

    def record(state, qp, emb, sol):
        it = state.iteration
        dos = qp_dos(update_qp(sol, emb, clip=clip), lattice_grid, freq)
        dos.to_csv(out / f"dos_iter{it:03d}.csv", header)
        write_basis_dump(out / f"basis_iter{it:03d}.csv", solver.history[-1].ci, header)

    status = EXIT_OK
    try:
        result = run_loop(model, cfg.lattice, solver, cfg.loop_config, init=ck.qp, callback=record)
    except NonConvergence as exc:
        result = getattr(exc, "result", None)
        if result is None:
            raise
        status = EXIT_NONCONVERGENCE
    write_history_csv(out / "history.csv", result.history, header)
    write_checkpoint(out / "checkpoint.json", result, model, extra={"header": header})
    final = qp_dos(result.qp, lattice_grid, freq)
    final.to_csv(out / "dos_final.csv", header)
    write_json(out / "summary.json", {
        "U": ck.u, "n_ghosts": ck.n_ghosts, "converged": result.converged,
        "iterations": result.iterations, "A0": gap_metric(final),
    }, header)
    print(out)
    return status


# -- emit-plots -----------------------------------------------------------------


def _csv_columns(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return []


def gnuplot_script(csv_path: Path) -> str:
    cols = _csv_columns(csv_path)
    lines = [
        f"# gnuplot script for {csv_path.name}",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{cols[0] if cols else ''}'",
    ]
    if "omega" in cols[:1]:
        lines.append("set ylabel 'A(omega)'")
    if csv_path.name.endswith(("history.csv", "weight_decay.csv", "sci_report.csv")):
        lines.append("set logscale y")
    series = [f"'{csv_path.name}' using 1:{i} with lines" for i in range(2, len(cols) + 1)]
    lines.append("plot " + ", \\\n     ".join(series) if series else "# no data columns")
    return "\n".join(lines) + "\n"


def cmd_emit_plots(run_dir) -> int:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"not a run directory: {run_dir}")
    written = 0
    for path in sorted(run_dir.glob("*.csv")):
        path.with_suffix(".gp").write_text(gnuplot_script(path))
        written += 1
    print(f"{written} scripts in {run_dir}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ggut", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("run-ggut", "self-consistent loop for every (U, N_g) cell"),
        ("sci-study", "truncation and rotation sweeps on converged checkpoints"),
        ("qsci-run", "QSCI one-shot solve or full loop from a checkpoint"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. solver.kind=sci")
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
        p.add_argument("--warm-start", dest="warm_start", help="checkpoint to start the loop from")
    p = sub.add_parser("emit-plots", help="write gnuplot scripts next to the CSVs of a run")
    p.add_argument("run_dir")
    return ap


COMMANDS = {"run-ggut": cmd_run_ggut, "sci-study": cmd_sci_study, "qsci-run": cmd_qsci_run}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "emit-plots":
            return cmd_emit_plots(args.run_dir)
        overrides = list(args.overrides)
        if args.warm_start:
            overrides.append(f"loop.warm_start={json.dumps(args.warm_start)}")
        cfg = RunConfig.load(args.config, overrides, seed=args.seed, output=args.output)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyBasis as exc:
        print(f"empty basis: {exc}", file=sys.stderr)
        return EXIT_EMPTY_BASIS
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
