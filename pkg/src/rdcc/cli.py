"""Command-line front end: ``rdcc {solve,sweep,diagnose,witness}``.

Every command reads a JSON experiment config, writes JSON/CSV files into the
output directory and encodes its outcome in the exit status.  Outputs depend
only on the config and seed; timings go to stderr, never into files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, families
from .ccdiag import MeasureSequence, classify, tightness_certificate
from .distortion import DistortionSpec, coercivity_probe, d_max_estimate, default_candidates, finite_cover_witness
from .errors import RDError
from .measure import DiscreteMeasure
from .solver import SolverConfig, compute_F, rd_curve

log = logging.getLogger("rdcc")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_LAW_VIOLATION = 0, 1, 2, 3
VERDICT_EXIT = {"compactness": 0, "vanishing": 10, "dichotomy": 11, "inconclusive": 12}
CONFIG_KEYS = {"source", "distortion", "solver", "beta", "sweep", "outputs", "seed", "witness", "sequence"}


class ConfigError(RDError, ValueError):
    """Invalid experiment config; the message names the offending field."""


# ---------------------------------------------------------------------------
# config


class Experiment:
    def __init__(self, raw: dict, base_dir: Path, seed: int | None = None):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        self.raw = raw
        self.base_dir = base_dir
        self.seed = int(raw.get("seed", 0) if seed is None else seed)

    @property
    def digest(self) -> str:
        body = json.dumps({**self.raw, "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def _section(self, key):
        if key not in self.raw:
            raise ConfigError(f"config field '{key}' is required for this command")
        return self.raw[key]

    def source(self) -> DiscreteMeasure:
        try:
            return families.source_from_json(self._section("source"))
        except RDError as exc:
            raise ConfigError(f"source: {exc}") from None

    def distortion(self) -> DistortionSpec:
        # DistortionSpec messages already name distortion.kind / distortion.params
        return DistortionSpec.from_json(self._section("distortion"), self.base_dir)

    def solver(self) -> SolverConfig:
        try:
            cfg = SolverConfig.from_json(self.raw.get("solver"))
        except TypeError as exc:
            raise ConfigError(f"solver: {exc}") from None
        cfg.seed = self.seed
        return cfg

    def beta(self) -> float:
        b = self._section("beta")
        if not isinstance(b, (int, float)) or not math.isfinite(b) or b < 0:
            raise ConfigError("beta must be a finite nonnegative number")
        return float(b)

    def beta_grid(self) -> list:
        sw = self._section("sweep")
        if "betas" in sw:
            grid = [float(b) for b in sw["betas"]]
        else:
            for key in ("min", "max", "count"):
                if key not in sw:
                    raise ConfigError(f"sweep.{key} is required")
            lo, hi, n = float(sw["min"]), float(sw["max"]), int(sw["count"])
            spacing = sw.get("spacing", "linear")
            if n < 1 or lo < 0 or hi < lo:
                raise ConfigError("sweep needs count >= 1 and 0 <= min <= max")
            if spacing == "log":
                if lo <= 0:
                    raise ConfigError("sweep.min must be positive for log spacing")
                grid = np.geomspace(lo, hi, n).tolist()
            elif spacing == "linear":
                grid = np.linspace(lo, hi, n).tolist()
            else:
                raise ConfigError("sweep.spacing must be 'linear' or 'log'")
        if not grid or any(b < 0 or not math.isfinite(b) for b in grid):
            raise ConfigError("sweep betas must be finite and nonnegative")
        return grid

    def sequence(self, path: str | None) -> MeasureSequence:
        if path is not None:
            obj = _read_json(Path(path), "sequence")
        else:
            obj = self._section("sequence")
        if isinstance(obj, dict) and "family" in obj:
            name = obj["family"]
            if name not in families.SEQUENCES:
                raise ConfigError(f"sequence.family must be one of {sorted(families.SEQUENCES)}")
            params = {k: v for k, v in obj.items() if k != "family"}
            return MeasureSequence(families.SEQUENCES[name](**params))
        return MeasureSequence.from_json(obj)


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# output


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite_json(obj):
    """Replace non-finite floats so the files stay strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else ("inf" if obj > 0 else "-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite_json(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite_json(obj.item())
    return obj


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


class Outputs:
    def __init__(self, out_dir: Path, exp: Experiment, command: str):
        self.dir = out_dir
        self.exp = exp
        self.command = command
        self.files: list[str] = []
        self.warnings: list[str] = []

    def json(self, name: str, obj) -> None:
        write_atomic(self.dir / name, _dump(_finite_json(obj)))
        self.files.append(name)

    def text(self, name: str, text: str) -> None:
        write_atomic(self.dir / name, text)
        self.files.append(name)

    def warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def finish(self, status: int) -> int:
        self.json(f"run_{self.command}.json", {
            "command": self.command, "config_digest": self.exp.digest, "version": __version__,
            "seed": self.exp.seed, "outputs": sorted(self.files), "warnings": self.warnings,
            "exit_code": status,
        })
        return status


# ---------------------------------------------------------------------------
# commands


def cmd_solve(exp: Experiment, out: Outputs, args) -> int:
    mu, rho, cfg, beta = exp.source(), exp.distortion(), exp.solver(), exp.beta()
    rep = compute_F(mu, rho, beta, cfg)
    out.json("report.json", {**rep.to_json(), "config_digest": exp.digest})
    out.text("kernel.csv", rep.kernel_csv())
    if not rep.converged:
        out.warn(f"not converged after {rep.iterations} iterations (gap {rep.gap:.3g} > tol {cfg.tol:g})")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(exp: Experiment, out: Outputs, args) -> int:
    mu, rho, cfg = exp.source(), exp.distortion(), exp.solver()
    curve = rd_curve(mu, rho, exp.beta_grid(), cfg, threads=args.threads)
    out.text("curve.csv", curve.to_csv())
    bad = curve.law_violations()
    failed = [p.beta for p in curve.points if p.status == "failed"]
    for b in failed:
        out.warn(f"beta={b:g} failed")
    for p in curve.points:
        if p.status == "not_converged":
            out.warn(f"beta={p.beta:g} not converged (gap {p.gap:.3g})")
    out.json("sweep.json", {**curve.to_json(), "config_digest": exp.digest,
                            "law_violations": bad, "failed_betas": failed})
    if bad:
        for v in bad:
            print(f"curve law violated ({v[0]}): " + " ".join(f"(D={d!r}, R={r!r})" for d, r in v[1:]),
                  file=sys.stderr)
        return EXIT_LAW_VIOLATION
    return EXIT_OK


def cmd_diagnose(exp: Experiment, out: Outputs, args) -> int:
    seq = exp.sequence(args.sequence)
    grid = None if args.radius_grid is None else [float(r) for r in args.radius_grid.split(",")]
    diag = classify(seq, grid, args.tail_fraction, args.eps_v, args.eps_c)
    out.json("diagnosis.json", diag.to_json())
    return VERDICT_EXIT[diag.verdict]


def cmd_witness(exp: Experiment, out: Outputs, args) -> int:
    opts = dict(exp.raw.get("witness") or {})
    kind = args.kind or opts.get("kind")
    if kind not in ("cover", "coercivity", "dmax", "tightness"):
        raise ConfigError("witness.kind must be one of cover, coercivity, dmax, tightness")
    result = {"kind": kind}
    if kind == "tightness":
        seq = exp.sequence(args.sequence)
        eps_list = [float(e) for e in opts.get("eps_list", [1e-3])]
        result.update(tightness_certificate(seq, eps_list).to_json())
        out.json("witness.json", result)
        return EXIT_OK
    mu, rho = exp.source(), exp.distortion()
    if kind == "cover":
        eps = float(opts.get("eps", 0.1))
        w = finite_cover_witness(mu, rho, eps, int(opts.get("max_size", 10)), default_candidates(mu, rho))
        result.update(w.to_json())
    elif kind == "coercivity":
        M = float(opts.get("M", 1.0))
        y0 = opts.get("y0", 0)
        reports = [coercivity_probe(rho, x, y0, M, int(opts.get("probe_budget", 1000)), mu.alphabet, exp.seed)
                   for x in mu.atoms]
        verdicts = {r.verdict for r in reports}
        verdict = verdicts.pop() if len(verdicts) == 1 else "inconclusive"
        K = max(r.radius for r in reports) if verdict == "coercive" else None
        if verdict != "coercive":
            out.warn(f"coercivity probe is {verdict}: {reports[0].note}")
        result.update({"M": M, "y0": y0, "verdict": verdict, "K_M": K, "per_atom_note": reports[0].note})
    else:
        K_grid = [float(k) for k in opts.get("K_grid", [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6])]
        est = d_max_estimate(mu, rho, K_grid, default_candidates(mu, rho))
        result.update({"estimates": [{"K": k, "value": v} for k, v in est], "d_max": est[-1][1]})
    out.json("witness.json", result)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "diagnose": cmd_diagnose, "witness": cmd_witness}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--out", type=Path, help="output directory (default: config 'outputs' or ./out)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="parallel workers for beta sweeps")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    p = argparse.ArgumentParser(prog="rdcc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rdcc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one beta, write report.json and kernel.csv")
    sub.add_parser("sweep", parents=[common], help="beta sweep, write curve.csv and sweep.json")
    d = sub.add_parser("diagnose", parents=[common], help="classify a measure sequence")
    d.add_argument("--sequence", help="JSON array of measures (default: config 'sequence')")
    d.add_argument("--tail-fraction", type=float, default=0.5)
    d.add_argument("--eps-v", type=float, default=0.05)
    d.add_argument("--eps-c", type=float, default=0.05)
    d.add_argument("--radius-grid", help="comma-separated increasing radii")
    w = sub.add_parser("witness", parents=[common], help="cover / coercivity / dmax / tightness witnesses")
    w.add_argument("--kind", choices=["cover", "coercivity", "dmax", "tightness"])
    w.add_argument("--sequence", help="sequence file for tightness")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    start = time.perf_counter()
    try:
        if args.config is not None:
            raw, base = _read_json(args.config, "config"), args.config.parent
        elif args.command == "diagnose" and args.sequence:
            raw, base = {}, Path.cwd()
        else:
            raise ConfigError("--config is required")
        exp = Experiment(raw, base, args.seed)
        out_dir = args.out or Path(raw.get("outputs", "out"))
        out = Outputs(out_dir, exp, args.command)
        status = out.finish(COMMANDS[args.command](exp, out, args))
    except RDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not args.quiet:
        print(f"{args.command}: exit {status} in {time.perf_counter() - start:.2f}s -> {out_dir}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
