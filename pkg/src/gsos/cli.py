"""Command-line entry point: ``python -m gsos <command> ...``.

Every command except ``verify`` writes into ``<out>/<command>-<hash>/``, where
the hash is a git-style content hash of the validated configuration.  Files
in a run directory are never overwritten: a rerun that produces identical
bytes leaves the file alone, anything else is written next to it with a
numeric suffix.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (compute_H, estimate_rate, estimate_tau, fit_table1, typical_height,
                       write_repulsion_csv)
from .contours import extract_h_contours, open_contour
from .exact import CapExceeded, TRANSFER_CAP, TruncationWindow, as_window, enumerate_partition, transfer_matrix
from .lattice import rectangle
from .model import ModelParams, format_field, load_field, parse_bc
from .sampler import EmptySupport, batch_means, conditioned_sample, sample
from .verify import SUITES, run_suites

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_CAP, EXIT_VERIFY = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


# ----------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    p: float | None = None
    beta: float | None = None
    L: list = field(default_factory=list)
    M: int | None = None
    window: tuple | None = None
    bc: str = "zero"
    seed: int = 0
    sweeps: int = 20000
    burn_in: float = 0.2
    levels: int = 3
    out: str = "out"
    method: str | None = None
    theta: list = field(default_factory=lambda: [0.0])
    h: int | None = None
    load: str | None = None
    open: bool = False
    conditioned: bool = False
    jobs: int = 1

    def snapshot(self) -> dict:
        """Canonical config for hashing: everything that changes the numbers."""
        d = asdict(self)
        for k in ("out", "jobs"):
            d.pop(k)
        d["p"] = None if d["p"] is None else ("inf" if math.isinf(d["p"]) else d["p"])
        d["window"] = None if d["window"] is None else list(d["window"])
        if self.load is not None:
            d["load_sha1"] = hashlib.sha1(Path(self.load).read_bytes()).hexdigest()
        return d

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.p, self.beta)


def git_hash(text: str) -> str:
    """SHA-1 of a git blob holding ``text``."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(snapshot: dict) -> str:
    return git_hash(json.dumps(snapshot, sort_keys=True))


def _floats(s: str) -> list:
    return [float(v) for v in str(s).split(",") if v.strip()]


def _ints(s: str) -> list:
    return [int(v) for v in str(s).split(",") if v.strip()]


def _window(s: str) -> tuple:
    v = _ints(str(s).replace(":", ","))
    if len(v) != 2:
        raise ValueError(f"window must be 'lo,hi', got {s!r}")
    return tuple(v)


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


CONVERTERS = {
    "p": float, "beta": float, "L": _ints, "M": int, "window": _window, "bc": str,
    "seed": int, "sweeps": int, "burn_in": float, "levels": int, "out": str, "method": str,
    "theta": _floats, "h": int, "load": str, "open": _bool, "conditioned": _bool, "jobs": int,
}


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in CONVERTERS:
            raise UsageError(f"{path}:{n}: expected key=value with a known key, got {raw!r}")
        out[key] = val.strip()
    return out


REQUIRED = {
    "exact": ("L", "p", "beta"),
    "simulate": ("L", "p", "beta"),
    "repulsion": ("L", "p", "beta"),
    "tension": ("L", "p", "beta"),
    "rate": ("L", "p", "beta"),
    "contours": ("load", "h"),
}


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in CONVERTERS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            merged[key] = v
    cfg = RunConfig(args.command)
    for key, val in merged.items():
        try:
            setattr(cfg, key, CONVERTERS[key](val) if isinstance(val, str) else val)
        except ValueError as e:
            raise UsageError(f"--{key.replace('_', '-')}: {e}") from None
    missing = [k for k in REQUIRED[args.command] if getattr(cfg, k) in (None, [])]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k for k in missing))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Module preconditions, checked before any work starts."""
    try:
        if cfg.p is not None or cfg.beta is not None:
            cfg.params
        if any(L < 0 for L in cfg.L):
            raise ValueError("L must be >= 0")
        if cfg.M is not None and cfg.M < 0:
            raise ValueError("M must be >= 0")
        if cfg.window is not None:
            as_window(cfg.window)
        if not 0 <= cfg.burn_in < 1:
            raise ValueError("burn-in fraction must be in [0, 1)")
        if cfg.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if cfg.levels < 1:
            raise ValueError("levels must be >= 1")
        if cfg.seed < 0:
            raise ValueError("seed must be >= 0")
        if cfg.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if cfg.command in ("exact", "simulate"):
            if len(cfg.L) != 1:
                raise ValueError(f"{cfg.command} takes a single L")
            bc = parse_bc(cfg.bc, cfg.L[0], cfg.M if cfg.M is not None else cfg.L[0])
            if bc.kind == "staircase" and cfg.window is not None:
                w = as_window(cfg.window)
                if w.hmin > 0 or w.hmax < bc.n_steps:
                    raise ValueError(f"window {cfg.window} must contain the boundary heights 0..{bc.n_steps}")
        if cfg.command in ("repulsion", "rate") and any(L < 1 for L in cfg.L):
            raise ValueError("L must be >= 1")
        if cfg.command == "exact" and cfg.method not in (None, "auto", "transfer", "enumerate", "both"):
            raise ValueError(f"exact --method must be auto, transfer, enumerate or both, got {cfg.method!r}")
        if cfg.command == "repulsion" and cfg.method not in (None, "exact", "mcmc"):
            raise ValueError(f"repulsion --method must be exact or mcmc, got {cfg.method!r}")
        if cfg.command == "tension" and any(abs(t) >= math.pi / 2 for t in cfg.theta):
            raise ValueError("theta must lie in (-pi/2, pi/2)")
        if cfg.command == "contours" and not Path(cfg.load).is_file():
            raise ValueError(f"no such field file: {cfg.load}")
    except ValueError as e:
        raise ValidationError(str(e)) from None


# ----------------------------------------------------------------------------
# run directory


class RunDir:
    """Append-only output directory named by the config hash."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.snapshot = cfg.snapshot()
        self.hash = config_hash(self.snapshot)
        self.path = Path(cfg.out) / f"{cfg.command}-{self.hash[:12]}"
        self.started = dt.datetime.now(dt.timezone.utc).isoformat()
        self.outputs = []

    def _target(self, name: str, data: bytes) -> Path | None:
        self.path.mkdir(parents=True, exist_ok=True)
        stem, dot, ext = name.partition(".")
        k = 0
        while True:
            p = self.path / (name if k == 0 else f"{stem}.{k}{dot}{ext}")
            if not p.exists():
                return p
            if p.read_bytes() == data:
                return None
            k += 1

    def write(self, name: str, text: str) -> Path:
        data = text.encode()
        p = self._target(name, data)
        if p is None:
            p = self.path / name
        else:
            with open(p, "xb") as fh:
                fh.write(data)
        self.outputs.append({"file": p.name, "sha1": hashlib.sha1(data).hexdigest()})
        return p

    def jsonl(self, name: str, records) -> Path:
        lines = [json.dumps({**r, "manifest": self.hash}, sort_keys=True, default=_jsonable)
                 for r in records]
        return self.write(name, "".join(ln + "\n" for ln in lines))

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(header) + ["manifest"])
        for r in rows:
            w.writerow(list(r) + [self.hash])
        return self.write(name, buf.getvalue())

    def finish(self) -> Path:
        manifest = {
            "config": self.snapshot,
            "hash": self.hash,
            "version": __version__,
            "seed": self.cfg.seed,
            "started": self.started,
            "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
            "outputs": self.outputs,
        }
        text = json.dumps(manifest, sort_keys=True, indent=1) + "\n"
        p = self._target("manifest.json", text.encode())
        if p is not None:
            with open(p, "x") as fh:
                fh.write(text)
        return p or self.path / "manifest.json"


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _num(x):
    """CSV cell for a float: repr keeps round-trip precision."""
    if x is None:
        return ""
    return repr(float(x))


# ----------------------------------------------------------------------------
# commands


def _box(cfg):
    L = cfg.L[0]
    M = cfg.M if cfg.M is not None else L
    return L, M, parse_bc(cfg.bc, L, M)


def cmd_exact(cfg: RunConfig, run: RunDir) -> int:
    L, M, bc = _box(cfg)
    window = as_window(cfg.window) if cfg.window is not None else TruncationWindow.for_staircase(bc.n_steps)
    method = cfg.method or "auto"
    if method == "auto":
        method = "transfer" if window.size ** (2 * min(L, M) + 1) <= TRANSFER_CAP else "enumerate"
    axis = "rows" if L <= M else "columns"
    results = []
    if method in ("transfer", "both"):
        results.append(transfer_matrix(L, M, bc, cfg.params, window, axis=axis))
    if method in ("enumerate", "both"):
        results.append(enumerate_partition(rectangle(L, M), bc, cfg.params, window))
    recs = []
    for r in results:
        rec = r.to_record()
        rec.update({"L": L, "M": M, "bc": cfg.bc,
                    "convergence": {"window_exact": True, "note": "exact on the truncated window"}})
        recs.append(rec)
    run.jsonl("results.jsonl", recs)
    for rec in recs:
        print(json.dumps(rec, sort_keys=True, default=_jsonable))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, run: RunDir) -> int:
    L, M, bc = _box(cfg)
    window = cfg.window or (-4, 4 + max(bc.n_steps, 0))
    reg = rectangle(L, M)
    sampler = conditioned_sample if cfg.conditioned else sample
    kw = {} if cfg.conditioned else {"bc": bc}
    if cfg.conditioned and bc.kind != "zero":
        raise ValidationError("conditioned sampling uses zero boundary heights")
    res = sampler(reg, cfg.params, window, cfg.sweeps, cfg.seed, burn_in=cfg.burn_in, **kw)
    v = res.trace.values[:, 0]
    first = res.burn_in
    rows = [(first + i, int(x), int(m)) for i, (x, m) in enumerate(zip(v, res.trace.minima))]
    run.csv("trace.csv", ["sweep", "phi_center", "min"], rows)
    mean, se = batch_means(v)
    pge, pse = batch_means((v >= 1).astype(float))
    med = float(np.median(v))
    common = {"n_samples": len(v), "seed": cfg.seed, "method": "heat-bath",
              "params": {"p": "inf" if math.isinf(cfg.p) else cfg.p, "beta": cfg.beta},
              "window": list(as_window(window).heights[[0, -1]]), "conditioned": cfg.conditioned}
    recs = [
        {"quantity": "mean phi(0)", "value": mean, "std_error": se, **common},
        {"quantity": "P(phi(0) >= 1)", "value": pge, "std_error": pse, **common},
        {"quantity": "median phi(0)", "value": med, "std_error": None, **common},
    ]
    run.jsonl("estimates.jsonl", recs)
    run.write("final_field.txt", format_field(res.final, cfg.params))
    for r in recs:
        print(f"{r['quantity']}: {r['value']:.6g}" + ("" if r["std_error"] is None else f" ± {r['std_error']:.2g}"))
    return EXIT_OK


def _repulsion_one(args):
    L, p, beta, method, window, sweeps, seed = args
    return compute_H(L, ModelParams(p, beta), method, window, n_sweeps=sweeps, seed=seed)


def _map(fn, items, jobs):
    if jobs == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as ex:
        return list(ex.map(fn, items))


def cmd_repulsion(cfg: RunConfig, run: RunDir) -> int:
    import warnings

    method = cfg.method or "mcmc"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ests = _map(_repulsion_one, [(L, cfg.p, cfg.beta, method, cfg.window, cfg.sweeps, cfg.seed + i)
                                     for i, L in enumerate(cfg.L)], cfg.jobs)
    buf = io.StringIO()
    write_repulsion_csv(buf, ests)
    body = list(csv.reader(io.StringIO(buf.getvalue())))
    run.csv("repulsion_curve.csv", body[0], body[1:])
    rows = [(e.L, e.H, _num(e.threshold), e.method, "" if e.stable is None else e.stable, e.warning or "")
            for e in ests]
    run.csv("repulsion_height.csv", ["L", "H", "threshold", "method", "stable", "warning"], rows)
    if cfg.conditioned:
        typ = [typical_height(L, cfg.params, cfg.sweeps, cfg.seed + i) for i, L in enumerate(cfg.L)]
        run.csv("typical_height.csv", ["L", "median", "mean", "err", "n"],
                [(t["L"], t["median"], _num(t["mean"]), _num(t["err"]), t["n"]) for t in typ])
    Hs = [e.H for e in ests]
    try:
        fit = fit_table1(cfg.L, Hs, cfg.p)
        run.jsonl("fit.jsonl", [{"form": fit.form, "c": fit.c, "c_err": fit.c_err,
                                 "residuals": list(fit.residuals), "L": cfg.L, "H": Hs}])
        fit_msg = f"fit {fit.form}: c = {fit.c:.4g} ± {fit.c_err:.2g}"
    except ValueError as e:
        fit_msg = f"no fit: {e}"
    for e in ests:
        print(f"L={e.L}: H={e.H} (threshold {e.threshold:.3g})")
    print(fit_msg)
    return EXIT_OK


def cmd_tension(cfg: RunConfig, run: RunDir) -> int:
    rows, recs = [], []
    for th in cfg.theta:
        est = estimate_tau(th, cfg.params, cfg.L, cfg.window)
        for L, t, c in zip(est.L_list, est.tau_L, est.converged):
            rows.append((_num(th), L, _num(t), c))
        recs.append({"theta": th, "tau": est.tau, "tau_err": est.tau_err, "slope": est.slope,
                     "L": est.L_list, "tau_L": list(est.tau_L), "all_converged": est.all_converged})
        print(f"theta={th:g}: tau = {est.tau:.6g} ± {est.tau_err:.2g}")
    run.csv("tension.csv", ["theta", "L", "tau_L", "converged"], rows)
    run.jsonl("tension.jsonl", recs)
    return EXIT_OK


def _rate_one(args):
    L, p, beta, window, sweeps, seed, K = args
    return estimate_rate([L], ModelParams(p, beta), window, sweeps, seed, K=K)[0]


def cmd_rate(cfg: RunConfig, run: RunDir) -> int:
    K = cfg.levels
    window = cfg.window or (-K - 1, K + 3)
    ests = _map(_rate_one, [(L, cfg.p, cfg.beta, window, cfg.sweeps, cfg.seed, K) for L in cfg.L], cfg.jobs)
    rows = [(e.L, _num(e.beta), _num(e.logP), _num(e.logP_err), e.H, _num(e.rate), _num(e.rate_err), e.note)
            for e in ests]
    run.csv("rate.csv", ["L", "beta", "logP", "logP_err", "H", "rate", "rate_err", "note"], rows)
    for e in ests:
        r = "undefined" if e.rate is None else f"{e.rate:.4g}"
        print(f"L={e.L}: log P = {e.logP:.4g} ± {e.logP_err:.2g}, H = {e.H}, rate {r}")
    return EXIT_OK


def cmd_contours(cfg: RunConfig, run: RunDir) -> int:
    f, params = load_field(cfg.load)
    scan = extract_h_contours(f, cfg.h)
    rec = {"h": cfg.h, "contours": [c.to_record() for c in scan.contours], "n_excluded": len(scan.excluded)}
    recs = [rec]
    if cfg.open:
        gamma, dec = open_contour(f)
        recs.append({"open_contour": gamma.to_record(), "delta_plus": sorted(map(list, dec.plus)),
                     "delta_minus": sorted(map(list, dec.minus))})
    run.jsonl("contours.jsonl", recs)
    print(f"{len(scan.contours)} {cfg.h}-contour(s)")
    return EXIT_OK


def cmd_verify(suite: str) -> int:
    results = run_suites(suite)
    for r in results:
        print(r.report())
    ok = all(r.passed for r in results)
    print("all suites passed" if ok else "FAILED: " + ", ".join(r.name for r in results if not r.passed))
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "exact": cmd_exact,
    "simulate": cmd_simulate,
    "repulsion": cmd_repulsion,
    "tension": cmd_tension,
    "rate": cmd_rate,
    "contours": cmd_contours,
}


# ----------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(sp, *names):
    opts = {
        "p": dict(help="gradient exponent (1..inf)"),
        "beta": dict(help="inverse temperature"),
        "L": dict(help="half-width; comma list for sweeps"),
        "M": dict(help="half-height (default L)"),
        "window": dict(help="truncation window lo,hi"),
        "bc": dict(help="zero | constant:c | staircase:a1,../b1,.."),
        "seed": dict(help="RNG seed"),
        "sweeps": dict(help="sweeps per chain"),
        "burn-in": dict(dest="burn_in", help="burn-in fraction"),
        "levels": dict(help="splitting levels K"),
        "method": dict(help="computation method"),
        "theta": dict(help="tilt angles, comma list"),
        "h": dict(help="contour level"),
        "load": dict(help="height-field text file"),
        "jobs": dict(help="worker processes"),
    }
    for n in names:
        sp.add_argument("--" + n, **opts[n])
    sp.add_argument("--config", help="key=value config file; flags win")
    sp.add_argument("--out", help="output root (default out)")


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gsos", description="Generalized SOS model toolkit.")
    ap.add_argument("--version", action="version", version=f"gsos {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    _common(sub.add_parser("exact", help="exact log Z by transfer matrix or enumeration"),
            "L", "M", "p", "beta", "bc", "window", "method")
    sp = sub.add_parser("simulate", help="heat-bath sampling")
    _common(sp, "L", "M", "p", "beta", "bc", "window", "seed", "sweeps", "burn-in")
    sp.add_argument("--conditioned", action="store_true", help="condition on phi >= 0")
    sp = sub.add_parser("repulsion", help="repulsion height H(L) and growth fit")
    _common(sp, "L", "p", "beta", "window", "seed", "sweeps", "method", "jobs")
    sp.add_argument("--conditioned", action="store_true", help="also sample the conditioned central height")
    _common(sub.add_parser("tension", help="surface tension from staircase ratios"),
            "L", "p", "beta", "window", "theta")
    _common(sub.add_parser("rate", help="positivity probability by multilevel splitting"),
            "L", "p", "beta", "window", "seed", "sweeps", "levels", "jobs")
    sp = sub.add_parser("contours", help="h-contours of a saved field")
    _common(sp, "load", "h")
    sp.add_argument("--open", action="store_true", help="also trace the open contour (n=1 staircase)")
    sp = sub.add_parser("verify", help="run a property suite")
    sp.add_argument("suite", choices=list(SUITES) + ["all"])
    return ap


def _join_negative_values(argv):
    """Let ``--window -1,2`` through: argparse would read ``-1,2`` as an option."""
    out, it = [], iter(argv)
    for tok in it:
        if tok.startswith("--") and "=" not in tok:
            out.append(tok)
            nxt = next(it, None)
            if nxt is None:
                break
            if len(nxt) > 1 and nxt[0] == "-" and (nxt[1].isdigit() or nxt[1] == "."):
                out[-1] = f"{tok}={nxt}"
            else:
                out.append(nxt)
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = make_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required; see --help")
        if args.command == "verify":
            return cmd_verify(args.suite)
        cfg = build_config(args)
        run = RunDir(cfg)
        code = COMMANDS[cfg.command](cfg, run)
        print(f"outputs in {run.path}, manifest {run.finish().name}")
        return code
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, EmptySupport) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapExceeded as e:
        print(f"runtime cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
