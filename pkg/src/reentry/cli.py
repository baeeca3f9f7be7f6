"""Command-line entry point: check, simulate, sweep and emit."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from .config import CERTIFICATES, Document, load_document
from .integrator import InputStream, find_equilibrium, integrate, integrate_ensemble
from .stability import build_report
from .stages import StepAborted
from .state import ConfigError, HistoryBuffer, StateVector, random_state, uniform_state

EXIT_OK, EXIT_CERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_NAMES = ("tau", "k", "sigma", "delta", "alpha")
PRINCIPAL = ("H", "X", "Y", "P")


def _write(text: str, out: str | None):
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _inputs(doc: Document) -> InputStream:
    spec = dict(doc.run.inputs)
    kind = spec.pop("kind", "zero")
    cfg = doc.cfg
    if kind == "zero":
        return InputStream.zeros(cfg)
    if kind == "constant":
        return InputStream.constant(cfg, spec.get("value", 0.0))
    if kind == "sinusoid":
        return InputStream.sinusoid(cfg, spec.get("amplitude", 1.0), spec.get("period", 1.0))
    if kind == "csv":
        return InputStream.from_csv(cfg, spec["path"])
    raise ConfigError(f"run.inputs: unknown kind {kind!r}")


def _initial(doc: Document) -> StateVector:
    if doc.run.initial == "random":
        return random_state(doc.cfg, np.random.default_rng(doc.run.seed))
    if doc.run.initial == "equilibrium":
        eq = doc.equilibrium()
        return eq if eq is not None else find_equilibrium(doc.cfg, doc.params).state
    return uniform_state(doc.cfg)


def _principal_error(rows, cfg, zstar) -> np.ndarray:
    lay = cfg.layout
    idx = np.concatenate([np.arange(lay.size)[lay.slices[c]] for c in PRINCIPAL])
    return np.linalg.norm(np.asarray(rows)[..., idx] - zstar[idx], axis=-1)


def cmd_check(args) -> int:
    doc = load_document(args.config)
    report = build_report(doc.cfg, doc.params, reference=doc.equilibrium(), n_pairs=args.samples, seed=args.seed)
    require = tuple(args.require.split(",")) if args.require else doc.certificates
    bad = set(require) - set(CERTIFICATES)
    if bad:
        raise ConfigError(f"--require: unknown certificates {sorted(bad)}")
    ok = report.passed(require)
    text = report.to_json() if args.format == "json" else report.to_text() + f"\n{'passed':<28} {ok}"
    _write(text, args.out)
    return EXIT_OK if ok else EXIT_CERT


def cmd_simulate(args) -> int:
    doc = load_document(args.config)
    cfg = doc.cfg
    if args.dt is not None:
        cfg = cfg.with_(dt=args.dt)
        doc = Document(cfg, doc.params, doc.run, doc.certificates, doc.scenario, doc.overrides)
    steps = doc.run.steps if args.steps is None else args.steps
    every = args.record_every or doc.run.record_every
    if args.resume:
        data = json.loads(Path(args.resume).read_text())
        initial = HistoryBuffer.from_dict(cfg, data)
    else:
        initial = _initial(doc)
    eq = doc.equilibrium()
    try:
        tr = integrate(cfg, doc.params, initial, steps, inputs=_inputs(doc), record_every=every,
                       equilibrium=eq, diagnostics=True)
    except StepAborted as exc:
        print(f"numeric abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    # the initial state is part of the config echo; rows are the computed steps
    tr.times, tr.states = tr.times[1:], tr.states[1:]
    tr.diagnostics = {k: v[1:] for k, v in tr.diagnostics.items()}
    out = args.out or ("trajectory." + args.format)
    (tr.to_json if args.format == "json" else tr.to_csv)(out)
    if args.checkpoint:
        Path(args.checkpoint).write_text(json.dumps(tr.history.to_dict()))
    Path(str(out) + ".config.json").write_text(json.dumps(doc.to_dict(), indent=1))
    if eq is not None and len(tr.states):
        err = float(_principal_error(tr.states[-1], cfg, eq.to_flat(cfg.layout)))
        print(f"final principal error {err:.3e}")
    return EXIT_OK


def parse_grid(items) -> dict:
    grid = {}
    for item in items or ():
        name, _, values = item.partition("=")
        name = name.strip()
        if name not in SWEEP_NAMES:
            raise ConfigError(f"--grid: unknown parameter {name!r} (choose from {', '.join(SWEEP_NAMES)})")
        vals = [v for v in values.split(",") if v.strip()]
        try:
            grid[name] = [float(v) for v in vals]
        except ValueError:
            raise ConfigError(f"--grid {name}: values must be numbers") from None
    return grid


def _oscillation_count(series) -> int:
    s = np.sign(series[np.abs(series) > 1e-14])
    return int(np.sum(s[1:] != s[:-1]))


def cmd_sweep(args) -> int:
    doc = load_document(args.config)
    grid = parse_grid(args.grid)
    names = list(grid)
    points = list(itertools.product(*grid.values())) if names and all(grid.values()) else []
    if len(points) > args.max_points:
        raise ConfigError(f"grid has {len(points)} points, above the cap {args.max_points}; "
                          "narrow the grid or raise --max-points")
    steps = doc.run.steps if args.steps is None else args.steps
    rows = []
    # points that differ only in their delays share one batched run
    groups: dict = {}
    for pt in points:
        values = dict(zip(names, pt))
        key = tuple(sorted((k, v) for k, v in values.items() if k != "tau"))
        groups.setdefault(key, []).append(values)
    every = max(1, steps // 500)
    for key, members in groups.items():
        docs = [doc.rebuild(**m) for m in members]
        reports = [build_report(d.cfg, d.params, reference=d.equilibrium(), n_pairs=args.samples, seed=args.seed)
                   for d in docs]
        zstar = docs[0].equilibrium()
        if zstar is None:
            zstar = find_equilibrium(docs[0].cfg, docs[0].params).state
        zf = zstar.to_flat(docs[0].cfg.layout)
        rng = np.random.default_rng(args.seed)
        inits = [random_state(d.cfg, rng) for d in docs]
        try:
            res = integrate_ensemble([d.cfg for d in docs], docs[0].params, inits, steps, record_every=every)
            err_final = _principal_error(res.finals, docs[0].cfg, zf)
            tail = res.records[int(0.8 * len(res.records)):]
            lay = docs[0].cfg.layout
            h0 = lay.slices["H"].start
            osc = [_oscillation_count(tail[:, b, h0] - zf[h0]) for b in range(len(docs))]
        except StepAborted:
            err_final = np.full(len(docs), np.nan)
            osc = [0] * len(docs)
        for b, (m, rep) in enumerate(zip(members, reports)):
            rows.append({**m, "small_gain_ok": rep.small_gain_ok, "strengthened_ok": rep.strengthened_ok,
                         "crossgain_ok": rep.crossgain_ok, "converged": bool(err_final[b] <= args.tol),
                         "final_error": float(err_final[b]), "oscillation": osc[b] >= 3,
                         "sign_changes": osc[b]})
    header = names + ["small_gain_ok", "strengthened_ok", "crossgain_ok", "converged", "final_error",
                      "oscillation", "sign_changes"]
    if args.format == "json":
        _write(json.dumps(rows, indent=1), args.out)
    else:
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_emit(args) -> int:
    doc = load_document(args.config)
    _write(json.dumps(doc.to_dict(full=not args.short), indent=1), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reentry", description="Certify and simulate delayed reentrant coupling.")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="evaluate the stability certificates")
    c.add_argument("config", help="config path or scenario name (e.g. scenarios/k3p3-default)")
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.add_argument("--out")
    c.add_argument("--require", help=f"comma-separated subset of {','.join(CERTIFICATES)}")
    c.add_argument("--samples", type=int, default=2000, help="pairs for the sampled one-sided constants")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="integrate and write a trajectory")
    s.add_argument("config")
    s.add_argument("--steps", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--record-every", type=int)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out")
    s.add_argument("--checkpoint", help="write the final history here")
    s.add_argument("--resume", help="continue from a checkpoint written by --checkpoint")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="grid over tau, k, sigma, delta, alpha")
    w.add_argument("config")
    w.add_argument("--grid", action="append", help="name=v1,v2,... (repeatable)")
    w.add_argument("--steps", type=int)
    w.add_argument("--tol", type=float, default=1e-6)
    w.add_argument("--max-points", type=int, default=64)
    w.add_argument("--samples", type=int, default=500)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--format", choices=("csv", "json"), default="csv")
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("emit", help="print the full config of a scenario or file")
    e.add_argument("config")
    e.add_argument("--short", action="store_true", help="keep the scenario reference instead of expanding it")
    e.add_argument("--out")
    e.set_defaults(func=cmd_emit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepAborted as exc:
        print(f"numeric abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
