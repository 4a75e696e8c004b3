"""Command line entry point ``confdim``.

Every subcommand writes into an output directory (``--out``).  Artifacts are
named ``<stage>-<hash>.<ext>`` where the hash covers the stage config and the
hashes of its inputs, and ``manifest.json`` maps each stage to its latest
artifact so later stages can pick it up.  No timestamps are written, so equal
configs give byte-identical files.

Exit codes: 0 when every asserted check passes, 1 when a certificate or an
asserted invariant fails, 2 on invalid configuration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfdimError, ConstantsError, ParameterError

logger = logging.getLogger("confdim")

MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------

def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical(config).encode()).hexdigest()[:12]


class RunDir:
    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    @property
    def manifest_path(self) -> Path:
        return self.path / MANIFEST

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {}

    def _record(self, stage: str, name: str, config: dict) -> None:
        man = self.manifest()
        man[stage] = {"file": name, "config": config}
        self.manifest_path.write_text(json.dumps(man, sort_keys=True, indent=1) + "\n")

    def write(self, stage: str, config: dict, text: str, ext: str = "json") -> Path:
        name = f"{stage}-{config_hash(config)}.{ext}"
        target = self.path / name
        target.write_text(text)
        self._record(stage, name, config)
        return target

    def sidecar(self, stage: str, config: dict, ext: str, text: str) -> Path:
        target = self.path / f"{stage}-{config_hash(config)}.{ext}"
        target.write_text(text)
        return target

    def latest(self, stage: str) -> tuple[Path, dict]:
        entry = self.manifest().get(stage)
        if entry is None:
            raise ParameterError(f"no '{stage}' artifact in {self.path}; run that stage first "
                                 f"or pass the file explicitly")
        return self.path / entry["file"], entry["config"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _finite(x):
    x = float(x)
    if np.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


# ---------------------------------------------------------------------------
# shared argument handling
# ---------------------------------------------------------------------------

def parse_range(text: str) -> list[int]:
    """``"1..4"`` or ``"1,2,4"`` to a list of ints."""
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def _load_space(run: RunDir, path):
    from .metric_spaces import load_space
    if path is None:
        path, _ = run.latest("space")
    return load_space(path, normalize_=False), file_digest(path)


def _fill_params(run: RunDir, args) -> dict:
    """Graph parameters from flags, falling back to the latest ``fill`` artifact."""
    prev = {}
    if run.manifest().get("fill"):
        prev = run.latest("fill")[1]
    out = {}
    for key in ("alpha", "tau", "L"):
        val = getattr(args, key, None)
        if val is None:
            val = prev.get(key)
        if val is None:
            raise ParameterError(f"--{key} is required (no earlier fill stage to inherit it from)")
        out[key] = val
    out["L"] = int(out["L"])
    return out


def _graph(space, params, n0=1, mode="practical", K_d=None, tree=False):
    from .nets_filling import attach_tree, build_nets, resample_graph
    nets = build_nets(space, params["alpha"], params["L"], K_d, mode)
    g = resample_graph(nets, n0, params["tau"], K_d, mode)
    return attach_tree(g) if tree else g


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_space_gen(args, run: RunDir) -> int:
    from .metric_spaces import (generate_cantor, generate_carpet, generate_grid, snowflake,
                                space_to_json)
    if args.kind == "cantor":
        space = generate_cantor(args.depth, args.ratio)
    elif args.kind == "carpet":
        space = generate_carpet(args.depth)
    elif args.kind == "grid":
        space = generate_grid(args.n)
    else:
        raise ParameterError(f"unknown space kind {args.kind!r}")
    if args.snowflake is not None:
        space = snowflake(space, args.snowflake)
    config = {"kind": args.kind, "depth": args.depth, "ratio": args.ratio, "n": args.n,
              "snowflake": args.snowflake}
    doc = space_to_json(space)
    doc["config"] = config
    path = run.write("space", config, json.dumps(doc, sort_keys=True) + "\n")
    print(path)
    return 0


def cmd_fill(args, run: RunDir) -> int:
    from .nets_filling import audit_nets, graph_summary, edge_list_lines
    space, digest = _load_space(run, args.space)
    params = {"alpha": args.alpha, "tau": args.tau, "L": args.L}
    g = _graph(space, params, args.n0, args.mode, tree=True)
    config = dict(params, n0=args.n0, mode=args.mode, space=digest)
    doc = {"config": config, "summary": graph_summary(g), "nets": _jsonable(audit_nets(g.nets))}
    path = run.write("fill", config, dump(doc))
    run.sidecar("fill", config, "edges", "\n".join(edge_list_lines(g)) + "\n")
    print(path)
    return 0


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return _finite(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def cmd_modulus(args, run: RunDir) -> int:
    import io
    from .modulus import ModulusCache, mod_p_at_scale_detail, write_scale_csv
    space, digest = _load_space(run, args.space)
    params = _fill_params(run, args)
    g = _graph(space, params)
    cache = ModulusCache()
    ks = parse_range(args.k)
    results = [mod_p_at_scale_detail(g, args.p, k, cache, prune=False)
               for k in ks if k <= g.depth]
    config = dict(params, p=args.p, k=ks, space=digest)
    buf = io.StringIO()
    tmp = run.path / ".modulus.tmp"
    write_scale_csv(tmp, g, results)
    text = tmp.read_text()
    tmp.unlink()
    buf.write(text)
    path = run.write("modulus", config, buf.getvalue(), "csv")
    summary = {"config": config, "values": {str(r.k): r.value for r in results},
               "argmax": {str(r.k): list(g.label(r.argmax)) if r.argmax >= 0 else None for r in results},
               "monotonicity_violations": cache.monotonicity_violations,
               "note": "raw values depend on the filling; only decay is meaningful"}
    run.sidecar("modulus", config, "json", dump(_jsonable(summary)))
    for r in results:
        print(f"k={r.k} Mod_{args.p:g} = {r.value:.10g}")
    print(path)
    return 0


def cmd_dim(args, run: RunDir) -> int:
    from .modulus import ModulusCache, estimate_dimension_on_graph
    space, digest = _load_space(run, args.space)
    params = _fill_params(run, args)
    g = _graph(space, params)
    ks = parse_range(args.ks) if args.ks else None
    est = estimate_dimension_on_graph(g, ks, p_max=args.p_max, decay_tol=args.decay_tol,
                                      p_tol=args.p_tol, cache=ModulusCache())
    config = dict(params, ks=ks, p_max=args.p_max, decay_tol=args.decay_tol, p_tol=args.p_tol,
                  space=digest)
    doc = {"config": config, "status": est.status, "interval": [est.p_lo, est.p_hi],
           "describe": est.describe(), "ks": est.ks, "notes": est.notes,
           "decisions": {repr(p): {"decays": d[0], "slope": _finite(d[1]),
                                   "values": [float(v) for v in d[2]]}
                         for p, d in sorted(est.decisions.items())}}
    path = run.write("dim", config, dump(doc))
    print(f"critical exponent: {est.describe()}")
    print(path)
    return 0


def cmd_pipeline(args, run: RunDir) -> int:
    from .metric_spaces import estimate_constants
    from .weight_pipeline import run_pipeline
    space, digest = _load_space(run, args.space)
    params = _fill_params(run, args)
    K_d = N1 = None
    if args.mode == "theory":
        sc = estimate_constants(space)
        K_d, N1 = sc.K_d, sc.N1
    config = dict(params, p=args.p, n0=args.n0, mode=args.mode, epsilon=args.epsilon,
                  epsilon0=args.epsilon0, seed=args.seed, space=digest)
    g = _graph(space, params, args.n0, args.mode, K_d, tree=True)
    try:
        ws = run_pipeline(g, args.p, args.mode, N1=N1, K_d=K_d, epsilon=args.epsilon,
                          epsilon0=args.epsilon0, seed=args.seed, config=config)
    except ConstantsError as exc:
        print(f"error: {exc}. The construction needs the modulus at offset one to fall below "
              f"epsilon0 on the resampled graph; increase n0 or use --mode practical.",
              file=sys.stderr)
        return 1
    path = run.write("weights", config, ws.dumps())
    failed = [c["name"] for c in ws.checks if not c["ok"]]
    if failed:
        print("reported (not asserted in this mode): " + ", ".join(failed))
    print(path)
    return 0


def _load_weights(run: RunDir, path):
    from .weight_pipeline import WeightSystem
    if path is None:
        path, _ = run.latest("weights")
    return WeightSystem.loads(Path(path).read_text()), file_digest(path)


def cmd_build_metric(args, run: RunDir) -> int:
    from .metric_builder import boundary_metric, export_metric
    ws, digest = _load_weights(run, args.weights)
    bm = boundary_metric(ws, args.depth)
    config = {"weights": digest, "depth": bm.depth, "format": args.format}
    text = export_metric(bm, None, args.format)
    if args.output:
        Path(args.output).write_text(text)
    path = run.write("metric", config, text, args.format)
    meta = {"config": config, "points": bm.n, "tail_bound": _finite(bm.tail_bound),
            "max_rho": bm.meta["max_rho"]}
    run.sidecar("metric", config, "meta.json", dump(meta))
    code = 0
    if args.certify:
        from .verification import certify_H, dumps
        rep = {w: certify_H(ws, w, args.seed) for w in args.certify}
        run.sidecar("metric", config, "cert.json", dumps(rep))
        code = 1 if any(s["status"] == "fail" for s in rep.values()) else 0
        for w, s in rep.items():
            print(f"{w}: {s['status']}")
    print(path)
    return code


def cmd_certify(args, run: RunDir) -> int:
    from .metric_spaces import load_space
    from .verification import SECTIONS, certify_all, dumps
    ws, digest = _load_weights(run, args.weights)
    which = list(SECTIONS) if args.all or not args.which else args.which
    space = None
    space_path = args.space
    if space_path is None and run.manifest().get("space"):
        space_path = run.latest("space")[0]
    if space_path is not None:
        space = load_space(space_path, normalize_=False)
    rep = certify_all(ws, args.seed, args.samples, which, space, args.depth)
    config = {"weights": digest, "sections": which, "seed": args.seed, "samples": args.samples,
              "depth": args.depth}
    rep["config"] = config
    path = run.write("certificate", config, dumps(rep))
    for name, sec in rep["sections"].items():
        print(f"{name:14s} {sec['status']}")
    print(f"{'metric':14s} {rep['metric']['status']}")
    print(path)
    return 0 if rep["ok"] else 1


def cmd_gauge_check(args, run: RunDir) -> int:
    from .gauge_density import gauge_report, identity_gauge, make_gauge, snowflake_gauge
    from .metric_spaces import estimate_constants, load_space
    space, digest = _load_space(run, args.space)
    params = _fill_params(run, args)
    g = _graph(space, params)
    if args.theta.startswith("snowflake:"):
        gauge = snowflake_gauge(space, float(args.theta.split(":", 1)[1]), analytic=not args.empirical)
    elif args.theta == "identity":
        gauge = identity_gauge(space, analytic=not args.empirical)
    else:
        theta = load_space(args.theta, normalize_=False)
        gauge = make_gauge(space, theta, None, np.random.default_rng(args.seed))
    K_d = args.K_d if args.K_d is not None else estimate_constants(space).K_d
    ks = parse_range(args.k)
    rep = gauge_report(gauge, g, ks, args.p, K_d)
    config = dict(params, theta=args.theta, empirical=args.empirical, k=ks, p=args.p, K_d=K_d,
                  space=digest)
    rep["config"] = config
    path = run.write("gauge", config, dump(_jsonable(rep)))
    print(f"pairs={len(rep['pairs'])} all_ok={rep['all_ok']}")
    print(path)
    return 0 if rep["all_ok"] else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _graph_flags(p, required=False):
    p.add_argument("--alpha", type=float, required=required, help="scale factor alpha > 1")
    p.add_argument("--tau", type=float, required=required, help="horizontal adjacency factor tau")
    p.add_argument("--L", type=int, required=required, help="number of net levels")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="confdim", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--out", default="confdim-run", help="output directory (default: %(default)s)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for per-vertex solves")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("space", help="generate a test space")
    ssub = sp.add_subparsers(dest="space_command", required=True)
    g = ssub.add_parser("gen", help="write a generated space as JSON")
    g.add_argument("--kind", choices=["cantor", "carpet", "grid"], required=True)
    g.add_argument("--depth", type=int, default=None)
    g.add_argument("--ratio", type=float, default=1.0 / 3.0)
    g.add_argument("--n", type=int, default=None, help="grid size")
    g.add_argument("--snowflake", type=float, default=None, help="apply d -> d^e afterwards")
    g.set_defaults(func=cmd_space_gen)

    f = sub.add_parser("fill", help="build nets and the filling graph")
    f.add_argument("--space", default=None)
    _graph_flags(f, required=True)
    f.add_argument("--n0", type=int, default=1)
    f.add_argument("--mode", choices=["practical", "theory"], default="practical")
    f.set_defaults(func=cmd_fill)

    m = sub.add_parser("modulus", help="Mod_p(k) with per-vertex CSV")
    m.add_argument("--space", default=None)
    _graph_flags(m)
    m.add_argument("--p", type=float, required=True)
    m.add_argument("--k", default="1..4", help="offsets, e.g. 1..4 or 1,3")
    m.set_defaults(func=cmd_modulus)

    d = sub.add_parser("dim", help="bracket the critical exponent")
    d.add_argument("--space", default=None)
    _graph_flags(d)
    d.add_argument("--ks", default=None, help="offsets used for the decay fit")
    d.add_argument("--p-max", type=float, default=8.0)
    d.add_argument("--decay-tol", type=float, default=0.1)
    d.add_argument("--p-tol", type=float, default=0.05)
    d.set_defaults(func=cmd_dim)

    pl = sub.add_parser("pipeline", help="construct the weight system on G[n0]")
    pl.add_argument("--space", default=None)
    _graph_flags(pl)
    pl.add_argument("--p", type=float, required=True)
    pl.add_argument("--n0", type=int, default=1)
    pl.add_argument("--mode", choices=["practical", "theory"], default="practical")
    pl.add_argument("--epsilon", type=float, default=None)
    pl.add_argument("--epsilon0", type=float, default=None)
    pl.add_argument("--seed", type=int, default=42)
    pl.set_defaults(func=cmd_pipeline)

    b = sub.add_parser("build-metric", help="distances between deepest vertices")
    b.add_argument("--weights", default=None)
    b.add_argument("--depth", type=int, default=None)
    b.add_argument("--format", choices=["json", "csv"], default="csv")
    b.add_argument("--output", default=None, help="extra copy of the matrix at this path")
    b.add_argument("--certify", nargs="*", default=None,
                   choices=["H1", "H2", "H3", "H4", "H3prime", "normalization"])
    b.add_argument("--seed", type=int, default=42)
    b.set_defaults(func=cmd_build_metric)

    c = sub.add_parser("certify", help="certificate report for a weight system")
    c.add_argument("--weights", default=None)
    c.add_argument("--space", default=None, help="space for the distortion profile")
    c.add_argument("--all", action="store_true")
    c.add_argument("--which", nargs="*", default=None)
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--depth", type=int, default=None)
    c.set_defaults(func=cmd_certify)

    gc = sub.add_parser("gauge-check", help="audit a gauge metric's admissible densities")
    gc.add_argument("--space", default=None)
    _graph_flags(gc)
    gc.add_argument("--theta", default="snowflake:0.5",
                    help="snowflake:<e>, identity, or a matrix JSON on the same ids")
    gc.add_argument("--empirical", action="store_true", help="use the sampled distortion envelope")
    gc.add_argument("--K-d", dest="K_d", type=float, default=None)
    gc.add_argument("--k", default="1..3")
    gc.add_argument("--p", type=float, default=2.0)
    gc.add_argument("--seed", type=int, default=42)
    gc.set_defaults(func=cmd_gauge_check)
    return ap


def _set_threads(n: int) -> None:
    if n and n > 1:
        try:
            import numba
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        except Exception:  # numba missing or disabled
            pass


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    run = RunDir(args.out)
    try:
        return int(args.func(args, run))
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfdimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
