"""Command-line entry point: ``gist-mini <command> [options]``.

Every command prints its effective configuration as a ``# config`` JSON line
before any other output. Exit codes: 0 success, 1 validation failure,
2 verification failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import datagen as dg
from . import loads as ld
from . import operator as op
from . import verify as vf
from .errors import GistError
from .meshgraph import ALPHA_RANGE, build_graph, gen_icosphere, gen_wing_flap, load_mesh, random_walk_matrix
from .spectral import (
    DEFAULT_FILTER,
    FilterSpec,
    exact_kernel,
    kernel_estimates,
    local_pairs,
    scaling_bench,
    spectral_embed,
)

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

TRAIN_DEFAULTS = dict(hidden=32, blocks=3, k=16, r=256, epochs=1000, lr=0.01, lr_final=0.01,
                      batch_size=1, seed=0)

DEFAULTS = {
    "gen": dict(out=None, seed=0, configs=10, alpha_min=-2.0, alpha_max=3.0,
                resolution=dg.DEFAULT_RESOLUTION),
    "embed": dict(mesh=None, icosphere=None, filter=None, r=64, seed=0, out=None),
    "kernel-check": dict(mesh=None, icosphere=1, filter=None, r=256, seed=0, seeds=100, tolerance=5.0,
                         out=None),
    "train": dict(data=None, out=None, **TRAIN_DEFAULTS),
    "predict": dict(model=None, mesh=None, map_point="straight_nominal", out=None),
    "report": dict(model=None, pred=None, mesh=None, fields=None, map_point="straight_nominal",
                   thresholds="0.01,0.002", out=None),
    "sweep": dict(model=None, alpha_min=-2.0, alpha_max=4.0, alpha_steps=13, map_point="straight_nominal",
                  truth=False, out=None),
    "verify": dict(suite=None, seed=0),
    "bench": dict(levels="2,3,4,5,6,7", r=64, repeats=3, filter=None, seed=0, out=None),
}


class UsageError(Exception):
    pass


class VerificationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, *names):
    flags = {
        "seed": dict(type=int, help="random seed"),
        "r": dict(type=int, help="embedding dimension"),
        "filter": dict(help="filter coefficients c0,c1,... (default 0.25,0.5,0.25)"),
        "out": dict(help="output path"),
        "map_point": dict(help="map point name"),
        "mesh": dict(help="mesh file"),
        "model": dict(help="checkpoint file"),
    }
    for n in names:
        p.add_argument("--" + n.replace("_", "-"), dest=n, default=None, **flags[n])


def build_parser():
    parser = _Parser(prog="gist-mini", description="Spectral kernel-attention surrogate toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a manufactured dataset")
    _common(p, "out", "seed")
    p.add_argument("--configs", type=int, default=None)
    p.add_argument("--alpha-min", type=float, default=None)
    p.add_argument("--alpha-max", type=float, default=None)
    p.add_argument("--resolution", type=int, default=None)

    p = sub.add_parser("embed", help="export a spectral embedding")
    _common(p, "mesh", "filter", "r", "seed", "out")
    p.add_argument("--icosphere", type=int, default=None, help="use an icosphere of this level")

    p = sub.add_parser("kernel-check", help="compare seed-averaged estimates with the exact kernel")
    _common(p, "mesh", "filter", "r", "seed", "out")
    p.add_argument("--icosphere", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None, help="allowed standard errors")

    p = sub.add_parser("train", help="train a surrogate on a generated dataset")
    _common(p, "out", "seed", "r")
    p.add_argument("--data", default=None, help="dataset directory")
    for name, typ in (("hidden", int), ("blocks", int), ("k", int), ("epochs", int), ("lr", float),
                      ("lr_final", float), ("batch_size", int)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)

    p = sub.add_parser("predict", help="predict surface fields on a mesh")
    _common(p, "model", "mesh", "map_point", "out")

    p = sub.add_parser("report", help="per-PID load report against ground-truth fields")
    _common(p, "model", "mesh", "map_point", "out")
    p.add_argument("--pred", default=None, help="predicted field CSV (instead of --model)")
    p.add_argument("--fields", default=None, help="ground-truth field CSV")
    p.add_argument("--thresholds", default=None, help="usable,replace")

    p = sub.add_parser("sweep", help="flap-angle design sweep")
    _common(p, "model", "map_point", "out")
    p.add_argument("--alpha-min", type=float, default=None)
    p.add_argument("--alpha-max", type=float, default=None)
    p.add_argument("--alpha-steps", type=int, default=None)
    p.add_argument("--truth", action="store_true", default=None, help="add ground-truth columns")

    p = sub.add_parser("verify", help="run an invariant suite")
    p.add_argument("suite", help="one of: " + ", ".join(vf.SUITES + ("all",)))
    _common(p, "seed")

    p = sub.add_parser("bench", help="embedding scaling benchmark")
    _common(p, "r", "filter", "seed", "out")
    p.add_argument("--levels", default=None, help="icosphere levels, comma separated")
    p.add_argument("--repeats", type=int, default=None)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="JSON file with option values")
    return parser


def effective_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        with open(args.config) as fh:
            extra = json.load(fh)
        unknown = set(extra) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(extra)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _filter(cfg):
    return FilterSpec.parse(cfg["filter"]) if cfg.get("filter") else FilterSpec(DEFAULT_FILTER)


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _read(path):
    with open(path) as fh:
        return fh.read()


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _emit(cfg, text, out):
    if cfg.get("out"):
        _write(cfg["out"], text)
    else:
        out.write(text)


def _figure_path(cfg, suffix=".png"):
    return os.path.splitext(cfg["out"])[0] + suffix if cfg.get("out") else None


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.10g}"
    return x


# ---------------------------------------------------------------------------
# workflow helpers (also used by the acceptance tests)


def load_dataset(data_dir, split=None):
    """``(manifest, items)`` with items ``(Sample, mesh, FieldSample)`` sharing one mesh per configuration."""
    man = dg.load_manifest(os.path.join(data_dir, "manifest.json"))
    meshes, items = {}, []
    for s in man.samples:
        if split is not None and s.split not in split:
            continue
        if s.mesh_path not in meshes:
            mesh = load_mesh(_read(os.path.join(data_dir, s.mesh_path)))
            meshes[s.mesh_path] = mesh.with_meta(alpha_deg=s.alpha_deg, resolution=man.resolution)
        mesh = meshes[s.mesh_path]
        fields = ld.read_fields(_read(os.path.join(data_dir, s.fields_path)), mesh.n_vertices)
        items.append((s, mesh, op.make_sample(mesh, man.map_point(s.map_point).vector(), fields)))
    return man, items


def train_on_dataset(data_dir, hidden=32, blocks=3, k=16, r=256, epochs=1000, lr=0.01, lr_final=0.01,
                     batch_size=1, seed=0, callback=None):
    """Train on the manifest's ``train`` split; returns ``(model, history)``."""
    man, items = load_dataset(data_dir, split={"train"})
    if not items:
        raise UsageError("dataset has no training samples")
    data = [fs for _, _, fs in items]
    model = op.init_model(hidden=hidden, blocks=blocks, k=k, r=r, seed=seed, embed_seed=seed)
    model.norm = op.Normalizer.fit(data)
    opts = op.TrainOptions(lr=lr, epochs=epochs, seed=seed, lr_final=lr_final, batch_size=batch_size)
    model, hist = op.train(model, data, opts, callback=callback)
    model.meta.update({
        "alpha_range": list(man.training_alpha_range()),
        "resolution": man.resolution,
        "map_points": [mp.name for mp in man.map_points],
        "constants": man.constants.to_dict(),
        "n_train": len(data),
        "final_loss": hist[-1] if hist else None,
    })
    return model, hist


def _constants(model):
    c = model.meta.get("constants")
    return ld.FlowConstants.from_dict(c) if c else ld.FlowConstants()


def predict_fields(model, mesh, mp):
    emb, attn = op.prepare(model, mesh)
    return op.forward(model, op.make_sample(mesh, mp.vector()), emb, attn)


def predicted_coefficients(model, mesh, mp):
    const = _constants(model).with_yaw(mp.yaw)
    return ld.coefficients(mesh, predict_fields(model, mesh, mp), const)


def sweep_rows(model, alphas, mp, truth=False):
    lo, hi = model.meta.get("alpha_range", (-math.inf, math.inf))
    res = model.meta.get("resolution", dg.DEFAULT_RESOLUTION)
    const = _constants(model)
    rows = []
    for a in alphas:
        a = float(a)
        c = predicted_coefficients(model, gen_wing_flap(a, res), mp)
        row = {"alpha_deg": a, "cxs": c.cxs, "czs": c.czs, "efficiency": abs(c.czs) / c.cxs}
        if truth:
            t = dg.analytic_coefficients(a, mp, constants=const)
            row.update(cxs_true=t.cxs, czs_true=t.czs, efficiency_true=abs(t.czs) / t.cxs)
        row["out_of_domain"] = bool(a < lo - 1e-9 or a > hi + 1e-9)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# commands


def _mesh_arg(cfg):
    if cfg.get("mesh"):
        return load_mesh(_read(cfg["mesh"]))
    if cfg.get("icosphere") is not None:
        return gen_icosphere(int(cfg["icosphere"]))
    raise UsageError("give --mesh or --icosphere")


def cmd_gen(cfg, out):
    _need(cfg, "out")
    man = dg.generate_dataset(cfg["out"], n_configs=cfg["configs"], alpha_range=(cfg["alpha_min"], cfg["alpha_max"]),
                              seed=cfg["seed"], resolution=cfg["resolution"])
    counts = {k: len(man.split(k)) for k in ("train", "val", "test")}
    out.write(f"samples={len(man.samples)} train={counts['train']} val={counts['val']} test={counts['test']}\n")


def cmd_embed(cfg, out):
    mesh = _mesh_arg(cfg)
    emb = spectral_embed(random_walk_matrix(build_graph(mesh)), _filter(cfg), cfg["r"], cfg["seed"])
    _emit(cfg, emb.to_text(), out)


def cmd_kernel_check(cfg, out):
    mesh = _mesh_arg(cfg)
    g = build_graph(mesh)
    P = random_walk_matrix(g)
    filt, r, seeds = _filter(cfg), cfg["r"], cfg["seeds"]
    if seeds < 2:
        raise UsageError("--seeds must be at least 2")
    K = exact_kernel(P, filt)
    pairs = local_pairs(g)
    est = np.array([kernel_estimates(spectral_embed(P, filt, r, cfg["seed"] + s), pairs) for s in range(seeds)])
    kij = K[pairs[:, 0], pairs[:, 1]]
    se = np.sqrt((K[pairs[:, 0], pairs[:, 0]] * K[pairs[:, 1], pairs[:, 1]] + kij ** 2) / r / seeds)
    mean = est.mean(axis=0)
    z = np.abs(mean - kij) / se
    rows = [(int(i), int(j), _fmt(float(a)), _fmt(float(b)), _fmt(float(c)), _fmt(float(d)))
            for (i, j), a, b, c, d in zip(pairs, kij, mean, se, z)]
    _emit(cfg, _csv(["i", "j", "exact", "mean_estimate", "std_error", "z"], rows), out)
    rms = math.sqrt(float(np.mean((est - kij) ** 2)))
    ok = bool(np.all(z <= cfg["tolerance"]))
    out.write(f"# pairs={len(pairs)} rms_error={rms:.6g} max_z={z.max():.6g} status={'pass' if ok else 'fail'}\n")
    if not ok:
        raise VerificationFailure("kernel estimates outside tolerance")


def cmd_train(cfg, out):
    _need(cfg, "data", "out")
    params = {k: cfg[k] for k in TRAIN_DEFAULTS}

    def progress(epoch, value, model):
        if epoch % max(1, cfg["epochs"] // 10) == 0 or epoch == cfg["epochs"] - 1:
            out.write(f"epoch={epoch} loss={value:.6g}\n")
            out.flush()

    model, hist = train_on_dataset(cfg["data"], callback=progress, **params)
    op.save_checkpoint(model, cfg["out"])
    base = os.path.splitext(cfg["out"])[0]
    _write(base + "_history.csv", _csv(["epoch", "loss"], [(i, _fmt(h)) for i, h in enumerate(hist)]))
    if hist:
        from .plotting import training_figure

        training_figure(hist, base + "_history.png")
    out.write(f"params={model.n_params()} final_loss={hist[-1] if hist else float('nan'):.6g}\n")


def cmd_predict(cfg, out):
    _need(cfg, "model", "mesh")
    model = op.load_checkpoint(cfg["model"])
    mesh = load_mesh(_read(cfg["mesh"]))
    mp = dg.map_point(cfg["map_point"])
    _emit(cfg, ld.write_fields(predict_fields(model, mesh, mp)), out)


def _thresholds(text):
    try:
        usable, replace = (float(x) for x in str(text).split(","))
    except ValueError:
        raise UsageError("--thresholds takes two numbers: usable,replace") from None
    return usable, replace


def cmd_report(cfg, out):
    _need(cfg, "mesh", "fields")
    usable, replace = _thresholds(cfg["thresholds"])
    mesh = load_mesh(_read(cfg["mesh"]))
    mp = dg.map_point(cfg["map_point"])
    truth = ld.read_fields(_read(cfg["fields"]), mesh.n_vertices)
    if cfg.get("pred"):
        pred = ld.read_fields(_read(cfg["pred"]), mesh.n_vertices)
        const = ld.FlowConstants()
    elif cfg.get("model"):
        model = op.load_checkpoint(cfg["model"])
        pred = predict_fields(model, mesh, mp)
        const = _constants(model)
    else:
        raise UsageError("give --model or --pred")
    const = const.with_yaw(mp.yaw)
    report = ld.pid_report(ld.coefficients(mesh, pred, const), ld.coefficients(mesh, truth, const),
                           usable, replace)
    _emit(cfg, report.to_csv(), out)
    mse, r2 = ld.field_metrics(pred[:, 0], truth[:, 0])
    out.write(f"# pressure_mse={mse:.6g} pressure_r2={r2:.6g} usable={report.n_usable}/{len(report.rows)} "
              f"replace={report.n_replace}/{len(report.rows)}\n")
    fig = _figure_path(cfg)
    if fig:
        from .plotting import pid_figure

        pid_figure(report, fig)


def cmd_sweep(cfg, out):
    _need(cfg, "model")
    n = cfg["alpha_steps"]
    if n is None or n < 1:
        raise UsageError("empty alpha grid: --alpha-steps must be >= 1")
    lo, hi = cfg["alpha_min"], cfg["alpha_max"]
    if lo > hi or (n > 1 and lo == hi):
        raise UsageError("empty alpha grid: need alpha-min < alpha-max")
    if lo < ALPHA_RANGE[0] or hi > ALPHA_RANGE[1]:
        raise UsageError(f"alpha grid outside geometry bounds {ALPHA_RANGE}")
    model = op.load_checkpoint(cfg["model"])
    mp = dg.map_point(cfg["map_point"])
    alphas = np.round(np.linspace(lo, hi, n), 12)
    rows = sweep_rows(model, alphas, mp, truth=bool(cfg["truth"]))
    header = list(rows[0].keys())
    _emit(cfg, _csv(header, [[_fmt(r[h]) for h in header] for r in rows]), out)
    fig = _figure_path(cfg)
    if fig:
        from .plotting import sweep_figure

        sweep_figure(rows, fig, model.meta.get("alpha_range"))


def cmd_verify(cfg, out):
    suite = cfg["suite"]
    if suite not in vf.SUITES + ("all",):
        raise UsageError(f"unknown suite {suite!r}; valid: {', '.join(vf.SUITES + ('all',))}")
    checks = vf.run_suite(suite, seed=cfg["seed"])
    for c in checks:
        out.write(str(c) + "\n")
    failed = [c.name for c in checks if not c.passed]
    out.write(f"# suite={suite} checks={len(checks)} failed={len(failed)}\n")
    if failed:
        raise VerificationFailure(", ".join(failed))


def cmd_bench(cfg, out):
    try:
        levels = [int(x) for x in str(cfg["levels"]).split(",") if x.strip()]
    except ValueError:
        raise UsageError("--levels takes comma-separated integers") from None
    if not levels:
        raise UsageError("no sizes given")
    rows, slope = scaling_bench(levels, _filter(cfg), cfg["r"], cfg["repeats"], cfg["seed"])
    _emit(cfg, _csv(["n", "seconds"], [(n, f"{t:.6g}") for n, t in rows]), out)
    out.write(f"# slope={slope:.4f}\n")
    fig = _figure_path(cfg)
    if fig and len(rows) > 1:
        from .plotting import bench_figure

        bench_figure(rows, slope, fig)


COMMANDS = {
    "gen": cmd_gen,
    "embed": cmd_embed,
    "kernel-check": cmd_kernel_check,
    "train": cmd_train,
    "predict": cmd_predict,
    "report": cmd_report,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    err = sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = effective_config(args)
        out.write("# config " + json.dumps({"command": args.command, **cfg}, sort_keys=True) + "\n")
        COMMANDS[args.command](cfg, out)
    except UsageError as e:
        err.write(f"gist-mini: usage error: {e}\n")
        return EXIT_INVALID
    except VerificationFailure as e:
        err.write(f"gist-mini: verification failed: {e}\n")
        return EXIT_VERIFY
    except (GistError, ValueError, IndexError, KeyError) as e:
        err.write(f"gist-mini: invalid input: {e}\n")
        return EXIT_INVALID
    except OSError as e:
        err.write(f"gist-mini: I/O error: {e}\n")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
