"""Command-line entry point: ``mmtf <command> --config run.cfg [flags]``.

The config file is flat ``section.key = value`` text; ``#`` starts a comment.
Every flag can also be given as ``--set section.key=value``. All artifacts are
written under ``--out-dir`` and carry the resolved config, either as ``# ``
header lines (CSV) or under the ``config`` key (JSON).

Exit codes: 0 success, 2 invalid input, 3 numerical or resolution failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import energy as en
from . import limits as lim
from . import meanfield as mf
from .cutoff import make_profile
from .fields import Magnetization, grid_for, make_field, read_field_csv, write_field_csv, cell_distance
from .geometry import ResolutionError, make_domain
from .minimize import DivergentStep, DiscreteFunctional, MinimizeOptions, clamped_cells, minimize

COMMANDS = ("domain", "energy", "sweep", "asymptotics", "minimize", "meanfield")

DEFAULTS = {
    "domain.kind": "disk", "domain.a": "1.0", "domain.b": "1.0", "domain.star_eps": "0.1",
    "domain.star_k": "5", "domain.eps_cap": "0.25",
    "cutoff.kind": "linear", "cutoff.a": "0.5",
    "regime.name": "nonlocal", "regime.alpha": "0", "regime.beta_z": "0", "regime.lambda": "0",
    "regime.gamma": "1", "regime.nu": "1", "regime.eps": "0.0625",
    "grid.n": "96", "grid.padding": "0",
    "field.init": "uniform", "field.r0": "0.3", "field.polarity": "1", "field.chirality": "1",
    "field.angle": "0.3", "field.r_cut": "", "field.file": "",
    "sweep.eps_from": "0.0625", "sweep.eps_to": "0.000244140625", "sweep.mode": "",
    "sweep.path": "layer", "sweep.n_nodes": "1024",
    "asymptotics.eps_from": "0.0625", "asymptotics.eps_to": "0.000244140625",
    "asymptotics.probes": "4",
    "minimize.max_iter": "2000", "minimize.tol": "1e-6", "minimize.clamp": "free",
    "minimize.step_rule": "backtracking",
    "meanfield.beta": "6", "meanfield.j0": "1", "meanfield.delta": "1", "meanfield.x_max": "10",
    "meanfield.n_samples": "501",
    "io.out_dir": ".", "seed": "0",
}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    cfg = {}
    for k, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {k}: expected `section.key = value`")
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {k}: empty key")
        cfg[key] = val
    return cfg


def _f(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from exc


def _i(cfg, key) -> int:
    v = _f(cfg, key)
    if v != int(v):
        raise ConfigError(f"{key} must be an integer")
    return int(v)


def _dyadic(a: float, b: float, steps: int | None):
    """Dyadic eps list from a down to b (both powers of two are not required)."""
    if not (0 < b <= a < 1):
        raise ConfigError("need 0 < eps_to <= eps_from < 1")
    if steps:
        k = np.linspace(math.log2(a), math.log2(b), steps)
        return [float(2.0 ** x) for x in k]
    n = int(round(math.log2(a / b)))
    return [a * 2.0 ** -j for j in range(n + 1)]


# ------------------------------------------------------------------ builders
def build_domain(cfg):
    kind = cfg["domain.kind"]
    if kind == "disk":
        params = {"r": _f(cfg, "domain.a")}
    elif kind == "ellipse":
        params = {"a": _f(cfg, "domain.a"), "b": _f(cfg, "domain.b")}
    elif kind in ("star", "smooth-star"):
        params = {"a": _f(cfg, "domain.a"), "star_eps": _f(cfg, "domain.star_eps"),
                  "star_k": _i(cfg, "domain.star_k")}
    else:
        raise ConfigError(f"unknown domain kind {kind!r}")
    return make_domain(kind, params, eps_cap=_f(cfg, "domain.eps_cap"))


def build_regime(cfg, eps=None):
    name = lim.regime_tag(cfg["regime.name"])
    kw = dict(alpha=_f(cfg, "regime.alpha"), beta_z=_f(cfg, "regime.beta_z"),
              lam=_f(cfg, "regime.lambda"), eps=eps)
    if name == "KS":
        kw["gamma"] = _f(cfg, "regime.gamma")
    elif name == "ClampedNonlocal":
        kw["nu"] = _f(cfg, "regime.nu")
    elif cfg.get("regime.schedule"):
        kw["schedule"] = cfg["regime.schedule"]
    return lim.RegimeParams(name, **kw)


def build_field(cfg, dom, eps=0.0):
    path = cfg.get("field.file", "")
    if path:
        if not Path(path).exists():
            raise ConfigError(f"field file {path} does not exist")
        fld = read_field_csv(path)
        dist = cell_distance(dom, fld.grid)
        return Magnetization(fld.grid, fld.values, fld.mask, dist)
    margin = _f(cfg, "grid.padding") + eps
    grid = grid_for(dom, _i(cfg, "grid.n"), margin=margin)
    init = cfg["field.init"]
    opts = {}
    if init == "skyrmion":
        init = "neel_skyrmion"
    if init == "neel_skyrmion":
        opts = dict(r0=_f(cfg, "field.r0"), polarity=_f(cfg, "field.polarity"),
                    chirality=_f(cfg, "field.chirality"))
        if cfg.get("field.r_cut"):
            opts["r_cut"] = _f(cfg, "field.r_cut")
    elif init == "tilted":
        opts = dict(angle=_f(cfg, "field.angle"))
    elif init == "random":
        opts = dict(seed=_i(cfg, "seed"), smooth=0.1)
    elif init == "uniform" and cfg.get("field.u"):
        opts = dict(u=[float(x) for x in cfg["field.u"].split(",")])
    return make_field(grid, dom, init, eps=eps, **opts)


# ------------------------------------------------------------------ output helpers
def _json_dump(path: Path, payload: dict, cfg: dict):
    payload = dict(payload)
    payload["config"] = dict(sorted(cfg.items()))
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _header(cfg) -> str:
    return "config: " + json.dumps(dict(sorted(cfg.items())), sort_keys=True)


def _csv(path: Path, columns, rows, cfg):
    lines = ["# " + _header(cfg), ",".join(columns)]
    for r in rows:
        lines.append(",".join(f"{float(v):.17g}" for v in r))
    path.write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ commands
def cmd_domain(cfg, out: Path):
    dom = build_domain(cfg)
    _json_dump(out / "domain.json", {
        "perimeter": dom.perimeter, "area": dom.area, "diameter": dom.diameter,
        "max_curvature": dom.boundary.max_curvature, "eps_bar": dom.eps_bar,
        "bounding_box": list(dom.bounding_box)}, cfg)


def cmd_energy(cfg, out: Path):
    dom = build_domain(cfg)
    prof = make_profile(cfg["cutoff.kind"], _f(cfg, "cutoff.a"))
    eps = _f(cfg, "regime.eps")
    reg = build_regime(cfg, eps)
    fld = build_field(cfg, dom, eps)
    if not np.any(fld.mask & (fld.dist >= 0)):
        fld = lim.recovery_sequence(fld, dom, eps, "reflect")
    br = en.total_G_eps(fld, prof, dom, reg, eps, cfg.get("energy.method", "fft"))
    _json_dump(out / "energy.json", br.to_dict(), cfg)


def cmd_sweep(cfg, out: Path):
    dom = build_domain(cfg)
    prof = make_profile(cfg["cutoff.kind"], _f(cfg, "cutoff.a"))
    reg = build_regime(cfg)
    fld = build_field(cfg, dom, 0.0)
    steps = _i(cfg, "sweep.eps_steps") if cfg.get("sweep.eps_steps") else None
    eps_list = _dyadic(_f(cfg, "sweep.eps_from"), _f(cfg, "sweep.eps_to"), steps)
    path = cfg["sweep.path"]
    mode = cfg["sweep.mode"] or ("constant_e3" if reg.regime.startswith("Clamped")
                                 else ("normal" if path == "layer" else "reflect"))
    rows = lim.gamma_sweep(fld, dom, prof, reg, eps_list, mode=mode, path=path,
                           n_nodes=_i(cfg, "sweep.n_nodes"))
    name = cfg.get("sweep.out", "sweep.csv")
    (out / name).write_text(lim.sweep_csv(rows, _header(cfg)))


def cmd_asymptotics(cfg, out: Path):
    dom = build_domain(cfg)
    prof = make_profile(cfg["cutoff.kind"], _f(cfg, "cutoff.a"))
    steps = _i(cfg, "asymptotics.eps_steps") if cfg.get("asymptotics.eps_steps") else None
    eps_list = _dyadic(_f(cfg, "asymptotics.eps_from"), _f(cfg, "asymptotics.eps_to"), steps)
    k = _i(cfg, "asymptotics.probes")
    s = np.arange(k) * dom.perimeter / k
    pts = dom.boundary.nodes(k).points
    probes = np.concatenate([pts, 0.5 * pts], axis=0)
    cols = ["eps", "D_eps"] + [f"f_bnd_{j}" for j in range(k)] + [f"f_mid_{j}" for j in range(k)]
    rows = []
    for e in eps_list:
        rows.append([e, en.D_eps(dom, prof, e)] + list(en.f_eps(dom, prof, e, probes)))
    cfg = dict(cfg)
    cfg["asymptotics.probe_points"] = json.dumps(np.round(probes, 15).tolist())
    cfg["asymptotics.probe_arclength"] = json.dumps(s.tolist())
    _csv(out / cfg.get("asymptotics.out", "asymptotics.csv"), cols, rows, cfg)


def cmd_minimize(cfg, out: Path):
    dom = build_domain(cfg)
    reg = build_regime(cfg)
    fld = build_field(cfg, dom, 0.0)
    clamp = cfg["minimize.clamp"]
    boundary = {"free": "free", "up": "clamped_up", "down": "clamped_down"}.get(clamp)
    if boundary is None:
        raise ConfigError("minimize.clamp must be up, down or free")
    if boundary != "free":
        fld.values[clamped_cells(fld)] = (0.0, 0.0, 1.0 if clamp == "up" else -1.0)
    F = DiscreteFunctional.limit(fld, dom, reg)
    opts = MinimizeOptions(step_rule=cfg["minimize.step_rule"], max_iter=_i(cfg, "minimize.max_iter"),
                           tol=_f(cfg, "minimize.tol"), boundary=boundary, seed_tag=cfg["field.init"])
    res = minimize(fld, F, opts)
    write_field_csv(res.field, out / cfg.get("minimize.out", "field.csv"), header=_header(cfg))
    _csv(out / "energy_history.csv", ["iteration", "energy"],
         [(k, e) for k, e in enumerate(res.history)], cfg)


def cmd_meanfield(cfg, out: Path):
    p = mf.MeanFieldParams(_f(cfg, "meanfield.beta"), _f(cfg, "meanfield.j0"), _f(cfg, "meanfield.delta"))
    s0 = mf.saturation_s0(p)
    summary = {"beta_t": p.beta_t, "j0": p.j0, "delta": p.delta, "g_delta": p.g_delta, "s0": s0}
    if cfg.get("meanfield.profile_out"):
        if s0 <= 0:
            raise ConfigError("no wall profile below the bifurcation (beta_T J0 <= 3)")
        w = mf.wall_profile(p, _f(cfg, "meanfield.x_max"), _i(cfg, "meanfield.n_samples"))
        summary["minimal_energy"] = w.minimal_energy
        _csv(out / cfg["meanfield.profile_out"], ["x", "phi"], zip(w.x, w.phi), cfg)
    if cfg.get("meanfield.beta_from"):
        betas = np.linspace(_f(cfg, "meanfield.beta_from"), _f(cfg, "meanfield.beta_to"),
                            _i(cfg, "meanfield.steps"))
        rows = mf.bifurcation_sweep(p.j0, p.delta, betas)
        _csv(out / cfg.get("meanfield.bifurcation_out", "bifurcation.csv"), ["beta_t", "s0"], rows, cfg)
    _json_dump(out / "meanfield.json", summary, cfg)


HANDLERS = {"domain": cmd_domain, "energy": cmd_energy, "sweep": cmd_sweep,
            "asymptotics": cmd_asymptotics, "minimize": cmd_minimize, "meanfield": cmd_meanfield}

# flag name -> config key
FLAG_KEYS = {
    "field": "field.file", "regime": "regime.name", "eps": "regime.eps", "method": "energy.method",
    "eps_from": "sweep.eps_from", "eps_to": "sweep.eps_to", "eps_steps": "sweep.eps_steps",
    "out": None, "lam": "regime.lambda", "nu": "regime.nu", "gamma": "regime.gamma",
    "clamp": "minimize.clamp", "init": "field.init", "beta": "meanfield.beta", "j0": "meanfield.j0",
    "delta": "meanfield.delta", "profile_out": "meanfield.profile_out",
    "beta_from": "meanfield.beta_from", "beta_to": "meanfield.beta_to", "steps": "meanfield.steps",
}
OUT_KEYS = {"sweep": "sweep.out", "minimize": "minimize.out", "asymptotics": "asymptotics.out",
            "energy": None, "domain": None, "meanfield": None}


def make_parser():
    ap = argparse.ArgumentParser(prog="mmtf", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat section.key = value file")
    ap.add_argument("--out-dir", dest="out_dir")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--field")
    ap.add_argument("--regime", choices=("gj", "ks", "clamped", "nonlocal"))
    ap.add_argument("--eps")
    ap.add_argument("--method", choices=("direct", "fft"))
    ap.add_argument("--eps-from", dest="eps_from")
    ap.add_argument("--eps-to", dest="eps_to")
    ap.add_argument("--eps-steps", dest="eps_steps")
    ap.add_argument("--out")
    ap.add_argument("--lambda", dest="lam")
    ap.add_argument("--nu")
    ap.add_argument("--gamma")
    ap.add_argument("--clamp", choices=("up", "down", "free"))
    ap.add_argument("--init", choices=("skyrmion", "uniform", "random", "tilted", "hedgehog"))
    ap.add_argument("--beta")
    ap.add_argument("--j0")
    ap.add_argument("--delta")
    ap.add_argument("--profile-out", dest="profile_out")
    ap.add_argument("--beta-from", dest="beta_from")
    ap.add_argument("--beta-to", dest="beta_to")
    ap.add_argument("--steps")
    return ap


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg.update(parse_config(path.read_text()))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if flag == "out":
            key = OUT_KEYS.get(args.command)
            if key is None:
                continue
            val = Path(val).name
        cfg[key] = str(val)
    if args.out_dir:
        cfg["io.out_dir"] = args.out_dir
    return cfg


def run(argv=None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["io.out_dir"])
        threads = os.environ.get("MMTF_THREADS")
        workers = max(1, int(threads)) if threads else 1
        out.mkdir(parents=True, exist_ok=True)
        with sfft.set_workers(workers):
            HANDLERS[args.command](cfg, out)
    except (ResolutionError, DivergentStep, FloatingPointError, ArithmeticError) as exc:
        print(f"mmtf: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"mmtf: invalid input: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
