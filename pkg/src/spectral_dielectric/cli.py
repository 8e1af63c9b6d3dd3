"""Command-line entry points: ``forward``, ``make-data`` and ``reconstruct``.

Every command reads one JSON configuration document with a top-level
``"version": 1``. A malformed configuration exits with status 2 and a
diagnostic naming the offending line or field; solver failures exit with
status 1.

forward
    ``{"shape": {"label": "peanut", "params": {}}, "dielectric": {...},
    "n_list": [5, 10, 15, 20], "n_far": 25, "n_inner": null,
    "source": [x, y, z], "polarization": [1, 0, 0], "direction": [0, 0, 1]}``
    writes the convergence report CSV.
make-data
    ``{"truth": shape, "dielectric": {...}, "incidents": [{"d": ..., "p": ...}],
    "noise_level": 0.01, "n_fwd": 10, "n_synth": 15, "n_far": 12, "seed": 0}``
    writes a measurement JSON document.
reconstruct
    ``{"initial": shape, "irgnm": {...}}`` together with ``--data`` writes the
    final star shape and a JSON-lines iterate history.

Shapes for the inverse commands are star shapes given as
``{"label": "sphere", "params": {"radius": r}}``,
``{"label": "star", "params": {"n_r": ..., "coeffs": [[l, j, re, im], ...]}}``
or ``{"label": "peanut_star", "params": {"n_r": ...}}``.
"""

import argparse
import json
import sys

import numpy as np

from . import geometry as geo
from .assembly import DielectricConfig
from .forward_solver import PlaneWave, convergence_experiment, write_report_csv
from .irgnm import IrgnmConfig, MeasurementSet, read_history, run_irgnm, synthesize_data

__all__ = ["ConfigError", "load_config", "main", "CONFIG_VERSION"]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration document."""


def load_config(path):
    """Read a JSON configuration and check its version."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"field 'version': expected {CONFIG_VERSION}, got {doc.get('version')!r}")
    return doc


def _field(doc, name, kind=None, default=...):
    if name not in doc:
        if default is ...:
            raise ConfigError(f"field '{name}': missing")
        return default
    value = doc[name]
    if kind is not None and value is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field '{name}': {exc}") from exc
    return value


def _vector(doc, name, default=...):
    v = _field(doc, name, default=default)
    if v is None:
        return None
    arr = np.asarray(v, dtype=float) if isinstance(v, list) else None
    if arr is None or arr.shape != (3,):
        raise ConfigError(f"field '{name}': expected a list of three numbers")
    return arr


def _dielectric(doc):
    d = _field(doc, "dielectric")
    if not isinstance(d, dict):
        raise ConfigError("field 'dielectric': expected an object")
    try:
        return DielectricConfig(float(d["kappa_e"]), float(d["kappa_i"]),
                                float(d.get("mu_e", 1.0)), float(d.get("mu_i", 1.0)))
    except KeyError as exc:
        raise ConfigError(f"field 'dielectric.{exc.args[0]}': missing") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'dielectric': {exc}") from exc


def _shape_spec(doc, name):
    spec = _field(doc, name)
    if not isinstance(spec, dict) or "label" not in spec:
        raise ConfigError(f"field '{name}': expected an object with a 'label'")
    return spec["label"], dict(spec.get("params") or {})


def _surface(doc, name="shape"):
    label, params = _shape_spec(doc, name)
    try:
        return geo.make_shape(label, params)
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"field '{name}': {exc}") from exc


def _star(doc, name):
    label, params = _shape_spec(doc, name)
    try:
        if label == "sphere":
            return geo.StarShape.sphere(float(params.get("radius", 1.0)),
                                        int(params.get("n_r", 0)))
        if label == "star":
            if "file" in params:
                return geo.StarShape.from_json(params["file"])
            return geo.StarShape.from_dict(params)
        if label == "peanut_star":
            return geo.peanut_star_approximation(int(params["n_r"]))
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"field '{name}': {exc}") from exc
    raise ConfigError(f"field '{name}.label': {label!r} is not a star shape")


def _incidents(doc):
    items = _field(doc, "incidents")
    if not isinstance(items, list) or not items:
        raise ConfigError("field 'incidents': expected a non-empty list")
    out = []
    for k, item in enumerate(items):
        try:
            out.append(PlaneWave(item["d"], item["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field 'incidents[{k}]': {exc}") from exc
    return out


def _irgnm_config(doc, threads):
    opts = _field(doc, "irgnm", default={})
    if not isinstance(opts, dict):
        raise ConfigError("field 'irgnm': expected an object")
    try:
        return IrgnmConfig(**opts, threads=threads)
    except TypeError as exc:
        raise ConfigError(f"field 'irgnm': {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"field 'irgnm': {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_forward(args):
    doc = load_config(args.config)
    param = _surface(doc)
    cfg = _dielectric(doc)
    n_list = _field(doc, "n_list")
    if not isinstance(n_list, list) or not all(isinstance(n, int) and n >= 1 for n in n_list):
        raise ConfigError("field 'n_list': expected a list of positive integers")
    n_far = _field(doc, "n_far", int, 25)
    n_inner = _field(doc, "n_inner", int, None)
    source = _vector(doc, "source", None)
    pol = _vector(doc, "polarization", [1.0, 0.0, 0.0])
    direction = _vector(doc, "direction", [0.0, 0.0, 1.0])
    if n_inner is not None and any(n_inner - n <= 3 for n in n_list):
        raise ConfigError("field 'n_inner': must exceed every n by more than 3")

    def report(row):
        print(f"{row.shape} n={row.n} err_ps={row.err_ps:.4e} "
              f"E_inf(d).p={row.re_pw:.9f}{row.im_pw:+.9f}i "
              f"assembly={row.assembly_seconds:.1f}s", flush=True)

    rows = convergence_experiment(param, cfg, n_list, n_far, n_inner, source, pol, direction,
                                  threads=args.threads, callback=report)
    write_report_csv(rows, args.out)
    return 0


def cmd_make_data(args):
    doc = load_config(args.config)
    truth = _star(doc, "truth")
    cfg = _dielectric(doc)
    incs = _incidents(doc)
    noise = _field(doc, "noise_level", float, 0.0)
    n_fwd = _field(doc, "n_fwd", int, 10)
    n_synth = _field(doc, "n_synth", int, n_fwd + 5)
    n_far = _field(doc, "n_far", int, 20)
    seed = args.seed if args.seed is not None else _field(doc, "seed", int, 0)
    if noise < 0:
        raise ConfigError("field 'noise_level': must be non-negative")
    if n_synth == n_fwd and not args.allow_inverse_crime:
        raise ConfigError("fields 'n_synth' and 'n_fwd' coincide; pass "
                          "--allow-inverse-crime to synthesize with the inversion model")
    ms = synthesize_data(truth, cfg, incs, noise, seed, n_synth, n_far, threads=args.threads)
    ms.meta["n_fwd"] = n_fwd
    ms.to_json(args.out)
    print(f"wrote {ms.m} far fields, delta={ms.delta:.4e}, |data|={ms.norm():.4e}")
    return 0


def cmd_reconstruct(args):
    doc = load_config(args.config)
    q0 = _star(doc, "initial")
    icfg = _irgnm_config(doc, args.threads)
    try:
        ms = MeasurementSet.from_json(args.data)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{args.data}: {exc}") from exc
    history = args.history or _field(doc, "history", str, None) or args.out + ".history.jsonl"
    start, start_index = None, 0
    if args.resume:
        try:
            records = read_history(args.resume)
            start = geo.StarShape.from_dict(records[-1]["r_coeffs"])
            start_index = int(records[-1]["N"])
        except (OSError, ValueError, KeyError, IndexError) as exc:
            raise ConfigError(f"{args.resume}: cannot resume: {exc}") from exc
        history = args.resume

    def log(msg):
        print(msg, flush=True)

    res = run_irgnm(ms, icfg, q0, start=start, start_index=start_index,
                    history_path=history, log=log)
    res.shape.to_json(args.out)
    print(f"stop={res.stop_reason} N={res.history[-1]['N']} residual={res.residuals[-1]:.4e} "
          f"tau*delta={icfg.tau * res.delta:.4e}")
    for flag in res.flags:
        print(f"note: {flag}")
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="spectral-dielectric",
                                description="Spectral dielectric scattering and shape reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for assembly")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("--allow-inverse-crime", action="store_true",
                        help="allow synthesizing data with the inversion discretization")

    common(sub.add_parser("forward", help="forward convergence study to CSV"))
    common(sub.add_parser("make-data", help="synthesize far-field measurements"))
    rec = sub.add_parser("reconstruct", help="regularized Newton reconstruction")
    common(rec)
    rec.add_argument("--data", required=True, help="measurement file from make-data")
    rec.add_argument("--history", default=None, help="JSON-lines iterate history")
    rec.add_argument("--resume", default=None, help="resume from a history file")
    return p


_COMMANDS = {"forward": cmd_forward, "make-data": cmd_make_data, "reconstruct": cmd_reconstruct}


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
