"""``nqcs`` command line: tradeoff | simulate | verify | example.

Exit codes: 0 success, 1 configuration or validation failure, 2 analytic
diagnostic (no positive transmission interval), 3 runtime model violation
(saturation, Zeno behaviour, failed trace invariant).
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys

from . import __version__, backend_name
from . import config as cfg
from .errors import (ConfigurationError, IntegrationDiverged, NqcsError, SaturationError,
                     ZenoDetected)
from .io import write_csv, write_json, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_DIAGNOSTIC, EXIT_RUNTIME = 0, 1, 2, 3


class _Outcome:
    def __init__(self, outdir):
        self.outdir = outdir
        self.files = []
        self.code = EXIT_OK
        self.report = {}

    def path(self, name):
        p = os.path.join(self.outdir, name)
        self.files.append(p)
        return p


# --------------------------------------------------------------------------
# builders shared by commands


def build_combo(table):
    from .quantization import QuantizerSpec
    from .scheduling import Combo, ProtocolKind

    proto = ProtocolKind(table["protocol"], tuple(table["node_dims"]), n_df=table["n_df"],
                         n_ct=table["n_ct"], n_f=table["n_f"])
    kind = table["quantizer"]
    if kind == "zoom":
        for k in ("delta", "m", "omega"):
            if table[k] is None:
                raise ConfigurationError(f"missing required key 'combo.{k}' for a zoom quantizer")
        q = QuantizerSpec.zoom(proto.node_dims, table["delta"], table["m"], table["omega"],
                               deadzone=table["deadzone"])
    elif kind == "box":
        if table["n_levels"] is None:
            raise ConfigurationError("missing required key 'combo.n_levels' for a box quantizer")
        q = QuantizerSpec.box(proto.node_dims, table["n_levels"], deadzone=table["deadzone"])
    elif kind == "uniform":
        q = QuantizerSpec.uniform(proto.node_dims, table["delta"], table["m"],
                                  deadzone=table["deadzone"])
    else:
        raise ConfigurationError(f"bad value for 'combo.quantizer': {kind!r}")
    return Combo(proto, q, table["varpi"], alpha=table["alpha"])


def tradeoff_params(conf):
    from .manipulator import SQRT3, ManipulatorParams, printed_tradeoff_params
    from .scheduling import GrowthBounds, uges_constants
    from .tradeoff import TradeoffParams

    t = conf["tradeoff"]
    values = {}
    notes = {}
    if t["preset"]:
        if t["preset"] != "manipulator":
            raise ConfigurationError(f"bad value for 'tradeoff.preset': {t['preset']!r}")
        phi00 = t["phi00"] if t["phi00"] is not None else SQRT3
        phi10 = t["phi10"] if t["phi10"] is not None else SQRT3
        rho0 = t["rho0"] if t["rho0"] is not None else 1.0
        base = printed_tradeoff_params(t["protocol"], phi00, phi10, ManipulatorParams(rho0=rho0))
        values.update(base.to_dict())
        notes["source"] = f"manipulator preset ({t['protocol']})"
    if "combo" in conf:
        combo = build_combo(conf["combo"])
        growth = None
        if conf["combo"]["M_e"] is not None:
            growth = GrowthBounds(conf["combo"]["M_e"], conf["combo"]["M_f"])
        cert = uges_constants(combo, growth=growth)
        values["lam"] = cert.lam
        if cert.L0 is not None:
            values["L0"], values["L1"] = cert.L0, cert.L1
        notes["certificate"] = cert.to_dict()
        if t["rho0"] is not None and t["rho1"] is None:
            values["rho1"] = t["rho0"] * cert.lam2 / cert.lam1
    for k in cfg._TRADEOFF_KEYS:
        if t[k] is not None:
            values[k] = t[k]
    for k in cfg._TRADEOFF_KEYS:
        if k not in values:
            raise ConfigurationError(f"missing required key 'tradeoff.{k}'")
    return TradeoffParams(**values), notes


# --------------------------------------------------------------------------
# commands


def cmd_tradeoff(conf, out: _Outcome):
    from .tradeoff import MATI_FAILS_AT_ZERO, compute_mati_mad

    params, notes = tradeoff_params(conf)
    res = compute_mati_mad(params, n_grid=conf["tradeoff"]["n_grid"])
    res.write_curve_csv(out.path("curve.csv"), stride=max(1, conf["tradeoff"]["curve_stride"]))
    result = {**res.to_dict(), **notes}
    write_json(out.path("result.json"), result)
    out.report = {"h_mati": res.h_mati, "h_mad": res.h_mad,
                  "diagnostics": res.diagnostics, "warnings": res.warnings}
    if res.h_mati == 0.0 or any(d.startswith(MATI_FAILS_AT_ZERO) for d in res.diagnostics):
        out.code = EXIT_DIAGNOSTIC
        for d in res.diagnostics:
            print(f"diagnostic: {d}", file=sys.stderr)


def _simulation_model(conf):
    from .manipulator import ManipulatorParams, make_manipulator, manipulator_protocol
    from .model import NetworkConfig, assemble
    from .quantization import QuantizerSpec

    s, q, n, r = conf["system"], conf["quantizer"], conf["network"], conf["run"]
    if s["preset"] != "manipulator":
        raise ConfigurationError(f"bad value for 'system.preset': {s['preset']!r}")
    p = ManipulatorParams(m=s["m"], a=s["a"], uf_amp=s["uf_amp"], uf_freq=s["uf_freq"])
    proto = manipulator_protocol(conf["protocol"]["tag"])
    if q["kind"] == "zoom":
        quant = QuantizerSpec.zoom(proto.node_dims, q["delta"], q["m"], q["omega"])
    elif q["kind"] == "none":
        quant = None
    else:
        raise ConfigurationError(f"bad value for 'quantizer.kind': {q['kind']!r}")
    h_bar = n["h_mati"] / (n["dropouts"] + 1)
    eps = n["eps"] if n["eps"] is not None else (n["h"] if n["h"] is not None else h_bar)
    net = NetworkConfig(eps=eps, h_mati=n["h_mati"], h_mad=n["h_mad"], dropouts=n["dropouts"],
                        interval_policy=n["interval_policy"], delay_policy=n["delay_policy"],
                        h=n["h"], tau_d=n["tau_d"], seed=r["seed"])
    model = assemble(make_manipulator(p), quant, proto, net, mu_policy=q["policy"])
    xi0 = model.initial_state(r["eta0"], r["xrf0"], mu0=q["mu0"])
    return model, xi0


def cmd_simulate(conf, out: _Outcome):
    from .model import check_trace, simulate

    model, xi0 = _simulation_model(conf)
    r = conf["run"]
    trace = simulate(model, xi0, r["T"], step=r["step"])
    trace.arc.to_csv(out.path("trace.csv"))
    write_csv(out.path("events.csv"), ["kind", "t", "node", "eps_norm"], trace.events)
    write_json(out.path("metrics.json"), trace.metrics)
    invariants = [c.to_dict() for c in check_trace(trace)] if r["check"] else []
    out.report = {"metrics": trace.metrics, "invariants": invariants}
    failed = [c["name"] for c in invariants if not c["ok"]]
    if failed:
        out.code = EXIT_RUNTIME
        print("invariant failed: " + ", ".join(failed), file=sys.stderr)


def cmd_verify(conf, out: _Outcome):
    from .quantization import QuantizerState, sector_grid, verify_sector
    from .scheduling import uges_constants, verify_uges

    v = conf["verify"]
    combo = build_combo(conf["combo"])
    suites = [s.strip() for s in v["suites"].split(",") if s.strip()]
    unknown = [s for s in suites if s not in ("uges", "sector")]
    if unknown:
        raise ConfigurationError(f"bad value for 'verify.suites': unknown suite {unknown[0]!r}")
    results, failed = {}, []
    if "uges" in suites:
        cert = uges_constants(combo)
        if v["lam"] is not None:
            cert = dataclasses.replace(cert, lam=v["lam"], lam1=v["lam"])
        rep = verify_uges(combo, samples=v["samples"], seed=v["seed"], cert=cert,
                          slack=v["slack"])
        results["uges"] = {"certificate": cert.to_dict(), "report": rep.to_dict()}
        if rep.n_used == 0:
            failed.append("uges.no_usable_samples")
        failed += [f"uges.{k}" for k, ok in rep.checks.items() if not ok]
    if "sector" in suites:
        spec = combo.quantizer
        state = QuantizerState.initial(spec, mu=v["mu"])
        grids = [sector_grid(spec, state, j, count=v["sector_points"]) for j in range(spec.l)]
        rep = verify_sector(spec, state, grids)
        results["sector"] = rep.to_dict()
        failed += [f"sector.node{n.node}" for n in rep.nodes if not n.passed()]
    out.report = {"combo": combo.name, "suites": results, "failed_checks": failed,
                  "passed": not failed}
    if failed:
        out.code = EXIT_CONFIG
        print("failed checks: " + ", ".join(failed), file=sys.stderr)


def cmd_example(conf, out: _Outcome):
    from .manipulator import reproduce_figures

    e = conf["example"]
    if e["preset"] != "manipulator":
        raise ConfigurationError(f"bad value for 'example.preset': {e['preset']!r}")
    files = reproduce_figures(out.outdir, T=e["T"], n_grid=e["n_grid"], step=e["step"],
                              curve_stride=max(1, e["curve_stride"]))
    out.files += files
    out.report = {"files": [os.path.basename(f) for f in files]}


COMMANDS = {"tradeoff": cmd_tradeoff, "simulate": cmd_simulate, "verify": cmd_verify,
            "example": cmd_example}


def build_parser():
    ap = argparse.ArgumentParser(prog="nqcs", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"nqcs {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", help="INI or JSON config file")
        sp.add_argument("-o", "--out", default=f"run-{name}", help="output directory")
        sp.add_argument("-s", "--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, help="shorthand for the command's seed key")
    return ap


_SEED_KEY = {"simulate": "run.seed", "verify": "verify.seed"}


def run(command, config_path=None, outdir="run", overrides=()):
    """Execute one command; returns (exit code, report dict)."""
    outdir = os.path.abspath(outdir)
    config_path = os.path.abspath(config_path) if config_path else None
    try:
        conf = cfg.load(command, config_path, overrides)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"status": "error", "error": str(exc)}
    os.makedirs(outdir, exist_ok=True)
    out = _Outcome(outdir)
    write_json(out.path("effective-config.json"), {"command": command, **conf})
    error = None
    try:
        COMMANDS[command](conf, out)
    except SaturationError as exc:
        out.code = EXIT_RUNTIME
        error = {"type": "saturation", "message": str(exc), "node": exc.node,
                 "time": exc.time}
    except (ZenoDetected, IntegrationDiverged) as exc:
        out.code = EXIT_RUNTIME
        error = {"type": type(exc).__name__, "message": str(exc)}
    except (NqcsError, ValueError) as exc:
        out.code = EXIT_CONFIG
        error = {"type": type(exc).__name__, "message": str(exc)}
    if error is not None:
        print(f"error: {error['message']}", file=sys.stderr)
    status = {EXIT_OK: "ok", EXIT_CONFIG: "failed", EXIT_DIAGNOSTIC: "diagnostic",
              EXIT_RUNTIME: "model-violation"}[out.code]
    report = {"command": command, "status": status, "exit_code": out.code, **out.report}
    if error is not None:
        report["error"] = error
    write_json(out.path("report.json"), report)
    write_manifest(outdir, out.files, extra={"command": command, "version": __version__,
                                             "backend": backend_name()})
    return out.code, report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        if args.command not in _SEED_KEY:
            print(f"error: --seed has no meaning for '{args.command}'", file=sys.stderr)
            return EXIT_CONFIG
        overrides.append(f"{_SEED_KEY[args.command]}={args.seed}")
    code, report = run(args.command, args.config, args.out, overrides)
    summary = {k: report[k] for k in ("status", "h_mati", "h_mad", "passed") if k in report}
    if summary:
        print(" ".join(f"{k}={_short(v)}" for k, v in summary.items()))
    return code


def _short(v):
    if isinstance(v, float) and math.isfinite(v):
        return f"{v:.6g}"
    return str(v)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
