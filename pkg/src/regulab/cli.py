"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 violated
hypothesis (synthesis preconditions, unstable nominal loop).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .harmonics import spectrum_rows
from .internal_model import SynthesisError
from .robustness import (NominalInstabilityError, RobustnessReport, Scenario, ScenarioError,
                         _clean, run_counterexample, run_nominal, run_sweep)
from .scenarios import resolve as resolve_scenario

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return v


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--out", metavar="DIR", default=d, help="output directory")
    p.add_argument("--seed", type=_seed, default=d, help="master seed (overrides scenario)")
    p.add_argument("--jobs", type=_positive_int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker processes for sweeps")
    p.add_argument("--rtol", type=_positive_float, default=d)
    p.add_argument("--atol", type=_positive_float, default=d)
    p.add_argument("--horizon", type=_positive_float, default=d)
    p.add_argument("--tail-fraction", type=_fraction, default=d, dest="tail_fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regulab", description="Robustness experiments for "
                     "internal-model based output regulation.")
    parser.add_argument("--version", action="version", version=f"regulab {__version__}")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text, scenario=True):
        p = sub.add_parser(name, help=help_text)
        if scenario:
            p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
        _add_common(p, suppress=True)
        return p

    cmd("synth", "synthesize the Linear Regulator and print it")
    cmd("simulate", "nominal run with trajectories and error spectrum")
    p = cmd("sweep", "seeded perturbation sweep")
    p.add_argument("--samples", type=_positive_int, default=20)
    p = cmd("counterexample", "harmonic-rejection counterexample experiment", scenario=False)
    p.add_argument("--epsilon", type=_positive_float, default=0.2)
    p.add_argument("--N", type=_positive_int, default=3)
    p.add_argument("--samples", type=_positive_int, default=20)
    cmd("print-system", "print the composed closed-loop field")
    return parser


# ---------------------------------------------------------------------------

def _load(args) -> Scenario:
    sc = Scenario.from_file(resolve_scenario(args.scenario))
    overrides = {k: getattr(args, k) for k in ("horizon", "rtol", "atol", "tail_fraction")}
    if any(v is not None for v in overrides.values()):
        sc = sc.with_overrides(**overrides)
    if args.seed is not None and args.seed != sc.seed:
        raw = dict(sc.raw)
        raw["seed"] = args.seed
        sc = Scenario.from_dict(raw)
    return sc


def _out_dir(args, default: str) -> Path:
    out = Path(args.out if args.out is not None else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    text = json.dumps(_clean(data), sort_keys=True, indent=2, allow_nan=False) + "\n"
    path.write_text(text, encoding="utf-8")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_samples_csv(path: Path, report: RobustnessReport, kinds: Sequence[str],
                       extras: Sequence[dict] | None = None) -> None:
    header = ["index", "seed", "sample", "distance", "stable", "max_tail_norm"]
    for i, k in enumerate(kinds):
        header += [f"p{i + 1}_{k}_holds", f"p{i + 1}_{k}_vacuous", f"p{i + 1}_{k}_metric"]
    extra_cols = ["phi_norm", "sup_e", "abs_c0", "abs_c1", "higher_harmonic_energy"]
    if extras is not None:
        header += extra_cols
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for j, s in enumerate(report.samples):
            row = [s["index"], s["seed"][0], s["seed"][1], s["distance"], s["stable"],
                   s["max_tail_norm"]]
            for p in s["properties"]:
                row += [p["holds"], p["vacuous"], p["metric"]]
            if extras is not None:
                e = extras[j]
                cs = e.get("abs_c") or [None, None]
                row += [e.get("phi_norm"), e.get("sup_e"), cs[0], cs[1],
                        e.get("higher_harmonic_energy")]
            w.writerow([_fmt(v) for v in row])


def _cmd_synth(args) -> int:
    sc = _load(args)
    des = sc.design
    if des is None:
        raise ScenarioError("scenario does not request synthesis "
                            '(regulator must be {"synthesize": "linear-regulator"})')
    np.set_printoptions(precision=6, suppress=True)
    print(f"# Linear Regulator for {sc.name}")
    print(f"internal model order {des.im.n_eta}, characteristic coefficients a1..am = "
          f"{list(des.im.char_coeffs)}")
    print("Phi =")
    print(des.im.phi)
    print("G =")
    print(des.im.g)
    ev = np.sort_complex(des.im.eigenvalues())
    print("eig(Phi) = " + ", ".join(f"{z.real:+.6f}{z.imag:+.6f}i" for z in ev))
    print(f"K_x = {des.K_x.ravel().tolist()}")
    print(f"K_eta = {des.K_eta.ravel().tolist()}")
    print(f"L = {des.L.ravel().tolist()} (observer on output y{des.obs_row + 1})")
    print(f"controller poles = {list(des.controller_poles)}")
    print(f"observer poles = {list(des.observer_poles)}")
    print("non-resonance certificate (min singular value per eigenvalue):")
    for lam, sv in des.non_resonance.min_singular_values:
        print(f"  lambda = {lam.real:+.6f}{lam.imag:+.6f}i  sigma_min = {sv:.6g}")
    cl_ev = des.closed_loop_eigenvalues()
    print(f"max real part of closed-loop eigenvalues = {float(cl_ev.real.max()):.6g}")
    print("regulator:")
    for i, f in enumerate(des.regulator.f_c):
        print(f"  dc{i + 1}/dt = {f}")
    for i, h in enumerate(des.regulator.h_c):
        print(f"  u{i + 1} = {h}")
    if args.out is not None:
        out = _out_dir(args, ".")
        _write_json(out / "regulator.json", {"scenario_digest": sc.digest,
                                             "design": des.to_json(),
                                             "regulator": des.regulator.to_json()})
    return EXIT_OK


def _cmd_simulate(args) -> int:
    sc = _load(args)
    out = _out_dir(args, "regulab-out")
    res = run_nominal(sc, keep=True)
    report = {"scenario": sc.name, "scenario_digest": sc.digest, "seed": sc.seed,
              "simulation": sc.sim.to_json(), "nominal": res.to_json(sc.properties)}
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    for i, tr in enumerate(res.trajectories):
        tr.to_csv(tdir / f"ic{i + 1}.csv")
    cl = sc.closed_loop()
    if res.stable and res.steady_states and res.steady_states[0].period is not None:
        ss = res.steady_states[0]
        d = max([int(p.params.get("d", 0)) for p in sc.properties] + [0])
        rows = spectrum_rows(ss, cl.error_fn, ss.period, max(d + 2, 5))
        with open(out / "spectrum.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["k", "component", "re", "im", "abs"])
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        report["spectrum_period"] = ss.period
    _write_json(out / "report.json", report)
    print(f"nominal: stable={res.stable} "
          + " ".join(f"{p.kind}={'holds' if v['holds'] else 'fails'}"
                     for p, v in zip(sc.properties, res.verdicts)))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    sc = _load(args)
    if sc.perturbation.get("kind", "none") == "none":
        print("warning: scenario has no perturbation; samples equal the nominal loop",
              file=sys.stderr)
    out = _out_dir(args, "regulab-out")
    rep = run_sweep(sc, args.samples, jobs=args.jobs)
    (out / "report.json").write_text(rep.to_json_text(), encoding="utf-8")
    _write_samples_csv(out / "samples.csv", rep, [p.kind for p in sc.properties])
    agg = rep.aggregate
    print(f"all_stable={agg['all_stable']} all_property={agg['all_property']} "
          f"({agg['conclusion']})")
    return EXIT_OK


def _cmd_counterexample(args) -> int:
    out = _out_dir(args, "regulab-out")
    seed = args.seed if args.seed is not None else 0
    kw = {k: getattr(args, k) for k in ("horizon", "rtol", "atol") if getattr(args, k)}
    rep, extras = run_counterexample(args.epsilon, args.N, args.samples, seed=seed,
                                     jobs=args.jobs, **kw)
    (out / "report.json").write_text(rep.to_json_text(), encoding="utf-8")
    kinds = [p["kind"] for p in rep.samples[0]["properties"]] if rep.samples else []
    _write_samples_csv(out / "samples.csv", rep, kinds, extras)
    n_big = sum(1 for e in extras if (e.get("sup_e") or 0.0) >= 1e-2)
    print(f"embedded harmonics rejected in all samples: {rep.aggregate['all_property']}; "
          f"samples with sup|e| >= 1e-2: {n_big}/{len(extras)}")
    return EXIT_OK


def _cmd_print_system(args) -> int:
    sc = _load(args)
    print(sc.closed_loop().describe())
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "simulate": _cmd_simulate, "sweep": _cmd_sweep,
             "counterexample": _cmd_counterexample, "print-system": _cmd_print_system}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except SynthesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NominalInstabilityError as exc:
        print(f"hypothesis violated: nominal stability: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
