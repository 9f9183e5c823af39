"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (scenario validation, unknown
files), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import TestbedError, ValidationError
from .harness import run_scenario, sweep, sweep_csv
from .network import Element, FiberSpan, bundled_topology_path, load_topology
from .scenario import load_scenario_document, validate_scenario

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the scenario seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    p.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS,
                   help="report format (default: json)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="qtestbed", parents=[common],
                                     description="Campus quantum network testbed simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    lb = sub.add_parser("loss-budget", parents=[common], help="loss between two nodes")
    lb.add_argument("topology", help="topology file or bundled name")
    lb.add_argument("src")
    lb.add_argument("dst")
    lb.add_argument("--wavelength", type=float, required=True, help="wavelength in nm")
    lb.add_argument("--fiber", default=None, help="fiber strand to use (default: the span kind)")

    for name, text in (("qkd", "prepare-and-measure key exchange"),
                       ("chsh", "entanglement distribution with CHSH verification"),
                       ("calibrate", "polarization feedback calibration"),
                       ("simulate", "run a scenario as written")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("scenario", help="scenario file or bundled name")

    sw = sub.add_parser("sweep", parents=[common], help="run a scenario over a parameter grid")
    sw.add_argument("scenario")
    sw.add_argument("--grid", required=True, help="JSON grid file")
    return parser


def _topology(ref: str):
    p = Path(ref)
    return load_topology(p if p.exists() else bundled_topology_path(ref))


def _loss_budget(args, out: Path | None, fmt: str) -> None:
    topo = _topology(args.topology)
    path = topo.path(args.src, args.dst, args.fiber)
    loss = topo.loss_budget(args.src, args.dst, args.wavelength, args.fiber)
    print(f"{args.src} -> {args.dst} @ {args.wavelength:g} nm: {loss!r} dB")
    if out is None:
        return
    items = []
    for item in path:
        if isinstance(item, FiberSpan):
            items.append({"fiber": item.kind.name, "length_km": item.length_km,
                          "splices": item.splices, "connectors": item.connectors})
        elif isinstance(item, Element):
            items.append({"element": item.name, "insertion_loss_db": item.insertion_loss_db})
    doc = {"from": args.src, "to": args.dst, "wavelength_nm": args.wavelength,
           "loss_db": loss, "path": items}
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        (out / "loss_budget.csv").write_text(
            "from,to,wavelength_nm,loss_db\n"
            f"{args.src},{args.dst},{args.wavelength!r},{loss!r}\n", encoding="utf-8")
    else:
        (out / "loss_budget.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                                              encoding="utf-8")


def _document(args) -> dict:
    doc = load_scenario_document(args.scenario)
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    forced = {"qkd": "pm", "chsh": "chsh", "calibrate": "calibrate"}.get(args.command)
    if forced:
        doc["experiment"] = forced
    return doc


def _summary(report: dict) -> str:
    name = report["scenario"]
    if "key" in report:
        k = report["key"]
        return (f"{name}: {k['protocol']} {report['alice']}->{report['bob']} "
                f"slots={k['n_slots']} sifted={k['sifted_length']} qber={k['qber']:.4f} "
                f"secure_fraction={k['secure_fraction']:.4f} "
                f"key_per_slot={k['secure_key_per_slot']:.3e}")
    if "chsh" in report:
        c = report["chsh"]
        return (f"{name}: CHSH {report['alice']}<->{report['bob']} S={c['s_value']:.4f} "
                f"+/- {c['s_sigma']:.4f} coincidences={c['coincidences_per_setting']}")
    cals = report["calibrations"]
    return (f"{name}: calibration converged={report['converged']} "
            f"iterations={[c['iterations'] for c in cals]} "
            f"residual_reference_error={report['residual_reference_error']:.2e}")


def _run(args, out: Path, fmt: str) -> None:
    if args.command == "sweep":
        doc = load_scenario_document(args.scenario)
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        rows = sweep(doc, grid, master_seed=getattr(args, "seed", None))
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            text = json.dumps([{"index": r.index, "seed": r.seed, "params": r.params,
                                "values": r.values, "error": r.error} for r in rows],
                              sort_keys=True, indent=2) + "\n"
            (out / "sweep.json").write_text(text, encoding="utf-8")
        (out / "sweep.csv").write_text(sweep_csv(rows), encoding="utf-8")
        failed = sum(r.error is not None for r in rows)
        print(f"sweep: {len(rows)} points, {failed} failed -> {out / 'sweep.csv'}")
        if failed == len(rows):
            raise RuntimeError("every sweep point failed")
        return
    scenario = validate_scenario(_document(args))
    art = run_scenario(scenario)
    art.write(out, fmt)
    print(_summary(art.report))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    fmt = getattr(args, "format", "json")
    out = getattr(args, "out", None)
    try:
        if args.command == "loss-budget":
            _loss_budget(args, Path(out) if out else None, fmt)
        else:
            _run(args, Path(out or "out"), fmt)
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TestbedError, ValueError, LookupError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
