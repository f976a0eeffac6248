"""Command line entry point: ``risuav {run,sweep,compare,dump-channels}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .channel import draw_channels, channel_state
from .optimizer import SCHEMES
from .scenario import PROFILES, ScenarioError, load_scenario, write_scenario
from .trajectory import straight_line, write_trajectory_csv

log = logging.getLogger("risuav")


def _scenario(args):
    if args.scenario:
        return load_scenario(args.scenario)
    return PROFILES[args.profile]()


def _common(p: argparse.ArgumentParser, seeds: bool = False) -> None:
    p.add_argument("--scenario", help="scenario YAML file (overrides --profile)")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    if seeds:
        p.add_argument("--seed", type=int, nargs="+", default=None,
                       help="seeds to run (default: 0 1 2)")
    else:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--dump-channels", action="store_true",
                   help="also write the channel draws of every seed")


def dump_channels(s, seed: int, path) -> Path:
    """Small-scale draws plus straight-line link gains, one CSV row per entry."""
    d = draw_channels(s, seed)
    q = straight_line(s)
    st = channel_state(q, np.zeros((s.num_slots, s.num_elements)), d, s)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "slot", "device", "element", "re", "im"])
        for n in range(s.num_slots):
            for i in range(s.device_count):
                g = d.direct_scatter[n, i]
                w.writerow(["direct_scatter", n + 1, i, "", f"{g.real:.9g}", f"{g.imag:.9g}"])
        for i in range(s.device_count):
            for m in range(s.num_elements):
                g = d.ris_nlos[i, m]
                w.writerow(["ris_nlos", "", i, m, f"{g.real:.9g}", f"{g.imag:.9g}"])
        for n in range(s.num_slots):
            for i in range(s.device_count):
                h = st.direct[n, i]
                w.writerow(["direct_gain", n + 1, i, "", f"{h.real:.9g}", f"{h.imag:.9g}"])
    return path


def cmd_run(args) -> int:
    s = _scenario(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row, man = harness.run_cell(args.scheme, s, args.seed)
    harness.write_manifest(man, out / "runs")
    harness.emit_csv(harness.ResultTable([row]), out / "run.csv")
    if row["status"] == "error":
        log.error("run failed: %s", row["error"])
        return 1
    from .energy import DecisionVariables
    from .optimizer import RunRecord
    z = DecisionVariables.from_dict(man["solution"])
    write_trajectory_csv(z.trajectory, s, out / f"trajectory_{args.scheme}_seed{args.seed}.csv")
    (out / "record.json").write_text(RunRecord.from_dict(man["record"]).dumps())
    harness.emit_convergence_plot(RunRecord.from_dict(man["record"]), out / "convergence.svg")
    write_scenario(s, out / "scenario.yaml")
    if args.dump_channels:
        dump_channels(s, args.seed, out / f"channels_seed{args.seed}.csv")
    print(f"{args.scheme} seed={args.seed} status={row['status']} EE={row['ee']:.6g} bit/J "
          f"outer={row['outer_iterations']}")
    return 0


def cmd_sweep(args) -> int:
    s = _scenario(args)
    if args.spec:
        spec = harness.load_sweep(args.spec)
    else:
        spec = harness.PRESETS[args.preset]
    if args.seed is not None:
        spec = harness.SweepSpec(spec.parameter, spec.values, spec.schemes, tuple(args.seed))
    out = Path(args.out_dir)
    table = harness.run_sweep(spec, s, jobs=args.jobs, manifest_dir=out / "runs")
    files = harness.write_sweep_outputs(table, spec, out)
    if args.dump_channels:
        for seed in spec.seeds:
            dump_channels(s, seed, out / f"channels_seed{seed}.csv")
    for sc in table.schemes():
        xs, ys = table.mean_by_value("ee", sc)
        print(sc, " ".join(f"{x:g}:{y:.6g}" for x, y in zip(xs, ys)))
    print("wrote", ", ".join(str(p) for p in files.values()))
    return 0


def cmd_compare(args) -> int:
    s = _scenario(args)
    seeds = args.seed if args.seed is not None else [0, 1, 2]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, manifests = harness.run_compare(s, seeds, args.schemes, args.jobs, out / "runs")
    harness.emit_csv(table, out / "compare.csv")
    paths = {}
    for man in manifests:
        row = man["row"]
        if row["seed"] == seeds[0] and "solution" in man:
            paths[row["scheme"]] = np.asarray(man["solution"]["trajectory"])
    if paths:
        harness.emit_trajectory_plot(paths, s, out / f"trajectories_seed{seeds[0]}.svg")
    if args.dump_channels:
        for seed in seeds:
            dump_channels(s, seed, out / f"channels_seed{seed}.csv")
    for sc in table.schemes():
        ee = [r["ee"] for r in table.rows if r["scheme"] == sc]
        print(f"{sc:14s} mean EE {np.nanmean(ee):.6g} bit/J")
    return 0


def cmd_dump(args) -> int:
    s = _scenario(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = dump_channels(s, args.seed, out / f"channels_seed{args.seed}.csv")
    print("wrote", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="risuav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimise one scenario")
    _common(r)
    r.add_argument("--scheme", choices=list(SCHEMES), default="proposed")
    r.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="sweep one parameter")
    sw.add_argument("spec", nargs="?", help="sweep spec YAML file")
    sw.add_argument("--preset", choices=sorted(harness.PRESETS), default="elements")
    _common(sw, seeds=True)
    sw.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="run every scheme on one scenario")
    _common(c, seeds=True)
    c.add_argument("--schemes", nargs="+", choices=list(SCHEMES), default=list(SCHEMES))
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("dump-channels", help="write the channel draws of a seed")
    _common(d)
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, harness.SweepSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
