"""Command-line entry point: ``ubiloc run|sweep|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from ubiloc import evalharness as ev
from ubiloc.multilateration import run_trajectory
from ubiloc.selector import SelectionKind, SelectionPolicy
from ubiloc.simenv import BUNDLED, Scenario, ScenarioError, anchors_collinear, bundled_scenario, load_scenario

log = logging.getLogger("ubiloc")

SELECTIONS = [k.value for k in SelectionKind]


def parse_values(text: str) -> List[str]:
    """Comma list with optional integer ranges: ``1..12``, ``3,6,9``, ``all,nearest``."""
    out: List[str] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            try:
                a, b = int(lo), int(hi)
            except ValueError:
                raise ValueError(f"bad range {part!r}") from None
            if b < a:
                raise ValueError(f"empty range {part!r}")
            out.extend(str(i) for i in range(a, b + 1))
        else:
            out.append(part)
    if not out:
        raise ValueError("no values given")
    return out


def resolve_scenario(ref: str, seed: Optional[int]) -> Scenario:
    """Load a scenario file; a bare bundled name (``campus``) also works."""
    path = Path(ref)
    if path.exists():
        sc = load_scenario(path)
    elif ref in BUNDLED or (path.suffix == ".json" and path.stem in BUNDLED and path.parent == Path(".")):
        sc = bundled_scenario(path.stem)
    else:
        raise ScenarioError(f"scenario file not found: {ref}")
    if seed is not None:
        sc = sc.with_seed(seed)
    if anchors_collinear(sc.anchors):
        log.warning("scenario %s: anchors are collinear; multilateration will be degenerate", sc.name)
    return sc


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario, args.seed)
    policy = SelectionPolicy(SelectionKind.parse(args.selection), args.k)
    records = run_trajectory(sc, policy)
    if not records:
        raise RuntimeError("the localizer never activated; no indoor poses to evaluate")
    series = ev.compute_errors(records)
    out = _out_dir(args.out)
    ev.atomic_write_text(out / "poses.csv", ev.pose_csv(records))
    ev.atomic_write_text(out / "cdf.csv", ev.cdf_csv(ev.cdf(series)))
    ev.atomic_write_text(out / "summary.json", ev.summary_json(series, sc, policy))
    s = ev.summarize(series)
    print(f"{sc.name}: {s['n_poses']} poses, median {s['median_m']:.3f} m, p90 {s['p90_m']:.3f} m")
    return 0


def cmd_sweep(args) -> int:
    sc = resolve_scenario(args.scenario, args.seed)
    axis = ev.Axis.parse(args.axis)
    values = ev.check_sweep_values(sc, axis, parse_values(args.values))
    policy = SelectionPolicy(SelectionKind.parse(args.selection), args.k)
    rows = ev.sweep(sc, axis, values, args.reps, policy)
    out = _out_dir(args.out)
    ev.atomic_write_text(out / f"sweep_{axis.value}.csv", ev.sweep_csv(rows))
    for r in rows:
        print(f"{axis.value}={r.axis_value}: median {r.median_m:.3f} m, p90 {r.p90_m:.3f} m, mean {r.mean_m:.3f} m")
    return 0


def cmd_validate(args) -> int:
    sc = resolve_scenario(args.scenario, args.seed)
    print(f"{sc.name}: ok ({len(sc.anchors)} anchors, {len(sc.walls)} walls, {len(sc.waypoints)} waypoints)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ubiloc", description="Anchor-based indoor localization simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file or bundled name (campus, apartment)")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    def policy_opts(sp):
        sp.add_argument("--selection", choices=SELECTIONS, default="nearest")
        sp.add_argument("--k", type=int, default=6)
        sp.add_argument("--out", default="out", help="output directory")

    run = sub.add_parser("run", help="simulate one walk and write per-pose, CDF and summary files")
    common(run)
    policy_opts(run)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="sweep one parameter and write a summary table")
    common(sw)
    policy_opts(sw)
    sw.add_argument("--axis", required=True, choices=[a.value for a in ev.Axis])
    sw.add_argument("--values", required=True, help="e.g. 1..12 or all,nearest,farthest")
    sw.add_argument("--reps", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="parse and check a scenario without running it")
    common(val)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "k", 1) < 1:
        parser.error("--k must be >= 1")
    if getattr(args, "reps", 1) < 1:
        parser.error("--reps must be >= 1")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError, RuntimeError) as exc:
        print(f"ubiloc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
