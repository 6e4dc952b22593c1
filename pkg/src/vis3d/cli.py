"""Command line pipeline: simulate -> run -> eval -> plot.

All filter tunables live in one layered configuration: defaults, then an
optional TOML file (``[filter]`` table), then ``VIS3D_*`` environment
variables, then flags. The effective configuration is echoed next to the
outputs for provenance. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from typing import Dict, Optional

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import evaluate as ev
from . import providers, simulate
from .filter import FilterConfig
from .geometry import Cuboid
from .pipeline import run_sequence
from .plotting import TopView

ENV_PREFIX = "VIS3D_"


def _layered_config(config_path: Optional[str], flag_overrides: Dict[str, object]) -> FilterConfig:
    """file < env < flags, on top of FilterConfig defaults."""
    values = dataclasses.asdict(FilterConfig())
    if config_path:
        with open(config_path, "rb") as fh:
            data = tomllib.load(fh)
        for key, val in data.get("filter", {}).items():
            if key not in values:
                raise click.UsageError(f"unknown filter option {key!r} in {config_path}")
            values[key] = val
    for key in values:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = type(values[key])(float(env)) if not isinstance(values[key], int) \
                else int(float(env))
    for key, val in flag_overrides.items():
        if val is not None:
            values[key] = val
    try:
        return FilterConfig(**values)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid filter configuration: {exc}") from exc


def _echo_config(cfg: FilterConfig, path: str, extra: Optional[dict] = None) -> None:
    payload = {"filter": dataclasses.asdict(cfg)}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group()
def main():
    """Persistent 3D semantic object maps: simulate, run, eval, plot."""


@main.command("simulate")
@click.option("--scenario", type=str, default=None, help="Named scenario from the library.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML scene config (alternative to --scenario).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def cmd_simulate(scenario, config_path, out_dir, seed):
    """Write a synthetic sequence (poses, points, detections, gt, visibility)."""
    if (scenario is None) == (config_path is None):
        raise click.UsageError("exactly one of --scenario or --config is required")
    if config_path is not None:
        raise click.UsageError("TOML scene configs are not supported yet; use --scenario")
    library = simulate.scenario_library()
    if scenario not in library:
        raise click.UsageError(
            f"unknown scenario {scenario!r}; available: {', '.join(sorted(library))}")
    cfg = library[scenario]
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    try:
        world = simulate.build_scene(cfg, simulate.default_categories())
        counts = simulate.simulate_to_dir(world, out_dir)
    except (RuntimeError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _echo_config(FilterConfig(), os.path.join(out_dir, "run_config.json"),
                 extra={"scenario": scenario, "seed": cfg.seed,
                        "n_frames": cfg.n_frames})
    for name in sorted(counts):
        click.echo(f"{name}: {counts[name]} object(s)")
    click.echo(f"{cfg.n_frames} frames -> {out_dir}")


def _filter_flags(func):
    for name in ("tau_dom", "tau_merge", "confirm_hits", "coast_frames",
                 "longterm_frames", "chi2_gate", "scale_prior_every"):
        kind = int if name in ("confirm_hits", "coast_frames", "longterm_frames",
                               "scale_prior_every") else float
        func = click.option(f"--{name.replace('_', '-')}", name, type=kind,
                            default=None)(func)
    return func


@main.command("run")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--categories", "categories_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_filter_flags
def cmd_run(in_dir, categories_path, out_path, config_path, **flags):
    """Stream a sequence through the filter and write the state log."""
    cfg = _layered_config(config_path, flags)
    cat_path = categories_path or os.path.join(in_dir, "categories.toml")
    try:
        categories = providers.load_categories(cat_path)
        frames = providers.read_sequence(in_dir)
    except (providers.StreamFormatError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    timings = []
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            for record in run_sequence(frames, categories, cfg, timings):
                fh.write(providers.format_state_line(record) + "\n")
    except Exception as exc:  # frame context is in the message
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _echo_config(cfg, out_path + ".config.json", extra={"input": in_dir})
    for frame, dt in enumerate(timings):
        click.echo(f"frame {frame}: {dt * 1e3:.2f} ms", err=True)
    click.echo(f"{len(timings)} frames -> {out_path}")


def _parse_pos(text: str):
    return tuple(float(v) for v in text.split(","))


def _parse_ang(text: str):
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        out.append(None if token in ("none", "-") else math.radians(float(token)))
    return tuple(out)


@main.command("eval")
@click.option("--est", "est_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--vis", "vis_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["inst", "fnl"]), default="inst")
@click.option("--pos", default="0.5,1.0,1.5", help="Position thresholds, meters.")
@click.option("--ang", default="30,45,none", help="Orientation thresholds, degrees or 'none'.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_eval(est_path, gt_path, vis_path, mode, pos, ang, out_path):
    """Score a state log against ground truth restricted to visible objects."""
    try:
        thresholds = ev.EvalThresholds(position=_parse_pos(pos), orientation=_parse_ang(ang))
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        log = providers.read_state_log(est_path)
        gt = providers.read_ground_truth(gt_path)
        vis = providers.read_visibility(vis_path)
        record = ev.evaluate_run(log, gt, vis, mode, thresholds)
    except (providers.StreamFormatError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(ev.render_table(record, label=mode))
    if out_path:
        ev.write_csv(record, out_path)
        click.echo(f"report -> {out_path}")


@main.command("plot")
@click.option("--est", "est_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None)
@click.option("--poses", "poses_path", type=click.Path(exists=True), default=None,
              help="poses.jsonl for the camera trajectory.")
@click.option("--frame", type=int, default=None, help="Frame to plot (default: last).")
@click.option("--all", "all_frames", is_flag=True, help="One SVG per frame.")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_plot(est_path, gt_path, poses_path, frame, all_frames, out_path):
    """Render a top view of estimated vs ground-truth footprints."""
    try:
        log = providers.read_state_log(est_path)
        gt = providers.read_ground_truth(gt_path) if gt_path else []
        trajectory = []
        if poses_path:
            for _frame, _time, pose, _intr in providers.read_pose_stream(poses_path):
                trajectory.append((pose.t[0], pose.t[1]))
    except (providers.StreamFormatError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    def render_one(objects, path):
        view = TopView()
        view.add_trajectory(trajectory)
        view.add_ground_truth(gt)
        view.add_estimates([
            Cuboid(np.asarray(o["center"]), float(o["yaw"]), np.asarray(o["dims"]))
            for o in objects])
        view.write(path)

    if all_frames:
        base, ext = os.path.splitext(out_path)
        ext = ext or ".svg"
        for record in log:
            render_one(record["objects"], f"{base}_{record['frame']:04d}{ext}")
        click.echo(f"{len(log)} frames -> {base}_*{ext}")
    else:
        if frame is None:
            objects = log[-1]["objects"] if log else []
        else:
            by_frame = {r["frame"]: r for r in log}
            if frame not in by_frame:
                click.echo(f"error: frame {frame} not in state log", err=True)
                sys.exit(1)
            objects = by_frame[frame]["objects"]
        render_one(objects, out_path)
        click.echo(f"-> {out_path}")


if __name__ == "__main__":
    main()
