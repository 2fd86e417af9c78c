"""Command-line pipeline: synth, train, sample, eval, perturb, render.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import Config, config_dict, load_config
from .errors import NumericFailure, TrafficDiffError
from .frenet import candidates_to_dicts
from .geometry import map_from_dict, map_to_dict
from .models import InitDiffuser, TrajectoryDiffuser
from .pipeline import (evaluate, fit_codec, generate_scenario, save_report,
                       scene_candidates)
from .perturb import Perturbation, perturb_map
from .render import render_svg, save_svg
from .codec import TrajectoryPca
from .scene import scenario_to_dict
from .synth import load_dataset, save_dataset, synth_dataset

log = logging.getLogger("trafficdiff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="trafficdiff",
                description="two-stage traffic scenario generation")
    p.add_argument("--seed", type=int, default=0, help="global RNG seed")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output dataset directory")

    s = sub.add_parser("fit-codec", help="fit the trajectory PCA codec")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train-init", help="train the initialization model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train-traj", help="train the trajectory model")
    s.add_argument("--data", required=True)
    s.add_argument("--codec", default=None)
    s.add_argument("--out", required=True)

    s = sub.add_parser("sample", help="generate scenarios on a map")
    s.add_argument("--maps", required=True, help="maps.json or single map file")
    s.add_argument("--map-index", type=int, default=0)
    s.add_argument("--init-model", required=True)
    s.add_argument("--traj-model", required=True)
    s.add_argument("--n-agents", type=int, required=True)
    s.add_argument("--scenes", type=int, default=1)
    s.add_argument("--guidance", action="store_true")
    s.add_argument("--candidates-out", default=None)
    s.add_argument("--out", required=True, help="output dataset directory")

    s = sub.add_parser("eval", help="compute the metric report")
    s.add_argument("--data", required=True, help="generated dataset directory")
    s.add_argument("--gt", default=None, help="ground-truth dataset directory")
    s.add_argument("--out", required=True)

    s = sub.add_parser("perturb", help="bend or ripple the map lanes")
    s.add_argument("--kind", required=True,
                   choices=("identity", "turn", "double_turn", "ripple"))
    s.add_argument("--pivot", type=float, default=0.0)
    s.add_argument("--curvature", type=float, default=0.0)
    s.add_argument("--amplitude", type=float, default=0.0)
    s.add_argument("--wavelength", type=float, default=0.0)
    s.add_argument("infile")
    s.add_argument("outfile")

    s = sub.add_parser("render", help="write an SVG overlay")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--candidates", default=None, help="candidate dump JSON")
    s.add_argument("--out", required=True)
    return p


def _load_maps_arg(path):
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        return [map_from_dict(d) for d in doc]
    return [map_from_dict(doc)]


def _init_model(cfg: Config, seed) -> InitDiffuser:
    return InitDiffuser(
        width=cfg.width, layers=cfg.layers, t_max=cfg.t_max,
        beta_start=cfg.beta_start, beta_end=cfg.beta_end, lr=cfg.lr,
        momentum=cfg.momentum, epochs=cfg.epochs,
        p_decentralized=cfg.p_decentralized, lambda_init=cfg.lambda_init,
        m2a_radius=cfg.m2a_radius, attention=cfg.attention,
        num_types=cfg.num_types, map_stride=cfg.map_stride, seed=seed)


def _traj_model(cfg: Config, seed) -> TrajectoryDiffuser:
    return TrajectoryDiffuser(
        width=cfg.width, layers=cfg.layers, t_max=cfg.t_max,
        beta_start=cfg.beta_start, beta_end=cfg.beta_end, lr=cfg.lr,
        momentum=cfg.momentum, epochs=cfg.epochs, lambda_init=cfg.lambda_init,
        m2a_radius=cfg.m2a_radius, attention=cfg.attention, v_grid=cfg.v_grid,
        d_grid=cfg.d_grid, horizon=cfg.horizon, dt=cfg.dt,
        lane_radius=cfg.lane_radius, guidance_strength=cfg.guidance_strength,
        num_types=cfg.num_types, map_stride=cfg.map_stride, seed=seed)


def _run(args, cfg: Config):
    if args.command == "synth":
        maps, scenarios = synth_dataset(cfg, args.seed)
        save_dataset(maps, scenarios, args.out)
        log.info("wrote %d maps, %d scenarios to %s",
                 len(maps), len(scenarios), args.out)

    elif args.command == "fit-codec":
        _, scenarios = load_dataset(args.data)
        codec = fit_codec(scenarios, cfg.n_components)
        codec.save(args.out)
        log.info("codec residual bound %.4g m", codec.residual_bound_)

    elif args.command == "train-init":
        maps, scenarios = load_dataset(args.data)
        model = _init_model(cfg, args.seed)
        model.fit([sc.scene for sc in scenarios], maps)
        model.save(args.out)
        log.info("final loss %.4f", model.loss_history_[-1])

    elif args.command == "train-traj":
        maps, scenarios = load_dataset(args.data)
        codec = TrajectoryPca.load(args.codec) if args.codec else None
        model = _traj_model(cfg, args.seed)
        model.fit(scenarios, maps, codec=codec)
        model.save(args.out)
        log.info("final loss %.4f", model.loss_history_[-1])

    elif args.command == "sample":
        maps = _load_maps_arg(args.maps)
        vmap = maps[args.map_index]
        init_model = InitDiffuser.load(args.init_model)
        traj_model = TrajectoryDiffuser.load(args.traj_model)
        scenarios = []
        first_candidates = None
        for k in range(args.scenes):
            scenario, cands = generate_scenario(
                vmap, args.n_agents, init_model, traj_model,
                seed=args.seed + 2 * k, use_guidance=args.guidance, cfg=cfg)
            scenario.scene.map_ref = 0
            scenarios.append(scenario)
            if first_candidates is None:
                first_candidates = cands
        save_dataset([vmap], scenarios, args.out)
        if args.candidates_out:
            with open(args.candidates_out, "w") as fh:
                json.dump([candidates_to_dicts(c) for c in first_candidates],
                          fh, sort_keys=True)

    elif args.command == "eval":
        maps, scenarios = load_dataset(args.data)
        gt = gt_maps = None
        if args.gt:
            gt_maps, gt = load_dataset(args.gt)
        report = evaluate(scenarios, maps, gt=gt, gt_maps=gt_maps, cfg=cfg)
        save_report(report, args.out)
        log.info("report written to %s", args.out)

    elif args.command == "perturb":
        with open(args.infile) as fh:
            doc = json.load(fh)
        p = Perturbation(kind=args.kind, pivot_s=args.pivot,
                         curvature=args.curvature, amplitude=args.amplitude,
                         wavelength=args.wavelength)
        if isinstance(doc, list):
            out = [map_to_dict(perturb_map(map_from_dict(d), p)) for d in doc]
        else:
            out = map_to_dict(perturb_map(map_from_dict(doc), p))
        with open(args.outfile, "w") as fh:
            json.dump(out, fh, sort_keys=True)

    elif args.command == "render":
        maps, scenarios = load_dataset(args.data)
        scenario = scenarios[args.index]
        vmap = maps[scenario.scene.map_ref]
        candidates = None
        if args.candidates:
            from .frenet import AgentCandidates, CandidateMeta
            with open(args.candidates) as fh:
                doc = json.load(fh)
            candidates = [
                AgentCandidates(
                    np.array([c["xy"] for c in agent]),
                    [CandidateMeta(c["v"], c["d"], c["lane"]) for c in agent])
                for agent in doc
            ]
        svg = render_svg(vmap, scene=scenario.scene,
                         trajectories=scenario.trajectories,
                         candidates=candidates)
        save_svg(svg, args.out)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config) if args.config else Config()
        return _run(args, cfg)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (TrafficDiffError, OSError, json.JSONDecodeError, KeyError,
            IndexError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
