"""Command-line surface: generate | train | finetune | place | eval | render.

Every command is deterministic given its config plus seed, writes only under
its output directory, and stamps outputs with a provenance header (config
hash, seed, version). Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (
    InfeasibleSpecError,
    MacroplaceError,
    NumericError,
    ParseError,
    ValidationError,
)
from .guidance import GuidanceConfig, sample_placement
from .metrics import EnergySpec, metrics_report
from .netlist import (
    Netlist,
    Placement,
    netlist_from_json,
    netlist_to_json,
    parse_bookshelf,
    parse_placement,
    serialize_bookshelf,
)
from .render import placement_svg
from .scorenet import (
    ScoreNetConfig,
    TrainConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .syngen import build_dataset
from .transfer import FinetuneConfig, finetune

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--dump-config", default=None, help="write the resolved config here")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            sub.add_argument(
                flag, dest=f.name, action=argparse.BooleanOptionalAction,
                default=argparse.SUPPRESS,
            )
        else:
            sub.add_argument(
                flag, dest=f.name, type=type(f.default), default=argparse.SUPPRESS
            )


def _build_parser() -> _Parser:
    parser = _Parser(prog="macroplace", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("generate", "emit a synthetic dataset (bookshelf bundles + stats + training data)"),
        ("train", "pre-train the score network on a generated dataset"),
        ("finetune", "adapt a checkpoint to one target netlist"),
        ("place", "sample placements for a netlist from a checkpoint"),
        ("eval", "evaluate hpwl/congestion/overlap/energy of a placement"),
        ("render", "render a placement to SVG"),
    ):
        sub = subs.add_parser(name, help=doc)
        _add_config_flags(sub)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config", "dump_config")
    }
    config = config.apply_overrides(overrides)
    if args.dump_config:
        Path(args.dump_config).write_text(config.to_json() + "\n")
    return config


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1, default=_json_default) + "\n"
    )


def _load_netlist(config: RunConfig) -> tuple[Netlist, Placement | None]:
    path = Path(config.netlist)
    if not config.netlist:
        raise ValidationError("--netlist is required for this command")
    if path.is_dir():
        nodes = sorted(path.glob("*.nodes"))
        if not nodes:
            raise ValidationError(f"{path}: no .nodes file found")
        path = nodes[0].with_suffix("")
    if path.suffix == ".json":
        return netlist_from_json(path.read_text()), None
    sections = {}
    for ext in ("nodes", "nets", "pl"):
        candidate = path.with_suffix("." + ext)
        if candidate.exists():
            sections[ext] = candidate.read_text()
    canvas = None
    if config.canvas_w > 0 and config.canvas_h > 0:
        canvas = (config.canvas_w, config.canvas_h)
    return parse_bookshelf(sections, canvas=canvas)


def _load_placement(netlist: Netlist, config: RunConfig) -> Placement:
    if not config.placement:
        raise ValidationError("--placement is required for this command")
    return parse_placement(netlist, Path(config.placement).read_text())


def _pl_text(netlist: Netlist, placement: Placement, provenance: dict) -> str:
    body = serialize_bookshelf(netlist, placement)["pl"]
    header = "".join(f"# {k}: {v}\n" for k, v in sorted(provenance.items()))
    return header + body


def _dataset_to_doc(entries, provenance: dict) -> dict:
    groups: dict[int, dict] = {}
    order: list[int] = []
    for netlist, placement, e_rel in entries:
        key = id(netlist)
        if key not in groups:
            groups[key] = {"netlist": json.loads(netlist_to_json(netlist)), "samples": []}
            order.append(key)
        groups[key]["samples"].append(
            {"coords": placement.coords.tolist(), "e_rel": e_rel}
        )
    return {"provenance": provenance, "instances": [groups[k] for k in order]}


def _dataset_from_doc(doc: dict) -> list[tuple[Netlist, Placement, float]]:
    entries = []
    for inst in doc["instances"]:
        netlist = netlist_from_json(json.dumps(inst["netlist"]))
        for sample in inst["samples"]:
            entries.append(
                (netlist, Placement(np.array(sample["coords"])), float(sample["e_rel"]))
            )
    return entries


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(config: RunConfig) -> int:
    out = _out_dir(config)
    entries, instances = build_dataset(
        config.count,
        n_range=(config.n_min, config.n_max),
        aspect_range=(config.aspect_min, config.aspect_max),
        f_target=config.f_target,
        variants=config.variants,
        seed=config.seed,
        resolution=config.grid,
    )
    provenance = config.provenance()
    for i, inst in enumerate(instances):
        inst_dir = out / f"instance_{i:03d}"
        inst_dir.mkdir(parents=True, exist_ok=True)
        if config.write_bundles:
            sections = serialize_bookshelf(inst["netlist"], inst["placement"])
            name = inst["netlist"].name
            header = "".join(f"# {k}: {v}\n" for k, v in sorted(provenance.items()))
            for ext, text in sections.items():
                (inst_dir / f"{name}.{ext}").write_text(header + text)
        _write_json(inst_dir / "stats.json", {"provenance": provenance, **inst["stats"]})
    _write_json(out / "dataset.json", _dataset_to_doc(entries, provenance))
    print(f"generated {len(instances)} instances, {len(entries)} training samples -> {out}")
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    out = _out_dir(config)
    dataset_path = Path(config.dataset_dir or config.out_dir) / "dataset.json"
    doc = json.loads(dataset_path.read_text())
    entries = _dataset_from_doc(doc)
    if config.resume:
        params = load_checkpoint(config.resume)
    else:
        params = init_params(
            ScoreNetConfig(
                width=config.width,
                gnn_layers=config.gnn_layers,
                attn_layers=config.attn_layers,
                heads=config.heads,
            ),
            seed=config.seed,
        )
    tconf = TrainConfig(
        steps=config.steps,
        batch_size=config.batch_size,
        lr=config.lr,
        lr_min=config.lr_min,
        grad_clip=config.grad_clip,
        ema_decay=config.ema_decay,
        p_uncond=config.p_uncond,
        T=config.t_steps,
        schedule=config.schedule,
        seed=config.seed,
    )
    params, curve = train(params, entries, tconf)
    save_checkpoint(params, str(out / "checkpoint.bin"))
    provenance = config.provenance()
    header = "".join(f"# {k}: {v}\n" for k, v in sorted(provenance.items()))
    lines = [f"{step},{loss!r}" for step, loss in curve]
    (out / "loss.csv").write_text(header + "step,loss\n" + "\n".join(lines) + "\n")
    print(f"trained to step {params.step}, final loss {curve[-1][1]:.5f} -> {out}")
    return EXIT_OK


def _guidance_config(config: RunConfig) -> GuidanceConfig:
    return GuidanceConfig(
        s=config.guidance_scale,
        e_rel_target=config.e_rel_target,
        w_leg0=config.w_leg,
        w_cong0=config.w_cong,
        c_th=config.c_th if config.c_th > 0 else None,
        sampler=config.sampler,
        steps=config.sample_steps,
        resolution=config.grid,
        max_shift=config.max_shift,
        use_ema=config.use_ema,
        snapshot_interval=config.snapshot_interval,
    )


def cmd_place(config: RunConfig) -> int:
    out = _out_dir(config)
    params = load_checkpoint(config.checkpoint)
    netlist, _ = _load_netlist(config)
    gcfg = _guidance_config(config)
    spec = EnergySpec.for_netlist(netlist, config.grid)
    provenance = config.provenance()
    reports = []
    for k in range(config.n_place):
        placement, trace = sample_placement(
            params, netlist, gcfg, seed=config.seed + k, energy_spec=spec
        )
        (out / f"placement_{k:02d}.pl").write_text(_pl_text(netlist, placement, provenance))
        trace_lines = [json.dumps(step, sort_keys=True) for step in trace["steps"]]
        (out / f"trace_{k:02d}.jsonl").write_text("\n".join(trace_lines) + "\n")
        for fi, frame in enumerate(trace["snapshots"]):
            snap, _ = Placement(frame).clamp()
            (out / f"placement_{k:02d}_frame_{fi:03d}.svg").write_text(
                placement_svg(netlist, snap, header_comment=f"seed {config.seed + k}")
            )
        reports.append(
            {
                "sample": k,
                "seed": config.seed + k,
                "clamp_events": trace["clamp_events"],
                "warnings": trace["warnings"],
                **metrics_report(netlist, placement, spec, config.grid),
            }
        )
    best = min(range(len(reports)), key=lambda i: reports[i]["energy"])
    _write_json(
        out / "metrics.json",
        {"provenance": provenance, "samples": reports, "best_sample": best},
    )
    print(f"wrote {config.n_place} placements, best energy {reports[best]['energy']:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    out = _out_dir(config)
    started = time.perf_counter()
    netlist, bundled = _load_netlist(config)
    placement = bundled if not config.placement else _load_placement(netlist, config)
    if placement is None:
        raise ValidationError("no placement: pass --placement or a bundle with a .pl")
    report = metrics_report(netlist, placement, None, config.grid)
    runtime = time.perf_counter() - started
    payload = {"provenance": config.provenance(), **report}
    _write_json(out / "eval.json", payload)
    # Wall-clock goes to stdout only, keeping the artifact byte-reproducible.
    print(json.dumps({**payload, "runtime_seconds": runtime}, sort_keys=True))
    return EXIT_OK


def cmd_render(config: RunConfig) -> int:
    out = _out_dir(config)
    netlist, bundled = _load_netlist(config)
    placement = bundled if not config.placement else _load_placement(netlist, config)
    if placement is None:
        raise ValidationError("no placement: pass --placement or a bundle with a .pl")
    svg = placement_svg(
        netlist,
        placement,
        flylines=config.flylines,
        header_comment=" ".join(f"{k}={v}" for k, v in sorted(config.provenance().items())),
    )
    (out / "render.svg").write_text(svg)
    print(f"rendered {netlist.n_modules} modules -> {out / 'render.svg'}")
    return EXIT_OK


def cmd_finetune(config: RunConfig) -> int:
    out = _out_dir(config)
    params = load_checkpoint(config.checkpoint)
    netlist, _ = _load_netlist(config)
    fconf = FinetuneConfig(
        steps=config.ft_steps,
        samples_per_round=config.ft_samples,
        inner_steps=config.ft_inner,
        buffer_capacity=config.buffer_capacity,
        lr=config.ft_lr,
        omega_kappa=config.omega_kappa,
        lambda_div=config.lambda_div,
        entropy_samples=config.entropy_samples,
        resolution=config.grid,
        data_fraction=config.data_fraction,
        seed=config.seed,
    )
    tuned, report = finetune(params, netlist, fconf, _guidance_config(config))
    save_checkpoint(tuned, str(out / "checkpoint_ft.bin"))
    _write_json(out / "finetune_report.json", {"provenance": config.provenance(), **report})
    print(
        f"fine-tuned {report['steps_done']} steps, "
        f"mean energy {np.mean(report['energy_before']):.4f} -> {np.mean(report['energy_after']):.4f}"
    )
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "place": cmd_place,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _resolve_config(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        return _COMMANDS[args.command](config)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValidationError, InfeasibleSpecError, MacroplaceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
