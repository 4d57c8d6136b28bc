"""Command-line frontend: augment, preview, crops144, eval, subset, scenarios.

Exit status is 0 on success, 1 on validation errors (bad flags, malformed
inputs) and 2 on runtime failures (I/O, predictor or stage errors).  Every
run echoes its resolved configuration, seed included, both to stdout and to
``run_config.json`` in the output directory so results are reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .imgcore import (
    ImageBuffer,
    load_manifest,
    load_sample,
    save_image,
    save_manifest,
)
from .pipeline import (
    SCENARIO_IDS,
    SCENARIO_NAMES,
    AugmentJob,
    apply_chain,
    augment_dataset,
    build_scenario,
    load_config,
    manifest_partner_provider,
)
from .tta_eval import (
    EvalConfig,
    ExternalProcessPredictor,
    PredictionFilePredictor,
    crops_144,
    evaluate,
    sample_subset,
)

__all__ = ["build_parser", "run", "main"]


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage problems with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    # fixed width keeps --help output independent of the terminal
    return argparse.HelpFormatter(prog, width=96)


def _echo_config(args: argparse.Namespace, extra: dict | None = None) -> dict:
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    if extra:
        resolved.update(extra)
    print("config: " + json.dumps(resolved, sort_keys=True))
    output = getattr(args, "output", None)
    if output is not None:
        out_dir = Path(output)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
            json.dump(resolved, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return resolved


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_scenarios(args) -> int:
    config = load_config(args.config)
    for sid in SCENARIO_IDS:
        chain = build_scenario(sid, config)
        print(f"{sid}  {SCENARIO_NAMES[sid]:<40} {chain.describe()}")
    return 0


def _cmd_augment(args) -> int:
    _echo_config(args)
    manifest = load_manifest(args.manifest, split="train")
    job = AugmentJob(
        manifest=manifest,
        scenario=args.scenario,
        copies=args.copies,
        global_seed=args.seed,
        output_dir=Path(args.output),
        out_size=args.size,
        base_dir=Path(args.manifest).parent,
        max_side=args.max_side,
        workers=args.workers,
        config=load_config(args.config),
    )
    summary = augment_dataset(job)
    print(
        f"wrote {summary['written']} images to {args.output} "
        f"({len(summary['failures'])} failures)"
    )
    return 0


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad --grid {text!r}, expected ROWSxCOLS like 4x4") from None
    if rows < 1 or cols < 1:
        raise ValueError("--grid dimensions must be >= 1")
    return rows, cols


def _contact_sheet(tiles: list[ImageBuffer], rows: int, cols: int, label: str) -> ImageBuffer:
    tile_h, tile_w = tiles[0].height, tiles[0].width
    gutter, header = 2, 16
    sheet = np.full(
        (header + rows * (tile_h + gutter) + gutter, cols * (tile_w + gutter) + gutter, 3),
        24,
        dtype=np.uint8,
    )
    for index, tile in enumerate(tiles):
        r, c = divmod(index, cols)
        y = header + gutter + r * (tile_h + gutter)
        x = gutter + c * (tile_w + gutter)
        sheet[y : y + tile_h, x : x + tile_w] = tile.pixels
    image = Image.fromarray(sheet)
    ImageDraw.Draw(image).text((4, 2), label, fill=(255, 255, 0))
    return ImageBuffer(np.asarray(image).copy())


def _cmd_preview(args) -> int:
    _echo_config(args)
    manifest = load_manifest(args.manifest, split="train")
    if not manifest.records:
        raise ValueError("manifest is empty")
    rows, cols = _parse_grid(args.grid)
    config = load_config(args.config)
    chain = build_scenario(args.scenario, config)
    sample = load_sample(manifest.records[0], Path(args.manifest).parent, args.max_side)
    partner = (
        manifest_partner_provider(manifest, Path(args.manifest).parent, args.max_side)
        if any(s.kind == "lesion_mix" for s in chain.stages)
        else None
    )
    tiles = [
        apply_chain(chain, sample, args.seed, copy_index, args.size, partner)
        for copy_index in range(rows * cols)
    ]
    sheet = _contact_sheet(tiles, rows, cols, f"scenario {args.scenario}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"preview_{args.scenario}.png"
    save_image(sheet, path)
    print(f"wrote {path}")
    return 0


def _cmd_crops144(args) -> int:
    _echo_config(args)
    manifest = load_manifest(args.manifest, split="test")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for record in manifest:
        sample = load_sample(record, Path(args.manifest).parent, args.max_side)
        for index, patch in enumerate(crops_144(sample.image, args.size)):
            save_image(patch, out_dir / f"{record.id}_crop{index:03d}.png")
            total += 1
    print(f"wrote {total} crops to {args.output}")
    return 0


def _cmd_eval(args) -> int:
    _echo_config(args)
    manifest = load_manifest(args.manifest, split="test")
    cfg = EvalConfig(
        mode=args.mode,
        tta_copies=args.copies,
        scenario=args.scenario,
        input_size=args.size,
        config=load_config(args.config),
    )
    if args.predictions is not None:
        predictor = PredictionFilePredictor(args.predictions)
    else:
        predictor = ExternalProcessPredictor(args.predictor)
    try:
        report = evaluate(
            manifest,
            predictor,
            cfg,
            args.seed,
            args.output,
            base_dir=Path(args.manifest).parent,
            max_side=args.max_side,
        )
    finally:
        predictor.close()
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_subset(args) -> int:
    _echo_config(args)
    manifest = load_manifest(args.manifest, split="train")
    subset = sample_subset(manifest, args.subset_size, args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"subset_{args.subset_size}.csv"
    save_manifest(subset, path)
    print(f"wrote {len(subset)} records to {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, seed=True, size=True, config=True):
    if seed:
        p.add_argument("--seed", type=int, default=0, help="global 64-bit seed (default 0)")
    if size:
        p.add_argument("--size", type=int, default=224, help="network input side in px (default 224)")
    if config:
        p.add_argument("--config", type=Path, default=None, help="TOML file overriding parameter ranges")
    p.add_argument(
        "--max-side",
        type=int,
        default=1024,
        help="downscale inputs so the longest side is at most this (default 1024)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lesionaug",
        description="Deterministic skin-lesion augmentation pipeline and evaluation harness.",
        formatter_class=_formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser(
        "scenarios",
        help="list the augmentation scenarios and their stage chains",
        formatter_class=_formatter,
    )
    p.add_argument("--config", type=Path, default=None, help="TOML file overriding parameter ranges")
    p.set_defaults(func=_cmd_scenarios)

    p = sub.add_parser("augment", help="write augmented copies of a dataset", formatter_class=_formatter)
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV (id,image,mask,label)")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--scenario", choices=SCENARIO_IDS, default="J", help="augmentation scenario (default J)")
    p.add_argument("--copies", type=int, default=1, help="augmented copies per image (default 1)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker threads (default 1)")
    _add_common(p)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("preview", help="render a contact sheet of augmented variants", formatter_class=_formatter)
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--scenario", choices=SCENARIO_IDS, default="J", help="augmentation scenario (default J)")
    p.add_argument("--grid", default="4x4", help="sheet grid as ROWSxCOLS (default 4x4)")
    _add_common(p)
    p.set_defaults(func=_cmd_preview)

    p = sub.add_parser("crops144", help="write the 144 evaluation crops per image", formatter_class=_formatter)
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    _add_common(p, seed=False, config=False)
    p.set_defaults(func=_cmd_crops144)

    p = sub.add_parser("eval", help="evaluate a predictor with TTA / crops", formatter_class=_formatter)
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--mode", choices=("original", "tta", "crops144"), default="tta", help="evaluation mode (default tta)")
    p.add_argument("--scenario", choices=SCENARIO_IDS, default="J", help="TTA scenario (default J)")
    p.add_argument("--copies", type=int, default=64, help="TTA copies per image (default 64)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--predictor", help="external predictor command (line protocol)")
    group.add_argument("--predictions", type=Path, help="precomputed id,copy,probability CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("subset", help="sample a random manifest subset", formatter_class=_formatter)
    p.add_argument("--manifest", type=Path, required=True, help="input manifest CSV")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--subset-size", type=int, required=True, help="number of records to keep")
    p.add_argument("--seed", type=int, default=0, help="global 64-bit seed (default 0)")
    p.set_defaults(func=_cmd_subset)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # includes ManifestError and config validation
        print(f"lesionaug: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"lesionaug: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
