"""Scenario registry, transform chains and batch dataset augmentation.

Scenarios are named A through M.  B through I are single transforms; J
through M are ordered compositions of those primitives (for example J is
crop, affine, flips, color jitter with hue, applied in that order).  A is
the empty chain.  Every stage draws from its own counter-based stream keyed
by (seed, sample id, copy index, stage index), so batch output does not
depend on worker count or evaluation order.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from importlib import resources

from . import erasing as erasing_mod
from . import geometric, photometric
from .elastic_tps import elastic_warp
from .erasing import ErasingParams
from .imgcore import (
    ImageBuffer,
    Manifest,
    RngStream,
    Sample,
    derive_stream,
    load_sample,
    resize_to,
    save_image,
)
from .lesionmix import MixParams, lesion_mix

__all__ = [
    "SCENARIO_IDS",
    "SCENARIO_NAMES",
    "SCENARIO_COMPOSITION",
    "AugmentConfig",
    "ColorJitterRanges",
    "AffineRanges",
    "CropRanges",
    "ElasticRanges",
    "TransformChain",
    "AugmentJob",
    "StageError",
    "PartnerProvider",
    "load_config",
    "build_scenario",
    "apply_chain",
    "apply_chain_labeled",
    "augment_dataset",
    "manifest_partner_provider",
]

SCENARIO_IDS = ("A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M")

SCENARIO_NAMES: Mapping[str, str] = {
    "A": "no augmentation",
    "B": "saturation, contrast, brightness",
    "C": "saturation, contrast, brightness, hue",
    "D": "affine",
    "E": "flips",
    "F": "random crops",
    "G": "random erasing",
    "H": "elastic warp",
    "I": "lesion mix",
    "J": "basic set",
    "K": "basic set + erasing",
    "L": "basic set + elastic",
    "M": "basic set + mix",
}

# Compositions in application order, written with the primitive scenario ids.
SCENARIO_COMPOSITION: Mapping[str, str] = {
    "A": "",
    "B": "B",
    "C": "C",
    "D": "D",
    "E": "E",
    "F": "F",
    "G": "G",
    "H": "H",
    "I": "I",
    "J": "FDEC",
    "K": "FGDEC",
    "L": "FDHEC",
    "M": "IFDEC",
}


class StageError(RuntimeError):
    """A transform stage failed; carries the stage index and kind."""

    def __init__(self, stage_index: int, kind: str, message: str):
        super().__init__(f"stage {stage_index} ({kind}): {message}")
        self.stage_index = stage_index
        self.kind = kind


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColorJitterRanges:
    factor_range: tuple[float, float] = (0.7, 1.3)
    hue_range: tuple[float, float] = (-0.1, 0.1)


@dataclass(frozen=True)
class AffineRanges:
    max_rotation: float = 90.0
    max_shear: float = 20.0
    area_range: tuple[float, float] = (0.8, 1.2)


@dataclass(frozen=True)
class CropRanges:
    area_range: tuple[float, float] = (0.4, 1.0)
    aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0)


@dataclass(frozen=True)
class ElasticRanges:
    max_disp: float = 0.10


@dataclass(frozen=True)
class AugmentConfig:
    color: ColorJitterRanges = ColorJitterRanges()
    affine: AffineRanges = AffineRanges()
    crop: CropRanges = CropRanges()
    erasing: ErasingParams = ErasingParams()
    elastic: ElasticRanges = ElasticRanges()
    lesionmix: MixParams = MixParams()


def _section(data: Mapping, name: str, keys: tuple[str, ...]) -> dict:
    raw = data.get(name, {})
    unknown = set(raw) - set(keys)
    if unknown:
        raise ValueError(f"unknown config key(s) in [{name}]: {sorted(unknown)}")
    return dict(raw)


def _build_config(data: Mapping) -> AugmentConfig:
    unknown = set(data) - {"color", "affine", "crop", "erasing", "elastic", "lesionmix"}
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    color = _section(data, "color", ("factor_low", "factor_high", "hue_low", "hue_high"))
    affine = _section(data, "affine", ("max_rotation", "max_shear", "area_low", "area_high"))
    crop = _section(data, "crop", ("area_low", "area_high", "aspect_low", "aspect_high"))
    erase = _section(
        data, "erasing", ("probability", "area_low", "area_high", "aspect_low", "aspect_high")
    )
    elastic = _section(data, "elastic", ("max_disp",))
    mix = _section(
        data, "lesionmix", ("feather_sigma", "feather_frac", "feather_min_px", "scale_cap")
    )
    return AugmentConfig(
        color=ColorJitterRanges(
            factor_range=(color["factor_low"], color["factor_high"]),
            hue_range=(color["hue_low"], color["hue_high"]),
        ),
        affine=AffineRanges(
            max_rotation=affine["max_rotation"],
            max_shear=affine["max_shear"],
            area_range=(affine["area_low"], affine["area_high"]),
        ),
        crop=CropRanges(
            area_range=(crop["area_low"], crop["area_high"]),
            aspect_range=(crop["aspect_low"], crop["aspect_high"]),
        ),
        erasing=ErasingParams(
            apply_probability=erase["probability"],
            area_range=(erase["area_low"], erase["area_high"]),
            aspect_range=(erase["aspect_low"], erase["aspect_high"]),
        ),
        elastic=ElasticRanges(max_disp=elastic["max_disp"]),
        lesionmix=MixParams(
            feather_sigma=mix.get("feather_sigma"),
            feather_frac=mix["feather_frac"],
            feather_min_px=mix["feather_min_px"],
            scale_cap=mix["scale_cap"],
        ),
    )


def _deep_update(base: dict, override: Mapping) -> dict:
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: str | Path | None = None) -> AugmentConfig:
    """Load the shipped defaults, optionally overlaid with a TOML file."""
    text = resources.files("lesionaug").joinpath("data/scenario_defaults.toml").read_text()
    data = tomllib.loads(text)
    if path is not None:
        with open(path, "rb") as fh:
            _deep_update(data, tomllib.load(fh))
    return _build_config(data)


# ---------------------------------------------------------------------------
# transform stages
# ---------------------------------------------------------------------------

PartnerProvider = Callable[[str, RngStream], Sample]


@dataclass
class _ChainState:
    sample_id: str
    image: ImageBuffer
    mask: np.ndarray | None
    label: bool


@dataclass(frozen=True)
class ColorJitterStage:
    kind: ClassVar[str] = "color_jitter"
    train_only: ClassVar[bool] = False
    with_hue: bool
    ranges: ColorJitterRanges

    @property
    def label(self) -> str:
        return "color_jitter+hue" if self.with_hue else "color_jitter"

    def apply(self, state: _ChainState, rng: RngStream, partner: PartnerProvider | None):
        params = photometric.sample_color_jitter(
            rng, self.with_hue, self.ranges.factor_range, self.ranges.hue_range
        )
        state.image = photometric.apply_color_jitter(state.image, params)
        state.mask = None


@dataclass(frozen=True)
class AffineStage:
    kind: ClassVar[str] = "affine"
    train_only: ClassVar[bool] = False
    ranges: AffineRanges

    def apply(self, state, rng, partner):
        params = geometric.sample_affine(
            rng, self.ranges.max_rotation, self.ranges.max_shear, self.ranges.area_range
        )
        state.image = geometric.apply_affine(state.image, params)
        state.mask = None


@dataclass(frozen=True)
class FlipStage:
    kind: ClassVar[str] = "flips"
    train_only: ClassVar[bool] = False

    def apply(self, state, rng, partner):
        state.image = geometric.random_flip(state.image, rng)
        state.mask = None


@dataclass(frozen=True)
class CropStage:
    kind: ClassVar[str] = "random_crop"
    train_only: ClassVar[bool] = False
    ranges: CropRanges

    def apply(self, state, rng, partner):
        window = geometric.sample_crop(
            state.image.width,
            state.image.height,
            rng,
            self.ranges.area_range,
            self.ranges.aspect_range,
        )
        state.image = geometric.crop(state.image, window)
        state.mask = None


@dataclass(frozen=True)
class ErasingStage:
    kind: ClassVar[str] = "random_erasing"
    train_only: ClassVar[bool] = False
    params: ErasingParams

    def apply(self, state, rng, partner):
        state.image = erasing_mod.random_erasing(state.image, rng, self.params)
        state.mask = None


@dataclass(frozen=True)
class ElasticStage:
    kind: ClassVar[str] = "elastic_warp"
    train_only: ClassVar[bool] = False
    ranges: ElasticRanges

    def apply(self, state, rng, partner):
        state.image = elastic_warp(state.image, rng, self.ranges.max_disp)
        state.mask = None


@dataclass(frozen=True)
class LesionMixStage:
    kind: ClassVar[str] = "lesion_mix"
    train_only: ClassVar[bool] = True
    params: MixParams

    def apply(self, state, rng, partner):
        if state.mask is None:
            raise ValueError("lesion mix requires a segmentation mask")
        if partner is None:
            raise ValueError("lesion mix requires a partner provider")
        current = Sample(
            id=state.sample_id, image=state.image, mask=state.mask, label=state.label
        )
        other = partner(state.sample_id, rng)
        mixed = lesion_mix(current, other, rng, self.params)
        state.image = mixed.image
        state.mask = mixed.mask
        state.label = mixed.label


_STAGE_FACTORIES = {
    "B": lambda cfg: ColorJitterStage(with_hue=False, ranges=cfg.color),
    "C": lambda cfg: ColorJitterStage(with_hue=True, ranges=cfg.color),
    "D": lambda cfg: AffineStage(ranges=cfg.affine),
    "E": lambda cfg: FlipStage(),
    "F": lambda cfg: CropStage(ranges=cfg.crop),
    "G": lambda cfg: ErasingStage(params=cfg.erasing),
    "H": lambda cfg: ElasticStage(ranges=cfg.elastic),
    "I": lambda cfg: LesionMixStage(params=cfg.lesionmix),
}


@dataclass(frozen=True)
class TransformChain:
    stages: tuple
    scenario: str | None = None

    def for_eval(self) -> "TransformChain":
        """Chain with train-only stages (lesion mix) removed."""
        return TransformChain(
            stages=tuple(s for s in self.stages if not s.train_only),
            scenario=self.scenario,
        )

    @property
    def stage_kinds(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.stages)

    def describe(self) -> str:
        labels = [getattr(s, "label", s.kind) for s in self.stages]
        return " -> ".join(labels) if self.stages else "(identity)"


def build_scenario(scenario_id: str, config: AugmentConfig | None = None) -> TransformChain:
    """Build the transform chain for one scenario id (train instantiation)."""
    if scenario_id not in SCENARIO_IDS:
        raise ValueError(f"unknown scenario {scenario_id!r}, expected one of A..M")
    cfg = config if config is not None else AugmentConfig()
    stages = tuple(
        _STAGE_FACTORIES[letter](cfg) for letter in SCENARIO_COMPOSITION[scenario_id]
    )
    return TransformChain(stages=stages, scenario=scenario_id)


# ---------------------------------------------------------------------------
# chain application
# ---------------------------------------------------------------------------


def apply_chain_labeled(
    chain: TransformChain,
    sample: Sample,
    global_seed: int,
    copy_index: int,
    out_size: int,
    partner_provider: PartnerProvider | None = None,
    timings: dict | None = None,
) -> tuple[ImageBuffer, bool]:
    """Apply the chain and final resize; returns the image and its label.

    The label can differ from the input's when the chain contains lesion mix.
    """
    state = _ChainState(
        sample_id=sample.id, image=sample.image, mask=sample.mask, label=sample.label
    )
    for stage_index, stage in enumerate(chain.stages):
        rng = derive_stream(global_seed, sample.id, copy_index, stage_index)
        started = time.perf_counter()
        try:
            stage.apply(state, rng, partner_provider)
        except Exception as exc:
            raise StageError(stage_index, stage.kind, str(exc)) from exc
        if timings is not None:
            timings[stage.kind] = timings.get(stage.kind, 0.0) + time.perf_counter() - started
    return resize_to(state.image, out_size, out_size), state.label


def apply_chain(
    chain: TransformChain,
    sample: Sample,
    global_seed: int,
    copy_index: int,
    out_size: int,
    partner_provider: PartnerProvider | None = None,
) -> ImageBuffer:
    """Apply the chain deterministically; see :func:`apply_chain_labeled`."""
    image, _ = apply_chain_labeled(
        chain, sample, global_seed, copy_index, out_size, partner_provider
    )
    return image


# ---------------------------------------------------------------------------
# batch augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentJob:
    manifest: Manifest
    scenario: str
    copies: int
    global_seed: int
    output_dir: Path
    out_size: int = 224
    base_dir: Path = Path(".")
    max_side: int | None = 1024
    workers: int = 1
    config: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.copies < 1:
            raise ValueError("copies must be >= 1")
        if self.out_size < 32:
            raise ValueError("out_size must be >= 32")
        if self.scenario not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# Stage index used for partner selection draws inside the lesion-mix stage;
# the draw happens on that stage's own stream, so it is schedule-independent.


def manifest_partner_provider(
    manifest: Manifest, base_dir: Path, max_side: int | None = 1024
) -> PartnerProvider:
    """Uniformly pick another masked sample from the same manifest."""
    masked = [r for r in manifest.records if r.mask_path is not None]
    cache: dict[str, Sample] = {}
    lock = threading.Lock()

    def provide(sample_id: str, rng: RngStream) -> Sample:
        candidates = [r for r in masked if r.id != sample_id]
        if not candidates:
            raise ValueError("no masked partner available in manifest")
        pick = candidates[rng.integers(0, len(candidates))]
        with lock:
            cached = cache.get(pick.id)
        if cached is None:
            cached = load_sample(pick, base_dir, max_side)
            with lock:
                cache[pick.id] = cached
        return cached

    return provide


def augment_dataset(job: AugmentJob) -> dict:
    """Write ``copies`` augmented PNGs per record plus manifest and summary.

    Records that fail (unreadable image, missing mask for lesion mix, ...)
    are reported in the summary and skipped; the job itself continues.
    Output bytes are independent of ``workers``.
    """
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chain = build_scenario(job.scenario, job.config)
    needs_partner = any(s.kind == "lesion_mix" for s in chain.stages)
    partner = (
        manifest_partner_provider(job.manifest, job.base_dir, job.max_side)
        if needs_partner
        else None
    )

    timings: dict[str, float] = {}
    timing_lock = threading.Lock()

    def process(record):
        local_timings: dict[str, float] = {}
        rows = []
        sample = load_sample(record, job.base_dir, job.max_side)
        for copy_index in range(job.copies):
            image, label = apply_chain_labeled(
                chain,
                sample,
                job.global_seed,
                copy_index,
                job.out_size,
                partner,
                timings=local_timings,
            )
            filename = f"{record.id}_c{copy_index}.png"
            save_image(image, out_dir / filename)
            rows.append((f"{record.id}_c{copy_index}", filename, "", int(label), copy_index))
        with timing_lock:
            for kind, seconds in local_timings.items():
                timings[kind] = timings.get(kind, 0.0) + seconds
        return rows

    started = time.perf_counter()
    results: list = [None] * len(job.manifest)
    errors: list = [None] * len(job.manifest)
    if job.workers == 1:
        for i, record in enumerate(job.manifest):
            try:
                results[i] = process(record)
            except Exception as exc:  # record-level failure, job continues
                errors[i] = f"{type(exc).__name__}: {exc}"
    else:
        with ThreadPoolExecutor(max_workers=job.workers) as pool:
            futures = {i: pool.submit(process, r) for i, r in enumerate(job.manifest)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    errors[i] = f"{type(exc).__name__}: {exc}"

    manifest_path = out_dir / "manifest.csv"
    written = 0
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("id,image,mask,label,copy\n")
        for rows in results:
            if rows is None:
                continue
            for rid, filename, mask, label, copy_index in rows:
                fh.write(f"{rid},{filename},{mask},{label},{copy_index}\n")
                written += 1

    failures = [
        {"id": record.id, "error": errors[i]}
        for i, record in enumerate(job.manifest)
        if errors[i] is not None
    ]
    summary = {
        "scenario": job.scenario,
        "copies": job.copies,
        "seed": job.global_seed,
        "out_size": job.out_size,
        "records": len(job.manifest),
        "written": written,
        "failures": failures,
        "manifest": manifest_path.name,
        "timing": {
            "total_seconds": time.perf_counter() - started,
            "stage_seconds": {k: timings[k] for k in sorted(timings)},
        },
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary
