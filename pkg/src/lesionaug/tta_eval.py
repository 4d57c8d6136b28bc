"""Evaluation protocol: TTA averaging, 144-crop evaluation, ROC-AUC,
early stopping and dataset subsetting, with model inference behind a
pluggable predictor.

Predictors either replay precomputed probabilities from a CSV keyed by
``id,copy`` or drive an external process over a line-oriented protocol:
the harness writes each image to a temp directory as PNG, sends one
absolute path per line on stdin, and reads one decimal probability in
[0, 1] per line on stdout (flushed per line).
"""

from __future__ import annotations

import csv
import json
import math
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .imgcore import (
    ImageBuffer,
    Manifest,
    Sample,
    derive_stream,
    load_sample,
    resize_to,
    save_image,
)
from .geometric import flip_horizontal
from .pipeline import AugmentConfig, build_scenario, apply_chain

__all__ = [
    "PredictorError",
    "EvalAborted",
    "FunctionPredictor",
    "PredictionFilePredictor",
    "ExternalProcessPredictor",
    "EvalConfig",
    "TEST_TTA_COPIES",
    "VALIDATION_TTA_COPIES",
    "EarlyStopState",
    "RocPoint",
    "crops_144",
    "predict_tta",
    "compute_auc",
    "roc_curve",
    "early_stop_step",
    "sample_subset",
    "evaluate",
]


class PredictorError(RuntimeError):
    """The predictor failed (process exit, malformed output, missing key)."""


class EvalAborted(RuntimeError):
    """Evaluation aborted on predictor failure; partial results were saved."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


def _check_probability(value: float, context: str) -> float:
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise PredictorError(f"{context}: probability {value!r} outside [0, 1]")
    return float(value)


class FunctionPredictor:
    """Wrap an in-process callable ``ImageBuffer -> probability``."""

    kind = "function"

    def __init__(self, fn: Callable[[ImageBuffer], float]):
        self._fn = fn

    def predict(self, images: Sequence[ImageBuffer], keys) -> list[float]:
        return [
            _check_probability(self._fn(img), f"sample {sid!r} copy {copy}")
            for img, (sid, copy) in zip(images, keys)
        ]

    def close(self):
        pass


class PredictionFilePredictor:
    """Replay precomputed probabilities from a ``id,copy,probability`` CSV."""

    kind = "prediction-file"

    def __init__(self, path: str | Path):
        self._table: dict[tuple[str, int], float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["id", "copy", "probability"]:
                raise PredictorError(f"bad prediction file header {header!r}")
            for row in reader:
                if not row:
                    continue
                sid, copy, prob = row
                self._table[(sid, int(copy))] = _check_probability(
                    float(prob), f"sample {sid!r} copy {copy}"
                )

    def predict(self, images, keys) -> list[float]:
        out = []
        for sid, copy in keys:
            try:
                out.append(self._table[(sid, copy)])
            except KeyError:
                raise PredictorError(f"no prediction for sample {sid!r} copy {copy}") from None
        return out

    def close(self):
        pass


class ExternalProcessPredictor:
    """Drive an external command over the line-oriented path/probability protocol."""

    kind = "external-process"

    def __init__(self, command: str | Sequence[str], temp_dir: str | Path | None = None):
        self._command = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc: subprocess.Popen | None = None
        self._owned_tmp = None
        if temp_dir is None:
            self._owned_tmp = tempfile.TemporaryDirectory(prefix="lesionaug_pred_")
            self._tmp = Path(self._owned_tmp.name)
        else:
            self._tmp = Path(temp_dir)
            self._tmp.mkdir(parents=True, exist_ok=True)

    def _ensure_running(self) -> subprocess.Popen:
        if self._proc is None:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def predict(self, images: Sequence[ImageBuffer], keys) -> list[float]:
        proc = self._ensure_running()
        out = []
        for img, (sid, copy) in zip(images, keys):
            context = f"sample {sid!r} copy {copy}"
            name = re.sub(r"[^A-Za-z0-9._-]", "_", f"{sid}_{copy}.png")
            path = self._tmp / name
            save_image(img, path)
            try:
                proc.stdin.write(f"{path.resolve()}\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise PredictorError(f"{context}: predictor process died ({exc})") from exc
            if line == "":
                code = proc.poll()
                raise PredictorError(f"{context}: predictor closed its output (exit {code})")
            try:
                value = float(line.strip())
            except ValueError:
                raise PredictorError(f"{context}: unparsable prediction {line.strip()!r}") from None
            out.append(_check_probability(value, context))
        return out

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            code = self._proc.wait()
            self._proc = None
            if code != 0:
                raise PredictorError(f"predictor exited with status {code}")
        if self._owned_tmp is not None:
            self._owned_tmp.cleanup()
            self._owned_tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


# ---------------------------------------------------------------------------
# evaluation configuration
# ---------------------------------------------------------------------------

EVAL_MODES = ("original", "tta", "crops144")

# Published protocol defaults: 64 augmented copies per test image, 16 per
# validation image.
TEST_TTA_COPIES = 64
VALIDATION_TTA_COPIES = 16


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "tta"
    tta_copies: int = TEST_TTA_COPIES
    scenario: str = "J"
    input_size: int = 224
    config: AugmentConfig = AugmentConfig()

    def __post_init__(self):
        if self.mode not in EVAL_MODES:
            raise ValueError(f"mode must be one of {EVAL_MODES}, got {self.mode!r}")
        if self.tta_copies < 1:
            raise ValueError("tta_copies must be >= 1")
        if self.input_size < 32:
            raise ValueError("input_size must be >= 32")


# ---------------------------------------------------------------------------
# 144-crop scheme
# ---------------------------------------------------------------------------

_CROP_BASE_SCALES = (256, 288, 320, 352)


def _round_even(x: float) -> int:
    return int(2 * round(x / 2.0))


def _resize_shorter_side(img: ImageBuffer, target: int) -> ImageBuffer:
    w, h = img.width, img.height
    if w <= h:
        return resize_to(img, target, max(target, round(h * target / w)))
    return resize_to(img, max(target, round(w * target / h)), target)


def crops_144(img: ImageBuffer, input_size: int) -> list[ImageBuffer]:
    """Multi-scale multi-region mirrored crops: exactly 144 patches.

    Four scales (shorter side resized to the base 256/288/320/352 values,
    scaled proportionally to ``input_size`` and rounded to even), three
    squares along the longer dimension, six patches per square (four
    corners, center, and the square itself resized down), each followed by
    its horizontal mirror.
    """
    if input_size < 8:
        raise ValueError("input_size too small for the crop scheme")
    patches: list[ImageBuffer] = []
    for base in _CROP_BASE_SCALES:
        side = _round_even(input_size * base / 224.0)
        resized = _resize_shorter_side(img, side)
        w, h = resized.width, resized.height
        if w >= h:
            origins = [(0, 0), ((w - side) // 2, 0), (w - side, 0)]
        else:
            origins = [(0, 0), (0, (h - side) // 2), (0, h - side)]
        for ox, oy in origins:
            square = resized.pixels[oy : oy + side, ox : ox + side]
            span = side - input_size
            corners = [(0, 0), (span, 0), (0, span), (span, span), (span // 2, span // 2)]
            for px, py in corners:
                patch = ImageBuffer(
                    np.ascontiguousarray(square[py : py + input_size, px : px + input_size])
                )
                patches.append(patch)
                patches.append(flip_horizontal(patch))
            whole = resize_to(
                ImageBuffer(np.ascontiguousarray(square)), input_size, input_size
            )
            patches.append(whole)
            patches.append(flip_horizontal(whole))
    return patches


# ---------------------------------------------------------------------------
# prediction averaging
# ---------------------------------------------------------------------------


def predict_tta(predictor, sample: Sample, cfg: EvalConfig, global_seed: int) -> float:
    """Predict one melanoma probability per the configured evaluation mode."""
    if cfg.mode == "original":
        image = resize_to(sample.image, cfg.input_size, cfg.input_size)
        return predictor.predict([image], [(sample.id, 0)])[0]
    if cfg.mode == "tta":
        chain = build_scenario(cfg.scenario, cfg.config).for_eval()
        images = [
            apply_chain(chain, sample, global_seed, k, cfg.input_size)
            for k in range(cfg.tta_copies)
        ]
        keys = [(sample.id, k) for k in range(cfg.tta_copies)]
        return float(np.mean(predictor.predict(images, keys)))
    crops = crops_144(sample.image, cfg.input_size)
    keys = [(sample.id, k) for k in range(len(crops))]
    return float(np.mean(predictor.predict(crops, keys)))


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float


def _check_two_class(labels: np.ndarray) -> tuple[int, int]:
    npos = int(labels.sum())
    nneg = labels.size - npos
    if npos == 0 or nneg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative")
    return npos, nneg


def compute_auc(labels, scores) -> float:
    """Mann-Whitney AUC: concordant pairs plus half the ties, normalized."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1-d sequences of equal length")
    npos, nneg = _check_two_class(y)
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    csum = np.cumsum(counts)
    ranks = (csum - (counts - 1) / 2.0)[inverse]  # average ranks, 1-based
    u = ranks[y].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def roc_curve(labels, scores) -> list[RocPoint]:
    """ROC points from (0,0) to (1,1), one per distinct threshold."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    npos, nneg = _check_two_class(y)
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    tps = np.cumsum(y_sorted)
    fps = np.cumsum(~y_sorted)
    # emit one point at the end of each tie group
    boundary = np.nonzero(np.diff(s_sorted))[0]
    idx = np.append(boundary, s_sorted.size - 1)
    points = [RocPoint(0.0, 0.0)]
    points.extend(RocPoint(fps[i] / nneg, tps[i] / npos) for i in idx)
    return points


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EarlyStopState:
    patience: int = 8
    best_auc: float = float("-inf")
    best_epoch: int = 0
    epoch: int = 0
    epochs_since_improve: int = 0

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def early_stop_step(state: EarlyStopState, epoch_auc: float) -> tuple[EarlyStopState, str]:
    """Advance one epoch; returns the new state and 'continue' or 'stop'.

    Improvement means strictly greater than the best AUC so far; the run
    stops when the number of epochs since the last improvement reaches the
    patience.
    """
    if not math.isfinite(epoch_auc):
        raise ValueError(f"epoch AUC must be finite, got {epoch_auc}")
    epoch = state.epoch + 1
    if epoch_auc > state.best_auc:
        new = replace(
            state, best_auc=epoch_auc, best_epoch=epoch, epoch=epoch, epochs_since_improve=0
        )
        return new, "continue"
    since = state.epochs_since_improve + 1
    new = replace(state, epoch=epoch, epochs_since_improve=since)
    return new, "stop" if since >= state.patience else "continue"


# ---------------------------------------------------------------------------
# subsetting and end-to-end evaluation
# ---------------------------------------------------------------------------


def sample_subset(manifest: Manifest, size: int, seed: int) -> Manifest:
    """Uniform subsample without replacement, preserving manifest order."""
    n = len(manifest)
    if not 1 <= size <= n:
        raise ValueError(f"subset size {size} out of range [1, {n}]")
    rng = derive_stream(seed, "subset", 0, 0)
    chosen = np.sort(rng.choice(n, size=size, replace=False))
    return Manifest(
        records=tuple(manifest.records[i] for i in chosen), split=manifest.split
    )


def evaluate(
    manifest: Manifest,
    predictor,
    cfg: EvalConfig,
    seed: int,
    output_dir: str | Path,
    base_dir: str | Path = ".",
    max_side: int | None = 1024,
) -> dict:
    """Run the configured evaluation over a manifest and write reports.

    Produces ``probabilities.csv`` (id, label, probability) and
    ``report.json``.  A predictor failure saves the partial results, writes
    a flagged report and raises :class:`EvalAborted`.
    """
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [r.label for r in manifest.records]
    if len(set(labels)) < 2:
        raise ValueError("manifest must contain both classes")

    rows: list[tuple[str, bool, float]] = []
    abort_error = None
    for record in manifest:
        sample = load_sample(record, base_dir, max_side)
        try:
            prob = predict_tta(predictor, sample, cfg, seed)
        except PredictorError as exc:
            abort_error = str(exc)
            break
        rows.append((record.id, record.label, prob))

    with open(out_dir / "probabilities.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("id,label,probability\n")
        for rid, label, prob in rows:
            fh.write(f"{rid},{int(label)},{prob:.10f}\n")

    auc = None
    if abort_error is None:
        auc = compute_auc([r[1] for r in rows], [r[2] for r in rows])
    report = {
        "mode": cfg.mode,
        "scenario": cfg.scenario,
        "copies": cfg.tta_copies if cfg.mode == "tta" else (144 if cfg.mode == "crops144" else 1),
        "seed": seed,
        "auc": auc,
        "n_samples": len(rows),
    }
    if abort_error is not None:
        report["aborted"] = True
        report["error"] = abort_error
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if abort_error is not None:
        raise EvalAborted(abort_error, report)
    return report
