"""Per-frame completion of sparse window detections.

The detector is trusted but incomplete: on repetitive facades it finds
some windows of a storey and misses others that look the same. This
module cuts a patch around each detection, searches a horizontal strip
at that storey for more placements that look like the patch, and merges
everything with non-maximum suppression.

Similarity is zero-normalized cross-correlation (ZNCC), so candidate
scores live in [-1, 1] and are invariant to affine intensity changes
between frames (gain and offset). Flat, zero-variance placements score
0 by definition, never NaN.

Patches are cut with a configurable margin of surrounding wall
(``MatchParams.context_pad``, a fraction of the seed size per side).
A bare window interior can be uniform, and a uniform patch has zero
variance and matches nothing; the margin pulls the window's edges into
the patch. Candidates are still reported at the seed's own geometry,
offset inside the padded patch, so the pad never changes box sizes.
Set ``context_pad=0`` to search with the exact crop.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2
from scipy.ndimage import maximum_filter, rotate

from .errors import BandTooSmallError, NoSeedError
from .geometry import PixelBox, iou, nms
from .ingest import GrayImage

__all__ = [
    "MatchParams",
    "Template",
    "extract_templates",
    "storey_strip",
    "match_template",
    "post_process_frame",
    "EvalResult",
    "eval_detections",
    "eval_detection_sets",
]

ROTATIONS_DEG = (-2.5, 0.0, 2.5)

# Seeds smaller than this on either side carry too little structure to
# match against and are skipped with a warning.
MIN_PATCH_PX = 4

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class MatchParams:
    """Knobs for template search and the final suppression pass.

    peak_min_separation=None means "half the template width", resolved
    per template at match time.
    """

    ncc_threshold: float = 0.80
    strip_margin: float = 0.5
    nms_iou: float = 0.3
    peak_min_separation: float | None = None
    context_pad: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.ncc_threshold <= 1.0):
            raise ValueError(f"ncc_threshold must be in (0, 1], got {self.ncc_threshold}")
        if self.strip_margin < 0:
            raise ValueError(f"strip_margin must be >= 0, got {self.strip_margin}")
        if not (0.0 <= self.nms_iou <= 1.0):
            raise ValueError(f"nms_iou must be in [0, 1], got {self.nms_iou}")
        if self.peak_min_separation is not None and self.peak_min_separation <= 0:
            raise ValueError("peak_min_separation must be positive when given")
        if self.context_pad < 0:
            raise ValueError(f"context_pad must be >= 0, got {self.context_pad}")


@dataclass(frozen=True)
class Template:
    """One search patch cut around a seed detection.

    pixels: float64 patch, same shape as origin_box rounds to.
    rotation_deg: one of ROTATIONS_DEG; 0 is the raw crop.
    origin_box: the (possibly padded, image-clipped) region the patch
        was cut from, in frame coordinates.
    seed_box: the detection the patch came from; candidates are emitted
        at this box's width and height.
    """

    pixels: np.ndarray
    rotation_deg: float
    origin_box: PixelBox
    seed_box: PixelBox


def _crop_region(image: GrayImage, seed: PixelBox, pad: float):
    """Integer crop bounds of the seed expanded by ``pad`` per side."""
    x0 = max(0, math.floor(seed.x - pad * seed.w))
    y0 = max(0, math.floor(seed.y - pad * seed.h))
    x1 = min(image.width, math.ceil(seed.x + seed.w + pad * seed.w))
    y1 = min(image.height, math.ceil(seed.y + seed.h + pad * seed.h))
    return x0, y0, x1, y1


def extract_templates(image: GrayImage, detections: list[PixelBox],
                      context_pad: float = 0.25) -> list[Template]:
    """Cut a patch per detection and add its +-2.5 degree variants.

    Rotation is about the patch center with bilinear resampling;
    samples falling outside the patch replicate the nearest edge, and
    the result keeps the original patch dimensions. Raises NoSeedError
    on an empty detection list; degenerate seeds (either side smaller
    than MIN_PATCH_PX) are skipped with a warning.
    """
    if not detections:
        raise NoSeedError("post-processing needs at least one detection to seed from")
    out: list[Template] = []
    for seed in detections:
        if seed.w < MIN_PATCH_PX or seed.h < MIN_PATCH_PX:
            warnings.warn(
                f"seed {seed.w:.1f}x{seed.h:.1f} px below {MIN_PATCH_PX} px, skipped",
                RuntimeWarning, stacklevel=2,
            )
            continue
        x0, y0, x1, y1 = _crop_region(image, seed, context_pad)
        if x1 - x0 < MIN_PATCH_PX or y1 - y0 < MIN_PATCH_PX:
            warnings.warn(
                f"seed at ({seed.x:.1f}, {seed.y:.1f}) leaves a degenerate crop, skipped",
                RuntimeWarning, stacklevel=2,
            )
            continue
        patch = image.pixels[y0:y1, x0:x1].astype(np.float64)
        origin = PixelBox(x=float(x0), y=float(y0), w=float(x1 - x0), h=float(y1 - y0),
                          score=seed.score)
        for angle in ROTATIONS_DEG:
            if angle == 0.0:
                pixels = patch
            else:
                pixels = rotate(patch, angle, reshape=False, order=1, mode="nearest")
            out.append(Template(pixels=pixels, rotation_deg=angle,
                                origin_box=origin, seed_box=seed))
    return out


def storey_strip(seed: PixelBox, image_h: int, params: MatchParams) -> tuple[float, float]:
    """Vertical band [y_lo, y_hi) to search for more windows of this storey.

    The band is the seed's own rows plus strip_margin seed-heights of
    slack above and below, clamped to the image. It spans the full
    image width.
    """
    y_lo = max(0.0, seed.y - params.strip_margin * seed.h)
    y_hi = min(float(image_h), seed.y + seed.h + params.strip_margin * seed.h)
    return y_lo, y_hi


def _window_sums(arr: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Sum of every th x tw window of arr, via a summed-area table."""
    sat = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=sat[1:, 1:])
    return sat[th:, tw:] - sat[:-th, tw:] - sat[th:, :-tw] + sat[:-th, :-tw]


def _band_state(band: np.ndarray, th: int, tw: int) -> dict:
    """Template-shape-dependent precomputation over one search band.

    The band's FFT and its sliding-window sums depend only on the band
    and the template's shape, not its content, so one state serves all
    rotated variants of a seed and every other seed searching the same
    rows with the same patch shape.
    """
    bh, bw = band.shape
    fshape = (next_fast_len(bh + th - 1), next_fast_len(bw + tw - 1))
    n = th * tw
    s1 = _window_sums(band, th, tw)
    s2 = _window_sums(band * band, th, tw)
    win_var = np.maximum(s2 - s1 * s1 / n, 0.0)
    return {"shape": band.shape, "fshape": fshape,
            "fft": rfft2(band, fshape), "win_std": np.sqrt(win_var)}


def _zncc_from_state(state: dict, template: np.ndarray) -> np.ndarray:
    """ZNCC scores given a band state built for this template shape."""
    th, tw = template.shape
    bh, bw = state["shape"]
    t_zero = template - template.mean()
    t_norm = math.sqrt(float(np.sum(t_zero * t_zero)))
    if t_norm <= _VAR_EPS:
        return np.zeros((bh - th + 1, bw - tw + 1), dtype=np.float64)
    # Correlation as convolution with the flipped kernel, by pointwise
    # product in the frequency domain. The mean of t_zero is 0, so the
    # valid slice is already the full ZNCC numerator.
    t_fft = rfft2(t_zero[::-1, ::-1], state["fshape"])
    conv = irfft2(state["fft"] * t_fft, state["fshape"])
    num = conv[th - 1:bh, tw - 1:bw]
    denom = state["win_std"] * t_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > _VAR_EPS, num / denom, 0.0)
    return np.clip(scores, -1.0, 1.0)


def _zncc_map(band: np.ndarray, template: np.ndarray) -> np.ndarray:
    """ZNCC of template against every valid placement in band.

    Output shape is (band_h - th + 1, band_w - tw + 1). Placements or
    templates with (numerically) zero variance score 0.
    """
    th, tw = template.shape
    return _zncc_from_state(_band_state(band, th, tw), template)


def _pick_peaks(scores: np.ndarray, threshold: float, min_sep: float):
    """Local maxima >= threshold, greedily thinned to min_sep spacing.

    Returns (row, col, score) triples in descending score order with a
    deterministic (row, col) tie-break.
    """
    local_max = maximum_filter(scores, size=3, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero((scores >= threshold) & (scores == local_max))
    if rows.size == 0:
        return []
    order = sorted(
        zip(rows.tolist(), cols.tolist(), scores[rows, cols].tolist()),
        key=lambda rcs: (-rcs[2], rcs[0], rcs[1]),
    )
    kept: list[tuple[int, int, float]] = []
    for r, c, s in order:
        if all(math.hypot(r - kr, c - kc) >= min_sep for kr, kc, _ in kept):
            kept.append((r, c, s))
    return kept


def match_template(image: GrayImage, template: Template,
                   band: tuple[float, float], params: MatchParams,
                   _cache: dict | None = None) -> list[PixelBox]:
    """Slide a template over a horizontal band and keep the strong peaks.

    Every accepted correlation peak becomes a PixelBox at the seed's
    width and height, positioned by the seed's offset inside the patch,
    carrying the raw ZNCC score. The seed's own location is reported
    like any other peak (a template trivially matches the window it was
    cut from); post_process_frame is the layer that discards it. Raises
    BandTooSmallError when the template does not fit inside the band.
    ``_cache`` (a plain dict) lets one frame's calls share band
    precomputation.
    """
    y_lo = int(math.floor(band[0]))
    y_hi = int(math.ceil(band[1]))
    th, tw = template.pixels.shape
    if y_hi - y_lo < th or image.width < tw:
        raise BandTooSmallError(
            f"band of {y_hi - y_lo}x{image.width} px cannot hold a {th}x{tw} template"
        )
    key = (y_lo, y_hi, th, tw)
    state = _cache.get(key) if _cache is not None else None
    if state is None:
        band_arr = image.pixels[y_lo:y_hi, :].astype(np.float64)
        state = _band_state(band_arr, th, tw)
        if _cache is not None:
            _cache[key] = state
    scores = _zncc_from_state(state, template.pixels)
    min_sep = params.peak_min_separation
    if min_sep is None:
        min_sep = 0.5 * tw
    inner_dx = template.seed_box.x - template.origin_box.x
    inner_dy = template.seed_box.y - template.origin_box.y
    out = []
    for r, c, s in _pick_peaks(scores, params.ncc_threshold, min_sep):
        out.append(PixelBox(
            x=c + inner_dx,
            y=y_lo + r + inner_dy,
            w=template.seed_box.w,
            h=template.seed_box.h,
            score=s,
        ))
    return out


def post_process_frame(image: GrayImage, detections: list[PixelBox],
                       params: MatchParams | None = None,
                       diag: dict | None = None) -> list[PixelBox]:
    """Complete a frame's detections by storey-strip template matching.

    The union of originals and matched candidates goes through NMS at
    params.nms_iou. Originals keep their detector score; candidates
    carry their ZNCC score scaled by 0.99, so at equal overlap an
    original always outranks its own echo. A template's match at its own
    seed location is dropped before the union: that window already has
    its original detection, and re-proposing it would only let a
    near-perfect self-correlation outvote the detector's own score.
    When ``diag`` is a dict it receives the counts {originals,
    candidates, kept}.
    """
    if params is None:
        params = MatchParams()
    templates = extract_templates(image, detections, context_pad=params.context_pad)
    merged = list(detections)
    n_candidates = 0
    band_cache: dict = {}
    for template in templates:
        band = storey_strip(template.seed_box, image.height, params)
        try:
            candidates = match_template(image, template, band, params,
                                        _cache=band_cache)
        except BandTooSmallError as exc:
            warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
            continue
        seed = template.seed_box
        min_sep = params.peak_min_separation
        if min_sep is None:
            min_sep = 0.5 * template.pixels.shape[1]
        candidates = [c for c in candidates
                      if math.hypot(c.x - seed.x, c.y - seed.y) >= min_sep]
        n_candidates += len(candidates)
        for c in candidates:
            merged.append(PixelBox(x=c.x, y=c.y, w=c.w, h=c.h, score=c.score * 0.99))
    kept = nms(merged, params.nms_iou)
    if diag is not None:
        diag.update(originals=len(detections), candidates=n_candidates, kept=len(kept))
    return kept


# --------------------------------------------------------------------------
# Evaluation against ground truth


@dataclass(frozen=True)
class EvalResult:
    """Detection quality against a truth set.

    Undefined ratios are None, never NaN: precision with no
    predictions, recall/accuracy/ap with no truth boxes.
    accuracy_pct is recall expressed as a percentage.
    """

    precision: float | None
    recall: float | None
    accuracy_pct: float | None
    ap: float | None
    matched: int
    n_predicted: int
    n_truth: int


def eval_detections(predicted: list[PixelBox], truth: list[PixelBox],
                    match_iou: float = 0.5) -> EvalResult:
    """Score predictions by greedy one-to-one matching against truth.

    Predictions are visited in descending score order (ties keep input
    order); each takes the unmatched truth box of highest IoU if that
    IoU reaches match_iou. AP is the trapezoidal area under the
    precision-recall curve swept over distinct score thresholds, with
    the curve anchored at recall 0 using the first point's precision.
    """
    if not (0.0 < match_iou <= 1.0):
        raise ValueError(f"match_iou must be in (0, 1], got {match_iou}")
    n_pred, n_truth = len(predicted), len(truth)
    order = sorted(range(n_pred), key=lambda i: -predicted[i].score)
    truth_free = [True] * n_truth
    tp_flags: list[bool] = []
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, t in enumerate(truth):
            if not truth_free[j]:
                continue
            v = iou(predicted[i], t)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= match_iou:
            truth_free[best_j] = False
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    matched = sum(tp_flags)

    precision = matched / n_pred if n_pred else None
    recall = matched / n_truth if n_truth else None
    accuracy = 100.0 * recall if recall is not None else None

    if n_truth == 0:
        ap = None
    elif n_pred == 0:
        ap = 0.0
    else:
        pts: list[tuple[float, float]] = []  # (recall, precision) per threshold
        tp = 0
        for k, i in enumerate(order):
            tp += tp_flags[k]
            last_of_score = (k + 1 == n_pred
                             or predicted[order[k + 1]].score != predicted[i].score)
            if last_of_score:
                pts.append((tp / n_truth, tp / (k + 1)))
        ap = 0.0
        prev_r, prev_p = 0.0, pts[0][1]
        for r, p in pts:
            ap += (r - prev_r) * (p + prev_p) / 2.0
            prev_r, prev_p = r, p
    return EvalResult(precision=precision, recall=recall, accuracy_pct=accuracy,
                      ap=ap, matched=matched, n_predicted=n_pred, n_truth=n_truth)


def eval_detection_sets(pred_by_frame: dict, truth_by_frame: dict,
                        match_iou: float = 0.5):
    """Evaluate frame-keyed detections: per-frame results plus a pooled one.

    Matching never crosses frames. The pooled result shifts each
    frame's boxes far apart horizontally and evaluates once, so pooled
    precision/recall are ratios of summed counts and the pooled AP uses
    one global score ordering.
    """
    frame_ids = sorted(set(pred_by_frame) | set(truth_by_frame))
    per_frame = {}
    shifted_pred: list[PixelBox] = []
    shifted_truth: list[PixelBox] = []
    for k, frame_id in enumerate(frame_ids):
        pred = list(pred_by_frame.get(frame_id, []))
        truth = list(truth_by_frame.get(frame_id, []))
        per_frame[frame_id] = eval_detections(pred, truth, match_iou)
        dx = k * 1e7
        shifted_pred.extend(
            PixelBox(x=b.x + dx, y=b.y, w=b.w, h=b.h, score=b.score) for b in pred)
        shifted_truth.extend(
            PixelBox(x=b.x + dx, y=b.y, w=b.w, h=b.h, score=b.score) for b in truth)
    pooled = eval_detections(shifted_pred, shifted_truth, match_iou)
    return per_frame, pooled
