"""Quantitative evaluation: masked NCC and SSIM, paired Wilcoxon signed-rank,
reslice latency statistics and report emission.

Metrics are computed strictly over the intersection of coverage masks, so a
method is never penalized or rewarded for pixels the other method could not
assign. That policy matters for direction-aware vs hole-filled comparisons
and is therefore part of the contract, not an implementation detail.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError
from .reslice import ReslicePlane, ResliceConfig, ResliceImage, reslice

SSIM_DEFAULT_WINDOW = 7
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _as_masked_pair(a, a_mask, b, b_mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    mask = np.ones(a.shape, dtype=bool)
    if a_mask is not None:
        mask &= np.asarray(a_mask, dtype=bool)
    if b_mask is not None:
        mask &= np.asarray(b_mask, dtype=bool)
    return a, b, mask


def ncc(a, b, a_mask=None, b_mask=None) -> float:
    """Zero-mean normalized cross-correlation over the mask intersection."""
    a, b, mask = _as_masked_pair(a, a_mask, b, b_mask)
    va = a[mask]
    vb = b[mask]
    if va.size < 2:
        raise UndefinedMetricError("ncc needs at least 2 mutually valid pixels")
    da = va - va.mean()
    db = vb - vb.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        raise UndefinedMetricError("ncc undefined for zero-variance input")
    return float(np.dot(da, db)) / denom


def _window_view(img: np.ndarray, win: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(img, (win, win))


def ssim(a, b, a_mask=None, b_mask=None, window: int = SSIM_DEFAULT_WINDOW,
         c1: float = SSIM_C1, c2: float = SSIM_C2) -> float:
    """Mean local SSIM (uniform window, unbiased covariance) over all windows
    fully inside the mask intersection."""
    if window % 2 == 0 or window < 3:
        raise InvalidArgumentError("ssim window must be odd and >= 3")
    a, b, mask = _as_masked_pair(a, a_mask, b, b_mask)
    if a.shape[0] < window or a.shape[1] < window:
        raise UndefinedMetricError("image smaller than the ssim window")
    wa = _window_view(a, window)
    wb = _window_view(b, window)
    complete = _window_view(mask.astype(np.float64), window).sum(axis=(-1, -2)) == window * window
    if not complete.any():
        raise UndefinedMetricError("no complete ssim window inside the mask intersection")
    n = window * window
    norm = n / (n - 1.0)  # unbiased, matching the common reference implementation
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = norm * ((wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a)
    var_b = norm * ((wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b)
    cov = norm * ((wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b)
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num[complete] / den[complete]).mean())


def wilcoxon_signed_rank(diffs) -> float:
    """Two-sided p for paired differences (zeros dropped).

    n <= 25: exact tail enumeration over all 2^n sign patterns (computed by
    dynamic programming over doubled midranks, identical to brute force).
    n > 25: normal approximation with tie correction.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0.0]
    n = d.size
    if n < 5:
        raise InvalidArgumentError(f"wilcoxon needs >= 5 nonzero differences, got {n}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= 25:
        return _exact_two_sided_p(ranks, w_plus)
    mu = n * (n + 1) / 4.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    sigma2 -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    z = (w_plus - mu) / math.sqrt(sigma2)
    p = 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0))
    return min(1.0, p)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    # distribution of W+ over all sign patterns; doubled ranks keep midranks integral
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total_sum = int(doubled.sum())
    counts = np.zeros(total_sum + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total_sum + 1 - r]
        counts = counts + shifted
    w2 = int(round(2.0 * w_plus))
    n_patterns = 1 << len(ranks)
    c_le = int(sum(counts[: w2 + 1]))
    c_ge = int(sum(counts[w2:]))
    p = 2.0 * min(c_le, c_ge) / n_patterns
    return min(1.0, p)


@dataclass(frozen=True)
class SimilarityResult:
    ncc: float
    ssim: float
    valid_pixel_count: int


def compare_images(candidate: ResliceImage, truth: ResliceImage) -> SimilarityResult:
    """Both metrics over the intersection of the two coverage masks."""
    inter = int(np.count_nonzero(candidate.coverage & truth.coverage))
    if inter == 0:
        raise UndefinedMetricError("coverage masks do not intersect")
    return SimilarityResult(
        ncc=ncc(candidate.pixels, truth.pixels, candidate.coverage, truth.coverage),
        ssim=ssim(candidate.pixels, truth.pixels, candidate.coverage, truth.coverage),
        valid_pixel_count=inter,
    )


def _median_iqr(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "median": float(np.median(arr)),
        "iqr_low": float(np.percentile(arr, 25)),
        "iqr_high": float(np.percentile(arr, 75)),
    }


@dataclass
class ComparisonReport:
    pair_ids: list[str]
    method_a: str
    method_b: str
    results_a: list[SimilarityResult]
    results_b: list[SimilarityResult]
    summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "methods": [self.method_a, self.method_b],
            "pairs": [
                {
                    "id": pid,
                    self.method_a: {"ncc": ra.ncc, "ssim": ra.ssim, "valid": ra.valid_pixel_count},
                    self.method_b: {"ncc": rb.ncc, "ssim": rb.ssim, "valid": rb.valid_pixel_count},
                }
                for pid, ra, rb in zip(self.pair_ids, self.results_a, self.results_b)
            ],
            "summary": self.summary,
            "timing": self.timing,
        }


def run_comparison(
    images_a: list[ResliceImage],
    images_b: list[ResliceImage],
    ground_truths: list[ResliceImage],
    pair_ids: list[str] | None = None,
    method_a: str = "dare",
    method_b: str = "baseline",
    latencies: dict[str, list[float]] | None = None,
) -> ComparisonReport:
    """Paired evaluation of two methods against shared ground truths:
    per-pair NCC/SSIM, medians with IQR, and the paired Wilcoxon two-sided p
    on per-pair metric differences (method A minus method B)."""
    if not (len(images_a) == len(images_b) == len(ground_truths)) or not images_a:
        raise InvalidArgumentError("paired comparison needs equal-length non-empty image sets")
    if pair_ids is None:
        pair_ids = [f"pair{index:04d}" for index in range(len(images_a))]
    # a pair where either method's metric is undefined (no overlap, zero
    # variance, no complete window) is excluded from BOTH sides to keep the
    # design paired; exclusions are reported, never silent
    results_a: list[SimilarityResult] = []
    results_b: list[SimilarityResult] = []
    kept_ids: list[str] = []
    excluded: list[dict] = []
    for pid, img_a, img_b, gt in zip(pair_ids, images_a, images_b, ground_truths):
        try:
            ra = compare_images(img_a, gt)
            rb = compare_images(img_b, gt)
        except UndefinedMetricError as e:
            excluded.append({"id": pid, "reason": str(e)})
            continue
        results_a.append(ra)
        results_b.append(rb)
        kept_ids.append(pid)
    pair_ids = kept_ids
    if not pair_ids:
        raise InvalidArgumentError("every pair had undefined metrics")
    summary: dict = {"pair_count": len(pair_ids), "excluded_pairs": excluded}
    for metric in ("ncc", "ssim"):
        va = [getattr(r, metric) for r in results_a]
        vb = [getattr(r, metric) for r in results_b]
        diffs = np.asarray(va) - np.asarray(vb)
        entry = {
            method_a: _median_iqr(va),
            method_b: _median_iqr(vb),
        }
        if np.all(diffs == 0.0):
            entry["wilcoxon_p"] = 1.0
            entry["wilcoxon_note"] = "no difference"
        else:
            try:
                entry["wilcoxon_p"] = wilcoxon_signed_rank(diffs)
            except InvalidArgumentError:
                entry["wilcoxon_p"] = None
                entry["wilcoxon_note"] = "too few nonzero paired differences"
        summary[metric] = entry
    report = ComparisonReport(
        pair_ids=list(pair_ids),
        method_a=method_a,
        method_b=method_b,
        results_a=results_a,
        results_b=results_b,
        summary=summary,
    )
    if latencies:
        report.timing = {
            name: latency_stats(vals) for name, vals in latencies.items() if len(vals) > 0
        }
    return report


def latency_stats(samples_ms: list[float]) -> dict:
    arr = np.asarray(samples_ms, dtype=float)
    return {
        "count": int(arr.size),
        "median_ms": float(np.median(arr)),
        "p95_ms": float(np.percentile(arr, 95)),
        "mean_ms": float(arr.mean()),
    }


def time_reslice(volume, planes: list[ReslicePlane], cfg: ResliceConfig | None = None,
                 repetitions: int = 1, warmup: int = 2) -> dict:
    """Wall-clock reslice latency (query to final image buffer) over a plane
    set; warmup calls excluded, reported as median/p95."""
    if len(planes) < 10:
        raise InvalidArgumentError("latency measurement needs at least 10 planes")
    cfg = cfg or ResliceConfig()
    for plane in planes[:warmup]:
        reslice(volume, plane, cfg)
    samples = []
    for _ in range(repetitions):
        for plane in planes:
            t0 = time.perf_counter()
            reslice(volume, plane, cfg)
            samples.append((time.perf_counter() - t0) * 1000.0)
    return latency_stats(samples)


# ---------------------------------------------------------------------------
# report files


def write_report(report: ComparisonReport, out_dir, latency_by_pair: dict[str, dict[str, float]] | None = None) -> dict:
    """Emit report.json (full structure), pairs.csv (one record per pair and
    method: id, method, ncc, ssim, latency_ms) and summary.txt.

    Metric content is bit-reproducible for a fixed seed; wall-clock fields
    (the latency column and the report "timing" subtree) are not.
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "pairs.csv")
    txt_path = os.path.join(out_dir, "summary.txt")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "method", "ncc", "ssim", "latency_ms"])
        for pid, ra, rb in zip(report.pair_ids, report.results_a, report.results_b):
            for method, res in ((report.method_a, ra), (report.method_b, rb)):
                lat = ""
                if latency_by_pair and pid in latency_by_pair:
                    lat = f"{latency_by_pair[pid].get(method, float('nan')):.3f}"
                writer.writerow([pid, method, f"{res.ncc:.9f}", f"{res.ssim:.9f}", lat])
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(format_summary(report))
    return {"json": json_path, "csv": csv_path, "txt": txt_path}


def format_summary(report: ComparisonReport) -> str:
    lines = [f"paired comparison: {report.method_a} vs {report.method_b} "
             f"({len(report.pair_ids)} pairs)"]
    excluded = report.summary.get("excluded_pairs", [])
    if excluded:
        lines.append(f"excluded {len(excluded)} pair(s) with undefined metrics")
    lines.append("")
    for metric in ("ncc", "ssim"):
        if metric not in report.summary:
            continue
        entry = report.summary[metric]
        lines.append(f"{metric.upper()}")
        for method in (report.method_a, report.method_b):
            stats = entry[method]
            lines.append(
                f"  {method:<10} median {stats['median']:+.4f} "
                f"(IQR {stats['iqr_low']:+.4f} .. {stats['iqr_high']:+.4f})"
            )
        note = entry.get("wilcoxon_note")
        p = entry["wilcoxon_p"]
        p_text = "n/a" if p is None else f"{p:.3e}"
        lines.append(f"  wilcoxon two-sided p = {p_text}" + (f" ({note})" if note else ""))
        lines.append("")
    for name, stats in report.timing.items():
        lines.append(
            f"latency[{name}]: median {stats['median_ms']:.2f} ms, "
            f"p95 {stats['p95_ms']:.2f} ms over {stats['count']} reslices"
        )
    return "\n".join(lines) + "\n"
