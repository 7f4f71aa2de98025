"""Command-line entry point: ``photocorr <subcommand> [options]``.

Exit codes: 0 success, 2 usage, 3 invalid input or configuration,
4 unsupported operation for the input, 5 analysis or runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import List, Optional

import numpy as np
import yaml

from . import frame_store
from .analysis import OBJECT_COLUMNS, analyze_stack, scene_regions, stack_image_offset
from .classifier import calibrate_single_refs, classify
from .config import RunConfig, load_config
from .core_model import (PhotonNumberDist, check_chain_inequality, factorial_moment_gn,
                         g2_integrated, g2_m_emitters, klyshko_ratio)
from .errors import (AnalysisError, CapabilityError, PhotocorrError,
                     UndefinedRatioError, ValidationError)
from .estimators.higher_order import count_histogram
from .estimators.correlation import tally_stack
from .estimators.regions import ObjectRegion, attach_noise_regions, disc_region
from .estimators.threshold import DEFAULT_THRESHOLDS, select_threshold, threshold_scan
from .estimators.timing import CoincidenceHistogram, build_coincidence_histogram, decay_model, \
    fit_decay_model
from .sim_engine import simulate_photon_stream, simulate_stack, split_stream, substream, \
    with_gate_width

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_CAPABILITY, EXIT_RUNTIME = 0, 2, 3, 4, 5
DEFAULT_GATES = (10.0, 15.0, 20.0, 30.0, 40.0)
OCCUPANCY_LIMIT = 0.1


class UsageError(Exception):
    """Missing or contradictory command-line arguments."""


def parse_list(text: str) -> List[float]:
    """Comma-separated numbers, or ``start:stop:step`` with an inclusive stop."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(n, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _info(msg: str):
    print(msg, file=sys.stderr)


def _open_out(path):
    return open(path, "w", newline="", encoding="utf-8") if path else sys.stdout


def _write_table(rows, columns, path):
    fh = _open_out(path)
    try:
        frame_store.export_table(rows, fh, columns=columns)
    finally:
        if path:
            fh.close()


def _config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _seed(args, cfg: RunConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.simulation.get("seed")
    if seed is None:
        raise UsageError("a --seed (or simulation.seed in the config) is required")
    return int(seed)


def _frames(args, cfg: RunConfig) -> int:
    frames = args.frames if args.frames is not None else cfg.simulation.get("frames")
    if frames is None:
        raise UsageError("--frames (or simulation.frames in the config) is required")
    if int(frames) < 1:
        raise UsageError("--frames must be at least 1")
    return int(frames)


def _need_scene(cfg: RunConfig):
    if cfg.scene is None:
        raise UsageError("the config has no scene section")
    return cfg.scene


def _baseline_lag(args, cfg: RunConfig) -> int:
    lag = args.baseline_lag if args.baseline_lag is not None else cfg.analysis.get(
        "baseline_lag", 1)
    if int(lag) < 1:
        raise UsageError("--baseline-lag must be at least 1")
    return int(lag)


def load_regions(path, stack) -> List[ObjectRegion]:
    """Regions file: YAML list of {id, center, radius[, noise_center]} entries,
    optionally under a ``regions`` key next to ``image_offset_b``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: YAML syntax error: {exc}") from None
    offset = None
    if isinstance(data, dict):
        offset = data.get("image_offset_b")
        data = data.get("regions")
    if not isinstance(data, list) or not data:
        raise ValidationError(f"{path}: expected a nonempty list of regions")
    if offset is None:
        offset = stack_image_offset(stack)
    regions, need_noise = [], False
    for i, entry in enumerate(data):
        try:
            reg = disc_region(entry.get("id", i), tuple(entry["center"]),
                              float(entry.get("radius", 3.0)), offset, entry.get("noise_center"))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"{path}: region {i}: missing or invalid field {exc}") from None
        need_noise |= not reg.noise_region
        regions.append(reg)
    if need_noise:
        with_noise = attach_noise_regions(regions, stack.accumulate())
        regions = [r if r.noise_region else n for r, n in zip(regions, with_noise)]
    return regions


def _regions(args, stack):
    spec = args.regions or "auto"
    return "auto" if spec == "auto" else load_regions(spec, stack)


def _resolve_regions(args, stack):
    regions = _regions(args, stack)
    if regions == "auto":
        from .analysis import measure_drift, shifted_accumulate
        from .estimators.regions import auto_regions
        correction = measure_drift(stack)
        shifts = correction.per_frame(stack.n_frames) if correction is not None else None
        return auto_regions(shifted_accumulate(stack, shifts), stack_image_offset(stack)), shifts
    return regions, None


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = _config(args)
    scene = _need_scene(cfg)
    seed, frames = _seed(args, cfg), _frames(args, cfg)
    if not args.out:
        raise UsageError("--out is required")
    stack = simulate_stack(scene, cfg.camera, cfg.drift, frames, seed, workers=args.workers)
    frame_store.write_stack(stack, args.out)
    mean, peak = stack.mean_occupancy()
    print(f"objects: {len(scene.objects)}")
    print(f"frames: {stack.n_frames}")
    print(f"events: {stack.n_events}")
    print(f"mean occupancy: {mean:.6g} events/superpixel/frame (peak {peak:.6g})")
    if peak > OCCUPANCY_LIMIT:
        _info(f"warning: peak occupancy {peak:.3g} exceeds {OCCUPANCY_LIMIT}; "
              "multi-photon pile-up will bias the estimates")
    return EXIT_OK


def _parse_refs(text):
    if text is None:
        return None
    vals = parse_list(text)
    if len(vals) != 2:
        raise UsageError("--refs takes B1,g2_1")
    return tuple(vals)


def cmd_analyze(args) -> int:
    cfg = _config(args)
    if not args.stack:
        raise UsageError("--stack is required")
    stack = frame_store.read_stack(args.stack)
    threshold = args.threshold if args.threshold is not None else cfg.analysis.get("threshold")
    report = analyze_stack(stack, _regions(args, stack), _baseline_lag(args, cfg), threshold,
                           single_refs=_parse_refs(args.refs))
    _write_table([r.as_row() for r in report.rows], OBJECT_COLUMNS, args.out)
    for note in report.notes:
        _info(note)
    if report.single_refs is not None:
        _info(f"single-emitter references: B1={report.single_refs[0]:.6g} "
              f"g2_1={report.single_refs[1]:.6g}")
    return EXIT_OK


def cmd_sweep_threshold(args) -> int:
    cfg = _config(args)
    if not args.stack:
        raise UsageError("--stack is required")
    stack = frame_store.read_stack(args.stack)
    if not stack.is_analog:
        raise CapabilityError("threshold sweeps need an analog (PFA1) stack")
    thresholds = parse_list(args.thresholds) if args.thresholds else list(
        cfg.analysis.get("thresholds", DEFAULT_THRESHOLDS))
    if not thresholds:
        raise UsageError("empty threshold list")
    regions, shifts = _resolve_regions(args, stack)
    region = regions[0]
    if args.object is not None:
        match = [r for r in regions if str(r.id) == str(args.object)]
        if not match:
            raise UsageError(f"no object with id {args.object}")
        region = match[0]
    points = threshold_scan(stack, region, thresholds, _baseline_lag(args, cfg), shifts)
    rows = [{"threshold": p.threshold, "g2_corr": p.g2_corrected, "stderr": p.stderr,
             "snr": p.snr} for p in points]
    _write_table(rows, ("threshold", "g2_corr", "stderr", "snr"), args.out)
    best_snr, best_err = select_threshold(points)
    _info(f"snr-optimal threshold: {best_snr:g}")
    _info(f"stderr-optimal threshold: {best_err:g}" if best_err is not None
          else "stderr-optimal threshold: none")
    return EXIT_OK


def sweep_gates(cfg: RunConfig, gates, frames: int, seed: int, lag: int = 1,
                radius: float = 3.0, workers: int = 1) -> List[dict]:
    """Simulate and analyze the scene at each gate width.

    The mean is inverse-variance weighted over the objects holding as many
    emitters as the first object, which sets the model column.
    """
    scene = _need_scene(cfg)
    first = scene.objects[0]
    same = {i for i, o in enumerate(scene.objects) if o.m == first.m}
    rows = []
    for i, gate in enumerate(gates):
        gate_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        stack = simulate_stack(scene, with_gate_width(cfg.camera, gate), cfg.drift, frames,
                               gate_seed, workers=workers)
        report = analyze_stack(stack, scene_regions(stack, radius), lag,
                               single_refs=(1.0, 0.5))
        good = [(r.g2_corr, r.stderr) for r in report.rows
                if r.id in same and math.isfinite(r.g2_corr) and r.stderr > 0]
        if not good:
            raise AnalysisError(f"gate {gate:g} ns: no object gave a usable estimate")
        w = np.array([1.0 / e**2 for _, e in good])
        g = np.array([v for v, _ in good])
        model = g2_m_emitters(g2_integrated(first.emitters[0], gate), first.m)
        rows.append({"Tg": float(gate), "g2_mean": float((w * g).sum() / w.sum()),
                     "stderr": float(1.0 / math.sqrt(w.sum())), "eq4_model": model})
    return rows


def cmd_sweep_gate(args) -> int:
    cfg = _config(args)
    _need_scene(cfg)
    gates = parse_list(args.gates) if args.gates else list(
        cfg.analysis.get("gates", DEFAULT_GATES))
    if not gates:
        raise UsageError("empty gate list")
    rows = sweep_gates(cfg, gates, _frames(args, cfg), _seed(args, cfg), _baseline_lag(args, cfg),
                       float(cfg.analysis.get("region_radius", 3.0)), args.workers)
    _write_table(rows, ("Tg", "g2_mean", "stderr", "eq4_model"), args.out)
    return EXIT_OK


def _read_histogram(path) -> CoincidenceHistogram:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        lo = np.array([float(r["tau_lo"]) for r in rows])
        hi = np.array([float(r["tau_hi"]) for r in rows])
        counts = np.array([float(r["count"]) for r in rows])
        expected = np.array([float(r["expected"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: histogram needs numeric columns "
                              f"tau_lo,tau_hi,count,expected ({exc})") from None
    if lo.size == 0:
        raise ValidationError(f"{path}: empty histogram")
    width = float(hi[0] - lo[0])
    edges = np.append(lo, hi[-1])
    return CoincidenceHistogram(width, edges, counts, expected)


def cmd_fit_decay(args) -> int:
    cfg = _config(args)
    if args.histogram:
        hist = _read_histogram(args.histogram)
    else:
        scene = _need_scene(cfg)
        hbt = cfg.hbt
        emitter = scene.objects[0].emitters[0]
        duration = float(hbt.get("duration", 3.2e8))
        rng = substream(_seed(args, cfg), 99)
        stream = simulate_photon_stream(emitter, duration, rng, float(hbt.get("efficiency", 1.0)))
        ta, tb = split_stream(stream, rng, float(hbt.get("splitter_ratio", 0.5)))
        hist = build_coincidence_histogram((ta, tb), float(hbt.get("bin_width", 1.0)),
                                           float(hbt.get("window", 100.0)), duration)
    fit = fit_decay_model(hist)
    lo, hi = hist.edges[:-1], hist.edges[1:]
    model = decay_model(fit.k_hat, fit.p_hat, lo, hi)
    norm = hist.normalized()
    rows = [{"tau_lo": a, "tau_hi": b, "count": float(c), "expected": float(e),
             "normalized": float(n), "model": float(m)}
            for a, b, c, e, n, m in zip(lo, hi, hist.counts, hist.expected, norm, model)]
    _write_table(rows, ("tau_lo", "tau_hi", "count", "expected", "normalized", "model"),
                 args.out)
    _info(f"k_hat = {fit.k_hat:.6g} +- {fit.k_err:.2g} 1/ns")
    _info(f"p_hat = {fit.p_hat:.6g} +- {fit.p_err:.2g}")
    _info(f"reduced chi2 = {fit.chi2_reduced:.4g} over {fit.n_bins} bins")
    return EXIT_OK


def _distribution(args, cfg) -> PhotonNumberDist:
    if args.dist:
        return PhotonNumberDist(parse_list(args.dist))
    if args.counts:
        return PhotonNumberDist.from_counts(parse_list(args.counts))
    if args.input:
        with open(args.input, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if isinstance(data, dict) and "probabilities" in data:
            return PhotonNumberDist(data["probabilities"])
        if isinstance(data, dict) and "counts" in data:
            return PhotonNumberDist.from_counts(data["counts"])
        if isinstance(data, list):
            return PhotonNumberDist(data)
        raise ValidationError(f"{args.input}: expected a list or a probabilities/counts key")
    if args.stack:
        stack = frame_store.read_stack(args.stack)
        if stack.is_analog:
            raise CapabilityError("binarize analog stacks before counting photons")
        regions, shifts = _resolve_regions(args, stack)
        tally = tally_stack(stack, regions[:1], 1, shifts)
        return PhotonNumberDist.from_counts(count_histogram(tally, 0))
    raise UsageError("give --dist, --counts, --input or --stack")


RESOLUTION_FLOOR = 1e-9
VERDICT_TOL = 1e-9


def resolved_support(dist: PhotonNumberDist) -> int:
    """Largest photon number whose probability is at or above the resolution floor."""
    ks = [k for k in range(dist.max_photons + 1) if dist[k] >= RESOLUTION_FLOOR]
    return max(ks) if ks else 0


def nonclassical_table(dist: PhotonNumberDist) -> List[dict]:
    """Klyshko ratio and chain-inequality verdict at each order.

    Entries below the resolution floor at the end of the list are an
    unresolved tail, such as a truncated Poisson distribution. Klyshko
    verdicts are then given only where p_k and p_(k+1) are resolved, and
    chain verdicts, which depend on the whole tail, are left blank.
    """
    top = resolved_support(dist)
    tail_resolved = top == dist.max_photons
    rows = []
    for k in range(1, max(dist.max_photons, 1) + 1):
        try:
            kr = klyshko_ratio(dist, k)
        except UndefinedRatioError:
            kr = None
        judged = kr is not None and (tail_resolved or k + 1 <= top)
        try:
            chain = check_chain_inequality(dist, k)
            lo, mid, hi, nc = chain.g_lower, chain.g_order, chain.g_upper, chain.nonclassical
        except AnalysisError:
            lo = mid = hi = nc = None
        rows.append({"order": k, "p_k": dist[k], "klyshko": kr,
                     "klyshko_nonclassical": kr < 1.0 - VERDICT_TOL if judged else None,
                     "g_lower": lo, "g_order": mid, "g_upper": hi,
                     "chain_nonclassical": nc if tail_resolved else None})
    return rows


def cmd_nonclassical(args) -> int:
    cfg = _config(args)
    dist = _distribution(args, cfg)
    rows = nonclassical_table(dist)
    if resolved_support(dist) < dist.max_photons:
        _info(f"probabilities below {RESOLUTION_FLOOR:g} after order {resolved_support(dist)} "
              "are an unresolved tail; chain inequality not judged")
    _write_table(rows, ("order", "p_k", "klyshko", "klyshko_nonclassical", "g_lower", "g_order",
                        "g_upper", "chain_nonclassical"), args.out)
    cutoff = resolved_support(dist)
    verdict = any(r["klyshko_nonclassical"] or r["chain_nonclassical"] for r in rows)
    _info(f"verdict: {'nonclassical' if verdict else 'classical'}")
    _info(f"cutoff order: {cutoff}")
    try:
        g2 = factorial_moment_gn(dist, 2)
        if g2 < 1:
            _info(f"binomial photon number implied by g2: N = {1.0 / (1.0 - g2):.6g}")
    except AnalysisError:
        pass
    return EXIT_OK


def cmd_classify(args) -> int:
    if not args.input:
        raise UsageError("--input is required")
    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        objs = [(r.get("id", str(i)), float(r["B"]), float(r["g2"]), float(r["g2_err"]),
                 float(r["B_err"]) if r.get("B_err") not in (None, "") else None)
                for i, r in enumerate(rows)]
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{args.input}: need numeric columns B,g2,g2_err ({exc})") from None
    refs = _parse_refs(args.refs) or calibrate_single_refs([(b, g, e) for _, b, g, e, _ in objs])
    out = []
    for oid, b, g, e, be in objs:
        v = classify(b, g, e, refs, B_err=be, id=oid)
        out.append({"id": oid, "m_brightness": v.m_brightness, "m_correlation": v.m_correlation,
                    "m_hat": v.m_hat, "confidence": v.confidence, "flags": v.flags})
    _write_table(out, ("id", "m_brightness", "m_correlation", "m_hat", "confidence", "flags"),
                 args.out)
    _info(f"single-emitter references: B1={refs[0]:.6g} g2_1={refs[1]:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photocorr", description="Simulate and analyze gated photon-correlation imaging.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stack=False, regions=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output file (standard output if omitted for tables)")
        if stack:
            p.add_argument("--stack", help="PFS1/PFA1 stack file")
        if regions:
            p.add_argument("--regions", help="'auto' or a YAML regions file", default="auto")
        return p

    p = common(sub.add_parser("simulate", help="simulate a frame stack"))
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("analyze", help="per-object g2, brightness and verdicts"),
               stack=True, regions=True)
    p.add_argument("--baseline-lag", type=int)
    p.add_argument("--threshold", type=float, help="readout threshold for analog stacks")
    p.add_argument("--refs", help="single-emitter references B1,g2_1")
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("sweep-threshold", help="g2 and SNR versus readout threshold"),
               stack=True, regions=True)
    p.add_argument("--thresholds", help="list 'a,b,c' or range 'start:stop:step'")
    p.add_argument("--baseline-lag", type=int)
    p.add_argument("--object", help="object id (default: first detected)")
    p.set_defaults(func=cmd_sweep_threshold)

    p = common(sub.add_parser("sweep-gate", help="simulate and analyze across gate widths"))
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--gates", help="list of gate widths in ns")
    p.add_argument("--baseline-lag", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_gate)

    p = common(sub.add_parser("fit-decay", help="fit the antibunching dip of a coincidence "
                                                "histogram"))
    p.add_argument("--histogram", help="CSV with tau_lo,tau_hi,count,expected")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit_decay)

    p = common(sub.add_parser("nonclassical", help="nonclassicality tests of a photon-number "
                                                   "distribution"), stack=True, regions=True)
    p.add_argument("--dist", help="probabilities p0,p1,...")
    p.add_argument("--counts", help="histogram of per-frame counts c0,c1,...")
    p.add_argument("--input", help="YAML list, or mapping with probabilities or counts")
    p.set_defaults(func=cmd_nonclassical)

    p = common(sub.add_parser("classify", help="emitter-count verdicts from a CSV of objects"))
    p.add_argument("--input", help="CSV with id,B,g2,g2_err[,B_err]")
    p.add_argument("--refs", help="single-emitter references B1,g2_1")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        _info(f"usage error: {exc}")
        return EXIT_USAGE
    except ValidationError as exc:
        _info(f"invalid input: {exc}")
        return EXIT_VALIDATION
    except CapabilityError as exc:
        _info(f"unsupported: {exc}")
        return EXIT_CAPABILITY
    except PhotocorrError as exc:
        _info(f"error: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _info(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
