"""End-to-end style transfer run driven by a single configuration record."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import correspondence as corr
from .features import ALL_TOGGLES, DEFAULT_PATCH_SIDE, N_NEIGHBORS, FeatureWeights, build_feature_bank
from .imagecore import DEFAULT_LOG_FLOOR, check_image, intensity_plane, lab_to_rgb, rgb_to_lab
from .matching import (
    DEFAULT_EPSILON_EDGE,
    affinity_matrix,
    aggregate_superpixels,
    hungarian_match,
    index_pairing,
)
from .partition import attach_to_seeds, partition_uncovered
from .seeds import auto_t_cluster, default_window, grow_seeds, min_seed_distances
from .transfer import DEFAULT_GUIDED_EPS, DEFAULT_GUIDED_RADIUS, DEFAULT_SIGMA_FLOOR, stylize

STOP_STAGES = ("seeds", "partition", "match")
STAGES = ("load", "filter", "features", "seeds", "partition", "aggregate", "match", "transfer", "convert")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of a run.

    ``t_cluster``, ``stride`` and ``seed_window`` accept ``None`` for the
    automatic choice.
    """

    weights: FeatureWeights = field(default_factory=FeatureWeights)
    match_fraction: float = 0.7
    patch_side: int = DEFAULT_PATCH_SIDE
    t_cluster: float | None = None
    target_superpixel_area: int = 64
    stride: int | None = None
    epsilon_edge: float = DEFAULT_EPSILON_EDGE
    guided_radius: int = DEFAULT_GUIDED_RADIUS
    guided_eps: float = DEFAULT_GUIDED_EPS
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    log_floor: float = DEFAULT_LOG_FLOOR
    rng_seed: int = 0
    feature_toggles: frozenset = ALL_TOGGLES
    n_neighbors: int = N_NEIGHBORS
    seed_window: int | None = None
    stop_after: str = "match"

    def __post_init__(self):
        object.__setattr__(self, "feature_toggles", frozenset(self.feature_toggles))
        checks = [
            (0 < self.match_fraction <= 1, "match_fraction must be in (0, 1]"),
            (self.patch_side >= 3 and self.patch_side % 2 == 1, "patch_side must be odd and >= 3"),
            (self.t_cluster is None or self.t_cluster >= 0, "t_cluster must be >= 0"),
            (self.target_superpixel_area >= 1, "target_superpixel_area must be >= 1"),
            (self.stride is None or self.stride >= 1, "stride must be >= 1"),
            (self.epsilon_edge >= 0, "epsilon_edge must be >= 0"),
            (self.guided_radius >= 0, "guided_radius must be >= 0"),
            (self.guided_eps >= 0, "guided_eps must be >= 0"),
            (self.sigma_floor > 0, "sigma_floor must be > 0"),
            (self.log_floor > 0, "log_floor must be > 0"),
            (bool(self.feature_toggles), "feature_toggles must not be empty"),
            (self.feature_toggles <= ALL_TOGGLES, f"feature_toggles must be a subset of {sorted(ALL_TOGGLES)}"),
            (self.n_neighbors >= 1, "n_neighbors must be >= 1"),
            (self.seed_window is None or self.seed_window >= 0, "seed_window must be >= 0"),
            (self.stop_after in STOP_STAGES, f"stop_after must be one of {STOP_STAGES}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)


@dataclass
class RunReport:
    timings_ms: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def consistent(self):
        c = self.counts
        return c.get("matched_pairs", 0) + c.get("fallbacks", 0) == c.get("input_superpixels", -1)

    def lines(self):
        out = [f"stage.{name}.ms\t{ms:.3f}" for name, ms in self.timings_ms.items()]
        out += [f"count.{name}\t{value}" for name, value in self.counts.items()]
        return out

    def format(self):
        return "\n".join(self.lines()) + "\n"


@dataclass
class Intermediates:
    matches: corr.MatchedPointSet
    seeds_in: object
    seeds_ref: object
    labels_in: object
    labels_ref: object
    table: object
    lab_in: np.ndarray
    lab_ref: np.ndarray
    lab_prefilter: np.ndarray
    lab_output: np.ndarray
    graph: object = None
    banks: tuple = ()


@dataclass
class RunResult:
    image: np.ndarray
    report: RunReport
    intermediates: Intermediates | None = None


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(report, name):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    report.timings_ms[name] = (time.perf_counter() - start) * 1000.0


def _seed_labels(bank, matches, config, rng):
    locs = matches.locs(bank.side)
    window = config.seed_window
    if window is None:
        window = default_window(bank.shape, len(matches))
    pre = min_seed_distances(bank, locs, config.weights, window, config.feature_toggles)
    t = config.t_cluster if config.t_cluster is not None else auto_t_cluster(pre[0], rng)
    return grow_seeds(bank, matches, config.weights, t, window, config.feature_toggles, precomputed=pre), t


def run(input_img, ref_img, matches, config=PipelineConfig(), intermediates=False):
    """Restyle ``input_img`` after ``ref_img``.

    ``matches`` is a :class:`MatchedPointSet` or the raw match-file content.
    Any stage failure raises :class:`StageError` naming the stage.
    """
    report = RunReport()
    with _stage(report, "load"):
        rgb_in = check_image(input_img)
        rgb_ref = check_image(ref_img)
        if not isinstance(matches, corr.MatchedPointSet):
            matches = corr.load_matches(matches, rgb_in.shape[:2], rgb_ref.shape[:2])
        report.counts["matches_total"] = len(matches)

    with _stage(report, "filter"):
        minimum = max(corr.MIN_MATCHES, config.n_neighbors)
        matches = corr.filter_top_fraction(matches, config.match_fraction, minimum)
        report.counts["matches_kept"] = len(matches)

    with _stage(report, "features"):
        bank_in = build_feature_bank(
            rgb_in, matches, corr.INPUT, config.weights, config.patch_side, config.n_neighbors
        )
        bank_ref = build_feature_bank(
            rgb_ref, matches, corr.REFERENCE, config.weights, config.patch_side, config.n_neighbors
        )

    # both sides sample the same pixel subset for the automatic threshold
    rng_in = np.random.default_rng(config.rng_seed)
    rng_ref = np.random.default_rng(config.rng_seed)
    with _stage(report, "seeds"):
        seeds_in, t_in = _seed_labels(bank_in, matches, config, rng_in)
        seeds_ref, t_ref = _seed_labels(bank_ref, matches, config, rng_ref)
        report.counts["t_cluster_input"] = repr(t_in)
        report.counts["t_cluster_reference"] = repr(t_ref)
        report.counts["seed_superpixels_input"] = seeds_in.n_superpixels
        report.counts["seed_superpixels_reference"] = seeds_ref.n_superpixels
        report.counts["uncovered_input"] = int(np.sum(~seeds_in.covered))
        report.counts["uncovered_reference"] = int(np.sum(~seeds_ref.covered))

    graph = None
    with _stage(report, "partition"):
        if config.stop_after == "seeds":
            labels_in = attach_to_seeds(bank_in, seeds_in, matches)
            labels_ref = attach_to_seeds(bank_ref, seeds_ref, matches)
            report.counts["partition_k"] = 0
            report.counts["partition_clusters"] = 0
        else:
            part = partition_uncovered(
                bank_in,
                bank_ref,
                seeds_in,
                seeds_ref,
                matches,
                config.weights,
                config.target_superpixel_area,
                config.stride,
                config.rng_seed,
                config.feature_toggles,
            )
            labels_in, labels_ref, graph = part.labels_in, part.labels_ref, part.graph
            report.counts["partition_k"] = part.k
            report.counts["partition_clusters"] = part.clusters
            report.counts["partition_stride"] = part.stride
            report.counts["partition_attached"] = part.attached_isolated
            report.counts["graph_edges"] = 0 if graph is None else len(graph.weight)

    with _stage(report, "aggregate"):
        lab_in = rgb_to_lab(rgb_in, config.log_floor)
        lab_ref = rgb_to_lab(rgb_ref, config.log_floor)
        descs_in = aggregate_superpixels(bank_in, labels_in, lab_in)
        descs_ref = aggregate_superpixels(bank_ref, labels_ref, lab_ref)
        affinity = affinity_matrix(descs_in, descs_ref, config.weights, config.feature_toggles)
        report.counts["input_superpixels"] = len(descs_in)
        report.counts["reference_superpixels"] = len(descs_ref)

    with _stage(report, "match"):
        if config.stop_after == "match":
            table = hungarian_match(affinity, config.epsilon_edge)
        else:
            table = index_pairing(labels_in, labels_ref, affinity)
        report.counts["matched_pairs"] = len(table.pairs)
        report.counts["fallbacks"] = len(table.fallback)

    with _stage(report, "transfer"):
        mapping = table.as_array(labels_in.n_superpixels)
        guide = intensity_plane(rgb_in)
        lab_out, lab_raw = stylize(lab_in, lab_ref, labels_in, labels_ref, mapping, guide, config)

    with _stage(report, "convert"):
        out = lab_to_rgb(lab_out)

    inter = None
    if intermediates:
        inter = Intermediates(
            matches=matches,
            seeds_in=seeds_in,
            seeds_ref=seeds_ref,
            labels_in=labels_in,
            labels_ref=labels_ref,
            table=table,
            lab_in=lab_in,
            lab_ref=lab_ref,
            lab_prefilter=lab_raw,
            lab_output=lab_out,
            graph=graph,
            banks=(bank_in, bank_ref),
        )
    return RunResult(out, report, inter)
