"""Evaluation machinery: latent-space PCA, recognition probes, ablation.

The latent initial states learned per training sequence form a labeled point
cloud; PCA exposes its axes of variation, nearest-centroid probes quantify
how well object identity and tool choice separate, and the ablation harness
retrains the sequence model on masked sensor subsets and compares staged
task success.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Corpus, apply_modality_mask
from .explorer import ExplorationConfig, run_episodes
from .mtrnn import LatentStore, MtrnnModel, TrainConfig, build_model, train
from .numerics.eig import symmetric_eig
from .numerics.seeding import child_seed
from .simulator import ObjectSpec, TrialTiming

MODALITY_CONFIGURATIONS = {
    "image+force+tactile": ("image", "force", "tactile"),
    "image+force": ("image", "force"),
    "image+tactile": ("image", "tactile"),
    "image": ("image",),
    "force+tactile": ("force", "tactile"),
}


class AnalysisError(ValueError):
    pass


@dataclass
class PcaResult:
    """Principal axes of a labeled point cloud.

    ``components[:, k]`` is the k-th axis; ``rates`` are eigenvalue fractions
    of total variance; ``projections`` pairs each input label with its
    coordinates in the component basis.
    """

    mean: np.ndarray
    components: np.ndarray
    rates: np.ndarray
    projections: list[tuple[str, np.ndarray]]


def pca(points: list[tuple[str, np.ndarray]]) -> PcaResult:
    """Eigendecomposition of the sample covariance (n-1 divisor)."""
    if len(points) < 2:
        raise AnalysisError("PCA needs at least 2 points")
    labels = [label for label, _ in points]
    x = np.stack([np.asarray(vec, dtype=np.float64) for _, vec in points])
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, components = symmetric_eig(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    total = eigvals.sum()
    rates = eigvals / total if total > 0 else np.zeros_like(eigvals)
    projections = [(label, centered[i] @ components) for i, label in enumerate(labels)]
    return PcaResult(mean=mean, components=components, rates=rates, projections=projections)


def cluster_recognition(explored: np.ndarray, store: LatentStore,
                        labels: dict[str, str]):
    """Label of the nearest class centroid in latent space, plus distances.

    Exact ties break toward the lexicographically smaller label and are
    flagged.
    """
    if not store:
        raise AnalysisError("empty latent store")
    explored = np.asarray(explored, dtype=np.float64)
    groups: dict[str, list[np.ndarray]] = {}
    for seq_id, vec in store.items():
        groups.setdefault(labels[seq_id], []).append(np.asarray(vec))
    distances = {
        label: float(np.linalg.norm(explored - np.mean(vecs, axis=0)))
        for label, vecs in groups.items()
    }
    ranked = sorted(distances.items(), key=lambda kv: (kv[1], kv[0]))
    best_label, best_dist = ranked[0]
    tie = len(ranked) > 1 and ranked[1][1] == best_dist
    return best_label, distances, tie


def separability_probe(store: LatentStore, labels: dict[str, str]) -> float:
    """Leave-one-out nearest-centroid classification accuracy."""
    ids = sorted(store)
    classes = {labels[i] for i in ids}
    if len(classes) < 2:
        raise AnalysisError("separability probe needs at least 2 classes")
    x = np.stack([np.asarray(store[i]) for i in ids])
    y = np.array([labels[i] for i in ids])
    correct = 0
    for i in range(len(ids)):
        centroids = {}
        for label in classes:
            mask = y == label
            mask[i] = False
            if not mask.any():
                continue
            centroids[label] = x[mask].mean(axis=0)
        pred = min(sorted(centroids), key=lambda l: float(np.linalg.norm(x[i] - centroids[l])))
        correct += pred == y[i]
    return correct / len(ids)


# ---------------------------------------------------------------------------
# Modality ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    configuration: str
    trials: int
    tool_selection: int
    tool_grasping: int
    pick_up: int
    pour: int
    tool_label_accuracy: float

    def as_csv_row(self) -> list:
        return [self.configuration, self.trials, self.tool_selection, self.tool_grasping,
                self.pick_up, self.pour, format(self.tool_label_accuracy, ".4f")]


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)

    def row(self, configuration: str) -> AblationRow:
        for row in self.rows:
            if row.configuration == configuration:
                return row
        raise AnalysisError(f"no ablation row for {configuration!r}")

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["configuration", "trials", "tool_selection", "tool_grasping",
                             "pick_up", "pour", "tool_label_accuracy"])
            for row in self.rows:
                writer.writerow(row.as_csv_row())


def train_masked_model(corpus: Corpus, subset, seed: int,
                       train_config: TrainConfig) -> tuple[MtrnnModel, LatentStore]:
    """Train a sequence model on the corpus with only ``subset`` sensors."""
    masked = [apply_modality_mask(seq, subset) for seq in corpus.sequences]
    from .mtrnn import NodeGroups
    groups = NodeGroups(layout=corpus.layout)
    model = build_model(groups, seed=seed)
    store = LatentStore.zeros(groups.slow_count, [s.id for s in masked])
    model, store, _ = train(model, masked, store, train_config)
    return model, store


def run_ablation(corpus: Corpus, catalog: list[ObjectSpec], timing: TrialTiming,
                 train_config: TrainConfig, explore_config: ExplorationConfig,
                 seeds_per_combo: int = 5, base_seed: int = 9000,
                 pretrained: dict | None = None,
                 configurations: dict | None = None) -> AblationReport:
    """Train, explore, act, and score per modality configuration.

    ``pretrained`` may inject already-trained (model, store) pairs by
    configuration name (the full set is usually shared with the main
    pipeline). The trial matrix is every catalog object at both amounts,
    ``seeds_per_combo`` runs each.
    """
    configurations = configurations or MODALITY_CONFIGURATIONS
    pretrained = pretrained or {}
    report = AblationReport()
    for name, subset in configurations.items():
        if name in pretrained:
            model, store = pretrained[name]
        else:
            model, store = train_masked_model(corpus, subset, seed=base_seed, train_config=train_config)
        labels = {i: corpus.by_id(i).meta["object"]["id"] for i in store}
        tool_of = {corpus.by_id(i).meta["object"]["id"]: corpus.by_id(i).meta["object"]["tool"]
                   for i in store}
        episodes = []
        for spec in catalog:
            for amount in ("small", "large"):
                s = spec.with_amount(amount)
                for k in range(seeds_per_combo):
                    episodes.append((s, child_seed(base_seed, name, s.id, amount, k)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results = run_episodes(model, episodes, corpus.norm, timing, explore_config,
                                   sensor_subset=subset)
        sel = sum(r.score.tool_selection for r in results)
        grasp = sum(r.score.tool_grasping for r in results)
        pick = sum(r.score.pick_up for r in results)
        pour = sum(r.score.pour for r in results)
        correct_tool = 0
        for (spec, _), r in zip(episodes, results):
            pred_obj, _, _ = cluster_recognition(r.exploration.cs0, store, labels)
            correct_tool += tool_of[pred_obj] == spec.tool
        report.rows.append(AblationRow(
            configuration=name, trials=len(results), tool_selection=sel,
            tool_grasping=grasp, pick_up=pick, pour=pour,
            tool_label_accuracy=correct_tool / len(results),
        ))
    return report


# ---------------------------------------------------------------------------
# Chance probes for the modality-separation argument
# ---------------------------------------------------------------------------

def twin_probe_catalog(attribute: str, count: int = 12,
                       base_seed: int = 4321) -> list[ObjectSpec]:
    """Probe objects in twin pairs differing only in ``attribute``.

    Twins share every other parameter and the trial seed, so recordings and
    explored latents for a pair differ only through channels that carry the
    probed attribute. Any classifier on channels blind to it lands at chance.
    """
    if attribute not in ("color", "weight"):
        raise AnalysisError("probe attribute must be 'color' or 'weight'")
    rng = np.random.default_rng(base_seed)
    specs = []
    for i in range(count):
        cls = "granular" if i % 2 == 0 else "block"
        base = dict(
            cls=cls,
            color=float(rng.uniform(0.3, 0.7)),
            size=float(rng.uniform(0.3, 0.6)),
            position=(float(rng.uniform(-0.1, 0.1)), float(rng.uniform(-0.1, 0.1))),
            weight=float(rng.uniform(0.3, 0.7)),
            friction=float(rng.uniform(0.35, 0.6)),
            viscosity=float(rng.uniform(0.3, 0.6)),
        )
        for level, value in (("lo", 0.2), ("hi", 0.8)):
            params = dict(base)
            params[attribute] = value
            specs.append(ObjectSpec(id=f"probe-{attribute}-{i}-{level}", **params))
    return specs


def chance_probe(model: MtrnnModel, attribute: str, norm, timing: TrialTiming,
                 explore_config: ExplorationConfig,
                 sensor_subset: tuple[str, ...] | None = None,
                 base_seed: int = 4321) -> float:
    """LOO nearest-centroid accuracy of explored latents for a twin-paired
    probe attribute; at chance when the model's sensors are blind to it."""
    specs = twin_probe_catalog(attribute, base_seed=base_seed)
    # twins share the trial seed so their sensor streams differ only through
    # the probed attribute
    episodes = [(spec, child_seed(base_seed, "probe", spec.id.rsplit("-", 1)[0]))
                for spec in specs]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = run_episodes(model, episodes, norm, timing, explore_config,
                               sensor_subset=sensor_subset)
    store = LatentStore()
    labels = {}
    for spec, result in zip(specs, results):
        store[spec.id] = result.exploration.cs0
        labels[spec.id] = spec.id.rsplit("-", 1)[1]
    return separability_probe(store, labels)


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------

def write_pca_projections(path: Path, result: PcaResult, meta: dict[str, dict]) -> None:
    k = result.components.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "object", "amount", "tool"] + [f"pc{i + 1}" for i in range(k)])
        for label, coords in result.projections:
            m = meta.get(label, {})
            writer.writerow([label, m.get("id", ""), m.get("amount", ""), m.get("tool", "")]
                            + [format(c, ".9g") for c in coords])


def write_pca_rates(path: Path, result: PcaResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "contribution_rate"])
        for i, rate in enumerate(result.rates):
            writer.writerow([f"pc{i + 1}", format(float(rate), ".9g")])


def write_recognition_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "true_object", "true_tool", "predicted_object",
                         "predicted_tool", "best_loss", "initial_loss", "tie"])
        for r in rows:
            writer.writerow([r["trial"], r["true_object"], r["true_tool"],
                             r["predicted_object"], r["predicted_tool"],
                             format(r["best_loss"], ".9g"), format(r["initial_loss"], ".9g"),
                             int(r.get("tie", False))])
