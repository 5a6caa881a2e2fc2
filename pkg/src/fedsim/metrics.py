"""Open-set verification scoring: pairwise cosine scores, equal error rate,
and true-acceptance rate at a false-acceptance budget."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

IMPOSTOR_PAIR_CAP = 50_000

METRICS_CSV_HEADER = ["client_id", "round", "eer", "tar_at_far01",
                      "n_genuine", "n_impostor"]


@dataclass
class ScoreSet:
    """Similarity scores for same-identity and cross-identity pairs.

    Higher score means more similar.
    """

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)
        if not (np.all(np.isfinite(self.genuine)) and np.all(np.isfinite(self.impostor))):
            raise DomainError("scores must be finite")


@dataclass
class MetricsRecord:
    client_id: int
    round: int
    eer: float
    tar_at_far01: float
    n_genuine: int
    n_impostor: int

    def as_row(self):
        return [self.client_id, self.round, repr(float(self.eer)),
                repr(float(self.tar_at_far01)),
                self.n_genuine, self.n_impostor]


def score_pairs(embeddings: np.ndarray, labels, cap: int = IMPOSTOR_PAIR_CAP,
                seed: int = 0) -> ScoreSet:
    """Cosine similarities of all same-label and cross-label embedding pairs.

    Impostor pairs beyond `cap` are subsampled with the given seed.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or labels.shape != (embeddings.shape[0],):
        raise ShapeError("expect (n, dim) embeddings and (n,) labels")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0):
        raise DomainError("zero-norm embedding cannot be scored")
    unit = embeddings / norms[:, None]
    sims = unit @ unit.T
    n = embeddings.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    genuine = sims[iu[same], ju[same]]
    impostor = sims[iu[~same], ju[~same]]
    if genuine.size == 0:
        raise DomainError("no genuine pairs: need an identity with >= 2 samples")
    if impostor.size == 0:
        raise DomainError("no impostor pairs: need >= 2 identities")
    if impostor.size > cap:
        rng = np.random.default_rng(seed)
        idx = rng.choice(impostor.size, size=cap, replace=False)
        impostor = impostor[np.sort(idx)]
    return ScoreSet(genuine, impostor)


def _operating_points(scores: ScoreSet):
    """FAR and FRR at every observed threshold (ascending) plus a +inf sentinel.

    Acceptance rule: accept when score >= threshold. FAR(t) is the impostor
    acceptance fraction, FRR(t) the genuine rejection fraction.
    """
    thresholds = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    gen = np.sort(scores.genuine)
    imp = np.sort(scores.impostor)
    n_g, n_i = gen.size, imp.size
    # integer counts first: 1.0 - m/n would round at exact-boundary FARs
    far = (n_i - np.searchsorted(imp, thresholds, side="left")) / n_i
    frr = np.searchsorted(gen, thresholds, side="left") / n_g
    far = np.append(far, 0.0)   # threshold above every score
    frr = np.append(frr, 1.0)
    thresholds = np.append(thresholds, np.inf)
    return thresholds, far, frr


def eer(scores: ScoreSet) -> float:
    """Error rate where FAR equals FRR, linearly interpolated at the crossing."""
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise DomainError("both genuine and impostor scores are required")
    _, far, frr = _operating_points(scores)
    diff = far - frr
    # diff is nonincreasing and ends at -1; find the sign change.
    k = int(np.argmax(diff <= 0))
    if k == 0:
        return 0.5 * (far[0] + frr[0])
    d0, d1 = diff[k - 1], diff[k]
    alpha = 0.0 if d0 == d1 else d0 / (d0 - d1)
    e0 = 0.5 * (far[k - 1] + frr[k - 1])
    e1 = 0.5 * (far[k] + frr[k])
    return float((1.0 - alpha) * e0 + alpha * e1)


def tar_at_far(scores: ScoreSet, far_target: float = 0.01) -> float:
    """TAR at the lowest observed threshold whose empirical FAR <= far_target."""
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise DomainError("both genuine and impostor scores are required")
    if not 0.0 < far_target < 1.0:
        raise DomainError("far_target must be in (0, 1)")
    _, far, frr = _operating_points(scores)
    ok = np.nonzero(far <= far_target)[0]
    k = int(ok[0])  # sentinel guarantees at least one
    return float(1.0 - frr[k])


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for rec in records:
            writer.writerow(rec.as_row())
