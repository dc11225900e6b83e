"""Discrete toy worlds where the contrastive MI bound can be checked exactly.

A world has labels Y ~ p(y), observations H ~ p(h | y) and a deterministic
lookup-table encoder O = e(H).  A positive O+ is the encoding of a second,
conditionally independent draw H+ ~ p(h | y).  For such worlds
I(O; Y) and I(O; O+) are finite sums, so

    log(N_bat) - E[L_NT-Xent] <= I(O; O+) <= I(O; Y)

can be verified directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .ssl import ntxent_loss


def _check_pmf(p: np.ndarray, name: str, axis=None) -> None:
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    s = p.sum(axis=axis)
    if not np.allclose(s, 1.0, atol=1e-12, rtol=0):
        raise ValueError(f"{name} does not sum to 1 (got {s})")


def exact_mi(joint: np.ndarray) -> float:
    """Mutual information in nats of a 2D joint pmf, with 0 log 0 = 0."""
    joint = np.asarray(joint, dtype=np.float64)
    _check_pmf(joint, "joint pmf")
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log(joint[nz] / (px * py)[nz]))
    return max(float(mi), 0.0)


@dataclass
class DiscreteWorld:
    label_pmf: np.ndarray  # (n_labels,)
    emission: np.ndarray  # (n_labels, n_obs), rows are p(h | y)
    embeddings: np.ndarray  # (n_obs, dim)

    def __post_init__(self):
        self.label_pmf = np.asarray(self.label_pmf, dtype=np.float64)
        self.emission = np.asarray(self.emission, dtype=np.float64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        _check_pmf(self.label_pmf, "label pmf")
        _check_pmf(self.emission, "emission pmf", axis=1)
        if self.emission.shape[0] != self.label_pmf.shape[0]:
            raise ValueError("emission rows must match the number of labels")
        if self.embeddings.shape[0] != self.emission.shape[1]:
            raise ValueError("need one embedding per observation")
        if np.any(np.linalg.norm(self.embeddings, axis=1) == 0):
            raise ValueError("embeddings must be nonzero")

    @property
    def n_labels(self) -> int:
        return self.label_pmf.shape[0]

    @property
    def n_obs(self) -> int:
        return self.emission.shape[1]

    def code_map(self) -> tuple[np.ndarray, int]:
        """Observation -> index of its distinct embedding (O is a function of H)."""
        _, codes = np.unique(self.embeddings, axis=0, return_inverse=True)
        codes = codes.reshape(-1)
        return codes, int(codes.max()) + 1

    def code_given_label(self) -> np.ndarray:
        codes, n_codes = self.code_map()
        out = np.zeros((self.n_labels, n_codes))
        for h, c in enumerate(codes):
            out[:, c] += self.emission[:, h]
        return out

    def joint_code_label(self) -> np.ndarray:
        return (self.label_pmf[:, None] * self.code_given_label()).T

    def joint_code_positive(self) -> np.ndarray:
        p = self.code_given_label()
        return np.einsum("y,yo,yq->oq", self.label_pmf, p, p)

    def mi_label(self) -> float:
        return exact_mi(self.joint_code_label())

    def mi_positive(self) -> float:
        return exact_mi(self.joint_code_positive())

    def sample_pairs(self, n_trials: int, n_bat: int, rng: np.random.Generator):
        """Embeddings of (n_trials, n_bat) anchors and positives."""
        y = rng.choice(self.n_labels, size=(n_trials, n_bat), p=self.label_pmf)
        cdf = np.cumsum(self.emission, axis=1)
        cdf[:, -1] = 1.0

        def draw():
            u = rng.random((n_trials, n_bat))
            return (u[..., None] > cdf[y]).sum(-1)

        h1, h2 = draw(), draw()
        return self.embeddings[h1], self.embeddings[h2]


def verify_bound(world: DiscreteWorld, n_bat: int, tau: float, n_trials: int = 1000,
                 rng: np.random.Generator | None = None, slack: float = 0.05) -> dict:
    """Monte-Carlo average of the NT-Xent loss against the exact MI terms."""
    if n_bat < 2:
        raise ValueError("n_bat must be >= 2")
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000")
    rng = rng or np.random.default_rng(0)
    z1, z2 = world.sample_pairs(n_trials, n_bat, rng)
    losses = ntxent_loss(torch.from_numpy(z1), torch.from_numpy(z2), tau, reduction="none")
    l_bar = float(losses.mean())
    mi_oy = world.mi_label()
    mi_oo = world.mi_positive()
    bound = math.log(n_bat) - l_bar
    return {
        "n_bat": n_bat,
        "tau": tau,
        "n_trials": n_trials,
        "mean_loss": l_bar,
        "avg_bound": bound,
        "mi_oo": mi_oo,
        "mi_oy": mi_oy,
        "holds": bool(bound <= mi_oo + slack and mi_oo <= mi_oy + 1e-9),
    }


def one_hot_world(n_labels: int) -> DiscreteWorld:
    """O = Y exactly, with orthogonal one-hot embeddings."""
    return DiscreteWorld(np.full(n_labels, 1 / n_labels), np.eye(n_labels), np.eye(n_labels))


def constant_world(n_labels: int, n_obs: int, rng: np.random.Generator) -> DiscreteWorld:
    """Every observation shares one embedding, so O carries no information."""
    emission = rng.dirichlet(np.ones(n_obs), size=n_labels)
    return DiscreteWorld(np.full(n_labels, 1 / n_labels), emission, np.ones((n_obs, 4)))


def random_world(rng: np.random.Generator, n_labels: int | None = None, n_obs: int | None = None,
                 dim: int | None = None, concentration: float | None = None) -> DiscreteWorld:
    """A random world; small Dirichlet concentration gives sharp, informative emissions."""
    n_labels = n_labels or int(rng.integers(2, 12))
    n_obs = n_obs or int(rng.integers(2, 24))
    dim = dim or int(rng.integers(2, 8))
    conc = concentration or float(rng.choice([0.05, 0.2, 1.0, 5.0]))
    label_pmf = rng.dirichlet(np.ones(n_labels) * 2)
    emission = rng.dirichlet(np.ones(n_obs) * conc, size=n_labels)
    emb = rng.standard_normal((n_obs, dim))
    # occasionally merge observations onto shared codes
    if rng.random() < 0.3 and n_obs > 2:
        src = rng.integers(n_obs, size=n_obs // 3)
        dst = rng.integers(n_obs, size=n_obs // 3)
        emb[dst] = emb[src]
    return DiscreteWorld(label_pmf, emission, emb)
