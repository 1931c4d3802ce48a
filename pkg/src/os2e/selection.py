"""Discriminative-diverse concept class selection.

Chooses K concept classes whose event posteriors are peaked (low conditional
entropy, the unary cost) while staying mutually decorrelated (low pairwise
posterior inner products).  The greedy routine picks the argmin of
``phi(o) + lam * S(O, o)`` each step; ``energy`` scores a full subset with the
ordered-pair pairwise sum, and an exhaustive enumerator serves as the exact
oracle for small instances.

Note the two costs are deliberately not the same function: the greedy step
uses the running *average* correlation against the already-selected set,
while the subset energy sums correlation over all ordered pairs.  ``energy``
is for reporting and oracle comparison only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .stats import PosteriorTable, conditional_entropy

DEFAULT_LAMBDA = 0.5
DEFAULT_K_OBJECTS = 300
DEFAULT_K_SCENES = 150

EXHAUSTIVE_MAX_CLASSES = 20
EXHAUSTIVE_MAX_SUBSETS = 200_000


@dataclass
class SelectionProblem:
    """A posterior table plus the selection knobs (unary costs, weight, K).

    ``phi`` must be exactly the per-row conditional entropy of ``posterior``;
    use :meth:`from_posterior` to build it.
    """

    posterior: PosteriorTable
    phi: np.ndarray
    lam: float = DEFAULT_LAMBDA
    k: int = 1

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        c = self.posterior.num_classes
        if self.phi.shape != (c,):
            raise ValueError("phi must have one entry per concept class")
        if not (1 <= self.k <= c):
            raise ValueError(f"k must be in [1, {c}], got {self.k}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        expected = np.array(
            [conditional_entropy(self.posterior.post[i]) for i in range(c)]
        )
        if not np.array_equal(self.phi, expected):
            raise ValueError("phi must equal the posterior rows' conditional entropy")

    @classmethod
    def from_posterior(
        cls, posterior: PosteriorTable, k: int, lam: float = DEFAULT_LAMBDA
    ) -> "SelectionProblem":
        phi = np.array(
            [conditional_entropy(posterior.post[i]) for i in range(posterior.num_classes)]
        )
        return cls(posterior=posterior, phi=phi, lam=lam, k=k)

    @property
    def num_classes(self) -> int:
        return self.posterior.num_classes


@dataclass
class SelectionResult:
    """Selected class indices in pick order, per-step costs, and total energy."""

    selected: list[int]
    step_costs: list[float]
    energy: float
    indicator: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selected indices must be distinct")
        self.indicator = np.asarray(self.indicator, dtype=np.int8)
        if int(self.indicator.sum()) != len(self.selected) or np.any(
            self.indicator[self.selected] != 1
        ):
            raise ValueError("indicator must mark exactly the selected classes")


def pairwise_correlation(posterior: PosteriorTable, i: int, j: int) -> float:
    """Inner product of two posterior rows; 1 means the classes predict alike."""
    if i == j:
        raise ValueError("self pair")
    return float(posterior.post[i] @ posterior.post[j])


def energy(problem: SelectionProblem, indicator) -> float:
    """Subset energy: sum of unary costs plus lam times all ordered-pair correlations.

    Each unordered pair contributes twice (the double sum runs over ordered
    pairs).
    """
    h = np.asarray(indicator)
    if h.shape != (problem.num_classes,):
        raise ValueError("indicator must have one entry per class")
    sel = np.where(h != 0)[0]
    if sel.size != problem.k:
        raise ValueError(
            f"constraint violated: {sel.size} selected, expected {problem.k}"
        )
    unary = float(problem.phi[sel].sum())
    rows = problem.posterior.post[sel]
    gram = rows @ rows.T
    pair = float(gram.sum() - np.trace(gram))
    return unary + problem.lam * pair


def average_correlation(posterior: PosteriorTable, selected, candidate: int) -> float:
    """Mean correlation of a candidate against the already-selected set.

    Defined as 0 for an empty set so the first greedy pick is pure min-entropy.
    """
    sel = list(selected)
    if candidate in sel:
        raise ValueError(f"candidate {candidate} already selected")
    if not sel:
        return 0.0
    rows = posterior.post[sel]
    return float((rows @ posterior.post[candidate]).sum()) / len(sel)


def greedy_select(problem: SelectionProblem) -> SelectionResult:
    """Greedy minimization: each step picks argmin of phi + lam * avg correlation.

    Ties break toward the lowest class index.  Zero-marginal (masked) classes
    are never candidates; there must be at least K unmasked classes.
    """
    post = problem.posterior.post
    eligible = ~problem.posterior.undefined_mask
    n_eligible = int(eligible.sum())
    if problem.k > n_eligible:
        raise ValueError(
            f"insufficient classes: k={problem.k} but only {n_eligible} unmasked"
        )
    remaining = eligible.copy()
    corr_sum = np.zeros(problem.num_classes)
    selected: list[int] = []
    step_costs: list[float] = []
    for step in range(problem.k):
        costs = problem.phi + (
            problem.lam * corr_sum / len(selected) if selected else 0.0
        )
        costs = np.where(remaining, costs, np.inf)
        pick = int(np.argmin(costs))  # argmin takes the lowest index on ties
        selected.append(pick)
        step_costs.append(float(costs[pick]))
        remaining[pick] = False
        corr_sum += post @ post[pick]
    indicator = np.zeros(problem.num_classes, dtype=np.int8)
    indicator[selected] = 1
    return SelectionResult(
        selected=selected,
        step_costs=step_costs,
        energy=energy(problem, indicator),
        indicator=indicator,
    )


def exhaustive_select(problem: SelectionProblem) -> tuple[np.ndarray, float]:
    """Enumerate every K-subset and return the exact energy minimizer.

    Guarded to small instances; ties break toward the lexicographically
    smallest index tuple (which enumeration order supplies for free).
    """
    c, k = problem.num_classes, problem.k
    if c > EXHAUSTIVE_MAX_CLASSES:
        raise ValueError(f"instance too large for oracle: C={c}")
    n_subsets = 1
    for i in range(k):
        n_subsets = n_subsets * (c - i) // (i + 1)
    if n_subsets > EXHAUSTIVE_MAX_SUBSETS:
        raise ValueError(f"instance too large for oracle: {n_subsets} subsets")
    best_subset = None
    best_energy = np.inf
    indicator = np.zeros(c, dtype=np.int8)
    for subset in itertools.combinations(range(c), k):
        indicator[:] = 0
        indicator[list(subset)] = 1
        e = energy(problem, indicator)
        if e < best_energy:
            best_energy = e
            best_subset = subset
    best = np.zeros(c, dtype=np.int8)
    best[list(best_subset)] = 1
    return best, float(best_energy)
