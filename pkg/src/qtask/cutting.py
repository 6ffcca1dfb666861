"""Wire cutting of GHZ chains and quasi-probability reconstruction of <Z...Z>.

Each cut replaces the identity channel on one wire by

    rho = sum_k c_k * Tr(O_k rho) * sigma_k

over eight measure-and-prepare terms (see :data:`TERMS`), with
``sum |c_k| = 4``. Because the observable is a Z-parity it factorizes across
fragments. For two cuts the estimate is

    <Z...Z> = sum_{k,s} c_k c_s A_k B_{k,s} C_s

where ``A``, ``B`` and ``C`` are signed parity means of the first, middle and
last fragments. Every (k, s) pair gets its own run of all three fragments
(3 * 64 = 192 circuits for two cuts). By default the runs that realize the
same fragment-local terms are pooled into that factorized 8 / 64 / 8 table.
With ``pool=False`` each pair keeps its own three estimates and the sum reads
sum c_k c_s A[k,s] B[k,s] C[k,s]. Both are unbiased; pooling has the lower
variance. The overhead weights |c|/gamma and signs sgn(c) of the sampled form
are folded into c_k c_s since every term is executed.

The middle fragment is conditioned on both its preparation term ``k`` and its
cut-measurement term ``s``; the measured basis depends on ``s``, so a
distribution conditioned on ``k`` alone would not be well defined.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backends import derive_seed, exact_distribution, make_backend
from .circuit import MAX_QUBITS, Circuit, Gate, Histogram, Measurement, Preparation, to_text
from .errors import ResourceLimitError
from .qir import emit_qir
from .runtime.graph import TaskGraph, host_function

FIRST, MIDDLE, LAST = "first", "middle", "last"


@dataclass(frozen=True)
class QuasiTerm:
    index: int
    coefficient: float
    measure_basis: str
    outcome_mode: str  # "Eigenvalue" or "FixedPlusOne"
    prep_state: str

    @property
    def uses_outcome(self) -> bool:
        return self.outcome_mode == "Eigenvalue"


TERMS: tuple[QuasiTerm, ...] = (
    QuasiTerm(0, +0.5, "X", "Eigenvalue", "Plus"),
    QuasiTerm(1, -0.5, "X", "Eigenvalue", "Minus"),
    QuasiTerm(2, +0.5, "Y", "Eigenvalue", "PlusI"),
    QuasiTerm(3, -0.5, "Y", "Eigenvalue", "MinusI"),
    QuasiTerm(4, +0.5, "Z", "Eigenvalue", "Zero"),
    QuasiTerm(5, -0.5, "Z", "Eigenvalue", "One"),
    QuasiTerm(6, +0.5, "Z", "FixedPlusOne", "Zero"),
    QuasiTerm(7, +0.5, "Z", "FixedPlusOne", "One"),
)
GAMMA = 4.0


def decomposition_terms() -> tuple[QuasiTerm, ...]:
    return TERMS


def coefficients(terms: Sequence[QuasiTerm] = TERMS) -> np.ndarray:
    return np.array([t.coefficient for t in terms])


@dataclass(frozen=True)
class CutPlan:
    """Cut after the CNOT that targets each listed qubit of a GHZ chain."""

    cut_positions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "cut_positions", tuple(int(p) for p in self.cut_positions))

    @property
    def num_cuts(self) -> int:
        return len(self.cut_positions)

    def problems(self, n: int) -> list[str]:
        out = []
        if not self.cut_positions:
            out.append("a cut plan needs at least one cut")
        pos = self.cut_positions
        if any(b <= a for a, b in zip(pos, pos[1:])):
            out.append(f"cut positions {list(pos)} are not strictly increasing")
        for p in pos:
            if not 1 <= p <= n - 1:
                out.append(f"cut position {p} outside 1..{n - 1} for a {n}-qubit chain")
        return out

    def check(self, n: int) -> CutPlan:
        problems = self.problems(n)
        if problems:
            raise ValueError("invalid cut plan: " + "; ".join(problems))
        return self

    def fragment_widths(self, n: int) -> list[int]:
        starts = [0, *self.cut_positions]
        ends = [*self.cut_positions, n - 1]
        return [b - a + 1 for a, b in zip(starts, ends)]


@dataclass(frozen=True)
class Fragment:
    """A GHZ sub-chain with an optional upstream preparation slot on local
    qubit 0 and an optional cut-measurement slot on its last local qubit."""

    index: int
    position: str
    offset: int
    width: int
    has_prep: bool
    has_cut: bool

    @property
    def y_qubits(self) -> range:
        return range(self.width - 1 if self.has_cut else self.width)

    def circuit(self, prep_state: str | None = None, cut_basis: str | None = None,
                name: str = "") -> Circuit:
        if self.has_prep != (prep_state is not None) or self.has_cut != (cut_basis is not None):
            raise ValueError(f"fragment {self.index} slots do not match the given terms")
        gates = [] if self.has_prep else [Gate("H", (0,))]
        gates += [Gate("CNOT", (q, q + 1)) for q in range(self.width - 1)]
        meas = [Measurement(q, "Z", f"y{self.offset + q + 1}") for q in self.y_qubits]
        if self.has_cut:
            meas.append(Measurement(self.width - 1, cut_basis, f"o{self.index + 1}"))
        preps = (Preparation(0, prep_state),) if self.has_prep else ()
        return Circuit(self.width, tuple(gates), tuple(meas), preps, name or f"frag{self.index}")


def cut_ghz(n: int, plan: CutPlan) -> list[Fragment]:
    if not isinstance(n, int) or n < 2:
        raise ValueError(f"cutting needs a GHZ chain of at least 2 qubits, got {n!r}")
    if n > MAX_QUBITS:
        raise ResourceLimitError(f"GHZ size {n} exceeds the {MAX_QUBITS}-qubit bound")
    plan.check(n)
    starts = [0, *plan.cut_positions]
    ends = [*plan.cut_positions, n - 1]
    last = len(starts) - 1
    frags = []
    for i, (a, b) in enumerate(zip(starts, ends)):
        position = FIRST if i == 0 else LAST if i == last else MIDDLE
        frags.append(Fragment(i, position, a, b - a + 1, has_prep=i > 0, has_cut=i < last))
    return frags


def _letter(cut: int) -> str:
    return {0: "k", 1: "s"}.get(cut, f"c{cut}")


Terms = tuple  # one term index (or None when irrelevant) per cut
TableKey = tuple  # (fragment index, Terms)


def mask_terms(fragment: int, terms: Terms) -> Terms:
    """Keep only the terms of the cuts bordering ``fragment``."""
    return tuple(t if c in (fragment - 1, fragment) else None for c, t in enumerate(terms))


def variant_name(fragment: int, terms: Terms) -> str:
    shown = list(terms) + [None] * (2 - len(terms))
    parts = [f"_{_letter(c)}{'x' if t is None else t}" for c, t in enumerate(shown)]
    return f"frag{fragment}" + "".join(parts)


@dataclass(frozen=True)
class Variant:
    fragment: int
    terms: Terms
    circuit: Circuit
    # Estimate-table keys fed by this circuit's histogram. Several only when
    # deduplication merged identical circuits.
    aliases: tuple[TableKey, ...]

    @property
    def name(self) -> str:
        return self.circuit.name

    @property
    def out_term(self) -> int | None:
        return self.terms[self.fragment] if self.fragment < len(self.terms) else None


def enumerate_variants(fragments: Sequence[Fragment], terms: Sequence[QuasiTerm] = TERMS,
                       dedup: bool = False) -> list[Variant]:
    """Concrete fragment circuits, ordered by term tuple then fragment.

    Without dedup every fragment is emitted once per term tuple, which gives
    (cuts + 1) * 8**cuts independent circuits. With dedup, circuits that
    differ only in name collapse into one whose histogram serves every
    fragment-local term combination it realizes.
    """
    num_cuts = len(fragments) - 1
    out: list[Variant] = []
    seen: dict[tuple, int] = {}
    for combo in itertools.product(range(len(terms)), repeat=num_cuts):
        for frag in fragments:
            t_in = combo[frag.index - 1] if frag.has_prep else None
            t_out = combo[frag.index] if frag.has_cut else None
            prep = None if t_in is None else terms[t_in].prep_state
            basis = None if t_out is None else terms[t_out].measure_basis
            if not dedup:
                circ = frag.circuit(prep, basis, variant_name(frag.index, combo))
                out.append(Variant(frag.index, combo, circ, ((frag.index, combo),)))
                continue
            local = mask_terms(frag.index, combo)
            key = (frag.index, prep, basis)
            if key not in seen:
                seen[key] = len(out)
                circ = frag.circuit(prep, basis, variant_name(frag.index, local))
                out.append(Variant(frag.index, local, circ, ()))
            v = out[seen[key]]
            if (frag.index, local) not in v.aliases:
                out[seen[key]] = Variant(v.fragment, v.terms, v.circuit,
                                         v.aliases + ((frag.index, local),))
    return out


@dataclass(frozen=True)
class FragmentEstimate:
    value: float
    variance_of_mean: float
    shots: int

    def __post_init__(self):
        if self.variance_of_mean < 0:
            raise ValueError(f"negative variance {self.variance_of_mean}")
        if abs(self.value) > 1 + 1e-12:
            raise ValueError(f"fragment estimate {self.value} outside [-1, 1]")


def _sign_function(variant: Variant, key: TableKey, terms: Sequence[QuasiTerm]):
    fragment, combo = key
    t_out = combo[fragment] if fragment < len(combo) else None
    n_y = variant.circuit.num_measurements - (1 if t_out is not None else 0)
    use_o = t_out is not None and terms[t_out].uses_outcome

    def sign(bits: str) -> int:
        ones = bits[:n_y].count("1")
        if use_o:
            ones += bits[n_y] == "1"
        return -1 if ones % 2 else 1

    return sign


def _check_alias(variant: Variant, key: TableKey | None) -> TableKey:
    key = key or variant.aliases[0]
    if key not in variant.aliases:
        raise ValueError(f"table key {key} is not served by variant {variant.name}")
    return key


def fragment_estimate(histogram: Histogram, variant: Variant, key: TableKey | None = None,
                      terms: Sequence[QuasiTerm] = TERMS) -> FragmentEstimate:
    """Signed parity mean of one variant histogram, with its variance of the mean.

    The sign of a shot is the parity of its y bits, times the cut-measurement
    eigenvalue when the outgoing term uses it.
    """
    key = _check_alias(variant, key)
    width = variant.circuit.num_measurements
    if histogram.width != width:
        raise ValueError(
            f"histogram width {histogram.width} does not match variant {variant.name} "
            f"with {width} measurements")
    sign = _sign_function(variant, key, terms)
    value = sum(sign(b) * c for b, c in histogram.counts.items()) / histogram.shots
    return FragmentEstimate(value, max(0.0, 1.0 - value * value) / histogram.shots, histogram.shots)


def exact_fragment_estimate(variant: Variant, key: TableKey | None = None,
                            terms: Sequence[QuasiTerm] = TERMS) -> FragmentEstimate:
    """Infinite-shot counterpart of :func:`fragment_estimate` (variance 0)."""
    key = _check_alias(variant, key)
    sign = _sign_function(variant, key, terms)
    value = float(sum(sign(b) * p for b, p in exact_distribution(variant.circuit).items()))
    return FragmentEstimate(max(-1.0, min(1.0, value)), 0.0, 0)


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float

    def to_dict(self, **extra) -> dict:
        return {"value": self.value, "sigma": self.sigma, **extra}


EstimateTable = Mapping[TableKey, FragmentEstimate]


def _expand(table: EstimateTable, num_cuts: int, size: int):
    """Yield (term tuple, table key per fragment) over every term tuple.

    A fragment entry is looked up under the full tuple first (independent
    runs per tuple) and then under its fragment-local terms (pooled or
    deduplicated runs).
    """
    for combo in itertools.product(range(size), repeat=num_cuts):
        keys = []
        for f in range(num_cuts + 1):
            key = (f, combo)
            if key not in table:
                key = (f, mask_terms(f, combo))
                if key not in table:
                    raise ValueError(f"estimate table has no entry for fragment {f}, terms {combo}")
            keys.append(key)
        yield combo, keys


def _reconstruct(table: EstimateTable, c: np.ndarray, num_cuts: int):
    value = 0.0
    grads: dict[TableKey, float] = {}
    coef = [float(x) for x in c]
    for combo, keys in _expand(table, num_cuts, len(coef)):
        weight = math.prod(coef[t] for t in combo)
        vals = [table[k].value for k in keys]
        value += weight * math.prod(vals)
        for i, key in enumerate(keys):
            others = math.prod(vals[:i] + vals[i + 1:])
            grads[key] = grads.get(key, 0.0) + weight * others
    return value, grads


def _prepare(table, coeffs, num_cuts):
    c = coefficients() if coeffs is None else np.asarray(coeffs, dtype=float)
    if not table:
        raise ValueError("estimate table is empty")
    if num_cuts is None:
        num_cuts = max(f for f, _ in table)
    for key, est in table.items():
        if est.variance_of_mean < 0:
            raise ValueError(f"negative variance for {key}")
    return c, num_cuts


def propagate_sigma(table: EstimateTable, coeffs: Sequence[float] | np.ndarray | None = None,
                    num_cuts: int | None = None) -> float:
    """First-order (delta method) standard deviation; table entries independent."""
    c, num_cuts = _prepare(table, coeffs, num_cuts)
    _, grads = _reconstruct(table, c, num_cuts)
    return math.sqrt(sum(g * g * table[key].variance_of_mean for key, g in grads.items()))


def reconstruct(table: EstimateTable, coeffs: Sequence[float] | np.ndarray | None = None,
                num_cuts: int | None = None) -> Estimate:
    """Sum over term tuples of the coefficient product times the fragment estimates."""
    c, num_cuts = _prepare(table, coeffs, num_cuts)
    value, _ = _reconstruct(table, c, num_cuts)
    return Estimate(value, propagate_sigma(table, c, num_cuts))


def estimate_table(variants: Sequence[Variant], histograms: Sequence[Histogram],
                   pool: bool = True) -> dict:
    """Fragment estimates keyed by (fragment, terms).

    With ``pool`` (the default) the histograms of runs that realize the same
    fragment-local terms are merged first, giving one entry per fragment-local
    key (the factorized 8 / 64 / 8 table for two cuts). Without it every run
    gets its own entry.
    """
    if len(variants) != len(histograms):
        raise ValueError(f"{len(variants)} variants but {len(histograms)} histograms")
    if not pool:
        return {key: fragment_estimate(hist, v, key)
                for v, hist in zip(variants, histograms) for key in v.aliases}
    merged: dict[TableKey, tuple[Variant, Counter, int]] = {}
    for v, hist in zip(variants, histograms):
        for f, combo in v.aliases:
            local = (f, mask_terms(f, combo))
            if local not in merged:
                merged[local] = (v, Counter(), 0)
            rep, counts, shots = merged[local]
            counts.update(hist.counts)
            merged[local] = (rep, counts, shots + hist.shots)
    table = {}
    for local, (rep, counts, shots) in merged.items():
        pooled_variant = Variant(rep.fragment, local[1], rep.circuit, (local,))
        table[local] = fragment_estimate(Histogram(counts, shots, rep.circuit.num_measurements),
                                         pooled_variant, local)
    return table


def exact_table(variants: Sequence[Variant]) -> dict:
    return {key: exact_fragment_estimate(v, key) for v in variants for key in v.aliases}


def variant_seeds(seed: int, count: int) -> list[int]:
    return [derive_seed(seed, i) for i in range(count)]


def reconstruct_exact(n: int, plan: CutPlan) -> Estimate:
    """Cut reconstruction from exact fragment distributions."""
    variants = enumerate_variants(cut_ghz(n, plan))
    return reconstruct(exact_table(variants), num_cuts=plan.num_cuts)


def run_cut_local(n: int, plan: CutPlan, shots: int, seed: int = 0, backend="sv",
                  dedup: bool = False, pool: bool = True) -> Estimate:
    """Sample every variant on one in-process backend and reconstruct.

    Uses the same per-variant seeds as :func:`build_cut_experiment`, so the
    result equals a task-graph run of the same experiment.
    """
    variants = enumerate_variants(cut_ghz(n, plan), dedup=dedup)
    be = make_backend(backend) if isinstance(backend, str) else backend
    hists = [be.run(v.circuit, shots, s) for v, s in zip(variants, variant_seeds(seed, len(variants)))]
    return reconstruct(estimate_table(variants, hists, pool), num_cuts=plan.num_cuts)


def canonical_key(circuit: Circuit) -> str:
    """Name-free serialization, used to spot duplicate variant circuits."""
    return to_text(circuit, include_name=False)


RECONSTRUCT_FUNCTION = "reconstruct_ghz_cut"


@host_function(RECONSTRUCT_FUNCTION)
def _reconstruct_task(inputs, n: int, cuts: list, shots: int, dedup: bool = False,
                      pool: bool = True) -> dict:
    # Variants are re-enumerated from the parameters; enumeration is
    # deterministic, so inputs line up with the quantum tasks in order.
    plan = CutPlan(tuple(cuts))
    variants = enumerate_variants(cut_ghz(n, plan), dedup=dedup)
    if len(inputs) != len(variants):
        raise ValueError(f"expected {len(variants)} histograms, got {len(inputs)}")
    est = reconstruct(estimate_table(variants, inputs, pool), num_cuts=plan.num_cuts)
    return est.to_dict(shots=shots, n=n, cuts=list(cuts), variant_count=len(variants))


def build_cut_experiment(n: int, plan: CutPlan, shots: int, seed: int = 0,
                         backend: str | None = None, dedup: bool = False,
                         pool: bool = True) -> tuple[TaskGraph, int]:
    """Task graph with one quantum task per variant and a reconstruction sink.

    Returns the graph and the memory object that receives the estimate
    (a dict with value, sigma, shots, n, cuts and variant_count). ``backend``
    restricts the quantum tasks to workers with that selector.
    """
    plan.check(n)
    graph = TaskGraph()
    variants = enumerate_variants(cut_ghz(n, plan), dedup=dedup)
    seeds = variant_seeds(seed, len(variants))
    outs = []
    for v, s in zip(variants, seeds):
        tid = graph.add_quantum_task(emit_qir(v.circuit), shots, seed=s, backend=backend,
                                     name=v.name)
        outs.append(graph.output(tid))
    sink = graph.add_classical_task(
        RECONSTRUCT_FUNCTION, outs,
        {"n": n, "cuts": list(plan.cut_positions), "shots": shots, "dedup": dedup, "pool": pool},
        name="reconstruct")
    return graph, graph.output(sink)
