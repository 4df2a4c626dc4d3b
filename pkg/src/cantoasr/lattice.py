"""Word lattices: best path, n-best extraction, and second-pass rescoring.

A lattice is an acyclic word graph whose arcs carry separate acoustic and
language-model scores (both natural log).  Paths are ranked by the combined
score ``am + lm_weight * lm``.  Rescoring replaces the per-arc LM scores
with a stronger character n-gram conditioned on the full in-lattice word
history, splitting nodes where needed so every arc sees a unique history.
"""

import heapq
import math
from dataclasses import dataclass
from pathlib import Path

from .ngram import SOS, NGramModel, tokenize_chars

DEFAULT_LM_WEIGHT = 10.0
DEFAULT_NBEST = 200


class LatticeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    word: str | None  # None is an epsilon arc
    am: float
    lm: float


@dataclass(frozen=True)
class Hypothesis:
    """A word sequence with its score breakdown.

    ``nodes`` is the lattice node path when the hypothesis came from a
    lattice search; decoder tracebacks leave it unset.
    """

    words: tuple[str, ...]
    am_total: float
    lm_total: float
    lm_weight: float = DEFAULT_LM_WEIGHT
    nodes: tuple[int, ...] | None = None

    @property
    def combined(self) -> float:
        return self.am_total + self.lm_weight * self.lm_total

    @property
    def text(self) -> str:
        return "".join(self.words)


@dataclass
class Lattice:
    """Acyclic word graph.  ``nodes`` maps node id to a frame index."""

    nodes: dict[int, int]
    start: int
    finals: frozenset[int]
    arcs: tuple[Arc, ...] = ()

    def __post_init__(self):
        self.finals = frozenset(self.finals)
        self._out: dict[int, list[Arc]] = {}
        self._in: dict[int, list[Arc]] = {}
        for arc in self.arcs:
            self._out.setdefault(arc.src, []).append(arc)
            self._in.setdefault(arc.dst, []).append(arc)
        self.validate()

    def validate(self) -> None:
        if self.start not in self.nodes:
            raise LatticeFormatError(f"start node {self.start} undeclared")
        if not self.finals:
            raise LatticeFormatError("lattice needs at least one final node")
        for node in self.finals:
            if node not in self.nodes:
                raise LatticeFormatError(f"final node {node} undeclared")
        for arc in self.arcs:
            if arc.src not in self.nodes or arc.dst not in self.nodes:
                raise LatticeFormatError(
                    f"arc {arc.src}->{arc.dst} references an undeclared node"
                )
            if arc.src == arc.dst:
                raise LatticeFormatError(f"self arc on node {arc.src}")
        self._topo_order()  # raises on cycles
        reachable = self._closure({self.start}, forward=True)
        co_reachable = self._closure(set(self.finals), forward=False)
        for node in self.nodes:
            if node not in reachable:
                raise LatticeFormatError(f"node {node} unreachable from start")
            if node not in co_reachable:
                raise LatticeFormatError(f"node {node} cannot reach a final node")

    def arcs_from(self, node: int) -> list[Arc]:
        return self._out.get(node, [])

    def arcs_into(self, node: int) -> list[Arc]:
        return self._in.get(node, [])

    def _closure(self, seeds: set[int], forward: bool) -> set[int]:
        seen = set(seeds)
        stack = list(seeds)
        while stack:
            node = stack.pop()
            arcs = self._out.get(node, []) if forward else self._in.get(node, [])
            for arc in arcs:
                nxt = arc.dst if forward else arc.src
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def _topo_order(self) -> list[int]:
        indeg = {n: 0 for n in self.nodes}
        for arc in self.arcs:
            indeg[arc.dst] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        out = self._out
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for arc in out.get(node, []):
                indeg[arc.dst] -= 1
                if indeg[arc.dst] == 0:
                    ready.append(arc.dst)
            ready.sort()
        if len(order) != len(self.nodes):
            raise LatticeFormatError("lattice contains a cycle")
        return order

    def word_sequences(self) -> set[tuple[str, ...]]:
        """All complete word sequences, by exhaustive path enumeration."""
        out = self._out
        results: set[tuple[str, ...]] = set()

        def walk(node, words):
            if node in self.finals:
                results.add(tuple(words))
            for arc in out.get(node, []):
                walk(arc.dst, words + ([arc.word] if arc.word else []))

        walk(self.start, [])
        return results


def _completion_scores(lat: Lattice, lm_weight: float) -> dict[int, float]:
    """Best score from each node to any final (admissible A* heuristic)."""
    best: dict[int, float] = {n: -math.inf for n in lat.nodes}
    for n in lat.finals:
        best[n] = 0.0
    into = lat._in
    for node in reversed(lat._topo_order()):
        if best[node] == -math.inf:
            continue
        for arc in into.get(node, []):
            score = arc.am + lm_weight * arc.lm + best[node]
            if score > best[arc.src]:
                best[arc.src] = score
    return best


def nbest(
    lat: Lattice, n: int = DEFAULT_NBEST, lm_weight: float = DEFAULT_LM_WEIGHT
) -> list[Hypothesis]:
    """The ``n`` best-scoring distinct word sequences, best first.

    Exact best-first search with the completion-score heuristic; ties are
    broken toward the lexicographically smallest node-id sequence.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    completion = _completion_scores(lat, lm_weight)
    out = lat._out
    # heap items: (-upper bound, node path, g, node, words, am, lm)
    heap = [(-completion[lat.start], (lat.start,), 0.0, lat.start, (), 0.0, 0.0)]
    results: list[Hypothesis] = []
    seen: set[tuple[str, ...]] = set()
    pops = 0
    while heap and len(results) < n:
        neg_bound, path, g, node, words, am, lm = heapq.heappop(heap)
        pops += 1
        if pops > 1_000_000:
            raise RuntimeError("n-best search exceeded the pop budget")
        if node in lat.finals and words not in seen:
            seen.add(words)
            results.append(
                Hypothesis(
                    words=words,
                    am_total=am,
                    lm_total=lm,
                    lm_weight=lm_weight,
                    nodes=path,
                )
            )
        for arc in out.get(node, []):
            arc_combined = arc.am + lm_weight * arc.lm
            new_g = g + arc_combined
            bound = new_g + completion[arc.dst]
            if bound == -math.inf:
                continue
            new_words = words + ((arc.word,) if arc.word else ())
            heapq.heappush(
                heap,
                (
                    -bound,
                    path + (arc.dst,),
                    new_g,
                    arc.dst,
                    new_words,
                    am + arc.am,
                    lm + arc.lm,
                ),
            )
    return results


def best_path(lat: Lattice, lm_weight: float = DEFAULT_LM_WEIGHT) -> Hypothesis:
    return nbest(lat, 1, lm_weight)[0]


def rescore_ngram(lat: Lattice, lm: NGramModel) -> Lattice:
    """Replace arc LM scores with ``lm`` conditioned on full word history.

    Nodes are split so every arc sees a unique ``order - 1`` character
    history; acoustic scores and the set of complete word sequences are
    preserved.  Epsilon arcs pass the history through and carry LM score 0.
    """
    if lm.order < 2:
        raise ValueError(f"rescoring needs order >= 2, got order {lm.order}")
    ctx_len = lm.order - 1
    sos_hist = (SOS,) * ctx_len

    def word_score(word: str, hist: tuple[str, ...]) -> tuple[float, tuple[str, ...]]:
        total = 0.0
        h = hist
        for ch in tokenize_chars(word):
            total += math.log(10.0) * lm.logprob10(ch, h)
            h = (h + (ch,))[-ctx_len:]
        return total, h

    start_state = (lat.start, sos_hist)
    ids: dict[tuple[int, tuple[str, ...]], int] = {start_state: 0}
    nodes = {0: lat.nodes[lat.start]}
    arcs: list[Arc] = []
    finals: set[int] = set()
    if lat.start in lat.finals:
        finals.add(0)
    out = lat._out
    queue = [start_state]
    while queue:
        state = queue.pop(0)
        base, hist = state
        src_id = ids[state]
        for arc in out.get(base, []):
            if arc.word is None:
                new_lm, new_hist = 0.0, hist
            else:
                new_lm, new_hist = word_score(arc.word, hist)
            dst_state = (arc.dst, new_hist)
            if dst_state not in ids:
                ids[dst_state] = len(ids)
                nodes[ids[dst_state]] = lat.nodes[arc.dst]
                if arc.dst in lat.finals:
                    finals.add(ids[dst_state])
                queue.append(dst_state)
            arcs.append(Arc(src_id, ids[dst_state], arc.word, arc.am, new_lm))
    return Lattice(nodes=nodes, start=0, finals=frozenset(finals), arcs=tuple(arcs))


def rescore_external(
    hyps: list[Hypothesis],
    scores: dict[tuple[str, ...], float],
    interpolation: float,
) -> list[Hypothesis]:
    """Blend hypothesis LM totals with externally supplied scores and re-sort.

    ``interpolation`` weights the original LM total; 0 replaces it entirely.
    """
    if not 0.0 <= interpolation <= 1.0:
        raise ValueError(f"interpolation must be in [0, 1], got {interpolation}")
    missing = [h.words for h in hyps if h.words not in scores]
    if missing:
        raise KeyError(
            "missing external scores for: "
            + "; ".join("".join(w) for w in missing)
        )
    rescored = []
    for h in hyps:
        new_lm = interpolation * h.lm_total + (1.0 - interpolation) * scores[h.words]
        rescored.append(
            Hypothesis(
                words=h.words,
                am_total=h.am_total,
                lm_total=new_lm,
                lm_weight=h.lm_weight,
                nodes=h.nodes,
            )
        )
    rescored.sort(key=lambda h: (-h.combined, h.words))
    return rescored


def write_lattice(lat: Lattice, path: str | Path) -> None:
    lines = ["LATTICE v1"]
    for node in sorted(lat.nodes):
        lines.append(f"node {node} {lat.nodes[node]}")
    lines.append(f"start {lat.start}")
    for node in sorted(lat.finals):
        lines.append(f"final {node}")
    for arc in lat.arcs:
        word = arc.word if arc.word is not None else "-"
        lines.append(f"arc {arc.src} {arc.dst} {word} {arc.am:.6f} {arc.lm:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_lattice(path: str | Path) -> Lattice:
    path = Path(path)

    def fail(lineno, msg):
        raise LatticeFormatError(f"{path}:{lineno}: {msg}")

    nodes: dict[int, int] = {}
    start: int | None = None
    finals: set[int] = set()
    arcs: list[Arc] = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "LATTICE v1":
        raise LatticeFormatError(f"{path}:1: expected header 'LATTICE v1'")
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        kind = fields[0]
        try:
            if kind == "node" and len(fields) == 3:
                nodes[int(fields[1])] = int(fields[2])
            elif kind == "start" and len(fields) == 2:
                start = int(fields[1])
            elif kind == "final" and len(fields) == 2:
                finals.add(int(fields[1]))
            elif kind == "arc" and len(fields) == 6:
                src, dst = int(fields[1]), int(fields[2])
                if src not in nodes or dst not in nodes:
                    fail(lineno, f"arc references undeclared node: {line!r}")
                word = None if fields[3] == "-" else fields[3]
                arcs.append(Arc(src, dst, word, float(fields[4]), float(fields[5])))
            else:
                fail(lineno, f"unrecognized line {line!r}")
        except ValueError as exc:
            fail(lineno, f"bad value in {line!r}: {exc}")
    if start is None:
        raise LatticeFormatError(f"{path}: missing start declaration")
    try:
        return Lattice(nodes=nodes, start=start, finals=frozenset(finals), arcs=tuple(arcs))
    except LatticeFormatError as exc:
        raise LatticeFormatError(f"{path}: {exc}") from exc


def demo_lattice_path() -> Path:
    return Path(__file__).parent / "data" / "demo_lattice.lat"
