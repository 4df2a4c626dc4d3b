"""Phone-HMM search graph and token-passing Viterbi beam decoding.

The graph is a word loop: a hub state fans out to every pronunciation,
each phone expands to a strict left-to-right 3-state HMM (self-loop plus
forward transition, emitting its state's pdf on both), and a word-end
epsilon arc returns to the hub carrying the word.  The bigram character LM
is conditioned on the last character stored in the token, so the graph
stays small.  The whole word's LM cost is charged on the entry arc (the
context is already known there): path totals are unchanged versus charging
it at the word end, but tokens inside competing words then carry
comparable LM amounts, which is what makes beam comparisons meaningful.
The end-of-sentence LM term is added when the best final token is
selected.

Decoding is frame-synchronous token passing with at most one surviving
token per graph state, beam pruning against the per-frame best score, and
a hard cap on surviving tokens (``max_active``).  The per-frame work is
vectorized over the active set only, so tighter pruning genuinely reduces
wall-clock time.  Transition weights are folded into the acoustic total so
a hypothesis score is always ``am_total + lm_weight * lm_total``.
"""

import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Arc, Hypothesis, Lattice
from .lexicon import PhoneLexicon
from .ngram import EOS, SOS, UNK, NGramModel, tokenize_chars

log = logging.getLogger(__name__)

NEG_INF = -np.inf
HMM_STATES_PER_PHONE = 3
DEFAULT_LATTICE_WIDTH = 10


class GraphError(ValueError):
    pass


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecodeParams:
    beam: float = 15.0
    max_active: int = 7000
    lm_weight: float = 10.0
    lattice_width: int = DEFAULT_LATTICE_WIDTH

    def __post_init__(self):
        if self.beam <= 0 or self.max_active <= 0 or self.lm_weight <= 0:
            raise ValueError("beam, max_active and lm_weight must be positive")


@dataclass
class DecodeStats:
    frames: int
    active_tokens_mean: float
    wall_seconds: float
    audio_seconds: float
    beam: float
    max_active: int
    lm_weight: float
    tokens_expanded: int

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds if self.audio_seconds else 0.0

    def to_json(self) -> dict:
        return {
            "frames": self.frames,
            "active_tokens_mean": self.active_tokens_mean,
            "wall_seconds": self.wall_seconds,
            "audio_seconds": self.audio_seconds,
            "rtf": self.rtf,
            "beam": self.beam,
            "max_active": self.max_active,
            "lm_weight": self.lm_weight,
            "tokens_expanded": self.tokens_expanded,
        }


class MatrixScorer:
    """Acoustic scores backed by a (frames x labels) matrix.

    ``score(frame, label)`` returns a natural-log likelihood; the audio
    duration annotation assumes a fixed frame shift (default 10 ms).
    """

    def __init__(self, matrix: np.ndarray, labels: tuple[str, ...], frame_shift: float = 0.01):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(labels):
            raise ValueError("matrix must be (frames, len(labels))")
        self.matrix = matrix
        self.labels = tuple(labels)
        self.frame_shift = frame_shift
        self._col = {lab: i for i, lab in enumerate(self.labels)}

    def num_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def audio_seconds(self) -> float:
        return self.num_frames() * self.frame_shift

    def score(self, frame: int, label: str) -> float:
        return float(self.matrix[frame, self._col[label]])


FSCR_MAGIC = b"FSCR"


def write_scores(path: str | Path, scorer: MatrixScorer) -> None:
    """Binary score matrix: magic, u32 frames, u32 labels, row-major f32 LE.

    Label names go to a ``.labels`` sidecar, one per line.
    """
    path = Path(path)
    frames, labels = scorer.matrix.shape
    with open(path, "wb") as fh:
        fh.write(FSCR_MAGIC)
        fh.write(struct.pack("<II", frames, labels))
        fh.write(scorer.matrix.astype("<f4").tobytes(order="C"))
    Path(str(path) + ".labels").write_text(
        "\n".join(scorer.labels) + "\n", encoding="utf-8"
    )


def read_scores(
    path: str | Path,
    labels: tuple[str, ...] | None = None,
    frame_shift: float = 0.01,
) -> MatrixScorer:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FSCR_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected FSCR")
        frames, n_labels = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(frames * n_labels * 4), dtype="<f4")
    if data.size != frames * n_labels:
        raise ValueError(f"{path}: truncated score matrix")
    if labels is None:
        sidecar = Path(str(path) + ".labels")
        if not sidecar.exists():
            raise ValueError(f"{path}: no labels given and no {sidecar.name} sidecar")
        labels = tuple(sidecar.read_text(encoding="utf-8").split())
    if len(labels) != n_labels:
        raise ValueError(f"{path}: {n_labels} columns but {len(labels)} labels")
    matrix = data.reshape(frames, n_labels).astype(np.float64)
    return MatrixScorer(matrix, labels, frame_shift)


def pdf_labels_for(phone_label: str) -> tuple[str, ...]:
    """The three HMM-state pdf labels of one phone."""
    return tuple(f"{phone_label}#{k}" for k in range(HMM_STATES_PER_PHONE))


class SearchGraph:
    """Compiled word-loop graph with flat arrays for fast decoding."""

    def __init__(self, lex: PhoneLexicon, lm: NGramModel, self_loop_prob: float):
        if not lex.entries:
            raise GraphError("empty lexicon")
        if lm.order != 2:
            raise GraphError(f"decoding LM must be a bigram, got order {lm.order}")
        if not 0.0 < self_loop_prob < 1.0:
            raise GraphError("self_loop_prob must be in (0, 1)")
        self.scheme = lex.scheme
        self.lm = lm
        self.self_loop_prob = self_loop_prob
        w_self = math.log(self_loop_prob)
        w_fwd = math.log(1.0 - self_loop_prob)

        self.pdf_labels = tuple(
            sorted({p for lab in lex.labels for p in pdf_labels_for(lab)})
        )
        pdf_index = {lab: i for i, lab in enumerate(self.pdf_labels)}

        self.words = tuple(sorted(lex.entries))
        word_index = {w: i for i, w in enumerate(self.words)}
        vocab = lm.vocab
        self.word_tokens: dict[str, tuple[str, ...]] = {}
        for word in self.words:
            tokens = []
            for tok in tokenize_chars(word):
                if tok not in vocab:
                    log.warning("word %r: token %r unknown to the LM", word, tok)
                    tok = UNK
                tokens.append(tok)
            self.word_tokens[word] = tuple(tokens)

        self.hub = 0
        self.start = self.hub
        e_src: list[int] = []
        e_dst: list[int] = []
        e_pdf: list[int] = []
        e_w: list[float] = []
        entry_states: list[int] = []
        j_states: list[int] = []
        j_words: list[int] = []
        next_state = 1
        self.num_prons = 0
        for word in self.words:
            for pron in lex.entries[word]:
                chain = [
                    pdf_index[pdf]
                    for phone in pron
                    for pdf in pdf_labels_for(phone.label)
                ]
                first = next_state
                junction = next_state + len(chain)
                entry_states.append(first)
                for k, pdf in enumerate(chain):
                    state = first + k
                    nxt = state + 1 if k + 1 < len(chain) else junction
                    e_src.append(state)
                    e_dst.append(state)
                    e_pdf.append(pdf)
                    e_w.append(w_self)
                    e_src.append(state)
                    e_dst.append(nxt)
                    e_pdf.append(pdf)
                    e_w.append(w_fwd)
                j_states.append(junction)
                j_words.append(word_index[word])
                next_state = junction + 1
                self.num_prons += 1
        self.num_states = next_state
        self.num_emitting_states = next_state - 1 - self.num_prons

        self.e_src = np.asarray(e_src, dtype=np.int32)
        self.e_dst = np.asarray(e_dst, dtype=np.int32)
        self.e_pdf = np.asarray(e_pdf, dtype=np.int32)
        self.e_w = np.asarray(e_w, dtype=np.float64)
        self.entry_states = np.asarray(entry_states, dtype=np.int32)
        self.j_states = np.asarray(j_states, dtype=np.int32)
        self.j_words = np.asarray(j_words, dtype=np.int32)
        self.junction_words = {
            int(s): self.words[w] for s, w in zip(j_states, j_words)
        }

        # CSR over emitting arcs by source state (arcs are built src-sorted)
        counts = np.bincount(self.e_src, minlength=self.num_states)
        self.e_off = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

        self._build_lm_tables()

    def _build_lm_tables(self) -> None:
        """Per-word LM costs factored as first-char-given-context + inner."""
        ln10 = math.log(10.0)
        ctx_chars = sorted({toks[-1] for toks in self.word_tokens.values()})
        self.ctx_ids = {c: i for i, c in enumerate(ctx_chars)}
        self.sos_ctx = len(ctx_chars)
        n_ctx = len(ctx_chars) + 1
        ctx_tokens = ctx_chars + [SOS]

        inner = np.zeros(len(self.words))
        firsts = []
        for w, word in enumerate(self.words):
            toks = self.word_tokens[word]
            firsts.append(toks[0])
            total = 0.0
            for prev, tok in zip(toks, toks[1:]):
                total += ln10 * self.lm.logprob10(tok, (prev,))
            inner[w] = total
        self.word_lm = np.empty((n_ctx, len(self.words)))
        for c, ctx_tok in enumerate(ctx_tokens):
            for w, first in enumerate(firsts):
                self.word_lm[c, w] = (
                    ln10 * self.lm.logprob10(first, (ctx_tok,)) + inner[w]
                )
        self.end_lm = np.array(
            [ln10 * self.lm.logprob10(EOS, (tok,)) for tok in ctx_tokens]
        )
        self.word_end_ctx = np.array(
            [self.ctx_ids[self.word_tokens[w][-1]] for w in self.words],
            dtype=np.int32,
        )

    def emitting_arcs(self):
        """(src, dst, pdf_index, weight) in global arc order."""
        for i in range(len(self.e_src)):
            yield (
                int(self.e_src[i]),
                int(self.e_dst[i]),
                int(self.e_pdf[i]),
                float(self.e_w[i]),
            )

    def entry_word_pairs(self):
        """(entry state, word) per pronunciation, in construction order."""
        for state, w in zip(self.entry_states, self.j_words):
            yield int(state), self.words[int(w)]

    def arc_counts(self) -> dict:
        n_self = int(np.sum(self.e_src == self.e_dst))
        return {
            "emitting_states": self.num_emitting_states,
            "self_loops": n_self,
            "forward": len(self.e_src) - n_self,
            "entry_eps": len(self.entry_states),
            "word_eps": len(self.j_states),
        }


def build_graph(
    lex: PhoneLexicon, lm: NGramModel, self_loop_prob: float = 0.5
) -> SearchGraph:
    return SearchGraph(lex, lm, self_loop_prob)


def _score_matrix(graph: SearchGraph, scorer) -> np.ndarray:
    """(frames, graph pdf) score array, mapped from the scorer's labels."""
    if isinstance(scorer, MatrixScorer) or (
        hasattr(scorer, "matrix") and hasattr(scorer, "labels")
    ):
        col = {lab: i for i, lab in enumerate(scorer.labels)}
        try:
            perm = np.array([col[lab] for lab in graph.pdf_labels])
        except KeyError as exc:
            raise DecodeError(f"scorer is missing pdf label {exc.args[0]!r}") from None
        return np.ascontiguousarray(np.asarray(scorer.matrix, dtype=np.float64)[:, perm])
    frames = scorer.num_frames()
    out = np.empty((frames, len(graph.pdf_labels)))
    for t in range(frames):
        for j, lab in enumerate(graph.pdf_labels):
            out[t, j] = scorer.score(t, lab)
    return out


def decode(
    graph: SearchGraph, scorer, params: DecodeParams | None = None
) -> tuple[Hypothesis, Lattice, DecodeStats]:
    """Frame-synchronous beam search; see the module docstring.

    Raises ``DecodeError`` when no token survives to a word boundary at the
    final frame (beam too tight or the utterance cannot end on a word).
    """
    params = params or DecodeParams()
    am = _score_matrix(graph, scorer)
    n_frames = am.shape[0]
    if n_frames < 1:
        raise DecodeError("scorer has no frames")
    started = time.perf_counter()

    S = graph.num_states
    v = np.full(S, NEG_INF)
    v_am = np.zeros(S)
    v_lm = np.zeros(S)
    ctx = np.full(S, graph.sos_ctx, dtype=np.int32)
    rec = np.full(S, -1, dtype=np.int32)
    # per-record parallel lists: word id, previous record, end frame,
    # am total, lm total at the crossing
    rec_word: list[int] = []
    rec_prev: list[int] = []
    rec_frame: list[int] = []
    rec_am: list[float] = []
    rec_lm: list[float] = []

    lm_weight = params.lm_weight
    v[graph.hub] = 0.0
    entry_lm = graph.word_lm[graph.sos_ctx, graph.j_words]
    v[graph.entry_states] = lm_weight * entry_lm
    v_lm[graph.entry_states] = entry_lm

    expanded = 0
    active_total = 0
    big = np.iinfo(np.int64).max

    for t in range(n_frames):
        active = np.flatnonzero(v > NEG_INF)
        expanded += len(active)
        starts = graph.e_off[active]
        counts = graph.e_off[active + 1] - starts
        total = int(counts.sum())
        if total == 0:
            raise DecodeError(f"no surviving tokens to expand at frame {t}")
        idx = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(total)
        srcs = graph.e_src[idx]
        dsts = graph.e_dst[idx]
        cand = v[srcs] + graph.e_w[idx] + am[t, graph.e_pdf[idx]]

        nv = np.full(S, NEG_INF)
        np.maximum.at(nv, dsts, cand)
        wmask = cand == nv[dsts]
        winner = np.full(S, big, dtype=np.int64)
        np.minimum.at(winner, dsts[wmask], idx[wmask])
        updated = np.flatnonzero(winner < big)
        wa = winner[updated]
        wsrc = graph.e_src[wa]
        v_am_new = v_am.copy()
        v_lm_new = v_lm.copy()
        ctx_new = ctx.copy()
        rec_new = rec.copy()
        v_am_new[updated] = v_am[wsrc] + graph.e_w[wa] + am[t, graph.e_pdf[wa]]
        v_lm_new[updated] = v_lm[wsrc]
        ctx_new[updated] = ctx[wsrc]
        rec_new[updated] = rec[wsrc]

        # epsilon closure: word-end arcs into the hub, then word entries
        # (each word's LM cost was already charged on its entry arc)
        jv = nv[graph.j_states]
        jmask = np.flatnonzero(jv > NEG_INF)
        if jmask.size:
            j_states = graph.j_states[jmask]
            j_words = graph.j_words[jmask]
            crossing = jv[jmask]
            order = np.lexsort((j_states, -crossing))
            keep = order[: params.lattice_width]
            for k in keep:
                s, w = int(j_states[k]), int(j_words[k])
                rec_word.append(w)
                rec_prev.append(int(rec_new[s]))
                rec_frame.append(t + 1)
                rec_am.append(float(v_am_new[s]))
                rec_lm.append(float(v_lm_new[s]))
            best_k = keep[0]
            s = int(j_states[best_k])
            w = int(j_words[best_k])
            hub = graph.hub
            nv[hub] = float(crossing[best_k])
            v_am_new[hub] = v_am_new[s]
            v_lm_new[hub] = v_lm_new[s]
            ctx_new[hub] = graph.word_end_ctx[w]
            rec_new[hub] = len(rec_word) - len(keep)  # first appended = best
        hv = nv[graph.hub]
        if hv > NEG_INF:
            entries = graph.entry_states
            wc = graph.word_lm[ctx_new[graph.hub], graph.j_words]
            cand_entry = hv + lm_weight * wc
            improve = cand_entry > nv[entries]
            targets = entries[improve]
            nv[targets] = cand_entry[improve]
            v_am_new[targets] = v_am_new[graph.hub]
            v_lm_new[targets] = v_lm_new[graph.hub] + wc[improve]
            ctx_new[targets] = ctx_new[graph.hub]
            rec_new[targets] = rec_new[graph.hub]

        best = nv.max()
        if best == NEG_INF:
            raise DecodeError(f"beam pruned every token at frame {t}")
        keep_ids = np.flatnonzero(nv >= best - params.beam)
        if keep_ids.size > params.max_active:
            order = np.lexsort((keep_ids, -nv[keep_ids]))
            keep_ids = keep_ids[order[: params.max_active]]
        pruned = np.full(S, NEG_INF)
        pruned[keep_ids] = nv[keep_ids]
        v = pruned
        v_am, v_lm, ctx, rec = v_am_new, v_lm_new, ctx_new, rec_new
        active_total += keep_ids.size

    if v[graph.hub] == NEG_INF:
        raise DecodeError(
            "no surviving token reaches a word boundary at the final frame"
        )
    end = float(graph.end_lm[ctx[graph.hub]])
    combined = float(v[graph.hub]) + lm_weight * end
    am_total = float(v_am[graph.hub])
    lm_total = float(v_lm[graph.hub]) + end

    words = []
    r = int(rec[graph.hub])
    while r >= 0:
        words.append(graph.words[rec_word[r]])
        r = rec_prev[r]
    words.reverse()

    wall = time.perf_counter() - started
    hyp = Hypothesis(
        words=tuple(words),
        am_total=am_total,
        lm_total=lm_total,
        lm_weight=lm_weight,
    )
    lattice = _records_to_lattice(
        graph, rec_word, rec_prev, rec_frame, rec_am, rec_lm, n_frames
    )
    stats = DecodeStats(
        frames=n_frames,
        active_tokens_mean=active_total / n_frames,
        wall_seconds=wall,
        audio_seconds=getattr(scorer, "audio_seconds", n_frames * 0.01),
        beam=params.beam,
        max_active=params.max_active,
        lm_weight=lm_weight,
        tokens_expanded=expanded,
    )
    return hyp, lattice, stats


def _records_to_lattice(
    graph, rec_word, rec_prev, rec_frame, rec_am, rec_lm, n_frames
) -> Lattice:
    """Word-boundary records -> word lattice (kept chains only)."""
    finals = [i for i, f in enumerate(rec_frame) if f == n_frames]
    keep: set[int] = set()
    stack = list(finals)
    while stack:
        r = stack.pop()
        if r in keep:
            continue
        keep.add(r)
        if rec_prev[r] >= 0:
            stack.append(rec_prev[r])
    node_of = {r: i + 1 for i, r in enumerate(sorted(keep))}
    nodes = {0: 0}
    arcs = []
    for r in sorted(keep):
        node = node_of[r]
        nodes[node] = rec_frame[r]
        prev = rec_prev[r]
        if prev >= 0:
            src = node_of[prev]
            am_delta = rec_am[r] - rec_am[prev]
            lm_delta = rec_lm[r] - rec_lm[prev]
        else:
            src = 0
            am_delta = rec_am[r]
            lm_delta = rec_lm[r]
        arcs.append(Arc(src, node, graph.words[rec_word[r]], am_delta, lm_delta))
    return Lattice(
        nodes=nodes,
        start=0,
        finals=frozenset(node_of[r] for r in finals),
        arcs=tuple(arcs),
    )


@dataclass
class UtteranceResult:
    index: int
    hypothesis: Hypothesis | None = None
    lattice: Lattice | None = None
    stats: DecodeStats | None = None
    error: str | None = None


@dataclass
class BatchResult:
    results: list[UtteranceResult] = field(default_factory=list)
    rtf: float = 0.0
    wall_seconds: float = 0.0
    audio_seconds: float = 0.0

    @property
    def failures(self) -> list[UtteranceResult]:
        return [r for r in self.results if r.error is not None]


def batch_decode(
    graph: SearchGraph, scorers: list, params: DecodeParams | None = None
) -> BatchResult:
    """Decode utterances independently; per-utterance errors are collected.

    Utterances run sequentially so the timing that feeds the aggregate
    real-time factor is never skewed by contention.
    """
    if not scorers:
        raise ValueError("empty batch")
    params = params or DecodeParams()
    batch = BatchResult()
    for i, scorer in enumerate(scorers):
        try:
            hyp, lattice, stats = decode(graph, scorer, params)
        except DecodeError as exc:
            batch.results.append(UtteranceResult(index=i, error=str(exc)))
            log.warning("utterance %d failed: %s", i, exc)
            continue
        batch.results.append(
            UtteranceResult(index=i, hypothesis=hyp, lattice=lattice, stats=stats)
        )
        batch.wall_seconds += stats.wall_seconds
        batch.audio_seconds += stats.audio_seconds
    batch.rtf = aggregate_rtf(
        [r.stats for r in batch.results if r.stats is not None]
    )
    return batch


def aggregate_rtf(stats: list[DecodeStats]) -> float:
    """Total processing time over total audio duration."""
    audio = sum(s.audio_seconds for s in stats)
    if audio == 0.0:
        return 0.0
    return sum(s.wall_seconds for s in stats) / audio
