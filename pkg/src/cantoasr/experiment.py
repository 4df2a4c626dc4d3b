"""One-shot paired comparison of the two syllable schemes on simulated speech.

The runner builds an initial/final system and an onset/nucleus/coda system
from the same word list and the same character bigram LM, injects the
configured coda-merge confusion into both acoustic simulators, decodes a
shared utterance set under both schemes across a battery of seeds, and
reports per-seed and pooled error rates, sentence-level error
classification, and timing.

Confusion derivation is where the scheme asymmetry lives.  A merge rule
such as ``t>k@aa,a,o`` blends the affected units toward their merge
targets.  Under the initial/final scheme each affected whole final
(``aat``/``aak``, ...) is blended with weight ``b + (1-b) * p``: the unit
is only ever trained inside the merging context.  Under the
onset/nucleus/coda scheme the coda unit is shared across every final using
that coda, most of which the merge never touches, so its blend exposure is
diluted by the fraction of affected finals: ``b + (1-b) * p * dilution``.
``b`` is the baseline acoustic similarity of the merging pair (unreleased
stops and the two nasal codas are close even for careful speakers) and
``p`` is the merge strength.

Timing numbers go to a separate file so the main report is byte-identical
across repeated runs with the same seed.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoder import DecodeParams, batch_decode, build_graph, pdf_labels_for
from .evaluate import (
    classify_errors,
    corpus_wer,
    format_classification,
    format_sweep_table,
    format_wer_table,
    sweep,
    wer,
)
from .lexicon import compile_lexicon, demo_lexicon_path, lexicon_stats, read_lexicon
from .ngram import read_corpus, train_ngram
from .phonology import MergeRuleSet, default_inventory
from .simulate import SimConfig, build_state_models, simulate_utterance

log = logging.getLogger(__name__)

SCHEME_A = "if"
SCHEME_B = "onc"


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: Path
    lexicon_path: Path = field(default_factory=demo_lexicon_path)
    corpus_path: Path = field(
        default_factory=lambda: Path(__file__).parent / "data" / "demo_corpus.txt"
    )
    num_seeds: int = 20
    num_utterances: int = 50
    words_per_utterance: int = 8
    merge_rules: str = "t>k@aa,a,o;ng>n@aa,a,o"
    confusion_p: float = 0.5
    base_similarity: float = 0.85
    noise_sigma: float = 0.6
    frames_per_state: tuple[int, int] = (1, 3)
    feature_dim: int = 8
    mean_scale: float = 2.0
    beam: float = 40.0
    max_active: int = 7000
    lm_weight: float = 0.5
    lattice_width: int = 5
    sweep_beams: tuple[float, ...] = ()
    sweep_max_actives: tuple[int, ...] = ()

    def validate(self) -> None:
        for path in (self.lexicon_path, self.corpus_path):
            if not Path(path).exists():
                raise ExperimentError(f"referenced path does not exist: {path}")
        if self.num_seeds < 1 or self.num_utterances < 1:
            raise ExperimentError("num_seeds and num_utterances must be >= 1")
        if not 0.0 <= self.confusion_p <= 1.0:
            raise ExperimentError("confusion_p must be in [0, 1]")
        if not 0.0 <= self.base_similarity < 1.0:
            raise ExperimentError("base_similarity must be in [0, 1)")


_CONFIG_TYPES = {
    "seed": int,
    "num_seeds": int,
    "num_utterances": int,
    "words_per_utterance": int,
    "confusion_p": float,
    "base_similarity": float,
    "noise_sigma": float,
    "feature_dim": int,
    "mean_scale": float,
    "beam": float,
    "max_active": int,
    "lm_weight": float,
    "lattice_width": int,
}


def load_experiment_config(
    path: str | Path, seed: int | None = None, out_dir: str | Path | None = None
) -> ExperimentConfig:
    """Flat ``key = value`` config file; CLI seed/out_dir take precedence.

    Relative lexicon/corpus paths resolve against the config file location;
    empty values keep the bundled defaults.
    """
    path = Path(path)
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ExperimentError(f"{path}:{lineno}: expected 'key = value'")
            raw[key.strip()] = value.strip()

    cfg = ExperimentConfig(seed=0, out_dir=Path("."))
    for key, value in raw.items():
        if key in _CONFIG_TYPES:
            setattr(cfg, key, _CONFIG_TYPES[key](value))
        elif key in ("lexicon", "corpus"):
            if value:
                resolved = (path.parent / value).resolve()
                setattr(cfg, f"{key}_path" if key == "lexicon" else "corpus_path", resolved)
        elif key == "out_dir":
            if value:
                cfg.out_dir = Path(value)
        elif key == "merge_rules":
            cfg.merge_rules = value
        elif key == "frames_per_state":
            lo, _, hi = value.partition(":")
            cfg.frames_per_state = (int(lo), int(hi))
        elif key == "sweep_beams":
            cfg.sweep_beams = tuple(float(v) for v in value.split(",") if v.strip())
        elif key == "sweep_max_actives":
            cfg.sweep_max_actives = tuple(int(v) for v in value.split(",") if v.strip())
        else:
            raise ExperimentError(f"{path}: unknown config key {key!r}")
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    if "seed" not in raw and seed is None:
        raise ExperimentError("a seed is mandatory (config key or --seed)")
    cfg.validate()
    return cfg


def merge_dilution(inv, rule) -> float:
    """Fraction of the source coda's finals that the merge rule touches."""
    with_coda = [f for f, (n, c) in inv.finals.items() if c == rule.from_coda]
    affected = [
        f
        for f in with_coda
        if rule.nuclei is None or inv.finals[f][0] in rule.nuclei
    ]
    return len(affected) / len(with_coda) if with_coda else 0.0


def _confusable_pairs(inv, scheme: str, labels: set[str], rules: MergeRuleSet):
    """(target label, merging label, effective blend fraction) per pair."""
    pairs = []
    for rule in rules.rules:
        if scheme == SCHEME_B:
            exposure = rule, merge_dilution(inv, rule)
            for tone in range(1, 7):
                a, b = f"_{rule.to_coda}{tone}", f"_{rule.from_coda}{tone}"
                if a in labels and b in labels:
                    pairs.append((a, b, exposure[1]))
        else:
            for final, (nucleus, coda) in sorted(inv.finals.items()):
                if coda != rule.from_coda:
                    continue
                if rule.nuclei is not None and nucleus not in rule.nuclei:
                    continue
                try:
                    target = inv.final_for(nucleus, rule.to_coda)
                except Exception:
                    continue
                for tone in range(1, 7):
                    a, b = f"{target}{tone}", f"{final}{tone}"
                    if a in labels and b in labels:
                        pairs.append((a, b, 1.0))
    return pairs


def derive_confusions(
    inv,
    scheme: str,
    labels: set[str],
    rules: MergeRuleSet,
    p: float,
    base: float,
    pair_distance=None,
    reference_distance: float | None = None,
) -> tuple[tuple[str, str, float], ...]:
    """Per-scheme confusion entries realizing a coda merge of strength p.

    Each pair's blend fraction is ``b + (1-b) * p * exposure`` where the
    exposure is 1 for a whole-final unit (it is only ever trained inside the
    merging context) and the affected-context fraction for a shared coda
    unit.  When the actual independent distance of a pair's means is known,
    the blend weight is rescaled so the post-blend margin hits the same
    target regardless of where the random draws landed, which keeps flip
    rates comparable across model seeds.
    """
    entries = []
    for a, b, exposure in _confusable_pairs(inv, scheme, labels, rules):
        blend = base + (1.0 - base) * p * exposure
        if pair_distance is not None and reference_distance:
            target_margin = (1.0 - blend) * reference_distance
            actual = pair_distance(a, b)
            if actual > 0:
                blend = min(max(1.0 - target_margin / actual, 0.0), 1.0)
        entries.append((a, b, blend))
    return tuple(entries)


@dataclass
class SchemeSystem:
    scheme: str
    lex: object
    graph: object
    models: object
    sim_cfg: SimConfig


def _build_system(scheme, entries, inv, lm, cfg: ExperimentConfig) -> SchemeSystem:
    lex = compile_lexicon(entries, scheme, inv)
    graph = build_graph(lex, lm)
    rules = MergeRuleSet.parse(cfg.merge_rules)

    def sim_config(confusion):
        return SimConfig(
            seed=cfg.seed,
            frames_per_state=cfg.frames_per_state,
            feature_dim=cfg.feature_dim,
            noise_sigma=cfg.noise_sigma,
            mean_scale=cfg.mean_scale,
            confusion=confusion,
        )

    # first pass: independent means, to read off actual pair distances
    clean = build_state_models(set(graph.pdf_labels), sim_config(()))

    def pair_distance(a, b):
        gaps = [
            float(np.linalg.norm(clean.means[pa] - clean.means[pb]))
            for pa, pb in zip(pdf_labels_for(a), pdf_labels_for(b))
        ]
        return sum(gaps) / len(gaps)

    confusion = derive_confusions(
        inv,
        scheme,
        set(lex.labels),
        rules,
        cfg.confusion_p,
        cfg.base_similarity,
        pair_distance=pair_distance,
        reference_distance=cfg.mean_scale * math.sqrt(2.0 * cfg.feature_dim),
    )
    sim_cfg = sim_config(confusion)
    models = build_state_models(set(graph.pdf_labels), sim_cfg)
    return SchemeSystem(scheme, lex, graph, models, sim_cfg)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run the paired scheme comparison and write report files.

    Writes ``report.json`` (deterministic for a fixed seed), ``timing.json``
    (wall-clock dependent), and ``report.txt`` (human-readable tables) into
    the output directory, and returns the report dictionary.
    """
    cfg.validate()
    t_start = time.perf_counter()
    inv = default_inventory()
    entries = read_lexicon(cfg.lexicon_path)
    corpus = read_corpus(cfg.corpus_path)
    lm = train_ngram(corpus, order=2, smoothing="witten_bell")

    systems = {
        scheme: _build_system(scheme, entries, inv, lm, cfg)
        for scheme in (SCHEME_A, SCHEME_B)
    }
    params = DecodeParams(
        beam=cfg.beam,
        max_active=cfg.max_active,
        lm_weight=cfg.lm_weight,
        lattice_width=cfg.lattice_width,
    )
    words = [e.word for e in entries]

    per_seed = []
    pooled_pairs: dict[str, list[tuple[str, str]]] = {SCHEME_A: [], SCHEME_B: []}
    refs_all: list[str] = []
    hyps_all: dict[str, list[str]] = {SCHEME_A: [], SCHEME_B: []}
    timing: dict[str, dict] = {
        s: {"wall_seconds": 0.0, "audio_seconds": 0.0} for s in systems
    }
    failures = {s: 0 for s in systems}

    for seed_idx in range(cfg.num_seeds):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 2, seed_idx))
        )
        texts = [
            tuple(words[int(k)] for k in rng.integers(0, len(words), cfg.words_per_utterance))
            for _ in range(cfg.num_utterances)
        ]
        refs = ["".join(t) for t in texts]
        seed_rows = {}
        for scheme, system in systems.items():
            scorers = []
            for utt_idx, text in enumerate(texts):
                phones = [
                    p.label for w in text for p in system.lex.entries[w][0]
                ]
                salt = seed_idx * 1_000_000 + utt_idx
                scorers.append(
                    simulate_utterance(phones, system.models, system.sim_cfg, salt)
                )
            batch = batch_decode(system.graph, scorers, params)
            hyps = [
                r.hypothesis.text if r.hypothesis is not None else ""
                for r in batch.results
            ]
            failures[scheme] += len(batch.failures)
            pairs = list(zip(refs, hyps))
            pooled_pairs[scheme].extend(pairs)
            hyps_all[scheme].extend(hyps)
            seed_rows[scheme] = corpus_wer(pairs)
            timing[scheme]["wall_seconds"] += batch.wall_seconds
            timing[scheme]["audio_seconds"] += batch.audio_seconds
        refs_all.extend(refs)
        wer_if, wer_onc = seed_rows[SCHEME_A], seed_rows[SCHEME_B]
        rel = (wer_if.rate - wer_onc.rate) / wer_if.rate if wer_if.rate > 0 else 0.0
        per_seed.append(
            {
                "seed_index": seed_idx,
                "wer_if": wer_if.to_json(),
                "wer_onc": wer_onc.to_json(),
                "relative_improvement": rel,
            }
        )
        log.info(
            "seed %d: if %s onc %s", seed_idx, wer_if.percent, wer_onc.percent
        )

    pooled = {s: corpus_wer(pooled_pairs[s]) for s in systems}
    onc_better = sum(
        1 for row in per_seed if row["wer_onc"]["rate"] < row["wer_if"]["rate"]
    )
    classification = classify_errors(refs_all, hyps_all[SCHEME_A], hyps_all[SCHEME_B])
    mean_rel = sum(r["relative_improvement"] for r in per_seed) / len(per_seed)

    report = {
        "params": {
            "seed": cfg.seed,
            "num_seeds": cfg.num_seeds,
            "num_utterances": cfg.num_utterances,
            "words_per_utterance": cfg.words_per_utterance,
            "merge_rules": cfg.merge_rules,
            "confusion_p": cfg.confusion_p,
            "base_similarity": cfg.base_similarity,
            "noise_sigma": cfg.noise_sigma,
            "frames_per_state": list(cfg.frames_per_state),
            "feature_dim": cfg.feature_dim,
            "mean_scale": cfg.mean_scale,
            "beam": cfg.beam,
            "max_active": cfg.max_active,
            "lm_weight": cfg.lm_weight,
            "lattice_width": cfg.lattice_width,
            "lexicon": str(cfg.lexicon_path),
            "corpus": str(cfg.corpus_path),
        },
        "lexicon_stats": {
            s: vars(lexicon_stats(systems[s].lex)) for s in systems
        },
        "per_seed": per_seed,
        "aggregate": {
            "wer_if": pooled[SCHEME_A].to_json(),
            "wer_onc": pooled[SCHEME_B].to_json(),
            "onc_better_seeds": onc_better,
            "num_seeds": cfg.num_seeds,
            "onc_better_fraction": onc_better / cfg.num_seeds,
            "mean_relative_improvement": mean_rel,
            "relative_improvement_pooled": (
                (pooled[SCHEME_A].rate - pooled[SCHEME_B].rate)
                / pooled[SCHEME_A].rate
                if pooled[SCHEME_A].rate > 0
                else 0.0
            ),
            "decode_failures": failures,
        },
        "classification": classification.to_json(),
    }

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )

    timing_out = {
        s: {
            "wall_seconds": timing[s]["wall_seconds"],
            "audio_seconds": timing[s]["audio_seconds"],
            "rtf": (
                timing[s]["wall_seconds"] / timing[s]["audio_seconds"]
                if timing[s]["audio_seconds"]
                else 0.0
            ),
        }
        for s in systems
    }
    timing_out["total_wall_seconds"] = time.perf_counter() - t_start
    (out_dir / "timing.json").write_text(
        json.dumps(timing_out, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    text_rows = [
        (f"IF (simulated)", pooled[SCHEME_A], timing_out[SCHEME_A]["rtf"]),
        (f"ONC (simulated)", pooled[SCHEME_B], timing_out[SCHEME_B]["rtf"]),
    ]
    lines = [
        "Scheme comparison (pooled over seeds)",
        format_wer_table(text_rows),
        "",
        f"ONC better in {onc_better}/{cfg.num_seeds} seeds; "
        f"mean relative improvement {100 * mean_rel:.2f}%",
        f"relative improvement (pooled) "
        f"{100 * report['aggregate']['relative_improvement_pooled']:.2f}%",
        "",
        "Sentence-level error classification (pooled)",
        format_classification(classification, "IF", "ONC"),
    ]

    if cfg.sweep_beams or cfg.sweep_max_actives:
        beams = list(cfg.sweep_beams) or [cfg.beam]
        actives = list(cfg.sweep_max_actives) or [cfg.max_active]
        sweep_report = {}
        for scheme, system in systems.items():
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3)))
            texts = [
                tuple(words[int(k)] for k in rng.integers(0, len(words), cfg.words_per_utterance))
                for _ in range(cfg.num_utterances)
            ]
            scorers = [
                simulate_utterance(
                    [p.label for w in text for p in system.lex.entries[w][0]],
                    system.models,
                    system.sim_cfg,
                    9_000_000 + i,
                )
                for i, text in enumerate(texts)
            ]
            cells = sweep(
                system.graph,
                scorers,
                beams,
                actives,
                ["".join(t) for t in texts],
                lm_weight=cfg.lm_weight,
                lattice_width=cfg.lattice_width,
            )
            sweep_report[scheme] = [c.to_json() for c in cells]
            lines += ["", f"Sweep ({scheme})", format_sweep_table(cells)]
        (out_dir / "sweep.json").write_text(
            json.dumps(sweep_report, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report
