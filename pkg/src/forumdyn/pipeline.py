"""End-to-end orchestration: stage execution, artifact persistence, content
hashing, and the run manifest.

Stages run in the fixed order ingest -> lda -> series -> fit -> analyze ->
report. Every stage reads only persisted artifacts from upstream stages and
writes its own under ``<output_dir>/artifacts`` (reports go to
``<output_dir>/reports``), so any stage can be re-run or resumed. The
manifest records the effective config, its hash, per-stage seeds, artifact
hashes, row counts, and wall times; artifact bytes are a pure function of
(config, seed), which makes reruns byte-identical.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import time
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import analysis as an
from .bphmm import BPHMMModel, McmcConfig, fit_bphmm
from .corpus import (
    Document,
    IngestReport,
    ProcessedCorpus,
    Vocabulary,
    ingest,
    load_stopwords,
    preprocess,
    select_forums,
)
from .lda import LdaHyperparams, TopicModel, top_words, train_lda
from .timeseries import ForumSeries, build_series, global_week_range, write_series_csv

__all__ = ["PipelineConfig", "PipelineError", "Pipeline", "STAGES", "stage_seed"]

STAGES = ["ingest", "lda", "series", "fit", "analyze", "report"]


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def stage_seed(master_seed: int, stage: str) -> int:
    """Stage-indexed seed derived from the master seed by hashing."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_DEFAULTS = {
    "input": {"posts": None, "stopwords": None},
    "output_dir": None,
    "seed": 0,
    "preprocess": {"min_df": 2, "max_df": 0.5, "min_token_len": 2},
    "forums": {"min_posts": 100, "min_span_days": 28},
    "lda": {
        "topics": 100,
        "alpha": None,
        "beta": 0.01,
        "iterations": 500,
        "fold_in_iterations": 50,
    },
    "weeks": {"start": None, "end": None},
    "bphmm": {
        "sweeps": 1000,
        "burn_in": 500,
        "alpha": 2.0,
        "trans_conc": 1.0,
        "init_conc": 1.0,
        "covariance": "diagonal",
        "variance_floor": 1e-6,
        "kappa0": 1.0,
        "a0": 2.0,
        "b0": None,
        "df0": None,
        "init_states": 6,
    },
    "analysis": {
        "similarity_smoothing": 1e-3,
        "rare_state_threshold": 0.01,
        "activity_z_threshold": 3.0,
        "smoothing_window": 4,
    },
}


@dataclass
class PipelineConfig:
    """Validated pipeline configuration; see ``_DEFAULTS`` for the schema."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict, overrides: dict | None = None) -> "PipelineConfig":
        data = copy.deepcopy(_DEFAULTS)
        for section, values in raw.items():
            if section not in data:
                raise ValueError(f"unknown config section {section!r}")
            if isinstance(data[section], dict):
                if not isinstance(values, dict):
                    raise ValueError(f"config section {section!r} must be an object")
                for key, val in values.items():
                    if key not in data[section]:
                        raise ValueError(f"unknown config key {section}.{key}")
                    data[section][key] = val
            else:
                data[section] = values
        for dotted, val in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if key:
                if section not in data or key not in data[section]:
                    raise ValueError(f"unknown override {dotted!r}")
                data[section][key] = val
            else:
                if section not in data or isinstance(data[section], dict):
                    raise ValueError(f"unknown override {dotted!r}")
                data[section] = val
        if not data["input"]["posts"]:
            raise ValueError("config requires input.posts")
        if not data["output_dir"]:
            raise ValueError("config requires output_dir")
        return cls(data)

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(raw, overrides)

    def __getitem__(self, key: str):
        return self.data[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()

    def mcmc_config(self) -> McmcConfig:
        b = self.data["bphmm"]
        return McmcConfig(seed=stage_seed(self.seed, "fit"), **b)

    def lda_hyperparams(self) -> LdaHyperparams:
        l = self.data["lda"]
        return LdaHyperparams(
            n_topics=int(l["topics"]),
            alpha=l["alpha"],
            beta=float(l["beta"]),
            iterations=int(l["iterations"]),
            seed=stage_seed(self.seed, "lda"),
        )


# ---------------------------------------------------------------------------
# artifact (de)serialization


def _corpus_to_dict(corpus: ProcessedCorpus) -> dict:
    return {
        "vocabulary": corpus.vocabulary.tokens,
        "doc_freq": corpus.vocabulary.doc_freq,
        "dropped_empty": corpus.dropped_empty,
        "documents": [
            {
                "forum_id": d.forum_id,
                "timestamp": int(d.timestamp.timestamp()),
                "token_ids": d.token_ids.tolist(),
            }
            for d in corpus.documents
        ],
    }


def _corpus_from_dict(data: dict) -> ProcessedCorpus:
    vocab = Vocabulary(list(data["vocabulary"]), data["doc_freq"])
    docs = [
        Document(
            d["forum_id"],
            datetime.fromtimestamp(d["timestamp"], tz=timezone.utc),
            np.asarray(d["token_ids"], dtype=np.int32),
        )
        for d in data["documents"]
    ]
    return ProcessedCorpus(docs, vocab, dropped_empty=data["dropped_empty"])


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------


class Pipeline:
    """Runs stages against a config, persisting artifacts and the manifest."""

    def __init__(self, config: PipelineConfig, force: bool = False):
        self.cfg = config
        self.force = force
        self.out = config.output_dir
        self.artifacts = self.out / "artifacts"
        self.reports = self.out / "reports"
        self.manifest_path = self.out / "manifest.json"
        self.manifest = self._load_manifest()

    # -- manifest & artifact helpers ------------------------------------

    def _load_manifest(self) -> dict:
        if self.manifest_path.is_file():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {
            "config": self.cfg.data,
            "config_hash": self.cfg.config_hash(),
            "stages": {},
        }

    def _save_manifest(self) -> None:
        self.manifest["config"] = self.cfg.data
        self.manifest["config_hash"] = self.cfg.config_hash()
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True), encoding="utf-8"
        )

    def _artifact(self, name: str) -> Path:
        return self.artifacts / name

    def _write_artifact(self, name: str, data: dict) -> Path:
        self.artifacts.mkdir(parents=True, exist_ok=True)
        path = self._artifact(name)
        path.write_text(canonical_json(data), encoding="utf-8")
        return path

    def _read_artifact(self, stage: str, name: str) -> dict:
        path = self._artifact(name)
        if not path.is_file():
            raise PipelineError(
                stage, f"missing upstream artifact {name}; run earlier stages first"
            )
        recorded = None
        for st in self.manifest["stages"].values():
            recorded = st.get("outputs", {}).get(name, recorded)
        if recorded is not None and not self.force:
            actual = _sha256_file(path)
            if actual != recorded:
                raise PipelineError(
                    stage,
                    f"artifact {name} does not match the manifest hash "
                    f"(stale or externally modified); rerun upstream stages "
                    f"or pass --force",
                )
        return json.loads(path.read_text(encoding="utf-8"))

    def _record_stage(self, stage: str, outputs: list[Path], counts: dict, t0: float):
        self.manifest["stages"][stage] = {
            "seed": stage_seed(self.cfg.seed, stage),
            "wall_time_s": round(time.time() - t0, 3),
            "outputs": {p.name: _sha256_file(p) for p in outputs},
            "counts": counts,
            "completed_at": datetime.now(timezone.utc).isoformat(),
        }
        self._save_manifest()

    # -- stages ----------------------------------------------------------

    def run(self, from_stage: str | None = None) -> dict:
        start = STAGES.index(from_stage) if from_stage else 0
        for stage in STAGES[start:]:
            getattr(self, f"stage_{stage}")()
        return self.manifest

    def stage_ingest(self) -> None:
        t0 = time.time()
        cfg = self.cfg
        posts_path = Path(cfg["input"]["posts"])
        if not posts_path.is_file():
            raise PipelineError("ingest", f"input posts file not found: {posts_path}")
        stopwords = set()
        if cfg["input"]["stopwords"]:
            sw_path = Path(cfg["input"]["stopwords"])
            if not sw_path.is_file():
                raise PipelineError("ingest", f"stopword list not found: {sw_path}")
            stopwords = load_stopwords(sw_path)
        posts, report = ingest(posts_path)
        if not posts:
            raise PipelineError("ingest", "no valid posts in input")
        pp = cfg["preprocess"]
        corpus = preprocess(
            posts,
            stopwords,
            min_df=int(pp["min_df"]),
            max_df=float(pp["max_df"]),
            min_token_len=int(pp["min_token_len"]),
            report=report,
        )
        fr = cfg["forums"]
        selected = select_forums(
            corpus,
            min_posts=int(fr["min_posts"]),
            min_span=timedelta(days=int(fr["min_span_days"])),
        )
        if not selected:
            raise PipelineError("ingest", "no forums pass the selection thresholds")
        outputs = [
            self._write_artifact("ingest_report.json", report.to_dict()),
            self._write_artifact("corpus.json", _corpus_to_dict(corpus)),
            self._write_artifact("selected_forums.json", {"forums": selected}),
        ]
        self._record_stage(
            "ingest",
            outputs,
            {
                "posts": report.valid,
                "documents": corpus.n_documents,
                "vocabulary": corpus.vocab_size,
                "forums_selected": len(selected),
            },
            t0,
        )

    def stage_lda(self) -> None:
        t0 = time.time()
        corpus = _corpus_from_dict(self._read_artifact("lda", "corpus.json"))
        model = train_lda(corpus, self.cfg.lda_hyperparams(), eval_every=10)
        out = self._write_artifact("lda_model.json", model.to_dict())
        self._record_stage(
            "lda",
            [out],
            {"topics": model.n_topics, "vocabulary": model.vocab_size},
            t0,
        )

    def stage_series(self) -> None:
        t0 = time.time()
        corpus = _corpus_from_dict(self._read_artifact("series", "corpus.json"))
        selected = self._read_artifact("series", "selected_forums.json")["forums"]
        model = TopicModel.from_dict(self._read_artifact("series", "lda_model.json"))
        wk = self.cfg["weeks"]
        wr = global_week_range(
            corpus,
            selected,
            start=date.fromisoformat(wk["start"]) if wk["start"] else None,
            end=date.fromisoformat(wk["end"]) if wk["end"] else None,
        )
        seed = stage_seed(self.cfg.seed, "series")
        fold_iters = int(self.cfg["lda"]["fold_in_iterations"])
        series = [
            build_series(model, corpus, fid, wr, fold_in_iters=fold_iters, seed=seed)
            for fid in selected
        ]
        out = self._write_artifact(
            "series.json", {"series": [s.to_dict() for s in series]}
        )
        self._record_stage(
            "series",
            [out],
            {"forums": len(series), "weeks": wr.n_weeks},
            t0,
        )

    def _load_series(self, stage: str) -> list[ForumSeries]:
        data = self._read_artifact(stage, "series.json")
        return [ForumSeries.from_dict(d) for d in data["series"]]

    def stage_fit(self) -> None:
        t0 = time.time()
        series = self._load_series("fit")
        try:
            model = fit_bphmm(series, self.cfg.mcmc_config())
        except ValueError as exc:
            raise PipelineError("fit", str(exc)) from exc
        out = self._write_artifact("bphmm_model.json", model.to_dict())
        self._record_stage(
            "fit",
            [out],
            {"states": model.n_states, "series": model.n_series},
            t0,
        )

    def stage_analyze(self) -> None:
        t0 = time.time()
        series = self._load_series("analyze")
        model = BPHMMModel.from_dict(self._read_artifact("analyze", "bphmm_model.json"))
        pars = self.cfg["analysis"]
        sim = an.similarity_matrix(model, smoothing=float(pars["similarity_smoothing"]))
        dend = an.cluster(sim)
        vol = an.volatility_report(model, series)
        anomalies = an.anomaly_report(
            model,
            series,
            occupancy_threshold=float(pars["rare_state_threshold"]),
            z_threshold=float(pars["activity_z_threshold"]),
        )
        window = int(pars["smoothing_window"])
        ce = {}
        for s in series:
            raw = an.cross_entropy_series(s)
            smoothed = an.smooth(raw, window)
            ce[s.forum_id] = [
                {"week": int(w), "raw": float(raw[w]), "smoothed": float(smoothed[w])}
                for w in np.flatnonzero(~np.isnan(raw))
            ]
        payload = {
            "similarity": {
                "series_ids": sim.series_ids,
                "values": sim.values.tolist(),
                "smoothing": sim.smoothing,
            },
            "dendrogram": dend.to_dict(),
            "volatility": vol.to_dict(),
            "anomalies": anomalies.to_dict(),
            "cross_entropy": ce,
            "empty_states": sorted(an.empty_state_ids(model)),
        }
        out = self._write_artifact("analysis.json", payload)
        self._record_stage(
            "analyze",
            [out],
            {
                "rare_states": len(anomalies.rare_states),
                "transition_events": len(anomalies.transition_events),
                "activity_peaks": len(anomalies.activity_peaks),
            },
            t0,
        )

    # -- reports ----------------------------------------------------------

    def stage_report(self) -> None:
        t0 = time.time()
        model = TopicModel.from_dict(self._read_artifact("report", "lda_model.json"))
        series = self._load_series("report")
        bphmm = BPHMMModel.from_dict(self._read_artifact("report", "bphmm_model.json"))
        analysis = self._read_artifact("report", "analysis.json")
        self.reports.mkdir(parents=True, exist_ok=True)
        outputs = []

        outputs.append(self._report_top_words(model))
        outputs.extend(self._report_series(series))
        outputs.append(self._report_state_sequences(bphmm, series))
        outputs.append(self._report_similarity(analysis["similarity"]))
        outputs.extend(self._report_dendrogram(analysis["dendrogram"]))
        outputs.append(self._report_volatility(analysis["volatility"]))
        outputs.append(self._report_cross_entropy(analysis["cross_entropy"], series))
        anomalies_path = self.reports / "anomalies.json"
        anomalies_path.write_text(
            json.dumps(analysis["anomalies"], indent=2, sort_keys=True),
            encoding="utf-8",
        )
        outputs.append(anomalies_path)
        self._record_stage("report", outputs, {"files": len(outputs)}, t0)

    def _report_top_words(self, model: TopicModel, n: int = 10) -> Path:
        path = self.reports / "topic_top_words.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["topic", "rank", "token", "probability"])
            for k in range(model.n_topics):
                for rank, (token, prob) in enumerate(top_words(model, k, n), start=1):
                    w.writerow([k, rank, token, _fmt(prob)])
        return path

    def _report_series(self, series: list[ForumSeries]) -> list[Path]:
        sdir = self.reports / "series"
        sdir.mkdir(parents=True, exist_ok=True)
        out = []
        for s in series:
            path = sdir / f"{s.forum_id}.csv"
            write_series_csv(s, path)
            out.append(path)
        return out

    def _report_state_sequences(
        self, model: BPHMMModel, series: list[ForumSeries]
    ) -> Path:
        path = self.reports / "state_sequences.csv"
        weeks = {s.forum_id: s.week_range.week_dates() for s in series}
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["forum_id", "week_start_date", "state_id"])
            for seq in model.sequences:
                dates = weeks[seq.forum_id]
                for t, k in enumerate(seq.states):
                    w.writerow([seq.forum_id, dates[t].isoformat(), int(k)])
        return path

    def _report_similarity(self, sim: dict) -> Path:
        path = self.reports / "similarity.csv"
        ids = sim["series_ids"]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["forum_id"] + ids)
            for fid, row in zip(ids, sim["values"]):
                w.writerow([fid] + [_fmt(x) for x in row])
        return path

    def _report_dendrogram(self, dend: dict) -> list[Path]:
        json_path = self.reports / "dendrogram.json"
        json_path.write_text(
            json.dumps(dend, indent=2, sort_keys=True), encoding="utf-8"
        )
        newick_path = self.reports / "dendrogram.newick"
        rebuilt = an.Dendrogram(
            dend["labels"],
            [(m["left"], m["right"], m["height"], m["size"]) for m in dend["merges"]],
            dend["leaf_order"],
        )
        newick_path.write_text(rebuilt.to_newick() + "\n", encoding="utf-8")
        return [json_path, newick_path]

    def _report_volatility(self, vol: dict) -> Path:
        path = self.reports / "volatility.csv"
        hmm_rank = {f: i + 1 for i, f in enumerate(vol["hmm_ranking"])}
        ce_rank = {f: i + 1 for i, f in enumerate(vol["ce_ranking"])}
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["forum_id", "hmm_volatility", "hmm_rank", "ce_volatility", "ce_rank"]
            )
            for fid in vol["forum_ids"]:
                hv = vol["hmm_volatility"][fid]
                w.writerow(
                    [
                        fid,
                        _fmt(hv) if hv is not None else "",
                        hmm_rank.get(fid, ""),
                        _fmt(vol["ce_volatility"][fid]),
                        ce_rank[fid],
                    ]
                )
        return path

    def _report_cross_entropy(self, ce: dict, series: list[ForumSeries]) -> Path:
        path = self.reports / "cross_entropy.csv"
        weeks = {s.forum_id: s.week_range.week_dates() for s in series}
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["forum_id", "week_start_date", "raw_bits", "smoothed_bits"])
            for fid in sorted(ce):
                dates = weeks[fid]
                for row in ce[fid]:
                    w.writerow(
                        [
                            fid,
                            dates[row["week"]].isoformat(),
                            _fmt(row["raw"]),
                            _fmt(row["smoothed"]),
                        ]
                    )
        return path
