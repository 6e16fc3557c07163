"""Stage orchestration for the four-step enhancement workflow.

Stages and their freezing contracts (verified by checksums, not assumed):
  pretrain          trains the backbone (MLM)
  integrate(kind)   backbone frozen, trains exactly one adapter
  fuse(task)        backbone + adapters frozen, trains fusion on task pairs
  finetune(task)    full unfreeze of the fused model on task pairs

Every stage reads its prerequisite checkpoint from the run directory and
writes a new one; nothing is mutated in place. Two runs with the same
config and seed produce byte-identical checkpoints and reports (run logs
carry wall-clock timestamps and are excluded from that guarantee).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .adapters import AdaptedEncoder, insert_adapters, init_fusion
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .encoder import EncoderConfig, mlm_pretrain
from .errors import ConfigError, DataError
from .evaluation import (MetricReport, eval_alignment, eval_completion,
                         finetune_alignment, finetune_completion)
from .hyper import TrainHyper
from .objectives import (sample_ep_batch, sample_es_batch, sample_tp_batch,
                         sample_ts_batch, train_adapter)
from .params import ParamSet
from .synthetic import (SyntheticConfig, SyntheticDataset, gen_synthetic,
                        load_dataset, save_dataset, vocab_corpus)
from .vocab import Vocab, build_vocab

TASKS = ("completion", "alignment")

PROFILES: dict[str, dict[str, TrainHyper]] = {
    # Full-scale settings: integration batch 128, lr 1e-4, 1e4 warmup steps,
    # 10 epochs; downstream batch 8, lr 1e-8, 10 epochs for completion and
    # 1 for alignment. Pretraining values are placeholders (the full-scale
    # recipe starts from an already pretrained encoder).
    "paper": {
        "pretrain": TrainHyper(batch_size=128, steps=10_000, base_lr=1e-4,
                               warmup_steps=10_000, mask_rate=0.15),
        "adapter": TrainHyper(batch_size=128, epochs=10, base_lr=1e-4,
                              warmup_steps=10_000, tau=0.05, p_cs=0.5),
        "fuse_completion": TrainHyper(batch_size=8, epochs=10, base_lr=1e-8, warmup_steps=1),
        "fuse_alignment": TrainHyper(batch_size=8, epochs=1, base_lr=1e-8, warmup_steps=1),
        "finetune_completion": TrainHyper(batch_size=8, epochs=10, base_lr=1e-8, warmup_steps=1),
        "finetune_alignment": TrainHyper(batch_size=8, epochs=1, base_lr=1e-8, warmup_steps=1),
    },
    # Desk-scale settings sized for minutes-long CPU runs.
    "desk": {
        "pretrain": TrainHyper(batch_size=32, steps=500, base_lr=2e-3,
                               warmup_steps=50, mask_rate=0.15),
        "adapter": TrainHyper(batch_size=32, steps=300, base_lr=2e-3,
                              warmup_steps=30, tau=0.05, p_cs=0.5),
        "fuse_completion": TrainHyper(batch_size=32, steps=150, base_lr=2e-3, warmup_steps=15),
        "fuse_alignment": TrainHyper(batch_size=32, steps=150, base_lr=2e-3, warmup_steps=15),
        "finetune_completion": TrainHyper(batch_size=32, steps=150, base_lr=2e-3, warmup_steps=15),
        "finetune_alignment": TrainHyper(batch_size=32, steps=150, base_lr=2e-3, warmup_steps=15),
    },
}


@dataclass
class PipelineConfig:
    out_dir: str
    seed: int = 7
    profile: str = "desk"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    encoder: dict = field(default_factory=lambda: {
        "layers": 2, "d_model": 64, "n_heads": 4, "ff_dim": 128, "max_seq_len": 24})
    adapter_kinds: list[str] = field(default_factory=lambda: ["EP", "TP", "ES", "TS"])
    bottleneck: int = 8
    eval_k: int = 10
    hyper_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r} (have {sorted(PROFILES)})")
        if not self.adapter_kinds:
            raise ConfigError("adapter_kinds must be non-empty")

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if "synthetic" in raw:
            raw["synthetic"] = SyntheticConfig(**raw["synthetic"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from None

    def canonical_json(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out_dir")        # a location, not an experiment parameter
        return json.dumps(d, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def hyper(self, stage: str, data_size: int = 0) -> TrainHyper:
        """Profile hyper for a stage with overrides applied; epochs resolve to steps."""
        base = PROFILES[self.profile][stage]
        values = dataclasses.asdict(base)
        values.update(self.hyper_overrides.get(stage, {}))
        h = TrainHyper(**values)
        if h.steps == 0 and h.epochs > 0:
            if data_size <= 0:
                raise ConfigError(f"stage {stage}: epochs given but data size unknown")
            h.steps = h.epochs * max(1, data_size // h.batch_size)
        return h


class RunLog:
    """Append-only metric log; step must be monotone within a stage."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_step: dict[str, int] = {}

    def record(self, stage: str, step: int, metric: str, value: float) -> None:
        last = self._last_step.get(stage, -1)
        if step < last:
            raise ValueError(f"non-monotone step {step} < {last} in stage {stage!r}")
        self._last_step[stage] = step
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"ts": time.time(), "stage": stage, "step": step,
                                 "metric": metric, "value": value}) + "\n")


class Workspace:
    """Filesystem layout of one run directory."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.out_dir)
        self.data_dir = self.root / "data"
        self.ckpt_dir = self.root / "checkpoints"
        self.log_dir = self.root / "logs"
        self.report_dir = self.root / "reports"
        self.runlog = RunLog(self.log_dir / "runlog.jsonl")

    def ensure_dirs(self) -> None:
        for d in (self.data_dir, self.ckpt_dir, self.log_dir, self.report_dir):
            d.mkdir(parents=True, exist_ok=True)

    def ckpt(self, name: str) -> Path:
        return self.ckpt_dir / f"{name}.ckpt"

    def require_ckpt(self, name: str, needed_for: str) -> Path:
        p = self.ckpt(name)
        if not p.exists():
            raise ConfigError(
                f"stage {needed_for!r} requires checkpoint {p.name} "
                f"(run the {name.split('_')[0]!r} stage first)")
        return p

    def write_curve(self, name: str, curve: list[tuple[int, float, float]]) -> None:
        path = self.log_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,lr,loss\n")
            for step, lr, loss in curve:
                fh.write(f"{step},{lr:.10g},{loss:.10g}\n")
        for step, _, loss in curve:
            self.runlog.record(name, step, "loss", loss)

    def load_data(self) -> tuple[SyntheticDataset, Vocab]:
        if not (self.data_dir / "config.json").exists():
            raise ConfigError("run the 'gen-synthetic' stage first (no data directory)")
        ds = load_dataset(self.data_dir)
        vocab = Vocab.load(self.data_dir / "vocab.txt")
        return ds, vocab

    def encoder_config(self, vocab: Vocab) -> EncoderConfig:
        return EncoderConfig(vocab_size=len(vocab), **self.config.encoder)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_gen(ws: Workspace) -> Path:
    ws.ensure_dirs()
    ds = gen_synthetic(ws.config.synthetic)
    save_dataset(ds, ws.data_dir)
    vocab = build_vocab(vocab_corpus(ds))
    vocab.save(ws.data_dir / "vocab.txt")
    ws.runlog.record("gen-synthetic", 0, "entities", len(ds.mlkg.entities))
    return ws.data_dir


def stage_pretrain(ws: Workspace) -> Path:
    ws.ensure_dirs()
    ds, vocab = ws.load_data()
    config = ws.encoder_config(vocab)
    hyper = ws.config.hyper("pretrain", len(ds.mlm_corpus))
    params, curve = mlm_pretrain(ds.mlm_corpus, config, hyper, ws.config.seed, vocab)
    ws.write_curve("pretrain", curve)
    path = ws.ckpt("pretrain")
    save_checkpoint(path, params, _provenance(ws, "pretrain"))
    return path


def _provenance(ws: Workspace, stage: str, **extra) -> dict:
    return {"stage": stage, "seed": ws.config.seed, "profile": ws.config.profile,
            "config_hash": ws.config.config_hash(),
            "adapter_kinds": list(ws.config.adapter_kinds),
            "bottleneck": ws.config.bottleneck, "encoder": dict(ws.config.encoder),
            **extra}


def _insert_seed(config: PipelineConfig) -> int:
    return config.seed + 1009


def _fusion_seed(config: PipelineConfig) -> int:
    return config.seed + 2003


def load_backbone(ws: Workspace) -> ParamSet:
    path = ws.require_ckpt("pretrain", "integrate")
    params, _ = load_checkpoint(path)
    return params


def make_sampler(ds: SyntheticDataset, kind: str, hyper: TrainHyper):
    """Bind one adapter kind's objective to the benchmark data."""
    langs = ds.split.adapter_langs
    if kind == "EP":
        return lambda b, rng: sample_ep_batch(ds.mlkg, langs, b, rng)
    if kind == "TP":
        return lambda b, rng: sample_tp_batch(ds.mlkg, ds.train_triples, langs, b,
                                              hyper.p_cs, rng)
    if kind == "ES":
        return lambda b, rng: sample_es_batch(ds.c1, ds.mlkg, langs, b, rng)
    if kind == "TS":
        return lambda b, rng: sample_ts_batch(ds.c2, ds.base_lang, b, rng)
    if kind == "LARGE":
        # one adapter integrating every knowledge type: rotate objectives per batch
        samplers = [make_sampler(ds, k, hyper) for k in ("EP", "TP", "ES", "TS")]
        counter = {"i": 0}

        def mixed(b, rng):
            s = samplers[counter["i"] % 4]
            counter["i"] += 1
            return s(b, rng)

        return mixed
    raise ConfigError(f"unknown adapter kind {kind!r}")


def stage_integrate(ws: Workspace, kind: str) -> Path:
    ws.ensure_dirs()
    kind = kind.upper()
    if kind not in ws.config.adapter_kinds:
        raise ConfigError(f"kind {kind!r} not in configured adapters {ws.config.adapter_kinds}")
    ds, vocab = ws.load_data()
    config = ws.encoder_config(vocab)
    backbone = load_backbone(ws)
    adapted = insert_adapters(backbone, ws.config.adapter_kinds, ws.config.bottleneck,
                              _insert_seed(ws.config), config)
    hyper = ws.config.hyper("adapter", _adapter_data_size(ds, kind))
    hyper.seed = ws.config.seed + sum(ord(c) for c in kind)
    sampler = make_sampler(ds, kind, hyper)
    trained, curve = train_adapter(adapted, kind, sampler, vocab, hyper)
    ws.write_curve(f"integrate_{kind}", curve)
    path = ws.ckpt(f"adapter_{kind}")
    save_checkpoint(path, trained.params, _provenance(ws, "integrate", kind=kind))
    return path


def _adapter_data_size(ds: SyntheticDataset, kind: str) -> int:
    return {"EP": len(ds.mlkg.entities) * len(ds.split.adapter_langs),
            "TP": len(ds.train_triples), "ES": len(ds.c1), "TS": len(ds.c2),
            "LARGE": len(ds.train_triples)}.get(kind, 0)


def assemble_fused(ws: Workspace, kinds: list[str] | None = None) -> AdaptedEncoder:
    """Backbone + every trained adapter group + fresh fusion parameters."""
    kinds = kinds or list(ws.config.adapter_kinds)
    _, vocab = ws.load_data()
    config = ws.encoder_config(vocab)
    backbone = load_backbone(ws)
    backbone_hash = backbone.checksum("encoder.")
    adapted = insert_adapters(backbone, kinds, ws.config.bottleneck,
                              _insert_seed(ws.config), config)
    found = 0
    for kind in kinds:
        path = ws.ckpt(f"adapter_{kind}")
        if not path.exists():
            continue
        trained, _ = load_checkpoint(path)
        if trained.checksum("encoder.") != backbone_hash:
            raise DataError(f"{path.name}: backbone differs from pretrain checkpoint")
        adapted.params.merge(trained, f"adapter.{kind}.")
        found += 1
    if found == 0:
        raise ConfigError("stage 'fuse' requires at least one integrated adapter "
                          "(run 'train-adapter' first)")
    return init_fusion(adapted, _fusion_seed(ws.config)).with_mode("fusion")


def _task_args(ws: Workspace, ds: SyntheticDataset, task: str):
    if task == "completion":
        return finetune_completion, ds.comp_train, eval_completion, ds.comp_test
    if task == "alignment":
        return finetune_alignment, ds.align_train, eval_alignment, ds.align_test
    raise ConfigError(f"unknown task {task!r} (have {TASKS})")


def stage_fuse(ws: Workspace, task: str) -> Path:
    """Stage 3: train fusion parameters only, on the task's Sup training pairs."""
    ws.ensure_dirs()
    ds, vocab = ws.load_data()
    model = assemble_fused(ws)
    finetune_fn, train_data, _, _ = _task_args(ws, ds, task)
    hyper = ws.config.hyper(f"fuse_{task}", len(train_data))
    hyper.seed = ws.config.seed + 101
    trained, curve = finetune_fn(model, ds.mlkg, train_data, vocab, hyper,
                                 train_groups=["fusion."])
    ws.write_curve(f"fuse_{task}", curve)
    path = ws.ckpt(f"fused_{task}")
    save_checkpoint(path, trained.params, _provenance(ws, "fuse", task=task))
    return path


def stage_finetune(ws: Workspace, task: str) -> Path:
    """Stage 4: unfreeze everything on top of the fused checkpoint."""
    ws.ensure_dirs()
    ds, vocab = ws.load_data()
    path_in = ws.require_ckpt(f"fused_{task}", "finetune")
    params, manifest = load_checkpoint(path_in)
    model = model_from_checkpoint(ws, params, manifest)
    finetune_fn, train_data, _, _ = _task_args(ws, ds, task)
    hyper = ws.config.hyper(f"finetune_{task}", len(train_data))
    hyper.seed = ws.config.seed + 211
    trained, curve = finetune_fn(model, ds.mlkg, train_data, vocab, hyper,
                                 train_groups=["encoder.", "adapter.", "fusion."])
    ws.write_curve(f"finetune_{task}", curve)
    path = ws.ckpt(f"finetuned_{task}")
    save_checkpoint(path, trained.params, _provenance(ws, "finetune", task=task))
    return path


def model_from_checkpoint(ws: Workspace, params: ParamSet, manifest: dict) -> AdaptedEncoder:
    _, vocab = ws.load_data()
    config = ws.encoder_config(vocab)
    kinds = [k for k in manifest["provenance"].get("adapter_kinds", [])
             if params.names(f"adapter.{k}.")]
    b = manifest["provenance"].get("bottleneck", ws.config.bottleneck)
    model = AdaptedEncoder(config=config, params=params, kinds=kinds,
                           bottlenecks={k: b for k in kinds})
    if model.has_fusion and kinds:
        model = model.with_mode("fusion")
    return model


def stage_eval(ws: Workspace, task: str, checkpoint: str) -> MetricReport:
    ws.ensure_dirs()
    ds, vocab = ws.load_data()
    path = ws.require_ckpt(checkpoint, "eval")
    params, manifest = load_checkpoint(path)
    model = model_from_checkpoint(ws, params, manifest)
    before = params.checksum()
    _, _, eval_fn, test_data = _task_args(ws, ds, task)
    report = eval_fn(model, ds.mlkg, test_data, vocab, k=ws.config.eval_k)
    if params.checksum() != before:
        raise RuntimeError("evaluation mutated model parameters")
    report.variant = checkpoint
    report.seed = ws.config.seed
    report.profile = ws.config.profile
    report.checkpoint_hash = manifest["blob_sha256"]
    report.config_hash = ws.config.config_hash()
    return report


STAGE_ORDER = ("gen-synthetic", "pretrain", "integrate", "fuse", "finetune", "eval")


def run_stage(ws: Workspace, stage: str, **kw):
    """Dispatch a named stage; prerequisite checkpoints are checked inside."""
    if stage == "gen-synthetic":
        return stage_gen(ws)
    if stage == "pretrain":
        return stage_pretrain(ws)
    if stage == "integrate":
        return stage_integrate(ws, kw["kind"])
    if stage == "fuse":
        return stage_fuse(ws, kw["task"])
    if stage == "finetune":
        return stage_finetune(ws, kw["task"])
    if stage == "eval":
        return stage_eval(ws, kw["task"], kw.get("checkpoint", f"fused_{kw['task']}"))
    raise ConfigError(f"unknown stage {stage!r} (have {STAGE_ORDER})")


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{100.0 * x:.1f}"


def report_tsv_rows(report: MetricReport, split) -> list[str]:
    rows = ["variant\tlanguage\tcategory\tn\thit1\thitk\tmrr"]
    for lang in sorted(report.per_language):
        r = report.per_language[lang]
        cat = split.category(lang) if split else "-"
        rows.append(f"{report.variant}\t{lang}\t{cat}\t{r.n}"
                    f"\t{_fmt(r.hit1)}\t{_fmt(r.hitk)}\t{_fmt(r.mrr)}")
    if split is not None:
        for cat in ("sup", "zs_in", "zs_un"):
            agg = report.category_aggregate(split, cat)
            if agg.n:
                rows.append(f"{report.variant}\tall\t{cat}\t{agg.n}"
                            f"\t{_fmt(agg.hit1)}\t{_fmt(agg.hitk)}\t{_fmt(agg.mrr)}")
    o = report.overall()
    rows.append(f"{report.variant}\tall\toverall\t{o.n}"
                f"\t{_fmt(o.hit1)}\t{_fmt(o.hitk)}\t{_fmt(o.mrr)}")
    return rows


def emit_report(reports: list[MetricReport], fmt: str, path, split=None) -> None:
    if not reports:
        raise ConfigError("emit_report: no reports")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        payload = [r.to_dict(split) for r in reports]
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    elif fmt == "tsv":
        lines = []
        for i, r in enumerate(reports):
            rows = report_tsv_rows(r, split)
            lines.extend(rows if i == 0 else rows[1:])
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
