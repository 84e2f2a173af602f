"""Run configuration and the end-to-end pipeline shared by the CLI and the benchmarks.

A run is a pure function of its config and root seed. Every random draw
comes from a named substream of the root seed (graph, split, init,
pretrain, selection, oracle, ttt), so changing one ablation axis does not
perturb the others.
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from gttt.annotator import (
    PROMPT_KINDS,
    BudgetLedger,
    EndpointConfig,
    LlmAnnotator,
    OracleAnnotator,
    OracleConfig,
    default_budget,
)
from gttt.errors import ConfigError, ValidationError
from gttt.gnn import Adam, GcnModel, accuracy, forward, load_checkpoint, pretrain, save_checkpoint
from gttt.graph import (
    SbmParams,
    SplitSpec,
    generate_sbm,
    load_graph,
    load_split,
    make_ood_split,
    normalize_adjacency,
)
from gttt.selection import BASELINE_KINDS, SelectionConfig
from gttt.seeding import derive_seed
from gttt.ttt import FILTER_MODES, TttConfig, run_llmttt

SELECTION_KINDS = ("hybrid",) + BASELINE_KINDS


@dataclass
class ModelSection:
    hidden: list = field(default_factory=lambda: [64])
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.0
    frozen_prefix: int = 1
    checkpoint: str | None = None


@dataclass
class SelectionSection:
    kind: str = "hybrid"
    budget: int | None = None  # None: 10% of the test set
    beta: float = 2.0
    alpha: float = 1.0
    damping: float = 0.85
    tol: float = 1e-8
    hops: int = 2
    max_iter: int = 1000


@dataclass
class OracleSection:
    accuracy: float = 1.0
    correct_conf: list = field(default_factory=lambda: [70.0, 100.0])
    wrong_conf: list = field(default_factory=lambda: [40.0, 90.0])


@dataclass
class LlmSection:
    prompt: str = "few_shot"
    categories: list = field(default_factory=list)
    shots_per_class: int = 1
    base_url: str | None = None
    model: str = "gpt-3.5-turbo-0613"
    temperature: float = 0.0
    timeout: float = 30.0
    parse_retries: int = 2
    transport_retries: int = 3
    concurrency: int = 4
    cache_dir: str | None = None


@dataclass
class TttSection:
    stage1_epochs: int = 30
    stage2_epochs: int = 30
    drop_rate: float = 0.3
    lr: float = 0.001
    gamma: float = 0.5
    keep_ratio: float = 0.8
    momentum: float = 0.999
    lambda_max: float = 1.0
    filter: str = "conf_coe"


@dataclass
class SplitSection:
    shift: str = "covariate"
    criterion: str = "degree"
    word_index: int = 0
    kappa: float = 2.0
    ratios: list = field(default_factory=lambda: [0.4, 0.1, 0.4])
    file: str | None = None


@dataclass
class RunConfig:
    """Resolved configuration of one run. ``sbm`` and ``files`` are exclusive, as are ``oracle`` and ``llm``."""

    seed: int = 0
    out: str = "runs/default"
    sbm: SbmParams | None = None
    files: dict | None = None
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    oracle: OracleSection | None = None
    llm: LlmSection | None = None
    ttt: TttSection = field(default_factory=TttSection)
    ablate_seeds: int = 5

    def validate(self):
        if (self.sbm is None) == (self.files is None):
            raise ConfigError("dataset needs exactly one of [dataset.sbm] or [dataset.files]")
        if (self.oracle is None) == (self.llm is None):
            raise ConfigError("annotator needs exactly one of [annotator.oracle] or [annotator.llm]")
        if self.sbm is not None:
            self.sbm.validate()
        else:
            missing = {"nodes", "edges"} - set(self.files)
            if missing:
                raise ConfigError(f"[dataset.files] is missing {sorted(missing)}")
        if self.selection.kind not in SELECTION_KINDS:
            raise ConfigError(f"selection kind must be one of {SELECTION_KINDS}")
        if self.selection.budget is not None and self.selection.budget < 1:
            raise ConfigError("annotation budget must be >= 1")
        if self.ttt.filter not in FILTER_MODES:
            raise ConfigError(f"ttt.filter must be one of {FILTER_MODES}")
        if self.llm is not None:
            if self.llm.prompt not in PROMPT_KINDS:
                raise ConfigError(f"llm.prompt must be one of {PROMPT_KINDS}")
            if not self.llm.categories:
                raise ConfigError("llm.categories must list the class names")
        if self.oracle is not None:
            self.oracle_config(0).validate()
        if self.model.epochs < 0 or any(h < 1 for h in self.model.hidden):
            raise ConfigError("model epochs must be >= 0 and hidden widths >= 1")
        if self.ablate_seeds < 1:
            raise ConfigError("ablate_seeds must be >= 1")
        self.ttt_config(0).validate()
        SplitSpec(self.split.shift, self.split.criterion, self.split.word_index, self.split.kappa).validate()
        return self

    def oracle_config(self, seed):
        o = self.oracle
        return OracleConfig(o.accuracy, tuple(o.correct_conf), tuple(o.wrong_conf), derive_seed(seed, "oracle"))

    def ttt_config(self, seed):
        t = asdict(self.ttt)
        t.pop("filter")
        return TttConfig(**t, seed=derive_seed(seed, "ttt"))

    def to_json(self):
        return asdict(self)


# ------------------------------------------------------------- config I/O

def _section(cls, raw, where):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from None


def config_from_dict(raw, base_dir="."):
    """Build a validated :class:`RunConfig` from parsed TOML."""
    raw = copy.deepcopy(raw)
    top = {"seed", "out", "dataset", "split", "model", "selection", "annotator", "ttt", "ablate"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    ds = raw.get("dataset", {})
    if set(ds) - {"sbm", "files"}:
        raise ConfigError("[dataset] may only contain [dataset.sbm] or [dataset.files]")
    ann = raw.get("annotator", {})
    if set(ann) - {"oracle", "llm"}:
        raise ConfigError("[annotator] may only contain [annotator.oracle] or [annotator.llm]")

    base = Path(base_dir)
    files = ds.get("files")
    if files is not None:
        files = {k: (str(base / v) if k in ("nodes", "edges") else v) for k, v in files.items()}
    split = _section(SplitSection, raw.get("split"), "split")
    if split.file is not None:
        split.file = str(base / split.file)
    model = _section(ModelSection, raw.get("model"), "model")
    if model.checkpoint is not None:
        model.checkpoint = str(base / model.checkpoint)

    try:
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    cfg = RunConfig(
        seed=seed,
        out=str(raw.get("out", "runs/default")),
        sbm=_section(SbmParams, ds["sbm"], "dataset.sbm") if "sbm" in ds else None,
        files=files,
        split=split,
        model=model,
        selection=_section(SelectionSection, raw.get("selection"), "selection"),
        oracle=_section(OracleSection, ann["oracle"], "annotator.oracle") if "oracle" in ann else None,
        llm=_section(LlmSection, ann["llm"], "annotator.llm") if "llm" in ann else None,
        ttt=_section(TttSection, raw.get("ttt"), "ttt"),
        ablate_seeds=int(raw.get("ablate", {}).get("seeds", 5)),
    )
    try:
        return cfg.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, p.parent)


# ------------------------------------------------------------ benchmark

def benchmark_config(seed=0, oracle_accuracy=0.9, out="runs/benchmark"):
    """The 2-block SBM covariate-shift benchmark used by the acceptance checks.

    2000 nodes, 8 feature dims. Column 0 holds the domain variable ``z``;
    the class means ``(0, +-1, 0, ...)`` rotate towards ``(0, 0, +-1, ...)``
    as ``z`` goes from 0 to 1, so the training domain (low ``z``) and the
    test domain (high ``z``) need different decision boundaries while the
    classes stay balanced.
    """
    d = 8
    means = np.zeros((2, d))
    means[0, 1], means[1, 1] = 1.0, -1.0
    drift = np.zeros((2, d))
    drift[0, 1:3] = (-1.0, 1.0)
    drift[1, 1:3] = (1.0, -1.0)
    cfg = RunConfig(
        seed=seed,
        out=out,
        sbm=SbmParams([1000, 1000], 0.003, 0.0015, means.tolist(), 0.5, drift.tolist(), 0),
        split=SplitSection("covariate", "word", 0, ratios=[0.4, 0.1, 0.4]),
        model=ModelSection(hidden=[64], epochs=200, lr=0.01, weight_decay=5e-4),
        oracle=OracleSection(accuracy=oracle_accuracy),
        ttt=TttSection(stage1_epochs=300, stage2_epochs=30),
    )
    return cfg.validate()


# ------------------------------------------------------------- pipeline

@dataclass
class Prepared:
    graph: object
    split: object
    adj: object


def prepare_data(cfg, seed):
    if cfg.sbm is not None:
        g = generate_sbm(cfg.sbm, derive_seed(seed, "graph"))
    else:
        g = load_graph(cfg.files["nodes"], cfg.files["edges"], cfg.files.get("num_classes"))
    if cfg.split.file is not None:
        split = load_split(cfg.split.file, g.num_nodes)
    else:
        s = cfg.split
        spec = SplitSpec(s.shift, s.criterion, s.word_index, s.kappa)
        split = make_ood_split(g, spec, s.ratios, derive_seed(seed, "split"))
    return Prepared(g, split, normalize_adjacency(g))


def pretrain_model(cfg, data, seed):
    m = cfg.model
    g = data.graph
    dims = [g.feat_dim, *m.hidden, g.num_classes]
    model = GcnModel.init(dims, derive_seed(seed, "init"), m.frozen_prefix)
    opt = Adam(lr=m.lr, weight_decay=m.weight_decay)
    model = pretrain(model, g, data.split, m.epochs, opt, derive_seed(seed, "pretrain"), data.adj, m.dropout)
    pred = forward(model, data.adj, g.features)
    metrics = {
        "acc_train": accuracy(pred, g.labels, data.split.train_mask),
        "acc_val": accuracy(pred, g.labels, data.split.val_mask) if data.split.val_mask.any() else None,
        "acc_test": accuracy(pred, g.labels, data.split.test_mask),
        "config": cfg.to_json(),
        "seed": seed,
    }
    return model, metrics


def _few_shots(cfg, data, seed):
    """One labeled training text per class per shot, drawn from the split's train nodes."""
    g, rng = data.graph, np.random.default_rng(derive_seed(seed, "shots"))
    shots = []
    train = data.split.ids("train")
    for c in range(g.num_classes):
        ids = train[g.labels[train] == c]
        take = min(cfg.llm.shots_per_class, len(ids))
        for v in np.sort(rng.choice(ids, size=take, replace=False)) if take else []:
            shots.append((g.texts[v], cfg.llm.categories[c]))
    return shots


def make_annotator(cfg, data, model, budget, seed, client=None):
    g = data.graph
    ledger = BudgetLedger(budget)
    if cfg.oracle is not None:
        return OracleAnnotator(g.labels, g.num_classes, cfg.oracle_config(seed), ledger)
    llm = cfg.llm
    if len(llm.categories) != g.num_classes:
        raise ConfigError(f"llm.categories has {len(llm.categories)} names, graph has {g.num_classes} classes")
    endpoint = EndpointConfig.from_env(
        base_url=llm.base_url, model=llm.model, temperature=llm.temperature, timeout=llm.timeout,
        parse_retries=llm.parse_retries, transport_retries=llm.transport_retries,
        concurrency=llm.concurrency, seed=derive_seed(seed, "llm"),
    )
    shots = _few_shots(cfg, data, seed) if llm.prompt != "zero_shot" else ()
    pred = forward(model, data.adj, g.features)
    return LlmAnnotator(g, llm.prompt, endpoint, ledger, llm.categories, shots, pred, client, llm.cache_dir)


def run_once(cfg, data, model, seed, client=None):
    """Select, annotate and adapt a pretrained ``model``; returns ``(model, metrics dict)``."""
    num_test = int(data.split.test_mask.sum())
    s = cfg.selection
    budget = default_budget(num_test) if s.budget is None else s.budget
    sel_cfg = SelectionConfig(budget, s.beta, s.alpha, s.damping, s.tol, s.hops, s.max_iter,
                              derive_seed(seed, "selection"))
    try:
        sel_cfg.validate(num_test)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    annotator = make_annotator(cfg, data, model, budget, seed, client)
    model, met = run_llmttt(model, data.graph, data.adj, data.split, sel_cfg, annotator,
                            cfg.ttt_config(seed), s.kind, cfg.ttt.filter)
    out = met.to_json()
    out["config"] = {"run": cfg.to_json(), **out["config"]}
    return model, out


def run_benchmark(seed, oracle_accuracy=0.9, **ttt_overrides):
    """Pretrain and adapt once on :func:`benchmark_config`; returns the metrics dict."""
    cfg = benchmark_config(seed, oracle_accuracy)
    for k, v in ttt_overrides.items():
        setattr(cfg.ttt, k, v)
    data = prepare_data(cfg, seed)
    model, _ = pretrain_model(cfg, data, seed)
    return run_once(cfg, data, model, seed)[1]


# ---------------------------------------------------------------- output

def dump_json(obj, path):
    """Stable JSON: sorted keys, fixed indent, trailing newline."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_model(cfg):
    path = cfg.model.checkpoint or str(Path(cfg.out) / "model.json")
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} not found (run `gttt pretrain` or pass --pretrain)")
    return load_checkpoint(path)


def save_model(cfg, model):
    path = Path(cfg.model.checkpoint or Path(cfg.out) / "model.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, path)
    return path
