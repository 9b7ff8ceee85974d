"""Training schedules in ``×``/``→`` notation and their execution.

``MLM×NER→SID`` trains MLM and NER jointly, removes their heads, then trains
SID. Within a joint stage, batches of the stage's tasks alternate round-robin
and every optimizer step uses the mean loss of one single-task batch, so all
tasks get the same step cadence and therefore equal weight.
"""

from __future__ import annotations

import copy
import logging
import math
import re
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
import yaml

from .corpus import Dataset, load_dataset, split_dataset, FORMAT_OF_KIND
from .metrics import (
    AuxReport,
    MetricReport,
    SeedAggregate,
    SidPrediction,
    aggregate_seeds,
    las,
    masked_perplexity,
    ner_span_f1,
    pos_accuracy,
    score_sid,
)
from .model import (
    AdamConfig,
    Batch,
    ModelConfig,
    ModelState,
    Vocab,
    add_task_heads,
    init_model,
    label_vocabs,
    mask_batch,
    optimizer_step,
    predict,
    task_loss,
)
from .model.optim import drop_moments

log = logging.getLogger(__name__)

DEFAULT_KINDS = {"SID": "sid", "UD": "ud", "NER": "ner", "MLM": "mlm"}


class ScheduleError(ValueError):
    pass


class EmptySchedule(ScheduleError):
    pass


class EmptyStage(ScheduleError):
    pass


class DuplicateTask(ScheduleError):
    pass


class MissingBinding(KeyError):
    pass


class NoTrainableData(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# notation

_STAGE_SEP = re.compile(r"→|->")
# ASCII "x" separates tasks when it stands alone or sits between upper-case names (NERxSID)
_TASK_SEP = re.compile(r"×|(?<=\s)x(?=\s)|(?<=[A-Z0-9])x(?=[A-Z])")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


@dataclass(frozen=True)
class Stage:
    tasks: tuple[str, ...]

    def __post_init__(self):
        if not self.tasks:
            raise EmptyStage("stage without tasks")
        if len(set(self.tasks)) != len(self.tasks):
            raise DuplicateTask(f"task repeated within stage: {'×'.join(self.tasks)}")

    def __iter__(self):
        return iter(self.tasks)

    def __contains__(self, task: str) -> bool:
        return task in self.tasks


@dataclass(frozen=True)
class Schedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise EmptySchedule("schedule without stages")

    def __len__(self) -> int:
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)

    @property
    def tasks(self) -> list[str]:
        seen = []
        for stage in self.stages:
            seen += [t for t in stage if t not in seen]
        return seen

    def render(self) -> str:
        return render_schedule(self)


def parse_schedule(text: str) -> Schedule:
    if not text or not text.strip():
        raise EmptySchedule("empty schedule text")
    stages = []
    for i, stage_text in enumerate(_STAGE_SEP.split(text)):
        names = [n.strip() for n in _TASK_SEP.split(stage_text)]
        if any(not n for n in names):
            raise EmptyStage(f"empty stage or task at position {i} in {text!r}")
        for n in names:
            if not _NAME.match(n):
                raise ScheduleError(f"bad task name {n!r} in {text!r}")
        stages.append(Stage(tuple(names)))
    return Schedule(tuple(stages))


def render_schedule(schedule: Schedule) -> str:
    return "→".join("×".join(stage.tasks) for stage in schedule)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TaskBinding:
    name: str
    kind: str
    train: Dataset
    dev: Dataset

    def __post_init__(self):
        for d in (self.train, self.dev):
            if d.task_kind != self.kind:
                raise ConfigError(f"task {self.name}: dataset {d.name!r} is {d.task_kind}, expected {self.kind}")


@dataclass
class RunConfig:
    schedule: str
    name: str = ""
    tasks: dict[str, dict[str, Any]] = field(default_factory=dict)
    eval: dict[str, str] = field(default_factory=dict)
    max_epochs: int = 20
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    model: dict[str, Any] = field(default_factory=dict)
    lr: float = 1e-3
    batch_size: int = 8
    mask_prob: float = 0.15
    mlm_split_per_epoch: bool = False
    base_dir: str = "."

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 <= self.mask_prob <= 1:
            raise ConfigError("mask_prob must lie in [0, 1]")
        self.parsed = parse_schedule(self.schedule)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.model)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr)

    def echo(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "base_dir"}
        out["schedule"] = render_schedule(self.parsed)
        return out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__ if f != "base_dir"} | {"epochs"}


def config_from_dict(raw: dict[str, Any], base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    raw = dict(raw)
    if "epochs" in raw:
        raw["max_epochs"] = raw.pop("epochs")
    if "schedule" not in raw:
        raise ConfigError("config needs a 'schedule'")
    if isinstance(raw.get("seeds"), int):
        raw["seeds"] = list(range(1, raw["seeds"] + 1))
    try:
        return RunConfig(base_dir=str(base_dir), **raw)
    except TypeError as err:
        raise ConfigError(str(err)) from None
    except ScheduleError as err:
        raise ConfigError(f"bad schedule: {err}") from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: {err}") from None
    return config_from_dict(raw, path.parent)


def bind_tasks(config: RunConfig) -> dict[str, TaskBinding]:
    """Load the train/dev data of every configured task.

    A task without a ``dev`` path gets one by splitting its training file
    (``split``, default 0.9, with ``split_seed``, default 0).
    """
    bindings = {}
    for name, entry in config.tasks.items():
        kind = entry.get("kind", DEFAULT_KINDS.get(name))
        if kind is None:
            raise ConfigError(f"task {name}: no kind given and none implied by the name")
        if "train" not in entry:
            raise ConfigError(f"task {name}: no training data path")
        fmt = entry.get("format", FORMAT_OF_KIND[kind])
        train = load_dataset(config.resolve(entry["train"]), fmt, name=f"{name}.train")
        if entry.get("dev"):
            dev = load_dataset(config.resolve(entry["dev"]), fmt, name=f"{name}.dev")
        else:
            train, dev = split_dataset(train, entry.get("split", 0.9), entry.get("split_seed", 0))
        bindings[name] = TaskBinding(name, kind, train, dev)
    return bindings


# ---------------------------------------------------------------------------
# data feeding


def mlm_epoch_slice(dataset: Dataset, epoch_index: int, max_epochs: int, enabled: bool = True) -> Dataset:
    """Disjoint per-epoch slices of ceil(n / max_epochs) sentences, cycling once exhausted.

    With ``enabled=False`` the whole dataset is used every epoch.
    """
    if not enabled or len(dataset) == 0:
        return dataset
    size = math.ceil(len(dataset) / max_epochs)
    n_slices = math.ceil(len(dataset) / size)
    k = epoch_index % n_slices
    return dataset.subset(dataset.sentences[k * size : (k + 1) * size], f".slice{k}")


def _batches(sentences: list, batch_size: int, rng: np.random.Generator) -> Iterator[list]:
    """Endless stream of shuffled batches; every pass reshuffles."""
    while True:
        order = rng.permutation(len(sentences))
        for i in range(0, len(order), batch_size):
            yield [sentences[j] for j in order[i : i + batch_size]]


@dataclass
class StepRecord:
    epoch: int
    task: str
    loss: float
    skipped: bool = False


@dataclass
class StageResult:
    stage: Stage
    dev_history: list[dict[str, dict[str, float]]] = field(default_factory=list)
    best_epoch: int = -1
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def best_scores(self) -> dict[str, dict[str, float]]:
        return self.dev_history[self.best_epoch] if self.dev_history else {}

    def steps_per_task(self, epoch: int) -> dict[str, int]:
        counts = {t: 0 for t in self.stage}
        for s in self.steps:
            if s.epoch == epoch and not s.skipped:
                counts[s.task] += 1
        return counts


# ---------------------------------------------------------------------------
# evaluation


def predict_sid(state: ModelState, task: str, dataset: Dataset) -> list[SidPrediction]:
    return [predict(state, s, task) for s in dataset]


def mlm_nll(state: ModelState, task: str, dataset: Dataset, mask_prob: float, seed: int) -> tuple[float, int]:
    """Summed NLL and number of masked tokens over ``dataset`` under a fixed masking seed."""
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    for s in dataset:
        batch = mask_batch([s], state.vocab, mask_prob, rng, task)
        n = batch.n_targets
        if n == 0:
            continue
        loss, _ = task_loss(state, batch, need_grad=False)
        total += loss * n
        count += n
    return total, count


def evaluate_task(state: ModelState, binding: TaskBinding, mask_prob: float = 0.15, seed: int = 0) -> dict[str, float]:
    """Dev metrics of one task plus ``selection``, its contribution to model selection."""
    task, data = binding.name, binding.dev
    if binding.kind == "sid":
        r = score_sid(data.sentences, predict_sid(state, task, data))
        return {"slot_f1": r.slot_f1, "intent_accuracy": r.intent_accuracy,
                "fully_correct": r.fully_correct, "selection": r.slot_f1 + r.intent_accuracy}
    if binding.kind == "ud":
        preds = [predict(state, s, task) for s in data]
        las_ = las(data.sentences, [p["heads"] for p in preds], [p["deprels"] for p in preds])
        pos_ = pos_accuracy(data.sentences, [p["pos_tags"] for p in preds])
        return {"las": las_, "pos_accuracy": pos_, "selection": las_ + pos_}
    if binding.kind == "ner":
        f1 = ner_span_f1(data.sentences, [predict(state, s, task)["ner_tags"] for s in data])
        return {"ner_span_f1": f1, "selection": f1}
    if binding.kind == "mlm":
        total, count = mlm_nll(state, task, data, mask_prob, seed)
        if count == 0:
            return {"selection": 0.0}
        ppl = masked_perplexity(total, count)
        return {"mlm_perplexity": ppl, "selection": -math.log(ppl)}
    raise ValueError(f"unknown task kind {binding.kind!r}")


# ---------------------------------------------------------------------------
# stages


def _require(stage: Stage, bindings: dict[str, TaskBinding]) -> None:
    missing = [t for t in stage if t not in bindings]
    if missing:
        raise MissingBinding(f"no data bound for task(s): {', '.join(missing)}")


def ensure_heads(state: ModelState, stage: Stage, bindings: dict[str, TaskBinding]) -> None:
    _require(stage, bindings)
    for task in stage:
        b = bindings[task]
        add_task_heads(state, task, b.kind, label_vocabs(b.kind, b.train.sentences))


def transition(
    state: ModelState, from_stage: Optional[Stage], to_stage: Stage, bindings: dict[str, TaskBinding]
) -> ModelState:
    """Drop heads of tasks not in ``to_stage`` and create the missing ones.

    Encoder and embedding parameters are not touched; heads of tasks that
    continue into ``to_stage`` are kept as they are.
    """
    for hname in list(state.heads):
        if state.heads[hname].task not in to_stage:
            del state.heads[hname]
            drop_moments(state, hname)
    ensure_heads(state, to_stage, bindings)
    return state


def run_stage(
    state: ModelState,
    stage: Stage,
    bindings: dict[str, TaskBinding],
    config: RunConfig,
    seed: int,
    epoch_callback=None,
) -> tuple[ModelState, StageResult]:
    """Train ``stage`` for ``config.max_epochs`` epochs and return the best-dev-epoch snapshot.

    An epoch runs until the task with the most batches has gone through its
    data once; tasks with fewer batches start another shuffled pass. Model
    selection sums the ``selection`` scores of tasks with a non-empty dev
    set; the earliest epoch wins ties. Without any dev data the last epoch is
    kept.
    """
    _require(stage, bindings)
    for task in stage:
        if len(bindings[task].train) == 0:
            raise NoTrainableData(f"task {task} has no training sentences")
    ensure_heads(state, stage, bindings)
    rng = np.random.default_rng(seed)
    adam = config.adam
    result = StageResult(stage)
    best_score, best_state = -math.inf, None
    has_dev = any(len(bindings[t].dev) for t in stage)

    for epoch in range(config.max_epochs):
        feeds, n_batches = {}, {}
        for task in stage:
            b = bindings[task]
            data = b.train
            if b.kind == "mlm":
                data = mlm_epoch_slice(data, epoch, config.max_epochs, config.mlm_split_per_epoch)
            feeds[task] = _batches(data.sentences, config.batch_size, rng)
            n_batches[task] = math.ceil(len(data) / config.batch_size)
        for _ in range(max(n_batches.values())):
            for task in stage:
                sentences = next(feeds[task])
                if bindings[task].kind == "mlm":
                    batch = mask_batch(sentences, state.vocab, config.mask_prob, rng, task)
                    if batch.n_targets == 0:
                        result.steps.append(StepRecord(epoch, task, 0.0, skipped=True))
                        continue
                else:
                    batch = Batch(task, sentences)
                loss, grads = task_loss(state, batch)
                optimizer_step(state, grads, adam)
                result.steps.append(StepRecord(epoch, task, loss))

        scores = {t: evaluate_task(state, bindings[t], config.mask_prob, seed) for t in stage}
        result.dev_history.append(scores)
        total = sum(s["selection"] for t, s in scores.items() if len(bindings[t].dev))
        log.debug("stage %s epoch %d: %s", "×".join(stage.tasks), epoch + 1, scores)
        if epoch_callback is not None:
            epoch_callback(epoch, state, scores)
        if not has_dev:
            result.best_epoch = epoch
            continue
        if total > best_score:
            best_score, best_state, result.best_epoch = total, copy.deepcopy(state), epoch

    if best_state is not None:
        state = best_state
    return state, result


# ---------------------------------------------------------------------------
# experiments


@dataclass
class SeedRun:
    seed: int
    state: ModelState
    stages: list[StageResult]
    metrics: dict[str, MetricReport]
    aux: AuxReport
    stage_seconds: list[float]


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    runs: list[SeedRun]
    eval_names: list[str]

    @property
    def schedule(self) -> str:
        return self.config["schedule"]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    def metric(self, dataset: str, seed: int) -> MetricReport:
        return next(r for r in self.runs if r.seed == seed).metrics[dataset]

    def aggregates(self) -> dict[str, dict[str, SeedAggregate]]:
        out = {}
        for name in self.eval_names:
            out[name] = {
                m: aggregate_seeds([getattr(r.metrics[name], m) for r in self.runs]) for m in MetricReport.FIELDS
            }
        return out

    def aux_aggregates(self) -> dict[str, SeedAggregate]:
        out = {}
        for m in AuxReport.FIELDS:
            values = [getattr(r.aux, m) for r in self.runs]
            if all(v is not None for v in values):
                out[m] = aggregate_seeds(values)
        return out


def build_vocab(bindings: dict[str, TaskBinding], tasks: Sequence[str]) -> Vocab:
    return Vocab.tokens(w for t in tasks for s in bindings[t].train for w in s.words)


def final_sid_task(schedule: Schedule, bindings: dict[str, TaskBinding]) -> Optional[str]:
    for task in schedule.stages[-1]:
        if bindings[task].kind == "sid":
            return task
    return None


def _aux_report(stages: list[StageResult], bindings: dict[str, TaskBinding]) -> AuxReport:
    found: dict[str, float] = {}
    for res in stages:
        for task, scores in res.best_scores.items():
            if bindings[task].kind == "sid" or not len(bindings[task].dev):
                continue
            found.update({k: v for k, v in scores.items() if k in AuxReport.FIELDS})
    return AuxReport(**found)


def run_seed(config: RunConfig, bindings: dict[str, TaskBinding], eval_sets: dict[str, Dataset], seed: int) -> SeedRun:
    schedule = config.parsed
    for stage in schedule:
        _require(stage, bindings)
    state = init_model(config.model_config, build_vocab(bindings, schedule.tasks), seed)
    results, seconds = [], []
    previous = None
    for i, stage in enumerate(schedule):
        started = time.perf_counter()
        state = transition(state, previous, stage, bindings)
        state, res = run_stage(state, stage, bindings, config, seed=seed * 1000 + i)
        seconds.append(time.perf_counter() - started)
        results.append(res)
        previous = stage
    sid = final_sid_task(schedule, bindings)
    metrics = {}
    if sid is not None:
        for name, data in eval_sets.items():
            metrics[name] = score_sid(data.sentences, predict_sid(state, sid, data))
    return SeedRun(seed, state, results, metrics, _aux_report(results, bindings), seconds)


def load_eval_sets(config: RunConfig) -> dict[str, Dataset]:
    return {name: load_dataset(config.resolve(p), "xsid", name=name) for name, p in config.eval.items()}


def run_schedule(
    config: RunConfig,
    bindings: Optional[dict[str, TaskBinding]] = None,
    eval_sets: Optional[dict[str, Dataset]] = None,
) -> ExperimentReport:
    """Train one model per seed under the schedule and score SID on every evaluation set."""
    bindings = bind_tasks(config) if bindings is None else bindings
    eval_sets = load_eval_sets(config) if eval_sets is None else eval_sets
    if final_sid_task(config.parsed, bindings) is None:
        warnings.warn(f"final stage of {config.schedule!r} has no SID task; nothing will be evaluated")
    runs = []
    for seed in config.seeds:
        run = run_seed(config, bindings, eval_sets, seed)
        for i, secs in enumerate(run.stage_seconds):
            log.info("seed %d stage %d took %.2fs", seed, i + 1, secs)
        runs.append(run)
    names = list(eval_sets) if runs and runs[0].metrics else []
    return ExperimentReport(config.echo(), runs, names)
