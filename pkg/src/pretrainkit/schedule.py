"""Three-stage schedule: general pre-training, in-domain pre-training, fine-tuning.

Stages run in order, threading checkpoints: stage 1 pre-trains from random
init on a general corpus, stage 2 continues pre-training on the downstream
corpus (optionally with a different target set), stage 3 hands off to
supervised fine-tuning. Any stage may be omitted; a schedule with only
stage 3 from random init is the plain supervised baseline.
"""

import os
from dataclasses import dataclass, field, replace

from .assemble import assemble
from .checkpoint import load_checkpoint, restore_model
from .downstream import fine_tune, load_classify, load_ner, load_pair
from .errors import SpecError
from .train import TrainConfig, train


@dataclass
class PretrainStage:
    corpus: str
    steps: int
    lr: float = 1e-3
    batch_size: int = 16
    target_override: list = None     # None -> reuse the spec's targets
    init: str = "auto"               # random | checkpoint | auto


@dataclass
class FinetuneStage:
    task: object                     # downstream.TaskConfig
    train_path: str
    dev_path: str
    test_path: str = None
    init: str = "auto"


@dataclass
class ScheduleResult:
    checkpoints: list = field(default_factory=list)
    stage_logs: list = field(default_factory=list)
    final_metrics: dict = None
    test_metrics: dict = None
    model: object = None
    labels: list = None


def _load_rows(task_kind, path):
    if task_kind == "ner":
        return load_ner(path)
    if task_kind == "pair":
        return load_pair(path)
    return load_classify(path)


def run_schedule(spec, vocab, stages, workdir, seed=0, base_cfg=None,
                 log=print):
    """Execute up to three stages sequentially and return the thread of
    checkpoints plus final dev/test metrics."""
    os.makedirs(workdir, exist_ok=True)
    base_cfg = base_cfg or TrainConfig()
    result = ScheduleResult()
    prev_ckpt = None

    for i, stage in enumerate(stages, 1):
        if isinstance(stage, PretrainStage):
            stage_spec = spec
            if stage.target_override:
                stage_spec = replace(spec, targets=list(stage.target_override))
            model = assemble(stage_spec, vocab, seed=seed)
            if stage.init == "checkpoint" and prev_ckpt is None:
                raise SpecError(
                    f"stage {i} asks for checkpoint init but no earlier "
                    "stage produced one"
                )
            if prev_ckpt is not None and stage.init != "random":
                restore_model(model, load_checkpoint(prev_ckpt),
                              vocab_hash=vocab.content_hash())
            cfg = replace(base_cfg, steps=stage.steps, lr=stage.lr,
                          batch_size=stage.batch_size, seed=seed + i)
            out_path = os.path.join(workdir, f"stage{i}.ckpt")
            log(f"[stage {i}] pretrain corpus={stage.corpus} "
                f"targets={[t.kind for t in (stage_spec.targets)]} "
                f"steps={stage.steps}")
            run = train(model, vocab, stage.corpus, cfg, out_path=out_path,
                        log=log)
            result.checkpoints.append(out_path)
            result.stage_logs.append(run)
            prev_ckpt = out_path
        elif isinstance(stage, FinetuneStage):
            train_rows = _load_rows(stage.task.kind, stage.train_path)
            dev_rows = _load_rows(stage.task.kind, stage.dev_path)
            if stage.init == "checkpoint" and prev_ckpt is None:
                raise SpecError(
                    f"stage {i} asks for checkpoint init but no earlier "
                    "stage produced one"
                )
            pretrained = prev_ckpt if stage.init != "random" else None
            log(f"[stage {i}] finetune task={stage.task.kind} "
                f"init={'checkpoint' if pretrained else 'random'}")
            model, best, history = fine_tune(
                stage.task, train_rows, dev_rows, vocab,
                pretrained=pretrained, spec=spec, log=log,
            )
            result.final_metrics = best
            result.stage_logs.append(history)
            result.model = model
            if stage.task.kind == "ner":
                from .downstream import tag_names

                result.labels = tag_names(train_rows)
            if stage.test_path:
                from .downstream import evaluate

                test_rows = _load_rows(stage.task.kind, stage.test_path)
                result.test_metrics = evaluate(
                    model, test_rows, stage.task.kind, vocab, result.labels,
                    tokenize_mode=stage.task.tokenize_mode,
                )
        else:
            raise SpecError(f"unknown stage type {type(stage).__name__}")
    return result
