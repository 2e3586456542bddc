"""Evaluation over datasets and the ablation harness.

Every ablation trains stage 2 once per variant from the same stage-1 cache
parameters and the same seed, then scores the held-out videos.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import ModelConfig, Readout
from ..pipeline.engine import run_inference
from ..pipeline.model import DualStreamModel, init_cache_params
from ..pipeline.train import train_dacat
from .metrics import aggregate, fmt, per_phase_mean, relaxed_metrics, strict_metrics

log = logging.getLogger(__name__)

READOUT_STRATEGIES = (Readout("adaptive"), Readout("fixed", 10), Readout("fixed", 100),
                      Readout("all"))


@dataclass
class Evaluation:
    strict: list
    relaxed: list
    predictions: list

    @property
    def strict_summary(self):
        return aggregate(self.strict)

    @property
    def relaxed_summary(self):
        return aggregate(self.relaxed)


def evaluate(params, config: ModelConfig, dataset, window_s: float = 10.0,
             fps: float = 1.0) -> Evaluation:
    """Online inference on every video, scored strictly and with relaxed boundaries."""
    model = params if isinstance(params, DualStreamModel) else DualStreamModel(params, config)
    strict, relaxed, preds = [], [], []
    for X, gt in dataset:
        pred = run_inference(X, model, config, fps=fps).timeline
        strict.append(strict_metrics(pred, gt, config.K))
        relaxed.append(relaxed_metrics(pred, gt, config.K, window_s, fps))
        preds.append(pred)
    return Evaluation(strict, relaxed, preds)


@dataclass
class TrainSettings:
    """Stage-2 schedule shared by every variant of an ablation."""

    epochs: int = 30
    segment_len: int = 64
    lr: float = 1e-5
    weight_decay: float = 0.01
    max_grad_norm: Optional[float] = None


@dataclass
class VariantResult:
    name: str
    config: ModelConfig
    evaluation: Evaluation
    params: dict = field(repr=False, default_factory=dict)


def run_variant(name, train_set, test_set, cache_params, config: ModelConfig,
                settings: TrainSettings, seed: Optional[int] = None,
                window_s: float = 10.0, fps: float = 1.0) -> VariantResult:
    params = train_dacat(train_set, cache_params, config, settings.epochs,
                         segment_len=settings.segment_len, lr=settings.lr,
                         weight_decay=settings.weight_decay, seed=seed,
                         max_grad_norm=settings.max_grad_norm)
    ev = evaluate(params, config, test_set, window_s, fps)
    log.info("%s: strict jaccard %.4f", name, ev.strict_summary.mean["jaccard"])
    return VariantResult(name, config, ev, params)


def ablate_readout(train_set, test_set, cache_params, config: ModelConfig,
                   settings: TrainSettings, strategies: Sequence[Readout] = READOUT_STRATEGIES,
                   seed: Optional[int] = None) -> list:
    return [run_variant(str(r), train_set, test_set, cache_params, config.with_(readout=r),
                        settings, seed) for r in strategies]


def ablate_branches(train_set, test_set, cache_params, config, settings, seed=None) -> list:
    names = {"fwb": "w/o ACB", "acb": "w/o FWB", "both": "both"}
    return [run_variant(names[b], train_set, test_set, cache_params,
                        config.with_(branches=b, fusion_mode="after"), settings, seed)
            for b in ("fwb", "acb", "both")]


def ablate_fusion(train_set, test_set, cache_params, config, settings, seed=None) -> list:
    return [run_variant(m, train_set, test_set, cache_params,
                        config.with_(fusion_mode=m, branches="both"), settings, seed)
            for m in ("before", "after")]


def ablate_interaction(train_set, test_set, cache_params, config, settings, seed=None) -> list:
    return [run_variant(m, train_set, test_set, cache_params, config.with_(interaction=m),
                        settings, seed)
            for m in ("add", "concat", "ca")]


def ablate_cache(train_set, test_set, cache_params, config, settings, seed=None) -> list:
    """Stage-1 cache encoder versus an untrained (initialisation-only) one, both frozen."""
    untrained = init_cache_params(config, seed)
    return [
        run_variant("w/o fine-tuning", train_set, test_set, untrained, config, settings, seed),
        run_variant("w/ fine-tuning", train_set, test_set, cache_params, config, settings, seed),
    ]


def per_phase_table_csv(results, K: int, metric: str = "jaccard", label: str = "variant") -> str:
    """One row per variant: per-phase mean ``metric`` then the overall mean."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([label] + [f"phase_{k}" for k in range(K)] + ["overall"])
    for res in results:
        phases = per_phase_mean(res.evaluation.strict, metric)
        overall = aggregate(res.evaluation.strict).mean[metric]
        wr.writerow([res.name] + ["" if np.isnan(v) else fmt(v) for v in phases] + [fmt(overall)])
    return buf.getvalue()


def summary_table_csv(results) -> str:
    """Mean and std of every strict and relaxed metric, one row per variant."""
    from .metrics import METRICS

    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    header = ["variant"]
    for kind in ("strict", "relaxed"):
        for m in METRICS:
            header += [f"{kind}_{m}_mean", f"{kind}_{m}_std"]
    wr.writerow(header)
    for res in results:
        row = [res.name]
        for s in (res.evaluation.strict_summary, res.evaluation.relaxed_summary):
            for m in METRICS:
                row += [fmt(s.mean[m]), fmt(s.std[m])]
        wr.writerow(row)
    return buf.getvalue()
