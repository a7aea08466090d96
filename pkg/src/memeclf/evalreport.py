"""Metrics, fold aggregation, the eight-configuration ablation runner, gating
diagnostics, and report emission.

Zero-division convention: any 0/0 precision, recall, or F1 is defined as 0.
Table output shows macro-averaged precision/recall alongside macro-F1 and
accuracy, ranked by macro-F1 descending.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DataError, DatasetManifest, FoldAssignment, LABELS_PER_TASK
from .encoders import EncoderSpec, encode_image, encode_text, toy_image_spec, toy_text_spec
from .ensemble import train_bagging_fold, train_soft_vote_fold
from .fusion import CONFIG_DESCRIPTIONS, HybridHeadConfig, ModelConfigId, TEXT_REMOVED_IDS
from .preprocess import HashTokenizer, preprocess_image, tokenize_text
from .training import EmbeddedDataset, HeadPredictor, TrainConfig, run_cv


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) ints; rows true class, columns predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray  # (K,)
    recall: np.ndarray
    f1: np.ndarray
    precision_macro: float
    recall_macro: float
    f1_macro: float


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0:
        raise DataError("cannot build a confusion matrix from empty predictions")
    if preds.shape != labels.shape:
        raise DataError(f"preds/labels length mismatch: {preds.shape} vs {labels.shape}")
    if preds.min() < 0 or preds.max() >= num_classes or labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"class indices out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    precision = _safe_div(tp, counts.sum(axis=0))
    recall = _safe_div(tp, counts.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / counts.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        precision_macro=float(precision.mean()),
        recall_macro=float(recall.mean()),
        f1_macro=float(f1.mean()),
    )


@dataclass
class AggregateReport:
    mean: MetricsReport
    std: MetricsReport  # sample standard deviation per metric
    n_folds: int


def aggregate_folds(reports: list[MetricsReport]) -> AggregateReport:
    """Unweighted mean across folds, with sample standard deviation."""
    if not reports:
        raise DataError("no fold reports to aggregate")

    def collect(attr):
        return np.array([getattr(r, attr) for r in reports])

    def summarize(op):
        return MetricsReport(
            accuracy=float(op(collect("accuracy"))),
            precision=np.atleast_1d(op(collect("precision"))),
            recall=np.atleast_1d(op(collect("recall"))),
            f1=np.atleast_1d(op(collect("f1"))),
            precision_macro=float(op(collect("precision_macro"))),
            recall_macro=float(op(collect("recall_macro"))),
            f1_macro=float(op(collect("f1_macro"))),
        )

    mean = summarize(lambda a: a.mean(axis=0))
    ddof = 1 if len(reports) > 1 else 0
    std = summarize(lambda a: a.std(axis=0, ddof=ddof))
    return AggregateReport(mean=mean, std=std, n_folds=len(reports))


# ---- embedding orchestration ---------------------------------------------------


def embed_manifest(
    manifest: DatasetManifest,
    text_spec: EncoderSpec | None = None,
    image_spec: EncoderSpec | None = None,
    image_root: str | Path | None = None,
    tokenizer=None,
) -> EmbeddedDataset:
    """Tokenize, preprocess, and encode every sample of a manifest."""
    text_spec = text_spec or toy_text_spec()
    image_spec = image_spec or toy_image_spec()
    tokenizer = tokenizer or HashTokenizer()
    root = Path(image_root) if image_root is not None else None
    txt_rows, img_rows = [], []
    for s in manifest.samples:
        tokens = tokenize_text(s.ocr_text, tokenizer)
        txt_rows.append(encode_text(tokens, text_spec))
        path = root / s.image_path if root is not None else Path(s.image_path)
        img_rows.append(encode_image(preprocess_image(path, source_id=s.id), image_spec))
    return EmbeddedDataset(
        ids=[s.id for s in manifest.samples],
        labels=np.array(manifest.labels(), dtype=np.int64),
        img=np.array(img_rows),
        txt=np.array(txt_rows),
    )


# ---- ablation runner -------------------------------------------------------------


@dataclass
class AblationRow:
    rank: int
    config_id: str
    description: str
    f1_macro: float
    accuracy: float
    precision: float
    recall: float
    f1_std: float


@dataclass
class AblationTable:
    rows: list[AblationRow]
    fold_detail: dict[str, list[MetricsReport]] = field(default_factory=dict)


_ENSEMBLE_TRAINERS = {"M5": train_soft_vote_fold, "M6": train_bagging_fold}


def ablation_run(
    data: EmbeddedDataset,
    folds: FoldAssignment,
    configs: list[str],
    cfg: TrainConfig,
    head_cfg: HybridHeadConfig | None = None,
    data_text_removed: EmbeddedDataset | None = None,
) -> AblationTable:
    """Train and evaluate each requested configuration via cross-validation,
    then rank by mean macro-F1 (ties: accuracy, then config id)."""
    results: dict[str, AggregateReport] = {}
    detail: dict[str, list[MetricsReport]] = {}
    predictors: dict[str, list] = {}
    for config_id in configs:
        model_cfg = ModelConfigId.of(config_id)
        if config_id in TEXT_REMOVED_IDS:
            if data_text_removed is None:
                raise DataError(f"{config_id} needs the text-removed image variant, which was not provided")
            cfg_data = EmbeddedDataset(ids=data.ids, labels=data.labels, img=data_text_removed.img, txt=data.txt)
        else:
            cfg_data = data
        if config_id in _ENSEMBLE_TRAINERS:
            trainer = _ENSEMBLE_TRAINERS[config_id]

            def train_fn(train, val, tc, _trainer=trainer):
                record, predictor, _spec = _trainer(train, val, tc, head_cfg)
                return record, predictor

            fold_results = run_cv(model_cfg, cfg_data, folds, cfg, head_cfg, train_fn=train_fn)
        else:
            fold_results = run_cv(model_cfg, cfg_data, folds, cfg, head_cfg)
        reports = [r for (_rec, r, _p, _v) in fold_results]
        detail[config_id] = reports
        predictors[config_id] = [p for (_rec, _r, p, _v) in fold_results]
        results[config_id] = aggregate_folds(reports)

    order = sorted(
        results,
        key=lambda cid: (-results[cid].mean.f1_macro, -results[cid].mean.accuracy, cid),
    )
    rows = [
        AblationRow(
            rank=i + 1,
            config_id=cid,
            description=CONFIG_DESCRIPTIONS[cid],
            f1_macro=results[cid].mean.f1_macro,
            accuracy=results[cid].mean.accuracy,
            precision=results[cid].mean.precision_macro,
            recall=results[cid].mean.recall_macro,
            f1_std=results[cid].std.f1_macro,
        )
        for i, cid in enumerate(order)
    ]
    table = AblationTable(rows=rows, fold_detail=detail)
    table.predictors = predictors  # kept for downstream diagnostics
    return table


# ---- gating diagnostics -----------------------------------------------------------


@dataclass
class GateSummary:
    fraction_text_dominant: float
    mean_g_img: float
    mean_g_txt: float
    histogram_g_txt: np.ndarray  # 10 bins over [0, 1]


def gating_stats(model, data: EmbeddedDataset) -> GateSummary:
    """Per-sample gate statistics for a hybrid (M7/M8) model. Text-dominant
    means strictly g_txt > 0.5; ties count as not dominant."""
    out = model.forward(data.img, data.txt, training=False)
    if out.gate is None:
        raise DataError("model produced no gate weights; gating stats need an M7/M8 head")
    g_txt = out.gate.g_txt
    hist, _ = np.histogram(g_txt, bins=10, range=(0.0, 1.0))
    return GateSummary(
        fraction_text_dominant=float(np.mean(g_txt > 0.5)),
        mean_g_img=float(out.gate.g_img.mean()),
        mean_g_txt=float(g_txt.mean()),
        histogram_g_txt=hist,
    )


# ---- tables and files ---------------------------------------------------------------


def per_class_table(reports: dict[str, MetricsReport], class_names: dict[int, str] | None = None) -> list[tuple]:
    """Rows (model, class, precision, recall, F1), values displayed at 2 decimals."""
    rows = []
    for config_id, report in reports.items():
        for c in range(len(report.precision)):
            label = class_names.get(c, str(c)) if class_names else str(c)
            rows.append(
                (
                    f"{config_id}: {CONFIG_DESCRIPTIONS.get(config_id, config_id)}",
                    label,
                    round(float(report.precision[c]), 2),
                    round(float(report.recall[c]), 2),
                    round(float(report.f1[c]), 2),
                )
            )
    return rows


def emit_predictions(predictor, data: EmbeddedDataset, path: str | Path) -> None:
    """Write `id,prediction` CSV with integer class codes."""
    probs = predictor.predict_proba(data)
    preds = probs.argmax(axis=-1)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction"])
        for sid, pred in zip(data.ids, preds):
            writer.writerow([sid, int(pred)])


ABLATION_COLUMNS = ["Rank", "Model Configuration", "F1 Macro", "Accuracy", "Precision", "Recall"]


def ablation_table_csv(table: AblationTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for row in table.rows:
        writer.writerow(
            [
                row.rank,
                f"{row.config_id}: {row.description}",
                f"{row.f1_macro:.4f}",
                f"{row.accuracy:.4f}",
                f"{row.precision:.4f}",
                f"{row.recall:.4f}",
            ]
        )
    return buf.getvalue()


def ablation_table_markdown(table: AblationTable) -> str:
    lines = ["| " + " | ".join(ABLATION_COLUMNS) + " |", "|" + "---|" * len(ABLATION_COLUMNS)]
    for row in table.rows:
        lines.append(
            f"| {row.rank} | {row.config_id}: {row.description} "
            f"| {row.f1_macro:.4f} | {row.accuracy:.4f} | {row.precision:.4f} | {row.recall:.4f} |"
        )
    lines.append("")
    lines.append("Zero-division convention: undefined precision/recall/F1 reported as 0.")
    return "\n".join(lines) + "\n"


def ablation_figure(table: AblationTable, path: str | Path) -> None:
    """Bar chart of mean macro-F1 per configuration with fold-std error bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r.config_id for r in table.rows]
    values = [r.f1_macro for r in table.rows]
    errors = [r.f1_std for r in table.rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(labels, values, yerr=errors, capsize=4, color="#4878a8")
    ax.set_ylabel("Macro-F1 (mean over folds)")
    ax.set_title("Fusion strategy comparison")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_report(table: AblationTable, fmt: str, path: str | Path) -> None:
    if fmt == "csv":
        Path(path).write_text(ablation_table_csv(table), encoding="utf-8")
    elif fmt == "markdown":
        Path(path).write_text(ablation_table_markdown(table), encoding="utf-8")
    elif fmt == "figure":
        ablation_figure(table, path)
    else:
        raise ValueError(f"unknown report format {fmt!r}; expected csv, markdown, or figure")
