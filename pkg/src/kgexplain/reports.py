"""Report emission: JSON plus delimited tables with matplotlib figures
rendered next to them, so every CLI report path leaves something plottable
and something parseable in the output directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .embedding import LinkPredictionReport
from .feedback import ExperimentReport
from .surrogate import FidelityEvaluation


def write_json(payload: dict, path: Path, config_hash: str | None = None) -> None:
    if config_hash is not None:
        payload = {"config_hash": config_hash, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def write_fidelity_outputs(evaluations: dict[str, FidelityEvaluation], out_dir,
                           config_hash: str | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json({mode: ev.to_dict() for mode, ev in evaluations.items()},
               out_dir / "fidelity.json", config_hash)

    with open(out_dir / "fidelity.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "fold", "f1", "precision", "recall", "accuracy", "n"])
        for mode, ev in evaluations.items():
            for i, rep in enumerate(ev.folds):
                writer.writerow([mode, i, rep.f1, rep.precision, rep.recall, rep.accuracy, rep.n])

    fig, ax = plt.subplots(figsize=(5, 3.2))
    modes = list(evaluations)
    means = [evaluations[m].mean_f1 for m in modes]
    stds = [evaluations[m].std_f1 for m in modes]
    ax.bar(modes, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_ylabel("F1 fidelity")
    ax.set_ylim(0, 1.05)
    ax.set_title("Surrogate fidelity to the embedding")
    fig.tight_layout()
    fig.savefig(out_dir / "fidelity.png", dpi=150)
    plt.close(fig)


def write_experiment_outputs(report: ExperimentReport, out_dir,
                             config_hash: str | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out_dir / "experiment.json", config_hash)

    with open(out_dir / "accuracy_mrr.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["accuracy", "mrr"])
        for accuracy, mrr in report.curve:
            writer.writerow([accuracy, mrr])

    fig, ax = plt.subplots(figsize=(5, 3.2))
    if report.curve:
        xs, ys = zip(*report.curve)
        ax.plot(xs, ys, marker="o", color="#3a7d44", label="corrected model")
    ax.axhline(report.mrr_corrupted, color="#b04030", linestyle="--", label="corrupted model")
    ax.set_xlabel("corrector accuracy")
    ax.set_ylabel("MRR on clean data")
    ax.set_title("Effect of correction accuracy on MRR")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "accuracy_mrr.png", dpi=150)
    plt.close(fig)


def write_link_prediction_outputs(report: LinkPredictionReport, out_dir, relation_names=None,
                                  config_hash: str | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out_dir / "link_prediction.json", config_hash)

    def rel_name(r: int) -> str:
        return relation_names.name(r) if relation_names is not None else f"r{r}"

    with open(out_dir / "per_relation_mrr.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["relation", "mrr"])
        for r, mrr in sorted(report.per_relation_mrr.items()):
            writer.writerow([rel_name(r), mrr])

    fig, ax = plt.subplots(figsize=(6, 3.2))
    items = sorted(report.per_relation_mrr.items())
    ax.bar([rel_name(r) for r, _ in items], [v for _, v in items], color="#4878a8")
    ax.axhline(report.mrr, color="#3a3a3a", linestyle="--",
               label=f"overall MRR {report.mrr:.3f}")
    ax.set_ylabel("MRR")
    ax.set_ylim(0, 1.05)
    ax.tick_params(axis="x", rotation=60, labelsize=7)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "per_relation_mrr.png", dpi=150)
    plt.close(fig)
