"""Command-line entry point orchestrating the full pipeline.

Config precedence: explicit flags > --config file > built-in defaults.  Every
report path writes JSON plus delimited tables and matplotlib figures into the
output directory, stamped with the hash of the merged config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import embedding, feedback, reports, surrogate, synth
from .data import load_dataset, save_dataset
from .explain import TemplateSet, explain
from .paths import build_augmented_graph, build_feature_matrix
from .surrogate import SurrogateConfig, build_pool, fit_tree, select_neighborhood

TRAIN_FIELDS = ("d_e", "d_r", "learning_rate", "epochs", "batch_size",
                "negative_ratio", "label_smoothing", "seed")
SURROGATE_FIELDS = ("max_depth", "min_leaf", "folds", "eval_sample", "k_substitution",
                    "max_path_length", "neg_ratio_eval", "seed")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _merged_section(file_cfg: dict, section: str, args, fields) -> dict:
    merged = dict(file_cfg.get(section, {}))
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-e", dest="d_e", type=int)
    p.add_argument("--d-r", dest="d_r", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--negative-ratio", dest="negative_ratio", type=int)
    p.add_argument("--label-smoothing", dest="label_smoothing", type=float)


def _add_common(p: argparse.ArgumentParser, model: bool = False) -> None:
    p.add_argument("--data", required=True, help="dataset directory (tsv) or file (json)")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    if model:
        p.add_argument("--model", required=True, help="model checkpoint (.npz)")


def cmd_train(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    file_cfg = _load_config_file(args.config)
    cfg = embedding.TrainConfig(**_merged_section(file_cfg, "train", args, TRAIN_FIELDS))
    model = embedding.train(splits, cfg, n_entities=graph.n_entities,
                            n_relations=graph.n_relations)
    embedding.save_model(model, args.out)
    print(json.dumps({"checkpoint": str(args.out), "config_hash": cfg.hash(),
                      "final_loss": model.loss_curve[-1]}))
    return 0


def cmd_link_predict(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    model = embedding.load_model(args.model)
    report = embedding.link_prediction(model, splits, filtered=not args.unfiltered)
    cfg_hash = model.config.hash() if model.config else None
    reports.write_link_prediction_outputs(report, args.out_dir, graph.relations, cfg_hash)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_evaluate_fidelity(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    model = embedding.load_model(args.model)
    file_cfg = _load_config_file(args.config)
    section = _merged_section(file_cfg, "surrogate", args, SURROGATE_FIELDS)
    cfg = SurrogateConfig(**section)
    modes = list(surrogate.MODES) if args.mode == "all" else [args.mode]
    cfg_hash = _config_hash({"surrogate": section})
    evaluations = {}
    graph_aug = build_augmented_graph(graph, model, cfg.k_substitution, cfg.substitution_mode)
    path_caches: dict = {}
    for mode in modes:
        evaluations[mode] = surrogate.evaluate_fidelity(mode, splits, graph, model, cfg,
                                                        graph_aug=graph_aug,
                                                        path_caches=path_caches)
    reports.write_fidelity_outputs(evaluations, args.out_dir, cfg_hash)
    print(json.dumps({mode: ev.to_dict() for mode, ev in evaluations.items()}))
    return 0


def cmd_explain(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    model = embedding.load_model(args.model)
    names = args.triple.split()
    if len(names) != 3:
        print("--triple expects 'head relation tail'", file=sys.stderr)
        return 2
    try:
        q = graph.triple(*names)
    except KeyError as e:
        print(f"unknown symbol {e}", file=sys.stderr)
        return 1
    templates = TemplateSet.load(args.templates) if args.templates else TemplateSet.household()
    cfg = SurrogateConfig()
    graph_aug = build_augmented_graph(graph, model, cfg.k_substitution)
    rng = np.random.default_rng(args.seed or 0)
    pool = [t for t in build_pool(q.relation, graph, model, rng) if t != q]
    pairs = [(t.head, t.tail) for t in pool] + [(q.head, q.tail)]
    features = build_feature_matrix(graph_aug, pairs, q.relation, cfg.max_path_length)
    nbhd = select_neighborhood(q, model, pool, cfg.k_grid, graph_aug, features=features, cfg=cfg)
    tree = fit_tree(nbhd, features, cfg.max_depth, cfg.min_leaf)
    exp = explain(q, model, tree, graph_aug, templates, n_paths=args.n_paths, beam=args.beam,
                  row=features.row_for(q.head, q.tail))
    doc = exp.to_dict(graph.entities, graph.relations)
    if args.out:
        reports.write_json(doc, Path(args.out))
    print(json.dumps(doc, indent=1))
    return 0


def cmd_corrupt(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    plan = feedback.make_corruption_plan(splits, args.rate, args.seed or 0,
                                         n_entities=graph.n_entities)
    corrupted = feedback.apply_corruption_plan(splits, plan)
    out = Path(args.out_dir)
    save_dataset(corrupted, graph, out / "dataset_corrupted", format="tsv")
    reports.write_json(feedback.plan_to_dict(plan, graph), out / "plan.json")
    print(json.dumps({"corrupted": len(plan.items), "out_dir": str(out)}))
    return 0


def cmd_simulate_corrections(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    model = embedding.load_model(args.model)
    with open(args.plan, encoding="utf-8") as f:
        plan = feedback.plan_from_dict(json.load(f), graph)
    corrector = feedback.SimulatedCorrector(accuracy=args.accuracy, seed=args.seed or 0)
    records = feedback.simulate_corrections(plan, model, corrector)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(feedback.record_to_dict(rec, graph), sort_keys=True) + "\n")
    restored = sum(1 for rec, item in zip(records, plan.items)
                   if rec.chosen == feedback.correct_choice_index(rec.options, item.original))
    print(json.dumps({"records": len(records), "ground_truth_consistent": restored}))
    return 0


def cmd_run_experiment(args) -> int:
    splits, graph = load_dataset(args.data, args.format)
    file_cfg = _load_config_file(args.config)
    train_section = _merged_section(file_cfg, "train", args, TRAIN_FIELDS)
    exp_section = dict(file_cfg.get("experiment", {}))
    for name in ("rate", "accuracy", "wrong_choice_mode"):
        value = getattr(args, name, None)
        if value is not None:
            exp_section[name] = value
    if args.sweep is not None:
        exp_section["sweep"] = [float(x) for x in args.sweep.split(",") if x]
    if args.seeds is not None:
        exp_section["seeds"] = [int(x) for x in args.seeds.split(",") if x]
    cfg = feedback.ExperimentConfig(
        train=embedding.TrainConfig(**train_section),
        **{k: tuple(v) if isinstance(v, list) else v for k, v in exp_section.items()},
    )
    report = feedback.run_experiment(splits, graph, cfg)
    cfg_hash = _config_hash({"train": train_section, "experiment": exp_section})
    reports.write_experiment_outputs(report, args.out_dir, cfg_hash)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_make_dataset(args) -> int:
    spec = synth.mini_spec(seed=args.seed or 0) if args.scale == "mini" else \
        synth.HouseholdSpec(seed=args.seed or 0)
    splits, graph = synth.generate_household(spec)
    save_dataset(splits, graph, args.out_dir, format="tsv")
    print(json.dumps({"entities": graph.n_entities, "relations": graph.n_relations,
                      "triples": len(splits.train) + len(splits.valid) + len(splits.test),
                      "out_dir": str(args.out_dir)}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, init_service_state

    state_dir = Path(args.state_dir)
    if args.init:
        init_service_state(state_dir, scale=args.scale, seed=args.seed or 0,
                           rate=args.rate if args.rate is not None else 0.3)
    app = create_app(state_dir, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgexplain",
                                     description="explainable knowledge-graph embedding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding and write a checkpoint")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("link-predict", help="filtered link-prediction report")
    _add_common(p, model=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--unfiltered", action="store_true")
    p.set_defaults(func=cmd_link_predict)

    p = sub.add_parser("evaluate-fidelity", help="surrogate-vs-embedding F1 fidelity")
    _add_common(p, model=True)
    p.add_argument("--mode", choices=(*surrogate.MODES, "all"), default="all")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--eval-sample", dest="eval_sample", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--k-substitution", dest="k_substitution", type=int)
    p.add_argument("--max-path-length", dest="max_path_length", type=int)
    p.add_argument("--neg-ratio-eval", dest="neg_ratio_eval", type=int)
    p.set_defaults(func=cmd_evaluate_fidelity)

    p = sub.add_parser("explain", help="explain one inference")
    _add_common(p, model=True)
    p.add_argument("--triple", required=True, help="'head relation tail'")
    p.add_argument("--templates", help="template JSON (default: household set)")
    p.add_argument("--n-paths", dest="n_paths", type=int, default=3)
    p.add_argument("--beam", type=int, default=32)
    p.add_argument("--out", help="write the explanation JSON here")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("corrupt", help="corrupt a fraction of train facts per relation")
    _add_common(p)
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("simulate-corrections", help="simulated corrector over a corruption plan")
    _add_common(p, model=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--accuracy", type=float, default=0.866)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_corrections)

    p = sub.add_parser("run-experiment", help="corrupt, correct, retrain and report MRR deltas")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--rate", type=float)
    p.add_argument("--accuracy", type=float)
    p.add_argument("--sweep", help="comma-separated corrector accuracies")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--wrong-choice-mode", dest="wrong_choice_mode", choices=("retain", "replace"))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("make-dataset", help="write a synthetic household dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", choices=("full", "mini"), default="full")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("serve", help="run the correction-review HTTP service")
    p.add_argument("--state-dir", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static-dir", help="built review UI assets to serve at /")
    p.add_argument("--init", action="store_true", help="build a fresh seeded state first")
    p.add_argument("--scale", choices=("full", "mini"), default="mini")
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # surface a clean message, non-zero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
