"""Command-line entry points: dataset generation, training, ablations, checks."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .bench import BenchConfig, gen_dataset, load_scenes, save_scenes
from .config import ExperimentConfig, load_config
from .training import (Detector, RunResult, compare_strategies, evaluate_ap,
                       gradcheck, summarize, train)
from .linear import LinearHead


def _write_run(out_dir: str, label: str, result: RunResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"run_{label}.json"), "w") as fh:
        json.dump(result.record(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(out_dir: str, rows: list[tuple[str, RunResult]]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ap_curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed", "iteration", "ap"])
        for label, res in rows:
            for it, ap in res.trajectory:
                w.writerow([label, res.seed, it, f"{ap:.6f}"])


def _save_params(path: str, teacher: Detector, student: Detector,
                 cfg: ExperimentConfig) -> None:
    np.savez(path,
             teacher_cls_w=teacher.cls.weights, teacher_reg_w=teacher.reg.weights,
             teacher_reg_b=teacher.reg.bias,
             student_cls_w=student.cls.weights, student_reg_w=student.reg.weights,
             student_reg_b=student.reg.bias,
             config=json.dumps(cfg.to_dict(), sort_keys=True))


def _load_params(path: str) -> tuple[Detector, Detector, dict]:
    data = np.load(path, allow_pickle=False)
    teacher = Detector(LinearHead(data["teacher_cls_w"], np.zeros(len(data["teacher_cls_w"]))),
                       LinearHead(data["teacher_reg_w"], data["teacher_reg_b"]))
    student = Detector(LinearHead(data["student_cls_w"], np.zeros(len(data["student_cls_w"]))),
                       LinearHead(data["student_reg_w"], data["student_reg_b"]))
    return teacher, student, json.loads(str(data["config"]))


def _cmd_bench_gen(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    scenes = gen_dataset(cfg.bench)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes ({cfg.bench.n_scenes} train + "
          f"{cfg.bench.n_test_scenes} test) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    scenes = load_scenes(args.data)
    result = train(cfg, scenes, progress=not args.quiet)
    _write_run(args.out, f"{cfg.strategy}_seed{cfg.seed}", result)
    _write_csv(args.out, [(cfg.strategy, result)])
    os.makedirs(args.out, exist_ok=True)
    _save_params(os.path.join(args.out, "params.npz"), result.teacher,
                 result.student, cfg)
    print(f"final AP@0.5: {result.final_ap:.2f}  "
          f"(wall clock {result.wall_clock:.1f}s, records in {args.out})")
    return 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    scenes = load_scenes(args.data)
    seeds = list(range(args.seeds))
    rows = compare_strategies(cfg, scenes, seeds, include_reg_star=args.reg_star,
                              include_cross=args.cross, progress=not args.quiet)
    for label, res in rows:
        _write_run(args.out, f"{label.replace('*', 'star')}_seed{res.seed}", res)
    _write_csv(args.out, rows)
    means = summarize(rows)
    print(f"{'strategy':12s}  mean AP@0.5 over {len(seeds)} seeds")
    for label, ap in sorted(means.items(), key=lambda kv: -kv[1]):
        print(f"{label:12s}  {ap:6.2f}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck(args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_eval(args) -> int:
    teacher, student, cfg_dict = _load_params(args.params)
    bench_dict = cfg_dict.pop("bench")
    bench_dict["pairs"] = [tuple(p) for p in bench_dict["pairs"]]
    cfg = ExperimentConfig(**cfg_dict, bench=BenchConfig(**bench_dict))
    scenes = load_scenes(args.data)
    test = scenes[cfg.bench.n_scenes:cfg.bench.n_scenes + cfg.bench.n_test_scenes]
    det = teacher if cfg.eval_teacher else student
    ap = evaluate_ap(det, test, cfg.bench)
    print(f"AP@0.5: {ap:.2f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vclearn",
                                     description="virtual-category learning on a synthetic detection benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="benchmark dataset commands")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)
    p_gen = bench_sub.add_parser("gen", help="generate the synthetic dataset")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(fn=_cmd_bench_gen)

    p_train = sub.add_parser("train", help="run one training")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(fn=_cmd_train)

    p_cmp = sub.add_parser("compare", help="strategy ablation over seeds")
    p_cmp.add_argument("--config", default=None)
    p_cmp.add_argument("--data", required=True)
    p_cmp.add_argument("--seeds", type=int, default=5)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--reg-star", action="store_true", dest="reg_star",
                       help="also run vc with the gated localisation loss")
    p_cmp.add_argument("--cross", action="store_true",
                       help="also run vc with cross-model PC discovery")
    p_cmp.add_argument("--quiet", action="store_true")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(fn=_cmd_gradcheck)

    p_eval = sub.add_parser("eval", help="evaluate saved parameters")
    p_eval.add_argument("--params", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(fn=_cmd_eval)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
