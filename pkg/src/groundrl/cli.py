"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 invalid input data,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from groundrl import selftest
from groundrl.config import Config, ConfigError, load_config
from groundrl.files import (
    DataError,
    dumps,
    prompt_to_dict,
    read_completions,
    read_prompts,
    reward_record,
    write_jsonl,
)
from groundrl.grpo import CandidateEnvironment, train
from groundrl.matching import match_instances
from groundrl.metrics import evaluate
from groundrl.modulation import ScoredGroup, adjusted_rewards, compute_adjustments
from groundrl.rewards import score_completion
from groundrl.synthetic import build_toy_task, generate_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("groundrl")


class InvariantViolation(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args, **overrides) -> Config:
    cfg = load_config(args.config)
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg


def _check_reward(rv, where: str) -> None:
    parts = (rv.r_format, rv.r_image, rv.r_precision, rv.r_recall)
    if any(not 0.0 <= x <= 1.0 for x in parts):
        raise InvariantViolation(f"{where}: reward component out of [0, 1]: {parts}")
    if rv.r_total != rv.r_format + rv.r_image + rv.r_precision + rv.r_recall:
        raise InvariantViolation(f"{where}: r_total is not the component sum")


def cmd_gen(args) -> int:
    cfg = _config(args, seed=args.seed)
    corpus = generate_corpus(cfg.generator_config(), args.prompts, args.quality, cfg.tags())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "prompts.jsonl", (prompt_to_dict(r.prompt) for r in corpus))
    write_jsonl(
        out / "completions.jsonl",
        (
            {
                "prompt_id": r.prompt.id,
                "completions": list(r.completions),
                "modes": list(r.modes),
                "qualities": list(r.qualities),
            }
            for r in corpus
        ),
    )
    print(f"wrote {len(corpus)} prompts to {out}")
    return EXIT_OK


def _score_all(cfg: Config, prompts, records):
    scored = []
    for rec in records:
        prompt = prompts[rec.prompt_id]
        group = []
        for k, text in enumerate(rec.completions):
            parsed, rv = score_completion(
                text, prompt, cfg.reward_config(), cfg.tags(), cfg.cot_token_threshold, cfg.coords
            )
            _check_reward(rv, f"{rec.prompt_id}[{k}]")
            group.append((parsed, rv))
        scored.append(ScoredGroup(group))
    return scored


def cmd_score(args) -> int:
    cfg = _config(args, tau=args.tau, precision_mode=args.precision_mode, coords=args.coords)
    prompts = read_prompts(args.prompts)
    records = read_completions(args.completions, prompts)
    batch = _score_all(cfg, prompts, records)
    adjustments = compute_adjustments(batch, cfg.modulation_config(args.stage))
    rows = []
    for rec, group, adj in zip(records, batch, adjustments):
        adjusted = adjusted_rewards(group.naive_rewards, adj)
        for k, ((parsed, rv), a, r_adj) in enumerate(zip(group.completions, adj, adjusted)):
            rows.append(reward_record(rec.prompt_id, k, parsed, rv, a, r_adj))
    n = write_jsonl(args.out, rows)
    print(f"scored {n} completions -> {args.out}")
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = _config(args, coords=args.coords)
    prompts = read_prompts(args.prompts)
    records = read_completions(args.completions, prompts)
    for rec in records:
        if args.prompt_id and rec.prompt_id != args.prompt_id:
            continue
        prompt = prompts[rec.prompt_id]
        for k, text in enumerate(rec.completions):
            if args.index is not None and k != args.index:
                continue
            parsed, _ = score_completion(
                text, prompt, cfg.reward_config(), cfg.tags(), cfg.cot_token_threshold, cfg.coords
            )
            m = match_instances(parsed.instances, prompt.ground_truth)
            print(f"{rec.prompt_id} completion {k} (format_ok={parsed.format_ok})")
            print(f"  {'pred':>4}  {'gt':>4}  {'image':>5}  {'iou':>8}")
            for pi, gi, v in m.pairs:
                image = parsed.instances[pi].image_index
                print(f"  {pi:>4}  {gi:>4}  {image:>5}  {v:8.4f}")
            print(f"  unmatched preds: {list(m.unmatched_preds)}  unmatched gts: {list(m.unmatched_gts)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    prompts = read_prompts(args.prompts)
    records = read_completions(args.completions, prompts)
    samples = []
    for rec in records:
        prompt = prompts[rec.prompt_id]
        for text in rec.completions:
            parsed, _ = score_completion(
                text, prompt, cfg.reward_config(), cfg.tags(), cfg.cot_token_threshold, cfg.coords
            )
            samples.append((parsed, prompt.ground_truth))
    report = evaluate(samples, args.metric)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    print(f"{'metric':<10} {'samples':>8} {'score':>8} {'fmt_fail':>9} {'skipped':>8}")
    print(
        f"{report.metric:<10} {len(report.scores):>8} {report.aggregate:>8.4f} "
        f"{report.format_failures:>9} {report.skipped:>8}"
    )
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = _config(args, steps=args.steps, seed=args.seed, toy_prompts=args.prompts)
    task = build_toy_task(cfg.generator_config(), cfg.toy_prompts, tags=cfg.tags())
    env = CandidateEnvironment(
        task.prompts, task.candidates, cfg.reward_config(), cfg.tags(), cfg.cot_token_threshold
    )
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        callback = (lambda r: out.write(dumps(r.to_dict()) + "\n")) if out else None
        result = train(
            env, cfg.grpo_config(), cfg.modulation_config(), hybrid=cfg.hybrid, callback=callback
        )
    finally:
        if out:
            out.close()
    start = env.expected_reward(result.initial)
    end = env.expected_reward(result.policy)
    best = np.mean([result.policy.probs(pid)[task.best[pid]] > 0.9 for pid in env.prompt_ids])
    print(f"steps={cfg.steps} prompts={cfg.toy_prompts} K={cfg.candidates} N={cfg.group_size}")
    print(f"expected reward: {start:.4f} -> {end:.4f} (max 4.0)")
    print(f"prompts with P(best) > 0.9: {best:.1%}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run_all(seed=args.seed)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="groundrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.set_defaults(func=func)
        return p

    def add_inputs(p):
        p.add_argument("--prompts", required=True, help="prompts.jsonl")
        p.add_argument("--completions", required=True, help="completions.jsonl")
        p.add_argument("--coords", choices=["pixel", "norm1000"])

    p = add("gen", cmd_gen, "write a synthetic prompt/completion corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prompts", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--quality", type=float, help="fixed completion quality in [0, 1]")

    p = add("score", cmd_score, "score completions into rewards.jsonl")
    add_inputs(p)
    p.add_argument("--out", required=True, help="rewards.jsonl")
    p.add_argument("--stage", choices=["none", "early", "late"], default="none")
    p.add_argument("--precision-mode", choices=["strict", "paper-literal"])
    p.add_argument("--tau", type=float)

    p = add("match", cmd_match, "print prediction/ground-truth pair tables")
    add_inputs(p)
    p.add_argument("--prompt-id")
    p.add_argument("--index", type=int)

    p = add("eval", cmd_eval, "benchmark metrics over a corpus")
    add_inputs(p)
    p.add_argument("--metric", choices=["acc@0.5", "ap50"], default="ap50")
    p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = add("train-toy", cmd_train_toy, "run GRPO on a synthetic candidate-set task")
    p.add_argument("--out", help="metrics.jsonl step reports")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--prompts", type=int)

    p = add("selftest", cmd_selftest, "run the matching and gradient oracles")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"groundrl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"groundrl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"groundrl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"groundrl: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
