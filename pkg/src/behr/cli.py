"""Command-line entry point.

Subcommands:

    gen-specs      write seeded toy task specs
    evaluate       run Real/WM/W2R over a task suite and emit metric reports
    perturb-study  run the seven-kind perturbation study
    reward-batch   score candidate groups from JSONL, with call accounting
    build-dataset  construct difficulty-filtered training records

Configuration is one declarative JSON file plus flag overrides; flags win.
Unknown config keys are rejected. Identical config and seeds produce
byte-identical primary outputs; timestamps appear only in the sidecar
run.log. Exit codes: 0 success, 1 configuration error, 2 partial run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from behr.agents import ScriptedAdventureAgent, ScriptedShopAgent
from behr.core import Domain, dump_jsonl, load_jsonl, Observation, TransitionTuple
from behr.envsim import (
    Corruption,
    CorruptionKind,
    corrupted_wm,
    generate_adventure_specs,
    generate_shop_specs,
    oracle_wm,
    write_specs,
)
from behr.envsim.worldmodel import RemoteWorldModel
from behr.metrics import (
    UndefinedCRError,
    consistency_ratio,
    pairwise_cr,
    report_to_json,
    rows_to_csv,
    sign_test,
    wilson_ci,
)
from behr.perturb import make_study_corpus, run_perturbation_study
from behr.pipelines import (
    CountingWM,
    DatasetConfig,
    LookaheadConfig,
    RunConfig,
    TaskSuite,
    build_grpo_dataset,
    collect_trajectory,
    run_lookahead_episode,
    run_real,
    run_suite,
)
from behr.reward import (
    DEFAULT_EPSILON,
    RewardBatchError,
    RewardMode,
    reward_records,
    score_candidates,
)
from behr.scorer import RealStateCache, RemoteLogprobClient, ScriptedScorer, scripted_scorer_for

logger = logging.getLogger("behr.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


class ConfigError(ValueError):
    pass


def _check_keys(data: dict[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")


@dataclass
class ScorerConfig:
    kind: str = "scripted"  # scripted | remote
    endpoint: str | None = None
    model: str | None = None
    style: str = "echo"
    api_key_env: str = "SCORER_API_KEY"
    parallelism: int = 1
    retries: int = 3
    p_hit: float = 0.8
    epsilon_floor: float = 1e-6
    position_weight: float = 0.05

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScorerConfig":
        _check_keys(data, {f.name for f in dataclasses.fields(cls)}, "scorer")
        cfg = cls(**data)
        if cfg.kind not in ("scripted", "remote"):
            raise ConfigError(f"scorer.kind must be scripted or remote, got {cfg.kind!r}")
        if cfg.kind == "remote" and not (cfg.endpoint and cfg.model):
            raise ConfigError("remote scorer needs endpoint and model")
        return cfg


@dataclass
class RewardConfig:
    mode: str = "exponential"
    coef: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RewardConfig":
        _check_keys(data, {f.name for f in dataclasses.fields(cls)}, "reward")
        cfg = cls(**data)
        try:
            RewardMode.parse(cfg.mode, cfg.coef)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg


@dataclass
class DatasetSection:
    f1_threshold: float = 0.35
    budget: int = 0
    trajectories_file: str | None = None
    drift_start: int = 2
    drift_noise: float = 0.5

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetSection":
        _check_keys(data, {f.name for f in dataclasses.fields(cls)}, "dataset")
        return cls(**data)


@dataclass
class HarnessConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    domain: str = "shop"  # shop | adventure | both
    tasks: int = 20
    max_steps: int = 50
    agents: dict[str, list[str]] = field(
        default_factory=lambda: {"shop": ["careful", "greedy"], "adventure": ["plan"]}
    )
    wm: list[str] = field(default_factory=lambda: ["oracle"])
    corruption_rate: float = 1.0
    wm_endpoint: str | None = None
    wm_model: str | None = None
    lookahead_enabled: bool = False
    lookahead_k: int = 5
    perturb_pages: int = 100
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HarnessConfig":
        _check_keys(data, {f.name for f in dataclasses.fields(cls)}, "config")
        data = dict(data)
        scorer = ScorerConfig.from_dict(data.pop("scorer", {}))
        reward = RewardConfig.from_dict(data.pop("reward", {}))
        dataset = DatasetSection.from_dict(data.pop("dataset", {}))
        cfg = cls(**data, scorer=scorer, reward=reward, dataset=dataset)
        if cfg.domain not in ("shop", "adventure", "both"):
            raise ConfigError(f"domain must be shop, adventure, or both, got {cfg.domain!r}")
        if cfg.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        for condition in cfg.wm:
            _parse_wm_condition(condition)  # validates
        return cfg

    @classmethod
    def load(cls, path: str | None) -> "HarnessConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def domains(self) -> list[Domain]:
        if self.domain == "both":
            return [Domain.SHOP, Domain.ADVENTURE]
        return [Domain(self.domain)]


def _parse_wm_condition(condition: str) -> tuple[str, str | None]:
    if condition == "oracle" or condition == "remote":
        return condition, None
    if condition.startswith("corrupted:"):
        kind = condition.split(":", 1)[1]
        try:
            CorruptionKind(kind)
        except ValueError as exc:
            raise ConfigError(f"unknown corruption kind {kind!r}") from exc
        return "corrupted", kind
    raise ConfigError(f"unknown wm condition {condition!r}; use oracle, corrupted:<kind>, or remote")


def _make_suite(cfg: HarnessConfig, domain: Domain) -> TaskSuite:
    if domain is Domain.SHOP:
        specs = generate_shop_specs(cfg.tasks, cfg.seed)
    else:
        specs = generate_adventure_specs(cfg.tasks, cfg.seed)
    return TaskSuite.from_specs(specs, domain, max_steps=cfg.max_steps)


def _make_agents(cfg: HarnessConfig, domain: Domain, suite: TaskSuite) -> list[Any]:
    names = cfg.agents.get(domain.value, [])
    agents: list[Any] = []
    for name in names:
        if domain is Domain.SHOP and name == "careful":
            agents.append(ScriptedShopAgent(careful=True))
        elif domain is Domain.SHOP and name == "greedy":
            agents.append(ScriptedShopAgent(careful=False))
        elif domain is Domain.ADVENTURE and name == "plan":
            walkthroughs = {tid: spec.walkthrough for tid, spec in suite.specs.items()}
            agents.append(ScriptedAdventureAgent(walkthroughs=walkthroughs))
        else:
            raise ConfigError(f"unknown agent {name!r} for domain {domain.value}")
    if not agents:
        raise ConfigError(f"no agents configured for domain {domain.value}")
    return agents


def _make_wm(cfg: HarnessConfig, condition: str, suite: TaskSuite):
    kind, corruption_kind = _parse_wm_condition(condition)
    if kind == "oracle":
        return oracle_wm(suite.factory())
    if kind == "corrupted":
        corruption = Corruption(
            kind=CorruptionKind(corruption_kind),
            rate=cfg.corruption_rate,
            seed=cfg.seed,
        )
        return corrupted_wm(suite.factory(), corruption)
    if not (cfg.wm_endpoint and cfg.wm_model):
        raise ConfigError("wm condition 'remote' needs wm_endpoint and wm_model in the config")
    return RemoteWorldModel(endpoint=cfg.wm_endpoint, model=cfg.wm_model)


def _make_scorer(cfg: HarnessConfig, domain: Domain):
    if cfg.scorer.kind == "scripted":
        return scripted_scorer_for(
            domain,
            p_hit=cfg.scorer.p_hit,
            epsilon_floor=cfg.scorer.epsilon_floor,
            position_weight=cfg.scorer.position_weight,
        )
    return RemoteLogprobClient(
        endpoint=cfg.scorer.endpoint or "",
        model=cfg.scorer.model or "",
        style=cfg.scorer.style,
        api_key_env=cfg.scorer.api_key_env,
        retries=cfg.scorer.retries,
    )


def _setup_run_dir(out_dir: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)
    return out


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen_specs(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.n < 0:
        raise ConfigError("n must be >= 0")
    if args.n == 0:
        out.mkdir(parents=True, exist_ok=True)
        return EXIT_OK
    domain = Domain(args.domain)
    if domain is Domain.SHOP:
        specs = generate_shop_specs(args.n, args.seed)
    else:
        specs = generate_adventure_specs(args.n, args.seed)
    paths = write_specs(specs, out)
    print(f"wrote {len(paths)} {domain.value} specs to {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config_with_overrides(args)
    out = _setup_run_dir(cfg.out_dir)
    logger.info("evaluate: domains=%s wm=%s tasks=%d seed=%d", cfg.domain, cfg.wm, cfg.tasks, cfg.seed)

    partial = False
    report_rows: list[dict[str, Any]] = []
    outcome_tables: list[dict[str, Any]] = []
    episodes_dir = out / "episodes"
    episodes_dir.mkdir(exist_ok=True)
    cr_pw_by_condition: dict[str, dict[tuple[str, str], float | None]] = {}

    for domain in cfg.domains():
        if cfg.tasks == 0:
            logger.warning("empty task set for domain %s", domain.value)
            continue
        suite = _make_suite(cfg, domain)
        agents = _make_agents(cfg, domain, suite)
        for condition in cfg.wm:
            wm = _make_wm(cfg, condition, suite)
            for agent in agents:
                outcomes = run_suite(agent, suite, wm)
                name = outcomes.agent_name
                stem = f"{domain.value}__{name}__{condition.replace(':', '-')}"
                dump_jsonl(
                    (
                        rec.to_dict()
                        for records in (outcomes.real, outcomes.wm, outcomes.w2r)
                        for _, rec in sorted(records.items())
                    ),
                    episodes_dir / f"{stem}.jsonl",
                )
                table = outcomes.real_vs_w2r()
                pw = pairwise_cr(table)
                sr_real, sr_wm, sr_w2r = outcomes.sr("real"), outcomes.sr("wm"), outcomes.sr("w2r")
                try:
                    cr = consistency_ratio(sr_w2r, sr_real)
                except UndefinedCRError:
                    cr = None
                    partial = True
                from behr.metrics import agreement as _agreement

                agree = _agreement(outcomes.wm_vs_real())
                row: dict[str, Any] = {
                    "domain": domain.value,
                    "agent": name,
                    "wm": condition,
                    "sr_real": sr_real,
                    "sr_wm": sr_wm,
                    "sr_w2r": sr_w2r,
                    "cr": cr,
                    "cr_pw": pw.value,
                    "n_real": pw.n_real,
                    "preserved": pw.preserved,
                    "cr_pw_ci_lo": None,
                    "cr_pw_ci_hi": None,
                    "tp": agree.tp,
                    "tn": agree.tn,
                    "fp": agree.fp,
                    "fn": agree.fn,
                    "agree_rate": agree.agree_rate,
                    "extra": {},  # reserved for externally supplied metrics
                }
                if pw.n_real > 0:
                    lo, hi = wilson_ci(pw.preserved, pw.n_real, 0.95)
                    row["cr_pw_ci_lo"], row["cr_pw_ci_hi"] = lo, hi
                report_rows.append(row)
                outcome_tables.append(
                    {"domain": domain.value, "agent": name, "wm": condition, "real_vs_w2r": table.to_dict()}
                )
                cr_pw_by_condition.setdefault(condition, {})[(domain.value, name)] = pw.value

    report: dict[str, Any] = {"rows": report_rows}
    if len(cfg.wm) >= 2:
        base, other = cfg.wm[0], cfg.wm[1]
        wins = losses = ties = 0
        for key, value in cr_pw_by_condition.get(other, {}).items():
            base_value = cr_pw_by_condition.get(base, {}).get(key)
            if value is None or base_value is None:
                continue
            if value > base_value:
                wins += 1
            elif value < base_value:
                losses += 1
            else:
                ties += 1
        comparison: dict[str, Any] = {
            "conditions": [base, other],
            "wins": wins,
            "losses": losses,
            "ties": ties,
        }
        comparison["p_value"] = sign_test(wins, losses) if wins + losses >= 1 else None
        report["sign_test"] = comparison

    _write_text(out / "report.json", report_to_json(report))
    flat_rows = [{k: v for k, v in r.items() if k != "extra"} for r in report_rows]
    _write_text(out / "report.csv", rows_to_csv(flat_rows))
    _write_text(out / "report.md", _report_markdown(report))
    _write_text(out / "outcomes.json", report_to_json({"tables": outcome_tables}))

    if cfg.lookahead_enabled and Domain.SHOP in cfg.domains():
        _write_text(out / "lookahead.json", report_to_json(_lookahead_section(cfg)))

    if not report_rows:
        logger.warning("empty report")
    print(f"report written to {out / 'report.json'}")
    return EXIT_PARTIAL if partial else EXIT_OK


def _report_markdown(report: dict[str, Any]) -> str:
    lines = [
        "| Domain | Agent | WM | Real | WM SR | W2R | CR | CR_pw | 95% CI | FP |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in report["rows"]:
        cr = f"{r['cr']:.3f}" if r["cr"] is not None else "undef"
        pw = f"{r['cr_pw']:.3f}" if r["cr_pw"] is not None else "empty"
        ci = (
            f"[{r['cr_pw_ci_lo']:.3f}, {r['cr_pw_ci_hi']:.3f}]"
            if r["cr_pw_ci_lo"] is not None
            else "-"
        )
        lines.append(
            f"| {r['domain']} | {r['agent']} | {r['wm']} | {r['sr_real']:.1%} | {r['sr_wm']:.1%} "
            f"| {r['sr_w2r']:.1%} | {cr} | {pw} | {ci} | {r['fp']} |"
        )
    if "sign_test" in report:
        s = report["sign_test"]
        lines.append("")
        lines.append(
            f"Sign test {s['conditions'][1]} vs {s['conditions'][0]}: "
            f"{s['wins']} wins / {s['losses']} losses / {s['ties']} ties, p={s['p_value']}"
        )
    return "\n".join(lines) + "\n"


def _lookahead_section(cfg: HarnessConfig) -> dict[str, Any]:
    suite = _make_suite(cfg, Domain.SHOP)
    planner = ScriptedShopAgent(careful=False)
    base_cfg = RunConfig(max_steps=cfg.max_steps)
    base_successes = 0
    for task_id in suite.task_ids:
        base_successes += run_real(planner, suite.env_for(task_id), base_cfg, task_id).success
    wm = CountingWM(oracle_wm(suite.factory()))
    lookahead = LookaheadConfig(planner=planner, wm=wm, k=cfg.lookahead_k)
    successes = 0
    for task_id in suite.task_ids:
        record = run_lookahead_episode(suite.env_for(task_id), Domain.SHOP, base_cfg, lookahead, task_id)
        successes += record.success
    n = len(suite.task_ids)
    return {
        "k": cfg.lookahead_k,
        "tasks": n,
        "sr_base": base_successes / n,
        "sr_lookahead": successes / n,
        "wm_calls": wm.calls,
        "planner_fallbacks": lookahead.stats.fallbacks,
        "lookahead_steps": lookahead.stats.steps,
    }


def cmd_perturb_study(args: argparse.Namespace) -> int:
    cfg = _load_config_with_overrides(args)
    out = _setup_run_dir(cfg.out_dir)
    corpus = make_study_corpus(cfg.perturb_pages, seed=cfg.seed)
    backend = _make_scorer(cfg, Domain.SHOP)
    mode = RewardMode.parse(cfg.reward.mode, cfg.reward.coef)
    report = run_perturbation_study(corpus, backend, mode=mode, base_seed=cfg.seed)
    _write_text(out / "study.md", report.to_markdown())
    _write_text(out / "study.csv", report.to_csv())
    _write_text(out / "study.json", report_to_json(report.to_dict()))
    print(report.to_markdown())
    return EXIT_OK


def cmd_reward_batch(args: argparse.Namespace) -> int:
    cfg = _load_config_with_overrides(args)
    out = _setup_run_dir(cfg.out_dir)
    mode = RewardMode.parse(cfg.reward.mode, cfg.reward.coef)

    tuples: dict[str, TransitionTuple] = {}
    for i, line in enumerate(load_jsonl(args.tuples), start=1):
        try:
            prompt_id = line["prompt_id"]
            tuples[prompt_id] = TransitionTuple.from_dict(line)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{args.tuples}: bad tuple on line {i}: {exc}") from exc

    groups: list[tuple[str, list[Observation]]] = []
    for i, line in enumerate(load_jsonl(args.candidates), start=1):
        try:
            prompt_id = line["prompt_id"]
            candidates = [Observation(text=t) for t in line["candidates"]]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{args.candidates}: bad candidate group on line {i}: {exc}") from exc
        if prompt_id not in tuples:
            raise ConfigError(f"{args.candidates}: line {i} references unknown prompt_id {prompt_id!r}")
        groups.append((prompt_id, candidates))

    domain = tuples[groups[0][0]].domain_tag if groups else Domain.SHOP
    backend = _make_scorer(cfg, domain)
    cache = RealStateCache()
    partial = False
    records: list[dict[str, Any]] = []
    for prompt_id, candidates in groups:
        try:
            batch = score_candidates(
                tuples[prompt_id],
                candidates,
                backend,
                mode,
                cache=cache,
                prompt_id=prompt_id,
                parallelism=cfg.scorer.parallelism,
            )
        except RewardBatchError:
            logger.warning("group %s failed entirely", prompt_id, exc_info=True)
            partial = True
            continue
        if len(batch.scores) < len(candidates):
            partial = True
        if len(batch.scores) < 2:
            logger.warning("group %s reduced below 2 candidates; skipped", prompt_id)
            partial = True
            continue
        records.extend(reward_records(batch.with_advantages(cfg.reward.epsilon), mode))

    dump_jsonl(records, out / "rewards.jsonl")
    n_candidates = sum(len(c) for _, c in groups)
    summary = {
        "prompts": len(groups),
        "candidates": n_candidates,
        "backend_calls": getattr(backend, "calls", None),
        "uncached_call_cost": 2 * n_candidates,
        "cached_call_cost": n_candidates + len(groups),
        "records": len(records),
        "mode": mode.kind.value,
        "coef": mode.coef,
    }
    _write_text(out / "summary.json", report_to_json(summary))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_build_dataset(args: argparse.Namespace) -> int:
    cfg = _load_config_with_overrides(args)
    out = _setup_run_dir(cfg.out_dir)
    domain = Domain(cfg.domain) if cfg.domain != "both" else Domain.SHOP

    if cfg.dataset.trajectories_file:
        from behr.core import read_trajectories

        trajectories = read_trajectories(cfg.dataset.trajectories_file)
    else:
        suite = _make_suite(cfg, domain)
        agent = _make_agents(cfg, domain, suite)[0]
        run_cfg = RunConfig(max_steps=cfg.max_steps)
        trajectories = [
            collect_trajectory(agent, suite.env_for(tid), run_cfg, tid) for tid in suite.task_ids
        ]

    suite = _make_suite(cfg, domain)
    baseline = corrupted_wm(
        suite.factory(),
        Corruption(
            kind=CorruptionKind.DRIFT_AFTER_STEP_K,
            rate=1.0,
            seed=cfg.seed,
            drift_start=cfg.dataset.drift_start,
            drift_noise=cfg.dataset.drift_noise,
        ),
    )
    records = build_grpo_dataset(
        trajectories,
        DatasetConfig(
            domain=domain,
            baseline_wm=baseline,
            f1_threshold=cfg.dataset.f1_threshold,
            budget=cfg.dataset.budget,
            seed=cfg.seed,
        ),
    )
    dump_jsonl(records, out / "dataset.jsonl")
    summary = {
        "domain": domain.value,
        "trajectories": len(trajectories),
        "records": len(records),
        "f1_threshold": cfg.dataset.f1_threshold,
        "budget": cfg.dataset.budget,
    }
    _write_text(out / "summary.json", report_to_json(summary))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def _load_config_with_overrides(args: argparse.Namespace) -> HarnessConfig:
    cfg = HarnessConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tasks", None) is not None:
        cfg.tasks = args.tasks
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "wm", None):
        for condition in args.wm:
            _parse_wm_condition(condition)
        cfg.wm = list(args.wm)
    if getattr(args, "scorer", None) is not None:
        if args.scorer not in ("scripted", "remote"):
            raise ConfigError("--scorer must be scripted or remote")
        cfg.scorer.kind = args.scorer
        if args.scorer == "remote" and not (cfg.scorer.endpoint and cfg.scorer.model):
            raise ConfigError("remote scorer needs endpoint and model in the config file")
    if getattr(args, "mode", None) is not None:
        cfg.reward.mode = args.mode
    if getattr(args, "coef", None) is not None:
        cfg.reward.coef = args.coef
    if getattr(args, "k", None) is not None:
        cfg.lookahead_k = args.k
        cfg.lookahead_enabled = True
    if getattr(args, "domain", None) is not None:
        cfg.domain = args.domain
    RewardMode.parse(cfg.reward.mode, cfg.reward.coef)  # validate final state
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--tasks", type=int, help="tasks per domain override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--mode", help="reward mode override")
    parser.add_argument("--coef", type=float, help="reward scale coefficient override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="behr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-specs", help="write seeded toy task specs")
    p.add_argument("--domain", choices=["shop", "adventure"], required=True)
    p.add_argument("-n", type=int, required=True, help="number of specs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_specs)

    p = sub.add_parser("evaluate", help="run Real/WM/W2R and emit reports")
    _add_common(p)
    p.add_argument("--domain", choices=["shop", "adventure", "both"])
    p.add_argument("--wm", nargs="+", help="wm conditions: oracle | corrupted:<kind> | remote")
    p.add_argument("--scorer", choices=["scripted", "remote"])
    p.add_argument("--k", type=int, help="enable the lookahead section with this k")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("perturb-study", help="run the perturbation study")
    _add_common(p)
    p.add_argument("--scorer", choices=["scripted", "remote"])
    p.set_defaults(func=cmd_perturb_study)

    p = sub.add_parser("reward-batch", help="score candidate groups from JSONL")
    _add_common(p)
    p.add_argument("--tuples", required=True, help="transition tuples JSONL")
    p.add_argument("--candidates", required=True, help="candidate groups JSONL")
    p.add_argument("--scorer", choices=["scripted", "remote"])
    p.set_defaults(func=cmd_reward_batch)

    p = sub.add_parser("build-dataset", help="construct training records")
    _add_common(p)
    p.add_argument("--domain", choices=["shop", "adventure"])
    p.set_defaults(func=cmd_build_dataset)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
