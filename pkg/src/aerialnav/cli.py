"""Command-line entry point.

Exit codes: 0 success, 2 episode failure (collision, timeout, lost policy),
3 configuration error.  Flag defaults can be set through ``AERIALNAV_*``
environment variables; explicit flags win over both.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .datagen import compute_metrics, generate_scenarios, record_episode
from .episode import EpisodeLog
from .errors import ConnectionLost, GenerationInfeasible, NavError, ParseError, ValidationError, WriteError
from .executor import ExecutorConfig, run_episode
from .plot import plot_episode
from .policy import LatencyModel, OraclePolicy, ScriptedPolicy
from .scenario import load_scenario_file
from .scenarios import TEMPLATES, template

log = logging.getLogger("aerialnav")

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_CONFIG = 3
ENV_PREFIX = "AERIALNAV_"
SUITE_COLUMNS = ("category", "episodes", "success_rate", "mean_path_m", "mean_clearance_m")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _env_number(name, kind, default):
    raw = _env(name)
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{name}={raw!r} is not a valid {kind.__name__}") from None


# ---------------------------------------------------------------------------
# shared run configuration

@dataclass(frozen=True)
class RunConfig:
    policy: str = "oracle"
    seed: int | None = None
    control_rate: float = 30.0
    policy_rate: float = 2.5
    seconds_per_token: float = 0.02
    output_tokens: int = 20
    prefill: float = 0.0
    policy_timeout: float = 2.0
    wall_clock: bool = False

    def validate(self) -> "RunConfig":
        if not (self.policy in ("oracle", "scripted") or self.policy.startswith("remote:")):
            raise ConfigError(f"unknown policy selector {self.policy!r}")
        if not (self.control_rate > 0 and self.policy_rate > 0):
            raise ConfigError("rates must be > 0")
        if self.seconds_per_token < 0 or self.output_tokens < 0 or self.prefill < 0:
            raise ConfigError("latency inputs must be >= 0")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def executor(self, record_depth: bool = True) -> ExecutorConfig:
        return ExecutorConfig(control_rate=self.control_rate, policy_rate=self.policy_rate,
                              latency=LatencyModel(self.seconds_per_token, self.output_tokens, self.prefill),
                              record_depth=record_depth, wall_clock=self.wall_clock)


def _add_run_flags(p):
    p.add_argument("--policy", default=_env("POLICY", "oracle"),
                   help="oracle | scripted | remote:HOST:PORT")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--control-rate", type=float, default=None)
    p.add_argument("--policy-rate", type=float, default=None)
    p.add_argument("--seconds-per-token", type=float, default=None)
    p.add_argument("--output-tokens", type=int, default=None)
    p.add_argument("--prefill", type=float, default=None)
    p.add_argument("--policy-timeout", type=float, default=None)
    p.add_argument("--wall-clock", action="store_true", help="pace the loop in real time")


def _run_config(args) -> RunConfig:
    def pick(flag, env_name, kind, default):
        return flag if flag is not None else _env_number(env_name, kind, default)

    seed = args.seed if args.seed is not None else _env_number("SEED", int, None)
    return RunConfig(
        policy=args.policy,
        seed=seed,
        control_rate=pick(args.control_rate, "CONTROL_RATE", float, 30.0),
        policy_rate=pick(args.policy_rate, "POLICY_RATE", float, 2.5),
        seconds_per_token=pick(args.seconds_per_token, "SECONDS_PER_TOKEN", float, 0.02),
        output_tokens=pick(args.output_tokens, "OUTPUT_TOKENS", int, 20),
        prefill=pick(args.prefill, "PREFILL", float, 0.0),
        policy_timeout=pick(args.policy_timeout, "POLICY_TIMEOUT", float, 2.0),
        wall_clock=args.wall_clock or _env("WALL_CLOCK", "0") == "1",
    ).validate()


def _make_policy(cfg: RunConfig, scenario):
    if cfg.policy == "oracle":
        return OraclePolicy(scenario), None
    if cfg.policy == "scripted":
        return ScriptedPolicy(scenario.goals), None
    from .protocol import PolicyConnection, RemotePolicy

    target = cfg.policy[len("remote:"):]
    host, _, port = target.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"remote policy must look like remote:HOST:PORT, got {cfg.policy!r}")
    conn = PolicyConnection.connect(host, int(port))
    return RemotePolicy(conn, cfg.policy_timeout), conn


def _load(path, seed=None):
    try:
        sc = load_scenario_file(path)
    except FileNotFoundError:
        raise ConfigError(f"scenario not found: {path}") from None
    except (ParseError, ValidationError, OSError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return sc.with_seed(seed) if seed is not None else sc


def _episode(scenario, cfg: RunConfig, record_depth: bool = False) -> EpisodeLog:
    policy, conn = None, None
    try:
        policy, conn = _make_policy(cfg, scenario)
        return run_episode(scenario, policy, cfg.executor(record_depth))
    except ConnectionLost as exc:
        out = EpisodeLog(scenario.name, scenario.seed, cfg.control_rate, cfg.policy_rate)
        out.outcome = "PolicyLost"
        out.events.append({"time": 0.0, "type": "policy_lost", "detail": str(exc)})
        return out
    finally:
        if conn is not None:
            conn.close()


def _fmt_metric(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}" if math.isfinite(v) else "inf"
    return str(v)


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args) -> int:
    cfg = _run_config(args)
    sc = _load(args.scenario, cfg.seed)
    out_dir = Path(args.out or _env("OUT", "."))
    episode = _episode(sc, cfg, record_depth=args.record)
    metrics = compute_metrics(episode, sc)
    print(f"scenario: {sc.name}  seed: {sc.seed}")
    print(f"outcome: {episode.outcome}  duration: {episode.duration:.3f} s")
    for key, value in metrics.to_dict().items():
        print(f"  {key}: {_fmt_metric(value)}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "episode.json").write_text(episode.to_json() + "\n", encoding="utf-8")
        if args.record and episode.frames:
            record_episode(episode, out_dir / "dataset", sc)
    except (OSError, WriteError) as exc:
        raise ConfigError(f"cannot write to {out_dir}: {exc}") from None
    return EXIT_OK if episode.outcome == "Success" else EXIT_FAILED


def _suite_jobs(manifest_path: Path):
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{manifest_path}: {exc}") from None
    entries = doc.get("episodes", []) if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise ConfigError("manifest must list episodes")
    base = manifest_path.parent
    jobs = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "category" not in entry:
            raise ConfigError(f"manifest entry {i} needs a category")
        cat = str(entry["category"])
        if "scenario" in entry:
            jobs.append((cat, str(base / entry["scenario"]), None))
        elif "template" in entry:
            name = entry["template"]
            count = int(entry.get("count", 1))
            seed = int(entry.get("seed", 0))
            try:
                tpl = template(name) if name in TEMPLATES else load_scenario_file(base / name)
                for sc in generate_scenarios(tpl, count, seed):
                    jobs.append((cat, None, sc))
            except (OSError, NavError, KeyError) as exc:
                log.warning("manifest entry %d: %s", i, exc)
                jobs.append(("Error", None, None))
        else:
            raise ConfigError(f"manifest entry {i} needs 'scenario' or 'template'")
    return jobs


def _suite_job(job):
    category, path, scenario, cfg = job
    try:
        sc = scenario if scenario is not None else _load(path, cfg.seed)
    except ConfigError as exc:
        return "Error", None, str(exc)
    if sc is None:
        return "Error", None, "unreadable scenario"
    episode = _episode(sc, cfg)
    return category, compute_metrics(episode, sc), sc.name


def summarize(results) -> list[dict]:
    """Per-category rows in first-seen order."""
    rows = {}
    for category, metrics, _ in results:
        row = rows.setdefault(category, {"n": 0, "ok": 0, "paths": [], "clear": []})
        row["n"] += 1
        if metrics is None:
            continue
        row["ok"] += int(metrics.success)
        row["paths"].append(metrics.path_length)
        if math.isfinite(metrics.min_clearance):
            row["clear"].append(metrics.min_clearance)
    out = []
    for category, row in rows.items():
        mean = lambda xs: sum(xs) / len(xs) if xs else float("nan")  # noqa: E731
        out.append({"category": category, "episodes": row["n"], "success_rate": 100.0 * row["ok"] / row["n"],
                    "mean_path_m": mean(row["paths"]), "mean_clearance_m": mean(row["clear"])})
    return out


def cmd_suite(args) -> int:
    cfg = _run_config(args)
    jobs = [(*j, cfg) for j in _suite_jobs(Path(args.manifest))]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_suite_job, jobs))
    else:
        results = [_suite_job(j) for j in jobs]
    for category, metrics, detail in results:
        if metrics is None:
            print(f"error: {detail}", file=sys.stderr)
    rows = summarize(results)
    print(f"{'category':<16}{'episodes':>9}{'SR %':>8}{'path m':>9}{'clear m':>9}")
    for r in rows:
        print(f"{r['category']:<16}{r['episodes']:>9}{r['success_rate']:>8.1f}{r['mean_path_m']:>9.2f}"
              f"{r['mean_clearance_m']:>9.3f}")
    out = Path(args.out or "suite.csv")
    try:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUITE_COLUMNS)
            for r in rows:
                w.writerow([r["category"], r["episodes"], f"{r['success_rate']:.1f}", f"{r['mean_path_m']:.4f}",
                            f"{r['mean_clearance_m']:.4f}"])
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    if args.template in TEMPLATES:
        tpl = template(args.template)
    else:
        tpl = _load(args.template)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    master = cfg.seed if cfg.seed is not None else 0
    try:
        scenarios = generate_scenarios(tpl, args.count, master)
    except GenerationInfeasible as exc:
        raise ConfigError(str(exc)) from None
    root = Path(args.out or _env("OUT", "dataset"))
    rows = []
    for i, sc in enumerate(scenarios):
        episode = _episode(sc, cfg, record_depth=True)
        try:
            record_episode(episode, root / f"episode_{i:04d}", sc)
        except WriteError as exc:
            raise ConfigError(f"cannot write dataset: {exc}") from None
        m = compute_metrics(episode, sc)
        rows.append([i, sc.name, sc.seed, episode.outcome, len(episode.frames), f"{m.path_length:.4f}",
                     _fmt_metric(m.min_clearance)])
        print(f"{sc.name}: {episode.outcome} ({len(episode.frames)} frames)")
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "name", "seed", "outcome", "frames", "path_m", "min_clearance_m"])
        w.writerows(rows)
    return EXIT_OK


def cmd_profile(args) -> int:
    from .profiling import ProfileConfig, ProfileReport, camera_640, compute_speedup, profile_pipeline
    from .scenarios import profile_scene

    sc = _load(args.scenario) if args.scenario else profile_scene()
    camera = camera_640() if (args.width, args.height) == (640, 480) else None
    if camera is None:
        from dataclasses import replace

        from .geometry import CameraModel

        base = CameraModel()
        scale = args.width / base.width
        camera = replace(base, width=args.width, height=args.height, fx=base.fx * scale, fy=base.fy * scale,
                         cx=(args.width - 1) / 2, cy=(args.height - 1) / 2)
    if args.repetitions < 1:
        raise ConfigError("--repetitions must be >= 1")
    pcfg = ProfileConfig(camera=camera, stride=args.stride, refine_enabled=not args.no_refine)
    report = profile_pipeline(sc, OraclePolicy(sc), pcfg, args.repetitions)
    print(f"{'stage':<14}{'ms':>10}")
    for name, ms in report.table():
        print(f"{name:<14}{ms:>10.3f}")
    print(f"(render {report.extra['render']:.1f} ms, not part of the cycle)")
    rows = [["stage", "ms"]] + [[n, f"{v:.6f}"] for n, v in report.table()]
    if args.baseline:
        try:
            doc = json.loads(Path(args.baseline).read_text(encoding="utf-8"))
            before = ProfileReport(doc["stages"], doc["total"])
        except (OSError, KeyError, ValueError, NavError) as exc:
            raise ConfigError(f"bad baseline {args.baseline}: {exc}") from None
        speed = compute_speedup(before, report)
        print(f"speedup {speed['factor']:.2f}x, {speed['percent_reduction']:.1f}% reduction")
        rows = [["stage", "before_ms", "after_ms", "factor", "percent_reduction"]]
        for name in report.stages:
            s = speed["per_stage"][name]
            rows.append([name, f"{before.stages[name]:.6f}", f"{report.stages[name]:.6f}", f"{s['factor']:.4f}",
                         f"{s['percent_reduction']:.2f}"])
        rows.append(["total", f"{before.total:.6f}", f"{report.total:.6f}", f"{speed['factor']:.4f}",
                     f"{speed['percent_reduction']:.2f}"])
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    if args.json:
        Path(args.json).write_text(json.dumps({"stages": report.stages, "total": report.total,
                                               "extra": report.extra}, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        episode = EpisodeLog.from_json(Path(args.log).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"log not found: {args.log}") from None
    except (ValueError, KeyError, TypeError, NavError) as exc:
        raise ConfigError(f"malformed episode log {args.log}: {exc}") from None
    try:
        plot_episode(episode, args.output)
    except (ValueError, KeyError, TypeError, NavError) as exc:
        raise ConfigError(f"malformed episode log {args.log}: {exc}") from None
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .protocol import DummyPolicyServer

    sc = _load(args.scenario)
    server = DummyPolicyServer(sc, args.host, args.port, args.delay)
    host, port = server.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aerialnav", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default=_env("LOG_LEVEL", "WARNING"))
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="fly one episode")
    r.add_argument("scenario")
    r.add_argument("--out", help="directory for episode.json (default: current directory)")
    r.add_argument("--record", action="store_true", help="also write a 10 Hz dataset under OUT/dataset")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run a benchmark manifest and tabulate success rates")
    s.add_argument("manifest")
    s.add_argument("--out", help="CSV path (default: suite.csv)")
    s.add_argument("--jobs", type=int, default=1)
    _add_run_flags(s)
    s.set_defaults(func=cmd_suite)

    g = sub.add_parser("gen-data", help="randomize a template, fly it and record datasets")
    g.add_argument("template", help=f"built-in template ({', '.join(TEMPLATES)}) or scenario file")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--out", help="dataset root (default: dataset)")
    _add_run_flags(g)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("profile", help="per-stage latency of one replan cycle")
    f.add_argument("scenario", nargs="?")
    f.add_argument("--repetitions", type=int, default=21)
    f.add_argument("--width", type=int, default=640)
    f.add_argument("--height", type=int, default=480)
    f.add_argument("--stride", type=int, default=1)
    f.add_argument("--no-refine", action="store_true")
    f.add_argument("--baseline", help="JSON report from an earlier --json run")
    f.add_argument("--csv")
    f.add_argument("--json")
    f.set_defaults(func=cmd_profile)

    pl = sub.add_parser("plot", help="top-down SVG of an episode log")
    pl.add_argument("log")
    pl.add_argument("output")
    pl.set_defaults(func=cmd_plot)

    d = sub.add_parser("serve-dummy-policy", help="oracle policy over the wire protocol")
    d.add_argument("scenario")
    d.add_argument("--host", default="127.0.0.1")
    d.add_argument("--port", type=int, default=0)
    d.add_argument("--delay", type=float, default=0.0)
    d.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"aerialnav: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
