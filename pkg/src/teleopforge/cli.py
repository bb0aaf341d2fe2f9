"""Single command-line entry point for every service and harness.

Exit codes: 0 success, 1 assertion/run failure, 2 usage error. All
randomness flows from --seed flags; TELEOPFORGE_STORAGE overrides default
storage directories.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import numpy as np


def _storage_default() -> str:
    return os.environ.get("TELEOPFORGE_STORAGE", "./demos")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleopforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("coordinator", help="run the session coordination server")
    c.add_argument("--port", type=int, default=8750)
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--max-sessions", type=int, default=8)
    c.add_argument("--storage", default=_storage_default())
    c.add_argument("--single-process", action="store_true", help="host sessions in-process instead of subprocesses")
    c.add_argument("--headless", action="store_true", help="sessions run unpaced (tests)")

    t = sub.add_parser("teleop", help="run one dedicated teleoperation server")
    t.add_argument("--port", type=int, default=0)
    t.add_argument("--host", default="127.0.0.1")
    t.add_argument("--task", required=True)
    t.add_argument("--token", required=True)
    t.add_argument("--storage", default=_storage_default())
    t.add_argument("--user", default="operator")
    t.add_argument("--headless", action="store_true")

    n = sub.add_parser("netem", help="run a network-emulating TCP proxy")
    n.add_argument("--listen", type=int, required=True)
    n.add_argument("--upstream", required=True, help="host:port")
    n.add_argument("--profile", help="baseline | low-capacity | high-delay | both")
    n.add_argument("--up-rate", type=float, help="uplink bits/s")
    n.add_argument("--down-rate", type=float, help="downlink bits/s")
    n.add_argument("--up-trace", help="uplink delivery-opportunity trace file")
    n.add_argument("--down-trace", help="downlink delivery-opportunity trace file")
    n.add_argument("--delay-ms", type=float, default=0.0, help="one-way delay per direction")

    cl = sub.add_parser("client", help="scripted operator client")
    cl.add_argument("--coordinator", required=True, help="host:port")
    cl.add_argument("--task", default="lifting")
    cl.add_argument("--user", default="scripted")
    cl.add_argument("--scripted", action="store_true", default=True)
    cl.add_argument("--speed", type=float, default=0.30, help="controller speed m/s")
    cl.add_argument("--demos", type=int, default=1)
    cl.add_argument("--timeout", type=float, default=120.0)

    d = sub.add_parser("demostore", help="demonstration dataset utilities")
    dsub = d.add_subparsers(dest="demostore_cmd", required=True)
    di = dsub.add_parser("index", help="scan a dataset directory")
    di.add_argument("dir")
    di.add_argument("--csv", action="store_true")
    dr = dsub.add_parser("replay", help="replay a demo file through the simulator")
    dr.add_argument("file")

    s = sub.add_parser("stats", help="completion-time statistics")
    ssub = s.add_subparsers(dest="stats_cmd", required=True)
    sk = ssub.add_parser("ks", help="two-sample Kolmogorov-Smirnov test")
    sk.add_argument("--a", required=True, help="text file, one completion time per line")
    sk.add_argument("--b", required=True)
    sm = ssub.add_parser("summary", help="mean/std/count per group")
    sm.add_argument("dir")
    sm.add_argument("--by", choices=["task", "user"], default="task")
    sm.add_argument("--csv", action="store_true")
    sh = ssub.add_parser("hist", help="histogram bins as CSV")
    sh.add_argument("dir")
    sh.add_argument("--by", choices=["task", "user"], default="task")
    sh.add_argument("--bins", type=int, default=20)

    tr = sub.add_parser("train", help="policy learning")
    tsub = tr.add_subparsers(dest="train_cmd", required=True)
    tm = tsub.add_parser("make-demos", help="generate scripted demonstrations")
    tm.add_argument("--task", default="lifting")
    tm.add_argument("--count", type=int, default=100)
    tm.add_argument("--noise", type=float, default=0.01)
    tm.add_argument("--seed", type=int, default=0)
    tm.add_argument("--out", required=True)
    tp = tsub.add_parser("ppo", help="demo-reset PPO")
    tp.add_argument("--task", default="lifting")
    tp.add_argument("--demos", help="demo dataset directory")
    tp.add_argument("--count", type=int, help="use only the first N demos")
    tp.add_argument("--budget", type=int, default=150_000, help="environment steps")
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", required=True)
    ta = tsub.add_parser("ablate", help="demo-count ablation")
    ta.add_argument("--task", default="lifting")
    ta.add_argument("--demos", required=True)
    ta.add_argument("--counts", default="0,1,10,100")
    ta.add_argument("--seeds", type=int, default=3)
    ta.add_argument("--budget", type=int, default=150_000)
    ta.add_argument("--workers", type=int, default=None)
    ta.add_argument("--out", required=True)
    tb = tsub.add_parser("bc", help="behavior cloning baseline")
    tb.add_argument("--demos", required=True)
    tb.add_argument("--epochs", type=int, default=60)
    tb.add_argument("--seed", type=int, default=0)
    tb.add_argument("--out", required=True)
    tn = tsub.add_parser("np", help="nearest-neighbor baseline")
    tn.add_argument("--demos", required=True)
    tn.add_argument("--out", required=True)
    te = tsub.add_parser("eval", help="evaluate a saved policy")
    te.add_argument("--policy", required=True)
    te.add_argument("--task", default="lifting")
    te.add_argument("--episodes", type=int, default=100)

    e = sub.add_parser("e2e", help="coordinator + netem + scripted client, asserts success")
    e.add_argument("--profile", default="baseline")
    e.add_argument("--task", default="lifting")
    e.add_argument("--storage", default=None, help="default: fresh temp dir")
    e.add_argument("--single-process", action="store_true")
    e.add_argument("--timeout", type=float, default=90.0)
    e.add_argument("--out", default=None, help="write report JSON + manifest here")

    return p


# ---------------------------------------------------------------------------


def cmd_coordinator(args) -> int:
    from .coordinator import run_coordinator

    def ready(port):
        print(f"COORDINATOR_READY {json.dumps({'port': port})}", flush=True)

    try:
        asyncio.run(
            run_coordinator(
                args.storage,
                host=args.host,
                port=args.port,
                max_sessions=args.max_sessions,
                single_process=args.single_process,
                headless=args.headless,
                ready_callback=ready,
            )
        )
    except KeyboardInterrupt:
        pass
    return 0


def cmd_teleop(args) -> int:
    from .session import run_teleop_server
    from .simcore import ArmConfig, TaskSpec

    try:
        task = TaskSpec.load(args.task)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    def ready(port):
        print(f"TELEOP_READY {json.dumps({'port': port})}", flush=True)

    try:
        asyncio.run(
            run_teleop_server(
                ArmConfig.default(),
                task,
                args.token,
                args.storage,
                host=args.host,
                port=args.port,
                user=args.user,
                headless=args.headless,
                ready_callback=ready,
            )
        )
    except KeyboardInterrupt:
        pass
    return 0


def _link_spec(rate, trace):
    from .netem import LinkSpec, load_trace

    if trace:
        return LinkSpec(trace_ms=load_trace(trace))
    if rate:
        return LinkSpec(rate_bps=rate)
    return LinkSpec(rate_bps=1e12)


def cmd_netem(args) -> int:
    from .netem import NetworkProfile, start_proxy

    if args.profile:
        try:
            profile = NetworkProfile.named(args.profile)
        except KeyError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
    else:
        profile = NetworkProfile(
            up=_link_spec(args.up_rate, args.up_trace),
            down=_link_spec(args.down_rate, args.down_trace),
            delay_s=args.delay_ms / 1000.0,
        )
    host, port = args.upstream.rsplit(":", 1)

    async def main():
        server, _ = await start_proxy(args.listen, host, int(port), profile)
        print(f"NETEM_READY {json.dumps({'port': server.sockets[0].getsockname()[1]})}", flush=True)
        await asyncio.Future()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_client(args) -> int:
    from .client import run_scripted_client

    host, port = args.coordinator.rsplit(":", 1)
    report = asyncio.run(
        run_scripted_client(
            host,
            int(port),
            args.task,
            user=args.user,
            speed=args.speed,
            demos_wanted=args.demos,
            timeout_s=args.timeout,
        )
    )
    print(
        f"success={report.success} completion_time={report.completion_time} "
        f"frames={report.frames_received} delay_ms={report.min_delay_ms} error={report.error}"
    )
    return 0 if report.success else 1


def cmd_demostore(args) -> int:
    from .demostore import read_demo, replay_demo, scan_dataset
    from .simcore import ArmConfig, check_success

    if args.demostore_cmd == "index":
        index = scan_dataset(args.dir)
        if args.csv:
            print("path,task,user,success,completion_time,ticks")
            for r in index.rows:
                print(f"{r.path},{r.task},{r.user},{r.success},{r.completion_time},{r.ticks}")
        else:
            for r in index.rows:
                print(f"{r.path.name:60s} {r.task:9s} {r.user:12s} success={r.success} "
                      f"t={r.completion_time} ticks={r.ticks}")
            print(f"{len(index.rows)} demos ({index.n_success} successful), {len(index.skipped)} corrupt skipped")
        return 0
    rec = read_demo(args.file)
    final = replay_demo(rec, ArmConfig.default())
    ok = final.to_json() == rec.final_state().to_json()
    success = check_success(final, rec.task)
    print(f"replayed {rec.n_ticks} ticks: final state match={ok}, success predicate={success}")
    return 0 if (ok and success == rec.success) else 1


def cmd_stats(args) -> int:
    from .analytics import histogram_bins, ks_two_sample, summarize
    from .demostore import scan_dataset

    if args.stats_cmd == "ks":
        xs = [float(v) for v in Path(args.a).read_text().split()]
        ys = [float(v) for v in Path(args.b).read_text().split()]
        r = ks_two_sample(xs, ys)
        print(f"D = {r.d:.6f}")
        print(f"p = {r.p_value:.6f}")
        print(f"n1 = {r.n1}, n2 = {r.n2}")
        return 0
    index = scan_dataset(args.dir)
    groups = index.completion_times_by(args.by)
    if args.stats_cmd == "summary":
        rows = summarize(groups)
        if args.csv:
            print("group,mean_s,std_s,count")
            for r in rows:
                print(f"{r.group},{r.mean:.6g},{r.std:.6g},{r.count}")
        else:
            print(f"{args.by:12s} {'mean_s':>10s} {'std_s':>10s} {'count':>6s}")
            for r in rows:
                print(f"{r.group:12s} {r.mean:10.2f} {r.std:10.2f} {r.count:6d}")
        return 0
    print("group,bin_lo_s,bin_hi_s,count")
    for group, values in sorted(groups.items()):
        for lo, hi, count in histogram_bins(values, args.bins):
            print(f"{group},{lo:.6g},{hi:.6g},{count}")
    return 0


def cmd_train(args) -> int:
    from .manifest import write_manifest
    from .simcore import ArmConfig, TaskSpec

    config = ArmConfig.default()
    if args.train_cmd == "make-demos":
        from .learn.scripted import generate_dataset

        task = TaskSpec.load(args.task)
        write_manifest(args.out, "train make-demos", vars(args), seed=args.seed)
        paths = generate_dataset(task, args.count, args.noise, args.seed, args.out, config=config)
        print(f"wrote {len(paths)} successful demos to {args.out}")
        return 0

    if args.train_cmd == "ppo":
        from .demostore import ResetSampler, scan_dataset, EmptyDatasetError
        from .learn.ppo import TrainConfig, train_ppo

        task = TaskSpec.load(args.task)
        out = Path(args.out)
        write_manifest(out, "train ppo", vars(args), seed=args.seed)
        sampler = None
        if args.demos:
            index = scan_dataset(args.demos)
            if args.count is not None:
                index.rows = index.successful(task.kind)[: args.count]
            try:
                sampler = ResetSampler(index, task=task.kind) if (args.count or len(index.rows)) else None
            except EmptyDatasetError:
                sampler = None
        cfg = TrainConfig(seed=args.seed)
        res = train_ppo(config, task, cfg, sampler, budget_steps=args.budget,
                        log=lambda p: print(f"iter {p['iteration']}: steps={p['steps']} "
                                            f"return={p['mean_return']:.2f}", flush=True))
        out.mkdir(parents=True, exist_ok=True)
        (out / "policy.json").write_text(json.dumps(res.policy.to_dict()))
        with open(out / "curve.csv", "w") as f:
            f.write("iteration,steps,mean_return,success_rate,policy_loss,value_loss\n")
            for c in res.curve:
                f.write(f"{c['iteration']},{c['steps']},{c['mean_return']:.4f},"
                        f"{c['success_rate']:.4f},{c['policy_loss']:.6f},{c['value_loss']:.6f}\n")
        print(f"final greedy success rate: {res.final_success_rate:.3f} "
              f"({res.env_steps} steps, {res.wall_seconds:.0f}s, "
              f"demo-reset fraction {res.demo_reset_fraction:.3f})")
        return 0

    if args.train_cmd == "ablate":
        from .demostore import scan_dataset
        from .learn.ablate import ablate_demo_count

        task = TaskSpec.load(args.task)
        out = Path(args.out)
        write_manifest(out, "train ablate", vars(args), seed=args.seeds)
        counts = tuple(int(c) for c in args.counts.split(","))
        index = scan_dataset(args.demos)
        result = ablate_demo_count(
            config, task, index, counts=counts, seeds=tuple(range(args.seeds)),
            budget=args.budget, workers=args.workers,
        )
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w") as f:
            f.write("count,seed,final_success_rate,env_steps,wall_seconds\n")
            for c in result.cells:
                f.write(f"{c.count},{c.seed},{c.final_success_rate},{c.env_steps},{c.wall_seconds:.1f}\n")
        print(result.table())
        return 0

    if args.train_cmd in ("bc", "np"):
        from .demostore import read_demo, scan_dataset
        from .learn.baselines import NearestNeighborPolicy, bc_train

        index = scan_dataset(args.demos)
        records = [read_demo(r.path) for r in index.rows if r.success]
        if not records:
            print("error: no successful demos", file=sys.stderr)
            return 1
        if args.train_cmd == "bc":
            policy, curve = bc_train(records, config, epochs=args.epochs, seed=args.seed)
            Path(args.out).write_text(json.dumps(policy.to_dict()))
            print(f"bc: {len(records)} demos, final loss {curve[-1]:.6f} -> {args.out}")
        else:
            policy = NearestNeighborPolicy.fit(records, config)
            Path(args.out).write_text(json.dumps(policy.to_dict()))
            print(f"np: {len(policy.obs)} state-action pairs -> {args.out}")
        return 0

    if args.train_cmd == "eval":
        from .learn.baselines import BCPolicy, NearestNeighborPolicy
        from .learn.env import ArmTaskEnv
        from .learn.nets import GaussianPolicy
        from .learn.ppo import evaluate_policy

        doc = json.loads(Path(args.policy).read_text())
        kind = doc.get("kind")
        policy = {
            "gaussian-mlp": GaussianPolicy.from_dict,
            "bc-mlp": BCPolicy.from_dict,
            "nearest-neighbor": NearestNeighborPolicy.from_dict,
        }[kind](doc)
        env = ArmTaskEnv(config, TaskSpec.load(args.task), seed=424242)
        rate = evaluate_policy(policy, env, args.episodes)
        print(f"success rate over {args.episodes} episodes: {rate:.3f}")
        return 0
    return 2


def cmd_e2e(args) -> int:
    import tempfile

    from .e2e import run_e2e
    from .manifest import write_manifest
    from .netem import NetworkProfile

    try:
        profile = NetworkProfile.named(args.profile)
    except KeyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    storage = args.storage or tempfile.mkdtemp(prefix="teleopforge_e2e_")
    report = asyncio.run(
        run_e2e(
            profile,
            args.profile,
            args.task,
            storage,
            single_process=args.single_process,
            timeout_s=args.timeout,
        )
    )
    for line in report.lines():
        print(line)
    if args.out:
        out = Path(args.out)
        write_manifest(out, "e2e", vars(args))
        (out / "report.json").write_text(json.dumps(report.__dict__, default=str, indent=2))
    return 0 if report.success else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "coordinator": cmd_coordinator,
        "teleop": cmd_teleop,
        "netem": cmd_netem,
        "client": cmd_client,
        "demostore": cmd_demostore,
        "stats": cmd_stats,
        "train": cmd_train,
        "e2e": cmd_e2e,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
