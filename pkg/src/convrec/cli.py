"""Command-line pipeline: gen-data, train-um, train-policy, eval, sweep.

All commands are driven by a JSON config (defaults baked in, see config.py)
plus flag overrides, write artifacts only under --out, and are reproducible
from (config, seed); --jobs only parallelizes independent evaluation
episodes, and aggregation order is fixed so results match --jobs 1.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch

from . import catalog as cat
from . import config as cfgmod
from . import evaluation as ev
from . import params_io
from .errors import CatalogLoadError, ConfigError, MissingArtifactError, NumericError
from .ppo import PolicyNet, train_policy
from .user_model import PreferenceModel, train_user_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path} (run the upstream command first)")
    return path


def _load_world(out: Path) -> tuple[cat.Catalog, cat.DataSplit]:
    catalog, _ = cat.load_catalog(_require(out / "catalog.json"), _require(out / "interactions.tsv"))
    logs = []
    for name in ("train.tsv", "valid.tsv", "test.tsv"):
        _, log = cat.load_catalog(out / "catalog.json", _require(out / name))
        logs.append(log)
    return catalog, cat.DataSplit(*logs)


def _load_user_model(out: Path) -> PreferenceModel:
    meta, arrays = params_io.load_arrays(_require(out / "user_model.npz"))
    model = PreferenceModel(
        meta["n_users"], meta["n_items"], meta["n_attrs"],
        d=meta["d"], n_layers=meta["n_layers"], use_positions=meta["use_positions"],
    )
    params_io.load_into(model, arrays)
    return model


def _load_policy(out: Path) -> PolicyNet:
    meta, arrays = params_io.load_arrays(_require(out / "policy.npz"))
    net = PolicyNet(meta["d"], meta["n_slots"], meta["hidden"])
    params_io.load_into(net, arrays)
    return net


def cmd_gen_data(cfg: dict, out: Path, jobs: int) -> int:
    world = cfgmod.world_config(cfg)
    seed = cfg["seed"]
    catalog, log = cat.generate_synthetic_world(world, seed)
    split = cat.split_interactions(log, cfgmod.split_ratios(cfg), seed + 1, catalog.n_users)
    cat.save_catalog(catalog, log, out / "catalog.json", out / "interactions.tsv")
    for name, part in (("train.tsv", split.train), ("valid.tsv", split.valid), ("test.tsv", split.test)):
        (out / name).write_text("".join(f"{u}\t{v}\n" for u, v in part.records), encoding="utf-8")
    manifest = {
        "ratios": list(cfgmod.split_ratios(cfg)),
        "seed": seed,
        "sizes": {"train": len(split.train), "valid": len(split.valid), "test": len(split.test)},
    }
    import json

    (out / "split_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / "resolved_config.json").write_text(cfgmod.dump_config(cfg), encoding="utf-8")
    print(f"wrote catalog ({catalog.n_users} users, {catalog.n_items} items, "
          f"{catalog.n_attrs} attrs), {len(log)} interactions to {out}")
    return EXIT_OK


def cmd_train_um(cfg: dict, out: Path, jobs: int) -> int:
    catalog, split = _load_world(out)
    model, rows = train_user_model(
        split, catalog, cfgmod.um_hyper(cfg), cfgmod.example_gen_config(cfg), cfg["seed"] + 2
    )
    params_io.save_module(out / "user_model.npz", model, model.meta())
    _write_csv(out / "um_train_log.csv", rows, ["epoch", "train_loss", "valid_loss"])
    final = rows[-1] if rows else {"train_loss": float("nan"), "valid_loss": float("nan")}
    print(f"trained user model: {len(rows)} epochs, final train_loss={final['train_loss']:.4f} "
          f"valid_loss={final['valid_loss']:.4f}")
    return EXIT_OK


def cmd_train_policy(cfg: dict, out: Path, jobs: int) -> int:
    catalog, split = _load_world(out)
    model = _load_user_model(out)
    net, rows = train_policy(
        model, catalog, split, cfgmod.env_config(cfg), cfgmod.ppo_hyper(cfg), cfg["seed"] + 3
    )
    params_io.save_module(out / "policy.npz", net, net.meta())
    _write_csv(out / "policy_train_log.csv", rows,
               ["iter", "mean_reward", "success_rate", "loss_clip", "loss_vf", "entropy"])
    if rows and rows[-1].get("diverged"):
        print("policy training diverged; last-good checkpoint saved", file=sys.stderr)
        return EXIT_NUMERIC
    if rows:
        print(f"trained policy: {len(rows)} iterations, final mean_reward={rows[-1]['mean_reward']:.3f} "
              f"success_rate={rows[-1]['success_rate']:.3f}")
    return EXIT_OK


def _policies(cfg: dict, out: Path) -> dict:
    top_n = cfg["env"]["top_n"]
    policies = {"ppo": ev.ppo_policy(_load_policy(out), top_n)}
    if cfg["eval"]["baselines"]:
        policies["abs_greedy"] = ev.abs_greedy_policy()
        policies["max_entropy"] = ev.max_entropy_policy()
        policies["random"] = ev.random_policy()
    return policies


def _run_transcripts(policy, model, catalog, split, pairs, sim_cfg, env_cfg, seed, jobs):
    history = [set() for _ in range(catalog.n_users)]
    for u, v in split.train.records:
        history[u].add(v)
    if jobs <= 1:
        return [ev.run_episode(policy, model, catalog, history, p, sim_cfg, env_cfg, seed)
                for p in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(ev.run_episode, policy, model, catalog, history, p,
                             sim_cfg, env_cfg, seed) for p in pairs]
        return [f.result() for f in futures]  # submission order keeps aggregation deterministic


def cmd_eval(cfg: dict, out: Path, jobs: int) -> int:
    catalog, split = _load_world(out)
    model = _load_user_model(out)
    sim_cfg = cfgmod.simulator_config(cfg)
    env_cfg = cfgmod.env_config(cfg, model_feedback=False)
    pairs = ev.eval_pairs(split, catalog, cfg["eval"]["max_pairs"])
    if not pairs:
        raise ConfigError("no evaluable (user, item) pairs in the test split")
    t_levels = tuple(cfg["eval"]["t_levels"])
    seed = cfg["seed"] + 4

    report_rows = []
    report_doc = {"config": cfg, "policies": {}}
    for name, policy in _policies(cfg, out).items():
        transcripts = _run_transcripts(policy, model, catalog, split, pairs, sim_cfg, env_cfg, seed, jobs)
        with open(out / f"transcripts_{name}.jsonl", "w", encoding="utf-8") as f:
            for tr in transcripts:
                f.write(tr.to_json() + "\n")
        m = ev.compute_metrics(transcripts, t_levels, env_cfg.t_max)
        row = {"policy": name, **{f"SR@{t}": m.sr[t] for t in t_levels}, "AT": m.at,
               "episodes": m.n_episodes}
        report_rows.append(row)
        report_doc["policies"][name] = {
            "sr": {str(t): m.sr[t] for t in t_levels},
            "at": m.at,
            "match_curve": m.match_curve,
            "episodes": m.n_episodes,
        }

    import json

    (out / "eval_report.json").write_text(
        json.dumps(report_doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    columns = ["policy"] + [f"SR@{t}" for t in t_levels] + ["AT", "episodes"]
    _write_csv(out / "eval_report.csv", report_rows, columns)

    header = f"{'policy':<12}" + "".join(f"{c:>10}" for c in columns[1:])
    print(header)
    for row in report_rows:
        print(f"{row['policy']:<12}" + "".join(
            f"{row[c]:>10.3f}" if isinstance(row[c], float) else f"{row[c]:>10}" for c in columns[1:]))
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path, jobs: int) -> int:
    catalog, split = _load_world(out)
    model = _load_user_model(out)
    policy = ev.ppo_policy(_load_policy(out), cfg["env"]["top_n"])
    env_cfg = cfgmod.env_config(cfg, model_feedback=False)
    pairs = ev.eval_pairs(split, catalog, cfg["eval"]["max_pairs"])
    if not pairs:
        raise ConfigError("no evaluable (user, item) pairs in the test split")
    rows = ev.sweep(
        policy, model, catalog, split, pairs,
        [float(a) for a in cfg["sweep"]["alpha_grid"]],
        [float(d) for d in cfg["sweep"]["delta_lambda_grid"]],
        env_cfg, cfgmod.simulator_config(cfg), cfg["seed"] + 5,
    )
    _write_csv(out / "sweep.csv", rows, ["alpha", "delta_lambda", "SR@5", "SR@10", "SR@15", "AT"])
    print(f"sweep: {len(rows)} cells written to {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-um": cmd_train_um,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convrec",
                                     description="Offline conversational recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="run seed (mandatory here or in config)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel evaluation episodes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        torch.set_num_threads(1)
        return COMMANDS[args.command](cfg, out, max(args.jobs, 1))
    except (ConfigError, CatalogLoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
