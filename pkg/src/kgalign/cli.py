"""Command-line pipeline: mine-paths, train, eval, align, harder-split.

Configuration is layered (defaults < config file < flags < KGALIGN_SEED
for the master seed). Every subcommand writes a run manifest with the
resolved parameters and input checksums before doing any work;
``--dry-run`` stops after the manifest. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.

Only the standard library is imported at module level so ``--threads``
can pin BLAS thread counts before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULTS: dict[str, dict] = {
    "mine-paths": {
        "tau_sim": 0.5,
        "tau_path": 20.0,
        "max_fanout": 10_000,
        "split": "20,10,70",
        "seed": 0,
    },
    "train": {
        "layers": 2,
        "heads": 4,
        "gamma_rel": 10.0,
        "gamma_path": 10.0,
        "theta": 0.3,
        "negatives_per_pair": 5,
        "negative_strategy": "nearest",
        "negatives_refresh": 10,
        "epochs": 200,
        "lr": 0.005,
        "eval_every": 10,
        "patience": 5,
        "split": "20,10,70",
        "seed": 0,
    },
    "eval": {
        "theta_inf": None,
        "candidates": "all",
        "harder": None,
        "ks": "1,5,10",
    },
    "align": {
        "top_k": 1,
    },
    "harder-split": {
        "fraction": 0.5,
    },
}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this pipeline uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_config_file(path) -> dict:
    """Flat key-value file: one ``key = value`` per line, # comments.

    Values parse as int, then float, then true/false, else string.
    """
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip().strip("\"'")
        for cast in (int, float):
            try:
                values[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            if raw.lower() in ("true", "false"):
                values[key] = raw.lower() == "true"
            else:
                values[key] = raw
    return values


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; KGALIGN_SEED wins for seed."""
    resolved = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = parse_config_file(config_path)
        unknown = set(file_values) - set(resolved)
        if unknown:
            raise DataError(f"{config_path}: unknown config keys {sorted(unknown)}")
        resolved.update(file_values)
    for key in resolved:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    if "seed" in resolved and os.environ.get("KGALIGN_SEED"):
        resolved["seed"] = int(os.environ["KGALIGN_SEED"])
    return resolved


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, params: dict, inputs: list) -> dict:
    """Resolved run description, written before any work starts."""
    import numpy

    from . import __version__

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "params": {k: v for k, v in sorted(params.items())},
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "versions": {
            "kgalign": __version__,
            "python": sys.version.split()[0],
            "numpy": numpy.__version__,
        },
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _parse_split(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise DataError(f"split must be three comma-separated percentages, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _dataset_files(data_dir: Path) -> list[Path]:
    return [
        data_dir / "rel_triples_1",
        data_dir / "rel_triples_2",
        data_dir / "ent_links",
        data_dir / "ent_name_emb_1.tsv",
        data_dir / "ent_name_emb_2.tsv",
    ]


def _require_dataset(data_dir) -> Path:
    data_dir = Path(data_dir)
    for path in _dataset_files(data_dir):
        if not path.is_file():
            raise DataError(f"missing dataset file: {path}")
    return data_dir


def _metrics_json(result) -> str:
    return json.dumps(result.as_dict(), sort_keys=True) + "\n"


def _print_metrics(result, as_json: bool) -> None:
    if as_json:
        sys.stdout.write(_metrics_json(result))
        return
    print(f"{'metric':<12}value")
    for key, value in sorted(result.hits.items()):
        print(f"{'hits@' + str(key):<12}{value:.4f}")
    print(f"{'mrr':<12}{result.mrr:.4f}")
    print(f"{'pairs':<12}{result.n}")
    print(f"{'candidates':<12}{result.n_candidates}")


def cmd_mine_paths(args) -> int:
    from .data import load_dataset, save_path_files
    from .mining import mine

    params = resolve_config("mine-paths", args)
    data_dir = _require_dataset(args.data)
    out_dir = Path(args.out)
    write_manifest(out_dir, "mine-paths", params, _dataset_files(data_dir))
    dataset = load_dataset(data_dir, split=_parse_split(params["split"]),
                           seed=params["seed"])
    if args.dry_run:
        return 0
    result = mine(dataset.kg1, dataset.kg2, dataset.seeds["train"],
                  dataset.names1, dataset.names2,
                  tau_sim=params["tau_sim"], tau_path=params["tau_path"],
                  max_fanout=int(params["max_fanout"]))
    save_path_files(out_dir, dataset.kg1, dataset.kg2, result.reliable.kept(),
                    result.vocab1, result.vocab2,
                    result.path_triples1, result.path_triples2)
    with open(out_dir / "stats.json", "w", encoding="utf-8") as f:
        json.dump(result.stats, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.json:
        sys.stdout.write(json.dumps(result.stats, sort_keys=True) + "\n")
    else:
        for key, value in sorted(result.stats.items()):
            print(f"{key:<22}{value}")
    return 0


def cmd_train(args) -> int:
    from . import autodiff as ad
    from .data import load_dataset, load_path_triples, load_path_vocab
    from .encoder import EncoderConfig
    from .training import TrainConfig, train

    params = resolve_config("train", args)
    data_dir = _require_dataset(args.data)
    use_paths = args.paths is not None and args.paths != "none"
    inputs = _dataset_files(data_dir)
    paths_dir = None
    if use_paths:
        paths_dir = Path(args.paths)
        for name in ("path_vocab.tsv", "path_triples_1.tsv", "path_triples_2.tsv"):
            if not (paths_dir / name).is_file():
                raise DataError(f"missing mined path file: {paths_dir / name}")
            inputs.append(paths_dir / name)
    out_dir = Path(args.out)
    write_manifest(out_dir, "train", {**params, "use_paths": use_paths}, inputs)

    split = _parse_split(params["split"])
    dataset = load_dataset(data_dir, split=split, seed=params["seed"])
    kg1, kg2 = dataset.kg1, dataset.kg2
    if use_paths:
        kept = load_path_vocab(paths_dir / "path_vocab.tsv", kg1, kg2)
        vocab1 = sorted({p1 for p1, _ in kept})
        vocab2 = sorted({p2 for _, p2 in kept})
        kg1 = kg1.with_paths(vocab1, load_path_triples(
            paths_dir / "path_triples_1.tsv", kg1, vocab1))
        kg2 = kg2.with_paths(vocab2, load_path_triples(
            paths_dir / "path_triples_2.tsv", kg2, vocab2))
    if args.dry_run:
        return 0

    encoder_config = EncoderConfig(layers=int(params["layers"]),
                                   heads=int(params["heads"]),
                                   dim=dataset.names1.shape[1])
    train_config = TrainConfig(
        gamma_rel=params["gamma_rel"], gamma_path=params["gamma_path"],
        theta=params["theta"],
        negatives_per_pair=int(params["negatives_per_pair"]),
        negative_strategy=params["negative_strategy"],
        negatives_refresh=int(params["negatives_refresh"]),
        epochs=int(params["epochs"]), lr=params["lr"],
        eval_every=int(params["eval_every"]), patience=int(params["patience"]),
        use_paths=use_paths, seed=int(params["seed"]),
    )
    result = train(kg1, kg2, dataset.seeds, dataset.names1, dataset.names2,
                   encoder_config, train_config)

    ad.save_tensors(out_dir / "rel_params.tsv", result.rel_params.tensors())
    embeddings = {"e_rel1": result.e_rel1, "e_rel2": result.e_rel2}
    if result.path_params is not None:
        ad.save_tensors(out_dir / "path_params.tsv", result.path_params.tensors())
        embeddings["e_path1"] = result.e_path1
        embeddings["e_path2"] = result.e_path2
    ad.save_tensors(out_dir / "embeddings.tsv", embeddings)
    meta = {
        "seed": int(params["seed"]),
        "split": list(split),
        "theta": params["theta"],
        "use_paths": use_paths,
        "dim": dataset.names1.shape[1],
        "layers": int(params["layers"]),
        "heads": int(params["heads"]),
        "best_epoch": result.best_epoch,
        "best_val_hits1": result.best_val_hits1,
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out_dir / "history.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "val_hits1"])
        for row in result.history:
            writer.writerow([row.epoch, repr(row.loss),
                             "" if row.val_hits1 is None else repr(row.val_hits1)])
    print(f"best val hits@1 {result.best_val_hits1:.4f} at epoch {result.best_epoch}")
    return 0


def _load_checkpoint(ckpt_dir, data_dir):
    from .autodiff import load_tensors
    from .data import load_dataset

    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"missing checkpoint metadata: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    stored = load_tensors(ckpt_dir / "embeddings.tsv")
    dataset = load_dataset(_require_dataset(data_dir),
                           split=tuple(meta["split"]), seed=meta["seed"])
    rel_emb = (stored["e_rel1"], stored["e_rel2"])
    if rel_emb[0].shape != (dataset.kg1.num_entities, meta["dim"]):
        raise DataError(
            f"checkpoint/data mismatch: embeddings {rel_emb[0].shape} vs "
            f"{dataset.kg1.num_entities} entities, dim {meta['dim']}"
        )
    if rel_emb[1].shape[0] != dataset.kg2.num_entities:
        raise DataError(
            f"checkpoint/data mismatch: {rel_emb[1].shape[0]} stored KG2 rows vs "
            f"{dataset.kg2.num_entities} entities"
        )
    path_emb = None
    if "e_path1" in stored:
        path_emb = (stored["e_path1"], stored["e_path2"])
    return meta, dataset, rel_emb, path_emb


def cmd_eval(args) -> int:
    from .evaluation import evaluate, make_harder_split

    params = resolve_config("eval", args)
    out_dir = Path(args.out) if args.out else Path(args.ckpt) / "eval"
    ckpt_files = [Path(args.ckpt) / "embeddings.tsv", Path(args.ckpt) / "meta.json"]
    write_manifest(out_dir, "eval", params,
                   ckpt_files + _dataset_files(Path(args.data)))
    meta, dataset, rel_emb, path_emb = _load_checkpoint(args.ckpt, args.data)
    if args.dry_run:
        return 0
    theta_inf = params["theta_inf"]
    if theta_inf is None:
        theta_inf = meta["theta"] if path_emb is not None else 0.0
    test = dataset.seeds["test"]
    if params["harder"] is not None:
        all_links = [pair for role in ("train", "valid", "test")
                     for pair in dataset.seeds[role].pairs]
        harder = make_harder_split(all_links, dataset.names1, dataset.names2,
                                   float(params["harder"]))
        rng_split = _resplit(harder, tuple(meta["split"]), meta["seed"])
        test = rng_split["test"]
    ks = tuple(int(k) for k in str(params["ks"]).split(","))
    result = evaluate(test, rel_emb, path_emb, theta_inf=theta_inf,
                      ks=ks, candidates=params["candidates"])
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
        f.write(_metrics_json(result))
    _print_metrics(result, args.json)
    return 0


def _resplit(pairs, split, seed):
    """Re-run the seed split logic on an in-memory link list."""
    import math

    import numpy as np

    from .data import AlignmentSeeds

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train = math.floor(len(pairs) * split[0] / 100.0)
    n_valid = math.floor(len(pairs) * split[1] / 100.0)
    return {
        "train": AlignmentSeeds(tuple(shuffled[:n_train]), "train"),
        "valid": AlignmentSeeds(tuple(shuffled[n_train:n_train + n_valid]), "valid"),
        "test": AlignmentSeeds(tuple(shuffled[n_train + n_valid:]), "test"),
    }


def cmd_align(args) -> int:
    import numpy as np

    from .evaluation import fused_distance_matrix

    params = resolve_config("align", args)
    out_dir = Path(args.out)
    write_manifest(out_dir, "align", params,
                   [Path(args.ckpt) / "embeddings.tsv", Path(args.ckpt) / "meta.json"]
                   + _dataset_files(Path(args.data)))
    meta, dataset, rel_emb, path_emb = _load_checkpoint(args.ckpt, args.data)
    if args.dry_run:
        return 0
    theta_inf = meta["theta"] if path_emb is not None else 0.0
    known = {p for role in ("train", "valid")
             for p, _ in dataset.seeds[role].pairs}
    sources = np.array(
        [e for e in range(dataset.kg1.num_entities) if e not in known],
        dtype=np.int64,
    )
    top_k = int(params["top_k"])
    rows = []
    block = 256
    for start in range(0, sources.size, block):
        chunk = sources[start:start + block]
        dist = fused_distance_matrix(rel_emb, path_emb, theta_inf, chunk)
        order = np.argsort(dist, axis=1, kind="stable")[:, :top_k]
        for row, source in enumerate(chunk):
            for rank in range(top_k):
                candidate = int(order[row, rank])
                rows.append((
                    dataset.kg1.entity_uris[source],
                    dataset.kg2.entity_uris[candidate],
                    float(dist[row, candidate]),
                    rank + 1,
                ))
    rows.sort(key=lambda r: (r[0], r[3]))
    with open(out_dir / "predictions.tsv", "w", encoding="utf-8") as f:
        for uri1, uri2, distance, rank in rows:
            f.write(f"{uri1}\t{uri2}\t{repr(distance)}\t{rank}\n")
    print(f"wrote {len(rows)} predictions for {sources.size} entities")
    return 0


def cmd_harder_split(args) -> int:
    from .data import load_embeddings, load_kg
    from .evaluation import make_harder_split

    params = resolve_config("harder-split", args)
    data_dir = _require_dataset(args.data)
    out_dir = Path(args.out)
    write_manifest(out_dir, "harder-split", params, _dataset_files(data_dir))
    if args.dry_run:
        return 0
    kg1 = load_kg(data_dir / "rel_triples_1")
    kg2 = load_kg(data_dir / "rel_triples_2")
    names1 = load_embeddings(data_dir / "ent_name_emb_1.tsv", kg1)
    names2 = load_embeddings(data_dir / "ent_name_emb_2.tsv", kg2)
    links = []
    for line in (data_dir / "ent_links").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        u1, u2 = line.split("\t")
        links.append((kg1.entity_id(u1.strip()), kg2.entity_id(u2.strip())))
    harder = make_harder_split(links, names1, names2, float(params["fraction"]))
    with open(out_dir / "ent_links", "w", encoding="utf-8") as f:
        for p, q in harder:
            f.write(f"{kg1.entity_uris[p]}\t{kg2.entity_uris[q]}\n")
    print(f"kept {len(harder)} of {len(links)} links")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--threads", type=int, default=None,
                        help="thread cap (1 guarantees bit-exact determinism)")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate inputs and write only the manifest")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable report on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine-paths", parents=[], help="mine reliable two-hop paths")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-sim", dest="tau_sim", type=float, default=None)
    p.add_argument("--tau-path", dest="tau_path", type=float, default=None)
    p.add_argument("--max-fanout", dest="max_fanout", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_mine_paths)

    p = sub.add_parser("train", help="train both encoder stacks")
    p.add_argument("--data", required=True)
    p.add_argument("--paths", default=None,
                   help="mined path directory, or 'none' for the no-path ablation")
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--gamma-rel", dest="gamma_rel", type=float, default=None)
    p.add_argument("--gamma-path", dest="gamma_path", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--negatives-per-pair", dest="negatives_per_pair", type=int,
                   default=None)
    p.add_argument("--negative-strategy", dest="negative_strategy",
                   choices=("random", "nearest"), default=None)
    p.add_argument("--negatives-refresh", dest="negatives_refresh", type=int,
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="rank test pairs and report Hits@k / MRR")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--theta-inf", dest="theta_inf", type=float, default=None)
    p.add_argument("--candidates", choices=("all", "test"), default=None)
    p.add_argument("--harder", type=float, default=None)
    p.add_argument("--ks", default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("align", help="emit top-k candidates for non-seed entities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_align)

    p = sub.add_parser("harder-split", help="keep the least name-similar links")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_harder_split)

    return parser


def _pin_threads(argv: list[str]) -> None:
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(value)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
