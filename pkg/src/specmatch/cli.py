"""Command-line pipeline: every stage of the experiment as a subcommand.

Exit codes are uniform across subcommands: 0 success, 1 runtime or numeric
failure, 2 bad input data or file format, 3 bad configuration or shape
mismatch. Each mutating command also writes `<output>.manifest.json` with
the command line, the effective config, input digests, and timing, so runs
can be compared and replayed; the manifest is the only output that is not
byte-reproducible (it records the wall clock).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from .data import (
    CQARecord,
    FilterConfig,
    QAPair,
    SpecProduct,
    index_catalog,
    load_jsonl,
    preprocess_cqa,
    save_jsonl,
    split_by_product,
)
from .errors import (
    CheckpointCorruptionError,
    CheckpointVersionError,
    ConfigError,
    DataFormatError,
    DimensionError,
    EmptyInputError,
    InsufficientDataError,
    NumericError,
    ReferentialIntegrityError,
    SpecmatchError,
    TransferError,
)
from .evaluate import evaluate_pairs, rank_candidates, run_experiment_grid
from .text import load_embeddings, vocab_digest
from .train import (
    TrainConfig,
    apply_checkpoint,
    build_model,
    fit,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)

_CONFIG_FLAGS = {
    "hidden": "hidden",
    "lr": "learning_rate",
    "optimizer": "optimizer",
    "epochs": "epochs_max",
    "batch_size": "batch_size",
    "seed": "seed",
    "patience": "patience",
    "cell_variant": "cell_variant",
    "freeze_embeddings": "freeze_embeddings",
}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_path, args, config: dict, inputs, outputs, started: float) -> None:
    manifest = {
        "command": ["specmatch"] + list(args._argv),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "duration_seconds": round(time.time() - started, 6),
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_config_file(path) -> dict:
    """Flat key=value lines; blank lines and #-comments are skipped. Values
    are typed after the TrainConfig field they name."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return {k: _coerce(k, v, source=str(path)) for k, v in raw.items()}


def _coerce(key: str, value: str, source: str):
    types = {f.name: f.type for f in TrainConfig.__dataclass_fields__.values()}
    kind = {"int": int, "float": float, "str": str, "bool": bool}.get(
        str(types.get(key)), None
    )
    if kind is None:
        raise ConfigError(f"{source}: unknown config key {key!r}")
    if kind is bool:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{source}: {key} must be true or false, got {value!r}")
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{source}: {key} expects {kind.__name__}, got {value!r}") from None


def _train_config(args, base: dict | None = None) -> TrainConfig:
    """Defaults, then a checkpoint's stored config (finetune), then the
    --config file, then explicit flags; later sources win."""
    merged = dict(base or TrainConfig().to_json())
    if getattr(args, "config", None):
        merged.update(_parse_config_file(args.config))
    for flag, field_name in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field_name] = value
    return TrainConfig.from_json(merged)


def _load_pairs(path) -> list[QAPair]:
    return load_jsonl(path, QAPair)


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    started = time.time()
    records = load_jsonl(args.inp, CQARecord)
    config = FilterConfig(
        min_question_tokens=args.min_q_tokens,
        min_answer_tokens=args.min_a_tokens,
        max_question_tokens=args.max_q_tokens,
        max_answer_tokens=args.max_a_tokens,
        blacklist=tuple(args.blacklist.split("|")) if args.blacklist else FilterConfig().blacklist,
    )
    pairs, report = preprocess_cqa(
        records, config, negatives_per_question=args.negatives, seed=args.seed
    )
    save_jsonl(args.out, pairs)
    outputs = [args.out]
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
        )
        outputs.append(args.report)
    print(json.dumps(report.to_json(), indent=2))
    _write_manifest(args.out, args, config.to_json(), [args.inp], outputs, started)
    return 0


def cmd_split(args) -> int:
    started = time.time()
    pairs = _load_pairs(args.inp)
    ratios = _csv_floats(args.ratios)
    if len(ratios) != 3:
        raise ConfigError(f"--ratios needs exactly three numbers, got {args.ratios!r}")
    train, dev, test = split_by_product(pairs, tuple(ratios), seed=args.seed)
    outputs = []
    for name, chunk in (("train", train), ("dev", dev), ("test", test)):
        path = f"{args.out_prefix}.{name}.jsonl"
        save_jsonl(path, chunk)
        outputs.append(path)
        print(f"{name}: {len(chunk)} pairs")
    _write_manifest(
        args.out_prefix, args, {"ratios": ratios, "seed": args.seed}, [args.inp], outputs, started
    )
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    train_pairs = _load_pairs(args.train)
    dev_pairs = _load_pairs(args.dev)
    vocab, table = load_embeddings(args.embeddings)
    model = build_model(cfg, vocab, table)
    ckpt = fit(model, train_pairs, dev_pairs, cfg)
    save_checkpoint(args.out, ckpt)
    for h in ckpt.history:
        print(f"epoch {h['epoch']}  train_loss {h['train_loss']:.6f}  dev_mrr {h['dev_mrr']:.6f}")
    if ckpt.best_epoch() is not None:
        print(f"best epoch {ckpt.best_epoch()}  dev_mrr {ckpt.best_dev_mrr():.6f}")
    inputs = [args.train, args.dev, args.embeddings]
    _write_manifest(args.out, args, cfg.to_json(), inputs, [args.out], started)
    return 0


def cmd_finetune(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.src)
    cfg = _train_config(args, base=ckpt.config.to_json())
    train_pairs = _load_pairs(args.train)
    dev_pairs = _load_pairs(args.dev)
    vocab, table = load_embeddings(args.embeddings)
    digest = vocab_digest(vocab, table)
    if digest != ckpt.vocab_digest:
        raise DataFormatError(
            f"{args.embeddings} does not match the checkpoint: digest {digest[:12]}… "
            f"vs {ckpt.vocab_digest[:12]}…"
        )
    model = build_model(cfg, vocab, table)
    apply_checkpoint(model, ckpt)
    tuned = fit(model, train_pairs, dev_pairs, cfg)
    save_checkpoint(args.out, tuned)
    for h in tuned.history:
        print(f"epoch {h['epoch']}  train_loss {h['train_loss']:.6f}  dev_mrr {h['dev_mrr']:.6f}")
    inputs = [args.src, args.train, args.dev, args.embeddings]
    _write_manifest(args.out, args, cfg.to_json(), inputs, [args.out], started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.ckpt)
    vocab, table = load_embeddings(args.embeddings)
    model = model_from_checkpoint(ckpt, vocab, table)
    pairs = _load_pairs(args.test)
    report = evaluate_pairs(model, pairs)
    print(f"mrr {report.mrr:.6f}")
    print(f"accuracy {report.accuracy:.6f}")
    print(f"groups {report.group_count}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
        inputs = [args.ckpt, args.test, args.embeddings]
        _write_manifest(args.out, args, ckpt.config.to_json(), inputs, [args.out], started)
    return 0


def cmd_rank(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    vocab, table = load_embeddings(args.embeddings)
    model = model_from_checkpoint(ckpt, vocab, table)
    catalog = index_catalog(load_jsonl(args.product_file, SpecProduct))
    product = catalog.get(args.product_id)
    if product is None:
        raise ReferentialIntegrityError(f"unknown product id {args.product_id!r}")
    names = [name for name, _ in product.specs]
    values = dict(product.specs)
    ranking = rank_candidates(model, args.question, names, group_id=args.product_id)
    if args.json:
        payload = {
            "product_id": args.product_id,
            "question": args.question,
            "ranked": [
                {
                    "spec_name": c.text,
                    "spec_value": values[c.text],
                    "probability": c.probability,
                }
                for c in ranking.candidates
            ],
        }
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        for place, c in enumerate(ranking.candidates, start=1):
            print(f"{place}. {c.text} = {values[c.text]}  ({c.probability:.6f})")
    return 0


def cmd_grid(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    vocab, table = load_embeddings(args.embeddings)
    source = (_load_pairs(args.source_train), _load_pairs(args.source_dev))
    target = (
        _load_pairs(args.target_train),
        _load_pairs(args.target_dev),
        _load_pairs(args.target_test),
    )
    result = run_experiment_grid(
        vocab,
        table,
        source,
        target,
        fractions=tuple(_csv_floats(args.fractions)),
        seeds=tuple(range(args.seeds)),
        config=cfg,
    )
    print(result.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_json(), indent=2) + "\n", encoding="utf-8")
        inputs = [
            args.source_train,
            args.source_dev,
            args.target_train,
            args.target_dev,
            args.target_test,
            args.embeddings,
        ]
        _write_manifest(args.out, args, cfg.to_json(), inputs, [args.out], started)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint_path=args.ckpt,
        embeddings_path=args.embeddings,
        catalog_path=args.catalog,
        templates_path=args.templates,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specmatch",
        description="Rank product specifications against natural-language questions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter a community Q&A dump and sample negatives")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-q-tokens", type=int, default=FilterConfig().min_question_tokens)
    p.add_argument("--min-a-tokens", type=int, default=FilterConfig().min_answer_tokens)
    p.add_argument("--max-q-tokens", type=int, default=FilterConfig().max_question_tokens)
    p.add_argument("--max-a-tokens", type=int, default=FilterConfig().max_answer_tokens)
    p.add_argument("--blacklist", default=None, help="pipe-separated phrases")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="split pairs into train/dev/test by product")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    def add_train_flags(p):
        p.add_argument("--config", default=None)
        p.add_argument("--hidden", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--optimizer", choices=("sgd", "adam"), default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--cell-variant", choices=("paper", "standard"), default=None)
        p.add_argument(
            "--freeze-embeddings", action=argparse.BooleanOptionalAction, default=None
        )

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training from a checkpoint")
    p.add_argument("--from", dest="src", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on a labeled test set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="rank one product's specs against a question")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--product-file", required=True)
    p.add_argument("--product-id", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("grid", help="run the transfer experiment grid")
    p.add_argument("--source-train", required=True)
    p.add_argument("--source-dev", required=True)
    p.add_argument("--target-train", required=True)
    p.add_argument("--target-dev", required=True)
    p.add_argument("--target-test", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--fractions", default="0.1,0.5,1.0")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None)
    add_train_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("serve", help="serve ranking over HTTP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--templates", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args._argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except (ConfigError, TransferError, CheckpointVersionError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (
        DataFormatError,
        EmptyInputError,
        InsufficientDataError,
        ReferentialIntegrityError,
        CheckpointCorruptionError,
        FileNotFoundError,
        IsADirectoryError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, SpecmatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
