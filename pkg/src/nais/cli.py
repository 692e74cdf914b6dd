"""Command-line entry points.

Exit codes: 0 success, 1 unreadable data or model file, 2 usage error,
3 training divergence, 4 unknown user or item, 5 refresh check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .baselines import itemknn_score_fn, itemknn_similarities, pop_score_fn, pop_scores
from .data import ConsistencyError, DataFormatError, load_ncf_dataset, dataset_paths, write_ncf_dataset
from .evaluate import attention_stats, evaluate, evaluate_params, explain, write_attention_csv
from .model import ConfigurationError, EmptyHistoryError, FismParams, NaisParams, nais_predict, refresh_prediction
from .store import ModelFileError, PopModel, load_model, save_model
from .synthetic import clustered_dataset
from .train import DivergenceError, TrainConfig, train_fism, train_nais

EXIT_DATA, EXIT_USAGE, EXIT_DIVERGED, EXIT_UNKNOWN_ID, EXIT_CHECK = 1, 2, 3, 4, 5


class UnknownIdError(LookupError):
    pass


def _unit_interval(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _non_negative(kind):
    def parse(text):
        value = kind(text)
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return value

    return parse


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value

    return parse


def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", metavar="PREFIX",
                   help="reads PREFIX.train.rating, PREFIX.test.rating, PREFIX.test.negative")
    g.add_argument("--train", metavar="FILE")
    g.add_argument("--test", metavar="FILE")
    g.add_argument("--negatives", metavar="FILE")


def _add_model_arg(p):
    p.add_argument("--model", required=True, metavar="FILE", help="saved model file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nais", description="Train and evaluate FISM and NAIS item-similarity recommenders."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train FISM, NAIS or the popularity model")
    _add_data_args(t)
    t.add_argument("--model", required=True, choices=["fism", "nais-concat", "nais-prod", "pop"])
    t.add_argument("--k", type=_positive(int), default=16, help="embedding size")
    t.add_argument("--attention-factor", type=_positive(int), default=16, help="attention width a")
    t.add_argument("--alpha", type=_non_negative(float), default=0.0)
    t.add_argument("--beta", type=_unit_interval, default=0.5)
    t.add_argument("--lambda", dest="lam", type=_non_negative(float), default=0.0)
    t.add_argument("--lr", type=_positive(float), default=0.01)
    t.add_argument("--epochs", type=_non_negative(int), default=50)
    t.add_argument("--neg-ratio", type=_positive(int), default=4)
    t.add_argument("--topk", type=_positive(int), default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--eval-every", type=_non_negative(int), default=0,
                   help="evaluate every N epochs (0 = only at the end)")
    t.add_argument("--pretrain", metavar="FILE", help="FISM model whose embeddings seed NAIS")
    t.add_argument("--engine", choices=["fast", "reference"], default="fast")
    t.add_argument("--out", required=True, metavar="FILE")

    e = sub.add_parser("eval", help="leave-one-out HR@K / NDCG@K")
    _add_data_args(e)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", metavar="FILE")
    src.add_argument("--baseline", choices=["pop", "itemknn"])
    e.add_argument("--neighbors", type=_positive(int), help="ItemKNN neighbourhood size")
    e.add_argument("--topk", type=_positive(int), default=10)
    e.add_argument("--per-user", action="store_true", help="also print user, hr, ndcg rows")

    x = sub.add_parser("explain", help="attention breakdown of one prediction")
    _add_data_args(x)
    _add_model_arg(x)
    x.add_argument("--user", type=int, required=True)
    x.add_argument("--item", type=int, required=True)

    s = sub.add_parser("stats", help="per-prediction attention mean/variance as CSV")
    _add_data_args(s)
    _add_model_arg(s)
    s.add_argument("--out", required=True, metavar="CSV")

    r = sub.add_parser("refresh-demo", help="stream interactions into a cached score")
    _add_data_args(r)
    _add_model_arg(r)
    r.add_argument("--user", type=int, required=True)
    r.add_argument("--item", type=int, required=True, help="watched candidate")
    r.add_argument("--events", required=True, metavar="FILE",
                   help="one 'user<TAB>item' interaction per line")
    r.add_argument("--check-every", type=_positive(int), default=100)
    r.add_argument("--tol", type=_positive(float), default=1e-8)

    g = sub.add_parser("synth", help="write a seeded synthetic dataset in the rating-file format")
    g.add_argument("--out", required=True, metavar="PREFIX")
    g.add_argument("--users", type=_positive(int), default=600)
    g.add_argument("--items", type=_positive(int), default=800)
    g.add_argument("--clusters", type=_positive(int), default=40)
    g.add_argument("--seed", type=int, default=0)
    return parser


def _banner(command, values, out=None):
    out = out or sys.stdout
    print(f"# command={command}", file=out)
    for key, value in values.items():
        print(f"# {key}={value}", file=out)


def _load_dataset(args, parser):
    if args.data:
        if args.train or args.test or args.negatives:
            parser.error("--data cannot be combined with --train/--test/--negatives")
        return load_ncf_dataset(*dataset_paths(args.data))
    if not (args.train and args.test and args.negatives):
        parser.error("give --data PREFIX or all of --train, --test, --negatives")
    return load_ncf_dataset(args.train, args.test, args.negatives)


def _data_banner(args):
    if args.data:
        return {"data": args.data}
    return {"train": args.train, "test": args.test, "negatives": args.negatives}


def _check_user(ds, user):
    if not 0 <= user < ds.num_users:
        raise UnknownIdError(f"unknown user {user} (dataset has {ds.num_users} users)")


def _check_item(ds, item, num_items=None):
    n = ds.num_items if num_items is None else min(ds.num_items, num_items)
    if not 0 <= item < n:
        raise UnknownIdError(f"unknown item {item} (dataset has {n} items)")


def _check_model_fits(model, ds):
    if model.num_items != ds.num_items:
        raise ConfigurationError(
            f"model covers {model.num_items} items but the dataset has {ds.num_items}"
        )


def cmd_train(args, parser) -> int:
    ds = _load_dataset(args, parser)
    banner = {"model": args.model, **_data_banner(args)}
    if args.model == "pop":
        banner.update(topk=args.topk, out=args.out)
        _banner("train", banner)
        model = PopModel(pop_scores(ds))
        save_model(model, args.out)
        for line in evaluate(pop_score_fn(model.scores), ds, args.topk).lines():
            print(line)
        return 0
    try:
        cfg = TrainConfig(
            model=args.model, k=args.k, a=args.attention_factor, alpha=args.alpha,
            beta=args.beta, lam=args.lam, lr=args.lr, epochs=args.epochs,
            neg_ratio=args.neg_ratio, seed=args.seed, pretrain_path=args.pretrain,
            eval_every=args.eval_every, topk=args.topk,
        )
    except ConfigurationError as err:
        parser.error(str(err))
    init = None
    if args.pretrain:
        if args.model == "fism":
            parser.error("--pretrain only applies to NAIS models")
        init = load_model(args.pretrain)
        if not isinstance(init, FismParams):
            parser.error(f"{args.pretrain} is not a FISM model")
    banner.update(
        k=cfg.k, attention_factor=cfg.a if cfg.variant else "n/a", alpha=cfg.alpha,
        beta=cfg.beta if cfg.variant else "n/a", **{"lambda": cfg.lam}, lr=cfg.lr,
        epochs=cfg.epochs, neg_ratio=cfg.neg_ratio, topk=cfg.topk, seed=cfg.seed,
        init_seed=cfg.seed, epoch_seeds=f"{cfg.seed}+epoch (0-based)", eps=cfg.eps,
        init_std=cfg.init_std, pretrain=args.pretrain or "none", eval_every=cfg.eval_every,
        engine=args.engine, out=args.out,
    )
    _banner("train", banner)
    print("epoch\tloss\tseconds\thr\tndcg")

    def on_epoch(epoch, params, entry):
        if entry is not None:
            print(entry.line(), flush=True)

    if cfg.variant is None:
        params, _ = train_fism(ds, cfg, engine=args.engine, on_epoch=on_epoch)
    else:
        params, _ = train_nais(ds, cfg, init, engine=args.engine, on_epoch=on_epoch)
    save_model(params, args.out)
    for line in evaluate_params(params, ds, cfg.topk).lines():
        print(line)
    return 0


def cmd_eval(args, parser) -> int:
    ds = _load_dataset(args, parser)
    banner = {**_data_banner(args), "topk": args.topk}
    if args.baseline:
        if args.neighbors and args.baseline != "itemknn":
            parser.error("--neighbors only applies to itemknn")
        banner.update(baseline=args.baseline, neighbors=args.neighbors or "all")
        _banner("eval", banner)
        if args.baseline == "pop":
            report = evaluate(pop_score_fn(pop_scores(ds)), ds, args.topk)
        else:
            sims = itemknn_similarities(ds, args.neighbors)
            report = evaluate(itemknn_score_fn(sims), ds, args.topk)
    else:
        banner["model"] = args.model
        _banner("eval", banner)
        model = load_model(args.model)
        _check_model_fits(model, ds)
        if isinstance(model, PopModel):
            report = evaluate(pop_score_fn(model.scores), ds, args.topk)
        else:
            report = evaluate_params(model, ds, args.topk)
    for line in report.lines():
        print(line)
    if args.per_user:
        for u, hr, nd in zip(report.users, report.per_user_hr, report.per_user_ndcg):
            print(f"{u}\t{hr}\t{nd:.6f}")
    return 0


def _trained_model(args):
    model = load_model(args.model)
    if isinstance(model, PopModel):
        raise ConfigurationError("the popularity model has no per-item weights to inspect")
    return model


def cmd_explain(args, parser) -> int:
    ds = _load_dataset(args, parser)
    _banner("explain", {**_data_banner(args), "model": args.model,
                        "user": args.user, "item": args.item})
    model = _trained_model(args)
    _check_user(ds, args.user)
    _check_item(ds, args.item, model.num_items)
    result = explain(model, ds, args.user, args.item)
    print("history_item\tweight")
    for line in result.lines():
        print(line)
    return 0


def cmd_stats(args, parser) -> int:
    ds = _load_dataset(args, parser)
    _banner("stats", {**_data_banner(args), "model": args.model, "out": args.out})
    model = _trained_model(args)
    _check_model_fits(model, ds)
    rows = attention_stats(model, ds)
    write_attention_csv(rows, args.out)
    print(f"rows\t{len(rows)}")
    if rows:
        print(f"median_variance\t{np.median([r.variance for r in rows]):.6g}")
    return 0


def _read_events(path):
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise DataFormatError(path, lineno, "expected 'user item'")
            try:
                events.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataFormatError(path, lineno, "non-integer id") from None
    return events


def cmd_refresh_demo(args, parser) -> int:
    ds = _load_dataset(args, parser)
    _banner("refresh-demo", {**_data_banner(args), "model": args.model, "user": args.user,
                             "item": args.item, "events": args.events,
                             "check_every": args.check_every, "tol": args.tol})
    model = _trained_model(args)
    if not isinstance(model, NaisParams):
        raise ConfigurationError("refresh-demo needs a NAIS model")
    _check_user(ds, args.user)
    _check_item(ds, args.item, model.num_items)
    history = [int(j) for j in ds.histories[args.user]]
    score, cache = nais_predict(model, history, args.item, user=args.user)
    applied = skipped = checks = failures = 0
    worst = 0.0
    for user, item in _read_events(args.events):
        if user != args.user:
            continue
        _check_item(ds, item, model.num_items)
        if item == args.item or item in cache.items:
            skipped += 1
            continue
        score, cache = refresh_prediction(model, cache, item)
        history.append(item)
        applied += 1
        if applied % args.check_every == 0:
            full = nais_predict(model, history, args.item)[0]
            err = abs(score - full) / max(1.0, abs(full))
            worst = max(worst, err)
            checks += 1
            if err > args.tol:
                failures += 1
                print(f"MISMATCH\tstep={applied}\tcached={score!r}\tfull={full!r}")
    print(f"applied\t{applied}\nskipped\t{skipped}\nchecks\t{checks}")
    print(f"failures\t{failures}\nmax_rel_error\t{worst:.3e}\nscore\t{score!r}")
    return EXIT_CHECK if failures else 0


def cmd_synth(args, parser) -> int:
    _banner("synth", {"out": args.out, "users": args.users, "items": args.items,
                      "clusters": args.clusters, "seed": args.seed,
                      "split_seed": args.seed + 1})
    ds = clustered_dataset(seed=args.seed, num_users=args.users, num_items=args.items,
                           num_clusters=args.clusters)
    write_ncf_dataset(ds, args.out)
    print(f"users\t{ds.num_users}\nitems\t{ds.num_items}\ninteractions\t{ds.num_interactions}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "stats": cmd_stats,
    "refresh-demo": cmd_refresh_demo,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, parser)
    except DivergenceError as err:
        print(f"nais: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except UnknownIdError as err:
        print(f"nais: {err}", file=sys.stderr)
        return EXIT_UNKNOWN_ID
    except EmptyHistoryError as err:
        print(f"nais: {err}", file=sys.stderr)
        return EXIT_UNKNOWN_ID
    except ConfigurationError as err:
        print(f"nais: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ConsistencyError, ModelFileError, OSError) as err:
        print(f"nais: {err}", file=sys.stderr)
        return EXIT_DATA
