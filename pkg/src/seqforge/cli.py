"""Command-line entry point: preprocess, train, translate, serve.

Option precedence: built-in defaults, then a -config JSON file, then flags.
The config file uses the same schema as the checkpoint header's config
sections ("model_config", "train_config", plus "decode_config" and flat path
options). The fully resolved configuration is echoed to the log before any
work starts. Logs go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .data import (
    DEFAULT_FEATURE_SEP,
    Example,
    ParallelDataset,
    VocabBundle,
    build_vocab,
    encode_line,
    tokenize,
)
from .decoding import DecodeOptions, translate_batch
from .errors import ConfigError, SeqforgeError
from .model import init_params, model_config_from_dict
from .server import TranslationServer
from .trainer import train, train_config_from_dict

log = logging.getLogger("seqforge")

_MODEL_FLAGS = {
    "layers": (int, 2),
    "rnn_size": (int, 500),
    "word_vec_size": (int, 500),
    "feat_vec_size": (int, 20),
    "bidirectional": (int, 0),
    "residual": (int, 0),
    "input_feed": (int, 1),
    "dropout": (float, 0.0),
}

_TRAIN_FLAGS = {
    "epochs": (int, 13),
    "batch_size": (int, 64),
    "learning_rate": (float, 1.0),
    "decay_rate": (float, 0.5),
    "start_decay_at": (int, 9),
    "max_grad_norm": (float, 5.0),
    "sample_fraction": (float, 1.0),
    "rng_seed": (int, 3435),
}

_DECODE_FLAGS = {
    "beam_size": (int, 5),
    "n_best": (int, 1),
    "max_len": (int, 100),
    "length_alpha": (float, 0.0),
    "replace_unk": (int, 0),
}

# key -> (required, must already exist)
_PATH_FLAGS = {
    "preprocess": {
        "train_src": (True, True), "train_tgt": (True, True),
        "valid_src": (True, True), "valid_tgt": (True, True),
        "save_data": (True, False),
    },
    "train": {
        "data": (True, True), "save_model": (False, False),
        "from_checkpoint": (False, True),
    },
    "translate": {
        "model": (True, True), "src": (True, True), "output": (False, False),
    },
    "serve": {"model": (True, True)},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="seqforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="build vocabularies and encode a corpus")
    for name in ("train_src", "train_tgt", "valid_src", "valid_tgt", "save_data"):
        pre.add_argument(f"-{name}")
    for name, typ in (
        ("src_vocab_size", int), ("tgt_vocab_size", int), ("feat_vocab_size", int),
        ("min_freq", int), ("src_seq_length", int), ("tgt_seq_length", int),
    ):
        pre.add_argument(f"-{name}", type=typ)
    pre.add_argument("-feature_sep")

    tr = sub.add_parser("train", help="train a model on a preprocessed dataset")
    for name in ("data", "save_model", "from_checkpoint"):
        tr.add_argument(f"-{name}")
    tr.add_argument("-dtype", choices=("float32", "float64"))
    for name, (typ, _) in {**_MODEL_FLAGS, **_TRAIN_FLAGS}.items():
        tr.add_argument(f"-{name}", type=typ)

    for cmd in ("translate", "serve"):
        p = sub.add_parser(cmd, help=f"{cmd} with a trained checkpoint")
        p.add_argument("-model")
        if cmd == "translate":
            p.add_argument("-src")
            p.add_argument("-output")
        else:
            p.add_argument("-host")
            p.add_argument("-port", type=int)
        for name, (typ, _) in _DECODE_FLAGS.items():
            p.add_argument(f"-{name}", type=typ)

    for p in (pre, tr) + tuple(sub.choices[c] for c in ("translate", "serve")):
        p.add_argument("-config", help="JSON config file")
    return parser


_PRE_DEFAULTS = {
    "src_vocab_size": 50000, "tgt_vocab_size": 50000, "feat_vocab_size": 1000,
    "min_freq": 1, "src_seq_length": 50, "tgt_seq_length": 50,
    "feature_sep": DEFAULT_FEATURE_SEP,
}
_SERVE_DEFAULTS = {"host": "127.0.0.1", "port": 5620}


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError("config", f"file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config", "top level must be an object")
    return obj


def _merge(defaults: dict, file_section: dict, flags: dict, known: set) -> dict:
    for key in file_section:
        if key not in known:
            raise ConfigError(key, "unknown option in config file")
    out = dict(defaults)
    out.update(file_section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def parse_config(argv) -> tuple[str, dict]:
    """Resolve a subcommand plus its option groups from argv and config file."""
    args = vars(_build_parser().parse_args(argv))
    command = args.pop("command")
    file_cfg = _load_config_file(args.pop("config", None))

    resolved: dict = {"command": command}
    flat_file = {
        k: v for k, v in file_cfg.items()
        if k not in ("model_config", "train_config", "decode_config")
    }
    if command == "preprocess":
        known = set(_PRE_DEFAULTS) | set(_PATH_FLAGS["preprocess"])
        resolved.update(_merge(_PRE_DEFAULTS, flat_file, args, known))
    elif command == "train":
        paths = {k: args.pop(k, None) for k in ("data", "save_model", "from_checkpoint")}
        dtype = args.pop("dtype", None)
        model_flags = {k: args.pop(k) for k in _MODEL_FLAGS}
        train_flags = {k: args.pop(k) for k in _TRAIN_FLAGS}
        defaults = {"data": None, "save_model": None, "from_checkpoint": None,
                    "dtype": "float32"}
        top = _merge(defaults, flat_file, {**paths, "dtype": dtype}, set(defaults))
        resolved.update(top)
        model_defaults = {k: d for k, (_, d) in _MODEL_FLAGS.items()}
        resolved["model_config"] = _merge(
            model_defaults, file_cfg.get("model_config", {}), model_flags,
            set(model_defaults) | {"src_vocab_size", "tgt_vocab_size",
                                   "feat_vocab_sizes"},
        )
        train_defaults = {k: d for k, (_, d) in _TRAIN_FLAGS.items()}
        resolved["train_config"] = _merge(
            train_defaults, file_cfg.get("train_config", {}), train_flags,
            set(train_defaults) | {"dropout"},
        )
        # One -dropout flag feeds both the architecture and the schedule.
        resolved["train_config"]["dropout"] = resolved["model_config"]["dropout"]
    else:
        path_names = ("model", "src", "output") if command == "translate" else ("model",)
        paths = {k: args.pop(k, None) for k in path_names}
        serve_flags = {}
        if command == "serve":
            serve_flags = {"host": args.pop("host"), "port": args.pop("port")}
        decode_flags = {k: args.pop(k) for k in _DECODE_FLAGS}
        defaults: dict = {k: None for k in path_names}
        if command == "serve":
            defaults.update(_SERVE_DEFAULTS)
        top = _merge(defaults, flat_file, {**paths, **serve_flags}, set(defaults))
        resolved.update(top)
        decode_defaults = {k: d for k, (_, d) in _DECODE_FLAGS.items()}
        resolved["decode_config"] = _merge(
            decode_defaults, file_cfg.get("decode_config", {}), decode_flags,
            set(decode_defaults),
        )

    _validate_paths(command, resolved)
    return command, resolved


def _validate_paths(command: str, resolved: dict) -> None:
    for key, (required, must_exist) in _PATH_FLAGS[command].items():
        value = resolved.get(key)
        if value is None:
            if required:
                raise ConfigError(key, "required path is missing")
            continue
        if must_exist and not os.path.exists(value):
            raise ConfigError(key, f"path does not exist: {value}")


def _decode_options(resolved: dict) -> DecodeOptions:
    d = resolved["decode_config"]
    return DecodeOptions(
        beam_size=d["beam_size"], n_best=d["n_best"], max_len=d["max_len"],
        length_alpha=d["length_alpha"], replace_unk=bool(d["replace_unk"]),
    ).validate()


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def run_preprocess(cfg: dict) -> int:
    src_lines = _read_lines(cfg["train_src"])
    tgt_lines = _read_lines(cfg["train_tgt"])
    if len(src_lines) != len(tgt_lines):
        raise ConfigError(
            "train_tgt",
            f"{len(src_lines)} source lines but {len(tgt_lines)} target lines",
        )
    sep = cfg["feature_sep"]
    first_tokens = next((tokenize(l) for l in src_lines if tokenize(l)), None)
    if first_tokens is None:
        raise ConfigError("train_src", "corpus contains no tokens")
    num_features = first_tokens[0].count(sep)

    def words_only(line):
        return " ".join(t.split(sep)[0] for t in tokenize(line))

    src_vocab = build_vocab((words_only(l) for l in src_lines), cfg["src_vocab_size"],
                            cfg["min_freq"])
    tgt_vocab = build_vocab(tgt_lines, cfg["tgt_vocab_size"], cfg["min_freq"])
    feat_vocabs = []
    for k in range(num_features):
        streams = (
            " ".join(t.split(sep)[k + 1] for t in tokenize(l) if t.count(sep) == num_features)
            for l in src_lines
        )
        feat_vocabs.append(build_vocab(streams, cfg["feat_vocab_size"], 1))
    vocabs = VocabBundle(src_vocab, tgt_vocab, feat_vocabs, sep)

    def encode_pairs(src_list, tgt_list, label):
        out, dropped = [], 0
        for i, (s, t) in enumerate(zip(src_list, tgt_list), start=1):
            word_ids, feat_ids = encode_line(s, src_vocab, feat_vocabs, "src", sep, i)
            tgt_ids = encode_line(t, tgt_vocab, (), "tgt", sep, i)
            if not word_ids or len(tgt_ids) == 2:
                dropped += 1
                continue
            if len(word_ids) > cfg["src_seq_length"] or \
                    len(tgt_ids) - 2 > cfg["tgt_seq_length"]:
                dropped += 1
                continue
            out.append(Example(word_ids, feat_ids, tgt_ids))
        if dropped:
            log.info("%s: dropped %d empty/over-length pair(s)", label, dropped)
        return out

    train_ex = encode_pairs(src_lines, tgt_lines, "train")
    valid_ex = encode_pairs(
        _read_lines(cfg["valid_src"]), _read_lines(cfg["valid_tgt"]), "valid"
    )
    dataset = ParallelDataset(vocabs, train_ex, valid_ex)
    ckpt.save_dataset(cfg["save_data"], dataset)
    log.info(
        "saved %s: %d train, %d valid, vocab %d/%d, %d feature(s)",
        cfg["save_data"], len(train_ex), len(valid_ex),
        len(src_vocab), len(tgt_vocab), num_features,
    )
    return 0


def run_train(cfg: dict) -> int:
    dataset = ckpt.load_dataset(cfg["data"])
    tconf = train_config_from_dict(cfg["train_config"])
    if cfg.get("from_checkpoint"):
        loaded = ckpt.load_checkpoint(cfg["from_checkpoint"])
        params, state = loaded.params, loaded.train_state
        log.info("resuming from %s at epoch %d", cfg["from_checkpoint"], state.epoch)
    else:
        mc = dict(cfg["model_config"])
        mc["src_vocab_size"] = len(dataset.vocabs.src)
        mc["tgt_vocab_size"] = len(dataset.vocabs.tgt)
        mc["feat_vocab_sizes"] = [len(v) for v in dataset.vocabs.feats]
        mc["bidirectional"] = bool(mc["bidirectional"])
        mc["residual"] = bool(mc["residual"])
        mc["input_feed"] = bool(mc["input_feed"])
        config = model_config_from_dict(mc)
        params = init_params(config, tconf.rng_seed, dtype=np.dtype(cfg["dtype"]))
        state = None
        log.info("initialized %d parameters", params.param_count())
    state = train(params, dataset, tconf, save_prefix=cfg.get("save_model"), state=state)
    log.info("finished at epoch %d, best validation perplexity %.4f",
             state.epoch, state.best_valid_ppl if state.best_valid_ppl else float("nan"))
    return 0


def format_nbest(results, n_best: int) -> str:
    """n-best blocks: one "score<TAB>text" line per candidate, blank line
    between groups when more than one candidate is requested."""
    blocks = [
        "\n".join(f"{t.score:.6f}\t{t.text}" for t in nbest) for nbest in results
    ]
    sepr = "\n\n" if n_best > 1 else "\n"
    return sepr.join(blocks) + "\n"


def run_translate(cfg: dict) -> int:
    loaded = ckpt.load_checkpoint(cfg["model"])
    opts = _decode_options(cfg)
    lines = _read_lines(cfg["src"])
    results = translate_batch(
        loaded.params, loaded.model_config, lines, loaded.vocabs, opts
    )
    text = format_nbest(results, opts.n_best)
    if cfg.get("output"):
        with open(cfg["output"], "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def run_serve(cfg: dict) -> int:
    loaded = ckpt.load_checkpoint(cfg["model"])
    opts = _decode_options(cfg)
    server = TranslationServer(
        (cfg["host"], cfg["port"]), loaded.params, loaded.model_config,
        loaded.vocabs, opts,
    )
    log.info("serving %s on %s:%d", cfg["model"], cfg["host"], server.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


_RUNNERS = {
    "preprocess": run_preprocess,
    "train": run_train,
    "translate": run_translate,
    "serve": run_serve,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        command, resolved = parse_config(
            list(sys.argv[1:]) if argv is None else list(argv)
        )
        log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
        return _RUNNERS[command](resolved)
    except SeqforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
