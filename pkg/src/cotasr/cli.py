"""Command-line entry point: ``cotasr <command> [--config FILE] [--key value ...]``.

Every command reads its parameters from three layers, later layers winning:

1. built-in defaults (listed by ``cotasr <command> --help``),
2. an optional config file of ``key = value`` lines (``#`` starts a comment),
3. command-line flags (``--stage2-steps 500`` sets ``stage2_steps``),

and finally the ``COTASR_SEED`` environment variable, which overrides ``seed``
whatever the other layers say.  Unknown keys are rejected.  The resolved
configuration is written as ``config.echo`` (same key=value format, so it can
be fed back with ``--config``) into the command's output directory.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import CheckpointError, ConfigError, CotAsrError, TrainingDivergedError
from .training import TrainConfig

log = logging.getLogger("cotasr")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (type, default, help); the tables double as the documented schema
CORPUS_KEYS = {
    "noise_sigma": (float, 0.1, "feature noise standard deviation"),
    "entity_rate": (float, 0.9, "probability an utterance contains an entity"),
    "homophone_fraction": (float, 0.3, "fraction of utterances built around a homophone entity"),
    "min_words": (int, 3, "minimum words per utterance"),
    "max_words": (int, 8, "maximum words per utterance"),
    "cue_rate": (float, 0.75, "probability of a domain cue word"),
    "lexicon": (str, "", "JSON lexicon file (default: built-in lexicon)"),
}
DATA_KEYS = {
    "corpus": (str, "", "corpus directory written by synth (default: synthesize on the fly)"),
    "data_seed": (int, 1, "corpus seed when synthesizing on the fly"),
    "n": (int, 2000, "utterances when synthesizing on the fly"),
}
TRAIN_KEYS = {
    "mode": (str, "cot", "target layout: cot or plain"),
    "adapter": (str, "ctc", "modality adapter: ctc or linear"),
    "lam": (float, 0.5, "CTC weight in the joint loss"),
    "stage1_steps": (int, 300, "adapter-only steps"),
    "stage2_steps": (int, 3000, "full fine-tuning steps"),
    "peak_lr": (float, TrainConfig.peak_lr, "peak learning rate"),
    "warmup_steps": (int, 100, "linear warmup steps per stage"),
    "batch_size": (int, TrainConfig.batch_size, "utterances per step"),
    "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    "clip_norm": (float, 1.0, "global gradient-norm clip (0 disables)"),
    "loss_norm": (str, "token", "gradient normalization: token or sum"),
    "feature_noise": (float, TrainConfig.feature_noise, "std of Gaussian noise added to training features"),
    "token_replace": (float, TrainConfig.token_replace, "chance of replacing a teacher-forced input token"),
    "dropout": (float, TrainConfig.dropout, "decoder residual dropout"),
    "d_model": (int, 64, "decoder width"),
    "n_blocks": (int, 2, "decoder blocks"),
    "n_heads": (int, 4, "attention heads"),
    "d_enc": (int, 32, "encoder width"),
    "enc_blocks": (int, 2, "encoder residual blocks"),
    "tau": (float, 0.05, "adapter posterior threshold"),
    "renormalize": (_bool, False, "renormalize thresholded posteriors"),
    "model_seed": (int, 0, "parameter initialization seed"),
}

SCHEMAS: dict[str, dict] = {
    "synth": {
        "seed": (int, 1, "corpus seed"),
        "n": (int, 2000, "number of utterances"),
        "out": (str, "corpus", "output directory"),
        **CORPUS_KEYS,
    },
    "train": {
        "seed": (int, 42, "batch-order seed"),
        "out": (str, "run", "output directory"),
        "log_every": (int, 100, "progress log interval in steps"),
        **DATA_KEYS, **TRAIN_KEYS,
    },
    "transcribe": {
        "checkpoint": (str, "run/model.ckpt", "trained checkpoint"),
        "seed": (int, 0, "context corruption seed"),
        "out": (str, "decode", "output directory"),
        "mode": (str, "", "self, user or plain (default: plain for plain-trained models, "
                          "user when contexts are supplied or corrupted, else self)"),
        "user_context_file": (str, "", "one context per line, aligned with the corpus"),
        "context_error_rate": (float, 0.0, "word error rate applied to user contexts"),
        "max_len": (int, 160, "generation budget in tokens"),
        **{**DATA_KEYS, "data_seed": (int, 2, DATA_KEYS["data_seed"][2]), "n": (int, 200, DATA_KEYS["n"][2])},
    },
    "score": {
        "records": (str, "decode", "records.jsonl (or its directory) written by transcribe"),
        "seed": (int, 0, "unused; accepted for uniformity"),
        "out": (str, "score", "output directory"),
        "bias_list": (str, "", "bias word list, one word per line"),
        "system": (str, "system", "system name in the report"),
        "test_set": (str, "heldout", "test-set name in the report"),
        "corpus": (str, "", "reference corpus (default: references embedded in the records)"),
    },
    "gradcheck": {
        "seed": (int, 0, "instance seed"),
        "out": (str, "gradcheck", "output directory"),
        "n": (int, 50, "random micro-instances per component"),
        "tolerance": (float, 1e-4, "max relative error"),
        "components": (str, "all", "comma-separated subset of adapter,ctc,ce,encoder,decoder,joint"),
        "inject_wrong_sign": (str, "", "negate this component's analytic gradient (self-test)"),
    },
    "ablate": {
        "seed": (int, 42, "batch-order seed"),
        "out": (str, "ablate", "output directory"),
        "train_seed": (int, 1, "training corpus seed"),
        "heldout_seed": (int, 2, "held-out corpus seed"),
        "n_train": (int, 2000, "training utterances"),
        "n_heldout": (int, 200, "held-out utterances"),
        "max_len": (int, 160, "generation budget in tokens"),
        **CORPUS_KEYS,
        **{k: v for k, v in TRAIN_KEYS.items() if k not in ("mode", "adapter")},
    },
}


# --- configuration ----------------------------------------------------------

def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve_config(command: str, file_values: dict[str, str], flag_values: dict[str, object],
                   env: dict[str, str] | None = None) -> dict:
    schema = SCHEMAS[command]
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {k: d for k, (_, d, _) in schema.items()}
    raw = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    env = os.environ if env is None else env
    if env.get("COTASR_SEED", "").strip():
        raw["seed"] = env["COTASR_SEED"]
    for k, v in raw.items():
        typ = schema[k][0]
        try:
            cfg[k] = typ(v)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    return cfg


def write_echo(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# cotasr {command}"] + [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    (out / "config.echo").write_text("\n".join(lines) + "\n")


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


# --- shared builders ----------------------------------------------------------

def _lexicon(cfg):
    from .synthdata import Lexicon
    if not cfg.get("lexicon"):
        return None
    p = _existing(cfg["lexicon"], "lexicon file")
    try:
        lex = Lexicon.from_file(p)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"unreadable lexicon file {p}: {e}") from None
    lex.validate()
    return lex


def _corpus_config(cfg, seed: int, n: int):
    from .synthdata import CorpusConfig
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 1 <= cfg["min_words"] <= cfg["max_words"]:
        raise ConfigError("need 1 <= min_words <= max_words")
    for k in ("entity_rate", "homophone_fraction", "cue_rate"):
        if not 0.0 <= cfg[k] <= 1.0:
            raise ConfigError(f"{k} must be in [0, 1]")
    if cfg["noise_sigma"] < 0:
        raise ConfigError("noise_sigma must be >= 0")
    return CorpusConfig(n_utterances=n, seed=seed, min_words=cfg["min_words"], max_words=cfg["max_words"],
                        entity_rate=cfg["entity_rate"], homophone_fraction=cfg["homophone_fraction"],
                        cue_rate=cfg["cue_rate"], noise_sigma=cfg["noise_sigma"])


def _load_corpus(cfg):
    from .synthdata import CorpusConfig, read_corpus, synth_corpus
    if cfg.get("corpus"):
        return read_corpus(_existing(cfg["corpus"], "corpus"))
    if cfg["n"] < 1:
        raise ConfigError("n must be >= 1")
    return synth_corpus(cfg["data_seed"], cfg["n"], CorpusConfig(n_utterances=cfg["n"], seed=cfg["data_seed"]))


def _train_config(cfg):
    return TrainConfig(lam=cfg["lam"], stage1_steps=cfg["stage1_steps"], stage2_steps=cfg["stage2_steps"],
                       peak_lr=cfg["peak_lr"], warmup_steps=cfg["warmup_steps"], batch_size=cfg["batch_size"],
                       seed=cfg["seed"], weight_decay=cfg["weight_decay"], clip_norm=cfg["clip_norm"],
                       loss_norm=cfg["loss_norm"], feature_noise=cfg["feature_noise"],
                       token_replace=cfg["token_replace"], dropout=cfg["dropout"])


def _model_config(cfg, adapter: str):
    from .model import ModelConfig
    if adapter not in ("ctc", "linear"):
        raise ConfigError(f"adapter must be ctc or linear, got {adapter!r}")
    if cfg["d_model"] % cfg["n_heads"]:
        raise ConfigError("d_model must be divisible by n_heads")
    return ModelConfig(d_model=cfg["d_model"], n_blocks=cfg["n_blocks"], n_heads=cfg["n_heads"],
                       d_enc=cfg["d_enc"], enc_blocks=cfg["enc_blocks"], adapter=adapter, tau=cfg["tau"],
                       renormalize=cfg["renormalize"], seed=cfg["model_seed"])


def _check_mode(mode: str) -> str:
    if mode not in ("cot", "plain"):
        raise ConfigError(f"mode must be cot or plain, got {mode!r}")
    return mode


# --- commands -------------------------------------------------------------

def cmd_synth(cfg: dict) -> int:
    from .synthdata import config_dict, synth_corpus, write_corpus
    lex = _lexicon(cfg)
    ccfg = _corpus_config(cfg, cfg["seed"], cfg["n"])
    corpus = synth_corpus(cfg["seed"], cfg["n"], ccfg, lex)
    out = Path(cfg["out"])
    write_corpus(out, corpus, {"config": config_dict(ccfg), "lexicon": cfg["lexicon"] or "built-in"})
    write_echo(out, "synth", cfg)
    print(f"wrote {len(corpus)} utterances to {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    from .model import checkpoint_save
    from .training import train_two_stage
    mode = _check_mode(cfg["mode"])
    tcfg = _train_config(cfg)
    mcfg = _model_config(cfg, cfg["adapter"])
    corpus = _load_corpus(cfg)
    out = Path(cfg["out"])
    write_echo(out, "train", cfg)
    curve_path = out / "loss_curve.tsv"
    with open(curve_path, "w") as fh:
        fh.write("step\tstage\tloss\tce\tctc\tlr\n")

        def on_step(r):
            fh.write(f"{r.step}\t{r.stage}\t{r.loss!r}\t{r.ce!r}\t{r.ctc!r}\t{r.lr!r}\n")
            fh.flush()
            if cfg["log_every"] > 0 and r.step % cfg["log_every"] == 0:
                log.info("step %d stage %d loss %.4f", r.step, r.stage, r.loss)

        try:
            res = train_two_stage(corpus, tcfg, mode, cfg["adapter"], mcfg, on_step)
        except TrainingDivergedError as e:
            fh.write(f"{e.step}\tdiverged\t{e.loss!r}\t\t\t\n")
            raise
    checkpoint_save(out / "model.ckpt", res.model, {"mode": mode, "train": asdict(tcfg)})
    print(f"trained {mode}x{cfg['adapter']} in {res.seconds:.1f}s; final loss {res.curve[-1].loss:.4f}; "
          f"checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_transcribe(cfg: dict) -> int:
    from .cot import transcribe
    from .model import checkpoint_load
    from .synthdata import corrupt_context
    model = checkpoint_load(_existing(cfg["checkpoint"], "checkpoint"))
    trained_mode = getattr(model, "checkpoint_extra", {}).get("mode", "cot")
    corpus = _load_corpus(cfg)
    contexts = None
    if cfg["user_context_file"]:
        lines = _existing(cfg["user_context_file"], "user context file").read_text().splitlines()
        if len(lines) != len(corpus):
            raise ConfigError(f"user context file has {len(lines)} lines for {len(corpus)} utterances")
        contexts = [ln.strip() for ln in lines]
    elif cfg["context_error_rate"] > 0:
        contexts = [u.context for u in corpus]
    rate = cfg["context_error_rate"]
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("context_error_rate must be in [0, 1]")
    mode = cfg["mode"] or ("plain" if trained_mode == "plain" else "user" if contexts is not None else "self")
    if mode not in ("self", "user", "plain"):
        raise ConfigError(f"mode must be self, user or plain, got {mode!r}")
    if mode == "user" and contexts is None:
        contexts = [u.context for u in corpus]
    if mode != "user" and contexts is not None:
        raise ConfigError("user contexts given but mode is not user")
    if contexts is not None and rate > 0:
        contexts = [corrupt_context(c, rate, cfg["seed"] * 1_000_003 + k) for k, c in enumerate(contexts)]
    out = Path(cfg["out"])
    write_echo(out, "transcribe", cfg)
    valid = 0
    with open(out / "records.jsonl", "w") as fh:
        for k, u in enumerate(corpus):
            rec = transcribe(model, u.features, mode, contexts[k] if contexts else None, cfg["max_len"], u.id)
            valid += rec.well_formed
            row = rec.to_dict()
            row["reference"] = u.transcript
            row["entities"] = [[s, e] for s, e, _ in u.entities]
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"decoded {len(corpus)} utterances in {mode} mode; well-formed {valid}/{len(corpus)}; "
          f"records {out / 'records.jsonl'}")
    return EXIT_OK


def cmd_score(cfg: dict) -> int:
    from .metrics import BiasList, UndefinedMetricError, biased_wer, eer, report, wer
    from .synthdata import read_corpus
    path = _existing(cfg["records"], "records")
    if path.is_dir():
        path = _existing(str(path / "records.jsonl"), "records")
    rows = [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]
    if not rows:
        raise ConfigError(f"no records in {path}")
    if cfg["corpus"]:
        corpus = {u.id: u for u in read_corpus(_existing(cfg["corpus"], "corpus"))}
        missing = [r["id"] for r in rows if r["id"] not in corpus]
        if missing:
            raise ConfigError(f"records not in corpus: {missing[:3]}")
        refs = [corpus[r["id"]].transcript for r in rows]
        spans = [[(s, e) for s, e, _ in corpus[r["id"]].entities] for r in rows]
    else:
        if any("reference" not in r for r in rows):
            raise ConfigError("records carry no references; pass a corpus")
        refs = [r["reference"] for r in rows]
        spans = [[tuple(x) for x in r.get("entities", [])] for r in rows]
    hyps = [r["transcript"] for r in rows]
    metrics = {"WER": wer(refs, hyps)}
    try:
        metrics["EER"] = eer(refs, spans, hyps)
    except UndefinedMetricError:
        metrics["EER"] = None
    if cfg["bias_list"]:
        b = biased_wer(refs, hyps, BiasList.from_file(_existing(cfg["bias_list"], "bias list")))
        metrics["B-WER"], metrics["U-WER"] = b.b_wer, b.u_wer
    dec = sum(r.get("decode_seconds", 0.0) for r in rows)
    aud = sum(r.get("audio_seconds", 0.0) for r in rows)
    if aud:
        metrics["RTF"] = dec / aud
    metrics["format_validity"] = sum(bool(r.get("well_formed", True)) for r in rows) / len(rows)
    rep = report({cfg["system"]: {cfg["test_set"]: metrics}})
    out = Path(cfg["out"])
    write_echo(out, "score", cfg)
    rep.save(out / "report.json")
    (out / "table.txt").write_text(rep.table() + "\n")
    print(rep.table())
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    from .gradcheck import COMPONENTS, format_table, run_gradcheck
    comps = COMPONENTS if cfg["components"] == "all" else tuple(
        c.strip() for c in cfg["components"].split(",") if c.strip())
    bad = [c for c in comps if c not in COMPONENTS]
    if bad or not comps:
        raise ConfigError(f"unknown components: {bad}")
    flip = cfg["inject_wrong_sign"] or None
    if flip is not None and flip not in COMPONENTS:
        raise ConfigError(f"unknown component to corrupt: {flip!r}")
    if cfg["n"] < 1:
        raise ConfigError("n must be >= 1")
    out = Path(cfg["out"])
    write_echo(out, "gradcheck", cfg)
    rows = run_gradcheck(comps, cfg["n"], cfg["tolerance"], cfg["seed"], flip)
    table = format_table(rows)
    (out / "gradcheck.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_RUNTIME


ABLATION_SYSTEMS = (("cot", "ctc"), ("cot", "linear"), ("plain", "ctc"), ("plain", "linear"))


def cmd_ablate(cfg: dict) -> int:
    from .experiments import evaluate
    from .metrics import report
    from .synthdata import synth_corpus
    from .training import train_two_stage
    tcfg = _train_config(cfg)
    lex = _lexicon(cfg)
    train = synth_corpus(cfg["train_seed"], cfg["n_train"],
                         _corpus_config(cfg, cfg["train_seed"], cfg["n_train"]), lex)
    held = synth_corpus(cfg["heldout_seed"], cfg["n_heldout"],
                        _corpus_config(cfg, cfg["heldout_seed"], cfg["n_heldout"]), lex)
    out = Path(cfg["out"])
    write_echo(out, "ablate", cfg)
    results = {}
    for mode, adapter in ABLATION_SYSTEMS:
        name = f"{mode}-{adapter}"
        log.info("training %s", name)
        res = train_two_stage(train, tcfg, mode, adapter, _model_config(cfg, adapter))
        ev = evaluate(res.model, held, "self" if mode == "cot" else "plain", max_len=cfg["max_len"])
        results[name] = {"heldout": {"WER": ev.wer, "EER": ev.eer, "RTF": ev.rtf,
                                     "format_validity": ev.format_validity}}
    rep = report(results)
    rep.save(out / "report.json")
    lines = [f"{'system':<14} {'WER%':>7} {'EER%':>7} {'valid%':>7} {'RTF':>7}"]
    for name, sets in results.items():
        m = sets["heldout"]
        e = "n/a" if m["EER"] is None else f"{100 * m['EER']:.2f}"
        lines.append(f"{name:<14} {100 * m['WER']:>7.2f} {e:>7} {100 * m['format_validity']:>7.1f} "
                     f"{m['RTF']:>7.3f}")
    table = "\n".join(lines)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "synthesize an annotated speech corpus"),
    "train": (cmd_train, "two-stage training; writes a checkpoint and a per-step loss log"),
    "transcribe": (cmd_transcribe, "decode a corpus in self, user-context or plain mode"),
    "score": (cmd_score, "WER / EER / B-WER / U-WER report for transcription records"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every backward pass"),
    "ablate": (cmd_ablate, "train and score the four mode x adapter systems"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cotasr", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="Precedence: defaults < --config file < flags < COTASR_SEED. "
                            "Exit codes: 0 ok, 1 runtime failure, 2 config error.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value config file")
        for key, (typ, default, h) in SCHEMAS[name].items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=key.upper(),
                           help=f"{h} (default: {default!r})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    name = args.command
    flags = {k: getattr(args, k) for k in SCHEMAS[name]}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(name, file_values, flags)
        return COMMANDS[name][0](cfg)
    except ConfigError as e:
        print(f"cotasr {name}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as e:
        print(f"cotasr {name}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, CotAsrError, OSError, ValueError) as e:
        print(f"cotasr {name}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
