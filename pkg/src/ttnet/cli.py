"""Command-line interface: ``ttnet <command> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numeric failure
(gradient check above tolerance, training divergence).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .audio_features import (FRAME_LEN, AudioFormatError, apply_mask_resynthesize, extract_features, make_gammatone_bank,
                             n_frames, read_wav, segmental_snr, write_wav)
from .model_io import ConfigError, ModelFormatError, load_config, load_model, save_model, split_config
from .synth import DEFAULT_SNRS, generate_dataset, load_manifest, load_signals, load_training_pairs, oracle_mask
from .tensornet import ModelConfig, TrainConfig, build_model, count_model_params, mask_mse_loss, model_forward, train
from .tt_grad import TrainingDivergence

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

TABLE1_NOTE = ("note: layers 2-3 hold 10,256 parameters each; a per-layer figure of 10,255 is sometimes "
               "quoted, but the 32,760 total requires 10,256")
MODEL_NOTE = ("note: the model convention counts the fused gate map over the full [x, h] input "
              "(D+H rows); the table1 convention counts the input factors of D only")


class UsageError(Exception):
    """Invalid user input; reported on stderr with exit code 1."""


def _fmt_int(n: int) -> str:
    return f"{n:,}"


def format_counts(rows, convention: str) -> str:
    lines = [f"{'layer':<22} {'TT params':>10} {'dense params':>13} {'rate':>10}"]
    for r in rows:
        lines.append(f"{r.name:<22} {_fmt_int(r.tt):>10} {_fmt_int(r.dense):>13} {r.rate:>10.3e}")
    lines.append(TABLE1_NOTE if convention == "table1" else MODEL_NOTE)
    return "\n".join(lines)


def _configs(path):
    if path is None:
        return TrainConfig(), ModelConfig(), None
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return split_config(load_config(path))


def cmd_count_params(args) -> int:
    _, model_cfg, t1 = _configs(args.config)
    model = build_model(model_cfg, seed=0)
    rows = count_model_params(model, args.convention, t1 if args.convention == "table1" else None)
    print(format_counts(rows, args.convention))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suites(args.size, args.seed, fault=args.inject_fault)
    print(gradcheck.format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def _parse_snrs(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad SNR list {text!r}") from exc
    if not vals:
        raise UsageError("SNR list is empty")
    return tuple(int(v) if v.is_integer() else v for v in vals)


def cmd_synth_data(args) -> int:
    if args.utterances < 0:
        raise UsageError("--utterances must be non-negative")
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    n_samples = int(round(args.duration * 16000))
    if n_samples < FRAME_LEN or n_frames(n_samples) < 5:
        raise UsageError("--duration is too short for feature extraction")
    entries = generate_dataset(args.out, args.utterances, _parse_snrs(args.snr), args.seed, n_samples)
    print(f"wrote {len(entries)} utterances to {args.out}")
    return EXIT_OK


def _require_dataset(path) -> list:
    if not Path(path).is_dir():
        raise UsageError(f"data directory not found: {path}")
    try:
        return load_manifest(path)["utterances"]
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def report_dict(report) -> dict:
    return {
        "config": vars(report.config) if report.config is not None else None,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
    }


def _write_report(path, report):
    Path(path).write_text(json.dumps(report_dict(report), indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    train_cfg, model_cfg, _ = _configs(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    try:
        train_cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    entries = _require_dataset(args.data)
    if not entries and train_cfg.epochs > 0:
        raise UsageError(f"dataset {args.data} has no utterances")
    dataset = load_training_pairs(args.data)
    validation = None
    if args.val_data is not None:
        _require_dataset(args.val_data)
        validation = load_training_pairs(args.val_data)
    model = build_model(model_cfg, seed=train_cfg.seed, dropout_p=train_cfg.dropout_p)
    report_path = args.report or f"{args.out}.report.json"
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        model, report = train(model, dataset, train_cfg, validation, log=log)
    except TrainingDivergence as exc:
        _write_report(report_path, exc.report)
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise UsageError(f"dataset does not fit the model: {exc}") from exc
    save_model(model, args.out)
    _write_report(report_path, report)
    if report.initial_loss is not None:
        print(f"initial loss {report.initial_loss:.6f}  final loss {report.final_loss:.6f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def enhance_waveform(model, wave, bank=None):
    """Estimate the mask for ``wave`` and resynthesize.  Returns ``(waveform, mask)``."""
    bank = bank or make_gammatone_bank()
    if len(wave) < FRAME_LEN:
        raise UsageError("input is shorter than one analysis frame")
    feats = extract_features(wave, bank)
    if feats.shape[1] != model.feature_dim:
        raise UsageError(f"model expects {model.feature_dim}-dim features, got {feats.shape[1]}")
    mask = model_forward(model, feats)
    return apply_mask_resynthesize(wave, mask, bank), mask


def cmd_enhance(args) -> int:
    model = load_model(args.model)
    wave = read_wav(args.input)
    out, _ = enhance_waveform(model, wave)
    write_wav(args.output, out)
    print(f"enhanced audio written to {args.output}")
    return EXIT_OK


def evaluate_dataset(data_dir, model=None) -> list:
    """Per-SNR ``(snr, count, mask_mse, segsnr_gain)`` rows sorted by SNR.

    With ``model=None`` the oracle mask is used, so its mask MSE is zero.
    """
    entries = _require_dataset(data_dir)
    if not entries:
        raise UsageError(f"dataset {data_dir} has no utterances")
    bank = make_gammatone_bank()
    buckets: dict = {}
    for e in entries:
        sig = load_signals(data_dir, e)
        target = oracle_mask(sig["clean"], sig["noise"], bank)
        if model is None:
            mask = target
        else:
            mask = model_forward(model, extract_features(sig["noisy"], bank))
        enhanced = apply_mask_resynthesize(sig["noisy"], mask, bank)
        gain = segmental_snr(sig["clean"], enhanced) - segmental_snr(sig["clean"], sig["noisy"])
        buckets.setdefault(float(e["snr_db"]), []).append((float(mask_mse_loss(mask, target)), gain))
    rows = []
    for snr in sorted(buckets):
        vals = np.array(buckets[snr])
        rows.append((snr, len(vals), float(vals[:, 0].mean()), float(vals[:, 1].mean())))
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr", "count", "mask_mse", "segsnr_gain"])
    for snr, count, mse, gain in rows:
        w.writerow([f"{snr:g}", count, f"{mse:.6f}", f"{gain:.4f}"])
    return buf.getvalue()


def format_table(rows) -> str:
    lines = [f"{'SNR (dB)':>8} {'count':>6} {'mask MSE':>10} {'segSNR gain (dB)':>17}"]
    for snr, count, mse, gain in rows:
        lines.append(f"{snr:>8g} {count:>6d} {mse:>10.6f} {gain:>17.4f}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    if (args.model is None) == (not args.oracle):
        raise UsageError("give exactly one of --model or --oracle")
    model = load_model(args.model) if args.model else None
    rows = evaluate_dataset(args.data, model)
    text = format_csv(rows)
    if args.csv == "-":
        print(text, end="")
        return EXIT_OK
    if args.csv:
        Path(args.csv).write_text(text)
    print(format_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttnet", description="TT-LSTM mask estimation for speech enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count-params", help="per-layer TT and dense parameter counts")
    p.add_argument("--convention", choices=("model", "table1"), default="model")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--size", choices=("small", "fig2-reduced"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true",
                   help="perturb one analytic gradient entry to exercise the failure path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="generate a synthetic noisy-speech dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, default=12)
    p.add_argument("--snr", default=",".join(str(s) for s in DEFAULT_SNRS), help="comma-separated SNRs in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=1.0, help="seconds per utterance")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model on a synthetic dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="JSON report path (default: <out>.report.json)")
    p.add_argument("--val-data")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a 16 kHz mono WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="mask MSE and segmental SNR gain per input SNR")
    p.add_argument("--model")
    p.add_argument("--oracle", action="store_true", help="use the ideal ratio mask")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", help="write CSV to this path ('-' for stdout)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ModelFormatError, AudioFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
