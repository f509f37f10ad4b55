"""Command-line pipeline driver: analyze, train, invert, glbench, probe.

Every command resolves its configuration up front, writes its artifacts plus
a JSON manifest into the output directory, and removes partial outputs on
failure. Re-running a manifest (the `rerun` command) reproduces all
artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dsp import (
    PhaseMap,
    StftConfig,
    decompose,
    load_wav,
    normalize_magnitude,
    save_wav,
    stft,
)
from .gridio import save_grid, save_grid_csv, write_csv
from .model import (
    ArchConfig,
    TrainConfig,
    embed,
    fit_linear_probe,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .phase import (
    InstFreqMap,
    WEIGHT_STRATEGIES,
    smoothed_if,
    smoothness_weights,
    wrap_angle,
)
from .prep import build_dataset, slice_clip
from .reconstruct import (
    estimate_mean_group_delay,
    griffin_lim,
    integrate_if,
    reconstruct_waveform,
    retrieve_offsets,
)
from . import report

OUTPUT_DIR_ENV = "SPECPHASE_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _stft_from_args(args) -> StftConfig:
    window = int(round(args.sr * args.window_ms / 1000.0))
    hop = int(round(args.sr * args.hop_ms / 1000.0))
    return StftConfig(window_length=window, hop_length=hop, fft_size=args.fft)


def _stft_to_dict(cfg: StftConfig) -> dict:
    return dataclasses.asdict(cfg)


def _list_wavs(corpus: Path) -> list[Path]:
    wavs = sorted(corpus.glob("*.wav"))
    if not wavs:
        raise ValueError(f"no .wav files in {corpus}")
    return wavs


def _parse_channels(text: str) -> tuple[int, ...]:
    try:
        channels = tuple(int(c) for c in text.split(",") if c.strip())
    except ValueError as exc:
        raise ValueError(f"bad --channels value {text!r}") from exc
    if not channels:
        raise ValueError("empty --channels list")
    return channels


def _resolve_tau(args, phase_map) -> float:
    if args.tau is not None:
        return wrap_angle(float(args.tau))
    if args.tau_cal:
        payload = json.loads(Path(args.tau_cal).read_text())
        return float(payload["tau_g"])
    return estimate_mean_group_delay([phase_map])


def _predicted_if(params, mag) -> InstFreqMap:
    norm = normalize_magnitude(mag)
    if norm.shape != params.arch.input_shape:
        raise ValueError(
            f"input grid {norm.shape} does not match the checkpoint's "
            f"{params.arch.input_shape}"
        )
    raw = forward(params, norm).heads["phase"]
    return InstFreqMap(values=wrap_angle(raw), alignment="centered")


def _load_compatible_checkpoint(path, cfg: StftConfig, sample_rate: int):
    params, extra = load_checkpoint(path)
    if extra.get("stft") != _stft_to_dict(cfg) or extra.get("sample_rate") != sample_rate:
        raise ValueError(
            f"checkpoint {path} was trained with a different audio front-end"
        )
    return params


def _safe_label(text: str) -> str:
    label = re.sub(r"[^A-Za-z0-9_-]+", "_", text).strip("_")
    return label or "model"


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def _cmd_analyze(args, out_dir: Path, outputs: list[Path]) -> None:
    cfg = _stft_from_args(args)
    clip = load_wav(args.input, expect_rate=args.sr)
    spec = stft(clip, cfg)
    mag, phase = decompose(spec)
    psi = smoothed_if(phase)
    weights = smoothness_weights(psi)
    norm = normalize_magnitude(mag)
    print(f"T={spec.frames} F={spec.bins}")

    grids = {
        "magnitude": mag.values,
        "magnitude_norm": norm.values,
        "phase": phase.values,
        "if": psi.values,
        "weights_smoothness": weights.values,
    }
    ext = "grid" if args.grid_format == "bin" else "csv"
    saver = save_grid if args.grid_format == "bin" else save_grid_csv
    for name, values in grids.items():
        path = out_dir / f"{name}.{ext}"
        saver(path, values)
        outputs.append(path)

    fig = out_dir / "analyze.png"
    report.save_analysis_figure(
        fig, mag.values, phase.values, psi.values, weights.values
    )
    outputs.append(fig)


def _cmd_train(args, out_dir: Path, outputs: list[Path]) -> None:
    cfg = _stft_from_args(args)
    slice_samples = int(round(args.slice_ms * args.sr / 1000.0))
    clips = [load_wav(p, expect_rate=args.sr) for p in _list_wavs(Path(args.corpus))]
    dataset = build_dataset(clips, cfg, slice_samples, strategy=args.weighting)
    if not dataset:
        raise ValueError("corpus produced no full-length slices")
    input_shape = dataset[0][0].shape
    heads = ("phase", "magnitude") if args.heads == "hybrid" else ("phase",)
    arch = ArchConfig(
        input_shape=input_shape,
        channels=_parse_channels(args.channels),
        kernel=args.kernel,
        embedding_dim=args.embedding_dim,
        heads=heads,
        pool=args.pool,
    )
    params = init_model(arch, seed=args.seed)
    tcfg = TrainConfig(
        learning_rate=args.lr,
        steps=args.steps,
        batch_size=args.batch_size,
        weight_strategy=args.weighting,
        seed=args.seed,
        lambda_mag=args.lambda_mag,
    )
    params, history = train(params, dataset, tcfg)

    ckpt = out_dir / "model.ckpt"
    save_checkpoint(
        ckpt,
        params,
        extra={
            "sample_rate": args.sr,
            "stft": _stft_to_dict(cfg),
            "weight_strategy": args.weighting,
        },
    )
    outputs.append(ckpt)

    loss_csv = out_dir / "loss_history.csv"
    write_csv(loss_csv, ["step", "loss"], list(enumerate(history.tolist())))
    outputs.append(loss_csv)
    loss_png = out_dir / "loss_history.png"
    report.save_loss_figure(loss_png, history)
    outputs.append(loss_png)
    print(f"trained {tcfg.steps} steps on {len(dataset)} slices; "
          f"final loss {history[-1]:.6f}")


def _cmd_invert(args, out_dir: Path, outputs: list[Path]) -> None:
    params, extra = load_checkpoint(args.checkpoint)
    cfg = StftConfig(**extra["stft"])
    sample_rate = int(extra["sample_rate"])
    clip = load_wav(args.input, expect_rate=sample_rate)
    spec = stft(clip, cfg)
    mag, phase = decompose(spec)
    tau = _resolve_tau(args, phase)
    if args.oracle_phase:
        psi = smoothed_if(phase)
    else:
        psi = _predicted_if(params, mag)
    recon, trace = reconstruct_waveform(
        mag, psi, tau, args.gl_iters, cfg, sample_rate
    )
    wav_path = out_dir / "recon.wav"
    save_wav(wav_path, recon)
    outputs.append(wav_path)
    trace_path = out_dir / "trace.csv"
    trace.write_csv(trace_path)
    outputs.append(trace_path)
    fig = out_dir / "trace.png"
    label = "oracle" if args.oracle_phase else "model"
    report.save_convergence_figure(
        fig, {label: (trace.iterations, trace.log_sc)}
    )
    outputs.append(fig)
    print(f"wrote {len(recon)} samples; final log_sc {trace.log_sc[-1]:.4f}")


def _cmd_glbench(args, out_dir: Path, outputs: list[Path]) -> None:
    cfg = _stft_from_args(args)
    clip = load_wav(args.input, expect_rate=args.sr)
    spec = stft(clip, cfg)
    mag, phase = decompose(spec)
    tau = _resolve_tau(args, phase)
    rng = np.random.default_rng(args.seed)
    shape = mag.shape

    inits: list[tuple[str, np.ndarray]] = [
        ("zero", np.zeros(shape)),
        ("random", rng.uniform(-np.pi, np.pi, shape)),
    ]
    if args.oracle:
        psi = smoothed_if(phase)
        oracle_phase = integrate_if(psi, retrieve_offsets(psi, tau))
        inits.append(("oracle", oracle_phase.values))
    for entry in args.checkpoint or []:
        if "=" in entry:
            label, path = entry.split("=", 1)
        else:
            label, path = Path(entry).stem, entry
        label = _safe_label(label)
        params = _load_compatible_checkpoint(path, cfg, args.sr)
        psi = _predicted_if(params, mag)
        model_phase = integrate_if(psi, retrieve_offsets(psi, tau))
        inits.append((label, model_phase.values))

    curves = {}
    for label, init_values in inits:
        _, trace = griffin_lim(
            mag, PhaseMap(values=wrap_angle(init_values)), args.iters, cfg, args.sr
        )
        curves[label] = trace
        trace_path = out_dir / f"trace_{label}.csv"
        trace.write_csv(trace_path)
        outputs.append(trace_path)

    labels = [label for label, _ in inits]
    combined = out_dir / "glbench.csv"
    rows = []
    for i in range(args.iters + 1):
        rows.append([i] + [float(curves[lb].log_sc[i]) for lb in labels])
    write_csv(combined, ["k"] + labels, rows)
    outputs.append(combined)

    fig = out_dir / "glbench.png"
    report.save_convergence_figure(
        fig, {lb: (curves[lb].iterations, curves[lb].log_sc) for lb in labels}
    )
    outputs.append(fig)
    summary = " ".join(f"{lb}={curves[lb].log_sc[-1]:.4f}" for lb in labels)
    print(f"final log_sc: {summary}")


def _read_table(path: Path, value_name: str) -> dict[str, str]:
    table = {}
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "filename" not in reader.fieldnames \
                or value_name not in reader.fieldnames:
            raise ValueError(f"{path} must have columns filename,{value_name}")
        for row in reader:
            table[row["filename"]] = row[value_name]
    return table


def _cmd_probe(args, out_dir: Path, outputs: list[Path]) -> None:
    params, extra = load_checkpoint(args.checkpoint)
    cfg = StftConfig(**extra["stft"])
    sample_rate = int(extra["sample_rate"])
    corpus = Path(args.corpus)
    labels_path = Path(args.labels) if args.labels else corpus / "labels.csv"
    split_path = Path(args.split) if args.split else corpus / "split.csv"
    if not labels_path.exists():
        raise ValueError(f"missing labels file {labels_path}")
    if not split_path.exists():
        raise ValueError(f"missing train/test split file {split_path}")
    labels = _read_table(labels_path, "label")
    split = _read_table(split_path, "split")

    frames, _ = params.arch.input_shape
    slice_samples = (frames - 1) * cfg.hop_length + cfg.window_length
    embeddings: dict[str, list] = {"train": [], "test": []}
    targets: dict[str, list] = {"train": [], "test": []}
    for name in sorted(labels):
        if name not in split:
            raise ValueError(f"file {name} has a label but no split assignment")
        side = split[name]
        if side not in embeddings:
            raise ValueError(f"split for {name} must be train or test, got {side!r}")
        clip = load_wav(corpus / name, expect_rate=sample_rate)
        pieces = slice_clip(clip, slice_samples)
        if not pieces:
            raise ValueError(f"{name} is shorter than one model input")
        vecs = [embed(params, normalize_magnitude(decompose(stft(p, cfg))[0]))
                for p in pieces]
        embeddings[side].append(np.mean(vecs, axis=0))
        targets[side].append(labels[name])

    if not embeddings["train"] or not embeddings["test"]:
        raise ValueError("both train and test splits must be non-empty")
    classes = sorted(set(targets["train"]))
    if len(classes) < 2:
        raise ValueError("probe needs at least 2 classes in the training split")
    to_idx = {c: i for i, c in enumerate(classes)}
    x_train = np.asarray(embeddings["train"])
    y_train = np.asarray([to_idx[t] for t in targets["train"]])
    x_test = np.asarray(embeddings["test"])
    y_test = np.asarray([to_idx[t] for t in targets["test"]])

    probe = fit_linear_probe(x_train, y_train)
    train_acc = probe.accuracy(x_train, y_train)
    test_acc = probe.accuracy(x_test, y_test)
    print(f"train_accuracy={train_acc:.4f}")
    print(f"test_accuracy={test_acc:.4f}")

    table = out_dir / "probe.csv"
    write_csv(
        table,
        ["split", "count", "accuracy"],
        [["train", len(y_train), train_acc], ["test", len(y_test), test_acc]],
    )
    outputs.append(table)
    fig = out_dir / "probe.png"
    report.save_probe_figure(fig, {"train": train_acc, "test": test_acc})
    outputs.append(fig)


def _cmd_calibrate(args, out_dir: Path, outputs: list[Path]) -> None:
    cfg = _stft_from_args(args)
    phases = []
    for path in _list_wavs(Path(args.corpus)):
        clip = load_wav(path, expect_rate=args.sr)
        phases.append(decompose(stft(clip, cfg))[1])
    tau = estimate_mean_group_delay(phases)
    payload = {
        "num_maps": len(phases),
        "sample_rate": args.sr,
        "stft": _stft_to_dict(cfg),
        "tau_g": tau,
    }
    path = out_dir / "tau_cal.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    outputs.append(path)
    print(f"tau_g={tau:.6f}")


_HANDLERS = {
    "analyze": _cmd_analyze,
    "train": _cmd_train,
    "invert": _cmd_invert,
    "glbench": _cmd_glbench,
    "probe": _cmd_probe,
    "calibrate": _cmd_calibrate,
}


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specphase",
        description="STFT phase prediction, inversion, and benchmarking pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    default_out = os.environ.get(OUTPUT_DIR_ENV, "specphase_out")

    front = argparse.ArgumentParser(add_help=False)
    front.add_argument("--sr", type=int, default=16000, help="expected sample rate")
    front.add_argument("--window-ms", type=float, default=25.0)
    front.add_argument("--hop-ms", type=float, default=10.0)
    front.add_argument("--fft", type=int, default=512)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=default_out,
                        help=f"output directory (default from ${OUTPUT_DIR_ENV})")

    tau = argparse.ArgumentParser(add_help=False)
    tau.add_argument("--tau", type=float, default=None,
                     help="mean group delay override in radians")
    tau.add_argument("--tau-cal", default=None,
                     help="calibration JSON produced by the calibrate command")

    p = sub.add_parser("analyze", parents=[common, front],
                       help="write spectrogram, phase, IF, and weight grids")
    p.add_argument("input", help="16-bit PCM WAV")
    p.add_argument("--grid-format", choices=("bin", "csv"), default="bin")

    p = sub.add_parser("train", parents=[common, front],
                       help="train the phase predictor on a corpus directory")
    p.add_argument("corpus", help="directory of WAV files")
    p.add_argument("--slice-ms", type=float, default=975.0)
    p.add_argument("--channels", default="8,16,32,64,128")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--embedding-dim", type=int, default=128)
    p.add_argument("--pool", type=int, default=2)
    p.add_argument("--heads", choices=("phase", "hybrid"), default="phase")
    p.add_argument("--weighting", choices=WEIGHT_STRATEGIES, default="none")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--lambda-mag", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("invert", parents=[common, tau],
                       help="reconstruct a waveform from predicted phase")
    p.add_argument("input", help="16-bit PCM WAV")
    p.add_argument("checkpoint", help="trained model checkpoint")
    p.add_argument("--gl-iters", type=int, default=0)
    p.add_argument("--oracle-phase", action="store_true",
                   help="use the true IF instead of the model prediction")

    p = sub.add_parser("glbench", parents=[common, front, tau],
                       help="compare Griffin-Lim phase initializations")
    p.add_argument("input", help="16-bit PCM WAV")
    p.add_argument("--checkpoint", action="append", default=[],
                   metavar="[LABEL=]PATH", help="may be given multiple times")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--oracle", action="store_true",
                   help="add a true-IF initialization column")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("probe", parents=[common],
                       help="linear-probe accuracy of a trained encoder")
    p.add_argument("checkpoint")
    p.add_argument("corpus", help="directory of labeled WAV files")
    p.add_argument("--labels", default=None, help="CSV with filename,label")
    p.add_argument("--split", default=None, help="CSV with filename,split")

    p = sub.add_parser("calibrate", parents=[common, front],
                       help="estimate the corpus mean group delay")
    p.add_argument("corpus", help="directory of WAV files")

    p = sub.add_parser("rerun", parents=[],
                       help="re-execute a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="override the output directory")

    return parser


def _execute(command: str, args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    try:
        _HANDLERS[command](args, out_dir, outputs)
        config = {k: v for k, v in vars(args).items() if k != "command"}
        manifest = {
            "command": command,
            "config": config,
            "outputs": [p.name for p in outputs],
            "tool_version": __version__,
        }
        manifest_path = out_dir / f"{command}.manifest.json"
        manifest_path.write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )
    except Exception as exc:  # noqa: BLE001 - surface any failure as exit code 1
        for p in outputs:
            p.unlink(missing_ok=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rerun":
        manifest = json.loads(Path(args.manifest).read_text())
        command = manifest["command"]
        if command not in _HANDLERS:
            print(f"error: manifest names unknown command {command!r}",
                  file=sys.stderr)
            return 1
        replay = argparse.Namespace(**manifest["config"])
        if args.out is not None:
            replay.out = args.out
        return _execute(command, replay)
    return _execute(args.command, args)


if __name__ == "__main__":
    raise SystemExit(main())
