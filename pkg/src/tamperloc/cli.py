"""Command-line entry point.

Subcommands: synth, pretrain, train, eval, robustness, predict,
inspect-masks. Every run resolves its config (defaults < config file <
--override key=value), rejects unknown keys, and writes the resolved
snapshot to the output directory. Exit codes: 0 ok, 2 config error,
3 data error, 4 numerical failure.
"""

import argparse
import dataclasses
import json
import os
import sys

import cv2
import numpy as np

from . import data as data_mod
from . import evaluation, masks
from .data import DatasetManifest, ManifestError, RawSample
from .encoder import EncoderConfig
from .model import TamperLocModel
from .trainer import (NumericalDivergence, TrainConfig, Trainer,
                      load_checkpoint, model_from_checkpoint, save_checkpoint,
                      toy_mae_pretrain)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ConfigError(Exception):
    pass


_ALIASES = {"lambda": "lam"}


def resolve_config(config_path, overrides):
    """Merge defaults, optional JSON config file, and key=value overrides."""
    values = dataclasses.asdict(TrainConfig())
    if config_path:
        if not os.path.isfile(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        try:
            with open(config_path) as fh:
                file_values = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad config file: {e}") from e
        for k, v in file_values.items():
            k = _ALIASES.get(k, k)
            if k not in values:
                raise ConfigError(f"unknown config key: {k}")
            values[k] = v
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value: {item!r}")
        k, v = item.split("=", 1)
        k = _ALIASES.get(k, k)
        if k not in values:
            raise ConfigError(f"unknown config key: {k}")
        values[k] = _coerce(values[k], v, k)
    try:
        return TrainConfig(**{**values,
                              "betas": tuple(values["betas"])})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _coerce(current, text, key):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (tuple, list)):
        return tuple(float(x) for x in text.split(","))
    return text


def write_snapshot(out_dir, cfg: TrainConfig, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    snap = dataclasses.asdict(cfg)
    snap.update(extra or {})
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)


def _load_samples(manifest_path) -> list:
    manifest = data_mod.load_manifest(manifest_path)
    print(f"loaded {len(manifest.entries)} entries "
          f"({manifest.n_authentic} authentic, "
          f"{manifest.n_manipulated} manipulated)")
    return [data_mod.load_sample(e) for e in manifest.entries]


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    lines = []
    for i in range(args.n):
        base = RawSample(
            data_mod.random_base_image(args.size, args.size, rng),
            np.zeros((args.size, args.size), np.uint8))
        if args.authentic_frac and rng.random() < args.authentic_frac:
            sample, label = base, "authentic"
        else:
            sample = data_mod.synthesize_manipulation(
                base, int(rng.integers(2 ** 31)))
            label = "manipulated"
        img_name = f"img_{i:04d}.png"
        msk_name = f"msk_{i:04d}.png"
        data_mod.save_sample(sample, os.path.join(args.out, img_name),
                             os.path.join(args.out, msk_name))
        rec = {"image": img_name,
               "mask": msk_name if label == "manipulated" else None,
               "label": label}
        lines.append(json.dumps(rec))
    manifest_path = os.path.join(args.out, "manifest.jsonl")
    with open(manifest_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.n} samples and {manifest_path}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = resolve_config(args.config, args.override)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    write_snapshot(args.out, cfg, {"command": "pretrain", "steps": args.steps})
    samples = _load_samples(args.manifest)
    log_path = os.path.join(args.out, "metrics.jsonl")
    with open(log_path, "w") as fh:
        def log(step, loss):
            fh.write(json.dumps({"step": step, "mae_loss": loss}) + "\n")
            if step % 50 == 0:
                print(f"step {step}: mae_loss={loss:.5f}")
        state = toy_mae_pretrain([s for s in samples], cfg.encoder_config(),
                                 cfg, args.steps, callback=log)
    ckpt = os.path.join(args.out, "pretrain.pt")
    import torch
    torch.save(state, ckpt)
    print(f"saved {ckpt}")
    return EXIT_OK


def cmd_train(args):
    import torch
    cfg = resolve_config(args.config, args.override)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    write_snapshot(args.out, cfg, {"command": "train", "steps": args.steps})
    samples = _load_samples(args.manifest)
    torch.manual_seed(cfg.seed)
    model = TamperLocModel(cfg.encoder_config())
    if args.init:
        state = load_checkpoint(args.init)
        model.encoder.load_pretrained(
            {k[len("encoder."):]: v for k, v in state["tensors"].items()
             if k.startswith("encoder.")})
        print(f"initialized encoder from {args.init}")
    trainer = Trainer(model, cfg, total_steps=args.steps)
    log_path = os.path.join(args.out, "metrics.jsonl")
    with open(log_path, "w") as fh:
        def log(report):
            fh.write(json.dumps({
                "step": report.step, "l_seg": report.l_seg,
                "l_rec": report.l_rec.total, "combined": report.combined,
                "lr": report.lr}) + "\n")
            if report.step % 50 == 0:
                print(f"step {report.step}: seg={report.l_seg:.5f} "
                      f"rec={report.l_rec.total:.4f} "
                      f"combined={report.combined:.5f}")
            return False
        trainer.run(samples, args.steps, callback=log)
    ckpt = os.path.join(args.out, "model.pt")
    save_checkpoint(ckpt, trainer)
    print(f"saved {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    model = model_from_checkpoint(args.checkpoint)
    samples = _load_samples(args.manifest)
    res = evaluation.evaluate(model, samples,
                              dataset_name=os.path.basename(args.manifest),
                              threshold=args.threshold)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval.jsonl"), "w") as fh:
        fh.write(json.dumps(dataclasses.asdict(res)) + "\n")
    auc = "n/a" if res.auc is None else f"{res.auc:.4f}"
    print(f"{res.dataset}: F1={res.f1:.4f} AUC={auc} "
          f"(n={res.n_images}, thr={res.threshold})")
    return EXIT_OK


def cmd_robustness(args):
    model = model_from_checkpoint(args.checkpoint)
    samples = _load_samples(args.manifest)
    rows = evaluation.robustness_sweep(model, samples,
                                       threshold=args.threshold)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "robustness.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps({"distortion": row.distortion.name(),
                                 "f1": row.f1}) + "\n")
    print(f"{'distortion':>12s}  F1")
    for row in rows:
        print(f"{row.distortion.name():>12s}  {row.f1:.4f}")
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        names = [r.distortion.name() for r in rows]
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.bar(names, [r.f1 for r in rows])
        ax.set_ylabel("pixel F1")
        ax.set_ylim(0, 1)
        plt.xticks(rotation=45, ha="right")
        fig.tight_layout()
        fig.savefig(os.path.join(args.out, "robustness.png"), dpi=120)
        plt.close(fig)
    return EXIT_OK


def cmd_predict(args):
    model = model_from_checkpoint(args.checkpoint)
    manifest = data_mod.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    for i, entry in enumerate(manifest.entries):
        raw = data_mod.load_sample(entry)
        prob, _ = evaluation.predict_probability(model, raw)
        u8 = np.clip(prob * 255.0 + 0.5, 0, 255).astype(np.uint8)
        stem = os.path.splitext(os.path.basename(entry.image_path))[0]
        cv2.imwrite(os.path.join(args.out, f"{stem}_prob.png"), u8)
        if args.overlay:
            img = np.clip(raw.image * 255.0 + 0.5, 0, 255).astype(np.uint8)
            img = cv2.resize(img, (u8.shape[1], u8.shape[0]))
            overlay = img.copy()
            overlay[..., 0] = np.maximum(overlay[..., 0], u8)
            cv2.imwrite(os.path.join(args.out, f"{stem}_overlay.png"),
                        cv2.cvtColor(overlay, cv2.COLOR_RGB2BGR))
    print(f"wrote predictions for {len(manifest.entries)} images to {args.out}")
    return EXIT_OK


def cmd_inspect_masks(args):
    manifest = data_mod.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    n = 0
    for entry in manifest.entries:
        if entry.label != "manipulated":
            continue
        raw = data_mod.load_sample(entry)
        h, w = raw.mask.shape
        ph = (h + args.patch - 1) // args.patch * args.patch
        pw = (w + args.patch - 1) // args.patch * args.patch
        gt = np.zeros((ph, pw), np.uint8)
        gt[:h, :w] = raw.mask
        em = masks.edge_mask(gt, args.radius)
        pm = masks.patch_edge_mask(em, args.patch)
        stem = os.path.splitext(os.path.basename(entry.image_path))[0]
        cv2.imwrite(os.path.join(args.out, f"{stem}_edge.png"), em * 255)
        cv2.imwrite(os.path.join(args.out, f"{stem}_patch_edge.png"), pm * 255)
        n += 1
    print(f"wrote edge/patch-edge masks for {n} manipulated images")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tamperloc")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("synth", help="generate a synthetic tampered dataset")
    common(sp)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--authentic-frac", type=float, default=0.0)
    sp.set_defaults(func=cmd_synth, seed=0)

    for name, fn in (("pretrain", cmd_pretrain), ("train", cmd_train)):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--config", default=None)
        sp.add_argument("--override", action="append", default=[])
        sp.add_argument("--steps", type=int, required=True)
        if name == "train":
            sp.add_argument("--init", default=None,
                            help="pretraining checkpoint for the encoder")
        sp.set_defaults(func=fn)

    for name, fn in (("eval", cmd_eval), ("robustness", cmd_robustness)):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--threshold", type=float, default=0.5)
        if name == "robustness":
            sp.add_argument("--plot", action="store_true")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("predict")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--overlay", action="store_true")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("inspect-masks")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--radius", type=int, default=2)
    sp.add_argument("--patch", type=int, default=16)
    sp.set_defaults(func=cmd_inspect_masks)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalDivergence as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
