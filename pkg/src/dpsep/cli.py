"""Command line front end: synth, train, separate, eval.

Exit codes: 0 on success, 1 for configuration or input validation problems,
2 for numerical failures (diverged training, non-finite sampler state).
All outputs are deterministic functions of the config tree; reruns with the
same config produce byte-identical WAVs, manifests and checkpoints.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpsep.config import ConfigError, RunConfig, load_config
from dpsep.mixtures import (
    MixSpec,
    ToyCorpusSpec,
    evaluate_run,
    gen_toy_corpus,
    make_mixture,
)
from dpsep.posterior import NonFiniteStateError
from dpsep.priors import (
    Adam,
    CheckpointError,
    ConditioningVector,
    TrainableDenoiser,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train_denoiser,
)
from dpsep.sampler import sample_posterior
from dpsep.spectral import stft
from dpsep.wavio import read_manifest, read_wav, write_manifest, write_wav

__all__ = ["main", "cmd_synth", "cmd_train", "cmd_separate", "cmd_eval"]


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through the
    # validation path (exit 1) instead
    def error(self, message):
        raise _UsageError(message)


def _derived_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(master), *key]).generate_state(1)[0])


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _append_csv(path: Path, header, rows) -> None:
    fresh = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(header)
        w.writerows(rows)


# ---- synth ----


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.corpus_spec()
    corpus_dir = cfg.path("corpus_dir")
    entries = gen_toy_corpus(spec)

    per_label: dict[str, int] = {}
    records = []
    for entry in entries:
        i = per_label.get(entry.label, 0)
        per_label[entry.label] = i + 1
        rel = f"{entry.label}/{entry.label}_{i:03d}.wav"
        scale = write_wav(corpus_dir / rel, entry.signal, spec.sample_rate)
        records.append(
            {
                "file": rel,
                "label": entry.label,
                "cond": None if entry.cond is None else entry.cond.values.tolist(),
                "scale": scale,
            }
        )
    write_manifest(
        corpus_dir / "manifest.json",
        {
            "sample_rate": spec.sample_rate,
            "n_samples": spec.n_samples,
            "rms": spec.rms,
            "seed": cfg.seed,
            "classes": [c.name for c in spec.classes],
            "noise_class": spec.noise.name,
            "entries": records,
        },
    )
    print(f"corpus: {len(records)} signals -> {corpus_dir}")

    mix = cfg.tree["mixture"]
    k = int(mix["k_sources"])
    mix_dir = cfg.path("mixtures_dir")
    rng = np.random.default_rng(_derived_seed(cfg.seed, 101))
    snr_lo, snr_hi = (float(v) for v in mix["snr_range_db"])
    mix_records = []
    idx = 0
    for sir in mix["sir_db"]:
        for _ in range(int(mix["count_per_sir"])):
            chosen = sorted(rng.choice(len(spec.classes), size=k, replace=False))
            sub = ToyCorpusSpec(
                classes=tuple(
                    replace(spec.classes[ci], count=1) for ci in chosen
                ),
                noise=replace(spec.noise, count=1),
                n_samples=spec.n_samples,
                sample_rate=spec.sample_rate,
                rms=spec.rms,
                seed=0,
            )
            sub_entries = gen_toy_corpus(sub, rng=rng)
            sources = [e.signal for e in sub_entries[:-1]]
            noise_sig = sub_entries[-1].signal
            snr = float(rng.uniform(snr_lo, snr_hi))
            mspec = MixSpec(
                sir_db=float(sir),
                snr_db=snr,
                seed=_derived_seed(cfg.seed, 202, idx),
                sigma_z_rel=float(mix["sigma_z_rel"]),
            )
            obs, gts = make_mixture(sources, noise_sig, mspec, spec.sample_rate)
            mid = f"mix_{idx:03d}"
            y_scale = write_wav(mix_dir / mid / "mixture.wav", obs.y, spec.sample_rate)
            src_recs = []
            for j, ci in enumerate(chosen):
                rel = f"{mid}/source_{j + 1}.wav"
                s = write_wav(mix_dir / rel, gts[j], spec.sample_rate)
                src_recs.append(
                    {
                        "file": rel,
                        "label": spec.classes[ci].name,
                        "cond_index": int(ci),
                        "scale": s,
                    }
                )
            n_scale = write_wav(mix_dir / mid / "noise.wav", gts[-1], spec.sample_rate)
            mix_records.append(
                {
                    "id": mid,
                    "sir_db": float(sir),
                    "snr_db": snr,
                    "sigma_z": obs.sigma_z,
                    "mixture_file": f"{mid}/mixture.wav",
                    "scale": y_scale,
                    "sources": src_recs,
                    "noise": {"file": f"{mid}/noise.wav", "scale": n_scale},
                }
            )
            idx += 1
    write_manifest(
        mix_dir / "manifest.json",
        {
            "sample_rate": spec.sample_rate,
            "n_samples": spec.n_samples,
            "k_sources": k,
            "seed": cfg.seed,
            "classes": [c.name for c in spec.classes],
            "mixtures": mix_records,
        },
    )
    print(f"mixtures: {idx} cases -> {mix_dir}")
    return 0


# ---- train ----


def _load_corpus_role(cfg: RunConfig, role: str):
    corpus_dir = cfg.path("corpus_dir")
    man = read_manifest(corpus_dir / "manifest.json")
    if int(man["n_samples"]) != cfg.n_samples:
        raise ConfigError(
            f"corpus n_samples {man['n_samples']} does not match "
            f"audio.n_samples {cfg.n_samples}"
        )
    if int(man["sample_rate"]) != cfg.sample_rate:
        raise ConfigError(
            f"corpus sample_rate {man['sample_rate']} does not match "
            f"audio.sample_rate {cfg.sample_rate}"
        )
    want_cond = role == "speech"
    signals = []
    conds = []
    for e in man["entries"]:
        if (e["cond"] is not None) != want_cond:
            continue
        x, _ = read_wav(corpus_dir / e["file"], e["scale"])
        signals.append(x)
        conds.append(None if e["cond"] is None else np.asarray(e["cond"]))
    if not signals:
        raise ConfigError(f"corpus has no entries for role '{role}'")
    return np.stack(signals), conds, man


def cmd_train(cfg: RunConfig, role: str, resume: bool) -> int:
    signals, conds, man = _load_corpus_role(cfg, role)
    n_classes = len(man["classes"])
    arch = cfg.arch()
    if arch.cond_dim != n_classes:
        raise ConfigError(
            f"conditioning width {arch.cond_dim} does not match corpus class "
            f"count {n_classes}"
        )
    schedule = cfg.schedule_train()
    tcfg = cfg.train_cfg()
    ckpt_path = cfg.path("checkpoint_dir") / f"{role}.ckpt"
    csv_path = cfg.path("checkpoint_dir") / f"train_{role}.csv"

    optimizer = None
    if resume:
        model, header, optimizer = load_checkpoint(ckpt_path)
        if header["role"] != role:
            raise ConfigError(
                f"{ckpt_path} holds role '{header['role']}', not '{role}'"
            )
        if optimizer is None:
            raise ConfigError(f"{ckpt_path} has no optimizer state to resume from")
        # fresh batch stream for the continuation steps
        tcfg = replace(tcfg, seed=_derived_seed(tcfg.seed, 303, optimizer.t))
        print(f"resuming {role} from step {optimizer.t}")
    else:
        sigma_data = float(np.sqrt(np.mean(signals**2)))
        role_tag = 1 if role == "speech" else 2
        model = TrainableDenoiser(
            arch,
            sigma_data=sigma_data,
            rng=np.random.default_rng(_derived_seed(cfg.seed, 404, role_tag)),
        )
        optimizer = Adam(lr=tcfg.lr)
        if csv_path.exists():
            csv_path.unlink()

    history = train_denoiser(model, signals, conds, schedule, tcfg, optimizer=optimizer)
    steps_done = optimizer.t

    _append_csv(
        csv_path,
        ["step", "loss", "weighted_loss"],
        [(s, f"{p:.10e}", f"{w:.10e}") for s, p, w in history],
    )
    save_checkpoint(
        ckpt_path,
        model,
        role=role,
        schedule_meta={
            "sigma_max": schedule.sigma_max,
            "sigma_min": schedule.sigma_min,
            "rho": schedule.rho,
            "n_steps": schedule.n_steps,
        },
        training_meta={
            "steps_total": steps_done,
            "batch": tcfg.batch,
            "lr": tcfg.lr,
            "cond_dropout": tcfg.cond_dropout,
            "seed": cfg.seed,
            "final_loss": history[-1][1],
            "classes": man["classes"] if role == "speech" else [],
        },
        optimizer=optimizer,
    )
    print(
        f"{role}: {len(history)} steps, loss {history[0][1]:.4e} -> "
        f"{history[-1][1]:.4e}, checkpoint {ckpt_path}"
    )
    return 0


# ---- separate ----


def _one_hot(index: int, width: int) -> ConditioningVector:
    v = np.zeros(width)
    v[index] = 1.0
    return ConditioningVector(values=v)


def cmd_separate(cfg: RunConfig, limit: int | None) -> int:
    mix_dir = cfg.path("mixtures_dir")
    out_dir = cfg.path("output_dir")
    man = read_manifest(mix_dir / "manifest.json")
    speech_model, speech_hdr, _ = load_checkpoint(cfg.path("checkpoint_dir") / "speech.ckpt")
    noise_model, _, _ = load_checkpoint(cfg.path("checkpoint_dir") / "noise.ckpt")

    # pre-flight: every compatibility problem must surface before any output
    d = cfg.n_samples
    if int(man["n_samples"]) != d:
        raise ConfigError(
            f"mixture n_samples {man['n_samples']} does not match "
            f"audio.n_samples {d}"
        )
    for name, model in (("speech", speech_model), ("noise", noise_model)):
        if model.dim != d:
            raise ConfigError(
                f"{name} checkpoint was trained for signal length {model.dim}, "
                f"config asks for {d}"
            )
    n_classes = len(man["classes"])
    if speech_model.arch.cond_dim != n_classes:
        raise ConfigError(
            f"speech checkpoint conditioning width {speech_model.arch.cond_dim} "
            f"does not match mixture class count {n_classes}"
        )
    k = int(man["k_sources"])
    if k != int(cfg.tree["mixture"]["k_sources"]):
        raise ConfigError(
            f"mixture manifest has k_sources {k}, config says "
            f"{cfg.tree['mixture']['k_sources']}"
        )
    stft_cfg = cfg.stft_cfg()
    try:
        stft(np.zeros(d), stft_cfg)
    except ValueError as exc:
        raise ConfigError(f"stft geometry incompatible with n_samples {d}: {exc}")
    sched = cfg.schedule_inference()
    tr = speech_hdr["schedule"]
    if sched.sigma_max > tr["sigma_max"] * (1 + 1e-12) or sched.sigma_min < tr[
        "sigma_min"
    ] * (1 - 1e-12):
        raise ConfigError(
            f"inference sigma range [{sched.sigma_min}, {sched.sigma_max}] is not "
            f"covered by the checkpoint training range "
            f"[{tr['sigma_min']}, {tr['sigma_max']}]"
        )
    todo = man["mixtures"] if limit is None else man["mixtures"][:limit]
    for rec in todo:
        if not (mix_dir / rec["mixture_file"]).exists():
            raise FileNotFoundError(mix_dir / rec["mixture_file"])
        for s in rec["sources"]:
            if not 0 <= int(s["cond_index"]) < n_classes:
                raise ConfigError(
                    f"{rec['id']}: cond_index {s['cond_index']} out of range "
                    f"for {n_classes} classes"
                )

    gcfg = cfg.guidance_cfg(d)
    est_records = []
    for rec in todo:
        y, _ = read_wav(mix_dir / rec["mixture_file"], rec["scale"])
        conds = [_one_hot(int(s["cond_index"]), n_classes) for s in rec["sources"]]
        seed_i = _derived_seed(cfg.seed, 505, int(rec["id"].split("_")[-1]))
        scfg = cfg.sampler_cfg(seed=seed_i)
        estimates, traj = sample_posterior(
            y, k, conds, speech_model, noise_model, scfg, gcfg, stft_cfg
        )
        mid = rec["id"]
        src_recs = []
        for j in range(k):
            rel = f"{mid}/source_{j + 1}.wav"
            s = write_wav(out_dir / rel, estimates[j], cfg.sample_rate)
            src_recs.append({"file": rel, "scale": s})
        n_scale = write_wav(out_dir / mid / "noise.wav", estimates[-1], cfg.sample_rate)
        keys = sorted(traj.rows[0].keys() - {"step", "sigma", "sigma_hat"})
        header = ["step", "sigma", "sigma_hat"] + keys
        _write_csv(
            out_dir / mid / "trajectory.csv",
            header,
            [[row[k2] for k2 in header] for row in traj.rows],
        )
        est_records.append(
            {
                "id": mid,
                "seed": seed_i,
                "sources": src_recs,
                "noise": {"file": f"{mid}/noise.wav", "scale": n_scale},
            }
        )
        print(f"{mid}: done ({len(traj)} steps)")
    write_manifest(
        out_dir / "estimates.json",
        {
            "sample_rate": cfg.sample_rate,
            "n_samples": d,
            "k_sources": k,
            "seed": cfg.seed,
            "mixtures": est_records,
        },
    )
    print(f"separated {len(est_records)} mixtures -> {out_dir}")
    return 0


# ---- eval ----


def cmd_eval(cfg: RunConfig) -> int:
    mix_dir = cfg.path("mixtures_dir")
    out_dir = cfg.path("output_dir")
    gt_man = read_manifest(mix_dir / "manifest.json")
    est_man = read_manifest(out_dir / "estimates.json")
    est_by_id = {m["id"]: m for m in est_man["mixtures"]}
    k = int(gt_man["k_sources"])

    missing = []
    for rec in gt_man["mixtures"]:
        erec = est_by_id.get(rec["id"])
        if erec is None:
            missing.append(f"{rec['id']}: no estimates")
            continue
        for j in range(k):
            p = out_dir / erec["sources"][j]["file"]
            if not p.exists():
                missing.append(str(p))
        if not (out_dir / erec["noise"]["file"]).exists():
            missing.append(str(out_dir / erec["noise"]["file"]))
    if missing:
        print("missing estimate files:", file=sys.stderr)
        for m in missing:
            print(f"  {m}", file=sys.stderr)
        return 1

    per_rows = []
    by_sir: dict[float, list] = {}
    for rec in gt_man["mixtures"]:
        erec = est_by_id[rec["id"]]
        y, _ = read_wav(mix_dir / rec["mixture_file"], rec["scale"])
        refs = [
            read_wav(mix_dir / s["file"], s["scale"])[0] for s in rec["sources"]
        ]
        refs.append(read_wav(mix_dir / rec["noise"]["file"], rec["noise"]["scale"])[0])
        ests = [
            read_wav(out_dir / s["file"], s["scale"])[0] for s in erec["sources"]
        ]
        ests.append(read_wav(out_dir / erec["noise"]["file"], erec["noise"]["scale"])[0])
        m = evaluate_run(ests, refs, y)
        row = [rec["id"], rec["sir_db"], f"{rec['snr_db']:.4f}",
               "|".join(str(p) for p in m.permutation)]
        for j in range(k):
            row += [f"{m.speech_si_sdr[j]:.6f}", f"{m.speech_si_sdri[j]:.6f}"]
        row += [
            f"{m.noise_si_sdr:.6f}",
            f"{m.noise_si_sdri:.6f}",
            f"{m.mean_si_sdr:.6f}",
            f"{m.mean_si_sdri:.6f}",
        ]
        per_rows.append(row)
        by_sir.setdefault(float(rec["sir_db"]), []).append(m)

    header = ["id", "sir_db", "snr_db", "permutation"]
    for j in range(k):
        header += [f"si_sdr_x{j + 1}", f"si_sdri_x{j + 1}"]
    header += ["si_sdr_noise", "si_sdri_noise", "mean_si_sdr", "mean_si_sdri"]
    _write_csv(out_dir / "metrics_per_mixture.csv", header, per_rows)

    def _bucket(records):
        sdr = float(np.mean([v for m in records for v in m.speech_si_sdr]))
        sdri = float(np.mean([v for m in records for v in m.speech_si_sdri]))
        nsdr = float(np.mean([m.noise_si_sdr for m in records]))
        nsdri = float(np.mean([m.noise_si_sdri for m in records]))
        overall = float(np.mean([m.mean_si_sdri for m in records]))
        return sdr, sdri, nsdr, nsdri, overall

    sum_rows = []
    all_records = []
    for sir in sorted(by_sir):
        records = by_sir[sir]
        all_records.extend(records)
        sdr, sdri, nsdr, nsdri, overall = _bucket(records)
        sum_rows.append(
            [sir, len(records), f"{sdr:.4f}", f"{sdri:.4f}", f"{nsdr:.4f}",
             f"{nsdri:.4f}", f"{overall:.4f}"]
        )
        print(
            f"sir {sir:+.1f} dB (n={len(records)}): speech si-sdri {sdri:.2f} dB, "
            f"noise si-sdri {nsdri:.2f} dB"
        )
    sdr, sdri, nsdr, nsdri, overall = _bucket(all_records)
    sum_rows.append(
        ["overall", len(all_records), f"{sdr:.4f}", f"{sdri:.4f}", f"{nsdr:.4f}",
         f"{nsdri:.4f}", f"{overall:.4f}"]
    )
    print(
        f"overall (n={len(all_records)}): speech si-sdri {sdri:.2f} dB, "
        f"noise si-sdri {nsdri:.2f} dB"
    )
    _write_csv(
        out_dir / "metrics_summary.csv",
        ["sir_db", "count", "speech_si_sdr", "speech_si_sdri", "noise_si_sdr",
         "noise_si_sdri", "mean_si_sdri"],
        sum_rows,
    )
    return 0


# ---- entry point ----


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override one config key (repeatable)",
    )
    common.add_argument("--seed", type=int, default=None, help="override seed")

    parser = _Parser(prog="dpsep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate corpus and mixtures")
    p_train = sub.add_parser("train", parents=[common], help="train one denoiser")
    p_train.add_argument("--role", choices=("speech", "noise"), required=True)
    p_train.add_argument(
        "--resume", action="store_true", help="continue from the saved checkpoint"
    )
    p_sep = sub.add_parser("separate", parents=[common], help="run posterior sampling")
    p_sep.add_argument(
        "--limit", type=int, default=None, help="only process the first N mixtures"
    )
    sub.add_parser("eval", parents=[common], help="score estimates against truth")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.role, args.resume)
        if args.command == "separate":
            return cmd_separate(cfg, args.limit)
        if args.command == "eval":
            return cmd_eval(cfg)
        raise _UsageError(f"unknown command {args.command}")
    except (TrainingDiverged, NonFiniteStateError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (_UsageError, ConfigError, CheckpointError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
