"""Command-line interface: the pipeline stages as subcommands.

Every subcommand is reproducible under a fixed ``--seed``; ``--config FILE``
preloads flag values from JSON (top-level keys per subcommand, flag names
with underscores) which explicit flags then override. Validation problems
exit 1 with a message on stderr; argparse handles unknown flags with exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import accddoa, audio_io, augment, ensemble, features, keypost
from . import metrics as metrics_mod
from . import nnet, scenesynth
from .types import ClassMap, default_class_map

SCHEMA_VERSION = 1
GRADCHECK_TOL = 1e-4


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _load_class_map(args) -> ClassMap:
    if getattr(args, "classes", None):
        return ClassMap.load(args.classes)
    return default_class_map()


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = dict(
        duration_s=args.duration_s,
        mean_events=args.mean_events,
        std_events=args.std_events,
        noise_floor_db_mean=args.noise_db_mean,
        noise_floor_db_std=args.noise_db_std,
        onscreen_prob=args.onscreen_prob,
        n_classes=args.n_classes,
    )
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            loaded = json.load(fh)
        known = {f.name for f in dataclasses.fields(scenesynth.SceneSpec)}
        unknown = set(loaded) - known
        if unknown:
            return _fail(f"unknown SceneSpec fields in {args.spec}: "
                         f"{sorted(unknown)}")
        base.update(loaded)
        base.pop("seed", None)
    for i in range(args.n_scenes):
        spec = scenesynth.SceneSpec(seed=args.seed + i, **base)
        clip, records = scenesynth.generate_scene(spec)
        audio_io.write_wav(clip, out_dir / f"{clip.clip_id}.wav")
        audio_io.write_labels(records, out_dir / f"{clip.clip_id}.csv")
        if args.segment:
            for seg_clip, seg_records in scenesynth.segment_scene(
                    clip, records, spec):
                audio_io.write_wav(seg_clip, out_dir / f"{seg_clip.clip_id}.wav")
                audio_io.write_labels(
                    seg_records, out_dir / f"{seg_clip.clip_id}.csv")
    print(f"wrote {args.n_scenes} scenes to {out_dir}")
    return 0


def _extract_one(paths):
    wav_path, out_path = paths
    clip = audio_io.read_wav(wav_path)
    tensor = features.extract_features(clip)
    audio_io.write_tensor(tensor.data, out_path)
    return str(out_path)


def cmd_extract_features(args) -> int:
    inputs = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir():
            inputs.extend(sorted(p.glob("*.wav")))
        else:
            inputs.append(p)
    if not inputs:
        return _fail("no input wav files")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(p, out_dir / (p.stem + ".ssld")) for p in inputs]
    if args.threads > 1:
        from multiprocessing import Pool

        with Pool(args.threads) as pool:
            done = pool.map(_extract_one, jobs)
    else:
        done = [_extract_one(j) for j in jobs]
    print(f"extracted {len(done)} feature tensors to {out_dir}")
    return 0


def cmd_augment(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        return _fail(f"no wav files in {in_dir}")
    n = 0
    for wav_path in wavs:
        csv_path = wav_path.with_suffix(".csv")
        if not csv_path.exists():
            return _fail(f"missing labels for {wav_path}")
        clip = audio_io.read_wav(wav_path)
        clip.clip_id = wav_path.stem
        records = audio_io.read_labels(csv_path)
        kp_path = wav_path.with_suffix(".keypoints.json")
        item = {"clip_id": wav_path.stem, "clip": clip, "events": records}
        if kp_path.exists():
            item["keypoints"] = audio_io.read_keypoints(kp_path)
        for out in augment.augment_manifest([item]):
            audio_io.write_wav(out["clip"], out_dir / f"{out['clip_id']}.wav")
            audio_io.write_labels(out["events"],
                                  out_dir / f"{out['clip_id']}.csv")
            if out.get("keypoints") is not None:
                audio_io.write_keypoints(
                    out["keypoints"],
                    out_dir / f"{out['clip_id']}.keypoints.json")
            n += 1
    print(f"wrote {n} items to {out_dir}")
    return 0


def cmd_encode_labels(args) -> int:
    records = audio_io.read_labels(args.labels, n_classes=args.n_classes)
    n_frames = args.n_frames
    if n_frames is None:
        n_frames = 1 + max((r.frame_index for r in records), default=-1)
    seq = accddoa.encode_labels(records, n_frames, args.n_classes)
    # file layout is (tracks, classes, 4, frames)
    audio_io.write_tensor(seq.transpose(1, 2, 3, 0), args.out)
    print(f"encoded {len(records)} events over {n_frames} frames to {args.out}")
    return 0


def _toy_dataset(data_dir: Path, n_classes: int, fixture_seed: int,
                 audio_only: bool):
    wavs = sorted(data_dir.glob("*.wav"))
    if not wavs:
        raise ValueError(f"no wav files in {data_dir}")
    dataset = []
    for i, wav_path in enumerate(wavs):
        csv_path = wav_path.with_suffix(".csv")
        if not csv_path.exists():
            raise ValueError(f"missing labels for {wav_path}")
        clip = audio_io.read_wav(wav_path)
        feats = features.extract_features(clip)
        n_out = feats.data.shape[1] // 16
        records = audio_io.read_labels(csv_path, n_classes=n_classes)
        item = {
            "features": feats.data,
            "refs": accddoa.events_by_frame(records, n_out),
            "clap": nnet.make_fixture("clap_audio", fixture_seed + i).tokens,
        }
        if not audio_only:
            item["visual"] = nnet.make_fixture(
                "owlvit_visual", fixture_seed + i).tokens
        dataset.append(item)
    return dataset


def cmd_train_toy(args) -> int:
    config = nnet.toy_config(n_classes=args.n_classes,
                             audio_only=args.audio_only, dtype="float32")
    model = nnet.SeldModel(config, seed=args.seed)
    dataset = _toy_dataset(Path(args.data_dir), args.n_classes,
                           args.fixture_seed, args.audio_only)
    log = nnet.train_toy(model, dataset, epochs=args.epochs, lr0=args.lr0,
                         batch_size=args.batch, seed=args.seed,
                         onscreen_weight=args.onscreen_weight)
    nnet.save_checkpoint(model, args.out)
    for entry in log:
        print(json.dumps(entry))
    print(f"saved checkpoint to {args.out}", file=sys.stderr)
    return 0


def cmd_infer(args) -> int:
    model = nnet.load_checkpoint(args.model)
    data = audio_io.read_tensor(args.features).astype(np.float64)
    if args.clap:
        clap = audio_io.read_fixture(args.clap, "clap_audio")
    else:
        clap = nnet.make_fixture("clap_audio", args.fixture_seed)
    visual = None
    if not model.config.audio_only:
        if args.owlvit:
            visual = audio_io.read_fixture(args.owlvit, "owlvit_visual")
        else:
            visual = nnet.make_fixture("owlvit_visual", args.fixture_seed)
    out = nnet.model_forward(model, data, clap, visual)
    records = []
    for t in range(out.shape[0]):
        records.extend(accddoa.decode_frame(
            out[t], frame_index=t, act_threshold=args.act_threshold,
            on_threshold=args.on_threshold))
    audio_io.write_labels(records, args.out)
    print(f"decoded {len(records)} events to {args.out}")
    return 0


def _read_frames(path, n_frames=None):
    records = audio_io.read_labels(path)
    if n_frames is None:
        n_frames = 1 + max((r.frame_index for r in records), default=-1)
    return accddoa.events_by_frame(records, n_frames)


def cmd_ensemble(args) -> int:
    class_map = _load_class_map(args)
    names = [s.strip() for s in args.single_system_classes.split(",") if s.strip()]
    try:
        single = frozenset(class_map.index_of(n) for n in names)
    except ValueError as exc:
        return _fail(f"unknown class name in --single-system-classes: {exc}")
    all_records = [audio_io.read_labels(p) for p in args.inputs]
    n_frames = 1 + max((r.frame_index for recs in all_records for r in recs),
                       default=-1)
    systems = [
        ensemble.SystemPredictions(
            system_id=str(p), frames=accddoa.events_by_frame(recs, n_frames))
        for p, recs in zip(args.inputs, all_records)]
    fused = ensemble.ensemble(systems, doa_gate_deg=args.gate_deg,
                              class_map=class_map,
                              single_system_classes=single)
    audio_io.write_labels([ev for frame in fused for ev in frame], args.out)
    print(f"fused {len(systems)} systems to {args.out}")
    return 0


def cmd_postprocess(args) -> int:
    class_map = _load_class_map(args)
    frames = _read_frames(args.pred)
    kps = audio_io.read_keypoints(args.keypoints)
    fixed = keypost.apply_keypoint_override(
        frames, kps, class_map, gate_deg=args.gate_deg,
        min_conf=args.min_conf, fov_h_deg=args.fov_deg)
    audio_io.write_labels([ev for frame in fixed for ev in frame], args.out)
    n_flipped = sum(
        int(b.onscreen and not a.onscreen)
        for fa, fb in zip(frames, fixed) for a, b in zip(fa, fb))
    print(f"set {n_flipped} predictions on-screen; wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred_path, ref_path = Path(args.pred), Path(args.ref)
    if pred_path.is_dir() != ref_path.is_dir():
        return _fail("--pred and --ref must both be files or both directories")
    counts: dict[int, metrics_mod.ClassCounts] = {}
    if pred_path.is_dir():
        ref_clips = {p.stem: p for p in sorted(ref_path.glob("*.csv"))}
        pred_clips = sorted(pred_path.glob("*.csv"))
        if not pred_clips:
            return _fail(f"no prediction csv files in {pred_path}")
        unscored = sorted(set(ref_clips) - {p.stem for p in pred_clips})
        if unscored:
            return _fail(f"missing predictions for clip ids {unscored}")
        for p in pred_clips:
            if p.stem not in ref_clips:
                return _fail(f"prediction clip id {p.stem!r} has no reference")
            pred_recs = audio_io.read_labels(p)
            ref_recs = audio_io.read_labels(ref_clips[p.stem])
            n = 1 + max((r.frame_index for r in pred_recs + ref_recs), default=0)
            metrics_mod.accumulate_counts(
                accddoa.events_by_frame(pred_recs, n),
                accddoa.events_by_frame(ref_recs, n), counts)
        report = metrics_mod.report_from_counts(counts)
    else:
        report = metrics_mod.score_files(pred_path, ref_path)

    doc = {"schema": SCHEMA_VERSION, "metrics": report.to_dict()}
    if args.json is not None and args.json != "-":
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    if args.json is not None:
        print(json.dumps(doc, indent=1))
    else:
        m = report.to_dict()

        def show(v):
            return "n/a" if v is None else f"{v:.4f}"

        print(f"F1(<=20deg, rel dist <=1): {show(m['f1_le20_1'])}")
        print(f"F1 on-screen variant:      {show(m['f1_le20_1_on'])}")
        print(f"DOA error [deg]:           {show(m['doae_deg'])}")
        print(f"Relative distance error:   {show(m['rde'])}")
        print(f"On/off-screen accuracy:    {show(m['onoff_acc'])}")
    return 0


def cmd_gradcheck(args) -> int:
    results = nnet.gradcheck_suite(seed=args.seed, which=args.ops)
    worst_name, worst = max(results, key=lambda r: r[1])
    if args.json:
        print(json.dumps({
            "schema": SCHEMA_VERSION,
            "tolerance": GRADCHECK_TOL,
            "results": {n: e for n, e in results},
            "passed": worst <= GRADCHECK_TOL,
        }, indent=1))
    else:
        print(f"{'op':30s} {'max rel err':>12s}")
        for name, err in results:
            flag = "" if err <= GRADCHECK_TOL else "  FAIL"
            print(f"{name:30s} {err:12.3e}{flag}")
        print(f"worst: {worst_name} ({worst:.3e}), tolerance {GRADCHECK_TOL:g}")
    return 0 if worst <= GRADCHECK_TOL else 1


# ---------------------------------------------------------------------------
# parser

def build_parser(overrides: dict | None = None) -> argparse.ArgumentParser:
    overrides = overrides or {}

    parser = argparse.ArgumentParser(
        prog="ssld",
        description="Stereo sound event localization and detection toolkit")
    sub = parser.add_subparsers(dest="cmd", required=True)
    subparsers = {}

    def mk(name, func, help_):
        p = sub.add_parser(
            name, help=help_,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="global random seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for file-parallel stages")
        p.add_argument("--config", default=None,
                       help="JSON config preloading flag values")
        subparsers[name] = p
        return p

    p = mk("synth", cmd_synth, "generate synthetic scenes (wav + label csv)")
    p.add_argument("--n-scenes", type=int, default=1, help="number of scenes")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--duration-s", type=float, default=60.0, help="scene length")
    p.add_argument("--mean-events", type=float, default=18.0, help="mean events per scene")
    p.add_argument("--std-events", type=float, default=6.0, help="event count spread")
    p.add_argument("--noise-db-mean", type=float, default=-65.0, help="noise floor mean")
    p.add_argument("--noise-db-std", type=float, default=15.0, help="noise floor spread")
    p.add_argument("--onscreen-prob", type=float, default=0.2, help="per-event on-screen probability")
    p.add_argument("--n-classes", type=int, default=13, help="class count")
    p.add_argument("--segment", action="store_true",
                   help="also write the non-silent 5 s segments")
    p.add_argument("--spec", default=None,
                   help="JSON file of scene-spec fields; overrides the "
                        "per-field flags")

    p = mk("extract-features", cmd_extract_features,
           "compute 4x T x 64 feature tensors from wav files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="wav files or directories")
    p.add_argument("--out-dir", required=True, help="output directory")

    p = mk("augment", cmd_augment,
           "double a manifest with channel-swapped copies")
    p.add_argument("--in-dir", required=True, help="directory of wav+csv pairs")
    p.add_argument("--out-dir", required=True, help="output directory")

    p = mk("encode-labels", cmd_encode_labels,
           "encode a label csv as a multi-track target tensor")
    p.add_argument("--labels", required=True, help="label csv")
    p.add_argument("--out", required=True, help="output tensor path")
    p.add_argument("--n-classes", type=int, default=13, help="class count")
    p.add_argument("--n-frames", type=int, default=None,
                   help="label grid length (default: max frame + 1)")

    p = mk("train-toy", cmd_train_toy, "overfit the toy model on a directory")
    p.add_argument("--data-dir", required=True, help="directory of wav+csv pairs")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=300, help="training epochs")
    p.add_argument("--lr0", type=float, default=1e-3, help="initial learning rate (5%% decay per epoch after 30)")
    p.add_argument("--batch", type=int, default=32, help="batch size")
    p.add_argument("--n-classes", type=int, default=13, help="class count")
    p.add_argument("--onscreen-weight", type=float, default=1.0, help="on-screen BCE weight (4.0 for the weighted variant)")
    p.add_argument("--audio-only", action="store_true", help="drop the visual branch")
    p.add_argument("--fixture-seed", type=int, default=0, help="seed for generated embedding fixtures")

    p = mk("infer", cmd_infer, "run a checkpoint on a feature tensor")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--features", required=True, help="input feature tensor")
    p.add_argument("--out", required=True, help="output label csv")
    p.add_argument("--clap", default=None, help="audio fixture tensor")
    p.add_argument("--owlvit", default=None, help="visual fixture tensor")
    p.add_argument("--fixture-seed", type=int, default=0,
                   help="generate fixtures when none are given")
    p.add_argument("--act-threshold", type=float, default=0.5, help="activity norm threshold")
    p.add_argument("--on-threshold", type=float, default=0.5, help="on-screen threshold")

    p = mk("ensemble", cmd_ensemble, "fuse predictions from several systems")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="per-system prediction csvs")
    p.add_argument("--out", required=True, help="fused csv")
    p.add_argument("--gate-deg", type=float, default=20.0, help="agreement gate in degrees")
    p.add_argument("--single-system-classes", default="bell,knock", help="classes kept on a single detection")
    p.add_argument("--classes", default=None, help="class map json")

    p = mk("postprocess", cmd_postprocess,
           "force on-screen near detected person keypoints")
    p.add_argument("--pred", required=True, help="prediction csv")
    p.add_argument("--keypoints", required=True, help="keypoint json")
    p.add_argument("--out", required=True, help="output csv")
    p.add_argument("--fov-deg", type=float, default=100.0, help="camera horizontal field of view")
    p.add_argument("--gate-deg", type=float, default=20.0, help="azimuth gate in degrees")
    p.add_argument("--min-conf", type=float, default=0.5, help="keypoint confidence threshold")
    p.add_argument("--classes", default=None, help="class map json")

    p = mk("evaluate", cmd_evaluate, "score predictions against references")
    p.add_argument("--pred", required=True, help="prediction csv or directory")
    p.add_argument("--ref", required=True, help="reference csv or directory")
    p.add_argument("--json", nargs="?", const="-", default=None, metavar="PATH",
                   help="machine-readable report on stdout, or into PATH")

    p = mk("gradcheck", cmd_gradcheck,
           "finite-difference check of every op and block")
    p.add_argument("--ops", default="all",
                   help='"all" or comma-separated op names')
    p.add_argument("--json", action="store_true", help="machine-readable output")

    for name, values in overrides.items():
        p = subparsers.get(name)
        if p is None:
            continue
        unknown = set(values) - {a.dest for a in p._actions}
        if unknown:
            raise ValueError(f"config keys {sorted(unknown)} unknown for {name}")
        p.set_defaults(**values)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        try:
            args = build_parser(cfg).parse_args(argv)
        except ValueError as exc:
            return _fail(str(exc))
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
