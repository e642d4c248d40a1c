"""Command-line tool: train / render / eval / gen / serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .estimator import as_camera, as_light
from .image import write_png, write_raw
from .metrics import compute_ssim, psnr
from .rendering import RenderToggles, render_frame
from .sceneio import generate_toy_dataset, load_checkpoint, load_manifest, save_checkpoint
from .service import StateRequest, render_state
from .shadow import light_directions, refine_shadow, shadow_splat, write_shadow_table
from .trainer import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gs3",
                                description="Relightable gaussian splatting engine")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on an OLAT dataset")
    t.add_argument("--data", required=True, help="manifest JSON path")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--basis", type=int, default=8, help="basis lobe count")
    t.add_argument("--iters", type=int, default=115000)
    t.add_argument("--stage1", type=int, default=None,
                   help="stage-1 (diffuse only) iterations")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--n-init", type=int, default=2000)
    t.add_argument("--no-shadow-splat", action="store_true")
    t.add_argument("--no-phi", action="store_true")
    t.add_argument("--no-psi", action="store_true")
    t.add_argument("--no-densify", action="store_true")
    t.add_argument("--quiet", action="store_true")

    r = sub.add_parser("render", help="render one frame from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--camera", required=True, help="camera JSON file")
    r.add_argument("--light", required=True, help="light JSON file")
    r.add_argument("--out", required=True, help="output image (.png or .raw)")
    r.add_argument("--exposure", type=float, default=1.0)
    r.add_argument("--no-shadow-splat", action="store_true")
    r.add_argument("--no-phi", action="store_true")
    r.add_argument("--no-psi", action="store_true")
    r.add_argument("--shadow-table", default=None,
                   help="also dump the per-gaussian (T, T') table here")

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics", required=True, help="output CSV path")

    g = sub.add_parser("gen", help="generate a toy OLAT dataset")
    g.add_argument("--kind", required=True,
                   choices=["diffuse-sphere", "glossy-sphere", "occluder-pair"])
    g.add_argument("--out", required=True)
    g.add_argument("--views", type=int, default=50)
    g.add_argument("--lights", type=int, default=50)
    g.add_argument("--res", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-views", type=int, default=8)

    s = sub.add_parser("serve", help="serve the interactive render protocol")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--host", default="127.0.0.1")
    return p


def _toggles(args) -> RenderToggles:
    return RenderToggles(shadow_splat=not args.no_shadow_splat,
                         phi=not args.no_phi, psi=not args.no_psi)


def cmd_train(args) -> int:
    manifest = load_manifest(args.data)
    iters = args.iters
    stage1 = args.stage1 if args.stage1 is not None else min(15000, max(iters // 4, 1))
    cfg = TrainConfig(
        basis_count=args.basis, total_iters=iters, stage1_iters=min(stage1, iters - 1),
        seed=args.seed, n_init=args.n_init,
        shadow_splatting=not args.no_shadow_splat, phi=not args.no_phi,
        psi=not args.no_psi, densify=not args.no_densify,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    progress = None
    if not args.quiet:
        def progress(it, loss, n):
            if it % max(1, iters // 50) == 0 or it == 1:
                print(f"iter {it:7d}  loss {loss:.5f}  gaussians {n}", flush=True)

    result = train(manifest, cfg, progress=progress)
    save_checkpoint(result.model, out / "checkpoint.gs3c", config=cfg.to_dict())
    (out / "loss_log.csv").write_text(result.log_csv())
    print(f"checkpoint: {out / 'checkpoint.gs3c'}")
    print(f"loss log:   {out / 'loss_log.csv'}")
    return 0


def cmd_render(args) -> int:
    model, cfg = load_checkpoint(args.ckpt, want_config=True)
    camera = as_camera(json.loads(Path(args.camera).read_text()))
    light_spec = json.loads(Path(args.light).read_text())
    toggles = _toggles(args)
    if light_spec.get("kind") == "env":
        img = render_state(model, StateRequest(camera=camera, light=light_spec,
                                               toggles=toggles, exposure=args.exposure))
    else:
        light = as_light(light_spec)
        img = render_frame(model, camera, light, toggles, exposure=args.exposure)
        if args.shadow_table:
            if toggles.shadow_splat:
                raw_t = shadow_splat(model, light, (camera.width, camera.height)).raw_t
            else:
                raw_t = np.ones(len(model.cloud))
            if toggles.phi:
                wi, _, _ = light_directions(light, model.cloud.mu)
                refined = refine_shadow(model.phi, raw_t, wi, model.cloud.mu,
                                        model.cloud.latent)
            else:
                refined = raw_t
            write_shadow_table(args.shadow_table, raw_t, refined)
    if str(args.out).endswith(".png"):
        write_png(img, args.out)
    else:
        write_raw(img, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.ckpt, want_config=True)
    toggles = RenderToggles(shadow_splat=cfg.get("shadow_splatting", True),
                            phi=cfg.get("phi", True), psi=cfg.get("psi", True))
    manifest = load_manifest(args.data)
    rows = ["frame,psnr,ssim"]
    psnrs, ssims = [], []
    for i in range(len(manifest)):
        img = render_frame(model, manifest.camera_frame(i), manifest.frames[i].light,
                           toggles)
        target = manifest.load_target(i)
        p = psnr(img, target)
        s = compute_ssim(img, target)
        psnrs.append(p)
        ssims.append(s)
        rows.append(f"{i},{p:.4f},{s:.6f}")
    finite = [p for p in psnrs if np.isfinite(p)]
    mean_p = float(np.mean(finite)) if finite else float("inf")
    mean_s = float(np.mean(ssims))
    rows.append(f"mean,{mean_p:.4f},{mean_s:.6f}")
    Path(args.metrics).write_text("\n".join(rows) + "\n")
    print(f"mean PSNR {mean_p:.2f} dB, mean SSIM {mean_s:.4f} over {len(manifest)} frames")
    return 0


def cmd_gen(args) -> int:
    path = generate_toy_dataset(args.kind, args.views, args.lights, args.res,
                                args.seed, args.out)
    print(f"wrote {path}")
    if args.test_views > 0:
        test = generate_toy_dataset(args.kind, args.test_views, args.test_views,
                                    args.res, args.seed + 1, args.out,
                                    manifest_name="manifest_test.json")
        print(f"wrote {test}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    model = load_checkpoint(args.ckpt)
    print(f"serving on ws://{args.host}:{args.port}/ws "
          f"({len(model.cloud)} gaussians); GET /health for liveness")
    serve(model, args.port, host=args.host)
    return 0


_COMMANDS = {"train": cmd_train, "render": cmd_render, "eval": cmd_eval,
             "gen": cmd_gen, "serve": cmd_serve}


def cli_dispatch(argv=None) -> int:
    """Parse and run; returns the process exit code (2 = usage, 1 = failure)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # runtime failure -> message on stderr, exit 1
        print(f"gs3 {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
