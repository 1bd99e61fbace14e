"""End-to-end commands: synthesis, prompts, masks, training, dehazing, evaluation, ablation.

Every command takes a resolved :class:`RunConfig`, writes ``run_config.json``
next to its outputs, and is deterministic for a fixed config. All randomness
comes from :func:`derive_seed` applied to the root seed.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .config import RunConfig, derive_seed
from .diffusion import SprModel, make_schedule, make_spr_batch, sample, smoothed, to_torch, train_spr
from .haze import HazeParams, generate_clean_image, sample_haze_params, synthesize_pair
from .imaging import list_images, load_image, save_image, to_display, write_raw
from .mask import dark_channel, dcp_dehaze_baseline, init_mask_weights, window_sparse_masks
from .metrics import compare_images, evaluate_dataset
from .prompt import encode_latent, extract_high_freq_prompt, haar_dwt, stack_high_bands
from .refiner import N_STAGES, WST_STAGES, RefinerParams, prepare_inputs, teacher_latents, train_hcr

log = logging.getLogger(__name__)


def _prepare_out(config: RunConfig, out_dir=None) -> Path:
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(config.to_json())
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(config: RunConfig) -> Path:
    """Write ``clean/``, ``hazy/`` and ``meta/`` triples under ``config.out_dir``."""
    root = _prepare_out(config)
    for sub in ("clean", "hazy", "meta"):
        (root / sub).mkdir(exist_ok=True)
    ranges = config.haze_ranges()
    for i in range(config.n_images):
        name = f"img_{i:04d}"
        clean = generate_clean_image(config.image_size, config.image_size, derive_seed(config.seed, f"clean/{i}"))
        params = sample_haze_params(derive_seed(config.seed, f"haze/{i}"), ranges)
        hazy, _ = synthesize_pair(clean, params)
        save_image(clean, root / "clean" / f"{name}.png")
        save_image(hazy, root / "hazy" / f"{name}.png")
        (root / "meta" / f"{name}.json").write_text(params.to_json() + "\n")
    log.info("synthesized %d pairs in %s", config.n_images, root)
    return root


def load_pairs(root) -> tuple[list[str], list[np.ndarray], list[np.ndarray]]:
    root = Path(root)
    if not (root / "clean").is_dir() or not (root / "hazy").is_dir():
        raise FileNotFoundError(f"no synthetic dataset at {root} (expected clean/ and hazy/)")
    names = [n for n in list_images(root / "hazy") if (root / "clean" / n).is_file()]
    if not names:
        raise FileNotFoundError(f"dataset at {root} has no clean/hazy pairs")
    clean = [load_image(root / "clean" / n) for n in names]
    hazy = [load_image(root / "hazy" / n) for n in names]
    return names, clean, hazy


def load_meta(root, name) -> HazeParams:
    return HazeParams.from_json((Path(root) / "meta" / (Path(name).stem + ".json")).read_text())


def cmd_prompt(config: RunConfig, image_path) -> Path:
    out = _prepare_out(config)
    img = load_image(image_path)
    prompt = extract_high_freq_prompt(img)
    stem = Path(image_path).stem
    save_image(to_display(prompt.x_high), out / f"{stem}_prompt.png")
    write_raw(prompt.x_high, out / f"{stem}_prompt")
    return out


def stage_shapes(image_hw) -> list[tuple[int, int]]:
    h, w = image_hw
    return [(h // 2 ** (N_STAGES - 1 - s), w // 2 ** (N_STAGES - 1 - s)) for s in WST_STAGES]


def cmd_mask(config: RunConfig, image_path) -> Path:
    """DCP mask PNG plus per-window sparse masks for each attention stage (init weights)."""
    out = _prepare_out(config)
    img = load_image(image_path)
    stem = Path(image_path).stem
    dcp = dark_channel(img, config.dcp_patch)
    save_image(dcp.values, out / f"{stem}_dcp.png")
    window = tuple(config.window)
    for i, hw in enumerate(stage_shapes(img.shape[:2])):
        wq, wk = init_mask_weights(window[0] * window[1])
        masks = window_sparse_masks(dcp.values, hw, window, wq, wk, config.k_fraction)
        write_raw(masks[..., None], out / f"{stem}_ms_stage{i}")
    return out


def _spr_header(config, model, schedule, seed, trace):
    return {"stage": "spr", "seed": seed, "use_prompt": model.use_prompt, "hidden": model.denoiser.conv1.out_channels,
            "schedule": schedule.as_dict(), "steps": config.spr_steps, "lr": config.spr_lr,
            "loss_trace": trace, "smoothed": list(smoothed(trace)) if trace else []}


def fit_spr(config: RunConfig, clean, hazy, use_prompt: bool = True):
    schedule = make_schedule(config.T, config.beta_min, config.beta_max)
    model = SprModel(seed=derive_seed(config.seed, "spr-init"), use_prompt=use_prompt)
    data = make_spr_batch(clean, hazy)
    seed = derive_seed(config.seed, "spr-train")
    model, trace = train_spr(model, data, schedule, config.spr_steps, config.spr_lr, seed)
    return model, schedule, trace


def spr_condition(model: SprModel, hazy: np.ndarray) -> torch.Tensor:
    bands = torch.as_tensor(stack_high_bands(haar_dwt(hazy)))[None]
    with torch.no_grad():
        return model.condition(to_torch(encode_latent(hazy)), bands)


def restore_latents(model: SprModel, schedule, hazy_images, seed: int, names) -> list[np.ndarray]:
    out = []
    for name, x in zip(names, hazy_images):
        z = sample(model, spr_condition(model, x), schedule, derive_seed(seed, f"sample/{name}"))
        out.append(z[0].permute(1, 2, 0).numpy())
    return out


def fit_hcr(config: RunConfig, clean, hazy, names, spr=None, use_mask: bool = True):
    """Train the refiner; latents are teacher-forced or sampled from ``spr = (model, schedule)``."""
    rcfg = config.refiner_config(use_mask=use_mask)
    if config.teacher_forced or spr is None:
        z0s = teacher_latents(clean)
    else:
        z0s = restore_latents(spr[0], spr[1], hazy, derive_seed(config.seed, "hcr-latents"), names)
    inputs = prepare_inputs(hazy, z0s, rcfg)
    params = RefinerParams(rcfg)
    params, trace = train_hcr(params, inputs, np.stack(clean), config.hcr_steps, config.hcr_lr,
                              derive_seed(config.seed, "hcr-train"))
    return params, trace


def _spr_path(config):
    return Path(config.spr_checkpoint or Path(config.out_dir) / "spr.ckpt")


def _hcr_path(config):
    return Path(config.hcr_checkpoint or Path(config.out_dir) / "hcr.ckpt")


def cmd_train(config: RunConfig, stage: str) -> Path:
    out = _prepare_out(config)
    names, clean, hazy = load_pairs(config.dataset_root)
    if stage == "spr":
        model, schedule, trace = fit_spr(config, clean, hazy)
        path = _spr_path(config)
        checkpoint.save_checkpoint(path, model, _spr_header(config, model, schedule, derive_seed(config.seed, "spr-init"), trace))
    elif stage == "hcr":
        spr = None
        if not config.teacher_forced:
            model, schedule, _ = checkpoint.load_spr(_spr_path(config))
            spr = (model, schedule)
        params, trace = fit_hcr(config, clean, hazy, names, spr)
        path = _hcr_path(config)
        header = {"stage": "hcr", "refiner": params.config.as_dict(), "teacher_forced": config.teacher_forced,
                  "steps": config.hcr_steps, "lr": config.hcr_lr, "loss_trace": trace,
                  "smoothed": list(smoothed(trace)) if trace else []}
        checkpoint.save_checkpoint(path, params, header)
    else:
        raise ValueError(f"unknown stage {stage!r}; expected 'spr' or 'hcr'")
    _write_json(out / f"{stage}_trace.json", trace)
    log.info("%s training: smoothed loss %s -> %s", stage, *smoothed(trace))
    return path


def dehaze_toy(spr_model, schedule, refiner: RefinerParams, hazy: np.ndarray, seed: int) -> np.ndarray:
    z = sample(spr_model, spr_condition(spr_model, hazy), schedule, seed)[0].permute(1, 2, 0).numpy()
    inputs = prepare_inputs([hazy], [z], refiner.config)
    with torch.no_grad():
        return refiner(inputs.z0, inputs.enc_feats, inputs.dcp_windows)[0].numpy()


def cmd_dehaze(config: RunConfig, method: str) -> Path:
    """Dehaze every image of ``input_dir`` (default ``<dataset_root>/hazy``) into ``out_dir``.

    Per-image wall time goes to ``timing.log``; it is the one output that varies between runs.
    """
    src = Path(config.input_dir or Path(config.dataset_root) / "hazy")
    if not src.is_dir():
        raise FileNotFoundError(f"input directory not found: {src}")
    if method == "prodehaze-toy":
        spr_model, schedule, _ = checkpoint.load_spr(_spr_path(config))
        refiner, _ = checkpoint.load_hcr(_hcr_path(config))
    elif method != "dcp":
        raise ValueError(f"unknown method {method!r}; expected 'dcp' or 'prodehaze-toy'")
    out = _prepare_out(config)
    timings = []
    for name in list_images(src):
        img = load_image(src / name)
        start = time.perf_counter()
        if method == "dcp":
            result = dcp_dehaze_baseline(img, config.dcp_patch)
        else:
            result = dehaze_toy(spr_model, schedule, refiner, img, derive_seed(config.seed, f"dehaze/{name}"))
        timings.append((name, time.perf_counter() - start))
        save_image(result, out / (Path(name).stem + ".png"))
    with open(out / "timing.log", "w") as fh:
        for name, sec in timings:
            fh.write(f"{name}\t{sec:.6f}\n")
    return out


def cmd_eval(pred_dir, gt_dir, out_path) -> dict:
    report = evaluate_dataset(pred_dir, gt_dir)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    Path(f"{stem}.json").write_text(report.to_json())
    Path(f"{stem}.csv").write_text(report.to_csv())
    return {"means": report.means, "warnings": report.warnings}


ABLATION_ROWS = (
    ("-prompt-Ms", False, False),
    ("-prompt+Ms", False, True),
    ("+prompt-Ms", True, False),
    ("+prompt+Ms", True, True),
)


def run_ablation(config: RunConfig) -> list[dict]:
    """Train and score the four {+/-prompt} x {+/-M_s} toy pipelines with paired seeds.

    The first ``train_fraction`` of the dataset trains, the rest is scored.
    """
    names, clean, hazy = load_pairs(config.dataset_root)
    n_train = max(1, min(len(names) - 1, int(round(config.train_fraction * len(names)))))
    tr = slice(0, n_train)
    te = slice(n_train, None)
    spr_models = {}
    for use_prompt in (False, True):
        model, schedule, _ = fit_spr(config, clean[tr], hazy[tr], use_prompt=use_prompt)
        spr_models[use_prompt] = (model, schedule)
    rows = []
    for label, use_prompt, use_mask in ABLATION_ROWS:
        model, schedule = spr_models[use_prompt]
        refiner, _ = fit_hcr(config, clean[tr], hazy[tr], names[tr], (model, schedule), use_mask=use_mask)
        scores = []
        for name, x, gt in zip(names[te], hazy[te], clean[te]):
            pred = dehaze_toy(model, schedule, refiner, x, derive_seed(config.seed, f"ablate-sample/{name}"))
            scores.append(compare_images(pred, gt))
        rows.append({"config": label, "prompt": use_prompt, "mask": use_mask,
                     **{k: float(np.mean([s[k] for s in scores])) for k in ("psnr_db", "ssim", "ciede2000")}})
    return rows


def cmd_ablate(config: RunConfig) -> Path:
    out = _prepare_out(config)
    rows = run_ablation(config)
    _write_json(out / "ablation.json", rows)
    lines = ["config,prompt,mask,psnr_db,ssim,ciede2000"]
    lines += [f"{r['config']},{r['prompt']},{r['mask']},{r['psnr_db']!r},{r['ssim']!r},{r['ciede2000']!r}" for r in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return out
