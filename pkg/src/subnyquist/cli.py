"""Command-line entry point: ``subnyquist <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-finite training loss.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import click

from . import experiments
from .kspace import build_mask, kspace_from_image, load_kspace, reduction_factor, save_mask
from .metrics import evaluate
from .phantom import build_dataset, load_dataset, read_raw, save_dataset, write_pgm, write_raw
from .reconstruction import reconstruct, reconstruct_many, save_result
from .training import (
    NonFiniteError,
    TrainConfig,
    make_training_pairs,
    save_train_config,
    train,
    write_loss_history,
)
from .unet import UNetConfig, UNetWeights, load_weights, save_weights

log = logging.getLogger("subnyquist")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(Exception):
    """Input files are missing, corrupt or inconsistent with each other."""


def _load_config(ctx: click.Context, _param, value):
    if value is None:
        return None
    try:
        doc = json.loads(Path(value).read_text())
    except (OSError, ValueError) as exc:
        raise click.BadParameter(f"cannot read config {value}: {exc}") from exc
    if not isinstance(doc, dict):
        raise click.BadParameter("config file must hold a JSON object")
    ctx.default_map = {**(ctx.default_map or {}), **{k.replace("-", "_"): v for k, v in doc.items()}}
    return value


def config_option(f):
    return click.option(
        "--config",
        type=click.Path(dir_okay=False),
        callback=_load_config,
        is_eager=True,
        expose_value=False,
        help="JSON file supplying defaults for any flag; explicit flags win.",
    )(f)


def mask_options(f):
    f = click.option("--low-lines", "low_lines", type=int, default=4, show_default=True, help="Extra low-frequency lines L.")(f)
    f = click.option("--rho", type=int, default=4, show_default=True, help="Uniform subsampling period.")(f)
    return f


def train_options(f):
    opts = [
        click.option("--epochs", type=int, default=TrainConfig.epochs, show_default=True),
        click.option("--batch-size", "batch_size", type=int, default=TrainConfig.batch_size, show_default=True),
        click.option("--lr", type=float, default=TrainConfig.learning_rate, show_default=True),
        click.option("--decay", type=float, default=TrainConfig.rms_decay, show_default=True, help="RMSProp decay."),
        click.option("--epsilon", type=float, default=TrainConfig.epsilon, show_default=True, help="RMSProp stabilizer."),
        click.option("--seed", type=int, default=0, show_default=True, help="Weight init and shuffling seed."),
        click.option("--depth", type=int, default=UNetConfig.depth, show_default=True),
        click.option("--base-channels", "base_channels", type=int, default=UNetConfig.base_channels, show_default=True),
        click.option("--holdout", type=int, default=0, show_default=True, help="Images at the end of the dataset kept out of training."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _train_config(epochs, batch_size, lr, decay, epsilon, seed, checkpoint_every=0) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=lr,
            rms_decay=decay,
            batch_size=batch_size,
            epochs=epochs,
            seed=seed,
            epsilon=epsilon,
            checkpoint_every=checkpoint_every,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _unet_config(n, depth, base_channels) -> UNetConfig:
    try:
        return UNetConfig(input_size=n, depth=depth, base_channels=base_channels)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _mask(n, rho, low_lines):
    try:
        return build_mask(n, rho, low_lines)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _dataset(path):
    try:
        return load_dataset(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from exc


def _weights(path) -> UNetWeights:
    try:
        return load_weights(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def _split(images, holdout):
    if not 0 <= holdout <= len(images):
        raise click.UsageError(f"--holdout {holdout} must lie in [0, {len(images)}]")
    cut = len(images) - holdout
    return images[:cut], images[cut:]


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(out) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return path


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Sub-Nyquist MRI reconstruction toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@cli.command()
@config_option
@click.option("--count", type=int, default=200, show_default=True)
@click.option("--n", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def dataset(count, n, seed, out):
    """Generate a random phantom corpus."""
    if count < 0:
        raise click.UsageError("--count must be >= 0")
    try:
        ds = build_dataset(count, n, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        manifest = save_dataset(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    click.echo(f"wrote {count} phantoms ({n}x{n}, seed {seed}) to {manifest}")


@cli.command(name="train")
@config_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@mask_options
@train_options
@click.option("--checkpoint-every", "checkpoint_every", type=int, default=0, show_default=True, help="Save weights every K epochs (0: final only).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def train_cmd(dataset_path, rho, low_lines, epochs, batch_size, lr, decay, epsilon, seed, depth, base_channels, holdout, checkpoint_every, out):
    """Train the U-net on a dataset under one sampling mask."""
    ds = _dataset(dataset_path)
    config = _train_config(epochs, batch_size, lr, decay, epsilon, seed, checkpoint_every)
    unet_config = _unet_config(ds.n, depth, base_channels)
    mask = _mask(ds.n, rho, low_lines)
    train_images, _ = _split(ds.images, holdout)
    if not train_images:
        raise DataError(f"dataset {dataset_path} has no training images")
    out = _out_dir(out)
    save_train_config(config, out / "train_config.json")
    save_mask(mask, out / "mask.json")

    def on_epoch(state):
        if checkpoint_every and state.epoch % checkpoint_every == 0:
            save_weights(state.weights, out / "checkpoints" / f"epoch_{state.epoch:04d}")

    state = train(make_training_pairs(train_images, mask), config, unet_config, on_epoch=on_epoch)
    extra = {"rho": rho, "low_lines": low_lines, "epochs": state.epoch}
    save_weights(state.weights, out / "checkpoint", extra=extra)
    write_loss_history(state.history, out / "loss.csv")
    last = f", final loss {state.history[-1]:.6g}" if state.history else ""
    click.echo(f"trained {state.epoch} epochs on {len(train_images)} images{last}; checkpoint in {out / 'checkpoint'}")


@cli.command(name="reconstruct")
@config_option
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--image", type=click.Path(dir_okay=False), help="Ground-truth raw float32 image to subsample.")
@click.option("--kspace", type=click.Path(dir_okay=False), help="Undersampled k-space sidecar (.json).")
@click.option("--truth", type=click.Path(dir_okay=False), help="Ground truth for difference images (with --kspace).")
@mask_options
@click.option("--out", required=True, type=click.Path(file_okay=False))
def reconstruct_cmd(checkpoint, image, kspace, truth, rho, low_lines, out):
    """Reconstruct one image and write every stage."""
    if (image is None) == (kspace is None):
        raise click.UsageError("give exactly one of --image or --kspace")
    weights = _weights(checkpoint)
    n = weights.config.input_size
    try:
        if image is not None:
            truth_img = read_raw(image)
            if truth_img.shape != (n, n):
                raise DataError(f"image is {truth_img.shape[0]}x{truth_img.shape[1]} but checkpoint expects {n}x{n}")
            x = kspace_from_image(truth_img, _mask(n, rho, low_lines))
        else:
            x = load_kspace(kspace)
            truth_img = read_raw(truth) if truth else None
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(str(exc)) from exc
    if x.mask.n != n:
        raise DataError(f"k-space is {x.mask.n}x{x.mask.n} but checkpoint expects {n}x{n}")
    result = reconstruct(x, weights)
    out = _out_dir(out)
    save_result(result, out, truth=truth_img)
    save_mask(x.mask, out / "mask.json")
    click.echo(f"wrote reconstruction stages to {out}")


@cli.command(name="eval")
@config_option
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@mask_options
@click.option("--holdout", type=int, default=0, show_default=True, help="Evaluate the last HOLDOUT images (0: all).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def eval_cmd(checkpoint, dataset_path, rho, low_lines, holdout, out):
    """Per-image MSE and SSIM of each stage on a dataset."""
    weights = _weights(checkpoint)
    ds = _dataset(dataset_path)
    if ds.n != weights.config.input_size:
        raise DataError(f"dataset is {ds.n}x{ds.n} but checkpoint expects {weights.config.input_size}")
    images = ds.images[len(ds.images) - holdout :] if holdout else ds.images
    mask = _mask(ds.n, rho, low_lines)
    results = reconstruct_many([kspace_from_image(y, mask) for y in images], weights)
    report = evaluate(results, images)
    out = _out_dir(out)
    report.write_csv(out / "metrics.csv")
    report.write_json(out / "metrics.json")
    click.echo(report.table())


@cli.command()
@config_option
@click.option("--n", type=int, default=64, show_default=True)
@click.option("--rho", type=int, default=4, show_default=True)
@click.option("--low-lines", "low_lines", type=int, default=12, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def separability(n, rho, low_lines, out):
    """Distance between zero-filled images of a shifted-anomaly pair."""
    _mask(n, rho, low_lines)
    if n % rho or n < 16:
        raise click.UsageError(f"rho={rho} must divide n={n} and n must be at least 16")
    report = experiments.separability_report(n, rho, low_lines)
    out = _out_dir(out)
    y1, y2 = report.pop("truth")
    for name, img in (("truth_a", y1), ("truth_b", y2)):
        write_raw(img, out / f"{name}.f32")
        write_pgm(img, out / f"{name}.pgm")
    for cell in report["cells"]:
        a1, a2 = cell.pop("images")
        for name, img in (("a", a1), ("b", a2)):
            stem = f"zerofill_L{cell['low_lines']}_{name}"
            write_raw(img, out / f"{stem}.f32")
            write_pgm(img, out / f"{stem}.pgm")
        click.echo(f"L={cell['low_lines']:<3d} lines={cell['lines']:<4d} distance={cell['distance']:.3e}")
    _write_json(out / "separability.json", report)


@cli.command()
@config_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--rho", "rhos", type=int, multiple=True, help="rho values of the L=12 row (repeatable).")
@click.option("--low-lines", "low_lines_list", type=int, multiple=True, help="L values of the rho=4 row (repeatable).")
@train_options
@click.option("--out", required=True, type=click.Path(file_okay=False))
def sweep(dataset_path, rhos, low_lines_list, epochs, batch_size, lr, decay, epsilon, seed, depth, base_channels, holdout, out):
    """Train and evaluate one network per (rho, L) cell on a shared corpus."""
    ds = _dataset(dataset_path)
    config = _train_config(epochs, batch_size, lr, decay, epsilon, seed)
    unet_config = _unet_config(ds.n, depth, base_channels)
    train_images, test_images = _split(ds.images, holdout)
    if not holdout:
        test_images = ds.images
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cells = experiments.sweep_cells(ds.n, rhos or experiments.FIG5_RHOS, low_lines_list or experiments.FIG6_LOW_LINES)
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    out = _out_dir(out)
    rows = []
    for rho, L in cells:
        cell = experiments.run_cell(train_images, test_images, rho, L, config, unet_config)
        cell_dir = out / f"rho{rho}_L{L}"
        save_weights(cell.state.weights, cell_dir / "checkpoint", extra={"rho": rho, "low_lines": L})
        write_loss_history(cell.state.history, cell_dir / "loss.csv")
        cell.report.write_csv(cell_dir / "metrics.csv")
        cell.report.write_json(cell_dir / "metrics.json")
        if test_images:
            save_result(cell.results[0], cell_dir / "example", truth=test_images[0])
        agg = cell.report.aggregate()
        row = {"rho": rho, "low_lines": L, "lines": len(cell.mask.lines), "R": reduction_factor(cell.mask)}
        for stage, entry in agg.items():
            row[f"{stage}_mse"] = entry["mse_mean"]
            row[f"{stage}_ssim"] = entry["ssim_mean"]
        rows.append(row)
        click.echo(f"rho={rho} L={L:<3d} R={row['R']:.3f} corrected MSE={row['corrected_mse']:.4g} SSIM={row['corrected_ssim']:.4f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["rho", "low_lines", "lines", "R"])
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def main(argv=None) -> int:
    """Run the CLI and return its exit code."""
    try:
        cli.main(args=argv, prog_name="subnyquist", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except NonFiniteError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
