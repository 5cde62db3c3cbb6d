"""Command line interface.

Run ``omni-pseudolabel --help`` for the list of commands. Every command
exits with 0 on success, 1 on a usage error, 2 on bad input and 3 on an
internal error; errors are reported as a JSON object on stderr.
"""
import json
import logging
import sys

import click
import pandas as pd

from src import __version__, configure_logging
from src.annotation import (DEFAULT_EC_NOISE, Fully, LabelFormat, NoiseModel,
                            assign_formats, calibrate_ec, coco_like_boxes,
                            downgrade, ec_iou_stats)
from src.budget import (cost_table, enumerate_policies, get_profile,
                        policy_cost, policy_table)
from src.config import create_config
from src.ema import ema_steps
from src.error_handlers import report
from src.exceptions import EXIT_OK, LabelError
from src.filtering import filter_image, passthrough
from src.geometry import boxes_to_array
from src.helpers import id_sort_key, image_seed, log_call, parallel_map
from src.io import (load_coco, load_noise, load_omni_labels, load_predictions,
                    load_pseudo, load_snapshot, load_stats, save_noise,
                    save_omni_labels, save_pseudo, save_snapshot)
from src.loss import eval_loss
from src.quality import merge_reports, score_pseudo
from src.schemas import (FilterConfigSchema, LossConfigSchema,
                         MixturePolicySchema)

logger = logging.getLogger(__name__)

FORMAT_CHOICE = click.Choice([f.value for f in LabelFormat])
EXISTING_FILE = click.Path(exists=True, dir_okay=False)
OUTPUT_FILE = click.Path(dir_okay=False, writable=True)


def _setting(ctx, value, key):
    """The flag value when the user set it, otherwise the config value."""
    return ctx.obj[key] if value is None else value


def _parse_policy(text):
    """Parse ``fully=0.1,tags_k=0.9`` into a fraction mapping."""
    fractions = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep:
            raise click.BadParameter(f"'{part}' is not format=fraction",
                                     param_hint="--policy")
        try:
            fractions[LabelFormat(name.strip()).value] = float(value)
        except ValueError:
            raise click.BadParameter(f"'{part}' is not format=fraction",
                                     param_hint="--policy")
    return fractions


def _stats(dataset, stats_file):
    if (dataset is None) == (stats_file is None):
        raise click.UsageError("Give exactly one of --dataset and --stats")
    return get_profile(dataset) if dataset else load_stats(stats_file)


def _filter_task(task):
    pred, label, cfg, matcher = task
    return filter_image(pred, label, cfg, matcher=matcher)


def _loss_task(task):
    pred, labels, cfg = task
    return pred.image_id, eval_loss(pred, labels, cfg)


@click.group()
@click.version_option(__version__, prog_name="omni-pseudolabel")
@click.option("--log-level", default=None,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"],
                                case_sensitive=False),
              help="Overrides OMNI_LOG_LEVEL and the config file.")
@click.option("--log-file", default=None, type=OUTPUT_FILE)
@click.option("--config", "config_file", default=None, type=EXISTING_FILE,
              help="JSON file with configuration overrides.")
@click.pass_context
def cli(ctx, log_level, log_file, config_file):
    """Pseudo-label filtering for omni-supervised object detection."""
    config = create_config(config_file=config_file)
    if log_level:
        config["LOG_LEVEL"] = log_level
    configure_logging(config["LOG_LEVEL"], log_file or config["LOG_FILE"])
    ctx.obj = config


@cli.command("filter")
@click.option("--predictions", required=True, type=EXISTING_FILE,
              help="Teacher predictions, one JSON object per line.")
@click.option("--labels", required=True, type=EXISTING_FILE,
              help="Omni-label file.")
@click.option("--output", required=True, type=OUTPUT_FILE)
@click.option("--strategy", type=click.Choice(["unified", "simple"]),
              default=None)
@click.option("--format", "label_format", type=FORMAT_CHOICE, default=None,
              help="Require every label to have this format.")
@click.option("--tau", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--lambda-iou", type=float, default=None)
@click.option("--lambda-l1", type=float, default=None)
@click.option("--drop-infeasible/--keep-infeasible", default=None)
@click.option("--matcher", type=click.Choice(["hungarian", "brute_force"]),
              default="hungarian")
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.pass_context
@log_call
def filter_command(ctx, predictions, labels, output, strategy, label_format,
                   tau, gamma, lambda_iou, lambda_l1, drop_infeasible,
                   matcher, workers):
    """Select pseudo labels from teacher predictions."""
    cfg = FilterConfigSchema().load({
        "tau": _setting(ctx, tau, "TAU"),
        "gamma": _setting(ctx, gamma, "GAMMA"),
        "lambda_iou": _setting(ctx, lambda_iou, "LAMBDA_IOU"),
        "lambda_l1": _setting(ctx, lambda_l1, "LAMBDA_L1"),
        "strategy": _setting(ctx, strategy, "STRATEGY"),
        "drop_infeasible": _setting(ctx, drop_infeasible, "DROP_INFEASIBLE"),
    })
    label_file = load_omni_labels(labels)
    if label_format is not None:
        wrong = sorted((i for i, label in label_file.labels.items()
                        if label.format.value != label_format),
                       key=id_sort_key)
        if wrong:
            raise LabelError(f"{len(wrong)} labels are not {label_format}; "
                             f"first image {wrong[0]!r}")

    tasks, seen = [], set()
    for pred in load_predictions(predictions):
        if pred.image_id in seen:
            raise LabelError(f"Duplicate predictions for image "
                             f"{pred.image_id!r}")
        seen.add(pred.image_id)
        label = label_file.labels.get(pred.image_id)
        if label is None:
            logger.warning(f"No label for image {pred.image_id!r}; skipped")
            continue
        tasks.append((pred, label, cfg, matcher))

    results = {}
    for pseudo in parallel_map(_filter_task, tasks,
                               _setting(ctx, workers, "WORKERS")):
        results[pseudo.image_id] = pseudo
    for image_id, label in label_file.labels.items():
        if image_id in results:
            continue
        if isinstance(label, Fully):
            results[image_id] = passthrough(label, image_id)
        else:
            logger.warning(f"No prediction for image {image_id!r}; skipped")

    save_pseudo(results, output, images=label_file.images,
                categories=label_file.categories)
    count = sum(len(p) for p in results.values())
    click.echo(f"Wrote {count} pseudo labels for {len(results)} images to "
               f"{output}")


@cli.command("downgrade")
@click.option("--coco", "coco_file", required=True, type=EXISTING_FILE,
              help="Fully annotated COCO-style file.")
@click.option("--output", required=True, type=OUTPUT_FILE)
@click.option("--format", "label_format", type=FORMAT_CHOICE, default=None)
@click.option("--policy", default=None,
              help="Mixture such as fully=0.1,tags_k=0.9.")
@click.option("--seed", type=int, default=None)
@click.option("--noise", "noise_file", type=EXISTING_FILE, default=None,
              help="Extreme-clicking noise model JSON.")
@click.pass_context
@log_call
def downgrade_command(ctx, coco_file, output, label_format, policy, seed,
                      noise_file):
    """Turn full annotations into omni-labels."""
    if (label_format is None) == (policy is None):
        raise click.UsageError("Give exactly one of --format and --policy")
    seed = _setting(ctx, seed, "SEED")
    noise = load_noise(noise_file) if noise_file else DEFAULT_EC_NOISE
    corpus = load_coco(coco_file)
    image_ids = corpus.image_ids
    if policy is not None:
        mixture = MixturePolicySchema().load(
            {"fractions": _parse_policy(policy),
             "dataset_size": len(image_ids)})
        formats = assign_formats(image_ids, mixture.fractions, seed)
    else:
        formats = {i: LabelFormat(label_format) for i in image_ids}

    labels = {}
    for index, image_id in enumerate(image_ids):
        labels[image_id] = downgrade(corpus.annotations[image_id],
                                     formats[image_id],
                                     seed=image_seed(seed, index),
                                     noise=noise)
    save_omni_labels(labels, output, images=corpus.images,
                     categories=corpus.categories)
    click.echo(f"Wrote {len(labels)} omni-labels to {output}")


@cli.command("simulate-ec")
@click.option("--coco", "coco_file", type=EXISTING_FILE, default=None,
              help="Take the box sample from this corpus.")
@click.option("--samples", type=click.IntRange(min=1), default=10000,
              help="Size of the synthetic box sample without --coco.")
@click.option("--sigma-scale", type=click.FloatRange(min=0), default=None)
@click.option("--dispersion", type=click.FloatRange(min=0), default=0.0)
@click.option("--calibrate", is_flag=True,
              help="Fit the noise model to the target IoU moments.")
@click.option("--target-mean", type=float, default=None)
@click.option("--target-std", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--output", type=OUTPUT_FILE, default=None,
              help="Write the noise model JSON here.")
@click.pass_context
@log_call
def simulate_ec_command(ctx, coco_file, samples, sigma_scale, dispersion,
                        calibrate, target_mean, target_std, seed, output):
    """Simulate extreme-clicking boxes and report their IoU statistics."""
    seed = _setting(ctx, seed, "SEED")
    if coco_file:
        corpus = load_coco(coco_file)
        boxes = boxes_to_array([b for i in corpus.image_ids
                                for b in corpus.annotations[i].boxes])
    else:
        boxes = coco_like_boxes(samples, seed)

    if calibrate:
        noise = calibrate_ec(_setting(ctx, target_mean, "EC_TARGET_MEAN"),
                             _setting(ctx, target_std, "EC_TARGET_STD"),
                             box_sample=boxes, seed=seed)
    elif sigma_scale is not None:
        noise = NoiseModel(sigma_scale=sigma_scale, seed=seed,
                           dispersion=dispersion)
    else:
        noise = NoiseModel(sigma_scale=DEFAULT_EC_NOISE.sigma_scale,
                           seed=seed,
                           dispersion=DEFAULT_EC_NOISE.dispersion)
    summary = {"sigma_scale": noise.sigma_scale,
               "dispersion": noise.dispersion, "seed": noise.seed}
    summary.update(ec_iou_stats(boxes, noise))
    if output:
        save_noise(noise, output)
    click.echo(json.dumps(summary, sort_keys=True))


@cli.command("cost")
@click.option("--dataset", default=None, help="Built-in dataset name.")
@click.option("--stats", "stats_file", type=EXISTING_FILE, default=None)
@click.option("--decimals", type=click.IntRange(min=0), default=1)
def cost_command(dataset, stats_file, decimals):
    """Print per-image annotation seconds of every format."""
    if dataset is None and stats_file is None:
        table = cost_table()
    else:
        table = cost_table(_stats(dataset, stats_file))
    click.echo(table.round(decimals).to_string(na_rep="-"))


@cli.command("budget")
@click.option("--dataset", default=None, help="Built-in dataset name.")
@click.option("--stats", "stats_file", type=EXISTING_FILE, default=None)
@click.option("--hours", type=click.FloatRange(min=0), default=None)
@click.option("--formats", default="fully,tags_k,boxes_ec",
              help="Comma-separated formats the mixture may use.")
@click.option("--step", type=float, default=0.01)
@click.option("--tolerance", type=click.FloatRange(min=0), default=0.01)
@click.option("--min-spend", type=click.FloatRange(min=0, max=1),
              default=0.99,
              help="Fraction of the budget a policy must at least spend.")
@click.option("--size", type=click.IntRange(min=0), default=None,
              help="Dataset size; defaults to the profile's.")
@click.option("--reference-table", is_flag=True,
              help="Compare the experiment policies with their printed "
                   "hours.")
@click.option("--output", type=OUTPUT_FILE, default=None,
              help="Also write the table as CSV.")
@log_call
def budget_command(dataset, stats_file, hours, formats, step, tolerance,
                   min_spend, size, reference_table, output):
    """List the mixture policies that fit an annotation budget."""
    if reference_table:
        table = policy_table()
    else:
        if hours is None:
            raise click.UsageError("--hours is required")
        stats = _stats(dataset, stats_file)
        try:
            names = [LabelFormat(f.strip()) for f in formats.split(",")
                     if f.strip()]
        except ValueError:
            raise click.BadParameter(f"Unknown format in '{formats}'",
                                     param_hint="--formats")
        policies = enumerate_policies(stats, hours, names, step=step,
                                      tolerance=tolerance, dataset_size=size,
                                      min_spend=min_spend)
        records = []
        for policy in policies:
            record = {f"{fmt.value}_pct": round(100 * value, 6)
                      for fmt, value in policy.fractions.items()}
            record["hours"] = policy_cost(policy, stats)
            records.append(record)
        table = pd.DataFrame.from_records(records)
    if output:
        table.to_csv(output, index=False)
    if table.empty:
        click.echo("No policy fits the budget")
    else:
        click.echo(table.round(2).to_string(index=False))


@cli.command("eval")
@click.option("--pseudo", "pseudo_file", required=True, type=EXISTING_FILE)
@click.option("--coco", "coco_file", required=True, type=EXISTING_FILE,
              help="Held-out full annotations.")
@click.option("--iou-thresh", type=float, default=None)
@click.pass_context
@log_call
def eval_command(ctx, pseudo_file, coco_file, iou_thresh):
    """Precision and recall of pseudo labels against full annotations."""
    iou_thresh = _setting(ctx, iou_thresh, "IOU_THRESH")
    corpus = load_coco(coco_file)
    pseudo = load_pseudo(pseudo_file)
    reports = []
    for image_id in sorted(pseudo, key=id_sort_key):
        if image_id not in corpus.annotations:
            raise LabelError(f"Image {image_id!r} is not in {coco_file}")
        reports.append(score_pseudo(pseudo[image_id],
                                    corpus.annotations[image_id], iou_thresh))
    summary = merge_reports(reports).to_dict()
    summary["images"] = len(reports)
    summary["iou_thresh"] = iou_thresh
    click.echo(json.dumps(summary, sort_keys=True))


@cli.command("eval-loss")
@click.option("--predictions", required=True, type=EXISTING_FILE)
@click.option("--coco", "coco_file", type=EXISTING_FILE, default=None,
              help="Score against full annotations.")
@click.option("--pseudo", "pseudo_file", type=EXISTING_FILE, default=None,
              help="Score against pseudo labels.")
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.pass_context
@log_call
def eval_loss_command(ctx, predictions, coco_file, pseudo_file, alpha, beta,
                      workers):
    """Match-then-score loss of every image, printed as JSON lines."""
    if (coco_file is None) == (pseudo_file is None):
        raise click.UsageError("Give exactly one of --coco and --pseudo")
    cfg = LossConfigSchema().load({"alpha": _setting(ctx, alpha, "ALPHA"),
                                   "beta": _setting(ctx, beta, "BETA"),
                                   "focal_alpha": ctx.obj["FOCAL_ALPHA"],
                                   "focal_gamma": ctx.obj["FOCAL_GAMMA"]})
    if coco_file:
        labels = load_coco(coco_file).annotations
    else:
        labels = {i: [(item.box, item.class_id) for item in p.items]
                  for i, p in load_pseudo(pseudo_file).items()}

    tasks = []
    for pred in load_predictions(predictions):
        if pred.image_id not in labels:
            logger.warning(f"No labels for image {pred.image_id!r}; skipped")
            continue
        tasks.append((pred, labels[pred.image_id], cfg))
    results = parallel_map(_loss_task, tasks,
                           _setting(ctx, workers, "WORKERS"))
    for image_id, loss in sorted(results, key=lambda r: id_sort_key(r[0])):
        click.echo(json.dumps({"image_id": image_id, "cls": loss.cls,
                               "box": loss.box, "total": loss.total,
                               "num_labels": loss.num_labels},
                              sort_keys=True))


@cli.command("ema")
@click.option("--teacher", required=True, type=EXISTING_FILE)
@click.option("--student", required=True, type=EXISTING_FILE)
@click.option("--output", required=True, type=OUTPUT_FILE)
@click.option("--k", "momentum", type=float, default=None)
@click.option("--steps", type=click.IntRange(min=1), default=1)
@click.pass_context
def ema_command(ctx, teacher, student, output, momentum, steps):
    """Update a teacher snapshot towards a student snapshot."""
    momentum = _setting(ctx, momentum, "EMA_K")
    updated = ema_steps(load_snapshot(teacher), load_snapshot(student), steps,
                        momentum)
    save_snapshot(updated, output)
    click.echo(f"Teacher at version {updated.version} written to {output}")


def run(argv=None):
    """Run the command line and return its exit status."""
    try:
        result = cli.main(args=argv, prog_name="omni-pseudolabel",
                          standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return report(click.UsageError("Aborted"))
    except Exception as e:
        return report(e)
    return result if isinstance(result, int) else EXIT_OK


def main():
    sys.exit(run())
