"""Command-line front end. One subcommand per pipeline stage."""
from __future__ import annotations

import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import accounts as accounts_mod
from . import assist, calibrate, content, dedup, detector, ingest, runner
from .config import PipelineConfig, load_config
from .facegate import FixtureDetector
from .storage import CorpusStore


def _store(config: PipelineConfig, corpus: str | None) -> CorpusStore:
    return CorpusStore(config.data_dir, corpus or config.corpus_id)


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path))
@click.option("--data-dir", type=click.Path(path_type=Path))
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, data_dir, verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = load_config(config_path) if config_path else PipelineConfig()
    if data_dir:
        config.data_dir = data_dir
    ctx.obj = config


@main.command("ingest")
@click.option("--corpus", required=True)
@click.option("--dir", "directory", required=True, type=click.Path(path_type=Path))
@click.option("--role", required=True,
              type=click.Choice([r.value for r in ingest.DatasetRole]))
@click.option("--jpeg-quality", type=int)
@click.pass_obj
def ingest_cmd(config, corpus, directory, role, jpeg_quality):
    """Import a directory of images into a corpus under one dataset role."""
    store = _store(config, corpus)
    if store.has_manifest():
        manifest = store.load_manifest()
    else:
        profile = ingest.ProcessingProfile(
            jpeg_quality=jpeg_quality or ingest.ProcessingProfile().jpeg_quality
        )
        manifest = ingest.CorpusManifest(corpus_id=corpus, profile=profile)
    before = len(manifest.records)
    manifest = ingest.import_corpus(
        directory, ingest.DatasetRole(role), manifest, store.image_root
    )
    store.save_manifest(manifest)
    click.echo(f"imported {len(manifest.records) - before} images as {role}")


@main.command("prepare")
@click.option("--corpus", required=True)
@click.option("--roles", default="REAL,FAKE", help="comma-separated source roles")
@click.option("--zoom/--no-zoom", default=False)
@click.option("--seed", type=int, default=0)
@click.option("--splits", default=None,
              help="role split spec, e.g. 'FAKE=8500:500:1000,REAL=8500:500:1000'")
@click.pass_obj
def prepare_cmd(config, corpus, roles, zoom, seed, splits):
    """Simulate platform processing for the given roles, then assign splits."""
    store = _store(config, corpus)
    manifest = store.load_manifest()
    wanted = {ingest.DatasetRole(r.strip()) for r in roles.split(",") if r.strip()}
    sources = [r for r in manifest.records if r.role in wanted]
    made = 0
    for record in sources:
        seq = int.from_bytes(record.id.encode()[:4], "big")
        derived = ingest.simulate_platform_processing(
            record, manifest.profile, zoom, seed ^ seq, store.image_root
        )
        if manifest.add(derived):
            made += 1
    if splits:
        spec = {}
        for part in splits.split(","):
            role_name, _, counts = part.partition("=")
            n_train, n_val, n_test = (int(x) for x in counts.split(":"))
            spec[ingest.DatasetRole(role_name.strip())] = (n_train, n_val, n_test)
        manifest = ingest.assign_splits(manifest, spec, seed)
    store.save_manifest(manifest)
    click.echo(f"created {made} processed images (zoom={zoom})")


@main.command("prefilter")
@click.option("--corpus")
@click.option("--min-eye-distance", type=float)
@click.pass_obj
def prefilter_cmd(config, corpus, min_eye_distance):
    """Run the face gate over the corpus and persist decisions."""
    if min_eye_distance is not None:
        config.min_eye_distance = min_eye_distance
    store = _store(config, corpus)
    rows = runner.ensure_gates(store, config, FixtureDetector())
    passed = sum(1 for r in rows.values() if r.get("passed"))
    total = len(rows)
    reduction = 0.0 if total == 0 else 100.0 * (total - passed) / total
    click.echo(f"gated {total} images, {passed} passed, reduction {reduction:.2f}%")


@main.command("train")
@click.option("--corpus")
@click.option("--variant", type=click.Choice([v.value for v in detector.Variant
                                              if v is not detector.Variant.CUSTOM]),
              default=detector.Variant.C_RX_PX_FX.value)
@click.option("--model-id")
@click.option("--backbone", default="resnet50")
@click.option("--seed", type=int, default=0)
@click.option("--learning-rate", type=float, default=1e-4)
@click.option("--patience", type=int, default=5)
@click.option("--max-epochs", type=int, default=None)
@click.pass_obj
def train_cmd(config, corpus, variant, model_id, backbone, seed, learning_rate,
              patience, max_epochs):
    """Train a classifier variant on the corpus train/val splits."""
    store = _store(config, corpus)
    manifest = store.load_manifest()
    train_config = detector.TrainConfig.for_variant(
        detector.Variant(variant),
        backbone=backbone,
        seed=seed,
        learning_rate=learning_rate,
        plateau_patience_epochs=patience,
        max_epochs=max_epochs,
    )
    handle = detector.train(
        manifest, train_config, store.image_root, store.models_dir, model_id
    )
    click.echo(f"trained {handle.model_id} ({handle.variant.value}), "
               f"{len(handle.train_log)} epochs")


@main.command("score")
@click.option("--corpus")
@click.option("--model")
@click.pass_obj
def score_cmd(config, corpus, model):
    """Score all gate-passing images with a trained model."""
    if model:
        config.model_id = model
    store = _store(config, corpus)
    passed = store.gate_passed_ids()
    if not passed:
        raise click.ClickException("no gate decisions; run prefilter first")
    scores = runner.ensure_scores(store, config, passed)
    click.echo(f"{len(scores)} scores stored for model {config.model_id}")


@main.command("subset")
@click.option("--corpus")
@click.option("--model")
@click.option("--fraction", type=float)
@click.option("--top-k", type=int)
@click.option("--seed", type=int, default=0)
@click.pass_obj
def subset_cmd(config, corpus, model, fraction, top_k, seed):
    """Build the score-sorted manual labeling subset."""
    if model:
        config.model_id = model
    store = _store(config, corpus)
    scores = store.load_scores(config.model_id)
    subset = calibrate.labeling_subset(
        list(scores.values()),
        store.gate_passed_ids(),
        fraction if fraction is not None else config.subset_fraction,
        top_k if top_k is not None else config.subset_top_k,
        seed,
    )
    store.save_subset(subset)
    click.echo(
        f"subset of {len(subset.image_ids)} images "
        f"(scores {subset.score_min:.4f}..{subset.score_max:.4f})"
    )


@main.command("align")
@click.option("--corpus")
@click.option("--k", type=int)
@click.option("--reference-role", default="FAKE_PROC")
@click.option("--reference-split", default="TRAIN")
@click.pass_obj
def align_cmd(config, corpus, k, reference_role, reference_split):
    """Fit the landmark alignment reference and flag aligned images."""
    if k is not None:
        config.alignment_k = k
    store = _store(config, corpus)
    ref = runner.compute_alignment(store, config, reference_role, reference_split)
    aligned = len(store.aligned_ids())
    click.echo(f"reference fit on {ref.source_corpus}; {aligned} images aligned at k={ref.k}")


@main.command("invert")
@click.option("--corpus")
@click.option("--ids", "ids_file", type=click.Path(path_type=Path), required=True,
              help="file with one image id per line")
@click.option("--budget", type=int)
@click.option("--generator-seed", type=int, default=7)
@click.pass_obj
def invert_cmd(config, corpus, ids_file, budget, generator_seed):
    """Invert aligned images through the (toy) generator adapter."""
    store = _store(config, corpus)
    image_ids = [l.strip() for l in ids_file.read_text().splitlines() if l.strip()]
    generator = assist.ToyGenerator(seed=generator_seed)
    results = runner.invert_images(
        store, image_ids, generator, budget or config.inversion_budget
    )
    for r in results:
        click.echo(f"{r.image_id}: mse {r.mse:.6f} lpips {r.lpips:.6f}")


@main.command("calibrate")
@click.option("--corpus")
@click.option("--seed", type=int)
@click.pass_obj
def calibrate_cmd(config, corpus, seed):
    """Choose the F1 threshold and estimate FNR/FDR from labeled data."""
    if seed is not None:
        config.calibration_seed = seed
    store = _store(config, corpus)
    choice, estimate = runner.calibrate_and_estimate(store, config)
    click.echo(
        f"threshold {choice.threshold:.7f} (F1 {choice.f1:.4f}); "
        f"FNR {estimate.fnr:.4f} FDR {estimate.fdr:.4f}"
    )


@main.command("classify")
@click.option("--corpus")
@click.option("--model")
@click.option("--threshold", type=float)
@click.pass_obj
def classify_cmd(config, corpus, model, threshold):
    """Classify gated images at the calibrated (or given) threshold."""
    if model:
        config.model_id = model
    if threshold is not None:
        config.threshold = threshold
    store = _store(config, corpus)
    report = runner.run_detection(store, config)
    if report["classified_fake"] is None:
        raise click.ClickException("calibration required: no threshold available")
    click.echo(
        f"{report['classified_fake']} of {report['gate']['passed']} gated images "
        f"classified fake at threshold {report['threshold']}"
    )


@main.command("dedup")
@click.option("--corpus")
@click.option("--eps", type=int)
@click.option("--min-samples", type=int)
@click.pass_obj
def dedup_cmd(config, corpus, eps, min_samples):
    """Hash all images and cluster near-duplicates."""
    store = _store(config, corpus)
    manifest = store.load_manifest()
    hashes = store.load_phashes()
    have = {h.image_id for h in hashes}
    for record in manifest.records:
        if record.id not in have:
            hashes.append(dedup.hash_image(record.id, store.image_root / record.path))
    store.save_phashes(hashes)
    clusters = dedup.cluster(
        hashes,
        eps if eps is not None else config.dedup_eps,
        min_samples if min_samples is not None else config.dedup_min_samples,
    )
    store.save_dup_clusters(clusters)
    report = dedup.cluster_report(clusters)
    store.save_dup_cluster_report(report)
    click.echo(
        f"{len(clusters)} duplicate clusters "
        f"(mean size {report.mean_size:.2f}, max {report.max_size})"
    )


@main.command("accounts")
@click.option("--corpus")
@click.option("--accounts-file", type=click.Path(path_type=Path), required=True)
@click.option("--status-file", type=click.Path(path_type=Path))
@click.option("--collected-at", help="corpus collection timestamp (ISO)")
@click.pass_obj
def accounts_cmd(config, corpus, accounts_file, status_file, collected_at):
    """Account-metadata analytics: summaries, spikes, bursts, status."""
    store = _store(config, corpus)
    records = accounts_mod.load_accounts(accounts_file)
    now = (
        accounts_mod._parse_ts(collected_at)
        if collected_at
        else datetime.now(timezone.utc)
    )
    bundle: dict = {"accounts": {"count": len(records)}}
    for metric in ("followers_count", "following_count", "tweet_count", "tweets_per_day"):
        summary = accounts_mod.metric_summary(records, metric, now)
        bundle["accounts"][metric] = {
            "mean": summary.mean, "median": summary.median,
            "q1": summary.q1, "q3": summary.q3,
        }
    bundle["accounts"]["spikes"] = {
        metric: [
            {"value": v, "count": c, "share": s}
            for v, c, s in accounts_mod.exact_value_spikes(records, metric, 0.01)
        ]
        for metric in ("followers_count", "following_count")
    }
    bundle["accounts"]["bulk_windows"] = [
        {"start": w.start.isoformat(), "end": w.end.isoformat(), "count": w.count}
        for w in accounts_mod.bulk_creation_windows(records, min_count=max(2, len(records) // 20))
    ]
    if status_file:
        checks = accounts_mod.load_status_checks(status_file)
        breakdown = accounts_mod.status_breakdown(checks)
        bundle["accounts"]["status"] = {s.value: share for s, share in breakdown.items()}
    store.save_analytics(bundle)
    import csv

    with open(store.corpus_dir / "account_histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "bucket_low", "bucket_high", "count"])
        for metric in ("followers_count", "following_count", "tweet_count", "tweets_per_day"):
            for lo, hi, count in accounts_mod.metric_histogram(records, metric, now):
                writer.writerow([metric, f"{lo:g}", f"{hi:g}", count])
    click.echo(json.dumps(bundle["accounts"], indent=2))


@main.command("cluster-tweets")
@click.option("--corpus")
@click.option("--tweets-file", type=click.Path(path_type=Path), required=True)
@click.option("--status-file", type=click.Path(path_type=Path))
@click.option("--threshold", type=float)
@click.option("--min-cluster-size", type=int)
@click.option("--seed", type=int, default=0)
@click.option("--group-by-language/--no-group-by-language", default=True,
              help="cluster per (language, active|inactive) slice")
@click.pass_obj
def cluster_tweets_cmd(config, corpus, tweets_file, status_file, threshold,
                       min_cluster_size, seed, group_by_language):
    """Cluster tweet texts, label clusters, export the 2-D projection."""
    store = _store(config, corpus)
    tweets = content.load_tweets(tweets_file)
    embedder = content.HashingEmbedder()
    sim_threshold = threshold if threshold is not None else config.content_threshold
    min_size = (min_cluster_size if min_cluster_size is not None
                else config.content_min_cluster_size)
    status_by_account = {}
    if status_file:
        checks = accounts_mod.load_status_checks(status_file)
        status_by_account = accounts_mod.latest_status(checks)
    if group_by_language:
        assignments, profiles, cluster_group = content.cluster_grouped(
            tweets, embedder, status_by_account, sim_threshold, min_size
        )
    else:
        assignments, profiles = content.cluster_stream(
            tweets, embedder, sim_threshold, min_size
        )
        cluster_group = {}
    terms = content.ctfidf(assignments, tweets)
    for profile in profiles:
        profile.top_terms = terms.get(profile.cluster_id, [])
    store.save_tweet_clusters(assignments, profiles, cluster_group)
    store.save_cluster_terms(terms)
    if profiles:
        import numpy as np

        ids = [str(p.cluster_id) for p in profiles]
        vectors = np.stack([p.centroid for p in profiles])
        if len(ids) >= 2:
            store.save_projection(content.project2d(ids, vectors, seed))
    stats = content.language_breakdown(tweets, status_by_account)
    store.save_languages(stats)
    store.save_analytics(
        {
            "content": {
                "tweets": len(tweets),
                "clusters": len(profiles),
                "noise": sum(1 for a in assignments if a.cluster_id == content.NOISE),
                "languages": len(stats),
            }
        }
    )
    click.echo(f"{len(profiles)} clusters over {len(tweets)} tweets")


@main.command("report")
@click.option("--corpus")
@click.option("--model")
@click.pass_obj
def report_cmd(config, corpus, model):
    """Run (or reuse) the detection pass and print the full report."""
    if model:
        config.model_id = model
    store = _store(config, corpus)
    report = runner.run_detection(store, config)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command("serve")
@click.option("--corpus")
@click.option("--port", type=int)
@click.pass_obj
def serve_cmd(config, corpus, port):
    """Start the labeling-console HTTP service."""
    from .service import serve

    if port is not None:
        config.port = port
    store = _store(config, corpus)
    click.echo(f"serving corpus {store.corpus_id} on 127.0.0.1:{config.port}")
    serve(store, config)


if __name__ == "__main__":
    main(sys.argv[1:])
