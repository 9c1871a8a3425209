"""Command-line front end: simulate, fit, tune, predict, evaluate, segment,
optimize, ingest-retail, and report, each writing CSV/JSON artifacts plus a
manifest that records the resolved config, seed, and artifact hashes."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .datasets import (
    ingest_retail_csv,
    read_customers_csv,
    read_offer_csv,
    read_scores_csv,
    write_customers_csv,
    write_multinomial_csv,
    write_offer_csv,
    write_scores_csv,
    write_truth_csv,
)
from .errors import MissingArtifactError, OfferLabError
from .evaluate import (
    ScoredLabels,
    accuracy_at_base_rate,
    auc,
    delong_test,
    lift_curve,
    tune_ncomp,
)
from .hb import PosteriorDraws, fit_hb_mixed_logit, predict_panel_probabilities
from .profit import optimize_policy, segment_data_from_assignments
from .segments import SEGMENTS, SegmentAssignment, assign_segments, segment_distribution
from .simulate import simulate_dataset, summarize_dataset
from .storage import (
    canonical_json,
    sha256_file,
    sha256_text,
    write_csv_atomic,
    write_json_atomic,
    write_text_atomic,
)

SUBCOMMANDS = (
    "simulate",
    "fit",
    "tune",
    "predict",
    "evaluate",
    "segment",
    "optimize",
    "ingest-retail",
    "report",
)


def _out(config: PipelineConfig) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path))
    return path


def _covariates_from_customers(profiles: dict, include_demographic: bool) -> dict:
    if include_demographic:
        return {cid: (p.loyalty_centered, p.demographic_centered) for cid, p in profiles.items()}
    return {cid: (p.loyalty_centered,) for cid, p in profiles.items()}


def _write_manifest(out: Path, subcommand: str, config: PipelineConfig, artifacts) -> Path:
    config_json = canonical_json(config.to_dict())
    manifest = {
        "subcommand": subcommand,
        "seed": config.seed,
        "version": __version__,
        "config": config.to_dict(),
        "config_sha256": sha256_text(config_json),
        "artifacts": {name: sha256_file(out / name) for name in sorted(artifacts)},
    }
    path = out / f"manifest-{subcommand}.json"
    write_json_atomic(path, manifest)
    return path


def _load_segments_csv(path: Path):
    assignments = []
    with open(_require(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            assignments.append(
                SegmentAssignment(
                    customer_id=int(row[0]),
                    elasticity=float(row[1]),
                    loyalty=float(row[2]),
                    segment=row[3],
                )
            )
    return assignments


def run_pipeline(subcommand: str, config: PipelineConfig, args: argparse.Namespace | None = None):
    """Execute one stage; returns the list of artifact names written."""
    out = _out(config)
    artifacts: list[str] = []

    if subcommand == "simulate":
        dataset = simulate_dataset(config.ground_truth)
        write_offer_csv(out / "train.csv", dataset.train, dataset.profiles)
        write_offer_csv(out / "test.csv", dataset.test, dataset.profiles)
        write_customers_csv(out / "customers.csv", dataset.profiles)
        write_truth_csv(out / "truth.csv", dataset.true_coefficients)
        summary = summarize_dataset(dataset.train, dataset.profiles).to_text()
        summary += "\n" + summarize_dataset(dataset.test, dataset.profiles).to_text()
        write_text_atomic(out / "summary.txt", summary)
        artifacts += ["train.csv", "test.csv", "customers.csv", "truth.csv", "summary.txt"]

    elif subcommand == "fit":
        observations, _ = read_offer_csv(_require(out / "train.csv"))
        profiles, _ = read_customers_csv(_require(out / "customers.csv"))
        covariates = _covariates_from_customers(profiles, config.include_demographic)
        draws = fit_hb_mixed_logit(
            observations, covariates, ncomp=config.ncomp, config=config.mcmc
        )
        draws.save(out / "posterior")
        artifacts += [
            f"posterior/{name}"
            for name in ["header.json"] + [f"{a}.npy" for a in PosteriorDraws._ARRAYS]
        ]

    elif subcommand == "tune":
        observations, _ = read_offer_csv(_require(out / "train.csv"))
        profiles, _ = read_customers_csv(_require(out / "customers.csv"))
        covariates = _covariates_from_customers(profiles, config.include_demographic)
        report = tune_ncomp(
            observations, covariates, config.ncomp_candidates, config.resampling, config.mcmc
        )
        rows = [
            (r.ncomp, r.mean_auc, r.mean_accuracy, int(r.ncomp == report.selected_ncomp))
            for r in report.rows
        ]
        write_csv_atomic(out / "tuning.csv", ("ncomp", "mean_auc", "mean_accuracy", "selected"), rows)
        artifacts += ["tuning.csv"]

    elif subcommand == "predict":
        draws = PosteriorDraws.load(out / "posterior")
        observations, _ = read_offer_csv(_require(out / "test.csv"))
        X = np.array([o.attributes.as_array() for o in observations])
        ids = [o.customer_id for o in observations]
        scores = predict_panel_probabilities(
            draws, X, ids, mode=config.predict_mode, fallback_population_mean=True
        )
        write_scores_csv(
            out / "scores.csv",
            [
                (o.customer_id, o.occasion, 1, float(s))
                for o, s in zip(observations, scores)
            ],
        )
        artifacts += ["scores.csv"]

    elif subcommand == "evaluate":
        score_rows = read_scores_csv(_require(out / "scores.csv"))
        observations, _ = read_offer_csv(_require(out / "test.csv"))
        train_obs, _ = read_offer_csv(_require(out / "train.csv"))
        by_key = {(cid, occ): score for cid, occ, _, score in score_rows}
        scores, labels = [], []
        for o in observations:
            key = (o.customer_id, o.occasion)
            if key not in by_key:
                raise MissingArtifactError(f"scores.csv has no score for row {key}")
            scores.append(by_key[key])
            labels.append(o.label)
        data = ScoredLabels(np.array(scores), np.array(labels))
        base_rate = float(np.mean([o.label for o in train_obs]))
        metrics = {
            "auc": auc(data),
            "accuracy": accuracy_at_base_rate(data, base_rate),
            "base_rate": base_rate,
            "n_rows": len(labels),
        }
        if args is not None and getattr(args, "compare", None):
            # imported benchmark scores (e.g. an external model) aligned on
            # (customer_id, occasion); compared via the DeLong ROC test
            other_rows = read_scores_csv(Path(args.compare))
            other_by_key = {(cid, occ): score for cid, occ, _, score in other_rows}
            other = []
            for o in observations:
                key = (o.customer_id, o.occasion)
                if key not in other_by_key:
                    raise MissingArtifactError(
                        f"{args.compare} has no score for row {key}"
                    )
                other.append(other_by_key[key])
            result = delong_test(np.array(scores), np.array(other), np.array(labels))
            metrics["delong"] = {
                "auc_model": result.auc_a,
                "auc_compare": result.auc_b,
                "z": result.z,
                "p_value": result.p_value,
            }
        write_json_atomic(out / "metrics.json", metrics)
        points = lift_curve(data)
        write_csv_atomic(out / "lift.csv", ("fraction", "capture"), points)
        artifacts += ["metrics.json", "lift.csv"]

    elif subcommand == "segment":
        draws = PosteriorDraws.load(out / "posterior")
        observations, _ = read_offer_csv(_require(out / "test.csv"))
        profiles, _ = read_customers_csv(_require(out / "customers.csv"))
        assignments = assign_segments(
            draws, observations, profiles, delta=config.elasticity_delta
        )
        write_csv_atomic(
            out / "segments.csv",
            ("customer_id", "elasticity", "loyalty", "segment"),
            [(a.customer_id, a.elasticity, a.loyalty, a.segment) for a in assignments],
        )
        shares = segment_distribution(assignments)
        write_csv_atomic(
            out / "segment_distribution.csv",
            ("segment", "percent"),
            [(segment, shares[segment]) for segment in SEGMENTS],
        )
        artifacts += ["segments.csv", "segment_distribution.csv"]

    elif subcommand == "optimize":
        draws = PosteriorDraws.load(out / "posterior")
        assignments = _load_segments_csv(out / "segments.csv")
        _, mrp = read_customers_csv(_require(out / "customers.csv"))
        segments = segment_data_from_assignments(assignments, config.nop, mrp)
        rows = []
        for segment in SEGMENTS:
            seg = segments[segment]
            if seg.n_customers == 0:
                continue
            policy = optimize_policy(seg, draws, config.nop, mode=config.predict_mode)
            rows.append((policy.segment, policy.r, policy.months, policy.nop_value, policy.n_customers))
        write_csv_atomic(out / "policy.csv", ("segment", "r", "M_months", "nop", "n_customers"), rows)
        artifacts += ["policy.csv"]

    elif subcommand == "ingest-retail":
        if args is None or not args.input:
            raise MissingArtifactError("ingest-retail requires --input <retail csv>")
        product_filter = None
        if args.products:
            lines = Path(_require(Path(args.products))).read_text().split()
            product_filter = {line.strip() for line in lines if line.strip()}
        dataset = ingest_retail_csv(args.input, product_filter=product_filter)
        write_multinomial_csv(out / "multinomial.csv", dataset)
        artifacts += ["multinomial.csv"]

    elif subcommand == "report":
        sections = []
        dist_path = out / "segment_distribution.csv"
        if dist_path.exists():
            with open(dist_path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                shares = {row[0]: float(row[1]) for row in reader}
            lines = ["Customer segments (percent of customers)", "-" * 44]
            for segment in SEGMENTS:
                lines.append(f"{segment:<24}{shares.get(segment, 0.0):>8.1f}")
            sections.append("\n".join(lines))
        tuning_path = out / "tuning.csv"
        if tuning_path.exists():
            with open(tuning_path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                rows = list(reader)
            lines = ["Mixture-size tuning (mean validation AUC)", "-" * 44]
            lines.append(f"{'ncomp':<8}{'AUC':>10}{'accuracy':>12}{'selected':>10}")
            for row in rows:
                mark = "*" if row[3] == "1" else ""
                lines.append(f"{row[0]:<8}{float(row[1]):>10.4f}{float(row[2]):>12.4f}{mark:>10}")
            sections.append("\n".join(lines))
        policy_path = out / "policy.csv"
        if policy_path.exists():
            with open(policy_path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                policies = {row[0]: row for row in reader}

            def _cell(segment):
                if segment not in policies:
                    return "(no customers)"
                row = policies[segment]
                return f"r = {100 * float(row[1]):+.1f}%  m = {row[2]} months"

            lines = ["Optimal discount rate (r) and contract length (m)", "-" * 60]
            lines.append(f"{'':<22}{'Not Loyal':<28}{'Loyal':<28}")
            lines.append(
                f"{'Discount Inelastic':<22}{_cell('inelastic-not-loyal'):<28}{_cell('inelastic-loyal'):<28}"
            )
            lines.append(
                f"{'Discount Elastic':<22}{_cell('elastic-not-loyal'):<28}{_cell('elastic-loyal'):<28}"
            )
            sections.append("\n".join(lines))
        if not sections:
            raise MissingArtifactError(
                "report needs at least one of segment_distribution.csv, tuning.csv, policy.csv"
            )
        write_text_atomic(out / "report.txt", "\n\n".join(sections) + "\n")
        artifacts += ["report.txt"]

    else:
        raise OfferLabError(f"unknown subcommand {subcommand!r}")

    manifest = _write_manifest(out, subcommand, config, artifacts)
    return artifacts + [manifest.name]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="offerlab",
        description="Offer-response modeling, segmentation, and next-offer profit optimization",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the pipeline JSON config")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--input", default=None, help="retail transactions CSV (ingest-retail)")
    parser.add_argument(
        "--products", default=None, help="file of stock codes to keep (ingest-retail)"
    )
    parser.add_argument(
        "--compare", default=None, help="benchmark scores CSV for the DeLong test (evaluate)"
    )
    args = parser.parse_args(argv)

    try:
        config = PipelineConfig.from_json(args.config, seed_override=args.seed, out_override=args.out)
        artifacts = run_pipeline(args.subcommand, config, args)
    except MissingArtifactError as exc:
        print(f"offerlab {args.subcommand}: missing prerequisite artifact: {exc}", file=sys.stderr)
        return 2
    except OfferLabError as exc:
        print(f"offerlab {args.subcommand}: {exc}", file=sys.stderr)
        return 1
    for name in artifacts:
        print(f"wrote {Path(config.out_dir) / name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
