"""Command-line entry point.

Verbs:
  baseline  -- run the tone-reservation sweep and write report files
  train     -- train the learned systems for the configured target grid
  evaluate  -- evaluate trained systems (training any that are missing)
  report    -- run both sweeps as configured and write a combined report
"""

import argparse
import dataclasses
import sys

from . import experiments as ex


def _load_config(args):
    config = ex.ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.profile is not None:
        overrides["profile"] = args.profile
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _print_records(records):
    for rec in records:
        print(
            f"{rec.system_id}: rate={rec.rate:.4f} bits/use, "
            f"papr={rec.papr_db:.2f} dB, aclr={rec.aclr_label}"
        )


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="paprlab",
        description="OFDM PAPR/ACLR lab: tone-reservation baseline and "
        "learned transmitter/receiver experiments.",
    )
    parser.add_argument("command", choices=["baseline", "train", "evaluate", "report"])
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out-dir", default=None, help="override output directory")
    parser.add_argument(
        "--profile", default=None, choices=sorted(ex.PROFILES),
        help="override training profile",
    )
    args = parser.parse_args(argv)

    try:
        config = _load_config(args)
    except (OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    if args.command == "baseline":
        records = ex.run_baseline_sweep(config)
        _print_records(records)
        files = ex.emit_report(records, config)
    elif args.command == "train":
        for beta_db in config.beta_leak_db:
            for gamma_db in config.gamma_peak_db:
                result = ex.ensure_trained(config, gamma_db, beta_db)
                print(
                    f"trained gamma={gamma_db:g} dB beta={beta_db:g} dB "
                    f"-> {result.config.out_dir}"
                )
        return 0
    elif args.command == "evaluate":
        records = ex.run_e2e_sweep(config)
        _print_records(records)
        files = ex.emit_report(records, config)
    else:
        records = ex.run_baseline_sweep(config) + ex.run_e2e_sweep(config)
        _print_records(records)
        files = ex.emit_report(records, config)

    for path in files:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
