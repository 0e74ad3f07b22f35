"""Command-line entry point: ``gatelab <command> --config <path> [--out DIR] [--seed N] [--threads N]``.

Every command writes its outputs into the run directory, then the resolved
config (``config.toml``), then ``manifest.json`` with a SHA-256 per file. A
directory without a manifest is an incomplete run.

Exit codes: 0 success, 1 failed check or input error, 2 configuration or
usage error, 3 training divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, config, massdyn, svg
from .errors import Divergence, GateLabError, InvalidConfig
from .gradcheck import fuzz_cases, param_suite, scalar_suite, single_pair_report
from .lm.data import eval_variants, load_pairs_jsonl, make_synthetic_dataset, save_pairs_jsonl, sft_initialize
from .lm.model import load_checkpoint, save_checkpoint
from .lm.train import RECORD_FIELDS, sweep, train
from .objectives import Objective
from .toy import ToyDiagnostics, default_scenarios, run_scenario, strict_vs_loose_gate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Output directory bookkeeping; files are listed in write order."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.dir = Path(cfg["output_dir"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def _path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.dir / name

    def text(self, name: str, content: str) -> Path:
        p = self._path(name)
        p.write_text(content, encoding="utf-8", newline="\n")
        return p

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        p = self._path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                vals = [r[h] for h in header] if isinstance(r, dict) else r
                w.writerow([_cell(v) for v in vals])
        return p

    def finish(self) -> Path:
        self.text("config.toml", config.dumps(self.cfg))
        files = {}
        for name in self.files:
            files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        manifest = {
            "artifact": "gatelab",
            "version": __version__,
            "command": self.cfg["experiment"],
            "config": self.cfg,
            "wall_clock_seconds": time.perf_counter() - self.t0,
            "files": files,
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return p


# --- toy --------------------------------------------------------------------

TOY_COLORS = ("#999999", "#d62728", "#1f77b4")


def _scenarios(cfg):
    all_s = default_scenarios(d=int(cfg["toy"]["d"]), seed=cfg["seed"])
    labels = list(cfg["toy"]["scenarios"])
    unknown = [lbl for lbl in labels if lbl not in all_s]
    if unknown:
        raise InvalidConfig(f"unknown toy scenarios {unknown}; expected a subset of {sorted(all_s)}")
    return [all_s[lbl] for lbl in labels]


def cmd_toy(cfg, run: Run) -> bool:
    diag_fields = list(ToyDiagnostics.__dataclass_fields__)
    header = ["scenario", "mode", "K", "eta", "steps", "tau", "alpha", *diag_fields]
    rows, dist = [], []
    for s in _scenarios(cfg):
        r = run_scenario(s)
        for mode, d in (("baseline", r.baseline), ("gated", r.gated)):
            rows.append({"scenario": s.label, "mode": mode, "K": s.K, "eta": s.eta, "steps": s.steps,
                         "tau": s.tau, "alpha": s.alpha, **asdict(d)})
        for k in range(s.K):
            dist.append([s.label, k, r.p_before[k], r.p_after_baseline[k], r.p_after_gated[k]])
        run.text(
            f"toy_{s.label}.svg",
            svg.bar_chart(
                {"initial": r.p_before, "baseline": r.p_after_baseline, "gated": r.p_after_gated},
                TOY_COLORS,
                title=f"Scenario {s.label}: {s.description} (g = {r.gated.gate_value:.3g})",
                xlabel="class",
                ylabel="probability",
            ),
        )
    run.csv("scenarios.csv", header, rows)
    run.csv("distributions.csv", ["scenario", "class_index", "p_before", "p_after_baseline", "p_after_gated"], dist)
    return True


def cmd_strict_vs_loose(cfg, run: Run) -> bool:
    header = ["scenario", "gate", "tau", "alpha", "gate_value", "delta_target", "delta_max",
              "argmax_mass_change", "entropy_after", "tail_mass_change_rel"]
    rows = []
    for s in _scenarios(cfg):
        rep = strict_vs_loose_gate(s)
        for name, tau, d in (
            ("baseline", math.nan, rep.loose.baseline),
            ("loose", rep.loose_tau, rep.loose.gated),
            ("strict", rep.strict_tau, rep.strict.gated),
        ):
            rows.append([s.label, name, tau, s.alpha, d.gate_value, d.delta_target, d.delta_max,
                         d.argmax_mass_change, d.entropy_after, d.tail_mass_change_rel])
        run.text(
            f"strict_vs_loose_{s.label}.svg",
            svg.bar_chart(
                {"baseline": rep.loose.p_after_baseline, f"loose g={rep.loose_gate:.3g}": rep.loose.p_after_gated,
                 f"strict g={rep.strict_gate:.3g}": rep.strict.p_after_gated},
                TOY_COLORS,
                title=f"Scenario {s.label}: strict vs loose gate",
                xlabel="class",
                ylabel="probability",
            ),
        )
    run.csv("strict_vs_loose.csv", header, rows)
    return True


# --- language-model lab -----------------------------------------------------


def _dataset(cfg):
    d = cfg["dataset"]
    spec = config.synthetic_spec(cfg)
    if d["path"]:
        train_pairs = load_pairs_jsonl(d["path"])
        if d["eval_path"]:
            eval_pairs = load_pairs_jsonl(d["eval_path"])
        else:
            order = np.random.default_rng(cfg["seed"]).permutation(len(train_pairs))
            n_eval = min(max(int(round(spec.eval_fraction * len(train_pairs))), 1), len(train_pairs) - 1)
            eval_pairs = [train_pairs[i] for i in order[:n_eval]]
            train_pairs = [train_pairs[i] for i in order[n_eval:]]
        for p in (*train_pairs, *eval_pairs):
            p.validate(spec.vocab_size)
    else:
        train_pairs, eval_pairs = make_synthetic_dataset(spec, cfg["seed"])
    ref = sft_initialize(spec.vocab_size, train_pairs, int(d["sft_epochs"]), float(d["sft_lr"]), spec.bos)
    return train_pairs, eval_pairs, ref


def _dynamics_svg(records, title):
    ep = [r.epoch + 1 for r in records]
    return svg.line_chart(
        {
            "chosen": (ep, [r.delta_logpi_chosen for r in records]),
            "rejected": (ep, [r.delta_logpi_rejected for r in records]),
            "argmax mass": (ep, [r.argmax_mass_delta for r in records]),
        },
        title=title,
        xlabel="epoch",
        ylabel="change vs reference",
    )


def cmd_train(cfg, run: Run) -> bool:
    train_pairs, eval_pairs, ref = _dataset(cfg)
    loss = config.loss_config(cfg)
    res = train(ref, train_pairs, eval_pairs, loss, config.optimizer_config(cfg), seed=cfg["seed"])
    run.csv("dynamics.csv", RECORD_FIELDS, [asdict(r) for r in res.records])
    # the output location is not part of what a checkpoint depends on
    echo = {k: v for k, v in cfg.items() if k != "output_dir"}
    save_checkpoint(run._path("reference.json"), ref, echo)
    save_checkpoint(run._path("policy.json"), res.model, echo)
    save_pairs_jsonl(run._path("train.jsonl"), train_pairs)
    save_pairs_jsonl(run._path("eval.jsonl"), eval_pairs)
    massdyn.save_variants(run._path("variants.jsonl"), eval_variants(eval_pairs, ref.V, cfg["seed"]))
    run.text("dynamics.svg", _dynamics_svg(res.records, f"{loss.name} training dynamics"))
    return True


def cmd_sweep(cfg, run: Run) -> bool:
    param = {"sweep-tau": "tau", "sweep-alpha": "alpha"}.get(cfg["experiment"], cfg["sweep"]["param"])
    grid = cfg["sweep"][f"{param}_grid"]
    if not grid:
        raise InvalidConfig(f"sweep.{param}_grid is empty")
    train_pairs, eval_pairs, ref = _dataset(cfg)
    base = config.loss_config(cfg)
    opt = config.optimizer_config(cfg)
    rows = sweep(param, grid, base, ref, train_pairs, eval_pairs, opt, cfg["seed"], cfg["threads"])
    ungated = train(ref, train_pairs, eval_pairs, base.ungated(), opt, seed=cfg["seed"]).records
    header = ["param", "value", "delta_chosen", "delta_rejected", "gated_fraction", "mean_gate",
              "final_gated_fraction", "final_mean_gate"]
    run.csv("sweep.csv", header, [r.row() for r in rows])
    rec_rows = [{"run": "ungated", "value": "", **asdict(r)} for r in ungated]
    rec_rows += [{"run": "gated", "value": row.value, **asdict(r)} for row in rows for r in row.records]
    run.csv("sweep_records.csv", ["run", "value", *RECORD_FIELDS], rec_rows)
    xs = [r.value for r in rows]
    run.text(
        "sweep.svg",
        svg.line_chart(
            {
                "delta chosen": (xs, [r.delta_chosen for r in rows]),
                "delta rejected": (xs, [r.delta_rejected for r in rows]),
                "gated fraction": (xs, [r.gated_fraction for r in rows]),
            },
            title=f"Sensitivity to {param}",
            xlabel=param,
            ylabel="value",
        ),
    )
    return True


# --- mass dynamics, gradient checks, comparison -----------------------------


def cmd_massdyn(cfg, run: Run) -> bool:
    m = cfg["massdyn"]
    if not m["variants"] or not m["reference"] or not m["policies"]:
        raise InvalidConfig("massdyn needs massdyn.variants, massdyn.reference and at least one massdyn.policies entry")
    variants = massdyn.load_variants(m["variants"])
    ref, _ = load_checkpoint(m["reference"])
    rows, means = [], []
    for method, path in m["policies"].items():
        pol, _ = load_checkpoint(path)
        rep = massdyn.aggregate(massdyn.score_variants(pol, ref, variants), m["canonical_only"])
        rows.append(massdyn.report_row(method, rep, m["destructive_others"]))
        for label, v in rep.per_variant.items():
            means.append([method, label, massdyn.category_of(label).value, rep.counts[label], v])
    run.text("report.txt", massdyn.format_table(rows))
    run.json("report.json", rows)
    run.csv("variant_means.csv", ["method", "variant", "category", "count", "mean_delta"], means)
    print(massdyn.format_table(rows), end="")
    return True


def cmd_gradcheck(cfg, run: Run) -> bool:
    g = cfg["gradcheck"]
    mode = "recompute" if g["non_detached"] else "detached"
    results = scalar_suite(int(g["n_pairs"]), cfg["seed"], mode, float(g["h"]))
    results += param_suite(cfg["seed"], config.synthetic_spec(cfg), h=float(g["param_h"]))
    header = ["suite", "objective", "mode", "n", "max_rel_err", "threshold", "passed"]
    rows = [["scalar" if r.mode != "parameter" else "parameter", r.name, r.mode, r.n, r.max_rel_err, r.threshold, r.passed]
            for r in results]
    run.csv("gradcheck.csv", header, rows)
    for r in rows:
        print(f"{r[0]:9s} {r[1]:13s} {r[2]:9s} max_rel_err={r[4]:.3e} {'PASS' if r[6] else 'FAIL'}")
    idx = int(g["single_pair"])
    if idx >= 0:
        case = fuzz_cases(idx + 1, cfg["seed"])[idx]
        reports = [single_pair_report(case, obj, gated) for obj in Objective for gated in (False, True)]
        run.json("single_pair.json", reports)
        for rep in reports:
            print(f"{rep['objective']:13s} z={rep['z']!r} g={rep['g']!r} c={rep['c']!r}")
    ok = all(r.passed for r in results)
    print("PASS" if ok else "FAIL")
    return ok


def _final_record(run_dir: Path) -> dict:
    with open(run_dir / "dynamics.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidConfig(f"{run_dir}/dynamics.csv has no epochs")
    return {k: (float(v) if k != "epoch" else int(v)) for k, v in rows[-1].items()}


def cmd_compare(cfg, run: Run) -> bool:
    runs = cfg["compare"]["runs"]
    if len(runs) < 2:
        raise InvalidConfig("compare.runs needs at least two named run directories")
    finals = [{"run": name, **_final_record(Path(d))} for name, d in runs.items()]
    finals.sort(key=lambda r: (-r["delta_logpi_chosen"], r["run"]))
    for rank, r in enumerate(finals, 1):
        r["rank_delta_chosen"] = rank
    run.csv("compare.csv", ["rank_delta_chosen", "run", *RECORD_FIELDS], finals)
    print(" > ".join(f"{r['run']} ({r['delta_logpi_chosen']:+.4g})" for r in finals))
    return True


COMMANDS = {
    "toy": cmd_toy,
    "strict-vs-loose": cmd_strict_vs_loose,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "sweep-tau": cmd_sweep,
    "sweep-alpha": cmd_sweep,
    "massdyn": cmd_massdyn,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatelab", description="Gated preference-optimization lab.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="TOML config file (defaults apply to missing keys)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker cap; 1 is strictly serial")
    p.add_argument("--version", action="version", version=f"gatelab {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config, {"output_dir": args.out, "seed": args.seed, "threads": args.threads})
        if cfg["experiment"] and cfg["experiment"] != args.command:
            raise InvalidConfig(f"config is for experiment {cfg['experiment']!r}, not {args.command!r}")
        cfg["experiment"] = args.command
    except (InvalidConfig, OSError) as e:
        print(f"gatelab: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run = Run(cfg)
        ok = COMMANDS[args.command](cfg, run)
        run.finish()
    except InvalidConfig as e:
        print(f"gatelab: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Divergence as e:
        print(f"gatelab: {e}", file=sys.stderr)
        Path(cfg["output_dir"], "divergence.json").write_text(
            json.dumps(e.snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
        )
        return EXIT_DIVERGED
    except GateLabError as e:
        print(f"gatelab: error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"gatelab: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
