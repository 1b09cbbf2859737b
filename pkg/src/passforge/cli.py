"""Command-line surface tying the pipeline together.

Subcommands mirror the pipeline stages: gen (program manifests), mine,
matrix, coreset, graph, train, eval, oracle, ablate. Every stage reads and
writes the documented file formats, so stages can be re-run or swapped for
externally produced artifacts (e.g. a reward matrix CSV computed against a
real compiler). Exit codes: 2 for usage errors, 1 for data errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .candidates import load_candidates, mine_candidates, save_candidates
from .coreset import (
    build_reward_matrix,
    greedy_select,
    load_coreset,
    load_matrix_csv,
    normalize_rows,
    save_coreset,
    save_matrix_csv,
)
from .errors import PassforgeError
from .evaluate import (
    DEFAULT_BUDGET,
    EvalReport,
    EvalRow,
    evaluate_program,
    infer,
    oracle_eval,
    popularity_scores,
    report_csv,
    save_report,
)
from .graphrep import build_graph, expand_type_graph, graph_to_json
from .synthenv import (
    FAMILIES,
    SIZE_BANDS,
    GeneratorConfig,
    baseline_sizes,
    generate_program,
    parse_config_text,
)
from .train import CoresetPolicyModel, TrainConfig, make_splits

__all__ = ["main"]


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


# ---------------------------------------------------------------------------
# Program manifests: {"version": 1, "programs": [{id, seed, size_class,
# family, opcode_alphabet_size}, ...]}
# ---------------------------------------------------------------------------

def load_manifest(path: str | Path) -> list[dict]:
    try:
        doc = json.loads(Path(path).read_text())
        entries = doc["programs"]
        for e in entries:
            GeneratorConfig(e["size_class"], e["family"],
                            e.get("opcode_alphabet_size", 15)).validate()
            e.setdefault("id", f"{e['family']}-{e['size_class']}-{e['seed']}")
    except (KeyError, TypeError, ValueError) as exc:
        raise PassforgeError(f"malformed program manifest {path}: {exc}") from exc
    return entries


def materialize(entries: list[dict]):
    programs = []
    for e in entries:
        cfg = GeneratorConfig(e["size_class"], e["family"],
                              e.get("opcode_alphabet_size", 15))
        programs.append(generate_program(int(e["seed"]), cfg))
    return programs


@click.group()
def main():
    """Coreset-based pass-order optimization toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="key=value generator config (size_class, family, ...).")
@click.option("--size-class", default=None, type=click.Choice(sorted(SIZE_BANDS)))
@click.option("--family", "families", multiple=True,
              type=click.Choice(sorted(FAMILIES)))
@click.option("--count", default=10, show_default=True,
              help="programs per family.")
@click.option("--seed", default=0, show_default=True, help="base seed.")
@click.option("--out", required=True, type=click.Path())
def gen(config_path, size_class, families, count, seed, out):
    """Write a program manifest (programs stay reproducible from seeds)."""
    try:
        base = GeneratorConfig()
        base_seed = seed
        if config_path:
            base, file_seed = parse_config_text(Path(config_path).read_text())
            if file_seed is not None:
                base_seed = file_seed
        if size_class:
            base = GeneratorConfig(size_class, base.family, base.opcode_alphabet_size)
        fams = list(families) or [base.family]
        entries = []
        for fam in fams:
            for i in range(count):
                s = base_seed + i
                entries.append({
                    "id": f"{fam}-{base.size_class}-{s}",
                    "seed": s,
                    "size_class": base.size_class,
                    "family": fam,
                    "opcode_alphabet_size": base.opcode_alphabet_size,
                })
        # materialize once to validate reproducibility and size bands
        materialize(entries)
        Path(out).write_text(json.dumps({"version": 1, "programs": entries},
                                        indent=1) + "\n")
        click.echo(f"wrote {len(entries)} program specs to {out}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--episodes", default=50, show_default=True)
@click.option("--max-len", default=DEFAULT_BUDGET, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def mine(manifest, episodes, max_len, seed, out):
    """Mine candidate pass sequences with a random policy."""
    try:
        entries = load_manifest(manifest)
        programs = materialize(entries)
        cands = mine_candidates(programs, episodes=episodes, max_len=max_len,
                                rng_seed=seed,
                                program_ids=[e["id"] for e in entries])
        save_candidates(cands, out)
        click.echo(f"mined {len(cands.sequences)} candidate sequences to {out}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--candidates", "cand_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def matrix(manifest, cand_path, out):
    """Build the program x sequence reward matrix CSV."""
    try:
        entries = load_manifest(manifest)
        programs = materialize(entries)
        cands = load_candidates(cand_path)
        R = build_reward_matrix(programs, cands, row_ids=[e["id"] for e in entries])
        save_matrix_csv(R, out)
        click.echo(f"wrote {R.values.shape[0]}x{R.values.shape[1]} reward matrix to {out}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--matrix", "matrix_path", required=True, type=click.Path(exists=True))
@click.option("--candidates", "cand_path", default=None, type=click.Path(exists=True),
              help="attach sequences to the selected columns.")
@click.option("--k", default=50, show_default=True)
@click.option("--out", required=True, type=click.Path())
def coreset(matrix_path, cand_path, k, out):
    """Greedy coreset selection over a reward matrix CSV."""
    try:
        R = load_matrix_csv(matrix_path)
        sequences = load_candidates(cand_path).sequences if cand_path else None
        result = greedy_select(normalize_rows(R), min(k, R.values.shape[1]), sequences)
        save_coreset(result, out)
        click.echo(f"selected {len(result.selected)} sequences; "
                   f"J = {result.objective_trace[-1]:.6f}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--index", default=0, show_default=True, help="manifest row.")
@click.option("--type-graph/--no-type-graph", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
def graph(manifest, index, type_graph, out):
    """Emit one program's graph as JSON."""
    try:
        entries = load_manifest(manifest)
        if not 0 <= index < len(entries):
            _fail(f"index {index} out of range for {len(entries)} programs")
        g = build_graph(materialize([entries[index]])[0])
        if type_graph:
            g = expand_type_graph(g)
        Path(out).write_text(graph_to_json(g) + "\n")
        click.echo(f"wrote graph ({len(g.nodes)} nodes, {len(g.edges)} edges) to {out}")
    except PassforgeError as exc:
        _fail(str(exc))


def _value_matrix(programs, sequences):
    R = build_reward_matrix(programs, sequences)
    return R.values


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--coreset", "coreset_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="training config (JSON or key=value).")
@click.option("--val-fraction", default=0.15, show_default=True)
@click.option("--holdout-family", "holdout", multiple=True)
@click.option("--seed", default=None, type=int, help="override config seed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def train(manifest, coreset_path, config_path, val_fraction, holdout, seed, out_dir):
    """Train a policy model over the coreset action space."""
    try:
        cfg = TrainConfig.from_file(config_path) if config_path else TrainConfig()
        if seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=seed)
        entries = load_manifest(manifest)
        core = load_coreset(coreset_path)
        if not core.sequences:
            _fail("coreset file has no sequences; rebuild it with --candidates")
        train_e, val_e, _, _ = make_splits(
            entries, (1.0 - val_fraction, val_fraction, 0.0),
            held_out_families=holdout, seed=cfg.seed)
        tr_programs = materialize(train_e)
        va_programs = materialize(val_e)
        click.echo(f"computing value vectors for {len(tr_programs)} train / "
                   f"{len(va_programs)} val programs")
        y_tr = _value_matrix(tr_programs, core.sequences)
        y_va = _value_matrix(va_programs, core.sequences)
        model = CoresetPolicyModel(
            coreset=core.sequences, objective=cfg.objective, encoder=cfg.encoder,
            temperature=cfg.temperature, learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size, epochs=cfg.epochs,
            mixup_prob=cfg.mixup_prob, embed_dim=cfg.embed_dim,
            num_layers=cfg.num_layers, hidden_dim=cfg.hidden_dim,
            update_edges=cfg.update_edges, use_type_graph=cfg.use_type_graph,
            budget=cfg.budget, seed=cfg.seed)
        model.fit(tr_programs, y_tr, val_X=va_programs, val_y=y_va,
                  ids=[e["id"] for e in train_e],
                  families=[e["family"] for e in train_e])
        model.save(out_dir)
        best = max((r.get("val_mean_over_oz", float("-inf")) for r in model.history_),
                   default=float("nan"))
        click.echo(f"saved model to {out_dir}; best val MeanOverOz = {best:.4f}")
    except PassforgeError as exc:
        _fail(str(exc))


def _eval_rows(entries, programs, plans_by_method):
    rows = {name: [] for name in plans_by_method}
    for e, p, plans in zip(entries, programs, zip(*plans_by_method.values())):
        o0, oz = p.instruction_count, baseline_sizes(p)[1]
        for name, plan in zip(plans_by_method, plans):
            if isinstance(plan, int):  # oracle: already a size
                rows[name].append(EvalRow(e["id"], e["family"], o0, oz, plan, 625))
            else:
                rows[name].append(evaluate_program(p, e["id"], e["family"], plan, oz))
    return rows


@main.command(name="eval")
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--coreset", "coreset_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_dir", default=None, type=click.Path(exists=True))
@click.option("--train-matrix", "train_matrix", default=None, type=click.Path(exists=True),
              help="reward matrix CSV for the popularity baseline.")
@click.option("--with-oracle", is_flag=True, default=False)
@click.option("--budget", default=DEFAULT_BUDGET, show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_cmd(manifest, coreset_path, model_dir, train_matrix, with_oracle, budget, out):
    """Evaluate policies under the pass budget; writes JSON + CSV reports."""
    try:
        entries = load_manifest(manifest)
        programs = materialize(entries)
        core = load_coreset(coreset_path)
        if not core.sequences:
            _fail("coreset file has no sequences; rebuild it with --candidates")
        methods: dict[str, list] = {}
        if model_dir:
            model = CoresetPolicyModel.load(model_dir)
            name = f"{model.encoder}-{model.objective}"
            methods[name] = [
                infer(scores, core.sequences, budget)
                for scores in model.predict(programs)
            ]
        if train_matrix:
            R = load_matrix_csv(train_matrix)
            if R.values.shape[1] == len(core.sequences):
                values = R.values
            else:
                values = R.values[:, list(core.selected)]
            pop = popularity_scores(values)
            methods[f"top{budget}"] = [
                infer(pop, core.sequences, budget) for _ in programs
            ]
        if with_oracle or not methods:
            methods["oracle"] = [oracle_eval(p, core.sequences) for p in programs]
        rows = _eval_rows(entries, programs, methods)
        report = EvalReport(budget=budget,
                            methods={k: tuple(v) for k, v in rows.items()})
        save_report(report, out)
        csv_path = Path(out).with_suffix(".csv")
        csv_path.write_text(report_csv(report))
        for name in sorted(rows):
            agg = report.aggregates(name)
            click.echo(f"{name}: MeanOverOz={agg['mean_over_oz']:+.4f} "
                       f"GMeanOverOz={agg['gmean_over_oz']:.4f} (n={agg['n']})")
        click.echo(f"wrote {out} and {csv_path}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--coreset", "coreset_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def oracle(manifest, coreset_path, out):
    """Brute-force best coreset sequence per program (no budget)."""
    try:
        entries = load_manifest(manifest)
        programs = materialize(entries)
        core = load_coreset(coreset_path)
        if not core.sequences:
            _fail("coreset file has no sequences; rebuild it with --candidates")
        sizes = [oracle_eval(p, core.sequences) for p in programs]
        rows = _eval_rows(entries, programs, {"oracle": sizes})
        report = EvalReport(budget=625,
                            methods={"oracle": tuple(rows["oracle"])})
        save_report(report, out)
        agg = report.aggregates("oracle")
        click.echo(f"oracle: MeanOverOz={agg['mean_over_oz']:+.4f} "
                   f"GMeanOverOz={agg['gmean_over_oz']:.4f}")
    except PassforgeError as exc:
        _fail(str(exc))


@main.command()
@click.option("--programs", "manifest", required=True, type=click.Path(exists=True))
@click.option("--coreset", "coreset_path", required=True, type=click.Path(exists=True))
@click.option("--epochs", default=8, show_default=True)
@click.option("--temperatures", default="0.05,0.1,0.25,0.5,1.0", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def ablate(manifest, coreset_path, epochs, temperatures, seed, out):
    """Temperature sweep plus component-removal runs; writes a JSON table."""
    try:
        temps = [float(t) for t in temperatures.split(",") if t]
        entries = load_manifest(manifest)
        core = load_coreset(coreset_path)
        if not core.sequences:
            _fail("coreset file has no sequences; rebuild it with --candidates")
        train_e, val_e, _, _ = make_splits(entries, (0.8, 0.2, 0.0), seed=seed)
        tr_programs, va_programs = materialize(train_e), materialize(val_e)
        y_tr = _value_matrix(tr_programs, core.sequences)
        y_va = _value_matrix(va_programs, core.sequences)

        def run(tag, **overrides):
            kwargs = dict(coreset=core.sequences, epochs=epochs, seed=seed,
                          temperature=0.05)
            kwargs.update(overrides)
            model = CoresetPolicyModel(**kwargs)
            model.fit(tr_programs, y_tr, val_X=va_programs, val_y=y_va,
                      families=[e["family"] for e in train_e])
            best = max(r.get("val_mean_over_oz", float("-inf"))
                       for r in model.history_)
            results.append({"run": tag, **overrides, "val_mean_over_oz": best})
            click.echo(f"{tag}: best val MeanOverOz = {best:+.4f}")

        results: list[dict] = []
        for t in temps:
            run(f"temperature={t}", temperature=t)
        run("baseline")
        run("-graph-mixup", mixup_prob=0.0)
        run("-edge-update", update_edges=False)
        run("-type-graph", use_type_graph=False)
        run("flat-encoder", encoder="flat")
        Path(out).write_text(json.dumps({"version": 1, "runs": results}, indent=1) + "\n")
        click.echo(f"wrote {out}")
    except PassforgeError as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
