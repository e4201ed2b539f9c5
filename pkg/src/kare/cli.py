"""kare CLI: entity locating, corpus tools, training, evaluation and ablations."""

import json
import logging
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import typer
from typer import echo

from kare.errors import KareError

app = typer.Typer(
    name="kare",
    help="Knowledge-infused relation extraction between cannabis and depression.",
    add_completion=False,
)

_STATE: Dict[str, Any] = {"seed": None}

# typer may bundle its own click, so take the error base from a class it re-exports
_CLICK_ERROR: Any = next(
    c for c in typer.BadParameter.__mro__ if c.__name__ == "ClickException"
)


@app.callback()
def root(
    seed: Optional[int] = typer.Option(
        None, "--seed", help="Seed for every random choice (overrides train.seed)"
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings only"),
) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    _STATE["seed"] = seed


@contextmanager
def _guard() -> Iterator[None]:
    """Report data errors and unreadable files on stderr and exit with 2."""
    try:
        yield
    except (KareError, OSError) as e:
        echo(f"Error: {e}", err=True)
        raise typer.Exit(2)


def _config(path: Optional[Path], sets: Sequence[str]) -> Any:
    from kare.config import ModelConfig

    overrides = list(sets)
    if _STATE["seed"] is not None:
        overrides.append(f"train.seed={_STATE['seed']}")
    return ModelConfig.load(path, overrides)


def _seed(default: int = 13) -> int:
    return default if _STATE["seed"] is None else int(_STATE["seed"])


def _lexicon(path: Optional[Path], case_folding: bool = True) -> Any:
    from kare.lexicon import TOY_LEXICON, load_lexicon

    return load_lexicon(path or TOY_LEXICON, case_folding)


def _external(path: Optional[Path]) -> Any:
    if path is None:
        return None
    from kare.context_encoder import load_external_context

    return load_external_context(path)


def _jsonl(row: Dict[str, Any]) -> str:
    return json.dumps(row, ensure_ascii=False)


_CONFIG_OPT = typer.Option(
    None, "--config", "-c", envvar="KARE_CONFIG", help="Config file (key = value)"
)
_SET_OPT = typer.Option([], "--set", help="Override a config key (key=value)")
_LEXICON_OPT = typer.Option(None, "--lexicon", help="Lexicon TSV (default: toy)")
_CONTEXT_OPT = typer.Option(
    None, "--context", help="External context vectors (JSON-lines)"
)
_JOBS_OPT = typer.Option(None, "--jobs", "-j", help="Parallel workers")
_INPUT_OPT = typer.Option(
    None, "--input", "--data", help="Dataset (JSON-lines)"
)
_DATA_ARG = typer.Argument(..., help="Dataset (JSON-lines)")


def _jobs(jobs: Optional[int]) -> int:
    from kare.config import JOBS

    return max(1, jobs if jobs is not None else JOBS)


# --- entity locator ---------------------------------------------------------------
@app.command("locate")
def cmd_locate(
    text: Optional[str] = typer.Option(None, "--text", help="A single tweet"),
    data: Optional[Path] = _INPUT_OPT,
    lexicon: Optional[Path] = _LEXICON_OPT,
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
) -> None:
    """Print every located cannabis/depression span as JSON-lines."""
    with _guard():
        from kare.corpus import load_dataset
        from kare.lexicon import locate_entities, tokenize

        cfg = _config(config, sets)
        lex = _lexicon(lexicon, cfg.lexicon.case_folding)
        rows = [("", text)] if text is not None else []
        if data is not None:
            rows.extend((ex.id, ex.text) for ex in load_dataset(data))
        if not rows:
            raise typer.BadParameter("give --text or --input")
        for ex_id, tweet in rows:
            tokens = tokenize(tweet, cfg.lexicon.case_folding)
            spans = locate_entities(tokens, lex, cfg.lexicon) if tokens else []
            row: Dict[str, Any] = {"id": ex_id} if ex_id else {}
            row.update(tokens=tokens, spans=[s.to_dict() for s in spans])
            echo(_jsonl(row))


@app.command("mask")
def cmd_mask(
    text: Optional[str] = typer.Option(None, "--text", help="A single tweet"),
    data: Optional[Path] = _INPUT_OPT,
    lexicon: Optional[Path] = _LEXICON_OPT,
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
) -> None:
    """Replace the two entity mentions with <cannabis> and <depression>."""
    with _guard():
        from kare.corpus import load_dataset
        from kare.errors import MissingEntityError
        from kare.lexicon import locate_and_mask

        cfg = _config(config, sets)
        lex = _lexicon(lexicon, cfg.lexicon.case_folding)
        if text is not None:
            echo(_jsonl(locate_and_mask(text, lex, cfg.lexicon).to_dict()))
            return
        if data is None:
            raise typer.BadParameter("give --text or --input")
        for ex in load_dataset(data):
            try:
                masked = locate_and_mask(ex.text, lex, cfg.lexicon)
            except MissingEntityError as e:
                logging.getLogger(__name__).warning(f"skipping {ex.id}: {e}")
                continue
            echo(_jsonl({"id": ex.id, "label": ex.label.value, **masked.to_dict()}))


# --- corpus tools -------------------------------------------------------------------
@app.command("stats")
def cmd_stats(
    data: Path = _DATA_ARG,
    lexicon: Optional[Path] = _LEXICON_OPT,
    locate: bool = typer.Option(False, "--locate", help="Also count locatable rows"),
) -> None:
    """Class distribution of a dataset."""
    with _guard():
        from kare.corpus import class_distribution, load_dataset
        from kare.errors import MissingEntityError
        from kare.lexicon import locate_and_mask

        corpus = load_dataset(data)
        counts = class_distribution(corpus)
        total = len(corpus)
        echo(f"{'label':12s} {'count':>6s} {'share':>8s}")
        for label, k in counts.items():
            share = 100 * k / total if total else 0.0
            echo(f"{label.value:12s} {k:6d} {share:7.2f}%")
        echo(f"{'total':12s} {total:6d}")
        if locate:
            lex = _lexicon(lexicon)
            ok = 0
            for ex in corpus:
                try:
                    locate_and_mask(ex.text, lex)
                    ok += 1
                except MissingEntityError:
                    pass
            echo(f"both entities located: {ok}/{total}")


@app.command("split")
def cmd_split(
    data: Path = _DATA_ARG,
    out_dir: Optional[Path] = typer.Option(
        None,
        "--out-dir",
        help="Where train/dev/test go (default: $KARE_DATA_DIR/split)",
    ),
    ratios: Optional[str] = typer.Option(
        None, "--ratios", help="train,dev,test shares (default: train.ratios)"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", help="Shuffle seed"),
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
) -> None:
    """Stratified train/dev/test split."""
    with _guard():
        from kare.config import DATA_DIR
        from kare.corpus import (
            load_dataset,
            split_hash,
            stratified_split,
            write_dataset,
        )

        overrides = list(sets)
        if ratios is not None:
            overrides.append(f"train.ratios={ratios}")
        cfg = _config(config, overrides)
        if seed is not None:
            cfg = cfg.with_values({"train.seed": seed})
        out_dir = out_dir if out_dir is not None else DATA_DIR / "split"
        corpus = load_dataset(data)
        parts = stratified_split(corpus, cfg.train.ratios, cfg.train.seed)
        for name, part in zip(("train", "dev", "test"), parts):
            n = write_dataset(part, out_dir / f"{name}.jsonl")
            echo(f"{name}: {n}")
        echo(f"split hash: {split_hash(corpus)}")


@app.command("kappa")
def cmd_kappa(
    files: List[Path] = typer.Argument(..., help="Annotation files (id<TAB>label)"),
    show_disagreements: bool = typer.Option(
        False, "--disagreements", help="List ids the first two annotators dispute"
    ),
) -> None:
    """Pairwise Cohen's kappa between annotators."""
    with _guard():
        from kare.corpus import (
            disagreements,
            format_kappa_report,
            kappa_report,
            load_annotations,
        )

        if len(files) < 2:
            raise typer.BadParameter("kappa needs at least two annotation files")
        annotations = {f.stem: load_annotations(f) for f in files}
        pairs, mean = kappa_report(annotations)
        echo(format_kappa_report(pairs, mean))
        if show_disagreements:
            first, second = list(annotations.values())[:2]
            for ex_id, a, b in disagreements(first, second):
                echo(f"{ex_id}\t{a.value}\t{b.value}")


@app.command("synth")
def cmd_synth(
    n: int = typer.Option(100, "--n", help="Number of tweets"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output (default stdout)"),
    lexicon: Optional[Path] = _LEXICON_OPT,
) -> None:
    """Generate a templated synthetic dataset."""
    with _guard():
        from kare.corpus import write_dataset
        from kare.synthetic import generate_synthetic

        corpus = generate_synthetic(n, _seed(), _lexicon(lexicon))
        if out is not None:
            write_dataset(corpus, out)
            echo(f"wrote {len(corpus)} examples to {out}")
            return
        for ex in corpus:
            echo(_jsonl(ex.to_dict()))


# --- model ----------------------------------------------------------------------------
@app.command("train")
def cmd_train(
    data: Path = typer.Option(..., "--data", help="Training set (JSON-lines)"),
    out: Path = typer.Option(..., "--out", help="Checkpoint to write"),
    dev: Optional[Path] = typer.Option(None, "--dev", help="Dev set for early stop"),
    lexicon: Optional[Path] = _LEXICON_OPT,
    context: Optional[Path] = _CONTEXT_OPT,
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
) -> None:
    """Train a model and save the best-dev checkpoint."""
    with _guard():
        from kare.checkpoint import save
        from kare.corpus import load_dataset
        from kare.training import train

        cfg = _config(config, sets)
        lex = _lexicon(lexicon, cfg.lexicon.case_folding)
        ckpt = train(
            cfg,
            load_dataset(data),
            load_dataset(dev) if dev is not None else None,
            lex,
            _external(context),
        )
        save(ckpt, out)
        meta = ckpt.metadata
        echo(f"saved {out} (epochs {meta['epochs']}, best epoch {meta['best_epoch']})")


@app.command("eval")
def cmd_eval(
    ckpt_path: Path = typer.Option(..., "--ckpt", help="Checkpoint"),
    data: Path = typer.Option(..., "--data", help="Test set (JSON-lines)"),
    averaging: str = typer.Option("weighted", help="weighted | macro | micro"),
    json_out: Optional[Path] = typer.Option(None, "--json", help="Write metrics"),
    errors: bool = typer.Option(False, "--errors", help="List misclassified rows"),
    lexicon: Optional[Path] = _LEXICON_OPT,
    context: Optional[Path] = _CONTEXT_OPT,
    jobs: Optional[int] = _JOBS_OPT,
) -> None:
    """Score a checkpoint on a labeled dataset."""
    with _guard():
        from kare.checkpoint import load
        from kare.corpus import load_dataset
        from kare.metrics import format_errors
        from kare.training import evaluate

        ckpt = load(ckpt_path)
        lex = _lexicon(lexicon, ckpt.config.lexicon.case_folding)
        result = evaluate(
            ckpt, load_dataset(data), lex, _jobs(jobs), _external(context)
        )
        m = result.metrics(averaging)
        echo(f"{'label':12s} {'P':>7s} {'R':>7s} {'F1':>7s} {'n':>6s}")
        for name, s in m.per_class.items():
            echo(
                f"{name:12s} {s.precision:7.2f} {s.recall:7.2f} {s.f1:7.2f} "
                f"{s.support:6d}"
            )
        echo(f"{averaging:12s} {m.precision:7.2f} {m.recall:7.2f} {m.f1:7.2f}")
        if result.skipped:
            echo(f"skipped (entity missing): {len(result.skipped)}")
        if json_out is not None:
            payload = {
                "metrics": {k: v.to_dict() for k, v in result.all_metrics().items()},
                "confusion": result.matrix.tolist(),
                "skipped": result.skipped,
            }
            json_out.write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        if errors:
            echo(format_errors(result.errors()))


@app.command("predict")
def cmd_predict(
    ckpt_path: Path = typer.Option(..., "--ckpt", help="Checkpoint"),
    text: str = typer.Option(..., "--text", help="Tweet to classify"),
    ex_id: str = typer.Option("input", "--id", help="Id for external context"),
    trace: bool = typer.Option(False, "--trace", help="Print an attention heatmap"),
    lexicon: Optional[Path] = _LEXICON_OPT,
    context: Optional[Path] = _CONTEXT_OPT,
) -> None:
    """Classify one tweet."""
    with _guard():
        from kare.checkpoint import load
        from kare.corpus import LABELS
        from kare.pa_encoder import format_trace
        from kare.training import predict

        ckpt = load(ckpt_path)
        lex = _lexicon(lexicon, ckpt.config.lexicon.case_folding)
        pred = predict(ckpt, text, lex, _external(context), ex_id)
        row = {
            "label": pred.label.value,
            "probs": {lab.value: p for lab, p in zip(LABELS, pred.probs)},
            **pred.trace.to_dict(),
        }
        echo(_jsonl(row))
        if trace:
            echo(format_trace(pred.trace))


@app.command("attn-export")
def cmd_attn_export(
    ckpt_path: Path = typer.Option(..., "--ckpt", help="Checkpoint"),
    data: Path = typer.Option(..., "--data", help="Dataset (JSON-lines)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Traces (JSON-lines)"),
    compare: Optional[Path] = typer.Option(
        None, "--compare", help="Second checkpoint to trace side by side"
    ),
    lexicon: Optional[Path] = _LEXICON_OPT,
    context: Optional[Path] = _CONTEXT_OPT,
    jobs: Optional[int] = _JOBS_OPT,
) -> None:
    """Export per-token attention weights; without --out print heatmaps."""
    with _guard():
        from kare.checkpoint import load
        from kare.corpus import load_dataset
        from kare.pa_encoder import format_trace
        from kare.training import evaluate

        corpus = load_dataset(data)
        external = _external(context)
        ckpt = load(ckpt_path)
        lex = _lexicon(lexicon, ckpt.config.lexicon.case_folding)
        result = evaluate(ckpt, corpus, lex, _jobs(jobs), external)
        other = {}
        if compare is not None:
            second = evaluate(load(compare), corpus, lex, _jobs(jobs), external)
            other = dict(zip(second.ids, second.traces))
        lines: List[str] = []
        for ex_id, tr in zip(result.ids, result.traces):
            if out is None:
                lines.append(f"{ex_id}\t{format_trace(tr)}")
                if ex_id in other:
                    lines.append(f"{ex_id}\t{format_trace(other[ex_id])}")
                continue
            row: Dict[str, Any] = {"id": ex_id, **tr.to_dict()}
            if ex_id in other:
                row["compare"] = {
                    "alphas": other[ex_id].alphas,
                    "predicted": other[ex_id].predicted,
                }
            lines.append(_jsonl(row))
        if out is None:
            for line in lines:
                echo(line)
            return
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        echo(f"wrote {len(lines)} traces to {out}")


@app.command("ablate")
def cmd_ablate(
    data: Path = typer.Option(..., "--data", help="Training set (JSON-lines)"),
    test: Path = typer.Option(..., "--test", help="Test set (JSON-lines)"),
    dev: Optional[Path] = typer.Option(None, "--dev", help="Dev set for early stop"),
    table: str = typer.Option(
        "ablation", "--table", help="ablation | fusion | attention | baselines | all"
    ),
    averaging: str = typer.Option("weighted", help="weighted | macro | micro"),
    json_out: Optional[Path] = typer.Option(None, "--json", help="Write the report"),
    lexicon: Optional[Path] = _LEXICON_OPT,
    context: Optional[Path] = _CONTEXT_OPT,
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
    jobs: Optional[int] = _JOBS_OPT,
) -> None:
    """Retrain each variant of a table and report deltas against the full model."""
    with _guard():
        from kare.ablation import ablate
        from kare.corpus import load_dataset

        cfg = _config(config, sets)
        lex = _lexicon(lexicon, cfg.lexicon.case_folding)
        result = ablate(
            cfg,
            load_dataset(data),
            load_dataset(dev) if dev is not None else None,
            load_dataset(test),
            lex,
            table=table,
            averaging=averaging,
            external=_external(context),
            jobs=_jobs(jobs),
        )
        echo(result.report.text())
        if json_out is not None:
            json_out.write_text(result.report.to_json() + "\n", encoding="utf-8")


@app.command("census")
def cmd_census(
    table: str = typer.Option("all", "--table", help="Variant table"),
    config: Optional[Path] = _CONFIG_OPT,
    sets: List[str] = _SET_OPT,
) -> None:
    """Trainable tensors each variant removes from the full model."""
    with _guard():
        from kare.ablation import FULL, census, removed_tensors, variant_names
        from kare.embedding import build_embedding_table

        cfg = _config(config, sets)
        vocab = build_embedding_table([], cfg.embedding.dim, cfg.train.seed)
        names = variant_names(table)
        shapes = census(cfg, vocab, tuple(dict.fromkeys((FULL, *names))))
        for name in names:
            total = sum(math.prod(s) for s in shapes[name].values())
            gone = removed_tensors(shapes[FULL], shapes[name])
            echo(f"{name:22s} {total:9d}  removed: {', '.join(gone) or '-'}")


@app.command("gradcheck")
def cmd_gradcheck(
    tol: float = typer.Option(1e-4, "--tol", help="Max relative error allowed"),
) -> None:
    """Compare analytic gradients with finite differences on a tiny model."""
    with _guard():
        from kare.gradcheck import check_gradients, tiny_setup

        model, batch = tiny_setup(_seed())
        errors = check_gradients(model, batch)
        worst = 0.0
        for name, err in errors.items():
            worst = max(worst, err)
            echo(f"{name:45s} {err:.2e}")
        echo(f"max relative error {worst:.2e} (tolerance {tol:g})")
        if worst >= tol:
            raise typer.Exit(2)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code (1 usage error, 2 data error)."""
    try:
        rv = app(
            args=list(argv) if argv is not None else None,
            prog_name="kare",
            standalone_mode=False,
        )
    except typer.Exit as e:
        return int(e.exit_code)
    except typer.Abort:
        return 1
    except _CLICK_ERROR as e:
        e.show()
        return 1
    return rv if isinstance(rv, int) else 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
