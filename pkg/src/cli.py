"""
sketchlab command suite.

Every command resolves the run configuration (defaults < environment <
--config file < --set overrides < command flags), writes run_config.env and
run_meta.json into its run directory, then does its work.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from . import __version__
from .agent import AgentModel, abstract, abstract_all, load_agent, saliency, save_agent
from .classifier import accuracy, load_classifier, predict, save_classifier, train_classifier
from .config import LOG_LEVELS, RunConfig, load_run_config, write_run_files
from .corpus import Corpus, generate_toy, load_corpus
from .environment import SCHEMES, read_trace, replay, write_trace
from .errors import ConfigError, SketchLabError
from .evaluation import evaluate_abstraction
from .photo2sketch import (binarize, build_edge_corpus, distort, load_pgm, photo_variants, resample, simplify,
                           trace, vectorize)
from .retrieval import evaluate_sbir, gallery_triplets, load_gallery, raster_embed, train_projection
from .sketch import from_polylines
from .sketch_io import read_ndjson, write_ndjson, write_svg
from .trainer import train_agent, write_curve

logger = logging.getLogger(__name__)
console = Console()


@dataclass
class CliState:
    config: RunConfig
    argv: List[str]


def _begin(ctx: click.Context, command: str, run_dir: Optional[str]) -> Path:
    state: CliState = ctx.obj
    state.config.validate()
    out = Path(run_dir) if run_dir else Path(state.config.run.out_dir) / command
    write_run_files(out, state.config, command, state.argv)
    logger.info(f"{command}: run directory {out}")
    return out


def _override(config: RunConfig, section: str, **values) -> None:
    values = {k: v for k, v in values.items() if v is not None}
    if values:
        setattr(config, section, replace(getattr(config, section), **values))


def _corpus(config: RunConfig, data: Sequence[str]) -> Corpus:
    if data:
        cap = config.corpus.per_class_cap or None
        return load_corpus(data, cap, config.corpus.test_fraction, config.run.seed)
    return generate_toy(config.section('toy'), config.corpus.n_per_class)


def _read(path: str):
    sketches, errors = read_ndjson(path)
    if errors:
        console.print(f"[yellow]{len(errors)} malformed records skipped in {path}[/yellow]")
    return sketches


def _svg_path(base: Path, index: int, count: int) -> Path:
    if base.suffix == '.svg':
        return base if count == 1 else base.with_name(f"{base.stem}-{index:04d}.svg")
    return base / f"sketch-{index:04d}.svg"


def _print_table(title: str, frame: pd.DataFrame) -> None:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)


def _set_seed(ctx: click.Context, param: click.Parameter, value: Optional[int]) -> None:
    if value is not None:
        _override(ctx.find_object(CliState).config, 'run', seed=value)


run_dir_option = click.option('--run-dir', type=click.Path(file_okay=False),
                              help='Output directory (default: <run.out_dir>/<command>)')
seed_option = click.option('--seed', type=int, expose_value=False, callback=_set_seed,
                           help='Seed for this run (same as the global --seed)')


@click.group(context_settings={'help_option_names': ['-h', '--help']})
@click.version_option(__version__, prog_name='sketchlab')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              help='Run configuration file (section.key = value lines)')
@click.option('--seed', type=int, help='Global seed (falls back to SKETCHLAB_SEED)')
@click.option('--workers', type=int, help='Worker threads for rollouts, abstract and p2s (1 = bit-reproducible)')
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False))
@click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE', help='Override one configuration key')
@click.pass_context
def cli(ctx, config_path, seed, workers, log_level, overrides):
    """Sketch abstraction laboratory"""
    config = load_run_config(config_path, overrides)
    _override(config, 'run', seed=seed, workers=workers)
    if log_level:
        logging.getLogger().setLevel(log_level.upper())
    ctx.obj = CliState(config, list(sys.argv[1:]) if ctx.obj is None else ctx.obj)


@cli.command('gen-toy')
@click.option('--classes', help='Comma-separated toy classes, e.g. square,circle,zigzag')
@click.option('--n', '--n-per-class', 'n_per_class', type=int, help='Sketches per class')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='NDJSON output')
@run_dir_option
@seed_option
@click.pass_context
def gen_toy(ctx, classes, n_per_class, out_path, run_dir):
    """Generate the synthetic toy corpus"""
    config = ctx.obj.config
    if classes:
        config.set('toy.classes', classes)
    _override(config, 'corpus', n_per_class=n_per_class)
    out = _begin(ctx, 'gen-toy', run_dir)
    corpus = generate_toy(config.section('toy'), config.corpus.n_per_class)
    path = Path(out_path) if out_path else out / 'toy.ndjson'
    count = write_ndjson(path, corpus.sketches)
    console.print(f"[green]Wrote {count} sketches ({corpus.K} classes) to {path}[/green]")


@cli.command('train-classifier')
@click.option('--data', multiple=True, type=click.Path(exists=True, dir_okay=False),
              help='NDJSON files (default: toy corpus from the configuration)')
@click.option('--hidden', type=int)
@click.option('--layers', type=int)
@click.option('--epochs', type=int)
@click.option('--lr', type=float)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Checkpoint path')
@run_dir_option
@seed_option
@click.pass_context
def train_classifier_cmd(ctx, data, hidden, layers, epochs, lr, out_path, run_dir):
    """Train the recurrent sketch classifier"""
    config = ctx.obj.config
    _override(config, 'classifier', hidden=hidden, layers=layers, epochs=epochs, lr=lr)
    out = _begin(ctx, 'train-classifier', run_dir)
    corpus = _corpus(config, data)
    result = train_classifier(corpus, config.section('classifier'))
    path = Path(out_path) if out_path else out / 'classifier.ckpt'
    save_classifier(path, result.model, config.section('classifier'))
    result.history.to_csv(out / 'classifier_history.csv', index=False)
    _print_table('Classifier training', result.history)
    console.print(f"[green]Best test accuracy {result.best_accuracy:.3f} (epoch {result.best_epoch}) -> {path}[/green]")


@cli.command('eval-classifier')
@click.option('--classifier', 'classifier_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', multiple=True, type=click.Path(exists=True, dir_okay=False))
@run_dir_option
@seed_option
@click.pass_context
def eval_classifier(ctx, classifier_path, data, run_dir):
    """Test-split accuracy, overall and per class"""
    config = ctx.obj.config
    out = _begin(ctx, 'eval-classifier', run_dir)
    model = load_classifier(classifier_path)
    corpus = _corpus(config, data)
    test = corpus.test
    rows = [{'class': name, 'count': sum(s.label == k for s in test),
             'accuracy': accuracy(model, [s for s in test if s.label == k])}
            for k, name in enumerate(corpus.class_names)]
    rows.append({'class': 'all', 'count': len(test), 'accuracy': accuracy(model, test)})
    frame = pd.DataFrame(rows)
    frame.to_csv(out / 'classifier_eval.csv', index=False)
    _print_table('Classifier evaluation', frame)


@cli.command('train-agent')
@click.option('--classifier', 'classifier_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--scheme', type=click.Choice(SCHEMES))
@click.option('--episodes', type=int)
@click.option('--N', 'batch_size', type=int, help='Trajectories per update')
@click.option('--gamma', type=float)
@click.option('--lr', type=float)
@click.option('--eval-every', type=int)
@click.option('--init-agent', type=click.Path(exists=True, dir_okay=False), help='Start from this checkpoint')
@click.option('--edge-finetune', is_flag=True, help='Train on traced and simplified edge renderings')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Checkpoint path')
@run_dir_option
@seed_option
@click.pass_context
def train_agent_cmd(ctx, classifier_path, data, scheme, episodes, batch_size, gamma, lr, eval_every,
                    init_agent, edge_finetune, out_path, run_dir):
    """Train the abstraction agent with REINFORCE"""
    config = ctx.obj.config
    _override(config, 'reward', scheme=scheme, gamma=gamma)
    _override(config, 'trainer', episodes=episodes, batch_size=batch_size, lr=lr, eval_every=eval_every)
    out = _begin(ctx, 'train-agent', run_dir)

    classifier = load_classifier(classifier_path)
    corpus = _corpus(config, data)
    if corpus.K != classifier.K:
        raise SketchLabError(f"corpus has {corpus.K} classes, classifier expects {classifier.K}")
    if edge_finetune:
        corpus = build_edge_corpus(corpus, config.section('distortion'), config.resample.step_length,
                                   config.p2s.edge_size, config.run.seed)
    agent = load_agent(init_agent) if init_agent else AgentModel.create(config.section('agent'))

    reward = config.section('reward')
    result = train_agent(corpus, classifier, agent, config.section('trainer'), reward)
    path = Path(out_path) if out_path else out / 'agent.ckpt'
    save_agent(path, result.agent, config.to_dict())
    write_curve(out / 'training_curve.csv', result.curve)
    write_trace(out / 'trace.ndjson', [t.trace(reward) for t in result.last_batch])
    console.print(f"[green]Best eval return {result.best_return:.2f} at episode {result.best_episode} "
                  f"-> {path}[/green]")


@cli.command('abstract')
@click.option('--agent', 'agent_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False))
@click.option('--delta', type=click.FloatRange(-1.0, 1.0), default=0.0, show_default=True)
@click.option('--svg', 'svg_dir', type=click.Path(file_okay=False), help='Directory for SVG renderings')
@click.option('--classifier', 'classifier_path', type=click.Path(exists=True, dir_okay=False),
              help='Report recognizability of the output')
@run_dir_option
@seed_option
@click.pass_context
def abstract_cmd(ctx, agent_path, in_path, out_path, delta, svg_dir, classifier_path, run_dir):
    """Abstract sketches at the given delta"""
    config = ctx.obj.config
    out = _begin(ctx, 'abstract', run_dir)
    agent = load_agent(agent_path)
    classifier = load_classifier(classifier_path) if classifier_path else None
    sketches = [s for s in _read(in_path) if not s.is_empty]
    results = abstract_all(agent, sketches, delta, config.run.seed, classifier, config.run.workers)
    write_ndjson(Path(out_path) if out_path else out / 'abstracted.ndjson', [r.sketch for r in results])
    if svg_dir:
        for i, r in enumerate(results):
            write_svg(_svg_path(Path(svg_dir), i, len(results)), r.sketch, timestamp=config.run.svg_timestamp)
    kept = np.mean([r.kept_segments / len(r.kept_mask) for r in results]) if results else float('nan')
    console.print(f"Abstracted {len(results)} sketches at delta={delta:+.2f}, kept {kept:.1%} of segments")
    if classifier is not None:
        hits = [r.prediction.is_correct(r.sketch.label) for r in results if r.sketch.label is not None]
        if hits:
            console.print(f"Recognizability: {np.mean(hits):.3f}")


@cli.command('saliency')
@click.option('--agent', 'agent_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--svg', 'svg_path', type=click.Path(), help='Heat-map SVG file (numbered when several)')
@run_dir_option
@seed_option
@click.pass_context
def saliency_cmd(ctx, agent_path, in_path, svg_path, run_dir):
    """Per-stroke saliency, optionally rendered blue (0) to red (1)"""
    config = ctx.obj.config
    out = _begin(ctx, 'saliency', run_dir)
    agent = load_agent(agent_path)
    sketches = [s for s in _read(in_path) if not s.is_empty]
    rows = []
    for i, sketch in enumerate(sketches):
        heat = saliency(agent, sketch)
        rows += [{'sketch': i, 'stroke': stroke + 1, 'saliency': float(v)} for stroke, v in enumerate(heat.values)]
        if svg_path:
            write_svg(_svg_path(Path(svg_path), i, len(sketches)), sketch, stroke_colors=heat.colors(),
                      timestamp=config.run.svg_timestamp)
    pd.DataFrame(rows, columns=['sketch', 'stroke', 'saliency']).to_csv(out / 'saliency.csv', index=False)
    console.print(f"Saliency for {len(sketches)} sketches written to {out / 'saliency.csv'}")


@cli.command('trace')
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False), help='PGM edge map')
@click.option('--threshold', type=int)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False))
@click.option('--svg', 'svg_path', type=click.Path(dir_okay=False))
@run_dir_option
@seed_option
@click.pass_context
def trace_cmd(ctx, edges, threshold, out_path, svg_path, run_dir):
    """Trace a PGM edge map into vector strokes"""
    config = ctx.obj.config
    _override(config, 'p2s', threshold=threshold)
    out = _begin(ctx, 'trace', run_dir)
    polylines = trace(binarize(load_pgm(edges), config.p2s.threshold))
    sketch = from_polylines(polylines, key=Path(edges).stem)
    write_ndjson(Path(out_path) if out_path else out / 'traced.ndjson', [sketch])
    if svg_path:
        write_svg(svg_path, sketch, timestamp=config.run.svg_timestamp)
    console.print(f"Traced {len(polylines)} polylines ({len(sketch)} points)")


@cli.command('distort')
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False))
@click.option('--variants', type=int, default=1, show_default=True)
@run_dir_option
@seed_option
@click.pass_context
def distort_cmd(ctx, in_path, out_path, variants, run_dir):
    """Apply global and stroke-level distortions"""
    config = ctx.obj.config
    out = _begin(ctx, 'distort', run_dir)
    params = config.section('distortion')
    results = [distort(s, params, np.random.default_rng([params.seed, i, v]))
               for i, s in enumerate(_read(in_path)) for v in range(variants)]
    count = write_ndjson(Path(out_path) if out_path else out / 'distorted.ndjson', results)
    console.print(f"Wrote {count} distorted sketches")


@cli.command('resample')
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False))
@click.option('--step', 'step_length', type=float)
@run_dir_option
@seed_option
@click.pass_context
def resample_cmd(ctx, in_path, out_path, step_length, run_dir):
    """Fixed arc-length resampling"""
    config = ctx.obj.config
    _override(config, 'resample', step_length=step_length)
    out = _begin(ctx, 'resample', run_dir)
    sketches = _read(in_path)
    results = [resample(s, config.resample.step_length) for s in sketches]
    write_ndjson(Path(out_path) if out_path else out / 'resampled.ndjson', results)
    console.print(f"Resampled {len(results)} sketches: {sum(map(len, sketches))} -> {sum(map(len, results))} points")


@cli.command('p2s')
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False), help='PGM edge map')
@click.option('--agent', 'agent_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--delta', type=click.FloatRange(-1.0, 1.0), default=0.0, show_default=True)
@click.option('--variants', type=int)
@click.option('--dump-stages', type=click.Path(file_okay=False), help='Write every pipeline stage here')
@click.option('--classifier', 'classifier_path', type=click.Path(exists=True, dir_okay=False))
@run_dir_option
@seed_option
@click.pass_context
def p2s_cmd(ctx, edges, agent_path, delta, variants, dump_stages, classifier_path, run_dir):
    """Edge map to abstract sketch"""
    config = ctx.obj.config
    _override(config, 'p2s', variants=variants)
    out = _begin(ctx, 'p2s', run_dir)
    agent = load_agent(agent_path)
    results = photo_variants(load_pgm(edges), agent, delta, config.section('distortion'), config.p2s.variants,
                             config.resample.step_length, config.p2s.threshold, config.run.workers)
    write_ndjson(out / 'p2s.ndjson', [r.sketch for r in results])
    if dump_stages:
        for v, result in enumerate(results, start=1):
            for stage, sketch in result.stages().items():
                write_ndjson(Path(dump_stages) / f"variant{v}_{stage}.ndjson", [sketch])
                if not sketch.is_empty:
                    write_svg(Path(dump_stages) / f"variant{v}_{stage}.svg", sketch,
                              timestamp=config.run.svg_timestamp)
    if classifier_path:
        classifier = load_classifier(classifier_path)
        for v, result in enumerate(results, start=1):
            p = predict(classifier, result.sketch)
            console.print(f"variant {v}: {len(result.sketch)} points, predicted class {p.predicted} "
                          f"(p={p.probs[p.predicted]:.3f})")
    console.print(f"[green]{len(results)} variants written to {out / 'p2s.ndjson'}[/green]")


@cli.command('sbir-eval')
@click.option('--gallery', 'gallery_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--queries', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--agent', 'agent_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--k', 'ks', help='Comma-separated K values, e.g. 1,10')
@click.option('--fusion', type=click.Choice(['mean', 'min']))
@run_dir_option
@seed_option
@click.pass_context
def sbir_eval(ctx, gallery_dir, queries, agent_path, ks, fusion, run_dir):
    """Top-K retrieval with and without multi-abstraction fusion"""
    config = ctx.obj.config
    if ks:
        config.set('retrieval.ks', ks)
    _override(config, 'retrieval', fusion=fusion)
    out = _begin(ctx, 'sbir-eval', run_dir)
    settings = config.retrieval
    agent = load_agent(agent_path)
    gallery, rasters = load_gallery(gallery_dir)

    projection = None
    if settings.projection_epochs > 0:
        rng = np.random.default_rng([config.run.seed, 7])
        params = config.section('distortion')
        own = {}
        for item_id, raster in rasters.items():
            _, simplified = simplify(vectorize(raster, config.p2s.threshold), params,
                                     config.resample.step_length, rng)
            variants = [simplified] + [abstract(agent, simplified, d, rng).sketch for d in settings.deltas]
            own[item_id] = [raster_embed(s).values for s in variants if not s.is_empty]
        projection, history = train_projection(gallery_triplets(gallery, own, rng), settings.projection_dim,
                                               settings.margin, settings.projection_epochs,
                                               settings.projection_lr, config.run.seed)
        console.print(f"Projection trained: triplet loss {history[0]:.4f} -> {history[-1]:.4f}")

    ranks, summary = evaluate_sbir(gallery, _read(queries), agent, settings.ks, settings.fusion,
                                   settings.deltas, config.run.seed, projection)
    ranks.to_csv(out / 'sbir_ranks.csv', index=False)
    summary.to_csv(out / 'sbir_summary.csv', index=False)
    _print_table('Retrieval Top-K', summary)


@cli.command('replay-check')
@click.option('--trace', 'trace_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--classifier', 'classifier_path', required=True, type=click.Path(exists=True, dir_okay=False))
@run_dir_option
@seed_option
@click.pass_context
def replay_check(ctx, trace_path, classifier_path, run_dir):
    """Re-run recorded actions and compare rewards exactly"""
    _begin(ctx, 'replay-check', run_dir)
    report = replay(read_trace(trace_path), load_classifier(classifier_path))
    if report.ok:
        console.print(f"[green]rewards match[/green] ({report.episodes} episodes, {report.transitions} transitions)")
        return
    for sketch_id, t, recorded, replayed in report.mismatches[:20]:
        console.print(f"[red]{sketch_id} t={t}: recorded {recorded!r}, replayed {replayed!r}[/red]")
    console.print(f"[red]reward mismatch in {len(report.mismatches)} transitions[/red]")
    ctx.exit(2)


@cli.command('eval-abstraction')
@click.option('--agent', 'agent_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--classifier', 'classifier_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--deltas', help='Comma-separated deltas (default: evaluation.deltas)')
@run_dir_option
@seed_option
@click.pass_context
def eval_abstraction(ctx, agent_path, classifier_path, data, deltas, run_dir):
    """Agent vs random-removal recognizability per delta"""
    config = ctx.obj.config
    if deltas:
        config.set('evaluation.deltas', deltas)
    out = _begin(ctx, 'eval-abstraction', run_dir)
    corpus = _corpus(config, data)
    frame = evaluate_abstraction(load_agent(agent_path), load_classifier(classifier_path), corpus.test,
                                 config.evaluation.deltas, config.run.seed)
    frame.to_csv(out / 'abstraction_eval.csv', index=False)
    _print_table('Abstraction recognizability', frame)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command suite and map failures to exit codes"""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rv = cli.main(args=argv, prog_name='sketchlab', standalone_mode=False, obj=argv)
        return rv if isinstance(rv, int) else 0
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        console.print(f"[red]Configuration error: {e}[/red]")
        return 1
    except SketchLabError as e:
        logger.error(f"sketchlab failed: {e}")
        console.print(f"[red]Error: {e}[/red]")
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return 2
