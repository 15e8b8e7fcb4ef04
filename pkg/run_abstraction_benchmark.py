#!/usr/bin/env python3
"""
Desk-scale abstraction benchmark on the synthetic toy corpus
Trains the classifier, then basic- and ranked-reward agents over several seeds,
and reports recognizability against random removal, delta monotonicity,
saliency sanity and toy retrieval as a pass/fail summary
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import pandas as pd

from src.agent import AgentConfig, AgentModel, save_agent
from src.classifier import ClassifierConfig, save_classifier, train_classifier
from src.corpus import ToyGenSpec, generate_toy
from src.environment import RewardConfig
from src.evaluation import core_decoration_saliency, evaluate_abstraction
from src.photo2sketch import render_edge_raster, write_pgm
from src.retrieval import evaluate_sbir, load_gallery
from src.trainer import TrainerConfig, train_agent, write_curve

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

DELTAS = (-0.1, 0.0, 0.1)


def report(ok: bool, message: str) -> bool:
    print(f"{'✓' if ok else '✗'} {message}")
    return ok


def check_classifier(corpus, hidden, epochs, out_dir):
    print("\nTraining Classifier...")
    result = train_classifier(corpus, ClassifierConfig(hidden=hidden, epochs=epochs))
    result.history.to_csv(out_dir / 'classifier_history.csv', index=False)
    save_classifier(out_dir / 'classifier.ckpt', result.model, ClassifierConfig(hidden=hidden, epochs=epochs))
    ok = report(result.best_accuracy >= 0.90,
                f"Toy classifier test accuracy {result.best_accuracy:.3f} (epoch {result.best_epoch})")
    return result.model, ok


def train_agents(corpus, classifier, seeds, trainer, out_dir):
    """Returns {(scheme, seed): evaluation frame} and the agents"""
    frames, agents = {}, {}
    for scheme in ('basic', 'ranked'):
        for seed in seeds:
            print(f"\nTraining {scheme} agent (seed {seed})...")
            agent = AgentModel.create(AgentConfig(seed=seed))
            result = train_agent(corpus, classifier, agent, replace(trainer, seed=seed),
                                 RewardConfig(scheme=scheme))
            run_dir = out_dir / f"{scheme}-seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            write_curve(run_dir / 'training_curve.csv', result.curve)
            save_agent(run_dir / 'agent.ckpt', result.agent)
            frame = evaluate_abstraction(result.agent, classifier, corpus.test, DELTAS, seed)
            frame.to_csv(run_dir / 'abstraction_eval.csv', index=False)
            frames[scheme, seed] = frame
            agents[scheme, seed] = result.agent
            print(f"  best eval return {result.best_return:.2f} at episode {result.best_episode}")
    return frames, agents


def check_recognizability(frames, seeds):
    print("\nTesting Recognizability...")
    ok = True
    ranked = pd.concat([frames['ranked', s] for s in seeds]).groupby('delta').mean(numeric_only=True)
    basic = pd.concat([frames['basic', s] for s in seeds]).groupby('delta').mean(numeric_only=True)
    for delta, row in ranked.iterrows():
        margin = (row['agent_accuracy'] - row['random_accuracy']) * 100
        ok &= report(margin >= 5.0, f"delta={delta:+.1f}: ranked agent {row['agent_accuracy']:.3f} vs "
                                    f"random removal {row['random_accuracy']:.3f} ({margin:+.1f} points)")
    gap = (ranked['agent_accuracy'] - basic['agent_accuracy']) * 100
    ok &= report(bool((gap >= -2.0).all() and (gap > 0).any()),
                 "Ranked reward matches or beats basic reward: "
                 + ', '.join(f"{d:+.1f}: {g:+.1f}" for d, g in gap.items()))
    return ok, ranked


def check_monotonicity(ranked):
    print("\nTesting Delta Monotonicity...")
    kept = ranked['mean_kept_points'].tolist()
    return report(all(a > b for a, b in zip(kept, kept[1:])),
                  "Mean retained points decrease with delta: " + ' > '.join(f"{k:.1f}" for k in kept))


def check_saliency(corpus, agent):
    print("\nTesting Saliency...")
    core, decoration = core_decoration_saliency(agent, corpus, corpus.indices('train')[:200])
    return report(core > decoration, f"Core strokes {core:.3f} vs decoration strokes {decoration:.3f}")


def check_retrieval(corpus, agent, out_dir):
    print("\nTesting Retrieval...")
    queries = corpus.test[:50]
    gallery_dir = out_dir / 'gallery'
    for sketch in queries:
        write_pgm(gallery_dir / f"{sketch.key}.pgm", render_edge_raster(sketch, 64))
    gallery, _ = load_gallery(gallery_dir)
    ranks, summary = evaluate_sbir(gallery, queries, agent, ks=(1, 10))
    ranks.to_csv(out_dir / 'sbir_ranks.csv', index=False)
    summary.to_csv(out_dir / 'sbir_summary.csv', index=False)
    for row in summary.itertuples(index=False):
        print(f"  - Top-{row.k}: single {row.single_topk:.3f}, fused {row.fused_topk:.3f}")
    return report(summary['single_topk'].iloc[-1] > 0.0, "Edge-rendered gallery retrieves its own queries")


@click.command()
@click.option('--seeds', default=3, show_default=True, help='Seeds per reward scheme')
@click.option('--per-class', default=200, show_default=True, help='Toy sketches per class')
@click.option('--episodes', default=3000, show_default=True)
@click.option('--classifier-epochs', default=20, show_default=True)
@click.option('--out-dir', default='runs/benchmark', show_default=True, type=click.Path(file_okay=False))
def main(seeds, per_class, episodes, classifier_epochs, out_dir):
    print("=" * 60)
    print("SKETCH ABSTRACTION BENCHMARK")
    print("=" * 60)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    corpus = generate_toy(ToyGenSpec(), per_class)
    print(f"Toy corpus: {len(corpus.sketches)} sketches, classes {', '.join(corpus.class_names)}")

    classifier, ok = check_classifier(corpus, 64, classifier_epochs, out)
    seed_list = list(range(seeds))
    frames, agents = train_agents(corpus, classifier, seed_list, TrainerConfig(episodes=episodes), out)
    recognizable, ranked = check_recognizability(frames, seed_list)
    ranked.to_csv(out / 'ranked_mean_eval.csv')
    results = [ok, recognizable, check_monotonicity(ranked), check_saliency(corpus, agents['ranked', 0]),
               check_retrieval(corpus, agents['ranked', 0], out)]

    print("\n" + "=" * 60)
    print("BENCHMARK SUMMARY")
    print("=" * 60)
    print(f"{sum(results)}/{len(results)} checks passed; CSVs in {out}")
    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    main()
