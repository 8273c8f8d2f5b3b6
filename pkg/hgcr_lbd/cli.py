import functools
from pathlib import Path
from typing import List
from typing import Optional

import click

from . import experiments as ex
from .config import RunConfig
from .exceptions import ConfigError
from .exceptions import HgcrError
from .kgraph import TemporalGraph
from .logger import logger
from .logger import setup_cli_logging
from .models import ErrorRecord
from .models import ExplainMode
from .models import FeedbackTrace
from .models import PromptTemplate
from .models import UsageRecord
from .ranker import RankerParams
from .serialization import dumps
from .serialization import read_records

input_file = click.Path(dir_okay=False)


def _fail(record: ErrorRecord, code: int):
    click.echo(dumps(record), err=True)
    raise click.exceptions.Exit(code)


def pipeline_command(fn):
    """Report pipeline errors as JSON records on stderr: exit 2 for bad
    configuration or input files, 1 for everything else."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            _fail(e.to_record(), 2)
        except FileNotFoundError as e:
            _fail(ErrorRecord("file_not_found", str(e)), 2)
        except HgcrError as e:
            _fail(e.to_record(), 1)

    return wrapper


def load_config(ctx: click.Context, **overrides) -> RunConfig:
    options = dict(ctx.obj["overrides"])
    options.update(overrides)
    return RunConfig.load(ctx.obj["config_file"], **options)


def existing(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"missing input file {path}")
    return path


def _graph(config: RunConfig, explicit: Optional[str]) -> TemporalGraph:
    path = ex.artifact(config, explicit or config.graph, ex.GRAPH_FILE)
    return TemporalGraph.load(existing(path))


def _samples(config: RunConfig, explicit: Optional[str]):
    path = ex.artifact(config, explicit or config.dataset, ex.DATASET_FILE)
    return ex.load_samples(existing(path))


def _params(config: RunConfig, explicit: Optional[str]) -> RankerParams:
    path = ex.artifact(config, explicit or config.checkpoint, ex.CHECKPOINT_FILE)
    return RankerParams.load(existing(path))


def _traces(config: RunConfig, paths) -> List[Path]:
    if paths:
        return [existing(Path(p)) for p in paths]
    return [existing(ex.artifact(config, config.traces, ex.TRACES_FILE))]


def _out(config: RunConfig, explicit: Optional[str], default: str) -> Path:
    path = ex.artifact(config, explicit, default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


graph_option = click.option("--graph", "graph_path", type=input_file, help="Graph file")
dataset_option = click.option("--dataset", type=input_file, help="Dataset file")
checkpoint_option = click.option(
    "--checkpoint", type=input_file, help="Ranker checkpoint"
)
out_option = click.option("--out", type=click.Path(dir_okay=False), help="Output file")
mode_option = click.option(
    "--mode",
    type=click.Choice([m.value for m in ExplainMode]),
    help="Explanation mode",
)


@click.group()
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    help="key=value configuration file",
)
@click.option("--seed", type=int, help="Run seed")
@click.option("--out-dir", type=click.Path(file_okay=False), help="Output directory")
@click.option("-v", "--verbose", count=True, help="More logging, repeat for debug")
@click.pass_context
def cli(ctx: click.Context, config_file, seed, out_dir, verbose):
    """Temporal co-occurrence graphs, path ranking and explanations."""
    setup_cli_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["config_file"] = config_file
    ctx.obj["overrides"] = {"seed": seed, "out_dir": out_dir}


@cli.command("build-graph")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.pass_context
@pipeline_command
def build_graph(ctx, corpus, out):
    """Ingest a JSON lines corpus into a frozen co-occurrence graph."""
    config = load_config(ctx)
    graph = ex.build_graph(Path(corpus), _out(config, out, ex.GRAPH_FILE))
    click.echo(dumps(graph.stats()))


@cli.command("make-dataset")
@graph_option
@click.option("--split-year", type=int, help="First year of the future")
@click.option("--dataset-mode", type=click.Choice(["training", "test"]))
@out_option
@click.pass_context
@pipeline_command
def make_dataset(ctx, graph_path, split_year, dataset_mode, out):
    """Labeled candidate paths for the pairs linked from split-year on."""
    config = load_config(ctx, split_year=split_year, dataset_mode=dataset_mode)
    graph = _graph(config, graph_path)
    out = _out(config, out, ex.DATASET_FILE)
    _result, summary = ex.make_dataset(config, graph, out)
    click.echo(dumps(summary))


@cli.command()
@graph_option
@dataset_option
@click.option("--epochs", type=int)
@out_option
@click.pass_context
@pipeline_command
def train(ctx, graph_path, dataset, epochs, out):
    """Train the path ranker and write a checkpoint."""
    config = load_config(ctx, epochs=epochs)
    graph = _graph(config, graph_path)
    samples = _samples(config, dataset)
    out = _out(config, out, ex.CHECKPOINT_FILE)
    params = ex.train_ranker(config, graph, samples, out)
    if params.loss_log:
        epochs = len(params.loss_log)
        click.echo(f"final loss {params.loss_log[-1]!r} after {epochs} epochs")


@cli.command("eval-ranker")
@graph_option
@dataset_option
@checkpoint_option
@out_option
@click.pass_context
@pipeline_command
def eval_ranker(ctx, graph_path, dataset, checkpoint, out):
    """Micro and macro ROC AUC and AP of the ranker and of the similarity baseline."""
    config = load_config(ctx)
    graph = _graph(config, graph_path)
    reports = ex.evaluate_ranker(
        config,
        graph,
        _params(config, checkpoint),
        _samples(config, dataset),
        _out(config, out, ex.RANKER_METRICS_FILE),
    )
    for report in reports:
        click.echo(
            f"{report.scorer}: auc micro={report.micro_roc_auc}"
            f" macro={report.macro_roc_auc}"
            f" ap micro={report.micro_ap} macro={report.macro_ap}"
        )


@cli.command()
@graph_option
@dataset_option
@checkpoint_option
@mode_option
@click.option("--template", type=click.Choice([t.value for t in PromptTemplate]))
@click.option("--k", type=int, help="Context documents per prompt")
@click.option("--max-iter", type=int)
@click.option("--top-paths", type=int, help="Best scored paths explained per query")
@click.option(
    "--repeats", type=int, help="Generations per path, 3 by default in prompt mode"
)
@click.option("--llm-fixture", type=input_file, help="Scripted responses")
@out_option
@click.pass_context
@pipeline_command
def explain(
    ctx,
    graph_path,
    dataset,
    checkpoint,
    mode,
    template,
    k,
    max_iter,
    top_paths,
    repeats,
    llm_fixture,
    out,
):
    """Explain the best scored paths of every explanation query."""
    config = load_config(
        ctx,
        mode=ExplainMode(mode) if mode else None,
        template=PromptTemplate(template) if template else None,
        k=k,
        max_iter=max_iter,
        top_paths=top_paths,
        repeats=repeats,
        llm_fixture=llm_fixture,
    )
    graph = _graph(config, graph_path)
    run = ex.explain_queries(
        config,
        graph,
        _params(config, checkpoint),
        _samples(config, dataset),
        _out(config, out, ex.TRACES_FILE),
    )
    converged = sum(1 for t in run.traces if t.converged)
    click.echo(f"{len(run.traces)} traces, {converged} converged")


@cli.command("eval-expl")
@graph_option
@click.option("--traces", "trace_paths", type=input_file, multiple=True)
@out_option
@click.pass_context
@pipeline_command
def eval_expl(ctx, graph_path, trace_paths, out):
    """Jaccard, similarity and error rate of every trace, with per mode summaries."""
    config = load_config(ctx)
    graph = _graph(config, graph_path)
    traces = [
        t for p in _traces(config, trace_paths) for t in read_records(p, FeedbackTrace)
    ]
    _rows, summaries = ex.evaluate_explanations(
        config, graph, traces, _out(config, out, ex.EXPL_METRICS_FILE)
    )
    for summary in summaries:
        click.echo(f"{summary.mode} {summary.metric}: {summary.mean} ± {summary.std}")


@cli.command("ablate-k")
@graph_option
@dataset_option
@checkpoint_option
@mode_option
@out_option
@click.pass_context
@pipeline_command
def ablate_k(ctx, graph_path, dataset, checkpoint, mode, out):
    """Explanation metrics for every context size of the ablation grid."""
    config = load_config(ctx, mode=ExplainMode(mode) if mode else None)
    graph = _graph(config, graph_path)
    rows = ex.ablate_k(
        config,
        graph,
        _params(config, checkpoint),
        _samples(config, dataset),
        _out(config, out, ex.ABLATION_FILE),
    )
    for row in rows:
        click.echo(
            f"k={row.k} jaccard={row.jaccard} sim={row.sim} errors={row.error_rate}"
        )


@cli.command("score-vs-sim")
@graph_option
@dataset_option
@checkpoint_option
@mode_option
@click.option("--per-class", type=int, help="Paths sampled per label and query")
@out_option
@click.pass_context
@pipeline_command
def score_vs_sim(ctx, graph_path, dataset, checkpoint, mode, per_class, out):
    """Path scores against the similarity of their explanations."""
    config = load_config(
        ctx, mode=ExplainMode(mode) if mode else None, per_class=per_class
    )
    graph = _graph(config, graph_path)
    points, slope = ex.score_vs_sim(
        config,
        graph,
        _params(config, checkpoint),
        _samples(config, dataset),
        _out(config, out, ex.SCORE_VS_SIM_FILE),
    )
    click.echo(f"{len(points)} points, slope {slope.slope}")


@cli.command()
@click.option("--traces", "trace_paths", type=input_file, multiple=True)
@click.option("--max-iter", type=int)
@out_option
@click.pass_context
@pipeline_command
def report(ctx, trace_paths, max_iter, out):
    """Convergence histogram and generation cost of trace files."""
    config = load_config(ctx, max_iter=max_iter)
    traces, usage = [], []
    for path in _traces(config, trace_paths):
        traces.extend(read_records(path, FeedbackTrace))
        usage_file = ex.usage_path(path)
        if usage_file.is_file():
            usage.extend(read_records(usage_file, UsageRecord))
        else:
            logger.warning(f"no usage log next to {path}")
    convergence, _summary = ex.run_report(
        traces, usage, config.max_iter, _out(config, out, ex.REPORT_FILE)
    )
    click.echo(
        f"{convergence.total} runs, {convergence.did_not_converge} did not converge"
    )


if __name__ == "__main__":
    cli()
