import functools
import traceback

import click
from click.core import ParameterSource
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from . import __version__
from .errors import ConfigError, HierarchyError, InfeasibleRequest, IslandingError, MeasurementError
from .grid_model import apply_outage, load_case, load_measurements, parse_pair
from .hierarchy import IslandingPlan, choose_k, plan_islands, prepare_layers
from .layers import CoherencyMode, CoherencyTransform, coherency_from_series, coherency_layer
from .logging_config import configure_logging
from .manifold import EmbeddingSource, unify
from .quality import ConductanceMode, score_plan
from .reports import write_coherency_artifacts, write_eigengap_artifacts, write_plan_artifacts, write_quality_report
from .settings import RunConfig, cli_colors
from .spectral_core import spectrum_of
from .synth_dynamics import DEFAULT_DT, DEFAULT_EVENT_TIME, DEFAULT_HORIZON, SwingConfig, simulate, write_measurements
from .utils import load_json

console = Console()

PRIMARY, ACCENT = cli_colors()

EXIT_FAILURE = 1
EXIT_INFEASIBLE = 2
DEFAULT_OUTPUT_DIR = 'isleplan-out'


def print_banner():
    """Print the isleplan banner"""
    banner = f"""
[bold {PRIMARY}]
 _     _            _
(_)___| | ___ _ __ | | __ _ _ __
| / __| |/ _ \\ '_ \\| |/ _` | '_ \\
| \\__ \\ |  __/ |_) | | (_| | | | |
|_|___/_|\\___| .__/|_|\\__,_|_| |_|
             |_|
[/bold {PRIMARY}]
[{ACCENT}]Intentional islanding planner v{__version__}[/{ACCENT}]
"""
    console.print(banner)


def handle_errors(fn):
    """Map IslandingError to exit 1, InfeasibleRequest to exit 2"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return fn(*args, **kwargs)
        except InfeasibleRequest as e:
            console.print(f"\n[red]✗ Infeasible request: {escape(str(e))}[/red]")
            code = EXIT_INFEASIBLE
        except IslandingError as e:
            console.print(f"\n[red]✗ {escape(str(e))}[/red]")
            code = EXIT_FAILURE
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except Exception as e:
            console.print(f"\n[red]❌ Unexpected error: {escape(str(e))}[/red]")
            if (ctx.obj or {}).get('verbose'):
                console.print(f"[dim]{escape(traceback.format_exc())}[/dim]")
            code = EXIT_FAILURE
        ctx.exit(code)
    return wrapper


def _split_layers(value):
    return tuple(name.strip() for name in value.split(',') if name.strip())


def _parse_reference(value):
    islands = [tuple(b.strip() for b in group.split(',') if b.strip()) for group in value.split(';')]
    islands = [island for island in islands if island]
    if not islands:
        raise ConfigError(f"Reference partition {value!r} names no buses")
    return tuple(islands)


def _identity(value):
    return value


# click parameter name -> RunConfig field converter
_CONFIG_FIELDS = {
    'case_path': str,
    'measurements_path': str,
    'outages': lambda v: tuple(parse_pair(x) for x in v),
    'layers': _split_layers,
    'alpha': _identity,
    'k_embed': _identity,
    'islands': _identity,
    'k_max': _identity,
    'conductance_mode': _identity,
    'coherency_mode': _identity,
    'coherency_transform': _identity,
    'event_time': _identity,
    'idle_time': _identity,
    'window_start': _identity,
    'window_end': _identity,
    'embedding_source': _identity,
    'normalize_rows': _identity,
    'delta': _identity,
    'reference': _parse_reference,
    'export_layers': _identity,
}


def _choices(enum):
    return click.Choice([e.value for e in enum])


def pipeline_options(fn):
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                     help='Replay a resolved-config.json; flags given explicitly override it'),
        click.option('--case', 'case_path', type=click.Path(dir_okay=False), help='Case file (JSON)'),
        click.option('--measurements', 'measurements_path', type=click.Path(dir_okay=False),
                     help='Bus angle measurements (time_s,bus,angle_rad CSV)'),
        click.option('--outage', 'outages', multiple=True, help='Branch opened by the disruption, e.g. "7,5" (repeatable)'),
        click.option('--layers', help='Comma-separated layers (topology,admittance,power_flow,frequency_coherency)'),
        click.option('--alpha', type=float, help='Weight of the subspace-alignment term'),
        click.option('--k-embed', type=int, help='Embedding dimension K (default: eigengap vote)'),
        click.option('--islands', type=int, help='Number of islands (default: K)'),
        click.option('--k-max', type=int, help='Largest K considered by the eigengap vote'),
        click.option('--conductance-mode', type=_choices(ConductanceMode)),
        click.option('--coherency-mode', type=_choices(CoherencyMode)),
        click.option('--coherency-transform', type=_choices(CoherencyTransform)),
        click.option('--event-time', type=float, help='Disruption time in the measurements (s)'),
        click.option('--idle-time', type=float, help='Time skipped after the event before the coherency window (s)'),
        click.option('--window-start', type=float, help='Explicit coherency window start (s)'),
        click.option('--window-end', type=float, help='Coherency window end (s; default: end of data)'),
        click.option('--embedding-source', type=_choices(EmbeddingSource)),
        click.option('--normalize-rows/--no-normalize-rows', default=False, help='Project embedding rows onto the unit sphere'),
        click.option('--delta', type=float, help='Delta in (0, 1/3) for the reported Cheeger upper quantity'),
        click.option('--reference', help='Reference islands to compare against, e.g. "6,5,1,4;3,9;8,2,7"'),
        click.option('--export-layers', is_flag=True, help='Also write every raw layer as CSV'),
        click.option('--output-dir', default=DEFAULT_OUTPUT_DIR, show_default=True, type=click.Path(file_okay=False)),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def load_run_config(path):
    try:
        data = load_json(path)
    except FileNotFoundError:
        raise ConfigError(f"Config file does not exist: {path}")
    except ValueError as e:
        raise ConfigError(f"Config file is not valid JSON: {path} ({e})")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must hold a JSON object: {path}")
    return RunConfig.from_dict(data)


def resolve_config(ctx, params):
    """Defaults (or a replayed config) overridden by the flags actually given"""
    config_path = params.get('config_path')
    base = load_run_config(config_path) if config_path else RunConfig()
    changes = {}
    for name, convert in _CONFIG_FIELDS.items():
        if name not in params:
            continue
        source = ctx.get_parameter_source(name)
        if source in (None, ParameterSource.DEFAULT, ParameterSource.DEFAULT_MAP):
            continue
        changes[name] = convert(params[name])
    return base.replace(**changes).validate()


def load_inputs(cfg):
    if not cfg.case_path:
        raise ConfigError("No case file given; pass --case or --config")
    graph = apply_outage(load_case(cfg.case_path), cfg.outages)
    measurements = load_measurements(cfg.measurements_path, graph) if cfg.measurements_path else None
    return graph, measurements


def _progress():
    return Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console)


@click.group()
@click.version_option(__version__, prog_name='isleplan')
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose output and debug logs')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Log level for the JSON logs on stderr')
@click.pass_context
def cli(ctx, verbose, log_level):
    """isleplan - intentional islanding with multi-layer spectral clustering"""
    ctx.ensure_object(dict)
    ctx.obj['verbose'] = verbose
    configure_logging('DEBUG' if verbose else log_level)
    if verbose:
        console.print("[dim]Verbose mode enabled[/dim]")


@cli.command()
@pipeline_options
@click.pass_context
@handle_errors
def plan(ctx, output_dir, **params):
    """Plan islands for a (post-outage) grid and write every artifact"""
    print_banner()
    cfg = resolve_config(ctx, params)
    graph, measurements = load_inputs(cfg)

    with _progress() as progress:
        task = progress.add_task(f"[{PRIMARY}]Building layers and spectra...", total=None)
        result = plan_islands(graph, measurements, None, cfg)
        progress.update(task, description=f"[{PRIMARY}]Scoring islands...")
        qualities = score_plan(result.plan, result.layers, cfg.conductance_mode, cfg.delta)
        progress.update(task, description=f"[{PRIMARY}]Writing artifacts...")
        paths = write_plan_artifacts(result, qualities, cfg, output_dir)
        progress.update(task, description=f"[{ACCENT}]✓ Plan complete!")

    plan_ = result.plan
    table = Table(title="Islands", show_header=True, header_style=f"bold {PRIMARY}")
    table.add_column("Island", style=ACCENT, justify="right")
    table.add_column("Buses")
    table.add_column("Generators")
    for idx, island in enumerate(plan_.to_dict()['islands']):
        table.add_row(str(idx), ' '.join(island['buses']), ' '.join(island['generators']) or '-')
    console.print(table)

    lines = ', '.join(f"({a},{b})" for a, b in plan_.to_dict()['lines_to_open']) or 'none'
    console.print(Panel(
        f"Embedding dimension K: [bold]{result.k_embed}[/bold]\n"
        f"Islands: [bold]{plan_.k}[/bold]\n"
        f"Lines to open: [bold]{escape(lines)}[/bold]\n\n"
        f"[dim]Artifacts written to {escape(str(output_dir))} ({len(paths)} files)[/dim]",
        title=f"[bold {ACCENT}]Islanding Plan[/bold {ACCENT}]",
        border_style=ACCENT
    ))
    if result.comparison is not None:
        verdict = "[green]matches[/green]" if result.comparison['identical'] else "[yellow]differs from[/yellow]"
        console.print(f"Plan {verdict} the reference partition")


@cli.command()
@pipeline_options
@click.pass_context
@handle_errors
def eigengap(ctx, output_dir, **params):
    """Write per-layer and unified eigengap tables"""
    cfg = resolve_config(ctx, params)
    graph, measurements = load_inputs(cfg)
    layers, laps, spectra = prepare_layers(graph, measurements, cfg)
    k = choose_k(spectra, graph.n_buses, cfg)
    unified = spectrum_of(unify(laps, k, cfg.alpha).matrix, 'unified').with_selected_k(k)
    paths = write_eigengap_artifacts(spectra, unified, cfg, output_dir)

    table = Table(title="Largest normalized eigengap", show_header=True, header_style=f"bold {PRIMARY}")
    table.add_column("Layer", style=ACCENT)
    table.add_column("i", justify="right")
    table.add_column("gamma_n", justify="right")
    for spectrum in list(spectra) + [unified]:
        gaps = spectrum.normalized_eigengaps
        if gaps.size:
            i = int(gaps.argmax())
            table.add_row(spectrum.source_kind, str(i + 1), f"{gaps[i]:.4f}")
        else:
            table.add_row(spectrum.source_kind, '-', '-')
    console.print(table)
    console.print(f"[{ACCENT}]Selected K = {k}[/{ACCENT}]  [dim]{escape(paths[0])}[/dim]")


@cli.command()
@pipeline_options
@click.pass_context
@handle_errors
def coherency(ctx, output_dir, **params):
    """Write the frequency coherency matrix and layer"""
    cfg = resolve_config(ctx, params)
    graph, measurements = load_inputs(cfg)
    if measurements is None:
        raise MeasurementError("The coherency command needs a measurements file (--measurements)")
    start, end = cfg.coherency_window
    cc = coherency_from_series(graph, measurements, start, end)
    layer = coherency_layer(cc, graph, cfg.coherency_mode, cfg.coherency_transform)
    paths = write_coherency_artifacts(cc, layer, graph, output_dir)
    console.print(f"[green]✓[/green] Coherency over window [{start:g}, {'end' if end is None else f'{end:g}'}] s "
                  f"written to [bold]{escape(paths[0])}[/bold]")


@cli.command('simulate')
@click.option('--case', 'case_path', required=True, type=click.Path(dir_okay=False), help='Case file (JSON)')
@click.option('--outage', 'outages', multiple=True, help='Branch opened at the event time, e.g. "7,5" (repeatable)')
@click.option('--dt', type=float, default=DEFAULT_DT, show_default=True, help='Integration step (s)')
@click.option('--horizon', type=float, default=DEFAULT_HORIZON, show_default=True, help='Simulated time (s)')
@click.option('--event-time', type=float, default=DEFAULT_EVENT_TIME, show_default=True, help='Outage time (s)')
@click.option('--wind-bus', 'wind_buses', multiple=True, help='Extra bus given low-inertia parameters (repeatable)')
@click.option('--balanced/--unbalanced', default=True, show_default=True, help='Remove the mean net injection')
@click.option('--sample-every', type=int, default=1, show_default=True, help='Write every n-th step')
@click.option('--output', default='measurements.csv', show_default=True, type=click.Path(dir_okay=False))
@click.pass_context
@handle_errors
def simulate_cmd(ctx, case_path, outages, dt, horizon, event_time, wind_buses, balanced, sample_every, output):
    """Simulate linearized swing dynamics and write a measurement CSV"""
    graph = load_case(case_path)
    pairs = tuple(parse_pair(o) for o in outages)
    cfg = SwingConfig.for_graph(graph, dt=dt, horizon=horizon, event_time=event_time, outages=pairs,
                                balanced=balanced, wind_buses=wind_buses)
    with _progress() as progress:
        task = progress.add_task(f"[{PRIMARY}]Integrating swing dynamics...", total=None)
        series = simulate(graph, cfg)
        progress.update(task, description=f"[{PRIMARY}]Writing measurements...")
        write_measurements(series, graph, output, sample_every)
        progress.update(task, description=f"[{ACCENT}]✓ Simulation complete!")
    console.print(f"[green]✓[/green] {graph.n_buses} buses x {horizon:g} s written to [bold]{escape(output)}[/bold]")


@cli.command()
@click.option('--plan', 'plan_path', required=True, type=click.Path(dir_okay=False), help='plan.json to score')
@pipeline_options
@click.pass_context
@handle_errors
def score(ctx, plan_path, output_dir, **params):
    """Score an existing plan against the configured layers"""
    cfg = resolve_config(ctx, params)
    graph, measurements = load_inputs(cfg)
    try:
        data = load_json(plan_path)
    except FileNotFoundError:
        raise HierarchyError(f"Plan file does not exist: {plan_path}")
    except ValueError as e:
        raise HierarchyError(f"Plan file is not valid JSON: {plan_path} ({e})")
    plan_ = IslandingPlan.from_dict(data, graph)
    layers, _, _ = prepare_layers(graph, measurements, cfg)
    qualities = score_plan(plan_, layers, cfg.conductance_mode, cfg.delta)
    path = write_quality_report(qualities, plan_, output_dir)

    table = Table(title="Worst island conductance", show_header=True, header_style=f"bold {PRIMARY}")
    table.add_column("Layer", style=ACCENT)
    table.add_column("Mode")
    table.add_column("Worst", justify="right")
    for q in qualities:
        table.add_row(q.layer, q.mode.value, f"{q.worst_conductance:.6g}")
    console.print(table)
    console.print(f"[dim]{escape(path)}[/dim]")


if __name__ == '__main__':
    cli(obj={})
