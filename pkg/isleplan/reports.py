"""Artifact writers for plan, eigengap, coherency and score runs"""
import os

from .layers import write_coherency_csv, write_layer_csv
from .quality import qualities_to_dict, render_quality_report
from .spectral_core import gap_table, write_gap_csv
from .utils import save_json, save_text

PLAN_FILE = 'plan.json'
DENDROGRAM_FILE = 'dendrogram.json'
NEWICK_FILE = 'dendrogram.newick'
EIGENGAP_FILE = 'eigengaps.csv'
QUALITY_FILE = 'quality.txt'
CONFIG_FILE = 'resolved-config.json'
COHERENCY_FILE = 'coherency.csv'


def _ensure_dir(output_dir):
    os.makedirs(output_dir, exist_ok=True)
    return output_dir


def plan_document(result, qualities):
    doc = result.plan.to_dict()
    doc['k_embed'] = result.k_embed
    doc['alpha'] = result.unified.alpha
    doc['layer_alignment_rad'] = dict(sorted(result.alignment.items()))
    doc['quality'] = qualities_to_dict(qualities, result.plan.labels)
    if result.comparison is not None:
        doc['reference_comparison'] = result.comparison
    return doc


def eigengap_tables(spectra, unified_spectrum=None):
    tables = [gap_table(s) for s in spectra]
    if unified_spectrum is not None:
        tables.append(gap_table(unified_spectrum, 'unified'))
    return tables


def write_config(config, output_dir):
    path = os.path.join(_ensure_dir(output_dir), CONFIG_FILE)
    save_json(path, config.to_dict())
    return path


def write_plan_artifacts(result, qualities, config, output_dir):
    """Write every plan artifact; returns the written paths in a fixed order"""
    _ensure_dir(output_dir)
    paths = [
        os.path.join(output_dir, PLAN_FILE),
        os.path.join(output_dir, DENDROGRAM_FILE),
        os.path.join(output_dir, NEWICK_FILE),
        os.path.join(output_dir, EIGENGAP_FILE),
        os.path.join(output_dir, QUALITY_FILE),
    ]
    save_json(paths[0], plan_document(result, qualities))
    save_json(paths[1], result.dendrogram.to_dict())
    save_text(paths[2], result.dendrogram.to_newick())
    write_gap_csv(eigengap_tables(result.layer_spectra, result.spectrum), paths[3])
    save_text(paths[4], render_quality_report(qualities, result.plan))
    paths.append(write_config(config, output_dir))
    if config.export_layers:
        for layer in result.layers:
            path = os.path.join(output_dir, f"layer_{layer.kind.value}.csv")
            write_layer_csv(layer, path)
            paths.append(path)
    return paths


def write_eigengap_artifacts(spectra, unified_spectrum, config, output_dir):
    _ensure_dir(output_dir)
    path = os.path.join(output_dir, EIGENGAP_FILE)
    write_gap_csv(eigengap_tables(spectra, unified_spectrum), path)
    return [path, write_config(config, output_dir)]


def write_coherency_artifacts(cc, layer, graph, output_dir):
    _ensure_dir(output_dir)
    cc_path = os.path.join(output_dir, COHERENCY_FILE)
    layer_path = os.path.join(output_dir, f"layer_{layer.kind.value}.csv")
    write_coherency_csv(cc, graph, cc_path)
    write_layer_csv(layer, layer_path)
    return [cc_path, layer_path]


def write_quality_report(qualities, plan, output_dir):
    path = os.path.join(_ensure_dir(output_dir), QUALITY_FILE)
    save_text(path, render_quality_report(qualities, plan))
    return path
