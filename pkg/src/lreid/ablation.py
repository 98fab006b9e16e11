"""Component ablation: train the loss-toggle lattice and compare averages.

Seven rows cover every on/off combination of the distillation, alignment,
and soft-target terms that the component study tracks; the orthogonality
term stays on as part of the base objective. Rows that use no buffer loss
also disable the buffer so the base row doubles as the naive fine-tune
baseline.
"""

import copy
from dataclasses import dataclass

from .continual import run_training

# (name, use_distill, use_align, use_soft_targets)
ABLATION_ROWS = (
    ("base", False, False, False),
    ("distill", True, False, False),
    ("distill+align", True, True, False),
    ("distill+soft", True, False, True),
    ("align", False, True, False),
    ("align+soft", False, True, True),
    ("full", True, True, True),
)


@dataclass
class AblationRow:
    name: str
    seen_avg_map: float
    seen_avg_rank1: float
    unseen_avg_map: float
    unseen_avg_rank1: float
    aux_overlap: float
    config_echo: str


def row_config(cfg, name, use_distill, use_align, use_soft):
    row_cfg = copy.deepcopy(cfg)
    row_cfg.use_distill = use_distill
    row_cfg.use_align = use_align
    row_cfg.use_soft_targets = use_soft
    row_cfg.use_buffer = use_align or use_soft
    row_cfg.out_dir = f"{cfg.out_dir}/ablate/{name}"
    return row_cfg


def run_ablation(cfg, log=None, out_dir=None):
    """Train all rows under one seed; returns the comparison rows in order."""
    from .config import serialize_config

    rows = []
    for name, use_distill, use_align, use_soft in ABLATION_ROWS:
        row_cfg = row_config(cfg, name, use_distill, use_align, use_soft)
        row_dir = None
        if out_dir is not None:
            row_dir = out_dir / name
            row_dir.mkdir(parents=True, exist_ok=True)
            (row_dir / "config.echo").write_text(serialize_config(row_cfg))
        _, _, report, overlap = run_training(row_cfg, out_dir=row_dir)
        row = AblationRow(
            name=name,
            seen_avg_map=report.seen_avg_map,
            seen_avg_rank1=report.seen_avg_rank1,
            unseen_avg_map=report.unseen_avg_map,
            unseen_avg_rank1=report.unseen_avg_rank1,
            aux_overlap=overlap,
            config_echo=serialize_config(row_cfg),
        )
        rows.append(row)
        if log is not None:
            log.write(
                {
                    "record": "ablate_row",
                    "row": name,
                    "seen_avg_map": row.seen_avg_map,
                    "seen_avg_rank1": row.seen_avg_rank1,
                    "unseen_avg_map": row.unseen_avg_map,
                    "unseen_avg_rank1": row.unseen_avg_rank1,
                    "aux_overlap": row.aux_overlap,
                }
            )
    return rows


def format_ablation_table(rows):
    header = f"{'row':<14} {'seen mAP':>9} {'seen R-1':>9} {'unseen mAP':>11} {'unseen R-1':>11} {'aux |cos|':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.name:<14} {r.seen_avg_map:>9.4f} {r.seen_avg_rank1:>9.4f}"
            f" {r.unseen_avg_map:>11.4f} {r.unseen_avg_rank1:>11.4f} {r.aux_overlap:>10.4f}"
        )
    return "\n".join(lines)
