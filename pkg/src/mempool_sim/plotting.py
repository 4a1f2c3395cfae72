"""Render figures next to the CSV output of each experiment."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _series(rows, key_col, x_col, y_col):
    out = {}
    for row in rows:
        out.setdefault(row[key_col], ([], []))
        xs, ys = out[row[key_col]]
        xs.append(row[x_col])
        ys.append(row[y_col])
    return out


def _network_like(rows, key_col, path):
    fig, (ax_thr, ax_lat) = plt.subplots(1, 2, figsize=(9, 4))
    for key, (xs, ys) in sorted(_series(rows, key_col, "load", "throughput").items()):
        ax_thr.plot(xs, ys, marker="o", markersize=3, label=str(key))
    for key, (xs, ys) in sorted(_series(rows, key_col, "load", "latency_mean").items()):
        ax_lat.plot(xs, ys, marker="o", markersize=3, label=str(key))
    ax_thr.set_xlabel("injected load (req/core/cycle)")
    ax_thr.set_ylabel("throughput (req/core/cycle)")
    ax_lat.set_xlabel("injected load (req/core/cycle)")
    ax_lat.set_ylabel("average round-trip latency (cycles)")
    ax_lat.set_ylim(0, 24)
    for ax in (ax_thr, ax_lat):
        ax.grid(True, alpha=0.4)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _dma(rows, path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for key, (xs, ys) in sorted(_series(rows, "backends", "bytes", "utilization").items()):
        ax.plot(xs, ys, marker="o", markersize=3, label=f"{key} backends/group")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("transfer size (bytes)")
    ax.set_ylabel("system bus utilization")
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


_STALL_FIELDS = ("compute_cycles", "control_cycles", "synchronization_cycles",
                 "icache_stall_cycles", "lsu_stall_cycles", "raw_stall_cycles")


def _kernel(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [r["preset"] for r in rows]
    bottoms = [0.0] * len(rows)
    for name in _STALL_FIELDS:
        totals = [sum(r[f] for f in _STALL_FIELDS) for r in rows]
        vals = [r[name] / t if t else 0.0 for r, t in zip(rows, totals)]
        ax.bar(labels, vals, bottom=bottoms,
               label=name.replace("_cycles", "").replace("_", " "))
        bottoms = [b + v for b, v in zip(bottoms, vals)]
    ax.set_ylabel("fraction of core cycles")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _icache(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    fields = ("l0_hits", "l0_misses", "l1_hits", "l1_misses",
              "tag_reads", "data_way_reads", "refill_beats")
    x = range(len(fields))
    width = 0.8 / max(len(rows), 1)
    for i, row in enumerate(rows):
        ax.bar([xi + i * width for xi in x],
               [row[f] for f in fields], width, label=row["variant"])
    ax.set_xticks([xi + 0.4 for xi in x])
    ax.set_xticklabels(fields, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("events")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _double_buffer(rows, path):
    fig, ax = plt.subplots(figsize=(7, 0.6 * len(rows) + 2))
    t = 0
    for i, row in enumerate(rows):
        if row["compute_cycles"]:
            ax.barh(i, row["compute_cycles"], left=t, color="tab:blue")
        if row["dma_cycles"]:
            ax.barh(i - 0.18, row["dma_cycles"], left=t, height=0.3,
                    color="tab:orange")
        t += row["duration_cycles"]
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([f'{r["phase"]} {r["round"]}' for r in rows], fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("cycles (blue: compute, orange: DMA)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render(experiment: str, rows, path):
    """Write the figure for one experiment's records to path (PNG)."""
    if not rows:
        return
    if experiment == "sweep-network":
        _network_like(rows, "topology", path)
    elif experiment == "sweep-scramble":
        _network_like(rows, "p_local", path)
    elif experiment == "dma-util":
        _dma(rows, path)
    elif experiment == "kernel":
        _kernel(rows, path)
    elif experiment == "icache-sim":
        _icache(rows, path)
    elif experiment == "double-buffer":
        _double_buffer(rows, path)
    else:
        raise ValueError(f"no figure defined for experiment {experiment!r}")
