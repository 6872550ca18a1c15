# flows/pani_lab/sweep/tasks/__init__.py
from .run_sweep_cell_task_pani_lab import run_sweep_cell_task
from .summarize_sweep_task_pani_lab import summarize_sweep_task

__all__ = [
    "run_sweep_cell_task",
    "summarize_sweep_task",
]
