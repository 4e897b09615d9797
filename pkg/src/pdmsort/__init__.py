"""Parallel-disk-model sorting simulator.

Simulates a machine with m block frames of internal memory and D
synchronized disks, counts every parallel I/O operation exactly, and
implements a guided multiway mergesort alongside sequential and
naive-striping baselines.
"""

from .analysis import (ceil_log, g_of, h_of, leading_factor, predict_merge_costs,
                       predicted_phase_ops, sort_unit)
from .baselines import (naive_striping_sort, predicted_sequential_ios,
                        predicted_striping_ios, sequential_sort)
from .guidesort import (GuideSnapshot, GuidesortError, LeaderSeq, Placement,
                        SortReport, base_sort, color_canonical, greedy_pick_color,
                        guided_merge, guidesort, merge_samples, redistribute_run,
                        split_guide)
from .machine import (BufferHandle, ConfigError, IoStats, Machine, MemoryBudgetError,
                      PdmError, ReservationError, StripedRun, TransferError,
                      UnwrittenReadError, create_machine)
from .params import (AlgorithmPlan, GuideParams, ParamError, UnsupportedConfig,
                     align_divisible, compute_auto_params, compute_general_params,
                     compute_simple_params, select_algorithm, validate_params)

__version__ = "0.1.0"
