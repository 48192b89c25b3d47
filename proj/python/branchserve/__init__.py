# Copyright 2026 The BranchServe Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Python bindings for the branchserve simulator."""

from branchserve._core import (
    DataError,
    MlpModel,
    UsageError,
    Workload,
    branch_out_distribution,
    calibrate_tau,
    check_early_termination,
    check_request_termination,
    gen_arrivals,
    generate_workload,
    load_trace,
    majority_vote,
    normalize_answer,
    percentile,
    run_cli,
    save_trace,
    simulate,
)

__all__ = [
    "DataError",
    "MlpModel",
    "UsageError",
    "Workload",
    "branch_out_distribution",
    "calibrate_tau",
    "check_early_termination",
    "check_request_termination",
    "gen_arrivals",
    "generate_workload",
    "load_trace",
    "majority_vote",
    "normalize_answer",
    "percentile",
    "run_cli",
    "save_trace",
    "simulate",
]
