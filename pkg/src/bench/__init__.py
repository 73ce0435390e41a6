from src.bench.BenchRecord import BenchRecord, append_records, read_records
from src.bench.RunConfig import BENCH_MODES, RunConfig, apply_overrides, load_run_config, parse_config_text
from src.bench.fit import fit_scaling_exponent
from src.bench.commands import cmd_bench_scaling, cmd_map, cmd_query, cmd_fit
from src.bench.ablation import AblationRecord, cmd_ablate_conv, cmd_ablate_steps
from src.bench.verify import SuiteResult, VerifyHooks, cmd_verify
