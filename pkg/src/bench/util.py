from colorama import Fore, Style, init

from src.runner.EventEmitter import event_emitter

init()


def banner(title: str) -> str:
    return "\n".join([
        f"{Fore.CYAN}{'=' * 60}",
        f"{Fore.CYAN}{title:^60}",
        f"{Fore.CYAN}{'=' * 60}{Style.RESET_ALL}",
    ])


def status(passed: bool) -> str:
    return f"{Fore.GREEN}PASS{Style.RESET_ALL}" if passed else f"{Fore.RED}FAIL{Style.RESET_ALL}"


def visualize_config(echo: str) -> str:
    output = [f"{Fore.CYAN}CONFIG:{Style.RESET_ALL}"]
    output += [f"  {line}" for line in echo.splitlines()]
    return "\n".join(output)


def visualize_suites(results) -> str:
    output = [banner("VERIFICATION")]
    for result in results:
        output.append(f"  {status(result.passed)} {result.name:<10} {result.summary}")
        for detail in result.failures:
            output.append(f"      {Fore.RED}{detail}{Style.RESET_ALL}")
    return "\n".join(output)


def visualize_records(records) -> str:
    output = [f"{Fore.CYAN}{'mode':<12}{'frames':>8}{'wall_ms':>12}{'flops':>16}{'resident':>10}{Style.RESET_ALL}"]
    for r in records:
        output.append(f"{r.mode:<12}{r.n_frames:>8}{r.wall_ms:>12.2f}{r.flops_model:>16.3e}{r.peak_resident_minibatches:>10}")
    return "\n".join(output)


def attach_console_listeners():
    """Print progress events as they happen (used with --verbose)."""
    listeners = {
        'layer_done': lambda layer, kind: print(f"{Fore.WHITE}  layer {layer} ({kind}) done{Style.RESET_ALL}"),
        'gradient_sync': lambda step, n, payload: print(
            f"{Fore.MAGENTA}  step {step}: synchronized {n} gradients, {payload} bytes{Style.RESET_ALL}"),
        'minibatch_load': lambda index, resident: print(f"  load minibatch {index} (resident {resident})"),
        'bench_row': lambda record: print(
            f"{Fore.YELLOW}  {record.mode} n_frames={record.n_frames} wall_ms={record.wall_ms:.2f}{Style.RESET_ALL}"),
        'suite_done': lambda result: print(f"  {status(result.passed)} {result.name}"),
    }
    for event, callback in listeners.items():
        event_emitter.on(event, callback)
    return listeners


def detach_console_listeners(listeners):
    for event, callback in listeners.items():
        event_emitter.off(event, callback)
