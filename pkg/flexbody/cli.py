import argparse
import json
import sys

from flexbody import __version__
from flexbody._errors import FlexbodyError
from flexbody.scenarios import ScenarioSpec, run_scenario, set_logging_level


def _make_headline(text, indent=0):
    len_ = len(text)
    top = "═" * len_
    bottom = "═" * len_
    return "\n".join(
        [(" " * indent) + top, (" " * indent) + text, (" " * indent) + bottom]
    )


epilog = _make_headline("run scenarios in order: train-sim, fine-tune, then the rest")


class RawTextDefArgFormatter(
    argparse.RawTextHelpFormatter, argparse.ArgumentDefaultsHelpFormatter
):
    pass


_descriptions = {
    "train-sim": """collect a dataset on the nominal simulator for all six tool states
and train the network weights together with one parametric bias per tool

writes: sim_dataset.jl, sim_bundle.npz, train_history.csv, sim_pb_table.csv

examples:
---------

flexbody train-sim --out runs/a --seed 0

train on a smaller, faster setup:

flexbody train-sim --out runs/small --config small.json
""",
    "fine-tune": """collect a small curated dataset on the surrogate-real plant and
fine-tune the simulation bundle, resetting every parametric bias to zero

requires: sim_bundle.npz (train-sim)
writes: real_dataset.jl, real_bundle.npz, fine_tune_history.csv, real_pb_table.csv

examples:
---------

flexbody fine-tune --out runs/a
""",
    "pb-map": """tabulate the parametric biases of the simulation bundle and project
them on their principal components

requires: sim_bundle.npz (train-sim)
writes: pb_table.csv, pb_pca.csv
""",
    "online-traj": """estimate the parametric bias online from random motions under the
sensor regimes A (all sensors), B (no 3D tool tracking) and C (no tool
sensing), over several seeds

requires: sim_bundle.npz (train-sim), or real_bundle.npz with --real-bundle
writes: online_trajectories.csv

examples:
---------

on the simulator:

flexbody online-traj --out runs/a

on the surrogate-real plant with the fine-tuned bundle:

flexbody online-traj --out runs/a --real-bundle runs/a/real_bundle.npz
""",
    "control-eval": """reach the configured targets on the surrogate-real plant with geometric
inverse kinematics, the simulation bundle and the fine-tuned bundle

requires: sim_bundle.npz (train-sim), real_bundle.npz (fine-tune)
writes: control_errors.csv, control_log.csv
""",
    "tool-switch": """reach random targets while the grasped tool changes, updating the
parametric bias online from a 5-entry buffer

requires: real_bundle.npz (fine-tune)
writes: tool_switch_metrics.csv
""",
    "window-task": """start from the wrong parametric bias, recognize the grasped tool from
random motions, then bring the tool tip to the window sash targets

requires: real_bundle.npz (fine-tune)
writes: window_task_pb.csv, window_task_control.csv
""",
}


def _run(args):
    set_logging_level(args.log_level)
    spec = ScenarioSpec(
        args.scenario,
        out_dir=args.out,
        seed=args.seed,
        config_path=args.config,
        sim_bundle=args.sim_bundle,
        real_bundle=args.real_bundle,
    )
    summary = run_scenario(spec)
    print(json.dumps(summary, indent=2, default=str))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="flexbody",
        formatter_class=RawTextDefArgFormatter,
        epilog=epilog,
        description=(
            "Tool-state recognition and control experiments for a flexible robot\n"
            "every scenario also writes <scenario>_summary.json, e.g. train_sim_summary.json"
        ),
    )
    parser.add_argument(
        "-v", "--version", action="version", version=f"flexbody {__version__}"
    )
    subparsers = parser.add_subparsers(
        help="for help select a command and run: `flexbody <command> --help`"
    )

    for scenario, description in _descriptions.items():
        scenario_parser = subparsers.add_parser(
            scenario,
            formatter_class=RawTextDefArgFormatter,
            epilog=epilog,
            description=description,
        )
        scenario_parser.add_argument(
            "-c",
            "--config",
            type=str,
            help="path to a JSON config merged over the default one",
        )
        scenario_parser.add_argument(
            "-s", "--seed", type=int, default=0, help="seed for every random draw"
        )
        scenario_parser.add_argument(
            "-o", "--out", type=str, default=".", help="directory for the output files"
        )
        scenario_parser.add_argument(
            "--sim-bundle",
            type=str,
            help="simulation bundle to use instead of <out>/sim_bundle.npz",
        )
        scenario_parser.add_argument(
            "--real-bundle",
            type=str,
            help="fine-tuned bundle to use instead of <out>/real_bundle.npz",
        )
        scenario_parser.add_argument(
            "--log-level",
            type=str,
            default="INFO",
            choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
            help="how much progress to print to stderr",
        )
        scenario_parser.set_defaults(func=_run, scenario=scenario)

    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(file=sys.stderr)
        return 1
    try:
        args.func(args)
    except FlexbodyError as e:
        print(json.dumps(e.to_dict(), default=str), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(
            json.dumps({"error": type(e).__name__, "message": str(e)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
