"""Command-line entry point for TubeMAV"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from config import Config
from src.cascade import build_setup
from src.harness import compare, format_table, make_controller, run_closed_loop
from src.imitation import (
    augment,
    collect_demonstration,
    dataset_read,
    dataset_write,
    read_demonstration,
    split_holdout,
    write_demonstration,
)
from src.mlp import TrainConfig, forward, train, weights_write
from src.rtmpc import write_tube
from src.trajectories import DisturbanceSpec, task_by_name


def _setup(args):
    cfg = Config.load(args.config)
    print("🔧 Designing observer, attitude-loop model and tube controller...")
    setup = build_setup(cfg)
    print(f"   ✓ Tube half-widths (position): {setup.tube.Z.hi[:3]}")
    return cfg, setup


def cmd_simulate(args) -> int:
    cfg, setup = _setup(args)
    task = task_by_name(args.task)
    controller = make_controller(args.controller, setup, args.weights)
    disturbance = DisturbanceSpec.sustained(args.fext) if args.fext else None
    print(f"🚁 Flying {args.task} with {args.controller} (seed {args.seed})...")
    log, metrics = run_closed_loop(setup, controller, task, args.seed, disturbance,
                                   gyro_noise_std=cfg.GYRO_NOISE_STD, t0=cfg.T0)
    out = Path(args.out)
    log.write(out)
    pd.DataFrame([metrics.as_dict()]).to_csv(out.with_suffix('.metrics.csv'), index=False)
    print(f"   ✓ RMSE [cm]: {metrics.rmse * 100}")
    print(f"   ✓ Max error [cm]: {metrics.mae * 100}")
    print(f"   ✓ Infeasible steps: {metrics.infeasible_steps}, saturated steps: {metrics.saturation_steps}")
    print(f"\n✨ Complete! Log: {out}")
    return 0


def cmd_tube(args) -> int:
    _, setup = _setup(args)
    write_tube(setup.tube, args.out)
    print(f"\n✨ Complete! Tube: {args.out}")
    return 0


def cmd_collect(args) -> int:
    cfg, setup = _setup(args)
    steps = args.steps if args.steps is not None else cfg.DEMO_STEPS
    print(f"📼 Collecting {steps + 1}-step demonstration on {args.task}...")
    demo = collect_demonstration(task_by_name(args.task), setup, steps)
    write_demonstration(demo, args.out)
    print(f"\n✨ Complete! Demonstration: {args.out}")
    return 0


def cmd_augment(args) -> int:
    cfg, setup = _setup(args)
    n_extra = args.n if args.n is not None else cfg.N_EXTRA
    demo = read_demonstration(args.demo)
    print(f"🎲 Sampling {n_extra} tube states per step...")
    ds = augment(demo, setup.tube.Z, setup.tube.K, n_extra, args.seed)
    checksum = dataset_write(ds, args.out)
    print(f"   ✓ Rows: {len(ds)}, sha256: {checksum[:16]}")
    print(f"\n✨ Complete! Dataset: {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = Config.load(args.config)
    ds = dataset_read(args.dataset)
    train_ds, holdout = split_holdout(ds, cfg.HOLDOUT_FRACTION, cfg.TRAIN_SEED)
    train_cfg = TrainConfig(
        lr=args.lr if args.lr is not None else cfg.LR,
        epochs=args.epochs if args.epochs is not None else cfg.EPOCHS,
        batch_size=cfg.BATCH_SIZE,
        seed=cfg.TRAIN_SEED,
    )
    print(f"🧠 Training on {len(train_ds)} rows ({train_cfg.epochs} epochs, lr={train_cfg.lr})...")
    history = []
    net = train(train_ds, train_cfg, history=history)
    print(f"   ✓ Loss: {history[0]:.4g} -> {history[-1]:.4g}")
    if len(holdout):
        err = forward(net, holdout.inputs) - holdout.targets
        print(f"   ✓ Holdout RMSE per command: {(err ** 2).mean(axis=0) ** 0.5}")
    weights_write(net, args.out)
    print(f"\n✨ Complete! Weights: {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, setup = _setup(args)
    policy = make_controller('policy', setup, args.weights)
    result = compare(setup, {'policy': policy}, {args.task: task_by_name(args.task)},
                     args.seeds, gyro_noise_std=cfg.GYRO_NOISE_STD, t0=cfg.T0)
    print(format_table(result.table))
    if args.out:
        result.table.to_csv(args.out, index=False)
    return 0 if result.ok else 1


def cmd_compare(args) -> int:
    cfg, setup = _setup(args)
    controllers = {'rtmpc': make_controller('rtmpc', setup)}
    if args.weights:
        controllers['policy'] = make_controller('policy', setup, args.weights)
    names = [t.strip() for t in args.tasks.split(',') if t.strip()]
    tasks = {name: task_by_name(name) for name in names}
    seeds = args.seeds if args.seeds is not None else cfg.N_SEEDS
    print(f"📊 Comparing {', '.join(controllers)} on {', '.join(names)} over {seeds} seeds...")
    result = compare(setup, controllers, tasks, seeds, gyro_noise_std=cfg.GYRO_NOISE_STD, t0=cfg.T0)
    print(format_table(result.table))
    if args.out:
        result.table.to_csv(args.out, index=False)
        result.runs.to_csv(Path(args.out).with_suffix('.runs.csv'), index=False)
    for failure in result.failures:
        print(f"❌ {failure}")
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='TubeMAV - Robust tube MPC and imitation learning for an insect-scale flapping-wing robot'
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', help='Controller config file (key=value)')
    common.add_argument('-v', '--verbose', action='store_true',
                        help='Enable verbose output')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='Fly one task in closed loop')
    p.add_argument('--task', default='t1', help='hover, t1, t2 or t3')
    p.add_argument('--controller', default='rtmpc', choices=['rtmpc', 'policy'])
    p.add_argument('--weights', help='Policy weights file')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--fext', type=float, default=0.0,
                   help='Sustained x-force as a fraction of the weight (replaces the task disturbance)')
    p.add_argument('--out', default='run.csv')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('tube', parents=[common], help='Design the tube controller and dump the tube')
    p.add_argument('--out', default='tube.txt')
    p.set_defaults(func=cmd_tube)

    p = sub.add_parser('collect', parents=[common], help='Record an undisturbed tube MPC demonstration')
    p.add_argument('--task', default='t1')
    p.add_argument('--steps', type=int, help='T (T+1 tuples are logged)')
    p.add_argument('--out', default='demo.npz')
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser('augment', parents=[common], help='Tube-sample extra state-action pairs')
    p.add_argument('--demo', required=True)
    p.add_argument('--n', type=int, help='Extra samples per step')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', default='dataset.csv')
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser('train', parents=[common], help='Train the policy network')
    p.add_argument('--dataset', required=True)
    p.add_argument('--epochs', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--out', default='policy.txt')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('evaluate', parents=[common], help='Evaluate a trained policy on a task')
    p.add_argument('--weights', required=True)
    p.add_argument('--task', default='t1')
    p.add_argument('--seeds', type=int, default=1)
    p.add_argument('--out')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('compare', parents=[common], help='AVG/MIN/MAX tracking errors across seeds')
    p.add_argument('--tasks', default='t1,t2,t3')
    p.add_argument('--seeds', type=int)
    p.add_argument('--weights', help='Include the policy controller')
    p.add_argument('--out', default='metrics.csv')
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    """Main entry point for command-line usage"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Setup logging
    if args.verbose:
        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    try:
        return args.func(args)
    except Exception as e:
        print(f"❌ Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
