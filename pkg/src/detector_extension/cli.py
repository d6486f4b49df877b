"""
命令行入口

子命令: centroids, select, run, track-correct, bench
退出码: 0 成功, 1 错误, 2 相似度前置条件不满足（存在没有兼容基础类别的扩展类别）
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import METRIC_CHOICES, RUN_MODES, SIMILARITY_MODES, Config, RunConfig
from .modules.exceptions import ExtensionError, StageFailure
from .modules.feature_store import load_feature_store
from .modules.inference_engine import (
    Frame,
    PredictionObject,
    load_frame_directory,
    run_dual_parallel,
    run_sequential,
)
from .modules.mock_backends import (
    LatencyModel,
    MockClassifier,
    MockDetector,
    MockScenario,
    frames_from_scenario,
    label_accuracy,
    load_scenario,
    scenario_tracked_detections,
)
from .modules.similarity import (
    CompatibilityMap,
    build_similarity_matrix,
    centroids_for_store,
    load_compatibility,
    save_compatibility,
    select_compatible,
    spread_report,
)
from .modules.tracker_correction import (
    TrackedDetection,
    correct_tracks,
    load_tracked_detections,
    run_tracked,
    write_track_report,
    write_tracked_detections,
)
from .modules.utils import (
    dumps_record,
    format_error_response,
    parse_label_list,
    setup_logging,
    write_json,
    write_jsonl,
)


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PRECONDITION = 2

logger = logging.getLogger(__name__)


class ExtensionCommands:
    """各子命令的实现，返回退出码"""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.logger = setup_logging(self.config)

    # ---- 公共部分 ----

    def _run_config(self, args: argparse.Namespace) -> RunConfig:
        return RunConfig.from_config(
            self.config,
            threshold=getattr(args, "threshold", None),
            metric=getattr(args, "metric", None),
            pad_fraction=getattr(args, "pad", None),
            mode=getattr(args, "mode", None),
            features_path=getattr(args, "features", None),
            scenario_path=getattr(args, "scenario", None),
            compat_path=getattr(args, "compat", None),
            detections_path=getattr(args, "detections", None),
            out_path=getattr(args, "out", None),
            stats_out_path=getattr(args, "stats_out", None),
        )

    def _load_backends(self, args: argparse.Namespace, scenario_path: str,
                       compat_path: str) -> Tuple[MockScenario, CompatibilityMap, MockDetector, MockClassifier]:
        """加载场景和兼容类别，并构造模拟检测器与分类器"""
        scenario = load_scenario(scenario_path)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
        compat = load_compatibility(compat_path)

        labels = (parse_label_list(args.labels) or list(scenario.classifier_labels)
                  or compat.classifier_labels())
        accuracy = args.accuracy if args.accuracy is not None else self.config.mock.accuracy
        mock = self.config.mock
        detector = MockDetector(scenario, LatencyModel(
            _pick(args.detector_latency, mock.detector_latency_ms),
            _pick(args.detector_jitter, mock.detector_jitter_ms),
        ))
        classifier = MockClassifier(scenario, labels, accuracy, LatencyModel(
            _pick(args.classifier_latency, mock.classifier_latency_ms),
            _pick(args.classifier_jitter, mock.classifier_jitter_ms),
        ))
        return scenario, compat, detector, classifier

    def _frames(self, args: argparse.Namespace, scenario: MockScenario) -> List[Frame]:
        if getattr(args, "frames_dir", None):
            return load_frame_directory(args.frames_dir)
        return frames_from_scenario(scenario)

    # ---- centroids ----

    def cmd_centroids(self, args: argparse.Namespace) -> int:
        """计算各类别质心并写出JSON"""
        run_config = self._run_config(args)
        run_config.validate(["features_path", "out_path"])

        store = load_feature_store(run_config.features_path, args.dim or self.config.similarity.dimension)
        centroids = centroids_for_store(store)
        write_json(run_config.out_path, {
            "dimension": store.dimension,
            "centroids": [centroid.to_dict() for centroid in centroids],
            "spread_ranking": spread_report(centroids),
        })

        self.logger.info(f"质心已写出: {run_config.out_path}, 类别数: {len(centroids)}")
        _emit({"command": "centroids", "classes": len(centroids), "out": run_config.out_path})
        return EXIT_OK

    # ---- select ----

    def cmd_select(self, args: argparse.Namespace) -> int:
        """生成相似度矩阵并选择兼容基础类别"""
        run_config = self._run_config(args)
        run_config.validate(["features_path", "out_path"])
        base = parse_label_list(args.base)
        extension = parse_label_list(args.ext)
        if not base or not extension:
            raise ValueError("--base 和 --ext 都至少需要一个类别")

        store = load_feature_store(run_config.features_path, args.dim or self.config.similarity.dimension)
        matrix = build_similarity_matrix(
            store,
            list(dict.fromkeys(base + extension)),
            run_config.metric,
            args.similarity_mode or self.config.similarity.similarity_mode,
            self.config.similarity.matrix_workers,
        )
        compat = select_compatible(matrix, base, extension, run_config.threshold)

        matrix_path = args.matrix_out or str(Path(run_config.out_path).with_suffix(".csv"))
        matrix.write_csv(matrix_path)
        save_compatibility(compat, run_config.out_path)
        _emit({"command": "select", "compat": run_config.out_path, "matrix": matrix_path,
               "entries": {label: [item.base for item in bases] for label, bases in compat.entries.items()}})

        if not compat.precondition_met:
            print(f"前置条件不满足: 以下扩展类别在阈值 {run_config.threshold} 下没有兼容的基础类别: "
                  f"{', '.join(compat.unmatched)}", file=sys.stderr)
            return EXIT_PRECONDITION
        return EXIT_OK

    # ---- run ----

    def cmd_run(self, args: argparse.Namespace) -> int:
        """在模拟后端上执行流水线，写出预测JSONL和统计JSON"""
        run_config = self._run_config(args)
        run_config.validate_for_mode()
        stats_path = run_config.stats_out_path or str(Path(run_config.out_path).with_suffix(".stats.json"))

        scenario, compat, detector, classifier = self._load_backends(
            args, run_config.scenario_path, run_config.compat_path)
        frames = self._frames(args, scenario)

        if run_config.mode == "tracked":
            result, wall_time = run_tracked(frames, detector, classifier, compat,
                                            scenario_tracked_detections(scenario),
                                            run_config.pad_fraction, self.config.pipeline.track_workers)
            write_tracked_detections(run_config.out_path, result.corrected)
            write_track_report(stats_path, result, {"mode": "tracked", "wall_time": round(wall_time, 3)})
            _emit({"command": "run", "mode": "tracked", "invocations": result.classifier_invocations})
            return EXIT_OK

        runner = run_dual_parallel if run_config.mode == "dual_parallel" else run_sequential
        try:
            outputs, stats = runner(frames, detector, classifier, compat, run_config.pad_fraction)
        except StageFailure as e:
            write_jsonl(run_config.out_path, [*(p.to_record() for p in e.partial_outputs),
                                              {"failure": e.to_dict()["error"]}])
            if e.stats is not None:
                write_json(stats_path, e.stats.to_dict())
            raise

        write_jsonl(run_config.out_path, (prediction.to_record() for prediction in outputs))
        report = stats.to_dict()
        if not getattr(args, "frames_dir", None):
            report["label_accuracy"] = label_accuracy(outputs, scenario)
        write_json(stats_path, report)

        _emit({"command": "run", "mode": run_config.mode, "frames": stats.frames_processed,
               "invocations": stats.classifier_invocations, "wall_time": round(stats.wall_time, 3)})
        return EXIT_OK

    # ---- track-correct ----

    def cmd_track_correct(self, args: argparse.Namespace) -> int:
        """按轨迹校正跟踪器输出"""
        run_config = self._run_config(args)
        run_config.validate(["detections_path", "scenario_path", "compat_path", "out_path"])
        report_path = run_config.stats_out_path or str(Path(run_config.out_path).with_suffix(".report.json"))

        detections = load_tracked_detections(run_config.detections_path)
        scenario, compat, _, classifier = self._load_backends(
            args, run_config.scenario_path, run_config.compat_path)
        frames = {frame.index: frame for frame in self._frames(args, scenario)}

        result = correct_tracks(detections, frames, classifier, compat,
                                run_config.pad_fraction, self.config.pipeline.track_workers)
        write_tracked_detections(run_config.out_path, result.corrected)
        write_track_report(report_path, result)

        _emit({"command": "track-correct", "tracks": result.tracks_examined,
               "invocations": result.classifier_invocations, "report": report_path})
        return EXIT_OK

    # ---- bench ----

    def cmd_bench(self, args: argparse.Namespace) -> int:
        """对三种模式重复运行，报告中位墙钟时间、分类调用数和加速比"""
        run_config = self._run_config(args)
        run_config.validate(["scenario_path", "compat_path", "out_path"])
        repetitions = args.reps if args.reps is not None else self.config.bench.repetitions
        if repetitions < 1:
            raise ValueError(f"重复次数至少为1: {repetitions}")

        scenario, compat, detector, classifier = self._load_backends(
            args, run_config.scenario_path, run_config.compat_path)
        frames = self._frames(args, scenario)
        tracked_input = scenario_tracked_detections(scenario)

        wall_times: Dict[str, List[float]] = {"sequential": [], "dual_parallel": [], "tracked": []}
        invocations: Dict[str, int] = {}
        reference: Optional[List[PredictionObject]] = None
        identical = True

        for repetition in range(repetitions):
            for mode, runner in (("sequential", run_sequential), ("dual_parallel", run_dual_parallel)):
                outputs, stats = runner(frames, detector, classifier, compat, run_config.pad_fraction)
                wall_times[mode].append(stats.wall_time)
                invocations[mode] = stats.classifier_invocations
                if reference is None:
                    reference = outputs
                elif outputs != reference:
                    identical = False

            result, wall_time = run_tracked(frames, detector, classifier, compat, tracked_input,
                                            run_config.pad_fraction, self.config.pipeline.track_workers)
            wall_times["tracked"].append(wall_time)
            invocations["tracked"] = result.classifier_invocations
            self.logger.debug(f"第 {repetition + 1}/{repetitions} 轮基准完成")

        medians = {mode: float(np.median(values)) for mode, values in wall_times.items()}
        report = {
            "repetitions": repetitions,
            "frames": len(frames),
            "modes": {
                mode: {
                    "median_wall_time": round(medians[mode], 4),
                    "wall_times": [round(value, 4) for value in wall_times[mode]],
                    "classifier_invocations": invocations[mode],
                }
                for mode in wall_times
            },
            "speedup": {
                "dual_parallel_vs_sequential": _ratio(medians["sequential"], medians["dual_parallel"]),
                "tracked_vs_sequential": _ratio(medians["sequential"], medians["tracked"]),
                "tracked_vs_dual_parallel": _ratio(medians["dual_parallel"], medians["tracked"]),
            },
            "outputs_identical": identical,
        }
        write_json(run_config.out_path, report)

        self.logger.info(f"基准测试完成: 顺序 {medians['sequential']:.3f}秒, "
                         f"双并行 {medians['dual_parallel']:.3f}秒, 轨迹 {medians['tracked']:.3f}秒")
        _emit({"command": "bench", "out": run_config.out_path, "speedup": report["speedup"]})
        return EXIT_OK


def _pick(value: Optional[Any], default: Any) -> Any:
    return default if value is None else value


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    if denominator <= 0:
        return None
    return round(numerator / denominator, 3)


def _emit(summary: Dict[str, Any]) -> None:
    print(dumps_record(summary))


def _add_backend_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", help="模拟场景JSON文件")
    parser.add_argument("--compat", help="兼容类别JSON文件")
    parser.add_argument("--pad", type=float, default=None, help="裁剪扩展比例（默认0）")
    parser.add_argument("--seed", type=int, default=None, help="覆盖场景中的随机种子")
    parser.add_argument("--labels", default=None, help="分类器标签集合（逗号分隔）")
    parser.add_argument("--accuracy", type=float, default=None, help="模拟分类器准确率 [0, 1]")
    parser.add_argument("--detector-latency", type=float, default=None, help="检测器固定延迟(ms)")
    parser.add_argument("--detector-jitter", type=float, default=None, help="检测器延迟抖动(ms)")
    parser.add_argument("--classifier-latency", type=float, default=None, help="分类器固定延迟(ms)")
    parser.add_argument("--classifier-jitter", type=float, default=None, help="分类器延迟抖动(ms)")
    parser.add_argument("--frames-dir", default=None, help="图像帧目录（按文件名排序），默认由场景生成")


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(
        prog="detector-extension",
        description="无需重新训练检测器的类别扩展工具",
    )
    parser.add_argument("--config", default=None, help="YAML配置文件路径")
    parser.add_argument("--log-level", default=None, help="日志级别")
    subparsers = parser.add_subparsers(dest="command", required=True)

    centroids = subparsers.add_parser("centroids", help="计算各类别特征质心")
    centroids.add_argument("--features", required=True, help="特征JSONL文件")
    centroids.add_argument("--out", required=True, help="质心JSON输出路径")
    centroids.add_argument("--dim", type=int, default=None, help="期望的特征维度")

    select = subparsers.add_parser("select", help="选择兼容基础类别")
    select.add_argument("--features", required=True, help="特征JSONL文件")
    select.add_argument("--base", required=True, help="基础类别（逗号分隔）")
    select.add_argument("--ext", required=True, help="扩展类别（逗号分隔）")
    select.add_argument("--threshold", type=float, default=None, help="相似度阈值（默认0.05）")
    select.add_argument("--metric", choices=METRIC_CHOICES, default=None, help="距离度量（默认cosine）")
    select.add_argument("--similarity-mode", choices=SIMILARITY_MODES, default=None, help="质心距离或平均距离")
    select.add_argument("--dim", type=int, default=None, help="期望的特征维度")
    select.add_argument("--out", required=True, help="兼容类别JSON输出路径")
    select.add_argument("--matrix-out", default=None, help="相似度矩阵CSV输出路径（默认与--out同名.csv）")

    run = subparsers.add_parser("run", help="执行检测+校正流水线")
    _add_backend_arguments(run)
    run.add_argument("--mode", choices=RUN_MODES, default=None, help="运行模式（默认dual_parallel）")
    run.add_argument("--out", required=True, help="预测JSONL输出路径")
    run.add_argument("--stats-out", default=None, help="统计JSON输出路径")

    track = subparsers.add_parser("track-correct", help="按轨迹校正跟踪器输出")
    _add_backend_arguments(track)
    track.add_argument("--detections", required=True, help="跟踪检测JSONL文件")
    track.add_argument("--out", required=True, help="校正后的跟踪检测JSONL输出路径")
    track.add_argument("--stats-out", default=None, help="校正报告JSON输出路径")

    bench = subparsers.add_parser("bench", help="比较三种模式的性能")
    _add_backend_arguments(bench)
    bench.add_argument("--reps", type=int, default=None, help="重复次数（默认5）")
    bench.add_argument("--out", required=True, help="基准报告JSON输出路径")

    return parser


_HANDLERS = {
    "centroids": ExtensionCommands.cmd_centroids,
    "select": ExtensionCommands.cmd_select,
    "run": ExtensionCommands.cmd_run,
    "track-correct": ExtensionCommands.cmd_track_correct,
    "bench": ExtensionCommands.cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR

    try:
        config = Config(args.config)
        if args.log_level:
            config.logging.level = args.log_level
        commands = ExtensionCommands(config)
        return _HANDLERS[args.command](commands, args)
    except ExtensionError as e:
        logger.error(f"命令执行失败: {args.command}, 错误: {e.message}")
        _report(e.to_dict())
    except OSError as e:
        _report(format_error_response("IO_ERROR", str(e)))
    except ValueError as e:
        _report(format_error_response("INVALID_ARGUMENT", str(e)))
    return EXIT_ERROR


def _report(response: Dict[str, Any]) -> None:
    error = response["error"]
    print(f"错误[{error['code']}]: {error['message']}", file=sys.stderr)


def cli_main() -> None:
    """命令行入口函数"""
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
