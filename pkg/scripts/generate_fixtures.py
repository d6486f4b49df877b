#!/usr/bin/env python3
"""
演示数据生成脚本

生成车辆特征文件、随机模拟场景和对应的跟踪检测文件，
可直接用于 select / run / track-correct / bench 子命令
"""

import argparse
import logging
import sys
from pathlib import Path

# 添加项目路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from detector_extension.modules.feature_store import write_feature_store  # noqa: E402
from detector_extension.modules.mock_backends import (  # noqa: E402
    generate_scenario,
    mock_feature_store,
    scenario_tracked_detections,
    vehicle_similarity_matrix,
    write_scenario,
)
from detector_extension.modules.tracker_correction import write_tracked_detections  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main() -> int:
    """主函数"""
    parser = argparse.ArgumentParser(description="生成演示用的特征、场景和跟踪检测文件")
    parser.add_argument("--out-dir", default="./demo_data", help="输出目录")
    parser.add_argument("--seed", type=int, default=0, help="随机种子")
    parser.add_argument("--frames", type=int, default=200, help="场景帧数")
    parser.add_argument("--tracks", type=int, default=10, help="场景轨迹数")
    parser.add_argument("--samples", type=int, default=16, help="每类特征样本数")
    parser.add_argument("--dim", type=int, default=64, help="特征维度")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    store = mock_feature_store(vehicle_similarity_matrix(), args.samples, args.dim, args.seed)
    count = write_feature_store(store, out_dir / "vehicle_features.jsonl")
    logger.info(f"特征文件: {out_dir / 'vehicle_features.jsonl'}, 记录数: {count}")

    scenario = generate_scenario(args.seed, frame_count=args.frames, track_count=args.tracks)
    write_scenario(scenario, out_dir / "scenario.json")
    logger.info(f"场景文件: {out_dir / 'scenario.json'}, 检测数: {len(scenario.all_detections())}")

    count = write_tracked_detections(out_dir / "tracks.jsonl", scenario_tracked_detections(scenario))
    logger.info(f"跟踪检测文件: {out_dir / 'tracks.jsonl'}, 记录数: {count}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
